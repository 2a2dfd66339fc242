//! Synthetic datasets with known ground truth.
//!
//! Generation order:
//! 1. per user and topic `α ~ U(alpha_range)`, `μ ~ U(mu_range)`; per item a
//!    random topic set and `k ~ scale · LogNormal` on each of its topics;
//! 2. per user a learning count from a log-normal and a contribution count
//!    from a uniform range, with times i.i.d. uniform on `[0, T)`;
//! 3. a shuffled topic ranking per user with geometric propensities, used to
//!    pick the topic of each event, then an item carrying that topic;
//! 4. items with too few learning events are dropped (with their learning
//!    events) before contributions are placed on the surviving items;
//! 5. scores are Poisson draws at the ground-truth rate.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::error::{Error, Result};
use crate::event_model::{
    Contribution, Dataset, Item, ItemId, LearningEvent, TopicId, TopicSet, UserId,
};
use crate::kernel::{contribution_rates, sample_score, Kernel, KnowledgeCell, ParameterSet};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_topics: usize,
    /// Item topic-set sizes are uniform on `1..=min(this, n_topics)`.
    pub max_topics_per_item: usize,
    pub horizon_days: f64,
    /// Bounds of `μ`, per day.
    pub mu_range: (f64, f64),
    pub alpha_range: (f64, f64),
    pub knowledge_scale: f64,
    /// `(μ_ln, σ_ln)` of the knowledge log-normal.
    pub knowledge_lognormal: (f64, f64),
    pub half_life_days: f64,
    /// `(μ_ln, σ_ln)` of the per-user learning-event count.
    pub learning_count_lognormal: (f64, f64),
    pub contribution_count_range: (usize, usize),
    pub topic_propensity_decay: f64,
    /// σ of the log-normal item popularity used when picking learned items;
    /// 0 picks uniformly.
    pub item_popularity_sigma: f64,
    pub min_learning_events_per_item: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 100,
            n_items: 800,
            n_topics: 1,
            max_topics_per_item: 3,
            horizon_days: 100.0,
            mu_range: (0.0, 5.0),
            alpha_range: (0.0, 1.0),
            knowledge_scale: 0.05,
            knowledge_lognormal: (0.0, 1.0),
            half_life_days: 11.6 * std::f64::consts::LN_2,
            learning_count_lognormal: (3.0, 1.0),
            contribution_count_range: (50, 150),
            topic_propensity_decay: 0.6,
            item_popularity_sigma: 0.0,
            min_learning_events_per_item: 10,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// About 800 items, 13,000 learning events and 255,000 contributions.
    ///
    /// `μ` is drawn per year (`U(0, 5)` over 365 days) over a 50-day horizon,
    /// so the trend does not swamp the knowledge terms.
    pub fn benchmark(n_topics: usize) -> Self {
        SynthConfig {
            n_users: 400,
            n_items: 800,
            n_topics,
            horizon_days: 50.0,
            mu_range: (0.0, 5.0 / 365.0),
            learning_count_lognormal: (3.0, 1.0),
            contribution_count_range: (450, 820),
            ..SynthConfig::default()
        }
    }

    pub fn kernel(&self) -> Result<Kernel> {
        Kernel::from_half_life(self.half_life_days)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.into()));
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi;
        if self.n_users == 0 || self.n_items == 0 || self.n_topics == 0 {
            return bad("n_users, n_items and n_topics must be at least 1");
        }
        if self.max_topics_per_item == 0 {
            return bad("max_topics_per_item must be at least 1");
        }
        if !(self.horizon_days.is_finite() && self.horizon_days > 0.0) {
            return bad("horizon_days must be positive");
        }
        if !range_ok(self.mu_range) || !range_ok(self.alpha_range) {
            return bad("mu and alpha ranges must be ordered and nonnegative");
        }
        if !(self.knowledge_scale.is_finite() && self.knowledge_scale >= 0.0) {
            return bad("knowledge_scale must be nonnegative");
        }
        for (mu, sigma) in [self.knowledge_lognormal, self.learning_count_lognormal] {
            if !(mu.is_finite() && sigma.is_finite() && sigma >= 0.0) {
                return bad("log-normal parameters must be finite with sigma >= 0");
            }
        }
        if self.contribution_count_range.0 > self.contribution_count_range.1 {
            return bad("contribution_count_range must be ordered");
        }
        if !(self.topic_propensity_decay > 0.0 && self.topic_propensity_decay <= 1.0) {
            return bad("topic_propensity_decay must lie in (0, 1]");
        }
        if !(self.item_popularity_sigma.is_finite() && self.item_popularity_sigma >= 0.0) {
            return bad("item_popularity_sigma must be nonnegative");
        }
        self.kernel().map(|_| ())
    }

    /// Apply `key = value` overrides.
    pub fn apply(&mut self, pairs: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in pairs {
            let f = || config::value::<f64>(k, v);
            let n = || config::value::<usize>(k, v);
            match k.as_str() {
                "n_users" => self.n_users = n()?,
                "n_items" => self.n_items = n()?,
                "n_topics" => self.n_topics = n()?,
                "max_topics_per_item" => self.max_topics_per_item = n()?,
                "horizon_days" => self.horizon_days = f()?,
                "mu_min" => self.mu_range.0 = f()?,
                "mu_max" => self.mu_range.1 = f()?,
                "alpha_min" => self.alpha_range.0 = f()?,
                "alpha_max" => self.alpha_range.1 = f()?,
                "knowledge_scale" => self.knowledge_scale = f()?,
                "knowledge_mu_ln" => self.knowledge_lognormal.0 = f()?,
                "knowledge_sigma_ln" => self.knowledge_lognormal.1 = f()?,
                "half_life_days" => self.half_life_days = f()?,
                "learning_mu_ln" => self.learning_count_lognormal.0 = f()?,
                "learning_sigma_ln" => self.learning_count_lognormal.1 = f()?,
                "contributions_min" => self.contribution_count_range.0 = n()?,
                "contributions_max" => self.contribution_count_range.1 = n()?,
                "topic_propensity_decay" => self.topic_propensity_decay = f()?,
                "item_popularity_sigma" => self.item_popularity_sigma = f()?,
                "min_learning_events_per_item" => self.min_learning_events_per_item = n()?,
                "seed" => self.seed = config::value(k, v)?,
                "preset" => {
                    if v != "benchmark" {
                        return Err(Error::ConfigInvalid(format!("unknown preset {v:?}")));
                    }
                }
                other => return Err(Error::ConfigInvalid(format!("unknown key {other}"))),
            }
        }
        Ok(())
    }

    /// Parse a config file; `preset = benchmark` starts from [`Self::benchmark`].
    pub fn from_kv(text: &str) -> Result<Self> {
        let pairs = config::parse_kv(text)?;
        let n_topics = match pairs.get("n_topics") {
            Some(v) => config::value("n_topics", v)?,
            None => 1,
        };
        let mut cfg = match pairs.get("preset").map(String::as_str) {
            Some("benchmark") => SynthConfig::benchmark(n_topics),
            _ => SynthConfig::default(),
        };
        cfg.apply(&pairs)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("n_users", self.n_users.to_string());
        put("n_items", self.n_items.to_string());
        put("n_topics", self.n_topics.to_string());
        put("max_topics_per_item", self.max_topics_per_item.to_string());
        put("horizon_days", self.horizon_days.to_string());
        put("mu_min", self.mu_range.0.to_string());
        put("mu_max", self.mu_range.1.to_string());
        put("alpha_min", self.alpha_range.0.to_string());
        put("alpha_max", self.alpha_range.1.to_string());
        put("knowledge_scale", self.knowledge_scale.to_string());
        put("knowledge_mu_ln", self.knowledge_lognormal.0.to_string());
        put("knowledge_sigma_ln", self.knowledge_lognormal.1.to_string());
        put("half_life_days", self.half_life_days.to_string());
        put("learning_mu_ln", self.learning_count_lognormal.0.to_string());
        put("learning_sigma_ln", self.learning_count_lognormal.1.to_string());
        put("contributions_min", self.contribution_count_range.0.to_string());
        put("contributions_max", self.contribution_count_range.1.to_string());
        put("topic_propensity_decay", self.topic_propensity_decay.to_string());
        put("item_popularity_sigma", self.item_popularity_sigma.to_string());
        put(
            "min_learning_events_per_item",
            self.min_learning_events_per_item.to_string(),
        );
        put("seed", self.seed.to_string());
        s
    }
}

fn uniform(rng: &mut ChaCha20Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Geometric weights `decay^rank` over a shuffled topic order.
fn propensities(rng: &mut ChaCha20Rng, n_topics: usize, decay: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..n_topics).collect();
    order.shuffle(rng);
    let mut w = vec![0.0; n_topics];
    for (rank, &a) in order.iter().enumerate() {
        w[a] = decay.powi(rank as i32);
    }
    w
}

/// Event times i.i.d. uniform on `[0, T)`, sorted.
fn event_times(rng: &mut ChaCha20Rng, n: usize, horizon: f64) -> Vec<f64> {
    let mut ts: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * horizon).collect();
    ts.sort_by(f64::total_cmp);
    ts
}

/// Picks an item on a given topic, restricted to topics that have items.
struct TopicSampler {
    topic_items: Vec<Vec<usize>>,
    pickers: Vec<Option<WeightedIndex<f64>>>,
}

impl TopicSampler {
    fn new(item_topics: &[Vec<TopicId>], keep: &[bool], popularity: &[f64], n_topics: usize) -> Self {
        let mut topic_items = vec![Vec::new(); n_topics];
        for (q, ts) in item_topics.iter().enumerate() {
            if keep[q] {
                for a in ts {
                    topic_items[a.index()].push(q);
                }
            }
        }
        let pickers = topic_items
            .iter()
            .map(|qs| {
                (!qs.is_empty())
                    .then(|| WeightedIndex::new(qs.iter().map(|&q| popularity[q])).expect("positive weights"))
            })
            .collect();
        TopicSampler { topic_items, pickers }
    }

    /// Topic weights masked to topics that still have items.
    fn topic_picker(&self, weights: &[f64]) -> Option<WeightedIndex<f64>> {
        let masked = weights
            .iter()
            .zip(&self.pickers)
            .map(|(&w, p)| if p.is_some() { w } else { 0.0 });
        WeightedIndex::new(masked).ok()
    }

    fn item(&self, rng: &mut ChaCha20Rng, topic: usize) -> usize {
        let picker = self.pickers[topic].as_ref().expect("topic has items");
        self.topic_items[topic][picker.sample(rng)]
    }
}

/// Generate a dataset and its ground-truth parameters.
pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, ParameterSet)> {
    cfg.check()?;
    let kernel = cfg.kernel()?;
    let (n_users, n_topics, n_items) = (cfg.n_users, cfg.n_topics, cfg.n_items);

    let mut param_rng = substream(cfg.seed, "synth/params");
    let mut alpha = vec![0.0; n_users * n_topics];
    let mut mu = vec![0.0; n_users * n_topics];
    for i in 0..n_users * n_topics {
        alpha[i] = uniform(&mut param_rng, cfg.alpha_range);
        mu[i] = uniform(&mut param_rng, cfg.mu_range);
    }

    let mut item_rng = substream(cfg.seed, "synth/items");
    let max_size = cfg.max_topics_per_item.min(n_topics);
    let item_topics: Vec<Vec<TopicId>> = (0..n_items)
        .map(|_| {
            let size = item_rng.random_range(1..=max_size);
            let mut ts: Vec<TopicId> = index::sample(&mut item_rng, n_topics, size)
                .into_iter()
                .map(|a| TopicId(a as u32))
                .collect();
            ts.sort();
            ts
        })
        .collect();
    let knowledge_dist = LogNormal::new(cfg.knowledge_lognormal.0, cfg.knowledge_lognormal.1)
        .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let item_knowledge: Vec<Vec<f64>> = item_topics
        .iter()
        .map(|ts| {
            ts.iter()
                .map(|_| cfg.knowledge_scale * knowledge_dist.sample(&mut item_rng))
                .collect()
        })
        .collect();
    let popularity: Vec<f64> = if cfg.item_popularity_sigma > 0.0 {
        let pop = LogNormal::new(0.0, cfg.item_popularity_sigma)
            .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        (0..n_items).map(|_| pop.sample(&mut item_rng)).collect()
    } else {
        vec![1.0; n_items]
    };

    let mut prop_rng = substream(cfg.seed, "synth/propensity");
    let user_weights: Vec<Vec<f64>> = (0..n_users)
        .map(|_| propensities(&mut prop_rng, n_topics, cfg.topic_propensity_decay))
        .collect();

    let all = vec![true; n_items];
    let sampler = TopicSampler::new(&item_topics, &all, &popularity, n_topics);
    let count_dist = LogNormal::new(cfg.learning_count_lognormal.0, cfg.learning_count_lognormal.1)
        .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
    let mut learn_rng = substream(cfg.seed, "synth/learning");
    let mut raw_learning: Vec<(usize, f64, usize)> = Vec::new();
    for (u, weights) in user_weights.iter().enumerate() {
        let n = count_dist.sample(&mut learn_rng).round() as usize;
        let times = event_times(&mut learn_rng, n, cfg.horizon_days);
        let Some(topic_picker) = sampler.topic_picker(weights) else {
            continue;
        };
        for t in times {
            let a = topic_picker.sample(&mut learn_rng);
            raw_learning.push((u, t, sampler.item(&mut learn_rng, a)));
        }
    }

    let mut learn_count = vec![0usize; n_items];
    for &(_, _, q) in &raw_learning {
        learn_count[q] += 1;
    }
    let keep: Vec<bool> = learn_count
        .iter()
        .map(|&c| c >= cfg.min_learning_events_per_item)
        .collect();
    let mut new_id = vec![None; n_items];
    let mut items = Vec::new();
    let mut knowledge = Vec::new();
    for q in 0..n_items {
        if keep[q] {
            new_id[q] = Some(ItemId(items.len() as u32));
            items.push(Item {
                name: format!("q{q:05}"),
                topics: TopicSet::binary(item_topics[q].iter().copied()),
            });
            knowledge.push(
                item_topics[q]
                    .iter()
                    .zip(&item_knowledge[q])
                    .map(|(&topic, &value)| KnowledgeCell {
                        topic,
                        value,
                        active: true,
                    })
                    .collect::<Vec<_>>(),
            );
        }
    }
    if items.is_empty() {
        return Err(Error::ConfigInvalid(
            "no item reaches min_learning_events_per_item".into(),
        ));
    }
    let learning_events: Vec<LearningEvent> = raw_learning
        .into_iter()
        .filter_map(|(u, time, q)| {
            new_id[q].map(|item| LearningEvent {
                user: UserId(u as u32),
                time,
                item,
            })
        })
        .collect();

    let kept = TopicSampler::new(&item_topics, &keep, &vec![1.0; n_items], n_topics);
    let mut contrib_rng = substream(cfg.seed, "synth/contributions");
    let mut contributions = Vec::new();
    for (u, weights) in user_weights.iter().enumerate() {
        let (lo, hi) = cfg.contribution_count_range;
        let m = contrib_rng.random_range(lo..=hi);
        let times = event_times(&mut contrib_rng, m, cfg.horizon_days);
        let Some(topic_picker) = kept.topic_picker(weights) else {
            continue;
        };
        for time in times {
            let a = topic_picker.sample(&mut contrib_rng);
            let q = kept.item(&mut contrib_rng, a);
            contributions.push(Contribution {
                user: UserId(u as u32),
                time,
                item: new_id[q].expect("kept item"),
                score: 0.0,
            });
        }
    }

    let mut d = Dataset::new(
        (0..n_topics).map(|a| format!("t{a:02}")).collect(),
        (0..n_users).map(|u| format!("u{u:05}")).collect(),
        items,
        learning_events,
        contributions,
        cfg.horizon_days,
    );
    let truth = ParameterSet {
        n_users,
        n_topics,
        alpha,
        mu,
        alpha_active: vec![true; n_users * n_topics],
        mu_active: vec![true; n_users * n_topics],
        knowledge,
        kernel,
    };
    let rates = contribution_rates(&truth, &d);
    let mut score_rng = substream(cfg.seed, "synth/scores");
    for (c, rate) in d.contributions.iter_mut().zip(rates) {
        c.score = sample_score(rate, &mut score_rng) as f64;
    }
    Ok((d, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::validate_dataset;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn small() -> SynthConfig {
        SynthConfig {
            n_users: 20,
            n_items: 60,
            n_topics: 3,
            learning_count_lognormal: (3.0, 0.5),
            contribution_count_range: (10, 30),
            min_learning_events_per_item: 2,
            seed: 7,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_output() {
        let (d1, p1) = generate(&small()).unwrap();
        let (d2, p2) = generate(&small()).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(p1, p2);
        let (d3, _) = generate(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(d1, d3);
    }

    #[test]
    fn output_is_valid() {
        let (d, p) = generate(&small()).unwrap();
        assert!(validate_dataset(&d).is_empty());
        p.check(&d).unwrap();
        for c in &d.contributions {
            assert!(c.score >= 0.0 && c.score.fract() == 0.0);
            assert!((0.0..d.horizon).contains(&c.time));
        }
        let mut counts = vec![0; d.n_items()];
        for e in &d.learning_events {
            assert!((0.0..d.horizon).contains(&e.time));
            counts[e.item.index()] += 1;
        }
        assert!(counts.iter().all(|&c| c >= 2));
    }

    #[test]
    fn without_knowledge_scores_follow_the_trend() {
        let cfg = SynthConfig {
            n_users: 5,
            n_items: 10,
            n_topics: 1,
            knowledge_scale: 0.0,
            mu_range: (0.0, 0.05),
            contribution_count_range: (2000, 2000),
            min_learning_events_per_item: 0,
            seed: 3,
            ..SynthConfig::default()
        };
        let (d, p) = generate(&cfg).unwrap();
        for u in 0..d.n_users() {
            let cs: Vec<&Contribution> =
                d.contributions.iter().filter(|c| c.user.index() == u).collect();
            let n = cs.len() as f64;
            let mean = cs.iter().map(|c| c.score).sum::<f64>() / n;
            let t_bar = cs.iter().map(|c| c.time).sum::<f64>() / n;
            let expected = p.alpha[u] + p.mu[u] * t_bar;
            // Var(mean) = mean rate / n for Poisson draws.
            let sigma = (expected / n).sqrt();
            assert!((mean - expected).abs() < 3.0 * sigma, "user {u}: {mean} vs {expected}");
        }
    }

    fn topic_counts(decay: f64) -> Vec<f64> {
        let cfg = SynthConfig {
            n_users: 1,
            n_items: 200,
            n_topics: 10,
            max_topics_per_item: 1,
            learning_count_lognormal: (10_000f64.ln(), 0.0),
            contribution_count_range: (0, 0),
            topic_propensity_decay: decay,
            min_learning_events_per_item: 0,
            seed: 11,
            ..SynthConfig::default()
        };
        let (d, _) = generate(&cfg).unwrap();
        let mut counts = vec![0.0; 10];
        for e in &d.learning_events {
            let a = d.item(e.item).topics.topics().next().unwrap();
            counts[a.index()] += 1.0;
        }
        counts
    }

    #[test]
    fn uniform_propensity_passes_chi_squared() {
        let counts = topic_counts(1.0);
        let n: f64 = counts.iter().sum();
        let expected = n / 10.0;
        let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let critical = ChiSquared::new(9.0).unwrap().inverse_cdf(0.99);
        assert!(stat < critical, "chi2 = {stat}");
    }

    #[test]
    fn vanishing_decay_keeps_one_topic() {
        let counts = topic_counts(1e-12);
        assert_eq!(counts.iter().filter(|&&c| c > 0.0).count(), 1);
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = small();
        assert_eq!(SynthConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        let bench = SynthConfig::from_kv("preset = benchmark\nn_topics = 10\nseed = 4\n").unwrap();
        assert_eq!(bench.n_topics, 10);
        assert_eq!(bench.contribution_count_range, (450, 820));
        assert!(SynthConfig::from_kv("nonsense = 1\n").is_err());
        assert!(SynthConfig::from_kv("n_topics = 0\n").is_err());
        assert!(SynthConfig::from_kv("mu_min = 3\nmu_max = 1\n").is_err());
    }
}
