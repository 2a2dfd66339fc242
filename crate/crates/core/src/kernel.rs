//! Forgetting kernel, model parameters, latent expertise and the Poisson
//! score model.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::event_model::{Contribution, Dataset, ItemId, TopicId, UserId};

/// Rates below this are replaced by it inside logarithms.
pub const RATE_FLOOR: f64 = 1e-12;

/// Exponential forgetting kernel `exp(-omega * dt)` for `dt >= 0`, else 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel {
    omega: f64,
}

impl Kernel {
    pub fn new(omega: f64) -> Result<Self> {
        if omega.is_finite() && omega > 0.0 {
            Ok(Kernel { omega })
        } else {
            Err(Error::ConfigInvalid(format!(
                "kernel decay must be positive, got {omega}"
            )))
        }
    }

    pub fn from_half_life(days: f64) -> Result<Self> {
        if days.is_finite() && days > 0.0 {
            Kernel::new(half_life_to_omega(days))
        } else {
            Err(Error::ConfigInvalid(format!(
                "half-life must be positive, got {days}"
            )))
        }
    }

    #[inline]
    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn half_life(&self) -> f64 {
        omega_to_half_life(self.omega)
    }

    #[inline]
    pub fn eval(&self, dt: f64) -> f64 {
        if dt >= 0.0 {
            (-self.omega * dt).exp()
        } else {
            0.0
        }
    }

    /// `∫_0^horizon κ(t) dt`.
    pub fn mass(&self, horizon: f64) -> f64 {
        if horizon <= 0.0 {
            0.0
        } else {
            -(-self.omega * horizon).exp_m1() / self.omega
        }
    }
}

pub fn half_life_to_omega(days: f64) -> f64 {
    std::f64::consts::LN_2 / days
}

pub fn omega_to_half_life(omega: f64) -> f64 {
    std::f64::consts::LN_2 / omega
}

/// Knowledge value of one item on one of its topics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KnowledgeCell {
    pub topic: TopicId,
    pub value: f64,
    /// False for cells that the data cannot identify; their value is 0.
    pub active: bool,
}

/// Initial expertise `alpha`, off-site trend `mu` (both users × topics,
/// row-major) and per-item knowledge `k`, whose cells follow each item's
/// topic set.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub n_users: usize,
    pub n_topics: usize,
    pub alpha: Vec<f64>,
    pub mu: Vec<f64>,
    pub alpha_active: Vec<bool>,
    pub mu_active: Vec<bool>,
    pub knowledge: Vec<Vec<KnowledgeCell>>,
    pub kernel: Kernel,
}

impl ParameterSet {
    /// All-zero parameters shaped after `d`, every cell active.
    pub fn zeros(d: &Dataset, kernel: Kernel) -> Self {
        let cells = d.n_users() * d.n_topics();
        ParameterSet {
            n_users: d.n_users(),
            n_topics: d.n_topics(),
            alpha: vec![0.0; cells],
            mu: vec![0.0; cells],
            alpha_active: vec![true; cells],
            mu_active: vec![true; cells],
            knowledge: d
                .items
                .iter()
                .map(|item| {
                    item.topics
                        .topics()
                        .map(|topic| KnowledgeCell {
                            topic,
                            value: 0.0,
                            active: true,
                        })
                        .collect()
                })
                .collect(),
            kernel,
        }
    }

    #[inline]
    pub fn cell(&self, user: UserId, topic: TopicId) -> usize {
        user.index() * self.n_topics + topic.index()
    }

    pub fn alpha(&self, user: UserId, topic: TopicId) -> f64 {
        self.alpha[self.cell(user, topic)]
    }

    pub fn mu(&self, user: UserId, topic: TopicId) -> f64 {
        self.mu[self.cell(user, topic)]
    }

    pub fn knowledge(&self, item: ItemId, topic: TopicId) -> f64 {
        self.knowledge[item.index()]
            .iter()
            .find(|c| c.topic == topic)
            .map_or(0.0, |c| c.value)
    }

    /// Total knowledge of an item, `Σ_a k_qa`.
    pub fn item_total(&self, item: ItemId) -> f64 {
        self.knowledge[item.index()].iter().map(|c| c.value).sum()
    }

    /// Check nonnegativity, finiteness and the support of `k`.
    pub fn check(&self, d: &Dataset) -> Result<()> {
        let cells = self.n_users * self.n_topics;
        if self.n_users != d.n_users()
            || self.n_topics != d.n_topics()
            || self.alpha.len() != cells
            || self.mu.len() != cells
            || self.knowledge.len() != d.n_items()
        {
            return Err(Error::IndexMismatch(
                "parameter shape does not match dataset".into(),
            ));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !self.alpha.iter().chain(&self.mu).all(|&v| ok(v)) {
            return Err(Error::ConfigInvalid(
                "alpha and mu must be finite and nonnegative".into(),
            ));
        }
        for (item, cells) in d.items.iter().zip(&self.knowledge) {
            if cells.len() != item.topics.len()
                || cells.iter().zip(item.topics.topics()).any(|(c, t)| c.topic != t)
            {
                return Err(Error::IndexMismatch(format!(
                    "knowledge cells of {} do not follow its topics",
                    item.name
                )));
            }
            if !cells.iter().all(|c| ok(c.value)) {
                return Err(Error::ConfigInvalid(format!(
                    "knowledge of {} must be finite and nonnegative",
                    item.name
                )));
            }
        }
        Ok(())
    }
}

/// Expertise vector of `user` at time `t`, over all topics.
///
/// `α_u + μ_u t + Σ_{i: t_i < t} k_{q_i} κ(t - t_i)`.
pub fn expertise(p: &ParameterSet, user: UserId, d: &Dataset, t: f64) -> Result<Vec<f64>> {
    if user.index() >= p.n_users || user.index() >= d.n_users() {
        return Err(Error::UnknownUser(format!("#{}", user.0)));
    }
    let base = user.index() * p.n_topics;
    let mut e: Vec<f64> = (0..p.n_topics)
        .map(|a| p.alpha[base + a] + p.mu[base + a] * t)
        .collect();
    for ev in d.learning_history(user, t) {
        let decay = p.kernel.eval(t - ev.time);
        for c in &p.knowledge[ev.item.index()] {
            e[c.topic.index()] += c.value * decay;
        }
    }
    Ok(e)
}

/// Poisson mean of a contribution: the item-weighted average expertise.
pub fn contribution_rate(p: &ParameterSet, c: &Contribution, d: &Dataset) -> f64 {
    let topics = &d.item(c.item).topics;
    let e = expertise(p, c.user, d, c.time).expect("contribution user exists");
    let num: f64 = topics.iter().map(|(a, w)| w * e[a.index()]).sum();
    num / topics.total_weight()
}

/// Rates of every contribution of `d`, computed per user in parallel.
pub fn contribution_rates(p: &ParameterSet, d: &Dataset) -> Vec<f64> {
    let per_user = d.by_user();
    let mut rates = vec![0.0; d.contributions.len()];
    let parts: Vec<Vec<(usize, f64)>> = per_user
        .par_iter()
        .enumerate()
        .map(|(u, ev)| {
            let user = UserId(u as u32);
            let base = u * p.n_topics;
            let mut out = Vec::with_capacity(ev.contributions.len());
            for &ci in &ev.contributions {
                let c = &d.contributions[ci];
                let topics = &d.item(c.item).topics;
                let mut num = 0.0;
                for (a, w) in topics.iter() {
                    num += w * (p.alpha[base + a.index()] + p.mu[base + a.index()] * c.time);
                }
                for &li in &ev.learning {
                    let l = &d.learning_events[li];
                    if l.time >= c.time {
                        break;
                    }
                    let decay = p.kernel.eval(c.time - l.time);
                    for k in &p.knowledge[l.item.index()] {
                        let w = topics.weight(k.topic);
                        if w != 0.0 {
                            num += w * k.value * decay;
                        }
                    }
                }
                debug_assert_eq!(user, c.user);
                out.push((ci, num / topics.total_weight()));
            }
            out
        })
        .collect();
    for part in parts {
        for (i, r) in part {
            rates[i] = r;
        }
    }
    rates
}

/// `log P(s | rate)` for a Poisson score, with the rate floored inside the log.
pub fn score_log_pmf(rate: f64, s: u64) -> f64 {
    let log_term = if s == 0 {
        0.0
    } else {
        s as f64 * rate.max(RATE_FLOOR).ln()
    };
    log_term - rate - ln_factorial(s)
}

pub fn sample_score<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(rate).expect("positive finite rate").sample(rng);
    draw as u64
}

/// JSON form of a [`ParameterSet`], keyed by names.
///
/// `alpha`/`mu` are dense rows per user with `null` for cells the data could
/// not identify; `k` lists `[item, topic, value]` for active cells only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterFile {
    pub half_life_days: f64,
    pub users: Vec<String>,
    pub topics: Vec<String>,
    pub alpha: Vec<Vec<Option<f64>>>,
    pub mu: Vec<Vec<Option<f64>>>,
    pub k: Vec<(String, String, f64)>,
}

impl ParameterFile {
    pub fn from_params(p: &ParameterSet, d: &Dataset) -> Self {
        let dense = |vals: &[f64], active: &[bool]| -> Vec<Vec<Option<f64>>> {
            (0..p.n_users)
                .map(|u| {
                    (0..p.n_topics)
                        .map(|a| {
                            let i = u * p.n_topics + a;
                            active[i].then_some(vals[i])
                        })
                        .collect()
                })
                .collect()
        };
        let mut k = Vec::new();
        for (item, cells) in d.items.iter().zip(&p.knowledge) {
            for c in cells.iter().filter(|c| c.active) {
                k.push((
                    item.name.clone(),
                    d.topics[c.topic.index()].clone(),
                    c.value,
                ));
            }
        }
        ParameterFile {
            half_life_days: p.kernel.half_life(),
            users: d.users.clone(),
            topics: d.topics.clone(),
            alpha: dense(&p.alpha, &p.alpha_active),
            mu: dense(&p.mu, &p.mu_active),
            k,
        }
    }

    /// Map names onto `d`. Cells absent from the file are inactive zeros.
    pub fn resolve(&self, d: &Dataset) -> Result<ParameterSet> {
        let kernel = Kernel::from_half_life(self.half_life_days)?;
        let mut p = ParameterSet::zeros(d, kernel);
        p.alpha_active.fill(false);
        p.mu_active.fill(false);
        for cells in &mut p.knowledge {
            for c in cells {
                c.active = false;
            }
        }
        let topic_of: HashMap<&str, usize> = d
            .topics
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let user_of: HashMap<&str, usize> = d
            .users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.as_str(), i))
            .collect();
        let item_of: HashMap<&str, usize> = d
            .items
            .iter()
            .enumerate()
            .map(|(i, q)| (q.name.as_str(), i))
            .collect();
        if self.alpha.len() != self.users.len() || self.mu.len() != self.users.len() {
            return Err(Error::IndexMismatch("alpha/mu rows must match users".into()));
        }
        let check = |v: f64, what: &str| -> Result<f64> {
            if v.is_finite() && v >= 0.0 {
                Ok(v)
            } else {
                Err(Error::ConfigInvalid(format!("{what} value {v} is not a nonnegative number")))
            }
        };
        for (ui, name) in self.users.iter().enumerate() {
            let Some(&u) = user_of.get(name.as_str()) else {
                continue;
            };
            for (rows, vals, active, what) in [
                (&self.alpha, &mut p.alpha, &mut p.alpha_active, "alpha"),
                (&self.mu, &mut p.mu, &mut p.mu_active, "mu"),
            ] {
                let row = &rows[ui];
                if row.len() != self.topics.len() {
                    return Err(Error::IndexMismatch(format!("{what} row of {name} has wrong width")));
                }
                for (ti, v) in row.iter().enumerate() {
                    let (Some(v), Some(&a)) = (v, topic_of.get(self.topics[ti].as_str())) else {
                        continue;
                    };
                    let cell = u * p.n_topics + a;
                    vals[cell] = check(*v, what)?;
                    active[cell] = true;
                }
            }
        }
        for (item, topic, v) in &self.k {
            let (Some(&q), Some(&a)) = (item_of.get(item.as_str()), topic_of.get(topic.as_str()))
            else {
                return Err(Error::IndexMismatch(format!(
                    "k cell ({item}, {topic}) not in dataset"
                )));
            };
            let Some(cell) = p.knowledge[q].iter_mut().find(|c| c.topic.index() == a) else {
                return Err(Error::IndexMismatch(format!(
                    "topic {topic} is not a topic of item {item}"
                )));
            };
            cell.value = check(*v, "k")?;
            cell.active = true;
        }
        Ok(p)
    }
}
