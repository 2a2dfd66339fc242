//! Post-fit analyses over fitted parameters and the event log.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::{Dataset, UserId};
use crate::export::to_csv;
use crate::kernel::{expertise, ParameterSet};

/// Default cut below which an item counts as carrying no knowledge.
pub const DEFAULT_ZERO_THRESHOLD: f64 = 1e-6;

/// How off-site learning is aggregated over `[0, T]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsiteMode {
    /// `∫₀ᵀ μ t dt = μ T² / 2`.
    #[default]
    Integral,
    /// Expertise gained by `T`, `μ T`.
    Gain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningDecomposition {
    pub user: String,
    pub onsite: f64,
    pub offsite: f64,
    pub total: f64,
}

fn user_onsite(p: &ParameterSet, d: &Dataset, user: UserId, horizon: f64) -> f64 {
    d.learning_history(user, horizon)
        .map(|e| p.item_total(e.item) * p.kernel.mass(horizon - e.time))
        .sum()
}

fn user_offsite(p: &ParameterSet, user: UserId, horizon: f64, mode: OffsiteMode) -> f64 {
    let row = &p.mu[user.index() * p.n_topics..(user.index() + 1) * p.n_topics];
    let scale = match mode {
        OffsiteMode::Integral => horizon * horizon / 2.0,
        OffsiteMode::Gain => horizon,
    };
    row.iter().sum::<f64>() * scale
}

/// Per-user knowledge gathered on-site versus off-site up to `horizon`.
pub fn onsite_offsite(
    p: &ParameterSet,
    d: &Dataset,
    horizon: f64,
    mode: OffsiteMode,
) -> Vec<LearningDecomposition> {
    (0..d.n_users())
        .map(|u| {
            let user = UserId(u as u32);
            let onsite = user_onsite(p, d, user, horizon);
            let offsite = user_offsite(p, user, horizon, mode);
            LearningDecomposition {
                user: d.users[u].clone(),
                onsite,
                offsite,
                total: onsite + offsite,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogNormalFit {
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
}

/// Moment estimate on logs of the positive values.
pub fn fit_lognormal(xs: &[f64]) -> Option<LogNormalFit> {
    let logs: Vec<f64> = xs.iter().filter(|&&x| x > 0.0).map(|x| x.ln()).collect();
    if logs.len() < 2 {
        return None;
    }
    let n = logs.len() as f64;
    let mu = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / (n - 1.0);
    Some(LogNormalFit {
        mu,
        sigma: var.sqrt(),
        n: logs.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub x_min: f64,
    pub n_tail: usize,
}

/// Continuous maximum-likelihood exponent for the tail `x ≥ x_min`.
pub fn fit_power_law(xs: &[f64], x_min: f64) -> Option<PowerLawFit> {
    if !(x_min > 0.0) {
        return None;
    }
    let tail: Vec<f64> = xs.iter().copied().filter(|&x| x >= x_min).collect();
    let log_sum: f64 = tail.iter().map(|x| (x / x_min).ln()).sum();
    (log_sum > 0.0).then(|| PowerLawFit {
        alpha: 1.0 + tail.len() as f64 / log_sum,
        x_min,
        n_tail: tail.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n_items: usize,
    pub zero_fraction: f64,
    /// Share of all knowledge held by the top 10% of items.
    pub top_decile_share: f64,
    pub histogram: Vec<HistogramBin>,
    pub lognormal: Option<LogNormalFit>,
}

impl DistributionSummary {
    pub fn histogram_csv(&self) -> Result<String> {
        to_csv(&self.histogram)
    }
}

/// Log-spaced histogram of the values at or above `zero_threshold`.
fn log_histogram(values: &[f64], zero_threshold: f64, n_bins: usize) -> Vec<HistogramBin> {
    let pos: Vec<f64> = values.iter().copied().filter(|&v| v >= zero_threshold && v > 0.0).collect();
    if pos.is_empty() || n_bins == 0 {
        return Vec::new();
    }
    let lo = pos.iter().copied().fold(f64::INFINITY, f64::min).ln();
    let hi = pos.iter().copied().fold(0.0, f64::max).ln();
    let width = ((hi - lo) / n_bins as f64).max(f64::MIN_POSITIVE);
    let mut counts = vec![0usize; n_bins];
    for v in &pos {
        let b = (((v.ln() - lo) / width) as usize).min(n_bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, count)| HistogramBin {
            lower: (lo + b as f64 * width).exp(),
            upper: (lo + (b + 1) as f64 * width).exp(),
            count,
        })
        .collect()
}

/// Share of the total held by the largest `ceil(n / 10)` values.
fn top_decile_share(values: &[f64]) -> f64 {
    let total: f64 = values.iter().sum();
    if values.is_empty() || total <= 0.0 {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = values.len().div_ceil(10);
    sorted[..top].iter().sum::<f64>() / total
}

/// Distribution of per-item knowledge totals `k_q = Σ_a k_qa`.
pub fn knowledge_distribution(p: &ParameterSet, zero_threshold: f64, n_bins: usize) -> DistributionSummary {
    let totals: Vec<f64> = p.knowledge.iter().map(|c| c.iter().map(|k| k.value).sum()).collect();
    let n = totals.len();
    let zeros = totals.iter().filter(|&&v| v < zero_threshold).count();
    let positive: Vec<f64> = totals.iter().copied().filter(|&v| v >= zero_threshold).collect();
    DistributionSummary {
        n_items: n,
        zero_fraction: if n == 0 { 0.0 } else { zeros as f64 / n as f64 },
        top_decile_share: top_decile_share(&totals),
        histogram: log_histogram(&totals, zero_threshold, n_bins),
        lognormal: fit_lognormal(&positive),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsefulUpvoteRow {
    pub user: String,
    pub learning_events: usize,
    pub useful: usize,
    pub fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsefulUpvotes {
    pub rows: Vec<UsefulUpvoteRow>,
    /// Users without learning events, left out of `rows`.
    pub excluded_users: usize,
}

impl UsefulUpvotes {
    pub fn to_csv(&self) -> Result<String> {
        to_csv(&self.rows)
    }
}

/// Per user, the fraction of learning events on items with `k_q ≥ zero_threshold`.
pub fn useful_upvote_fraction(p: &ParameterSet, d: &Dataset, zero_threshold: f64) -> UsefulUpvotes {
    let mut counts = vec![(0usize, 0usize); d.n_users()];
    for e in &d.learning_events {
        let c = &mut counts[e.user.index()];
        c.0 += 1;
        if p.item_total(e.item) >= zero_threshold {
            c.1 += 1;
        }
    }
    let rows: Vec<UsefulUpvoteRow> = counts
        .iter()
        .enumerate()
        .filter(|(_, c)| c.0 > 0)
        .map(|(u, &(n, useful))| UsefulUpvoteRow {
            user: d.users[u].clone(),
            learning_events: n,
            useful,
            fraction: useful as f64 / n as f64,
        })
        .collect();
    UsefulUpvotes {
        excluded_users: d.n_users() - rows.len(),
        rows,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionShare {
    pub user: String,
    pub item: String,
    pub time: f64,
    pub score: f64,
    pub knowledge: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserKnowledge {
    pub user: String,
    pub contributed: f64,
    /// Total knowledge of the distinct items the user learned from.
    pub learned: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionKnowledge {
    pub contributions: Vec<ContributionShare>,
    pub users: Vec<UserKnowledge>,
}

impl ContributionKnowledge {
    pub fn contributions_csv(&self) -> Result<String> {
        to_csv(&self.contributions)
    }

    pub fn users_csv(&self) -> Result<String> {
        to_csv(&self.users)
    }

    pub fn learned_lognormal(&self) -> Option<LogNormalFit> {
        fit_lognormal(&self.users.iter().map(|u| u.learned).collect::<Vec<_>>())
    }

    pub fn contributed_power_law(&self, x_min: f64) -> Option<PowerLawFit> {
        fit_power_law(&self.users.iter().map(|u| u.contributed).collect::<Vec<_>>(), x_min)
    }
}

/// Split each item's knowledge over its contributions in proportion to
/// their scores (equally when all scores are zero).
pub fn contribution_knowledge(p: &ParameterSet, d: &Dataset) -> ContributionKnowledge {
    let mut score_sum = vec![0.0; d.n_items()];
    let mut count = vec![0usize; d.n_items()];
    for c in &d.contributions {
        score_sum[c.item.index()] += c.score;
        count[c.item.index()] += 1;
    }
    let mut contributed = vec![0.0; d.n_users()];
    let contributions = d
        .contributions
        .iter()
        .map(|c| {
            let q = c.item.index();
            let k = p.item_total(c.item);
            let share = if score_sum[q] > 0.0 {
                k * c.score / score_sum[q]
            } else {
                k / count[q] as f64
            };
            contributed[c.user.index()] += share;
            ContributionShare {
                user: d.users[c.user.index()].clone(),
                item: d.item(c.item).name.clone(),
                time: c.time,
                score: c.score,
                knowledge: share,
            }
        })
        .collect();
    let mut learned_items: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); d.n_users()];
    for e in &d.learning_events {
        learned_items[e.user.index()].insert(e.item.index());
    }
    let users = (0..d.n_users())
        .map(|u| UserKnowledge {
            user: d.users[u].clone(),
            contributed: contributed[u],
            learned: learned_items[u]
                .iter()
                .map(|&q| p.knowledge[q].iter().map(|c| c.value).sum::<f64>())
                .sum(),
        })
        .collect();
    ContributionKnowledge {
        contributions,
        users,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub time: f64,
    pub topic: String,
    pub expertise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub user: String,
    pub points: Vec<TrajectoryPoint>,
    /// `onsite / (onsite + offsite)` over the dataset horizon; 0 if both vanish.
    pub onsite_share: f64,
}

impl Trajectory {
    pub fn to_csv(&self) -> Result<String> {
        to_csv(&self.points)
    }
}

/// Expertise of `user` at each grid time.
pub fn learning_trajectory(p: &ParameterSet, d: &Dataset, user: &str, grid: &[f64]) -> Result<Trajectory> {
    let id = d.user_id(user).ok_or_else(|| Error::UnknownUser(user.into()))?;
    let mut points = Vec::with_capacity(grid.len() * d.n_topics());
    for &t in grid {
        for (a, e) in expertise(p, id, d, t)?.into_iter().enumerate() {
            points.push(TrajectoryPoint {
                time: t,
                topic: d.topics[a].clone(),
                expertise: e,
            });
        }
    }
    let onsite = user_onsite(p, d, id, d.horizon);
    let total = onsite + user_offsite(p, id, d.horizon, OffsiteMode::Integral);
    Ok(Trajectory {
        user: user.into(),
        points,
        onsite_share: if total > 0.0 { onsite / total } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::fixtures::two_users;
    use crate::event_model::{Item, ItemId, LearningEvent, TopicId, TopicSet};
    use crate::kernel::Kernel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn zeros() -> (Dataset, ParameterSet) {
        let d = two_users();
        let p = ParameterSet::zeros(&d, Kernel::new(0.2).unwrap());
        (d, p)
    }

    #[test]
    fn zero_parameters_decompose_to_zero() {
        let (mut d, p) = zeros();
        d.learning_events.clear();
        for row in onsite_offsite(&p, &d, 10.0, OffsiteMode::Integral) {
            assert_eq!((row.onsite, row.offsite, row.total), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn single_event_onsite_integral() {
        let d = Dataset::new(
            vec!["a".into()],
            vec!["u".into()],
            vec![Item {
                name: "q".into(),
                topics: TopicSet::binary([TopicId(0)]),
            }],
            vec![LearningEvent {
                user: UserId(0),
                time: 3.0,
                item: ItemId(0),
            }],
            vec![],
            10.0,
        );
        let omega = 0.25;
        let mut p = ParameterSet::zeros(&d, Kernel::new(omega).unwrap());
        p.knowledge[0][0].value = 2.0;
        p.mu[0] = 0.5;
        let row = &onsite_offsite(&p, &d, 10.0, OffsiteMode::Integral)[0];
        assert_relative_eq!(row.onsite, 2.0 * (1.0 - (-omega * 7.0f64).exp()) / omega, max_relative = 1e-14);
        assert_relative_eq!(row.offsite, 0.5 * 100.0 / 2.0);
        assert_eq!(row.total, row.onsite + row.offsite);
        let far = &onsite_offsite(&p, &d, 1e6, OffsiteMode::Gain)[0];
        assert_relative_eq!(far.onsite, 2.0 / omega, max_relative = 1e-12);
        assert_relative_eq!(far.offsite, 0.5 * 1e6);
    }

    #[test]
    fn knowledge_distribution_edge_cases() {
        let (_, p) = zeros();
        let s = knowledge_distribution(&p, DEFAULT_ZERO_THRESHOLD, 10);
        assert_eq!(s.zero_fraction, 1.0);
        assert_eq!(s.top_decile_share, 0.0);
        assert!(s.histogram.is_empty());
        assert!(s.lognormal.is_none());
    }

    #[test]
    fn top_decile_of_skewed_values() {
        let mut v = vec![1.0; 9];
        v.push(91.0);
        assert_relative_eq!(top_decile_share(&v), 0.91);
    }

    #[test]
    fn lognormal_moments_recover_shape() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, LogNormal};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        let dist = LogNormal::new(0.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| 0.05 * dist.sample(&mut rng)).collect();
        let fit = fit_lognormal(&xs).unwrap();
        assert!((fit.sigma - 1.0).abs() < 0.15);
        assert!((fit.mu - 0.05f64.ln()).abs() < 0.05);
    }

    #[test]
    fn power_law_exponent_from_pareto_sample() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(9);
        // Inverse CDF of a Pareto with alpha = 2.5, x_min = 1.
        let xs: Vec<f64> = (0..20_000).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / 1.5)).collect();
        let fit = fit_power_law(&xs, 1.0).unwrap();
        assert!((fit.alpha - 2.5).abs() < 0.05, "{}", fit.alpha);
        assert!(fit_power_law(&xs, 0.0).is_none());
    }

    #[test]
    fn useful_upvotes_count_positive_items() {
        let (d, mut p) = zeros();
        let none = useful_upvote_fraction(&p, &d, DEFAULT_ZERO_THRESHOLD);
        assert!(none.rows.iter().all(|r| r.fraction == 0.0));
        for c in p.knowledge.iter_mut().flatten() {
            c.value = 1.0;
        }
        let all = useful_upvote_fraction(&p, &d, DEFAULT_ZERO_THRESHOLD);
        assert!(all.rows.iter().all(|r| r.fraction == 1.0));
        assert_eq!(all.excluded_users, 0);
    }

    #[test]
    fn useful_fraction_of_mixed_history() {
        let items: Vec<Item> = (0..5)
            .map(|q| Item {
                name: format!("q{q}"),
                topics: TopicSet::binary([TopicId(0)]),
            })
            .collect();
        let learning = (0..5)
            .map(|q| LearningEvent {
                user: UserId(0),
                time: q as f64,
                item: ItemId(q),
            })
            .collect();
        let d = Dataset::new(vec!["a".into()], vec!["u".into(), "idle".into()], items, learning, vec![], 10.0);
        let mut p = ParameterSet::zeros(&d, Kernel::new(0.2).unwrap());
        for q in [0, 2, 4] {
            p.knowledge[q][0].value = 0.3;
        }
        let r = useful_upvote_fraction(&p, &d, DEFAULT_ZERO_THRESHOLD);
        assert_eq!(r.rows.len(), 1);
        assert_relative_eq!(r.rows[0].fraction, 0.6);
        assert_eq!(r.excluded_users, 1);
    }

    #[test]
    fn proportional_and_equal_splits() {
        let (mut d, mut p) = zeros();
        // q2 has contributions with scores 3 and 0.
        p.knowledge[2][0].value = 1.5;
        p.knowledge[2][1].value = 2.5;
        let r = contribution_knowledge(&p, &d);
        let on_q2: Vec<f64> = r.contributions.iter().filter(|c| c.item == "q2").map(|c| c.knowledge).collect();
        assert_eq!(on_q2, vec![4.0, 0.0]);

        d.contributions[0].score = 1.0;
        d.contributions[2].score = 3.0;
        let r = contribution_knowledge(&p, &d);
        let on_q2: Vec<f64> = r.contributions.iter().filter(|c| c.item == "q2").map(|c| c.knowledge).collect();
        assert_eq!(on_q2, vec![1.0, 3.0]);

        for c in &mut d.contributions {
            c.score = 0.0;
        }
        let r = contribution_knowledge(&p, &d);
        let on_q2: Vec<f64> = r.contributions.iter().filter(|c| c.item == "q2").map(|c| c.knowledge).collect();
        assert_eq!(on_q2, vec![2.0, 2.0]);
        // alice learned q0 (k = 0) and q2 (k = 4).
        assert_eq!(r.users[0].learned, 4.0);
    }

    proptest! {
        #[test]
        fn shares_conserve_item_knowledge(
            scores in prop::collection::vec(0u32..20, 3),
            k in prop::collection::vec(0.0f64..5.0, 4),
        ) {
            let (mut d, mut p) = zeros();
            for (c, s) in d.contributions.iter_mut().zip(&scores) {
                c.score = *s as f64;
            }
            for (cell, v) in p.knowledge.iter_mut().flatten().zip(&k) {
                cell.value = *v;
            }
            let r = contribution_knowledge(&p, &d);
            for q in 0..d.n_items() {
                let name = &d.items[q].name;
                let shares: f64 = r.contributions.iter().filter(|c| &c.item == name).map(|c| c.knowledge).sum();
                let has = r.contributions.iter().any(|c| &c.item == name);
                if has {
                    let total = p.item_total(ItemId(q as u32));
                    prop_assert!((shares - total).abs() <= 1e-12 * total.max(1.0));
                }
            }
        }
    }

    #[test]
    fn trajectory_examples() {
        let (d, mut p) = zeros();
        p.alpha[0] = 0.7;
        p.alpha[1] = 0.2;
        let t = learning_trajectory(&p, &d, "alice", &[0.0]).unwrap();
        assert_eq!(t.points[0].expertise, 0.7);
        assert_eq!(t.points[1].expertise, 0.2);
        assert!(matches!(
            learning_trajectory(&p, &d, "carol", &[0.0]),
            Err(Error::UnknownUser(_))
        ));
    }

    #[test]
    fn trajectory_jumps_by_knowledge_at_learning_time() {
        let (d, mut p) = zeros();
        // alice learns q0 (topic java) at t = 1.
        p.knowledge[0][0].value = 1.25;
        p.mu[0] = 0.1;
        let eps = 1e-9;
        let t = learning_trajectory(&p, &d, "alice", &[1.0 - eps, 1.0 + eps]).unwrap();
        let jump = t.points[2].expertise - t.points[0].expertise;
        assert!((jump - 1.25).abs() < 1e-6, "{jump}");
    }

    #[test]
    fn purely_onsite_share_is_one() {
        let (d, mut p) = zeros();
        p.knowledge[0][0].value = 1.0;
        let t = learning_trajectory(&p, &d, "alice", &[5.0]).unwrap();
        assert_eq!(t.onsite_share, 1.0);
    }
}
