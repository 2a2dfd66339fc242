//! Parameter recovery and pairwise score prediction.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_model::{Dataset, ItemId, TestSet};
use crate::export::to_csv;
use crate::kernel::{contribution_rates, Kernel, ParameterSet};
use crate::likelihood::ParameterIndex;
use crate::solver::{fit_with_index, FitResult, SolverOptions};

/// Average ranks (1-based), ties sharing the mean of their positions.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateInput("need at least two observations"));
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean).powi(2);
        syy += (b - mean).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("constant vector"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyRecovery {
    pub family: String,
    /// `None` when fewer than two coordinates compare or one side is constant.
    pub spearman: Option<f64>,
    pub rmse: Option<f64>,
    pub compared: usize,
    /// Active in the truth but not estimated.
    pub pruned: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub k: FamilyRecovery,
    pub mu: FamilyRecovery,
    pub alpha: FamilyRecovery,
}

impl RecoveryReport {
    pub fn spearman_k(&self) -> Option<f64> {
        self.k.spearman
    }

    pub fn spearman_mu(&self) -> Option<f64> {
        self.mu.spearman
    }

    pub fn spearman_alpha(&self) -> Option<f64> {
        self.alpha.spearman
    }

    pub fn to_csv(&self) -> Result<String> {
        to_csv(&[&self.k, &self.mu, &self.alpha])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn family(name: &str, pairs: &[(f64, f64)], pruned: usize) -> FamilyRecovery {
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let rmse = (!pairs.is_empty()).then(|| {
        (pairs.iter().map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt()
    });
    FamilyRecovery {
        family: name.into(),
        spearman: spearman(&xs, &ys).ok(),
        rmse,
        compared: pairs.len(),
        pruned,
    }
}

fn check_shapes(truth: &ParameterSet, est: &ParameterSet) -> Result<()> {
    if truth.n_users != est.n_users
        || truth.n_topics != est.n_topics
        || truth.knowledge.len() != est.knowledge.len()
        || truth
            .knowledge
            .iter()
            .zip(&est.knowledge)
            .any(|(a, b)| a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.topic != y.topic))
    {
        return Err(Error::IndexMismatch("truth and estimate differ in shape".into()));
    }
    Ok(())
}

/// Paired `(truth, estimate)` knowledge values of items accepted by `keep`.
fn knowledge_pairs(
    truth: &ParameterSet,
    est: &ParameterSet,
    keep: impl Fn(ItemId) -> bool,
) -> (Vec<(f64, f64)>, usize) {
    let mut pairs = Vec::new();
    let mut pruned = 0;
    for (q, (tc, ec)) in truth.knowledge.iter().zip(&est.knowledge).enumerate() {
        if !keep(ItemId(q as u32)) {
            continue;
        }
        for (t, e) in tc.iter().zip(ec) {
            match (t.active, e.active) {
                (true, true) => pairs.push((t.value, e.value)),
                (true, false) => pruned += 1,
                _ => {}
            }
        }
    }
    (pairs, pruned)
}

/// Spearman and RMSE per parameter family over cells active in both sets.
pub fn recovery_report(truth: &ParameterSet, est: &ParameterSet) -> Result<RecoveryReport> {
    check_shapes(truth, est)?;
    let cells = |values: (&[f64], &[f64]), active: (&[bool], &[bool])| {
        let mut pairs = Vec::new();
        let mut pruned = 0;
        for i in 0..values.0.len() {
            match (active.0[i], active.1[i]) {
                (true, true) => pairs.push((values.0[i], values.1[i])),
                (true, false) => pruned += 1,
                _ => {}
            }
        }
        (pairs, pruned)
    };
    let (alpha, alpha_pruned) = cells(
        (&truth.alpha, &est.alpha),
        (&truth.alpha_active, &est.alpha_active),
    );
    let (mu, mu_pruned) = cells((&truth.mu, &est.mu), (&truth.mu_active, &est.mu_active));
    let (k, k_pruned) = knowledge_pairs(truth, est, |_| true);
    Ok(RecoveryReport {
        k: family("k", &k, k_pruned),
        mu: family("mu", &mu, mu_pruned),
        alpha: family("alpha", &alpha, alpha_pruned),
    })
}

/// Knowledge recovery restricted to items with at least `min_learning`
/// learning events in `d`.
pub fn knowledge_recovery(
    truth: &ParameterSet,
    est: &ParameterSet,
    d: &Dataset,
    min_learning: usize,
) -> Result<FamilyRecovery> {
    check_shapes(truth, est)?;
    let mut counts = vec![0usize; d.n_items()];
    for e in &d.learning_events {
        counts[e.item.index()] += 1;
    }
    let (pairs, pruned) = knowledge_pairs(truth, est, |q| counts[q.index()] >= min_learning);
    Ok(family("k", &pairs, pruned))
}

/// Fit of the off-site-only model: no knowledge coordinates.
pub fn fit_baseline(d: &Dataset, kernel: Kernel, opts: &SolverOptions) -> Result<FitResult> {
    fit_with_index(d, kernel, &ParameterIndex::build_baseline(d), opts)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub score_diff_threshold: f64,
    pub n_pairs: u64,
    pub baseline_accuracy: Option<f64>,
    pub model_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionTable {
    pub rows: Vec<PredictionRow>,
}

impl PredictionTable {
    pub fn to_csv(&self) -> Result<String> {
        to_csv(&self.rows)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per threshold: (pairs, baseline correct, model correct).
type Tally = Vec<[u64; 3]>;

fn tally_item(
    members: &[usize],
    scores: &[f64],
    model: &[f64],
    baseline: &[f64],
    thresholds: &[f64],
) -> Tally {
    let right = |rates: &[f64], i: usize, j: usize| {
        let (dl, ds) = (rates[i] - rates[j], scores[i] - scores[j]);
        dl != 0.0 && (dl > 0.0) == (ds > 0.0)
    };
    let mut t = vec![[0u64; 3]; thresholds.len()];
    for (a, &i) in members.iter().enumerate() {
        for &j in &members[a + 1..] {
            let diff = (scores[i] - scores[j]).abs();
            if diff == 0.0 {
                continue;
            }
            let (m, b) = (right(model, i, j) as u64, right(baseline, i, j) as u64);
            for (slot, &th) in t.iter_mut().zip(thresholds) {
                if diff >= th {
                    slot[0] += 1;
                    slot[1] += b;
                    slot[2] += m;
                }
            }
        }
    }
    t
}

/// Pairwise prediction on the test contributions.
///
/// Every unordered pair of test contributions on the same item whose scores
/// differ is a candidate; a model is right when its rate is strictly larger
/// for the higher-scored contribution (equal rates count as wrong). Row `i`
/// covers pairs with `|Δs| ≥ thresholds[i]`.
pub fn pairwise_prediction(
    model: &ParameterSet,
    baseline: &ParameterSet,
    train: &Dataset,
    test: &TestSet,
    thresholds: &[f64],
) -> Result<PredictionTable> {
    if thresholds.is_empty() || thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::ConfigInvalid("thresholds must be positive".into()));
    }
    let scoring = test.scoring_dataset(train);
    model.check(&scoring)?;
    baseline.check(&scoring)?;
    let model_rates = contribution_rates(model, &scoring);
    let baseline_rates = contribution_rates(baseline, &scoring);
    let scores: Vec<f64> = scoring.contributions.iter().map(|c| c.score).collect();

    let mut by_item: BTreeMap<ItemId, Vec<usize>> = BTreeMap::new();
    for (i, c) in scoring.contributions.iter().enumerate() {
        by_item.entry(c.item).or_default().push(i);
    }
    let groups: Vec<&Vec<usize>> = by_item.values().collect();
    let total = groups
        .par_iter()
        .map(|members| tally_item(members, &scores, &model_rates, &baseline_rates, thresholds))
        .reduce(
            || vec![[0u64; 3]; thresholds.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    for k in 0..3 {
                        x[k] += y[k];
                    }
                }
                a
            },
        );
    if total.iter().all(|t| t[0] == 0) {
        return Err(Error::NoPairs);
    }
    let rows = thresholds
        .iter()
        .zip(total)
        .map(|(&th, [n, b, m])| PredictionRow {
            score_diff_threshold: th,
            n_pairs: n,
            baseline_accuracy: (n > 0).then(|| b as f64 / n as f64),
            model_accuracy: (n > 0).then(|| m as f64 / n as f64),
        })
        .collect();
    Ok(PredictionTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::fixtures::two_users;
    use crate::event_model::{Contribution, UserId};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn spearman_examples() {
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // d = (0, 1, 1, 0): 1 - 6 * 2 / (4 * 15) = 0.8
        assert_relative_eq!(
            spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap(),
            0.8,
            epsilon = 1e-12
        );
        assert!(matches!(spearman(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch(1, 2))));
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn ties_take_average_ranks() {
        assert_eq!(ranks(&[5.0, 1.0, 5.0, 3.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    proptest! {
        #[test]
        fn spearman_ignores_monotone_transforms(
            xs in prop::collection::vec(-100.0f64..100.0, 3..30),
            ys in prop::collection::vec(-100.0f64..100.0, 30),
        ) {
            let ys = &ys[..xs.len()];
            if let Ok(r) = spearman(&xs, ys) {
                let tx: Vec<f64> = xs.iter().map(|x| (x / 50.0).exp()).collect();
                let ty: Vec<f64> = ys.iter().map(|y| y * 3.0 + 1.0).collect();
                prop_assert!((spearman(&tx, &ty).unwrap() - r).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }

    fn params(seed: f64) -> (Dataset, ParameterSet) {
        let d = two_users();
        let mut p = ParameterSet::zeros(&d, Kernel::new(0.1).unwrap());
        for (i, v) in p.alpha.iter_mut().enumerate() {
            *v = seed + i as f64;
        }
        for (i, v) in p.mu.iter_mut().enumerate() {
            *v = seed * 0.1 + i as f64 * 0.3;
        }
        for (q, cells) in p.knowledge.iter_mut().enumerate() {
            for (s, c) in cells.iter_mut().enumerate() {
                c.value = seed + q as f64 + 0.5 * s as f64;
            }
        }
        (d, p)
    }

    #[test]
    fn truth_against_itself() {
        let (_, p) = params(1.0);
        let r = recovery_report(&p, &p).unwrap();
        for f in [&r.k, &r.mu, &r.alpha] {
            assert_eq!(f.spearman, Some(1.0));
            assert_eq!(f.rmse, Some(0.0));
        }
    }

    #[test]
    fn scaled_estimate_keeps_ranks() {
        let (_, p) = params(1.0);
        let mut q = p.clone();
        q.alpha.iter_mut().for_each(|v| *v *= 2.0);
        q.mu.iter_mut().for_each(|v| *v *= 2.0);
        q.knowledge.iter_mut().flatten().for_each(|c| c.value *= 2.0);
        let r = recovery_report(&p, &q).unwrap();
        assert_eq!(r.alpha.spearman, Some(1.0));
        assert!(r.alpha.rmse.unwrap() > 0.0);
        assert!(r.k.rmse.unwrap() > 0.0);
    }

    #[test]
    fn inactive_cells_are_counted_not_compared() {
        let (_, p) = params(1.0);
        let mut q = p.clone();
        q.alpha_active[0] = false;
        let r = recovery_report(&p, &q).unwrap();
        assert_eq!(r.alpha.compared, 3);
        assert_eq!(r.alpha.pruned, 1);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let (_, p) = params(1.0);
        let mut q = p.clone();
        q.knowledge.pop();
        assert!(matches!(recovery_report(&p, &q), Err(Error::IndexMismatch(_))));
    }

    fn pair_fixture(scores: [f64; 2]) -> (Dataset, TestSet) {
        let train = two_users();
        let test = TestSet {
            contributions: vec![
                Contribution {
                    user: UserId(0),
                    time: 8.0,
                    item: ItemId(2),
                    score: scores[0],
                },
                Contribution {
                    user: UserId(1),
                    time: 8.0,
                    item: ItemId(2),
                    score: scores[1],
                },
            ],
            learning_events: vec![],
        };
        (train, test)
    }

    #[test]
    fn higher_rate_and_higher_score_is_correct() {
        let (train, test) = pair_fixture([5.0, 1.0]);
        let mut model = ParameterSet::zeros(&train, Kernel::new(0.1).unwrap());
        model.alpha[0] = 3.0; // alice, topic 0
        let baseline = ParameterSet::zeros(&train, Kernel::new(0.1).unwrap());
        let t = pairwise_prediction(&model, &baseline, &train, &test, &[1.0, 4.0, 5.0]).unwrap();
        assert_eq!(t.rows[0].n_pairs, 1);
        assert_eq!(t.rows[0].model_accuracy, Some(1.0));
        // Equal (zero) baseline rates count as wrong.
        assert_eq!(t.rows[0].baseline_accuracy, Some(0.0));
        assert_eq!(t.rows[1].n_pairs, 1);
        assert_eq!(t.rows[2].n_pairs, 0);
        assert_eq!(t.rows[2].model_accuracy, None);
    }

    #[test]
    fn equal_scores_give_no_pairs() {
        let (train, test) = pair_fixture([2.0, 2.0]);
        let p = ParameterSet::zeros(&train, Kernel::new(0.1).unwrap());
        assert!(matches!(
            pairwise_prediction(&p, &p, &train, &test, &[1.0]),
            Err(Error::NoPairs)
        ));
        assert!(pairwise_prediction(&p, &p, &train, &test, &[0.0]).is_err());
    }

    #[test]
    fn baseline_without_learning_matches_full_fit() {
        let mut d = two_users();
        d.learning_events.clear();
        let kernel = Kernel::new(0.1).unwrap();
        let opts = SolverOptions::default();
        let full = crate::solver::fit(&d, kernel, &opts).unwrap();
        let base = fit_baseline(&d, kernel, &opts).unwrap();
        assert_eq!(full.objective_trace, base.objective_trace);
        assert!(base.params.knowledge.iter().flatten().all(|c| !c.active));
    }
}
