use std::collections::BTreeMap;

use super::{Contribution, Dataset, LearningEvent};

pub const DEFAULT_DETREND_BIN_DAYS: f64 = 30.0;

/// Rescale scores so that every time bin has the global mean score.
///
/// Each score is multiplied by `global_mean / bin_mean`; bins with zero mean
/// are left as they are.
pub fn detrend_scores(d: &Dataset, bin_width: f64) -> Dataset {
    assert!(bin_width > 0.0, "bin width must be positive");
    let bin = |t: f64| (t / bin_width).floor() as i64;
    let mut bins: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    let mut total = 0.0;
    for c in &d.contributions {
        let e = bins.entry(bin(c.time)).or_default();
        e.0 += c.score;
        e.1 += 1;
        total += c.score;
    }
    let mut out = d.clone();
    if d.contributions.is_empty() {
        return out;
    }
    let global = total / d.contributions.len() as f64;
    for c in &mut out.contributions {
        let (sum, n) = bins[&bin(c.time)];
        let mean = sum / n as f64;
        if mean > 0.0 {
            c.score *= global / mean;
        }
    }
    out
}

/// Held-out part of a chronological split.
///
/// `learning_events` holds the learning events that were not needed to train
/// but happen before test contributions; predictions use them together with
/// the training history.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TestSet {
    pub contributions: Vec<Contribution>,
    pub learning_events: Vec<LearningEvent>,
}

impl TestSet {
    /// The full-history dataset against which test contributions are scored:
    /// all training and held-out learning events, test contributions only.
    pub fn scoring_dataset(&self, train: &Dataset) -> Dataset {
        let mut learning = train.learning_events.clone();
        learning.extend_from_slice(&self.learning_events);
        Dataset::new(
            train.topics.clone(),
            train.users.clone(),
            train.items.clone(),
            learning,
            self.contributions.clone(),
            train.horizon,
        )
    }
}

/// Per-user chronological split.
///
/// The first `ceil(fraction * n)` contributions of each user train; so do the
/// user's learning events strictly before their last training contribution.
pub fn split_train_test(d: &Dataset, train_fraction: f64) -> (Dataset, TestSet) {
    assert!(
        train_fraction > 0.0 && train_fraction < 1.0,
        "train fraction must lie in (0, 1)"
    );
    let per_user = d.by_user();
    let mut train_contrib = vec![false; d.contributions.len()];
    let mut cutoff: Vec<Option<f64>> = vec![None; d.n_users()];
    for (u, ev) in per_user.iter().enumerate() {
        let n = ev.contributions.len();
        let n_train = (train_fraction * n as f64).ceil() as usize;
        for &i in &ev.contributions[..n_train.min(n)] {
            train_contrib[i] = true;
        }
        if n_train > 0 {
            cutoff[u] = Some(d.contributions[ev.contributions[n_train - 1]].time);
        }
    }
    let mut train = d.clone();
    let mut test = TestSet::default();
    train.contributions.clear();
    train.learning_events.clear();
    for (c, &is_train) in d.contributions.iter().zip(&train_contrib) {
        if is_train {
            train.contributions.push(*c);
        } else {
            test.contributions.push(*c);
        }
    }
    for e in &d.learning_events {
        match cutoff[e.user.index()] {
            Some(t) if e.time < t => train.learning_events.push(*e),
            _ => test.learning_events.push(*e),
        }
    }
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::fixtures::two_users;
    use crate::event_model::{Item, ItemId, TopicId, TopicSet, UserId};
    use proptest::prelude::*;

    fn contributions_dataset(cs: Vec<(u32, f64, f64)>, n_users: usize) -> Dataset {
        Dataset::new(
            vec!["a".into()],
            (0..n_users).map(|u| format!("u{u}")).collect(),
            vec![Item {
                name: "q".into(),
                topics: TopicSet::binary([TopicId(0)]),
            }],
            vec![],
            cs.into_iter()
                .map(|(u, t, s)| Contribution {
                    user: UserId(u),
                    time: t,
                    item: ItemId(0),
                    score: s,
                })
                .collect(),
            1000.0,
        )
    }

    #[test]
    fn constant_scores_are_unchanged() {
        let d = contributions_dataset(vec![(0, 1.0, 2.0), (0, 40.0, 2.0), (0, 80.0, 2.0)], 1);
        assert_eq!(detrend_scores(&d, 30.0), d);
    }

    #[test]
    fn two_bins_rescale_to_global_mean() {
        // Bin 0 mean 4, bin 1 mean 2, global mean 3.
        let d = contributions_dataset(
            vec![(0, 1.0, 3.0), (0, 2.0, 5.0), (0, 31.0, 1.0), (0, 32.0, 3.0)],
            1,
        );
        let out = detrend_scores(&d, 30.0);
        let scores: Vec<f64> = out.contributions.iter().map(|c| c.score).collect();
        let expected = [3.0 * 0.75, 5.0 * 0.75, 1.0 * 1.5, 3.0 * 1.5];
        for (s, e) in scores.iter().zip(expected) {
            assert!((s - e).abs() < 1e-12);
        }
        assert_eq!(d.contributions[0].score, 3.0);
    }

    #[test]
    fn single_bin_is_unchanged() {
        let d = contributions_dataset(vec![(0, 1.0, 1.0), (0, 2.0, 7.0)], 1);
        assert_eq!(detrend_scores(&d, 30.0), d);
    }

    #[test]
    fn ten_contributions_split_eight_two() {
        let d = contributions_dataset((0..10).map(|i| (0, i as f64, 1.0)).collect(), 1);
        let (train, test) = split_train_test(&d, 0.8);
        assert_eq!(train.contributions.len(), 8);
        assert_eq!(test.contributions.len(), 2);
        assert_eq!(test.contributions[0].time, 8.0);
    }

    #[test]
    fn single_contribution_goes_to_train() {
        let d = contributions_dataset(vec![(0, 3.0, 1.0)], 1);
        let (train, test) = split_train_test(&d, 0.8);
        assert_eq!(train.contributions.len(), 1);
        assert!(test.contributions.is_empty());
    }

    #[test]
    fn learning_before_last_train_contribution_trains() {
        let d = two_users();
        // bob: contributions at 5 and 6 -> ceil(0.5*2)=1 train (t=5); his
        // learning at t=2 trains.
        let (train, test) = split_train_test(&d, 0.5);
        assert!(train
            .learning_events
            .iter()
            .any(|e| e.user == UserId(1) && e.time == 2.0));
        assert_eq!(test.contributions.len(), 1);
        let scoring = test.scoring_dataset(&train);
        assert_eq!(scoring.learning_events.len(), d.learning_events.len());
    }

    proptest! {
        #[test]
        fn detrend_preserves_global_mean(
            cs in prop::collection::vec((0u32..3, 0.0f64..300.0, 0.0f64..20.0), 1..60),
            width in 1.0f64..100.0,
        ) {
            let d = contributions_dataset(cs, 3);
            let out = detrend_scores(&d, width);
            let mean = |d: &Dataset| d.contributions.iter().map(|c| c.score).sum::<f64>()
                / d.contributions.len() as f64;
            let (a, b) = (mean(&d), mean(&out));
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-300));
        }

        #[test]
        fn split_partitions_contributions(
            cs in prop::collection::vec((0u32..4, 0.0f64..100.0, 0.0f64..5.0), 0..60),
            fraction in 0.05f64..0.95,
        ) {
            let d = contributions_dataset(cs, 4);
            let (train, test) = split_train_test(&d, fraction);
            prop_assert_eq!(train.contributions.len() + test.contributions.len(),
                d.contributions.len());
            let mut all: Vec<(u32, u64, u64)> = train.contributions.iter()
                .chain(&test.contributions)
                .map(|c| (c.user.0, c.time.to_bits(), c.score.to_bits()))
                .collect();
            let mut orig: Vec<(u32, u64, u64)> = d.contributions.iter()
                .map(|c| (c.user.0, c.time.to_bits(), c.score.to_bits()))
                .collect();
            all.sort();
            orig.sort();
            prop_assert_eq!(all, orig);
            for u in 0..4 {
                let last_train = train.contributions.iter().filter(|c| c.user.0 == u)
                    .map(|c| c.time).fold(f64::NEG_INFINITY, f64::max);
                let first_test = test.contributions.iter().filter(|c| c.user.0 == u)
                    .map(|c| c.time).fold(f64::INFINITY, f64::min);
                prop_assert!(last_train <= first_test);
            }
        }
    }
}
