//! Random fixtures and oracles shared by the integration tests.
#![allow(dead_code)]

use crowdlearn::event_model::{Contribution, Dataset, Item, ItemId, LearningEvent, TopicId, TopicSet, UserId};
use crowdlearn::kernel::{Kernel, ParameterSet};
use crowdlearn::likelihood::{gradient, log_likelihood, DesignMatrix};
use rand::seq::index::sample;
use rand::Rng;

/// Event time on `[0, 20)`, half the time snapped to a half-day grid so that
/// ties between learning and contributing occur.
fn time<R: Rng>(rng: &mut R) -> f64 {
    let t: f64 = rng.random_range(0.0..20.0);
    if rng.random_bool(0.5) {
        (t * 2.0).floor() / 2.0
    } else {
        t
    }
}

/// Small dataset with at most `max_events` events and at least one contribution.
pub fn random_dataset<R: Rng>(rng: &mut R, max_events: usize) -> Dataset {
    let n_users = rng.random_range(1..=4);
    let n_topics = rng.random_range(1..=3);
    let n_items = rng.random_range(1..=6);
    let items: Vec<Item> = (0..n_items)
        .map(|q| {
            let size = rng.random_range(1..=n_topics);
            let topics: Vec<TopicId> = sample(rng, n_topics, size)
                .into_iter()
                .map(|a| TopicId(a as u32))
                .collect();
            let topics = if rng.random_bool(0.3) {
                TopicSet::weighted(topics.into_iter().map(|a| (a, rng.random_range(0.2..2.0))))
            } else {
                TopicSet::binary(topics)
            };
            Item {
                name: format!("q{q}"),
                topics,
            }
        })
        .collect();
    let n_learning = rng.random_range(0..=max_events / 2);
    let n_contrib = rng.random_range(1..=max_events / 2);
    let learning = (0..n_learning)
        .map(|_| LearningEvent {
            user: UserId(rng.random_range(0..n_users) as u32),
            time: time(rng),
            item: ItemId(rng.random_range(0..n_items) as u32),
        })
        .collect();
    let contributions = (0..n_contrib)
        .map(|_| Contribution {
            user: UserId(rng.random_range(0..n_users) as u32),
            time: time(rng),
            item: ItemId(rng.random_range(0..n_items) as u32),
            score: rng.random_range(0..6) as f64,
        })
        .collect();
    Dataset::new(
        (0..n_topics).map(|a| format!("t{a}")).collect(),
        (0..n_users).map(|u| format!("u{u}")).collect(),
        items,
        learning,
        contributions,
        20.0,
    )
}

/// Every cell strictly positive, including cells the data cannot identify.
pub fn random_params<R: Rng>(rng: &mut R, d: &Dataset, kernel: Kernel) -> ParameterSet {
    let mut p = ParameterSet::zeros(d, kernel);
    for v in p.alpha.iter_mut().chain(p.mu.iter_mut()) {
        *v = rng.random_range(0.01..2.0);
    }
    for c in p.knowledge.iter_mut().flatten() {
        c.value = rng.random_range(0.01..2.0);
    }
    p
}

/// Largest `|g - fd| / max(|g|, |fd|, 1)` over coordinates, with central
/// differences of step `1e-6 · max(1, θ_i)`.
pub fn gradient_error(x: &DesignMatrix, theta: &[f64]) -> f64 {
    let g = gradient(x, theta).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let h = 1e-6 * theta[i].abs().max(1.0);
        let mut up = theta.to_vec();
        let mut down = theta.to_vec();
        up[i] += h;
        down[i] -= h;
        let fd = (log_likelihood(x, &up).unwrap() - log_likelihood(x, &down).unwrap()) / (2.0 * h);
        worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1.0));
    }
    worst
}
