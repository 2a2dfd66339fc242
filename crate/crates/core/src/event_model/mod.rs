//! Event data model: knowledge items with topic weights, learning events,
//! scored contributions, and the dataset that holds them.

mod filter;
pub mod io;
mod transform;
mod validate;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use filter::{filter_dataset, FilterConfig};
pub use transform::{detrend_scores, split_train_test, TestSet, DEFAULT_DETREND_BIN_DAYS};
pub use validate::{validate_dataset, ValidationReport};

macro_rules! id_type {
    ($name:ident) => {
        #[derive(
            Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }
    };
}

id_type!(UserId);
id_type!(ItemId);
id_type!(TopicId);

/// Topic weights of one knowledge item, sorted by topic, zero weights dropped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TopicSet {
    entries: Vec<(TopicId, f64)>,
}

impl TopicSet {
    /// Binary weights: every listed topic gets weight 1.
    pub fn binary(topics: impl IntoIterator<Item = TopicId>) -> Self {
        Self::weighted(topics.into_iter().map(|t| (t, 1.0)))
    }

    /// Arbitrary weights. Zero weights are dropped and duplicate topics are
    /// summed. Negative or non-finite weights are kept so that validation can
    /// report them.
    pub fn weighted(weights: impl IntoIterator<Item = (TopicId, f64)>) -> Self {
        let mut entries: Vec<(TopicId, f64)> = weights.into_iter().collect();
        entries.sort_by_key(|&(t, _)| t);
        let mut merged: Vec<(TopicId, f64)> = Vec::with_capacity(entries.len());
        for (t, w) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == t => last.1 += w,
                _ => merged.push((t, w)),
            }
        }
        merged.retain(|&(_, w)| w != 0.0);
        TopicSet { entries: merged }
    }

    pub fn iter(&self) -> impl Iterator<Item = (TopicId, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn topics(&self) -> impl Iterator<Item = TopicId> + '_ {
        self.entries.iter().map(|&(t, _)| t)
    }

    /// Number of active topics.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `w_q · 1`, the normaliser of the topic-averaged expertise.
    pub fn total_weight(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w).sum()
    }

    pub fn weight(&self, topic: TopicId) -> f64 {
        self.position(topic).map_or(0.0, |i| self.entries[i].1)
    }

    pub fn contains(&self, topic: TopicId) -> bool {
        self.position(topic).is_some()
    }

    /// Slot of `topic` within this set, used to address per-item cells.
    pub fn position(&self, topic: TopicId) -> Option<usize> {
        self.entries.binary_search_by_key(&topic, |&(t, _)| t).ok()
    }

    pub(crate) fn is_well_formed(&self) -> bool {
        self.entries.iter().all(|&(_, w)| w.is_finite() && w > 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub name: String,
    pub topics: TopicSet,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningEvent {
    pub user: UserId,
    /// Days since the epoch of the dataset.
    pub time: f64,
    pub item: ItemId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub user: UserId,
    pub time: f64,
    pub item: ItemId,
    pub score: f64,
}

/// Immutable container of users, topics, items and their events.
///
/// Fields are public so that raw (possibly invalid) data can be represented
/// and passed to [`validate_dataset`]. [`Dataset::new`] puts events into
/// canonical order; every other operation assumes a dataset that validates.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub topics: Vec<String>,
    pub users: Vec<String>,
    pub items: Vec<Item>,
    pub learning_events: Vec<LearningEvent>,
    pub contributions: Vec<Contribution>,
    /// End of the observation window `[0, T)`, in days.
    pub horizon: f64,
}

/// Positions of one user's events in the global (time-sorted) lists.
#[derive(Clone, Debug, Default)]
pub struct UserEvents {
    pub learning: Vec<usize>,
    pub contributions: Vec<usize>,
}

impl Dataset {
    /// Build a dataset, stably sorting both event lists by time.
    pub fn new(
        topics: Vec<String>,
        users: Vec<String>,
        items: Vec<Item>,
        mut learning_events: Vec<LearningEvent>,
        mut contributions: Vec<Contribution>,
        horizon: f64,
    ) -> Self {
        learning_events.sort_by(|a, b| a.time.total_cmp(&b.time));
        contributions.sort_by(|a, b| a.time.total_cmp(&b.time));
        Dataset {
            topics,
            users,
            items,
            learning_events,
            contributions,
            horizon,
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_topics(&self) -> usize {
        self.topics.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn item(&self, id: ItemId) -> &Item {
        &self.items[id.index()]
    }

    pub fn user_id(&self, name: &str) -> Option<UserId> {
        self.users
            .iter()
            .position(|u| u == name)
            .map(|i| UserId(i as u32))
    }

    /// Per-user event positions, each list in chronological order.
    pub fn by_user(&self) -> Vec<UserEvents> {
        let mut out = vec![UserEvents::default(); self.n_users()];
        for (i, e) in self.learning_events.iter().enumerate() {
            out[e.user.index()].learning.push(i);
        }
        for (i, c) in self.contributions.iter().enumerate() {
            out[c.user.index()].contributions.push(i);
        }
        out
    }

    /// Each user's joining time, estimated by their earliest event.
    /// Users without events get `None`.
    pub fn join_times(&self) -> Vec<Option<f64>> {
        let mut out: Vec<Option<f64>> = vec![None; self.n_users()];
        let times = self
            .learning_events
            .iter()
            .map(|e| (e.user, e.time))
            .chain(self.contributions.iter().map(|c| (c.user, c.time)));
        for (u, t) in times {
            let slot = &mut out[u.index()];
            *slot = Some(slot.map_or(t, |s: f64| s.min(t)));
        }
        out
    }

    /// Learning events of `user` strictly before `t`, oldest first.
    pub fn learning_history(&self, user: UserId, t: f64) -> impl Iterator<Item = &LearningEvent> {
        self.learning_events
            .iter()
            .take_while(move |e| e.time < t)
            .filter(move |e| e.user == user)
    }

    /// SHA-256 over a canonical encoding of the full dataset content.
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let put_str = |h: &mut Sha256, s: &str| {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        };
        h.update(b"crowdlearn-dataset-v1");
        h.update(self.horizon.to_bits().to_le_bytes());
        h.update((self.topics.len() as u64).to_le_bytes());
        for t in &self.topics {
            put_str(&mut h, t);
        }
        h.update((self.users.len() as u64).to_le_bytes());
        for u in &self.users {
            put_str(&mut h, u);
        }
        h.update((self.items.len() as u64).to_le_bytes());
        for item in &self.items {
            put_str(&mut h, &item.name);
            h.update((item.topics.len() as u64).to_le_bytes());
            for (t, w) in item.topics.iter() {
                h.update(t.0.to_le_bytes());
                h.update(w.to_bits().to_le_bytes());
            }
        }
        h.update((self.learning_events.len() as u64).to_le_bytes());
        for e in &self.learning_events {
            h.update(e.user.0.to_le_bytes());
            h.update(e.time.to_bits().to_le_bytes());
            h.update(e.item.0.to_le_bytes());
        }
        h.update((self.contributions.len() as u64).to_le_bytes());
        for c in &self.contributions {
            h.update(c.user.0.to_le_bytes());
            h.update(c.time.to_bits().to_le_bytes());
            h.update(c.item.0.to_le_bytes());
            h.update(c.score.to_bits().to_le_bytes());
        }
        let digest = h.finalize();
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest[..32]);
        out
    }

    /// First eight bytes of [`Dataset::content_hash`], used as a cache key.
    pub fn short_hash(&self) -> u64 {
        let full = self.content_hash();
        u64::from_le_bytes(full[..8].try_into().expect("8 bytes"))
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Two users, two topics, three items; valid by construction.
    pub fn two_users() -> Dataset {
        let items = vec![
            Item {
                name: "q0".into(),
                topics: TopicSet::binary([TopicId(0)]),
            },
            Item {
                name: "q1".into(),
                topics: TopicSet::binary([TopicId(1)]),
            },
            Item {
                name: "q2".into(),
                topics: TopicSet::binary([TopicId(0), TopicId(1)]),
            },
        ];
        let learning = vec![
            LearningEvent {
                user: UserId(0),
                time: 1.0,
                item: ItemId(0),
            },
            LearningEvent {
                user: UserId(1),
                time: 2.0,
                item: ItemId(1),
            },
            LearningEvent {
                user: UserId(0),
                time: 3.0,
                item: ItemId(2),
            },
        ];
        let contributions = vec![
            Contribution {
                user: UserId(0),
                time: 4.0,
                item: ItemId(2),
                score: 3.0,
            },
            Contribution {
                user: UserId(1),
                time: 5.0,
                item: ItemId(1),
                score: 1.0,
            },
            Contribution {
                user: UserId(1),
                time: 6.0,
                item: ItemId(2),
                score: 0.0,
            },
        ];
        Dataset::new(
            vec!["java".into(), "python".into()],
            vec!["alice".into(), "bob".into()],
            items,
            learning,
            contributions,
            10.0,
        )
    }
}
