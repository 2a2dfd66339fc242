use crate::event_model::{Dataset, ItemId, TopicId, UserId};
use crate::kernel::{Kernel, KnowledgeCell, ParameterSet};

/// What a flat coordinate stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Alpha { user: UserId, topic: TopicId },
    Mu { user: UserId, topic: TopicId },
    Knowledge { item: ItemId, topic: TopicId },
}

/// Packing of the identifiable parameter cells into one coordinate vector.
///
/// A cell gets a coordinate only if some contribution depends on it:
/// - `alpha(u, a)`: `u` contributes to an item on topic `a`;
/// - `mu(u, a)`: the same, at a time `t > 0`;
/// - `k(q, a)`: some learner of `q` later contributes to an item on `a`,
///   with `a` a topic of `q`.
///
/// Every other cell has a zero design column and is pinned at 0. Layout:
/// all alpha cells, then all mu cells (both in user-major order), then the
/// knowledge cells in item order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterIndex {
    n_users: usize,
    n_topics: usize,
    alpha: Vec<Option<u32>>,
    mu: Vec<Option<u32>>,
    knowledge: Vec<Vec<Option<u32>>>,
    cells: Vec<Cell>,
}

impl ParameterIndex {
    /// Index of the full model.
    pub fn build(d: &Dataset) -> Self {
        Self::build_with(d, true)
    }

    /// Index of the off-site-only model (no knowledge coordinates).
    pub fn build_baseline(d: &Dataset) -> Self {
        Self::build_with(d, false)
    }

    fn build_with(d: &Dataset, with_knowledge: bool) -> Self {
        let n_cells = d.n_users() * d.n_topics();
        let mut alpha_used = vec![false; n_cells];
        let mut mu_used = vec![false; n_cells];
        // Latest contribution time of each (user, topic).
        let mut last_contribution = vec![f64::NEG_INFINITY; n_cells];
        for c in &d.contributions {
            for a in d.item(c.item).topics.topics() {
                let cell = c.user.index() * d.n_topics() + a.index();
                alpha_used[cell] = true;
                if c.time > 0.0 {
                    mu_used[cell] = true;
                }
                last_contribution[cell] = last_contribution[cell].max(c.time);
            }
        }
        let mut knowledge_used: Vec<Vec<bool>> = d
            .items
            .iter()
            .map(|item| vec![false; item.topics.len()])
            .collect();
        if with_knowledge {
            for e in &d.learning_events {
                let base = e.user.index() * d.n_topics();
                for (slot, a) in d.item(e.item).topics.topics().enumerate() {
                    if last_contribution[base + a.index()] > e.time {
                        knowledge_used[e.item.index()][slot] = true;
                    }
                }
            }
        }

        let mut cells = Vec::new();
        let mut assign = |used: &[bool], make: &dyn Fn(usize) -> Cell| -> Vec<Option<u32>> {
            used.iter()
                .enumerate()
                .map(|(i, &u)| {
                    u.then(|| {
                        cells.push(make(i));
                        (cells.len() - 1) as u32
                    })
                })
                .collect()
        };
        let n_topics = d.n_topics();
        let split = |i: usize| (UserId((i / n_topics) as u32), TopicId((i % n_topics) as u32));
        let alpha = assign(&alpha_used, &|i| {
            let (user, topic) = split(i);
            Cell::Alpha { user, topic }
        });
        let mu = assign(&mu_used, &|i| {
            let (user, topic) = split(i);
            Cell::Mu { user, topic }
        });
        let knowledge = knowledge_used
            .iter()
            .enumerate()
            .map(|(q, used)| {
                let topics: Vec<TopicId> = d.items[q].topics.topics().collect();
                assign(used, &|slot| Cell::Knowledge {
                    item: ItemId(q as u32),
                    topic: topics[slot],
                })
            })
            .collect();

        ParameterIndex {
            n_users: d.n_users(),
            n_topics,
            alpha,
            mu,
            knowledge,
            cells,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn n_knowledge(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| matches!(c, Cell::Knowledge { .. }))
            .count()
    }

    #[inline]
    pub fn alpha(&self, user: UserId, topic: TopicId) -> Option<usize> {
        self.alpha[user.index() * self.n_topics + topic.index()].map(|i| i as usize)
    }

    #[inline]
    pub fn mu(&self, user: UserId, topic: TopicId) -> Option<usize> {
        self.mu[user.index() * self.n_topics + topic.index()].map(|i| i as usize)
    }

    /// Coordinate of the knowledge cell in `slot` of `item`'s topic set.
    #[inline]
    pub fn knowledge_slot(&self, item: ItemId, slot: usize) -> Option<usize> {
        self.knowledge[item.index()][slot].map(|i| i as usize)
    }

    /// Read the active cells of `p` into a coordinate vector.
    pub fn pack(&self, p: &ParameterSet) -> Vec<f64> {
        self.cells
            .iter()
            .map(|cell| match *cell {
                Cell::Alpha { user, topic } => p.alpha(user, topic),
                Cell::Mu { user, topic } => p.mu(user, topic),
                Cell::Knowledge { item, topic } => p.knowledge(item, topic),
            })
            .collect()
    }

    /// Expand a coordinate vector into a parameter set; cells without a
    /// coordinate are inactive zeros.
    pub fn unpack(&self, theta: &[f64], d: &Dataset, kernel: Kernel) -> ParameterSet {
        assert_eq!(theta.len(), self.len(), "coordinate vector length");
        let n = self.n_users * self.n_topics;
        let mut p = ParameterSet {
            n_users: self.n_users,
            n_topics: self.n_topics,
            alpha: vec![0.0; n],
            mu: vec![0.0; n],
            alpha_active: vec![false; n],
            mu_active: vec![false; n],
            knowledge: d
                .items
                .iter()
                .map(|item| {
                    item.topics
                        .topics()
                        .map(|topic| KnowledgeCell {
                            topic,
                            value: 0.0,
                            active: false,
                        })
                        .collect()
                })
                .collect(),
            kernel,
        };
        for (cell, &v) in self.cells.iter().zip(theta) {
            match *cell {
                Cell::Alpha { user, topic } => {
                    let i = p.cell(user, topic);
                    p.alpha[i] = v;
                    p.alpha_active[i] = true;
                }
                Cell::Mu { user, topic } => {
                    let i = p.cell(user, topic);
                    p.mu[i] = v;
                    p.mu_active[i] = true;
                }
                Cell::Knowledge { item, topic } => {
                    let slot = d.item(item).topics.position(topic).expect("topic of item");
                    let kc = &mut p.knowledge[item.index()][slot];
                    kc.value = v;
                    kc.active = true;
                }
            }
        }
        p
    }
}
