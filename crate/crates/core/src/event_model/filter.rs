use std::collections::BTreeSet;

use chrono::{DateTime, Datelike};
use serde::{Deserialize, Serialize};

use super::{Contribution, Dataset, Item, ItemId, LearningEvent, TopicId, TopicSet, UserId};
use crate::error::{Error, Result};

/// Preprocessing thresholds. A threshold of 0 disables its rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Keep items with strictly more learning events than this.
    pub min_learning_events: usize,
    /// Keep users with strictly more contributions than this ...
    pub min_contributions: usize,
    /// ... spread over at least this many distinct calendar months.
    pub min_active_months: usize,
    /// Keep only this many topics, ranked by learning-event count.
    pub top_topics: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_learning_events: 10,
            min_contributions: 20,
            min_active_months: 10,
            top_topics: 10,
        }
    }
}

impl FilterConfig {
    pub fn disabled() -> Self {
        FilterConfig {
            min_learning_events: 0,
            min_contributions: 0,
            min_active_months: 0,
            top_topics: 0,
        }
    }
}

/// Calendar month (UTC) of a timestamp in days since 1970-01-01.
fn month_key(days: f64) -> i64 {
    let secs = (days * 86_400.0).floor() as i64;
    match DateTime::from_timestamp(secs, 0) {
        Some(dt) => dt.year() as i64 * 12 + dt.month0() as i64,
        None => i64::MIN,
    }
}

struct Mask {
    topic: Vec<bool>,
    item: Vec<bool>,
    user: Vec<bool>,
}

impl Mask {
    fn item_topics<'a>(&'a self, item: &'a Item) -> impl Iterator<Item = TopicId> + 'a {
        item.topics.topics().filter(|t| self.topic[t.index()])
    }

    fn learning_alive(&self, e: &LearningEvent) -> bool {
        self.user[e.user.index()] && self.item[e.item.index()]
    }

    fn contribution_alive(&self, c: &Contribution) -> bool {
        self.user[c.user.index()] && self.item[c.item.index()]
    }

    fn size(&self) -> (usize, usize, usize) {
        let count = |v: &[bool]| v.iter().filter(|&&b| b).count();
        (count(&self.topic), count(&self.item), count(&self.user))
    }
}

/// Restrict a dataset to its well-observed topics, items and users.
///
/// Rules run in the order top topics, busy items, active users, and repeat
/// until nothing changes. Surviving entities are renumbered densely in their
/// original order.
pub fn filter_dataset(d: &Dataset, rules: &FilterConfig) -> Result<Dataset> {
    let mut mask = Mask {
        topic: vec![true; d.n_topics()],
        item: vec![true; d.n_items()],
        user: vec![true; d.n_users()],
    };

    loop {
        let before = mask.size();

        if rules.top_topics > 0 {
            let mut counts = vec![0usize; d.n_topics()];
            for e in d.learning_events.iter().filter(|e| mask.learning_alive(e)) {
                for t in mask.item_topics(d.item(e.item)) {
                    counts[t.index()] += 1;
                }
            }
            let mut ranked: Vec<usize> = (0..d.n_topics()).filter(|&t| mask.topic[t]).collect();
            ranked.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
            for &t in ranked.iter().skip(rules.top_topics) {
                mask.topic[t] = false;
            }
            for (i, item) in d.items.iter().enumerate() {
                if mask.item[i] && !item.topics.is_empty() && mask.item_topics(item).next().is_none()
                {
                    mask.item[i] = false;
                }
            }
        }

        if rules.min_learning_events > 0 {
            let mut counts = vec![0usize; d.n_items()];
            for e in d.learning_events.iter().filter(|e| mask.learning_alive(e)) {
                counts[e.item.index()] += 1;
            }
            for (i, &n) in counts.iter().enumerate() {
                if n <= rules.min_learning_events {
                    mask.item[i] = false;
                }
            }
        }

        if rules.min_contributions > 0 || rules.min_active_months > 0 {
            let mut counts = vec![0usize; d.n_users()];
            let mut months: Vec<BTreeSet<i64>> = vec![BTreeSet::new(); d.n_users()];
            for c in d.contributions.iter().filter(|c| mask.contribution_alive(c)) {
                counts[c.user.index()] += 1;
                months[c.user.index()].insert(month_key(c.time));
            }
            for u in 0..d.n_users() {
                let enough = rules.min_contributions == 0 || counts[u] > rules.min_contributions;
                let spread = months[u].len() >= rules.min_active_months;
                if !(enough && spread) {
                    mask.user[u] = false;
                }
            }
        }

        if mask.size() == before {
            break;
        }
    }

    let remap = |keep: &[bool]| -> Vec<Option<u32>> {
        let mut next = 0u32;
        keep.iter()
            .map(|&k| {
                k.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let topic_map = remap(&mask.topic);
    let item_map = remap(&mask.item);
    let user_map = remap(&mask.user);

    let topics = d
        .topics
        .iter()
        .zip(&mask.topic)
        .filter(|(_, &k)| k)
        .map(|(t, _)| t.clone())
        .collect();
    let users = d
        .users
        .iter()
        .zip(&mask.user)
        .filter(|(_, &k)| k)
        .map(|(u, _)| u.clone())
        .collect();
    let items = d
        .items
        .iter()
        .zip(&mask.item)
        .filter(|(_, &k)| k)
        .map(|(item, _)| Item {
            name: item.name.clone(),
            topics: TopicSet::weighted(
                item.topics
                    .iter()
                    .filter_map(|(t, w)| topic_map[t.index()].map(|nt| (TopicId(nt), w))),
            ),
        })
        .collect();
    let learning: Vec<LearningEvent> = d
        .learning_events
        .iter()
        .filter(|e| mask.learning_alive(e))
        .map(|e| LearningEvent {
            user: UserId(user_map[e.user.index()].expect("alive user")),
            time: e.time,
            item: ItemId(item_map[e.item.index()].expect("alive item")),
        })
        .collect();
    let contributions: Vec<Contribution> = d
        .contributions
        .iter()
        .filter(|c| mask.contribution_alive(c))
        .map(|c| Contribution {
            user: UserId(user_map[c.user.index()].expect("alive user")),
            item: ItemId(item_map[c.item.index()].expect("alive item")),
            ..*c
        })
        .collect();

    if learning.is_empty() && contributions.is_empty() {
        return Err(Error::EmptyResult);
    }
    Ok(Dataset {
        topics,
        users,
        items,
        learning_events: learning,
        contributions,
        horizon: d.horizon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::fixtures::two_users;

    fn single_topic_items(n: usize) -> Vec<Item> {
        (0..n)
            .map(|i| Item {
                name: format!("q{i}"),
                topics: TopicSet::binary([TopicId(0)]),
            })
            .collect()
    }

    #[test]
    fn disabled_rules_are_identity() {
        let d = two_users();
        assert_eq!(filter_dataset(&d, &FilterConfig::disabled()).unwrap(), d);
    }

    #[test]
    fn item_with_exactly_threshold_learning_events_is_dropped() {
        // q0: 10 learning events, q1: 11.
        let mut learning = Vec::new();
        for i in 0..10 {
            learning.push(LearningEvent {
                user: UserId(0),
                time: i as f64,
                item: ItemId(0),
            });
        }
        for i in 0..11 {
            learning.push(LearningEvent {
                user: UserId(0),
                time: i as f64 + 0.5,
                item: ItemId(1),
            });
        }
        let d = Dataset::new(
            vec!["a".into()],
            vec!["u".into()],
            single_topic_items(2),
            learning,
            vec![],
            100.0,
        );
        let rules = FilterConfig {
            min_learning_events: 10,
            ..FilterConfig::disabled()
        };
        let f = filter_dataset(&d, &rules).unwrap();
        assert_eq!(f.items.len(), 1);
        assert_eq!(f.items[0].name, "q1");
        assert_eq!(f.learning_events.len(), 11);
    }

    #[test]
    fn user_active_in_too_few_months_is_dropped() {
        // 1970-01-01 is day 0. User 0: 25 contributions across Jan, Feb, Mar.
        // User 1: 25 contributions, one every 31 days -> 25 distinct months.
        let mut contributions = Vec::new();
        for i in 0..25 {
            contributions.push(Contribution {
                user: UserId(0),
                time: (i * 3) as f64,
                item: ItemId(0),
                score: 1.0,
            });
            contributions.push(Contribution {
                user: UserId(1),
                time: (i * 31) as f64 + 0.5,
                item: ItemId(0),
                score: 1.0,
            });
        }
        let months_u0: BTreeSet<i64> = (0..25).map(|i| month_key((i * 3) as f64)).collect();
        assert_eq!(months_u0.len(), 3);
        let d = Dataset::new(
            vec!["a".into()],
            vec!["u0".into(), "u1".into()],
            single_topic_items(1),
            vec![],
            contributions,
            1000.0,
        );
        let rules = FilterConfig {
            min_contributions: 20,
            min_active_months: 10,
            ..FilterConfig::disabled()
        };
        let f = filter_dataset(&d, &rules).unwrap();
        assert_eq!(f.users, vec!["u1".to_string()]);
        assert!(f.contributions.iter().all(|c| c.user == UserId(0)));
    }

    #[test]
    fn top_topics_keeps_busiest_and_restricts_item_topics() {
        let items = vec![
            Item {
                name: "q0".into(),
                topics: TopicSet::binary([TopicId(0), TopicId(1)]),
            },
            Item {
                name: "q1".into(),
                topics: TopicSet::binary([TopicId(1)]),
            },
        ];
        let learning = vec![
            LearningEvent {
                user: UserId(0),
                time: 0.0,
                item: ItemId(0),
            },
            LearningEvent {
                user: UserId(0),
                time: 1.0,
                item: ItemId(0),
            },
            LearningEvent {
                user: UserId(0),
                time: 2.0,
                item: ItemId(1),
            },
        ];
        let d = Dataset::new(
            vec!["a".into(), "b".into()],
            vec!["u".into()],
            items,
            learning,
            vec![],
            10.0,
        );
        let rules = FilterConfig {
            top_topics: 1,
            ..FilterConfig::disabled()
        };
        let f = filter_dataset(&d, &rules).unwrap();
        assert_eq!(f.topics, vec!["b".to_string()]);
        assert_eq!(f.items.len(), 2);
        assert_eq!(f.items[0].topics.len(), 1);
    }

    #[test]
    fn nothing_left_is_an_error() {
        let d = two_users();
        let rules = FilterConfig {
            min_learning_events: 100,
            ..FilterConfig::disabled()
        };
        assert!(matches!(filter_dataset(&d, &rules), Err(Error::EmptyResult)));
    }

    #[test]
    fn month_key_matches_calendar() {
        assert_eq!(month_key(0.0), month_key(30.9));
        assert_ne!(month_key(30.9), month_key(31.0));
    }
}
