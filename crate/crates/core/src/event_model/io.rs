//! JSON-lines event logs and item catalogs.
//!
//! Event log, one record per line:
//!
//! ```text
//! {"type":"learn","user":"u1","time":12.5,"item":"q9"}
//! {"type":"contribute","user":"u2","time":13.0,"item":"q9","score":4}
//! ```
//!
//! Item catalog: `{"item":"q9","topics":["python","pandas"]}`.
//!
//! Scores are expected to be windowed by the producer (for example, upvotes
//! received within a week of posting); this crate takes them as given.
//! A dataset directory holds `items.jsonl`, `events.jsonl` and an optional
//! `meta.json` with `{"horizon_days": T}`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Contribution, Dataset, Item, ItemId, LearningEvent, TopicId, TopicSet, UserId};
use crate::error::{Error, Result};

pub const ITEMS_FILE: &str = "items.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const META_FILE: &str = "meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum EventRecord {
    Learn {
        user: String,
        time: f64,
        item: String,
    },
    Contribute {
        user: String,
        time: f64,
        item: String,
        score: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogRecord {
    pub item: String,
    pub topics: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub horizon_days: f64,
}

fn parse_lines<T: for<'de> Deserialize<'de>>(text: &str, context: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Parse {
            context: context.to_string(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn parse_events(text: &str) -> Result<Vec<EventRecord>> {
    parse_lines(text, EVENTS_FILE)
}

pub fn parse_catalog(text: &str) -> Result<Vec<CatalogRecord>> {
    parse_lines(text, ITEMS_FILE)
}

/// Intern names and build a dataset.
///
/// Topics are numbered in sorted name order, users in sorted name order and
/// items in catalog order. Events naming an item absent from the catalog get
/// an id past the catalog, which [`super::validate_dataset`] reports as
/// dangling. Without an explicit horizon, `T` is the first whole day after
/// the last event.
pub fn assemble(
    catalog: &[CatalogRecord],
    events: &[EventRecord],
    horizon: Option<f64>,
) -> Result<Dataset> {
    let topic_names: BTreeSet<&str> = catalog
        .iter()
        .flat_map(|r| r.topics.iter().map(String::as_str))
        .collect();
    let topics: Vec<String> = topic_names.iter().map(|s| s.to_string()).collect();
    let topic_id: HashMap<&str, TopicId> = topic_names
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, TopicId(i as u32)))
        .collect();

    let mut item_id: HashMap<&str, ItemId> = HashMap::new();
    let mut items = Vec::with_capacity(catalog.len());
    for (line, rec) in catalog.iter().enumerate() {
        if item_id
            .insert(rec.item.as_str(), ItemId(items.len() as u32))
            .is_some()
        {
            return Err(Error::Parse {
                context: ITEMS_FILE.into(),
                line: line + 1,
                message: format!("duplicate item {:?}", rec.item),
            });
        }
        items.push(Item {
            name: rec.item.clone(),
            topics: TopicSet::binary(rec.topics.iter().map(|t| topic_id[t.as_str()])),
        });
    }

    let user_names: BTreeSet<&str> = events
        .iter()
        .map(|e| match e {
            EventRecord::Learn { user, .. } | EventRecord::Contribute { user, .. } => {
                user.as_str()
            }
        })
        .collect();
    let users: Vec<String> = user_names.iter().map(|s| s.to_string()).collect();
    let user_id: HashMap<&str, UserId> = user_names
        .iter()
        .enumerate()
        .map(|(i, &u)| (u, UserId(i as u32)))
        .collect();

    for e in events {
        let (EventRecord::Learn { item, .. } | EventRecord::Contribute { item, .. }) = e;
        if !item_id.contains_key(item.as_str()) {
            let next = ItemId(item_id.len() as u32);
            item_id.insert(item.as_str(), next);
        }
    }
    let resolve_item = |name: &str| item_id[name];

    let mut learning = Vec::new();
    let mut contributions = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for e in events {
        match e {
            EventRecord::Learn { user, time, item } => {
                learning.push(LearningEvent {
                    user: user_id[user.as_str()],
                    time: *time,
                    item: resolve_item(item),
                });
                last = last.max(*time);
            }
            EventRecord::Contribute {
                user,
                time,
                item,
                score,
            } => {
                contributions.push(Contribution {
                    user: user_id[user.as_str()],
                    time: *time,
                    item: resolve_item(item),
                    score: *score,
                });
                last = last.max(*time);
            }
        }
    }
    let horizon = horizon.unwrap_or_else(|| {
        if last.is_finite() {
            last.floor() + 1.0
        } else {
            1.0
        }
    });
    Ok(Dataset::new(
        topics,
        users,
        items,
        learning,
        contributions,
        horizon,
    ))
}

pub fn catalog_records(d: &Dataset) -> Vec<CatalogRecord> {
    d.items
        .iter()
        .map(|item| CatalogRecord {
            item: item.name.clone(),
            topics: item
                .topics
                .topics()
                .map(|t| d.topics[t.index()].clone())
                .collect(),
        })
        .collect()
}

/// Events in time order, learning before contribution at equal times.
pub fn event_records(d: &Dataset) -> Vec<EventRecord> {
    let mut out = Vec::with_capacity(d.learning_events.len() + d.contributions.len());
    let (mut i, mut j) = (0, 0);
    while i < d.learning_events.len() || j < d.contributions.len() {
        let take_learn = match (d.learning_events.get(i), d.contributions.get(j)) {
            (Some(l), Some(c)) => l.time <= c.time,
            (Some(_), None) => true,
            _ => false,
        };
        if take_learn {
            let e = &d.learning_events[i];
            out.push(EventRecord::Learn {
                user: d.users[e.user.index()].clone(),
                time: e.time,
                item: d.items[e.item.index()].name.clone(),
            });
            i += 1;
        } else {
            let c = &d.contributions[j];
            out.push(EventRecord::Contribute {
                user: d.users[c.user.index()].clone(),
                time: c.time,
                item: d.items[c.item.index()].name.clone(),
                score: c.score,
            });
            j += 1;
        }
    }
    out
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Write a dataset directory. Only catalog items are written; the dataset is
/// expected to validate.
pub fn write_dataset(dir: &Path, d: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_lines(&dir.join(ITEMS_FILE), &catalog_records(d))?;
    write_lines(&dir.join(EVENTS_FILE), &event_records(d))?;
    let meta = DatasetMeta {
        horizon_days: d.horizon,
    };
    let path = dir.join(META_FILE);
    fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| Error::io(&path, e))
}

/// Read a dataset directory. Users missing from the log (possible after a
/// filtered write) simply do not appear.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let catalog = parse_catalog(&read_text(&dir.join(ITEMS_FILE))?)?;
    let events = parse_events(&read_text(&dir.join(EVENTS_FILE))?)?;
    let meta_path = dir.join(META_FILE);
    let horizon = if meta_path.exists() {
        let meta: DatasetMeta = serde_json::from_str(&read_text(&meta_path)?)?;
        Some(meta.horizon_days)
    } else {
        None
    };
    assemble(&catalog, &events, horizon)
}

/// Write only events (for held-out test data) next to the training catalog.
pub fn write_test_set(dir: &Path, train: &Dataset, test: &super::TestSet) -> Result<()> {
    let d = Dataset::new(
        train.topics.clone(),
        train.users.clone(),
        train.items.clone(),
        test.learning_events.clone(),
        test.contributions.clone(),
        train.horizon,
    );
    write_dataset(dir, &d)
}

/// Read a test directory written by [`write_test_set`], re-interning names
/// against the training dataset so ids line up.
pub fn read_test_set(dir: &Path, train: &Dataset) -> Result<super::TestSet> {
    let events = parse_events(&read_text(&dir.join(EVENTS_FILE))?)?;
    let user_id: HashMap<&str, UserId> = train
        .users
        .iter()
        .enumerate()
        .map(|(i, u)| (u.as_str(), UserId(i as u32)))
        .collect();
    let item_id: HashMap<&str, ItemId> = train
        .items
        .iter()
        .enumerate()
        .map(|(i, q)| (q.name.as_str(), ItemId(i as u32)))
        .collect();
    let lookup = |user: &str, item: &str, line: usize| -> Result<(UserId, ItemId)> {
        match (user_id.get(user), item_id.get(item)) {
            (Some(&u), Some(&q)) => Ok((u, q)),
            _ => Err(Error::Parse {
                context: EVENTS_FILE.into(),
                line,
                message: format!("test event ({user}, {item}) not in training dataset"),
            }),
        }
    };
    let mut test = super::TestSet::default();
    for (n, e) in events.iter().enumerate() {
        match e {
            EventRecord::Learn { user, time, item } => {
                let (user, item) = lookup(user, item, n + 1)?;
                test.learning_events.push(LearningEvent {
                    user,
                    time: *time,
                    item,
                });
            }
            EventRecord::Contribute {
                user,
                time,
                item,
                score,
            } => {
                let (user, item) = lookup(user, item, n + 1)?;
                test.contributions.push(Contribution {
                    user,
                    time: *time,
                    item,
                    score: *score,
                });
            }
        }
    }
    test.learning_events.sort_by(|a, b| a.time.total_cmp(&b.time));
    test.contributions.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(test)
}
