use serde::Serialize;

use super::Dataset;

/// Problems found in a raw dataset, grouped by category.
///
/// A dataset is accepted iff every list is empty.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub dangling_ids: Vec<String>,
    pub out_of_window: Vec<String>,
    pub unsorted_events: Vec<String>,
    pub negative_scores: Vec<String>,
    pub empty_topic_sets: Vec<String>,
    pub invalid_weights: Vec<String>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.error_count() == 0
    }

    pub fn error_count(&self) -> usize {
        self.dangling_ids.len()
            + self.out_of_window.len()
            + self.unsorted_events.len()
            + self.negative_scores.len()
            + self.empty_topic_sets.len()
            + self.invalid_weights.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

pub fn validate_dataset(d: &Dataset) -> ValidationReport {
    let mut r = ValidationReport::default();
    let horizon = d.horizon;
    if !(horizon.is_finite() && horizon > 0.0) {
        r.out_of_window
            .push(format!("horizon {horizon} is not a positive finite number"));
    }
    let in_window = |t: f64| t.is_finite() && t >= 0.0 && t < horizon;

    for (i, item) in d.items.iter().enumerate() {
        if item.topics.is_empty() {
            r.empty_topic_sets
                .push(format!("item {} ({i}) has no topics", item.name));
        } else if !item.topics.is_well_formed() {
            r.invalid_weights.push(format!(
                "item {} ({i}) has a negative or non-finite topic weight",
                item.name
            ));
        }
        for t in item.topics.topics() {
            if t.index() >= d.n_topics() {
                r.dangling_ids
                    .push(format!("item {} ({i}) references unknown topic {}", item.name, t.0));
            }
        }
    }

    let mut prev = f64::NEG_INFINITY;
    for (i, e) in d.learning_events.iter().enumerate() {
        if e.user.index() >= d.n_users() {
            r.dangling_ids
                .push(format!("learning event {i} references unknown user {}", e.user.0));
        }
        if e.item.index() >= d.n_items() {
            r.dangling_ids
                .push(format!("learning event {i} references unknown item {}", e.item.0));
        }
        if !in_window(e.time) {
            r.out_of_window.push(format!(
                "learning event {i} at time {} outside [0, {horizon})",
                e.time
            ));
        }
        if e.time < prev {
            r.unsorted_events
                .push(format!("learning event {i} at time {} precedes {prev}", e.time));
        }
        prev = prev.max(e.time);
    }

    let mut prev = f64::NEG_INFINITY;
    for (i, c) in d.contributions.iter().enumerate() {
        if c.user.index() >= d.n_users() {
            r.dangling_ids
                .push(format!("contribution {i} references unknown user {}", c.user.0));
        }
        if c.item.index() >= d.n_items() {
            r.dangling_ids
                .push(format!("contribution {i} references unknown item {}", c.item.0));
        }
        if !in_window(c.time) {
            r.out_of_window.push(format!(
                "contribution {i} at time {} outside [0, {horizon})",
                c.time
            ));
        }
        if c.time < prev {
            r.unsorted_events
                .push(format!("contribution {i} at time {} precedes {prev}", c.time));
        }
        prev = prev.max(c.time);
        if !(c.score >= 0.0 && c.score.is_finite()) {
            r.negative_scores
                .push(format!("contribution {i} has score {}", c.score));
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::fixtures::two_users;
    use crate::event_model::{ItemId, TopicSet};

    #[test]
    fn well_formed_fixture_is_clean() {
        let r = validate_dataset(&two_users());
        assert!(r.is_empty(), "{r:?}");
    }

    #[test]
    fn unknown_item_is_one_dangling_error() {
        let mut d = two_users();
        d.contributions[1].item = ItemId(99);
        let r = validate_dataset(&d);
        assert_eq!(r.error_count(), 1);
        assert_eq!(r.dangling_ids.len(), 1);
    }

    #[test]
    fn learning_after_horizon_is_out_of_window() {
        let mut d = two_users();
        d.learning_events[2].time = 11.0;
        let r = validate_dataset(&d);
        assert_eq!(r.error_count(), 1);
        assert_eq!(r.out_of_window.len(), 1);
    }

    #[test]
    fn reports_each_category() {
        let mut d = two_users();
        d.contributions[0].score = -1.0;
        d.contributions.swap(1, 2);
        d.items[0].topics = TopicSet::default();
        let r = validate_dataset(&d);
        assert_eq!(r.negative_scores.len(), 1);
        assert_eq!(r.unsorted_events.len(), 1);
        assert_eq!(r.empty_topic_sets.len(), 1);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert!(json["dangling_ids"].as_array().unwrap().is_empty());
        assert_eq!(json["negative_scores"].as_array().unwrap().len(), 1);
    }
}
