//! Next-event prediction from a first-order transition model built over an
//! event stream.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::knowledge::Knowledge;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub confidence: f64,
}

/// Transition counts `from -> to` over consecutive labels.
pub fn transitions(labels: &[String]) -> BTreeMap<&str, BTreeMap<&str, u64>> {
    let mut m: BTreeMap<&str, BTreeMap<&str, u64>> = BTreeMap::new();
    for w in labels.windows(2) {
        *m.entry(&w[0]).or_default().entry(&w[1]).or_default() += 1;
    }
    m
}

/// Most frequent successor of the last context label, confidence = its share
/// of that label's transitions; ties go to the lexicographically smaller
/// label. An empty context predicts the stream's first label with full
/// confidence. `None` when the last label was never followed by anything.
pub fn predict_from(labels: &[String], context: &[String]) -> Option<Prediction> {
    let Some(last) = context.last() else {
        return labels.first().map(|l| Prediction {
            label: l.clone(),
            confidence: 1.0,
        });
    };
    let t = transitions(labels);
    let next = t.get(last.as_str())?;
    let total: u64 = next.values().sum();
    let (label, n) = next.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))?;
    Some(Prediction {
        label: (*label).to_owned(),
        confidence: *n as f64 / total as f64,
    })
}

impl Knowledge {
    pub fn predict(&self, stream: &str, context: &[String]) -> Result<Option<Prediction>> {
        let Some(events) = self.stream_events(stream)? else {
            return Ok(None);
        };
        let labels: Vec<String> = events.into_iter().map(|(_, _, l)| l).collect();
        Ok(predict_from(&labels, context))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn majority_successor() {
        let s = v(&["wake", "coffee", "work", "wake", "coffee", "gym", "wake", "coffee", "work"]);
        let p = predict_from(&s, &v(&["wake", "coffee"])).unwrap();
        assert_eq!(p.label, "work");
        assert!((p.confidence - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(predict_from(&s, &v(&["wake"])).unwrap().confidence, 1.0);
        assert_eq!(predict_from(&s, &[]).unwrap().label, "wake");
        assert!(predict_from(&s, &v(&["sleep"])).is_none());
    }

    #[test]
    fn ties_break_lexicographically() {
        let s = v(&["a", "c", "a", "b"]);
        assert_eq!(predict_from(&s, &v(&["a"])).unwrap().label, "b");
    }
}
