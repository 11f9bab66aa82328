use std::collections::BTreeMap;

use serde::Serialize;

/// One scored prediction as seen by the consistency metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupMember {
    /// Key shared by paraphrases: database id plus canonical gold tree.
    pub key: String,
    /// Canonical form of the prediction; `None` when decoding failed.
    pub predicted: Option<String>,
    pub correct: bool,
}

/// Agreement across paraphrases of one gold query. The rates are `None`
/// when no group has two or more members.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Consistency {
    pub groups: usize,
    pub exact_match: Option<f64>,
    pub correctness: Option<f64>,
}

/// Averages, over groups with at least two members, whether all predictions
/// are canonically equal and whether all verdicts agree.
pub fn consistency(members: &[GroupMember]) -> Consistency {
    let mut groups: BTreeMap<&str, Vec<&GroupMember>> = BTreeMap::new();
    for m in members {
        groups.entry(&m.key).or_default().push(m);
    }
    let multi: Vec<&Vec<&GroupMember>> = groups.values().filter(|g| g.len() >= 2).collect();
    if multi.is_empty() {
        return Consistency {
            groups: 0,
            exact_match: None,
            correctness: None,
        };
    }
    let mut same_pred = 0usize;
    let mut same_verdict = 0usize;
    for g in &multi {
        let first = &g[0].predicted;
        if first.is_some() && g.iter().all(|m| &m.predicted == first) {
            same_pred += 1;
        }
        if g.iter().all(|m| m.correct == g[0].correct) {
            same_verdict += 1;
        }
    }
    let n = multi.len() as f64;
    Consistency {
        groups: multi.len(),
        exact_match: Some(same_pred as f64 / n),
        correctness: Some(same_verdict as f64 / n),
    }
}
