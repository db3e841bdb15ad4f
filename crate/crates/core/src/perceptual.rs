//! Listener responses: unfolding into signed similarity scores, pooling and
//! listener sub-group selection.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_trial_set, Trial, TrialSet};
use crate::scores::ScoreSet;

/// Presentation order of a stimulus pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Order {
    AB,
    BA,
}

impl fmt::Display for Order {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Order::AB => "AB",
            Order::BA => "BA",
        })
    }
}

impl FromStr for Order {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "AB" => Ok(Order::AB),
            "BA" => Ok(Order::BA),
            other => Err(format!("unknown order `{other}` (expected AB|BA)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Same,
    Different,
}

impl Decision {
    pub fn sign(self) -> i32 {
        match self {
            Decision::Same => 1,
            Decision::Different => -1,
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Same => "same",
            Decision::Different => "diff",
        })
    }
}

impl FromStr for Decision {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "same" => Ok(Decision::Same),
            "diff" => Ok(Decision::Different),
            other => Err(format!("unknown decision `{other}` (expected same|diff)")),
        }
    }
}

/// One same/different judgement with a 0–5 confidence rating.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerceptualResponse {
    pub listener_id: String,
    pub trial_id: String,
    pub order: Order,
    pub decision: Decision,
    pub confidence: u8,
    pub timestamp: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListenerProfile {
    pub listener_id: String,
    pub attributes: BTreeMap<String, String>,
}

/// Signed similarity: confidence times +1 for "same", −1 for "different".
pub fn unfold(r: &PerceptualResponse) -> f64 {
    (r.decision.sign() * i32::from(r.confidence)) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PoolingMode {
    /// Every (listener, trial, order) response is its own evaluation unit.
    #[default]
    PerResponse,
    /// The mean unfolded score of each trial is one unit.
    PerPairMean,
}

impl FromStr for PoolingMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "per-response" => Ok(PoolingMode::PerResponse),
            "per-pair-mean" => Ok(PoolingMode::PerPairMean),
            other => Err(format!("unknown pooling mode `{other}`")),
        }
    }
}

/// Scores of pooled responses with the key describing their evaluation units.
#[derive(Debug, Clone, PartialEq)]
pub struct Pooled {
    pub mode: PoolingMode,
    pub scores: ScoreSet,
    pub key: TrialSet,
}

/// Evaluation-unit id of a single response.
pub fn unit_id(r: &PerceptualResponse) -> String {
    format!("{}:{}:{}", r.trial_id, r.listener_id, r.order)
}

pub fn pool_responses(
    responses: &[PerceptualResponse],
    key: &TrialSet,
    mode: PoolingMode,
    system_id: &str,
) -> Result<Pooled> {
    for r in responses {
        if !key.contains(&r.trial_id) {
            return Err(Error::UnknownTrialId(r.trial_id.clone()));
        }
    }
    let mut scores = ScoreSet::new(system_id);
    match mode {
        PoolingMode::PerResponse => {
            let mut units = Vec::with_capacity(responses.len());
            for r in responses {
                let id = unit_id(r);
                let trial = key.get(&r.trial_id).expect("checked above");
                units.push(Trial {
                    trial_id: id.clone(),
                    ..trial.clone()
                });
                if scores.scores.insert(id.clone(), unfold(r)).is_some() {
                    return Err(Error::DuplicateResponse {
                        listener: r.listener_id.clone(),
                        trial: r.trial_id.clone(),
                        order: r.order.to_string(),
                    });
                }
            }
            Ok(Pooled {
                mode,
                scores,
                key: validate_trial_set(units)?,
            })
        }
        PoolingMode::PerPairMean => {
            let mut sums: HashMap<&str, (f64, usize)> = HashMap::new();
            for r in responses {
                let e = sums.entry(r.trial_id.as_str()).or_insert((0.0, 0));
                e.0 += unfold(r);
                e.1 += 1;
            }
            let sub = key.filter(|t| sums.contains_key(t.trial_id.as_str()));
            for t in &sub {
                let (s, n) = sums[t.trial_id.as_str()];
                scores.scores.insert(t.trial_id.clone(), s / n as f64);
            }
            Ok(Pooled {
                mode,
                scores,
                key: sub,
            })
        }
    }
}

/// Responses of listeners matching a predicate on one roster attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub responses: Vec<PerceptualResponse>,
    /// Set when no roster entry carries the attribute at all.
    pub missing_attribute: bool,
}

pub fn filter_responses(
    responses: &[PerceptualResponse],
    roster: &[ListenerProfile],
    attribute: &str,
    predicate: impl Fn(&str) -> bool,
) -> Result<Filtered> {
    let by_id: HashMap<&str, &ListenerProfile> =
        roster.iter().map(|p| (p.listener_id.as_str(), p)).collect();
    for r in responses {
        if !by_id.contains_key(r.listener_id.as_str()) {
            return Err(Error::UnknownListener(r.listener_id.clone()));
        }
    }
    let missing_attribute = !roster.iter().any(|p| p.attributes.contains_key(attribute));
    let responses = responses
        .iter()
        .filter(|r| {
            by_id[r.listener_id.as_str()]
                .attributes
                .get(attribute)
                .is_some_and(|v| predicate(v))
        })
        .cloned()
        .collect();
    Ok(Filtered {
        responses,
        missing_attribute,
    })
}

/// Correctness of each response's hard decision, keyed by unit id.
///
/// Taken from the decision field rather than the unfolded score, which is
/// zero for both decisions at confidence 0.
pub fn response_correctness(
    responses: &[PerceptualResponse],
    key: &TrialSet,
) -> Result<IndexMap<String, bool>> {
    responses
        .iter()
        .map(|r| {
            let t = key
                .get(&r.trial_id)
                .ok_or_else(|| Error::UnknownTrialId(r.trial_id.clone()))?;
            Ok((unit_id(r), (r.decision == Decision::Same) == t.is_target()))
        })
        .collect()
}
