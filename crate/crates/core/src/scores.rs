//! Per-trial score collections and their alignment with a trial key.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::{Trial, TrialSet};

/// Raw similarity scores of one system, keyed by trial (or evaluation unit) id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub system_id: String,
    pub scores: IndexMap<String, f64>,
}

/// Calibrated natural-log likelihood ratios of one system.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LlrSet {
    pub system_id: String,
    pub llrs: IndexMap<String, f64>,
}

/// Anything that maps trial ids to real values.
pub trait Scored {
    fn system_id(&self) -> &str;
    fn values(&self) -> &IndexMap<String, f64>;
}

impl Scored for ScoreSet {
    fn system_id(&self) -> &str {
        &self.system_id
    }
    fn values(&self) -> &IndexMap<String, f64> {
        &self.scores
    }
}

impl Scored for LlrSet {
    fn system_id(&self) -> &str {
        &self.system_id
    }
    fn values(&self) -> &IndexMap<String, f64> {
        &self.llrs
    }
}

impl ScoreSet {
    pub fn new(system_id: impl Into<String>) -> Self {
        ScoreSet {
            system_id: system_id.into(),
            scores: IndexMap::new(),
        }
    }

    /// Reinterprets the scores as LLRs without transforming them.
    pub fn into_llrs(self) -> LlrSet {
        LlrSet {
            system_id: self.system_id,
            llrs: self.scores,
        }
    }
}

impl LlrSet {
    pub fn new(system_id: impl Into<String>) -> Self {
        LlrSet {
            system_id: system_id.into(),
            llrs: IndexMap::new(),
        }
    }

    pub fn into_scores(self) -> ScoreSet {
        ScoreSet {
            system_id: self.system_id,
            scores: self.llrs,
        }
    }
}

/// Verifies that `values` covers exactly the trials of `key`.
pub fn check_coverage(values: &IndexMap<String, f64>, key: &TrialSet) -> Result<()> {
    for t in key {
        if !values.contains_key(&t.trial_id) {
            return Err(Error::CoverageMismatch(format!(
                "no score for trial `{}`",
                t.trial_id
            )));
        }
    }
    if values.len() != key.len() {
        let extra = values.keys().find(|id| !key.contains(id));
        if let Some(id) = extra {
            return Err(Error::CoverageMismatch(format!(
                "score for trial `{id}` which is not in the key"
            )));
        }
    }
    Ok(())
}

/// Scores split by class, each in key order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub tar: Vec<f64>,
    pub non: Vec<f64>,
}

impl Split {
    pub fn from_key(values: &IndexMap<String, f64>, key: &TrialSet) -> Result<Split> {
        check_coverage(values, key)?;
        let mut split = Split::default();
        for t in key {
            let v = values[t.trial_id.as_str()];
            if t.is_target() {
                split.tar.push(v);
            } else {
                split.non.push(v);
            }
        }
        Ok(split)
    }

    /// Like [`Split::from_key`] but also requires both classes to be present.
    pub fn nondegenerate(values: &IndexMap<String, f64>, key: &TrialSet) -> Result<Split> {
        key.require_both_classes()?;
        Split::from_key(values, key)
    }

    pub fn check_nondegenerate(&self) -> Result<()> {
        if self.tar.is_empty() || self.non.is_empty() {
            return Err(Error::DegenerateKey);
        }
        Ok(())
    }
}

/// Values of `values` in key order, paired with each trial.
pub fn aligned<'a>(
    values: &IndexMap<String, f64>,
    key: &'a TrialSet,
) -> Result<Vec<(&'a Trial, f64)>> {
    check_coverage(values, key)?;
    Ok(key
        .iter()
        .map(|t| (t, values[t.trial_id.as_str()]))
        .collect())
}

/// Restricts a score map to the trials of `key` (used for per-condition views).
pub fn restrict(values: &IndexMap<String, f64>, key: &TrialSet) -> IndexMap<String, f64> {
    key.iter()
        .filter_map(|t| values.get(&t.trial_id).map(|&v| (t.trial_id.clone(), v)))
        .collect()
}
