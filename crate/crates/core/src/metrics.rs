//! Discrimination and calibration metrics.
//!
//! All LLRs are natural-log; costs are reported in bits. The slice-level
//! functions (`*_split`) take target and non-target values separately and are
//! what the key-based wrappers delegate to.

use std::cmp::Ordering;
use std::f64::consts::LN_2;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Condition, TrialSet};
use crate::scores::{Scored, Split};

/// `log2(1 + e^x)` without overflow for large `x`.
pub fn log2_1p_exp(x: f64) -> f64 {
    if x > 36.0 {
        (x + (-x).exp()) / LN_2
    } else {
        x.exp().ln_1p() / LN_2
    }
}

/// Logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Cllr of target and non-target LLRs.
pub fn cllr_split(tar: &[f64], non: &[f64]) -> Result<f64> {
    if tar.is_empty() || non.is_empty() {
        return Err(Error::DegenerateKey);
    }
    let c_tar = tar.iter().map(|&l| log2_1p_exp(-l)).sum::<f64>() / tar.len() as f64;
    let c_non = non.iter().map(|&l| log2_1p_exp(l)).sum::<f64>() / non.len() as f64;
    Ok(0.5 * (c_tar + c_non))
}

/// Log-likelihood-ratio cost in bits.
pub fn cllr(llrs: &impl Scored, key: &TrialSet) -> Result<f64> {
    let s = Split::nondegenerate(llrs.values(), key)?;
    cllr_split(&s.tar, &s.non)
}

/// One pooled block of the isotonic fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PavBlock {
    /// Lowest score in the block.
    pub lo: f64,
    /// Highest score in the block.
    pub hi: f64,
    /// Fraction of targets in the block (unclamped).
    pub posterior: f64,
    pub n_tar: usize,
    pub n_non: usize,
}

impl PavBlock {
    fn count(&self) -> usize {
        self.n_tar + self.n_non
    }

    // a.posterior > b.posterior, in exact integer arithmetic
    fn exceeds(&self, other: &PavBlock) -> bool {
        (self.n_tar as u128) * (other.count() as u128)
            > (other.n_tar as u128) * (self.count() as u128)
    }

    fn merge(&mut self, other: &PavBlock) {
        self.hi = other.hi;
        self.n_tar += other.n_tar;
        self.n_non += other.n_non;
        self.posterior = self.n_tar as f64 / self.count() as f64;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PavResult {
    /// Blocks in ascending score order with nondecreasing posteriors.
    pub blocks: Vec<PavBlock>,
    /// Optimal monotone LLR of every evaluation unit, in key order.
    pub optimal_llrs: IndexMap<String, f64>,
}

/// Isotonic fit of the target indicator against the scores.
///
/// Exact score ties form a single initial block, so the result does not
/// depend on input order. Returns the blocks and, for every input position
/// (targets first, then non-targets), the index of its block.
pub fn pav_split(tar: &[f64], non: &[f64]) -> (Vec<PavBlock>, Vec<usize>) {
    let mut units: Vec<(f64, bool, usize)> = tar
        .iter()
        .map(|&s| (s, true))
        .chain(non.iter().map(|&s| (s, false)))
        .enumerate()
        .map(|(i, (s, t))| (s, t, i))
        .collect();
    units.sort_by(|a, b| a.0.total_cmp(&b.0));

    // initial blocks from exact ties; remember each block's unit range
    let mut blocks: Vec<PavBlock> = Vec::new();
    let mut ends: Vec<usize> = Vec::new();
    for (j, &(s, is_tar, _)) in units.iter().enumerate() {
        let tie = blocks.last().is_some_and(|b| b.hi.total_cmp(&s) == Ordering::Equal);
        if !tie {
            blocks.push(PavBlock {
                lo: s,
                hi: s,
                posterior: 0.0,
                n_tar: 0,
                n_non: 0,
            });
            ends.push(j);
        }
        let b = blocks.last_mut().unwrap();
        if is_tar {
            b.n_tar += 1;
        } else {
            b.n_non += 1;
        }
        *ends.last_mut().unwrap() = j + 1;
    }
    for b in &mut blocks {
        b.posterior = b.n_tar as f64 / b.count() as f64;
    }

    let mut stack: Vec<PavBlock> = Vec::with_capacity(blocks.len());
    let mut stack_ends: Vec<usize> = Vec::with_capacity(blocks.len());
    for (b, end) in blocks.into_iter().zip(ends) {
        stack.push(b);
        stack_ends.push(end);
        while stack.len() >= 2 {
            let n = stack.len();
            if stack[n - 2].exceeds(&stack[n - 1]) {
                let top = stack.pop().unwrap();
                let top_end = stack_ends.pop().unwrap();
                stack.last_mut().unwrap().merge(&top);
                *stack_ends.last_mut().unwrap() = top_end;
            } else {
                break;
            }
        }
    }

    let mut block_of = vec![0usize; units.len()];
    let mut start = 0;
    for (bi, &end) in stack_ends.iter().enumerate() {
        for u in &units[start..end] {
            block_of[u.2] = bi;
        }
        start = end;
    }
    (stack, block_of)
}

/// Optimal monotone LLRs for each input (targets first, then non-targets).
///
/// The block posterior log-odds minus the empirical prior log-odds. Pure
/// blocks map to ±∞; they hold only units of the matching class, so their
/// cost is exactly zero and the fit stays the minimum over monotone maps.
pub fn optimal_llrs_split(tar: &[f64], non: &[f64]) -> Result<(Vec<PavBlock>, Vec<f64>)> {
    if tar.is_empty() || non.is_empty() {
        return Err(Error::DegenerateKey);
    }
    let n = (tar.len() + non.len()) as f64;
    let prior_logit = logit(tar.len() as f64 / n);
    let (blocks, block_of) = pav_split(tar, non);
    let block_llr: Vec<f64> = blocks
        .iter()
        .map(|b| match (b.n_tar, b.n_non) {
            (_, 0) => f64::INFINITY,
            (0, _) => f64::NEG_INFINITY,
            (t, m) => (t as f64 / m as f64).ln() - prior_logit,
        })
        .collect();
    let llrs = block_of.iter().map(|&bi| block_llr[bi]).collect();
    Ok((blocks, llrs))
}

pub fn min_cllr_split(tar: &[f64], non: &[f64]) -> Result<f64> {
    let (_, llrs) = optimal_llrs_split(tar, non)?;
    let (t, n) = llrs.split_at(tar.len());
    cllr_split(t, n)
}

/// Pool-adjacent-violators fit over a key.
pub fn pav(scores: &impl Scored, key: &TrialSet) -> Result<PavResult> {
    let split = Split::nondegenerate(scores.values(), key)?;
    let (blocks, llrs) = optimal_llrs_split(&split.tar, &split.non)?;
    let (mut it_tar, mut it_non) = (0, split.tar.len());
    let mut optimal_llrs = IndexMap::with_capacity(key.len());
    for t in key {
        let v = if t.is_target() {
            it_tar += 1;
            llrs[it_tar - 1]
        } else {
            it_non += 1;
            llrs[it_non - 1]
        };
        optimal_llrs.insert(t.trial_id.clone(), v);
    }
    Ok(PavResult {
        blocks,
        optimal_llrs,
    })
}

/// Cllr after optimal monotone recalibration.
pub fn min_cllr(llrs: &impl Scored, key: &TrialSet) -> Result<f64> {
    let s = Split::nondegenerate(llrs.values(), key)?;
    min_cllr_split(&s.tar, &s.non)
}

/// Convex hull of the ROC in the (p_fa, p_miss) plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rocch {
    /// From (0, 1) to (1, 0); p_fa nondecreasing, p_miss nonincreasing.
    pub vertices: Vec<(f64, f64)>,
}

impl Rocch {
    /// Intersection of the hull with the diagonal p_fa == p_miss.
    pub fn eer(&self) -> f64 {
        for w in self.vertices.windows(2) {
            let (x1, y1) = w[0];
            let (x2, y2) = w[1];
            let d1 = y1 - x1;
            let d2 = y2 - x2;
            if d1 >= 0.0 && d2 <= 0.0 {
                if d1 == d2 {
                    return x1;
                }
                let t = d1 / (d1 - d2);
                return x1 + t * (x2 - x1);
            }
        }
        // unreachable for a hull from (0,1) to (1,0)
        0.5
    }
}

pub fn rocch_split(tar: &[f64], non: &[f64]) -> Result<Rocch> {
    if tar.is_empty() || non.is_empty() {
        return Err(Error::DegenerateKey);
    }
    let (blocks, _) = pav_split(tar, non);
    let (n_tar, n_non) = (tar.len(), non.len());
    let mut vertices = vec![(0.0, 1.0)];
    let (mut acc_tar, mut acc_non) = (0usize, 0usize);
    for b in blocks.iter().rev() {
        acc_tar += b.n_tar;
        acc_non += b.n_non;
        let v = (
            acc_non as f64 / n_non as f64,
            (n_tar - acc_tar) as f64 / n_tar as f64,
        );
        if vertices.last() != Some(&v) {
            vertices.push(v);
        }
    }
    if vertices.last() != Some(&(1.0, 0.0)) {
        vertices.push((1.0, 0.0));
    }
    Ok(Rocch { vertices })
}

pub fn rocch(scores: &impl Scored, key: &TrialSet) -> Result<Rocch> {
    let s = Split::nondegenerate(scores.values(), key)?;
    rocch_split(&s.tar, &s.non)
}

pub fn eer_rocch_split(tar: &[f64], non: &[f64]) -> Result<f64> {
    Ok(rocch_split(tar, non)?.eer())
}

/// Equal error rate from the ROC convex hull.
pub fn eer_rocch(scores: &impl Scored, key: &TrialSet) -> Result<f64> {
    Ok(rocch(scores, key)?.eer())
}

/// Threshold-sweep EER, kept independent of the PAV/hull route.
///
/// Thresholds sit between consecutive distinct scores plus ±∞. A unit is
/// accepted when its score is ≥ the threshold.
pub fn eer_naive_split(tar: &[f64], non: &[f64]) -> Result<f64> {
    if tar.is_empty() || non.is_empty() {
        return Err(Error::DegenerateKey);
    }
    let mut t = tar.to_vec();
    let mut n = non.to_vec();
    t.sort_by(f64::total_cmp);
    n.sort_by(f64::total_cmp);
    let mut all: Vec<f64> = t.iter().chain(n.iter()).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();

    let (nt, nn) = (t.len() as f64, n.len() as f64);
    // operating point for a threshold just above `v` (None = -inf)
    let point = |v: Option<f64>| -> (f64, f64) {
        match v {
            None => (0.0, 1.0),
            Some(v) => {
                let miss = t.partition_point(|&x| x <= v) as f64 / nt;
                let fa = (n.len() - n.partition_point(|&x| x <= v)) as f64 / nn;
                (miss, fa)
            }
        }
    };

    let mut prev = point(None);
    for &v in &all {
        let cur = point(Some(v));
        let d = cur.0 - cur.1;
        if d >= 0.0 {
            if d == 0.0 {
                return Ok(cur.0);
            }
            let d_prev = prev.0 - prev.1;
            let w = -d_prev / (d - d_prev);
            return Ok(prev.0 + w * (cur.0 - prev.0));
        }
        prev = cur;
    }
    // the +inf threshold always lands here via the largest score
    Ok(prev.0)
}

pub fn eer_naive(scores: &impl Scored, key: &TrialSet) -> Result<f64> {
    let s = Split::nondegenerate(scores.values(), key)?;
    eer_naive_split(&s.tar, &s.non)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n: usize,
    pub mean: f64,
    /// Population variance (denominator n).
    pub variance: f64,
    pub bin_width: f64,
    pub histogram: Vec<HistogramBin>,
}

/// Mean, population variance and a histogram aligned to multiples of `bin_width`.
pub fn distribution_summary(values: &[f64], bin_width: f64) -> Result<DistributionSummary> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::InvalidParams(format!("bin width {bin_width} must be positive")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParams("non-finite value".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;

    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k0 = (lo / bin_width).floor() as i64;
    let k1 = (hi / bin_width).floor() as i64;
    let mut histogram: Vec<HistogramBin> = (k0..=k1)
        .map(|k| HistogramBin {
            left: k as f64 * bin_width,
            right: (k + 1) as f64 * bin_width,
            count: 0,
        })
        .collect();
    let last = histogram.len() - 1;
    for &v in values {
        let k = ((v / bin_width).floor() as i64 - k0).clamp(0, last as i64) as usize;
        histogram[k].count += 1;
    }
    Ok(DistributionSummary {
        n,
        mean,
        variance,
        bin_width,
        histogram,
    })
}

/// Headline metrics of one trial subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub n_tar: usize,
    pub n_non: usize,
    pub eer: f64,
    pub cllr: f64,
    pub min_cllr: f64,
}

impl ConditionMetrics {
    pub fn compute(tar: &[f64], non: &[f64]) -> Result<Self> {
        Ok(ConditionMetrics {
            n_tar: tar.len(),
            n_non: non.len(),
            eer: eer_rocch_split(tar, non)?,
            cllr: cllr_split(tar, non)?,
            min_cllr: min_cllr_split(tar, non)?,
        })
    }
}

/// Target/non-target LLR distributions attached to a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distributions {
    pub tar: DistributionSummary,
    pub non: DistributionSummary,
}

/// Evaluation report of one system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system_id: String,
    pub n_tar: usize,
    pub n_non: usize,
    pub eer: f64,
    pub cllr: f64,
    pub min_cllr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_condition: Option<IndexMap<String, ConditionMetrics>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distributions: Option<Distributions>,
}

/// Computes the report of `llrs` over `key`.
///
/// Conditions with fewer than one trial of either class are left out of the
/// per-condition block.
pub fn evaluate(
    llrs: &impl Scored,
    key: &TrialSet,
    per_condition: bool,
    hist_bin: Option<f64>,
) -> Result<EvalReport> {
    let split = Split::nondegenerate(llrs.values(), key)?;
    let overall = ConditionMetrics::compute(&split.tar, &split.non)?;
    let per_condition = if per_condition {
        let mut map = IndexMap::new();
        for c in Condition::ALL {
            let sub = key.subset(c);
            let s = Split::from_key(&crate::scores::restrict(llrs.values(), &sub), &sub)?;
            if s.check_nondegenerate().is_ok() {
                map.insert(c.code().to_string(), ConditionMetrics::compute(&s.tar, &s.non)?);
            }
        }
        Some(map)
    } else {
        None
    };
    let distributions = match hist_bin {
        Some(w) => Some(Distributions {
            tar: distribution_summary(&split.tar, w)?,
            non: distribution_summary(&split.non, w)?,
        }),
        None => None,
    };
    Ok(EvalReport {
        system_id: llrs.system_id().to_string(),
        n_tar: overall.n_tar,
        n_non: overall.n_non,
        eer: overall.eer,
        cllr: overall.cllr,
        min_cllr: overall.min_cllr,
        per_condition,
        distributions,
    })
}
