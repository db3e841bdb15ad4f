//! Significance tests: McNemar's paired test and the two-sample
//! Kolmogorov–Smirnov test.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::TrialSet;
use crate::scores::{aligned, Scored};

/// Largest discordant count for which the exact binomial test is used.
pub const EXACT_MAX_DISCORDANT: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    McNemarExact,
    McNemarChi2CC,
    KS2Asymptotic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
    pub detail: IndexMap<String, Value>,
}

/// Hard-decision correctness per trial: accept (decide target) iff `L ≥ threshold`.
pub fn decisions_from_llrs(
    llrs: &impl Scored,
    key: &TrialSet,
    threshold: f64,
) -> Result<IndexMap<String, bool>> {
    Ok(aligned(llrs.values(), key)?
        .into_iter()
        .map(|(t, l)| (t.trial_id.clone(), (l >= threshold) == t.is_target()))
        .collect())
}

/// Correctness of two systems on the same trials.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDecisions {
    pub pairs: IndexMap<String, (bool, bool)>,
}

impl PairedDecisions {
    pub fn new(first: &IndexMap<String, bool>, second: &IndexMap<String, bool>) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::CoverageMismatch(format!(
                "{} vs {} decisions",
                first.len(),
                second.len()
            )));
        }
        let pairs = first
            .iter()
            .map(|(id, &c1)| {
                second
                    .get(id)
                    .map(|&c2| (id.clone(), (c1, c2)))
                    .ok_or_else(|| Error::CoverageMismatch(format!("trial `{id}` missing in second system")))
            })
            .collect::<Result<_>>()?;
        Ok(PairedDecisions { pairs })
    }

    pub fn from_counts(both: usize, only_first: usize, only_second: usize, neither: usize) -> Self {
        let mut pairs = IndexMap::new();
        let groups = [
            (both, (true, true)),
            (only_first, (true, false)),
            (only_second, (false, true)),
            (neither, (false, false)),
        ];
        for (n, v) in groups {
            for _ in 0..n {
                pairs.insert(format!("u{}", pairs.len()), v);
            }
        }
        PairedDecisions { pairs }
    }

    /// (b, c): first-only-correct and second-only-correct counts.
    pub fn discordant(&self) -> (usize, usize) {
        self.pairs.values().fold((0, 0), |(b, c), &(x, y)| match (x, y) {
            (true, false) => (b + 1, c),
            (false, true) => (b, c + 1),
            _ => (b, c),
        })
    }
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Exact two-sided binomial p-value of the McNemar test.
pub fn mcnemar_exact_p(b: usize, c: usize) -> f64 {
    let n = (b + c) as u64;
    let m = b.min(c) as u64;
    let tail: u64 = (0..=m).map(|k| binomial(n, k)).sum();
    (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0)
}

/// McNemar's test: exact binomial when b + c ≤ 25, otherwise chi-square
/// with continuity correction.
pub fn mcnemar(paired: &PairedDecisions) -> Result<TestResult> {
    if paired.pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (b, c) = paired.discordant();
    let n = b + c;
    let mut detail = IndexMap::new();
    detail.insert("b".into(), Value::from(b));
    detail.insert("c".into(), Value::from(c));
    detail.insert("n_pairs".into(), Value::from(paired.pairs.len()));
    if n == 0 {
        detail.insert("note".into(), Value::from("no discordant pairs"));
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            method: Method::McNemarExact,
            detail,
        });
    }
    if n <= EXACT_MAX_DISCORDANT {
        return Ok(TestResult {
            statistic: b.min(c) as f64,
            p_value: mcnemar_exact_p(b, c),
            method: Method::McNemarExact,
            detail,
        });
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let stat = diff.max(0.0).powi(2) / n as f64;
    let p = statrs::function::erf::erfc((stat / 2.0).sqrt()).clamp(0.0, 1.0);
    Ok(TestResult {
        statistic: stat,
        p_value: p,
        method: Method::McNemarChi2CC,
        detail,
    })
}

/// Largest absolute difference between the two empirical CDFs.
pub fn ks_statistic(x: &[f64], y: &[f64]) -> f64 {
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n1, n2) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    d
}

/// Kolmogorov distribution tail `Q(λ) = 2 Σ (−1)^{j−1} e^{−2 j² λ²}`, j ≤ 100.
///
/// Returns 1 when the alternating series has not settled (very small λ).
pub fn kolmogorov_q(lambda: f64) -> f64 {
    let a2 = -2.0 * lambda * lambda;
    let mut sign = 2.0;
    let mut sum = 0.0;
    let mut prev = 0.0;
    for j in 1..=100 {
        let jf = j as f64;
        let term = sign * (a2 * jf * jf).exp();
        sum += term;
        if term.abs() <= 1e-3 * prev || term.abs() <= 1e-8 * sum {
            return sum.clamp(0.0, 1.0);
        }
        sign = -sign;
        prev = term.abs();
    }
    1.0
}

pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<TestResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput);
    }
    let d = ks_statistic(x, y);
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let ne = n1 * n2 / (n1 + n2);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    let p = if d == 0.0 { 1.0 } else { kolmogorov_q(lambda) };
    let mut detail = IndexMap::new();
    detail.insert("D".into(), Value::from(d));
    detail.insert("n1".into(), Value::from(x.len()));
    detail.insert("n2".into(), Value::from(y.len()));
    detail.insert("lambda".into(), Value::from(lambda));
    Ok(TestResult {
        statistic: d,
        p_value: p,
        method: Method::KS2Asymptotic,
        detail,
    })
}
