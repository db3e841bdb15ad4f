//! Affine logistic-regression calibration and fusion.
//!
//! A model maps the scores of K systems to one LLR,
//! `L_t = b + Σ_k a_k s_{k,t}`. Training minimises the prior-weighted Cllr of
//! the mapped scores plus a ridge penalty on the weights (never on `b`).

use std::f64::consts::LN_2;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{log2_1p_exp, sigmoid};
use crate::model::{Condition, TrialSet};
use crate::scores::{check_coverage, restrict, LlrSet, ScoreSet};

pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
/// Relative Newton-step size below which a small gradient counts as converged.
pub const STEP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub system_ids: Vec<String>,
    pub weights: Vec<f64>,
    pub offset: f64,
    pub prior: f64,
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    pub iterations: usize,
    /// Objective at the returned parameters, in bits.
    pub final_objective: f64,
    pub final_gradient_norm: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    /// Effective target prior π in (0, 1).
    pub prior: f64,
    /// Ridge weight λ; `None` selects `1e-4 / N_trials`.
    pub ridge: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            prior: 0.5,
            ridge: None,
        }
    }
}

impl TrainOptions {
    fn check(&self) -> Result<()> {
        if !(self.prior > 0.0 && self.prior < 1.0) {
            return Err(Error::InvalidParams(format!("prior {} not in (0,1)", self.prior)));
        }
        if let Some(l) = self.ridge {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidParams(format!("ridge {l} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn ridge_for(&self, n_trials: usize) -> f64 {
        self.ridge.unwrap_or(1e-4 / n_trials as f64)
    }
}

/// Design matrix and class weights of one training problem.
struct Problem {
    k: usize,
    // row-major, K columns per row
    x: Vec<f64>,
    target: Vec<bool>,
    w_tar: f64,
    w_non: f64,
    prior_offset: f64,
    ridge: f64,
}

impl Problem {
    fn new(scores: &[&ScoreSet], key: &TrialSet, prior: f64, ridge: f64) -> Result<Problem> {
        if scores.is_empty() {
            return Err(Error::InvalidParams("at least one system is required".into()));
        }
        key.require_both_classes()?;
        for s in scores {
            check_coverage(&s.scores, key)?;
        }
        let k = scores.len();
        let mut x = Vec::with_capacity(key.len() * k);
        let mut target = Vec::with_capacity(key.len());
        for t in key {
            for s in scores {
                x.push(s.scores[t.trial_id.as_str()]);
            }
            target.push(t.is_target());
        }
        let n_tar = key.n_tar() as f64;
        let n_non = key.n_non() as f64;
        Ok(Problem {
            k,
            x,
            target,
            w_tar: prior / n_tar,
            w_non: (1.0 - prior) / n_non,
            prior_offset: (prior / (1.0 - prior)).ln(),
            ridge,
        })
    }

    fn dim(&self) -> usize {
        self.k + 1
    }

    fn linear(&self, theta: &[f64], row: usize) -> f64 {
        let xs = &self.x[row * self.k..(row + 1) * self.k];
        theta[self.k] + xs.iter().zip(theta).map(|(x, a)| x * a).sum::<f64>()
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let mut obj = 0.0;
        for (row, &tar) in self.target.iter().enumerate() {
            let z = self.linear(theta, row) + self.prior_offset;
            obj += if tar {
                self.w_tar * log2_1p_exp(-z)
            } else {
                self.w_non * log2_1p_exp(z)
            };
        }
        obj + self.ridge * theta[..self.k].iter().map(|a| a * a).sum::<f64>()
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        for (row, &tar) in self.target.iter().enumerate() {
            let z = self.linear(theta, row) + self.prior_offset;
            let dz = if tar {
                -self.w_tar * sigmoid(-z) / LN_2
            } else {
                self.w_non * sigmoid(z) / LN_2
            };
            let xs = &self.x[row * self.k..(row + 1) * self.k];
            for (gj, x) in g.iter_mut().zip(xs) {
                *gj += dz * x;
            }
            g[self.k] += dz;
        }
        for j in 0..self.k {
            g[j] += 2.0 * self.ridge * theta[j];
        }
        g
    }

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut h = DMatrix::<f64>::zeros(d, d);
        let mut row_ext = vec![1.0; d];
        for (row, &tar) in self.target.iter().enumerate() {
            let z = self.linear(theta, row) + self.prior_offset;
            let w = if tar { self.w_tar } else { self.w_non };
            let c = w * sigmoid(z) * sigmoid(-z) / LN_2;
            if c == 0.0 {
                continue;
            }
            row_ext[..self.k].copy_from_slice(&self.x[row * self.k..(row + 1) * self.k]);
            for i in 0..d {
                let ci = c * row_ext[i];
                for j in i..d {
                    h[(i, j)] += ci * row_ext[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                h[(i, j)] = h[(j, i)];
            }
        }
        for j in 0..self.k {
            h[(j, j)] += 2.0 * self.ridge;
        }
        h
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `h p = -g`, adding diagonal damping when `h` is not positive definite.
fn newton_direction(h: &DMatrix<f64>, g: &[f64]) -> Vec<f64> {
    let rhs = -DVector::from_column_slice(g);
    let scale = h.diagonal().iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let mut damping = 0.0;
    for _ in 0..40 {
        let mut hd = h.clone();
        for i in 0..hd.nrows() {
            hd[(i, i)] += damping;
        }
        if let Some(ch) = hd.cholesky() {
            return ch.solve(&rhs).iter().copied().collect();
        }
        damping = if damping == 0.0 { scale * 1e-12 } else { damping * 10.0 };
    }
    // gradient descent as a last resort
    g.iter().map(|x| -x / scale).collect()
}

/// Objective (bits) and its exact gradient at `(weights, offset)`.
///
/// The gradient is ordered as the weights followed by the offset.
pub fn objective_and_gradient(
    weights: &[f64],
    offset: f64,
    scores: &[&ScoreSet],
    key: &TrialSet,
    prior: f64,
    ridge: f64,
) -> Result<(f64, Vec<f64>)> {
    TrainOptions {
        prior,
        ridge: Some(ridge),
    }
    .check()?;
    if weights.len() != scores.len() {
        return Err(Error::InvalidParams(format!(
            "{} weights for {} systems",
            weights.len(),
            scores.len()
        )));
    }
    let p = Problem::new(scores, key, prior, ridge)?;
    let mut theta = weights.to_vec();
    theta.push(offset);
    Ok((p.objective(&theta), p.gradient(&theta)))
}

/// Trains an affine calibration (one system) or fusion (several systems).
///
/// Non-convergence is reported through the diagnostics; the last iterate is
/// still returned.
pub fn train(
    scores: &[&ScoreSet],
    key: &TrialSet,
    opts: &TrainOptions,
) -> Result<(CalibrationModel, TrainingDiagnostics)> {
    opts.check()?;
    let ridge = opts.ridge_for(key.len());
    let p = Problem::new(scores, key, opts.prior, ridge)?;
    let mut theta = vec![0.0; p.dim()];
    let mut obj = p.objective(&theta);
    let mut grad = p.gradient(&theta);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_ITERATIONS {
        let h = p.hessian(&theta);
        let dir = newton_direction(&h, &grad);
        let g_norm = inf_norm(&grad);
        if g_norm < GRADIENT_TOLERANCE
            && inf_norm(&dir) <= STEP_TOLERANCE * (1.0 + inf_norm(&theta))
        {
            converged = true;
            break;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
            let c_obj = p.objective(&cand);
            if c_obj < obj {
                accepted = Some((cand, c_obj));
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((cand, c_obj)) => {
                theta = cand;
                obj = c_obj;
                grad = p.gradient(&theta);
            }
            None => {
                // no descent possible at working precision
                converged = inf_norm(&grad) < GRADIENT_TOLERANCE;
                break;
            }
        }
    }

    let model = CalibrationModel {
        system_ids: scores.iter().map(|s| s.system_id.clone()).collect(),
        weights: theta[..p.k].to_vec(),
        offset: theta[p.k],
        prior: opts.prior,
        ridge,
    };
    let diag = TrainingDiagnostics {
        iterations,
        final_objective: obj,
        final_gradient_norm: inf_norm(&grad),
        converged,
    };
    Ok((model, diag))
}

impl CalibrationModel {
    /// Output system id: the input id for calibration, ids joined by `+` for fusion.
    pub fn output_id(&self) -> String {
        self.system_ids.join("+")
    }

    pub fn map(&self, scores: &[f64]) -> f64 {
        self.offset + self.weights.iter().zip(scores).map(|(a, s)| a * s).sum::<f64>()
    }
}

/// Applies a trained model. The prior offset is a training-time weighting
/// only and is not added to the output.
pub fn apply(model: &CalibrationModel, scores: &[&ScoreSet]) -> Result<LlrSet> {
    if scores.len() != model.weights.len() {
        return Err(Error::InvalidParams(format!(
            "model expects {} systems, got {}",
            model.weights.len(),
            scores.len()
        )));
    }
    let first = scores[0];
    for s in &scores[1..] {
        if s.scores.len() != first.scores.len() {
            return Err(Error::CoverageMismatch(format!(
                "systems `{}` and `{}` score different trial sets",
                first.system_id, s.system_id
            )));
        }
    }
    let mut out = LlrSet::new(model.output_id());
    let mut row = vec![0.0; scores.len()];
    for id in first.scores.keys() {
        for (slot, s) in row.iter_mut().zip(scores) {
            *slot = *s.scores.get(id).ok_or_else(|| {
                Error::CoverageMismatch(format!("system `{}` has no score for `{id}`", s.system_id))
            })?;
        }
        out.llrs.insert(id.clone(), model.map(&row));
    }
    Ok(out)
}

/// Independent calibrations, one per style condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerConditionCalibration {
    pub models: IndexMap<String, (CalibrationModel, TrainingDiagnostics)>,
}

/// Trains one model per condition present in `key`.
pub fn train_per_condition(
    scores: &[&ScoreSet],
    key: &TrialSet,
    opts: &TrainOptions,
) -> Result<PerConditionCalibration> {
    for s in scores {
        check_coverage(&s.scores, key)?;
    }
    let mut models = IndexMap::new();
    for c in Condition::ALL {
        let sub = key.subset(c);
        if sub.is_empty() {
            continue;
        }
        let restricted: Vec<ScoreSet> = scores
            .iter()
            .map(|s| ScoreSet {
                system_id: s.system_id.clone(),
                scores: restrict(&s.scores, &sub),
            })
            .collect();
        let refs: Vec<&ScoreSet> = restricted.iter().collect();
        models.insert(c.code().to_string(), train(&refs, &sub, opts)?);
    }
    Ok(PerConditionCalibration { models })
}

impl PerConditionCalibration {
    /// Applies each condition's model to its trials; output follows key order.
    pub fn apply(&self, scores: &[&ScoreSet], key: &TrialSet) -> Result<LlrSet> {
        for s in scores {
            check_coverage(&s.scores, key)?;
        }
        let mut row = vec![0.0; scores.len()];
        let mut out: Option<LlrSet> = None;
        for t in key {
            let (model, _) = self.models.get(t.condition.code()).ok_or_else(|| {
                Error::InvalidParams(format!("no model for condition {}", t.condition))
            })?;
            let out = out.get_or_insert_with(|| LlrSet::new(model.output_id()));
            for (slot, s) in row.iter_mut().zip(scores) {
                *slot = s.scores[t.trial_id.as_str()];
            }
            out.llrs.insert(t.trial_id.clone(), model.map(&row));
        }
        Ok(out.unwrap_or_default())
    }
}
