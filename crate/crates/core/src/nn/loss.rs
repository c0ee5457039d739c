use serde::{Deserialize, Serialize};

use crate::dataset::ItemId;
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax_into(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    softmax_into(z, &mut out);
    out
}

/// Training objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    Bpr,
}

/// Pre-activation scores and softmax probabilities of one prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub z: Vec<f64>,
    pub y_hat: Vec<f64>,
}

impl StepOutput {
    pub fn from_scores(z: Vec<f64>) -> Self {
        let y_hat = softmax(&z);
        StepOutput { z, y_hat }
    }
}

/// Categorical cross entropy against a one-hot target.
pub fn loss_ce(y_hat: &[f64], target: ItemId) -> f64 {
    -y_hat[target.index()].max(PROB_CLAMP).ln()
}

/// Ranking loss `-log sum_j y_hat[j] * sigmoid(z[target] - z[j])` over the
/// sampled negatives `j` (duplicates count once per occurrence). `y_hat` is the
/// softmax over the whole catalog.
pub fn loss_bpr(step: &StepOutput, target: ItemId, negatives: &[ItemId]) -> Result<f64> {
    check_negatives(target, negatives)?;
    let zi = step.z[target.index()];
    let s: f64 = negatives
        .iter()
        .map(|&j| step.y_hat[j.index()] * sigmoid(zi - step.z[j.index()]))
        .sum();
    Ok(-s.max(PROB_CLAMP).ln())
}

fn check_negatives(target: ItemId, negatives: &[ItemId]) -> Result<()> {
    if negatives.is_empty() {
        return Err(Error::Argument("BPR needs at least one negative".into()));
    }
    if negatives.contains(&target) {
        return Err(Error::Argument(format!(
            "target {target} appears among the negatives"
        )));
    }
    Ok(())
}

/// Writes `dL/dz` for cross entropy into `dz` and returns the loss.
pub(crate) fn ce_grad(y_hat: &[f64], target: ItemId, dz: &mut [f64]) -> f64 {
    dz.copy_from_slice(y_hat);
    let i = target.index();
    dz[i] -= 1.0;
    loss_ce(y_hat, target)
}

/// Writes `dL/dz` for the ranking loss into `dz` and returns the loss.
///
/// With `S = sum_j y_j s_j`, `s_j = sigmoid(z_i - z_j)`:
/// `dL/dz_k = y_k - (m_k y_k s_k^2 + [k = i] sum_j y_j s_j (1 - s_j)) / S`,
/// where `m_k` is the multiplicity of `k` among the negatives. Below the clamp
/// the loss is constant and the gradient is zero.
pub(crate) fn bpr_grad(
    z: &[f64],
    y_hat: &[f64],
    target: ItemId,
    negatives: &[ItemId],
    dz: &mut [f64],
) -> f64 {
    let i = target.index();
    let zi = z[i];
    let mut s_total = 0.0;
    let mut a_total = 0.0;
    for &j in negatives {
        let j = j.index();
        let s = sigmoid(zi - z[j]);
        let w = y_hat[j] * s;
        s_total += w;
        a_total += w * (1.0 - s);
    }
    if s_total < PROB_CLAMP {
        dz.iter_mut().for_each(|d| *d = 0.0);
        return -PROB_CLAMP.ln();
    }
    dz.copy_from_slice(y_hat);
    let inv = 1.0 / s_total;
    for &j in negatives {
        let j = j.index();
        let s = sigmoid(zi - z[j]);
        dz[j] -= y_hat[j] * s * s * inv;
    }
    dz[i] -= a_total * inv;
    -s_total.ln()
}
