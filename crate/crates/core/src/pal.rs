//! Pick-all-labels (PAL) loss and its affine lower bound.
//!
//! `L(z, S) = sum_{k in S} -log softmax(z)_k`. For each multiplicity `m`
//! and tuning constant `c1 > 0` the loss is bounded below by the affine
//! function
//!
//! ```text
//! gamma1 * <1 - (K/m) 1_S, z> + c2,    gamma1 = m / ((1 + c1) (K - m))
//! ```
//!
//! with equality exactly when the in-set logits are equal, the out-of-set
//! logits are equal and the gap between them is `log((K - m) c1 / m)`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::label_space::{LabelDistribution, LabelSet};

fn check_logits(z: &[f64], s: &LabelSet) -> Result<()> {
    if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit {bad}")));
    }
    if s.iter().any(|c| c >= z.len()) || s.len() >= z.len() {
        return Err(Error::InvalidLabelSet(format!(
            "label set {s} does not fit K = {}",
            z.len()
        )));
    }
    Ok(())
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = j;
        }
    }
    best
}

/// Numerically stable `softmax(z)`.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// PAL loss of logits `z` for label set `s`.
pub fn pal_loss(z: &[f64], s: &LabelSet) -> Result<f64> {
    check_logits(z, s)?;
    let top = argmax(z);
    let max = z[top];
    let rest: f64 = z
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, &v)| (v - max).exp())
        .sum();
    let log_partition = rest.ln_1p();
    // Each term is (max - z_k) + log sum exp(z - max) >= 0.
    Ok(s.iter().map(|k| (max - z[k]) + log_partition).sum())
}

/// Gradient `m softmax(z) - 1_S`; always sums to zero.
pub fn pal_grad(z: &[f64], s: &LabelSet) -> Result<Vec<f64>> {
    check_logits(z, s)?;
    let m = s.len() as f64;
    let mut g: Vec<f64> = softmax(z).into_iter().map(|p| m * p).collect();
    for k in s.iter() {
        g[k] -= 1.0;
    }
    Ok(g)
}

/// Constants of the affine PAL lower bound for one `(K, m, c1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineBoundConstants {
    pub k: usize,
    pub m: usize,
    pub c1: f64,
    pub gamma1: f64,
    pub c2: f64,
    /// Logit gap at which the bound is attained.
    pub delta: f64,
}

pub fn affine_bound(k: usize, m: usize, c1: f64) -> Result<AffineBoundConstants> {
    if m == 0 || m >= k {
        return Err(Error::Domain(format!("multiplicity {m} outside 1..K-1 for K = {k}")));
    }
    if !(c1 > 0.0 && c1.is_finite()) {
        return Err(Error::Domain(format!("c1 = {c1} must be positive and finite")));
    }
    let (kf, mf) = (k as f64, m as f64);
    let gamma1 = mf / ((1.0 + c1) * (kf - mf));
    let c2 = (c1 * mf / (c1 + 1.0)) * mf.ln()
        + (mf * c1 / (1.0 + c1)) * ((c1 + 1.0) / c1).ln()
        + (mf / (c1 + 1.0)) * ((kf - mf) * (c1 + 1.0)).ln();
    let delta = ((kf - mf) * c1 / mf).ln();
    Ok(AffineBoundConstants {
        k,
        m,
        c1,
        gamma1,
        c2,
        delta,
    })
}

/// `lhs = L(z, S)`, `rhs = gamma1 <1 - (K/m) 1_S, z> + c2`, `margin = lhs - rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
}

/// `<1 - (K/m) 1_S, z>`.
pub fn contrast(z: &[f64], s: &LabelSet) -> f64 {
    let ratio = z.len() as f64 / s.len() as f64;
    z.iter().sum::<f64>() - ratio * s.iter().map(|k| z[k]).sum::<f64>()
}

pub fn bound_check(z: &[f64], s: &LabelSet, consts: &AffineBoundConstants) -> Result<BoundCheck> {
    if s.len() != consts.m {
        return Err(Error::MultiplicityMismatch {
            expected: consts.m,
            got: s.len(),
        });
    }
    if z.len() != consts.k {
        return Err(Error::Domain(format!(
            "logit length {} differs from K = {}",
            z.len(),
            consts.k
        )));
    }
    let lhs = pal_loss(z, s)?;
    let rhs = consts.gamma1 * contrast(z, s) + consts.c2;
    Ok(BoundCheck {
        lhs,
        rhs,
        margin: lhs - rhs,
    })
}

/// Two-level logits attaining the affine bound: `(K-m)/K * delta + shift`
/// on `S` and `-m/K * delta + shift` elsewhere.
pub fn tight_logits(k: usize, s: &LabelSet, c1: f64, mean_shift: f64) -> Result<Vec<f64>> {
    let consts = affine_bound(k, s.len(), c1)?;
    if s.iter().any(|c| c >= k) {
        return Err(Error::InvalidLabelSet(format!("label set {s} does not fit K = {k}")));
    }
    let (kf, mf) = (k as f64, s.len() as f64);
    let z_in = (kf - mf) / kf * consts.delta + mean_shift;
    let z_out = -mf / kf * consts.delta + mean_shift;
    Ok((0..k).map(|j| if s.contains(j) { z_in } else { z_out }).collect())
}

/// `Gamma_2 = (1/N) sum_m N_m c2(m)`.
pub fn gamma2(dist: &LabelDistribution, c1_per_m: &BTreeMap<usize, f64>) -> Result<f64> {
    let n = dist.total() as f64;
    let mut acc = 0.0;
    for m in dist.multiplicities() {
        let c1 = *c1_per_m.get(&m).ok_or(Error::MissingC1(m))?;
        acc += dist.group_total(m)? as f64 * affine_bound(dist.k(), m, c1)?.c2;
    }
    Ok(acc / n)
}
