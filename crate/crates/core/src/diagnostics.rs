//! Structural measurements of a UFM state: classifier centering, replica
//! collapse, self-duality, label-set generation, two-level logits, Gram
//! alignment and the NC metric suite.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::scaling_residual;
use crate::error::{Error, Result};
use crate::label_space::LabelSet;
use crate::spectral::centering_projector;
use crate::ufm::UfmState;

fn nonzero_w(w: &DMatrix<f64>) -> Result<f64> {
    let norm = w.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateClassifier("W is zero or non-finite".into()));
    }
    Ok(norm)
}

/// `|sum_k w_k| / |W|_F`.
pub fn centering_residual(w: &DMatrix<f64>) -> Result<f64> {
    let norm = nonzero_w(w)?;
    let row_sum: DVector<f64> = w.row_sum().transpose();
    Ok(row_sum.norm() / norm)
}

/// Largest `|h_i - mean| / |mean|` over every group and replica.
pub fn collapse_residual(state: &UfmState) -> f64 {
    let mut worst: f64 = 0.0;
    for g in &state.groups {
        let mean = g.prototype();
        let scale = mean.norm().max(f64::MIN_POSITIVE);
        for h in &g.replicas {
            worst = worst.max((h - &mean).norm() / scale);
        }
    }
    worst
}

/// Rows `h_{1,k} - (1/K) sum_j h_{1,j}` from the multiplicity-one prototypes,
/// or `None` when some class has no singleton group.
pub fn centered_singleton_means(state: &UfmState) -> Option<DMatrix<f64>> {
    let (k, d) = (state.k(), state.d());
    let mut rows = DMatrix::zeros(k, d);
    let mut seen = vec![false; k];
    for g in state.groups_of(1) {
        let c = g.set.classes()[0];
        rows.set_row(c, &g.prototype().transpose());
        seen[c] = true;
    }
    if seen.iter().any(|s| !s) {
        return None;
    }
    let mean = rows.row_mean();
    for mut row in rows.row_iter_mut() {
        row -= &mean;
    }
    Some(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfDuality {
    pub c1_fit: f64,
    pub relative_residual: f64,
    pub sign: i8,
}

fn sign_of(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Least-squares `C1` in `h_hat_k = C1 w_k` with one scalar shared by all rows.
pub fn self_duality_fit(h_hat: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<SelfDuality> {
    let w_norm = nonzero_w(w)?;
    if h_hat.shape() != w.shape() {
        return Err(Error::Matrix(format!(
            "centered means are {:?} but W is {:?}",
            h_hat.shape(),
            w.shape()
        )));
    }
    let c1 = h_hat.dot(w) / (w_norm * w_norm);
    let denom = h_hat.norm();
    let relative_residual = if denom == 0.0 {
        0.0
    } else {
        (h_hat - w * c1).norm() / denom
    };
    Ok(SelfDuality {
        c1_fit: c1,
        relative_residual,
        sign: sign_of(c1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetFit {
    pub set: String,
    pub c_fit: f64,
    pub relative_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationFit {
    pub m: usize,
    pub cm_fit: f64,
    pub relative_residual: f64,
    /// Separate scalar per label set, for locating violations.
    pub per_set: Vec<SetFit>,
}

fn fit_against_sums(features: &[(LabelSet, DVector<f64>)], rows: &DMatrix<f64>, m: usize) -> Result<GenerationFit> {
    if features.is_empty() {
        return Err(Error::EmptyGroup(m));
    }
    let sums: Vec<DVector<f64>> = features
        .iter()
        .map(|(s, _)| {
            let mut acc = DVector::zeros(rows.ncols());
            for k in s.iter() {
                acc += rows.row(k).transpose();
            }
            acc
        })
        .collect();
    let (mut num, mut den, mut energy) = (0.0, 0.0, 0.0);
    for ((_, h), s) in features.iter().zip(&sums) {
        num += h.dot(s);
        den += s.norm_squared();
        energy += h.norm_squared();
    }
    if den == 0.0 {
        return Err(Error::DegenerateClassifier(format!(
            "every label-set sum vanishes for m = {m}"
        )));
    }
    let cm = num / den;
    let resid: f64 = features.iter().zip(&sums).map(|((_, h), s)| (h - s * cm).norm_squared()).sum();
    let per_set = features
        .iter()
        .zip(&sums)
        .map(|((set, h), s)| {
            let ss = s.norm_squared();
            let c = if ss == 0.0 { 0.0 } else { h.dot(s) / ss };
            let hn = h.norm();
            SetFit {
                set: set.to_string(),
                c_fit: c,
                relative_residual: if hn == 0.0 { 0.0 } else { (h - s * c).norm() / hn },
            }
        })
        .collect();
    Ok(GenerationFit {
        m,
        cm_fit: cm,
        relative_residual: if energy == 0.0 { 0.0 } else { (resid / energy).sqrt() },
        per_set,
    })
}

/// Shared `C_m` in `h_{m,S} = C_m sum_{k in S} w_k`.
pub fn generation_fit(features: &[(LabelSet, DVector<f64>)], w: &DMatrix<f64>, m: usize) -> Result<GenerationFit> {
    fit_against_sums(features, w, m)
}

/// Shared scalar in `h_{m,S} = C sum_{k in S} h_hat_{1,k}`: the tag-wise sum
/// of centered single-label prototypes.
pub fn tagwise_fit(features: &[(LabelSet, DVector<f64>)], h_hat: &DMatrix<f64>, m: usize) -> Result<GenerationFit> {
    fit_against_sums(features, h_hat, m)
}

/// `(S, prototype)` for every group of multiplicity `m`.
pub fn prototypes(state: &UfmState, m: usize) -> Vec<(LabelSet, DVector<f64>)> {
    state.groups_of(m).map(|g| (g.set.clone(), g.prototype())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TwoLevel {
    pub in_std: f64,
    pub out_std: f64,
    /// Mean in-set logit minus mean out-of-set logit.
    pub gap: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn two_level_logits(z: &[f64], s: &LabelSet) -> TwoLevel {
    let inside: Vec<f64> = s.iter().map(|j| z[j]).collect();
    let outside: Vec<f64> = (0..z.len()).filter(|&j| !s.contains(j)).map(|j| z[j]).collect();
    let (mi, si) = mean_std(&inside);
    let (mo, so) = mean_std(&outside);
    TwoLevel {
        in_std: si,
        out_std: so,
        gap: mi - mo,
    }
}

/// Two-level statistics of the logits `W h`.
pub fn two_level_check(w: &DMatrix<f64>, h: &DVector<f64>, s: &LabelSet) -> TwoLevel {
    let z = w * h;
    two_level_logits(z.as_slice(), s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    Identity,
    /// Rows divided by `sqrt(r_{1,k})`.
    InvSqrtCounts,
    /// Rows multiplied by `sqrt(r_{1,k})`.
    SqrtCounts,
}

impl Scaling {
    pub const ALL: [Scaling; 3] = [Scaling::Identity, Scaling::InvSqrtCounts, Scaling::SqrtCounts];

    pub fn name(self) -> &'static str {
        match self {
            Scaling::Identity => "identity",
            Scaling::InvSqrtCounts => "inv_sqrt_counts",
            Scaling::SqrtCounts => "sqrt_counts",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GramAlignment {
    pub scaling: Scaling,
    pub c_star: f64,
    pub residual_fro: f64,
}

/// `c* = Tr(Pi G) / (K - 1)` and `|G - c* Pi|_F` for `G = A' A'^T`, where
/// `A'` is `A` with rows rescaled according to `scaling`.
pub fn gram_alignment(a: &DMatrix<f64>, scaling: Scaling, counts: &[u64]) -> Result<GramAlignment> {
    let k = a.nrows();
    if k < 2 {
        return Err(Error::Matrix("Gram alignment needs K >= 2".into()));
    }
    let mut scaled = a.clone();
    if scaling != Scaling::Identity {
        if counts.len() != k {
            return Err(Error::Matrix(format!("{} counts for {k} rows", counts.len())));
        }
        if let Some(c) = counts.iter().position(|&c| c == 0) {
            return Err(Error::DegenerateDistribution { m: 1, class: c });
        }
        for (i, &c) in counts.iter().enumerate() {
            let f = match scaling {
                Scaling::InvSqrtCounts => 1.0 / (c as f64).sqrt(),
                _ => (c as f64).sqrt(),
            };
            let mut row = scaled.row_mut(i);
            row *= f;
        }
    }
    let g = &scaled * scaled.transpose();
    let pi = centering_projector(k);
    let c_star = (&pi * &g).trace() / (k - 1) as f64;
    let residual_fro = (&g - &pi * c_star).norm();
    Ok(GramAlignment {
        scaling,
        c_star,
        residual_fro,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NcMetrics {
    pub nc1: Option<f64>,
    /// Set when every group has a single replica, so `nc1` is zero by construction.
    pub nc1_vacuous: bool,
    pub nc2: f64,
    pub nc3: Option<f64>,
    pub angle: Option<f64>,
}

/// Within-group replica variance over global feature variance, both sample-weighted.
fn nc1(state: &UfmState) -> Option<f64> {
    let n = state.sample_total() as f64;
    let d = state.d();
    let mut global_mean = DVector::zeros(d);
    for g in &state.groups {
        for h in &g.replicas {
            global_mean.axpy(g.weight() / n, h, 1.0);
        }
    }
    let (mut within, mut total) = (0.0, 0.0);
    for g in &state.groups {
        let mean = g.prototype();
        for h in &g.replicas {
            within += g.weight() * (h - &mean).norm_squared();
            total += g.weight() * (h - &global_mean).norm_squared();
        }
    }
    if total == 0.0 {
        return None;
    }
    Some(within / total)
}

pub fn nc_metrics(state: &UfmState) -> Result<NcMetrics> {
    let w_norm = nonzero_w(&state.w)?;
    let vacuous = state.groups.iter().all(|g| g.replicas.len() == 1);
    let nc1 = if vacuous { Some(0.0) } else { nc1(state) };
    let k = state.k();
    let pi = centering_projector(k);
    let gw = &state.w * state.w.transpose();
    let nc2 = (&gw / gw.norm() - &pi / pi.norm()).norm();
    let h_hat = centered_singleton_means(state);
    let nc3 = h_hat.as_ref().and_then(|h| {
        let hn = h.norm();
        (hn > 0.0).then(|| (&state.w / w_norm - h / hn).norm())
    });
    let angle = h_hat.as_ref().and_then(|h| {
        let pairs = prototypes(state, 2);
        if pairs.is_empty() {
            return None;
        }
        let mut acc = 0.0;
        for (s, proto) in &pairs {
            let mut sum = DVector::zeros(state.d());
            for c in s.iter() {
                sum += h.row(c).transpose();
            }
            let denom = proto.norm() * sum.norm();
            acc += if denom == 0.0 { 1.0 } else { 1.0 - proto.dot(&sum) / denom };
        }
        Some(acc / pairs.len() as f64)
    });
    Ok(NcMetrics {
        nc1,
        nc1_vacuous: vacuous,
        nc2,
        nc3,
        angle,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoLevelEntry {
    pub m: usize,
    pub set: String,
    pub in_group_std: f64,
    pub out_group_std: f64,
    pub gap: f64,
    pub logit_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub state: String,
    pub centering_residual: f64,
    pub collapse_residual: f64,
    pub self_duality: Option<SelfDuality>,
    pub generation: Vec<GenerationFit>,
    /// Shared-constant fit against the tag-wise sum of centered single-label prototypes.
    pub tagwise: Vec<GenerationFit>,
    pub scaling_identity_residual: f64,
    pub two_level: Vec<TwoLevelEntry>,
    /// Largest `max(in_std, out_std) / |z|` over all groups.
    pub two_level_max_relative: f64,
    pub gram: Vec<GramAlignment>,
    pub nc: NcMetrics,
    /// Names of metrics that could not be computed for this state.
    pub unavailable: Vec<String>,
}

impl DiagnosticsReport {
    pub fn compute(state: &UfmState) -> Result<Self> {
        let mut unavailable = Vec::new();
        let h_hat = centered_singleton_means(state);
        let self_duality = match &h_hat {
            Some(h) => Some(self_duality_fit(h, &state.w)?),
            None => {
                unavailable.push("self_duality".to_string());
                None
            }
        };
        let max_m = state.groups.iter().map(|g| g.m()).max().unwrap_or(0);
        let mut generation = Vec::new();
        let mut tagwise = Vec::new();
        for m in 2..=max_m {
            let protos = prototypes(state, m);
            if protos.is_empty() {
                continue;
            }
            generation.push(generation_fit(&protos, &state.w, m)?);
            if let Some(h) = &h_hat {
                tagwise.push(tagwise_fit(&protos, h, m)?);
            }
        }
        if generation.is_empty() {
            unavailable.push("generation".to_string());
        }
        let mut two_level = Vec::new();
        let mut worst_rel: f64 = 0.0;
        for g in &state.groups {
            let proto = g.prototype();
            let z = &state.w * &proto;
            let t = two_level_logits(z.as_slice(), &g.set);
            let norm = z.norm();
            worst_rel = worst_rel.max(t.in_std.max(t.out_std) / norm.max(f64::MIN_POSITIVE));
            two_level.push(TwoLevelEntry {
                m: g.m(),
                set: g.set.to_string(),
                in_group_std: t.in_std,
                out_group_std: t.out_std,
                gap: t.gap,
                logit_norm: norm,
            });
        }
        let mut counts = vec![0u64; state.k()];
        for g in state.groups_of(1) {
            counts[g.set.classes()[0]] = g.count;
        }
        let mut gram = Vec::new();
        for scaling in Scaling::ALL {
            match gram_alignment(&state.w, scaling, &counts) {
                Ok(a) => gram.push(a),
                Err(_) => unavailable.push(format!("gram_{}", scaling.name())),
            }
        }
        let nc = nc_metrics(state)?;
        if nc.nc3.is_none() {
            unavailable.push("nc3".to_string());
        }
        if nc.angle.is_none() {
            unavailable.push("angle".to_string());
        }
        Ok(Self {
            state: crate::bounds::state_label(state).into(),
            centering_residual: centering_residual(&state.w)?,
            collapse_residual: collapse_residual(state),
            self_duality,
            generation,
            tagwise,
            scaling_identity_residual: scaling_residual(state),
            two_level,
            two_level_max_relative: worst_rel,
            gram,
            nc,
            unavailable,
        })
    }

    /// Flat `(metric, value)` pairs in a fixed order.
    pub fn metrics(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("centering_residual".to_string(), self.centering_residual),
            ("collapse_residual".to_string(), self.collapse_residual),
        ];
        if let Some(sd) = &self.self_duality {
            out.push(("self_duality_c1".into(), sd.c1_fit));
            out.push(("self_duality_residual".into(), sd.relative_residual));
        }
        for g in &self.generation {
            out.push((format!("generation_c{}", g.m), g.cm_fit));
            out.push((format!("generation_residual_m{}", g.m), g.relative_residual));
        }
        for g in &self.tagwise {
            out.push((format!("tagwise_residual_m{}", g.m), g.relative_residual));
        }
        out.push(("scaling_identity_residual".into(), self.scaling_identity_residual));
        out.push(("two_level_max_relative".into(), self.two_level_max_relative));
        for g in &self.gram {
            out.push((format!("gram_c_star_{}", g.scaling.name()), g.c_star));
            out.push((format!("gram_residual_{}", g.scaling.name()), g.residual_fro));
        }
        if let Some(v) = self.nc.nc1 {
            out.push(("nc1".into(), v));
        }
        out.push(("nc2".into(), self.nc.nc2));
        if let Some(v) = self.nc.nc3 {
            out.push(("nc3".into(), v));
        }
        if let Some(v) = self.nc.angle {
            out.push(("angle".into(), v));
        }
        out
    }

    /// Rows `run_id,metric,value` without the header.
    pub fn csv_rows(&self, run_id: &str) -> String {
        let mut out = String::new();
        for (metric, value) in self.metrics() {
            writeln!(out, "{run_id},{metric},{value:e}").expect("write to string");
        }
        out
    }
}

pub const METRIC_CSV_HEADER: &str = "run_id,metric,value\n";
