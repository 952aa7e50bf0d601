//! Centered label second-moment spectrum.
//!
//! For a multiplicity group `m` the second-moment matrix is
//! `G_m = E_{S ~ p_m}[y_S y_S^T]` and the spectral constant `kappa_m` is the
//! smallest eigenvalue of `Pi G_m Pi` restricted to the centered subspace
//! `range(Pi) = {x : 1^T x = 0}`. The restriction is carried out exactly by
//! an orthonormal Helmert basis `Q` of `range(Pi)`, so the eigenproblem that
//! is solved is the `(K-1) x (K-1)` matrix `Q^T G Q`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::label_space::LabelDistribution;

/// Restricted eigenvalues with magnitude at most this are reported as zero.
pub const EIGEN_ZERO_TOL: f64 = 1e-10;

/// `kappa / mean restricted eigenvalue` below this is classified near-degenerate.
pub const NEAR_DEGENERATE_RATIO: f64 = 1e-2;

const SYMMETRY_TOL: f64 = 1e-12;

/// `Pi = I - (1/K) 1 1^T`.
pub fn centering_projector(k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { 0.0 } - 1.0 / k as f64)
}

/// Orthonormal basis of `range(Pi)` as the columns of a `K x (K-1)` matrix.
///
/// Column `j` (1-based) is `(1, ..., 1, -j, 0, ..., 0) / sqrt(j (j + 1))`
/// with `j` leading ones.
pub fn helmert_basis(k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, k - 1, |i, c| {
        let j = c + 1;
        let norm = ((j * (j + 1)) as f64).sqrt();
        if i < j {
            1.0 / norm
        } else if i == j {
            -(j as f64) / norm
        } else {
            0.0
        }
    })
}

/// `G_m = sum_S p(m, S) 1_S 1_S^T`.
pub fn second_moment(dist: &LabelDistribution, m: usize) -> Result<DMatrix<f64>> {
    let k = dist.k();
    let mut g = DMatrix::zeros(k, k);
    for (set, p) in dist.probabilities(m)? {
        for a in set.iter() {
            for b in set.iter() {
                g[(a, b)] += p;
            }
        }
    }
    Ok(g)
}

/// Eigenstructure of `Pi G Pi` on `range(Pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedSpectrum {
    pub kappa: f64,
    /// Unit vector in `range(Pi)` attaining `kappa`.
    pub min_direction: DVector<f64>,
    /// All `K - 1` restricted eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
}

/// Smallest eigenvalue of `Pi G Pi` restricted to `range(Pi)` and its
/// eigenvector mapped back to `R^K`.
pub fn kappa(g: &DMatrix<f64>) -> Result<RestrictedSpectrum> {
    let k = g.nrows();
    if g.ncols() != k || k < 2 {
        return Err(Error::Matrix(format!(
            "expected a square matrix with K >= 2, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    let scale = g.amax().max(1.0);
    let asym = (g - g.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Matrix(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Matrix("matrix has non-finite entries".into()));
    }
    let q = helmert_basis(k);
    let restricted = q.transpose() * g * &q;
    let restricted = (&restricted + restricted.transpose()) * 0.5;
    let eig = SymmetricEigen::new(restricted);

    let mut order: Vec<usize> = (0..k - 1).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let clamp = |v: f64| if v.abs() <= EIGEN_ZERO_TOL { 0.0 } else { v };
    let eigenvalues: Vec<f64> = order.iter().map(|&i| clamp(eig.eigenvalues[i])).collect();

    let mut direction = &q * eig.eigenvectors.column(order[0]);
    direction /= direction.norm();
    // Fix the sign: the largest-magnitude entry is positive.
    let pivot = direction.iamax();
    if direction[pivot] < 0.0 {
        direction = -direction;
    }
    Ok(RestrictedSpectrum {
        kappa: eigenvalues[0],
        min_direction: direction,
        eigenvalues,
    })
}

/// `Tr(Pi G Pi)` together with the distribution-free value `m (K - m) / K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CenteredTrace {
    pub value: f64,
    pub expected: f64,
    pub holds: bool,
}

pub fn centered_trace(g: &DMatrix<f64>, m: usize, tol: f64) -> CenteredTrace {
    let k = g.nrows();
    let pi = centering_projector(k);
    let value = (&pi * g * &pi).trace();
    let expected = (m * (k - m)) as f64 / k as f64;
    CenteredTrace {
        value,
        expected,
        holds: (value - expected).abs() <= tol,
    }
}

/// Exchangeable closed form `m (K - m) / (K (K - 1))` for a group that is
/// uniform over all size-`m` subsets. Used as a cross-check only.
pub fn exchangeable_kappa(k: usize, m: usize) -> f64 {
    (m * (k - m)) as f64 / (k * (k - 1)) as f64
}

/// The three regimes of the non-degeneracy condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    /// Every centered contrast direction carries variance.
    SpectralGap,
    /// Some contrast direction is nearly invisible.
    NearDegenerate,
    /// Some contrast direction has exactly zero variance.
    Degenerate,
}

impl Degeneracy {
    pub fn case_label(self) -> &'static str {
        match self {
            Degeneracy::SpectralGap => "spectral gap (i)",
            Degeneracy::NearDegenerate => "near-degenerate (ii)",
            Degeneracy::Degenerate => "degenerate (iii)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenteredSpectrum {
    pub m: usize,
    #[serde(skip)]
    pub g: DMatrix<f64>,
    pub kappa: f64,
    pub centered_trace: f64,
    pub eigenvalues: Vec<f64>,
    #[serde(serialize_with = "serialize_dvector")]
    pub min_direction: DVector<f64>,
}

impl CenteredSpectrum {
    pub fn compute(dist: &LabelDistribution, m: usize) -> Result<Self> {
        let g = second_moment(dist, m)?;
        let restricted = kappa(&g)?;
        let trace = centered_trace(&g, m, f64::INFINITY).value;
        Ok(Self {
            m,
            g,
            kappa: restricted.kappa,
            centered_trace: trace,
            eigenvalues: restricted.eigenvalues,
            min_direction: restricted.min_direction,
        })
    }

    /// One spectrum per multiplicity present in `dist`.
    pub fn all(dist: &LabelDistribution) -> Result<Vec<Self>> {
        dist.multiplicities().map(|m| Self::compute(dist, m)).collect()
    }

    pub fn classify(&self) -> Degeneracy {
        let k = self.g.nrows();
        let mean = self.centered_trace / (k - 1) as f64;
        if self.kappa <= 0.0 {
            Degeneracy::Degenerate
        } else if self.kappa < NEAR_DEGENERATE_RATIO * mean {
            Degeneracy::NearDegenerate
        } else {
            Degeneracy::SpectralGap
        }
    }
}

pub(crate) fn serialize_dvector<S: serde::Serializer>(
    v: &DVector<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}
