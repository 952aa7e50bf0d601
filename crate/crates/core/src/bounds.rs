//! Lower bound on the empirical PAL risk at a UFM state.
//!
//! ```text
//! g(WH) - Gamma_2 >= -(1/N) sum_m N_m gamma1_m A_m sqrt(lambda_W / lambda_H) |W|_F^2
//! ```
//!
//! Each multiplicity contributes through a chain of inequalities:
//!
//! ```text
//! g_m - c2          >= gamma1 <Theta_m, W>                  (affine)
//! <Theta_m, W>      >= -|W|_F |Theta_m|_F                   (young)
//! |Theta_m|^2       <= T_m = Tr(Theta^T B Theta) / kappa    (spectral)
//! T_m               <= Tr(B) / kappa * |Theta_m|^2          (trace)
//! |Theta_m|^2       <= C_m E_m                              (interface)
//! E_m               <= |H|_F^2                              (energy)
//! ```
//!
//! with `B = Pi G_m Pi`. The last step to `sqrt(lambda_W / lambda_H) rho`
//! uses `lambda_H |H|^2 = lambda_W |W|^2`, which holds only at critical points
//! and is reported separately.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::label_space::LabelDistribution;
use crate::pal::{affine_bound, contrast, gamma2, pal_loss};
use crate::spectral::{centering_projector, CenteredSpectrum};
use crate::ufm::{objective, FeatureGroup, UfmState};

/// `kappa` below this multiple of `Tr(Pi G_m Pi)` counts as zero.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Default c1 grid searched per multiplicity.
pub const DEFAULT_C1_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Relative rounding allowance when deciding whether a chain step holds.
/// Steps that are exact equalities in symmetric cases land within a few ulps of zero.
pub const CHAIN_ROUNDING: f64 = 1e-12;

fn centered_trace_value(k: usize, m: usize) -> f64 {
    (m * (k - m)) as f64 / k as f64
}

/// `C_m = 2K/N_m + (2K^2/m^2) max_{|S|=m} sum_{j in S} 1/N_m^j`.
pub fn counting_coefficient(dist: &LabelDistribution, m: usize) -> Result<f64> {
    let (kf, mf) = (dist.k() as f64, m as f64);
    let n_m = dist.group_total(m)? as f64;
    Ok(2.0 * kf / n_m + 2.0 * kf * kf / (mf * mf) * dist.worst_set_term(m)?)
}

/// `(2K/N_m)(1 + K/(m pi_min))` with `pi_min = min_j N_m^j / N_m`; never below
/// [`counting_coefficient`].
pub fn loose_counting_coefficient(dist: &LabelDistribution, m: usize) -> Result<f64> {
    let (kf, mf) = (dist.k() as f64, m as f64);
    let n_m = dist.group_total(m)? as f64;
    let counts = dist.class_counts(m)?;
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::DegenerateDistribution { m, class });
    }
    let pi_min = *counts.iter().min().expect("K >= 2") as f64 / n_m;
    Ok(2.0 * kf / n_m * (1.0 + kf / (mf * pi_min)))
}

/// `A_m = sqrt((1/kappa) m(K-m)/K C_m)`.
pub fn a_m(dist: &LabelDistribution, m: usize, kappa: f64) -> Result<f64> {
    let trace = centered_trace_value(dist.k(), m);
    let tol = DEGENERACY_TOL * trace;
    if !(kappa > tol) {
        return Err(Error::SpectralDegeneracy { m, kappa, tol });
    }
    Ok((trace * counting_coefficient(dist, m)? / kappa).sqrt())
}

fn spectrum_for(spectra: &[CenteredSpectrum], m: usize) -> Result<&CenteredSpectrum> {
    spectra.iter().find(|s| s.m == m).ok_or(Error::UnknownMultiplicity(m))
}

/// `-(1/N) sum_m N_m gamma1_m A_m sqrt(lambda_w / lambda_h) rho`.
pub fn risk_bound_rhs(
    dist: &LabelDistribution,
    spectra: &[CenteredSpectrum],
    c1_per_m: &BTreeMap<usize, f64>,
    lambda_w: f64,
    lambda_h: f64,
    rho: f64,
) -> Result<f64> {
    if !(lambda_w > 0.0 && lambda_h > 0.0) {
        return Err(Error::Domain("regularization weights must be positive".into()));
    }
    let n = dist.total() as f64;
    let ratio = (lambda_w / lambda_h).sqrt();
    let mut acc = 0.0;
    for m in dist.multiplicities() {
        let c1 = *c1_per_m.get(&m).ok_or(Error::MissingC1(m))?;
        let gamma1 = affine_bound(dist.k(), m, c1)?.gamma1;
        let a = a_m(dist, m, spectrum_for(spectra, m)?.kappa)?;
        acc += dist.group_total(m)? as f64 * gamma1 * a;
    }
    Ok(-acc / n * ratio * rho)
}

/// `Theta_m`, row `k` equal to `hbar_m - (K/m) hbar_m^k` where
/// `hbar_m = (1/N_m) sum h` and `hbar_m^k = (1/N_m) sum_{S contains k} h`.
pub fn theta_matrix(groups: &[FeatureGroup], k: usize, m: usize) -> Result<DMatrix<f64>> {
    let members: Vec<&FeatureGroup> = groups.iter().filter(|g| g.m() == m).collect();
    let n_m: u64 = members.iter().map(|g| g.count).sum();
    if n_m == 0 {
        return Err(Error::EmptyGroup(m));
    }
    let d = members[0].replicas[0].len();
    let n_m = n_m as f64;
    let mut mean = DVector::zeros(d);
    let mut per_class = DMatrix::zeros(k, d);
    for g in &members {
        let mut sum = DVector::zeros(d);
        for h in &g.replicas {
            sum += h;
        }
        sum *= g.weight() / n_m;
        mean += &sum;
        for c in g.set.iter() {
            let mut row = per_class.row_mut(c);
            row += sum.transpose();
        }
    }
    let ratio = k as f64 / m as f64;
    let mut theta = DMatrix::zeros(k, d);
    for c in 0..k {
        let row = mean.transpose() - per_class.row(c) * ratio;
        theta.set_row(c, &row);
    }
    Ok(theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterfaceCheck {
    /// `|Theta_m|_F^2`.
    pub lhs: f64,
    /// `C_m E_m`.
    pub rhs: f64,
    /// Same with the `pi_min` coefficient.
    pub rhs_loose: f64,
    pub holds: bool,
}

pub fn interface_check(
    theta: &DMatrix<f64>,
    groups: &[FeatureGroup],
    dist: &LabelDistribution,
    m: usize,
    tol: f64,
) -> Result<InterfaceCheck> {
    let energy: f64 = groups.iter().filter(|g| g.m() == m).map(FeatureGroup::energy).sum();
    let lhs = theta.norm_squared();
    let rhs = counting_coefficient(dist, m)? * energy;
    let rhs_loose = loose_counting_coefficient(dist, m)? * energy;
    Ok(InterfaceCheck {
        lhs,
        rhs,
        rhs_loose,
        holds: lhs <= rhs + tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplicityConstants {
    pub m: usize,
    pub c1: f64,
    pub gamma1: f64,
    pub c2: f64,
    pub kappa: f64,
    pub worst_set_term: f64,
    #[serde(rename = "A_m")]
    pub a_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    /// Describes what kind of state the bound was evaluated at.
    pub state: String,
    pub per_m: Vec<MultiplicityConstants>,
    pub gamma2: f64,
    pub rho: f64,
    pub rhs: f64,
    pub lhs: f64,
    pub satisfied: bool,
    pub margin: f64,
}

impl BoundReport {
    pub fn compute(
        state: &UfmState,
        dist: &LabelDistribution,
        spectra: &[CenteredSpectrum],
        c1_per_m: &BTreeMap<usize, f64>,
        tol: f64,
    ) -> Result<Self> {
        state.check_against(dist)?;
        let rho = state.w.norm_squared();
        let mut per_m = Vec::new();
        for m in dist.multiplicities() {
            let c1 = *c1_per_m.get(&m).ok_or(Error::MissingC1(m))?;
            let consts = affine_bound(dist.k(), m, c1)?;
            let kappa = spectrum_for(spectra, m)?.kappa;
            per_m.push(MultiplicityConstants {
                m,
                c1,
                gamma1: consts.gamma1,
                c2: consts.c2,
                kappa,
                worst_set_term: dist.worst_set_term(m)?,
                a_m: a_m(dist, m, kappa)?,
            });
        }
        let gamma2 = gamma2(dist, c1_per_m)?;
        let rhs = risk_bound_rhs(dist, spectra, c1_per_m, state.lambda_w, state.lambda_h, rho)?;
        let lhs = objective(state)?.g - gamma2;
        let margin = lhs - rhs;
        Ok(Self {
            state: state_label(state).into(),
            per_m,
            gamma2,
            rho,
            rhs,
            lhs,
            satisfied: margin >= -tol,
            margin,
        })
    }
}

pub fn state_label(state: &UfmState) -> &'static str {
    if state.converged {
        "best-found minimizer"
    } else {
        "non-converged state"
    }
}

/// The `c1` in `grid` maximizing `c2 - gamma1 A_m sqrt(lambda_w/lambda_h) rho`,
/// the multiplicity's contribution to `Gamma_2 + rhs`. The margin splits into
/// such per-multiplicity terms, so this is also the grid's smallest margin.
pub fn select_c1(
    dist: &LabelDistribution,
    spectra: &[CenteredSpectrum],
    m: usize,
    grid: &[f64],
    lambda_w: f64,
    lambda_h: f64,
    rho: f64,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::Config("empty c1 grid".into()));
    }
    let ratio = (lambda_w / lambda_h).sqrt();
    let a = a_m(dist, m, spectrum_for(spectra, m)?.kappa)?;
    let mut best: Option<(f64, f64)> = None;
    for &c1 in grid {
        let consts = affine_bound(dist.k(), m, c1)?;
        let value = consts.c2 - consts.gamma1 * a * ratio * rho;
        if best.is_none_or(|(v, _)| value > v) {
            best = Some((value, c1));
        }
    }
    Ok(best.expect("nonempty grid").1)
}

/// One inequality in the chain: `slack = larger side - smaller side`, and
/// `scale` the size of the compared terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageSlack {
    pub stage: &'static str,
    pub slack: f64,
    pub scale: f64,
}

impl StageSlack {
    fn new(stage: &'static str, larger: f64, smaller: f64) -> Self {
        Self {
            stage,
            slack: larger - smaller,
            scale: larger.abs().max(smaller.abs()),
        }
    }

    /// `slack / scale`, zero when both sides vanish.
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            self.slack / self.scale
        }
    }

    pub fn holds(&self) -> bool {
        self.relative() >= -CHAIN_ROUNDING
    }
}

/// Slacks of the chain for one multiplicity, in order: affine
/// (`g_m - c2` over `gamma1 <Theta_m, W>`), young (`<Theta_m, W>` over
/// `-|W| |Theta_m|`), spectral (`T_m` over `|Theta_m|^2`), trace
/// (`Tr(B)/kappa |Theta_m|^2` over `T_m`), interface (`C_m E_m` over
/// `|Theta_m|^2`) and energy (`|H|^2` over `E_m`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSlacks {
    pub m: usize,
    pub c1: f64,
    pub stages: Vec<StageSlack>,
    /// `|<Theta_m, W> - (1/N_m) sum <1 - (K/m) 1_S, W h>|`, zero up to rounding.
    pub contrast_identity: f64,
}

impl ChainSlacks {
    pub fn stage(&self, name: &str) -> Option<&StageSlack> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn min_relative_slack(&self) -> f64 {
        self.stages.iter().map(StageSlack::relative).fold(f64::INFINITY, f64::min)
    }

    pub fn holds(&self) -> bool {
        self.stages.iter().all(StageSlack::holds)
    }
}

/// Chain slacks of multiplicity `m` at `state` for one `c1`.
pub fn chain_slacks(
    state: &UfmState,
    dist: &LabelDistribution,
    spectra: &[CenteredSpectrum],
    m: usize,
    c1: f64,
) -> Result<ChainSlacks> {
    let k = dist.k();
    let consts = affine_bound(k, m, c1)?;
    let n_m = dist.group_total(m)? as f64;
    let mut g_m = 0.0;
    let mut direct = 0.0;
    for g in state.groups_of(m) {
        for h in &g.replicas {
            let z = &state.w * h;
            g_m += g.weight() * pal_loss(z.as_slice(), &g.set)?;
            direct += g.weight() * contrast(z.as_slice(), &g.set);
        }
    }
    g_m /= n_m;
    direct /= n_m;
    let theta = theta_matrix(&state.groups, k, m)?;
    let inner = theta.dot(&state.w);
    let theta_sq = theta.norm_squared();
    let spectrum = spectrum_for(spectra, m)?;
    let pi = centering_projector(k);
    let b = &pi * &spectrum.g * &pi;
    let t_m = (theta.transpose() * &b * &theta).trace() / spectrum.kappa;
    let e_m = state.group_energy(m);
    Ok(ChainSlacks {
        m,
        c1,
        stages: vec![
            StageSlack::new("affine", g_m - consts.c2, consts.gamma1 * inner),
            StageSlack::new("young", inner, -state.w.norm() * theta_sq.sqrt()),
            StageSlack::new("spectral", t_m, theta_sq),
            StageSlack::new("trace", b.trace() / spectrum.kappa * theta_sq, t_m),
            StageSlack::new("interface", counting_coefficient(dist, m)? * e_m, theta_sq),
            StageSlack::new("energy", state.feature_energy(), e_m),
        ],
        contrast_identity: (inner - direct).abs(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProofChain {
    pub per_m: Vec<ChainSlacks>,
    /// `|lambda_H |H|^2 - lambda_W |W|^2| / (lambda_W |W|^2)`.
    pub scaling_residual: f64,
}

impl ProofChain {
    pub fn compute(
        state: &UfmState,
        dist: &LabelDistribution,
        spectra: &[CenteredSpectrum],
        c1_per_m: &BTreeMap<usize, f64>,
    ) -> Result<Self> {
        state.check_against(dist)?;
        let per_m = dist
            .multiplicities()
            .map(|m| {
                let c1 = *c1_per_m.get(&m).ok_or(Error::MissingC1(m))?;
                chain_slacks(state, dist, spectra, m, c1)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            per_m,
            scaling_residual: scaling_residual(state),
        })
    }

    pub fn min_relative_slack(&self) -> f64 {
        self.per_m.iter().map(ChainSlacks::min_relative_slack).fold(f64::INFINITY, f64::min)
    }

    pub fn holds(&self) -> bool {
        self.per_m.iter().all(ChainSlacks::holds)
    }

    /// Rows `m,c1,stage,slack,scale`.
    pub fn to_csv(&self) -> String {
        chain_csv(&self.per_m)
    }
}

pub fn chain_csv(chain: &[ChainSlacks]) -> String {
    let mut out = String::from("m,c1,stage,slack,scale\n");
    for s in chain {
        for st in &s.stages {
            out.push_str(&format!("{},{},{},{:e},{:e}\n", s.m, s.c1, st.stage, st.slack, st.scale));
        }
    }
    out
}

/// `|lambda_H |H|^2 - lambda_W |W|^2| / (lambda_W |W|^2)`.
pub fn scaling_residual(state: &UfmState) -> f64 {
    let w = state.lambda_w * state.w.norm_squared();
    let h = state.lambda_h * state.feature_energy();
    (h - w).abs() / w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label_space::Scenario;
    use crate::ufm::{restart_rng, UfmConfig};

    fn uniform_singletons(n: u64) -> LabelDistribution {
        Scenario::Balanced { k: 4, n1: n, n2: 0 }.build().unwrap()
    }

    #[test]
    fn a_m_uniform_singletons() {
        for n in [1u64, 5, 40] {
            let d = uniform_singletons(n);
            let a = a_m(&d, 1, 0.25).unwrap();
            assert!((a - (102.0 / n as f64).sqrt()).abs() < 1e-12);
            let halved = a_m(&d, 1, 0.125).unwrap();
            assert!((halved / a - 2f64.sqrt()).abs() < 1e-12);
        }
        let a1 = a_m(&uniform_singletons(3), 1, 0.25).unwrap();
        let a4 = a_m(&uniform_singletons(12), 1, 0.25).unwrap();
        assert!((a4 / a1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn a_m_rejects_degenerate_kappa() {
        let d = uniform_singletons(2);
        assert!(matches!(a_m(&d, 1, 0.0), Err(Error::SpectralDegeneracy { m: 1, .. })));
        assert!(matches!(a_m(&d, 1, 1e-11), Err(Error::SpectralDegeneracy { .. })));
    }

    #[test]
    fn rhs_zero_and_linear() {
        let d = uniform_singletons(2);
        let spectra = CenteredSpectrum::all(&d).unwrap();
        let c1: BTreeMap<usize, f64> = [(1, 1.0)].into();
        assert_eq!(risk_bound_rhs(&d, &spectra, &c1, 1e-2, 1e-2, 0.0).unwrap(), 0.0);
        let r1 = risk_bound_rhs(&d, &spectra, &c1, 1e-2, 1e-2, 1.0).unwrap();
        let r3 = risk_bound_rhs(&d, &spectra, &c1, 1e-2, 1e-2, 3.0).unwrap();
        assert!(r1 < 0.0 && (r3 - 3.0 * r1).abs() < 1e-12);
        let r4 = risk_bound_rhs(&d, &spectra, &c1, 4e-2, 1e-2, 1.0).unwrap();
        assert!((r4 - 2.0 * r1).abs() < 1e-12);
        // gamma1 = 1/6, A = sqrt(102/2), rhs = -gamma1 A.
        assert!((r1 + (51f64).sqrt() / 6.0).abs() < 1e-12);
    }

    #[test]
    fn theta_constant_features() {
        let d = uniform_singletons(3);
        let mut s = UfmState::zeros(&d, 2, 1, 1.0, 1.0);
        for g in &mut s.groups {
            g.replicas[0] = DVector::from_vec(vec![0.7, -1.1]);
        }
        let theta = theta_matrix(&s.groups, 4, 1).unwrap();
        assert!(theta.norm() < 1e-15);
    }

    #[test]
    fn theta_columns_sum_to_zero() {
        let d = LabelDistribution::from_entries(
            5,
            [(vec![0, 1], 3), (vec![2, 3], 1), (vec![1, 4], 7), (vec![0, 3], 2), (vec![2, 4], 4)],
        )
        .unwrap();
        let cfg = UfmConfig { replicas: 2, init_scale: 1.0, ..Default::default() };
        let s = UfmState::random(&d, &cfg, &mut restart_rng(5, 0));
        let theta = theta_matrix(&s.groups, 5, 2).unwrap();
        for c in 0..theta.ncols() {
            assert!(theta.column(c).sum().abs() < 1e-12);
        }
        assert!(matches!(theta_matrix(&s.groups, 5, 1), Err(Error::EmptyGroup(1))));
    }

    #[test]
    fn loose_coefficient_dominates() {
        let d = Scenario::MultiplicityOneImbalance { k: 5, n1: 40, n2: 10, ratio: 0.2, subset: None }
            .build()
            .unwrap();
        for m in [1, 2] {
            assert!(loose_counting_coefficient(&d, m).unwrap() >= counting_coefficient(&d, m).unwrap());
        }
    }

    #[test]
    fn chain_holds_at_random_state() {
        let d = Scenario::Balanced { k: 4, n1: 3, n2: 2 }.build().unwrap();
        let spectra = CenteredSpectrum::all(&d).unwrap();
        let c1: BTreeMap<usize, f64> = [(1, 0.5), (2, 2.0)].into();
        let cfg = UfmConfig { replicas: 2, init_scale: 1.0, ..Default::default() };
        for seed in 0..10 {
            let s = UfmState::random(&d, &cfg, &mut restart_rng(seed, 0));
            let chain = ProofChain::compute(&s, &d, &spectra, &c1).unwrap();
            assert!(chain.holds(), "{chain:?}");
            assert!(chain.per_m.iter().all(|c| c.contrast_identity < 1e-12));
            assert!(chain.to_csv().starts_with("m,c1,stage,slack,scale\n"));
        }
    }

    #[test]
    fn select_c1_picks_largest_bound() {
        let d = uniform_singletons(4);
        let spectra = CenteredSpectrum::all(&d).unwrap();
        let grid = DEFAULT_C1_GRID;
        let chosen = select_c1(&d, &spectra, 1, &grid, 1e-2, 1e-2, 2.0).unwrap();
        let value = |c1: f64| {
            let map: BTreeMap<usize, f64> = [(1, c1)].into();
            gamma2(&d, &map).unwrap() + risk_bound_rhs(&d, &spectra, &map, 1e-2, 1e-2, 2.0).unwrap()
        };
        assert!(grid.iter().all(|&c| value(c) <= value(chosen) + 1e-15));
    }
}
