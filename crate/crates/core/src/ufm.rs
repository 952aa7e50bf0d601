//! Regularized PAL objective over unconstrained features.
//!
//! ```text
//! f(W, H) = (1/N) sum_{m,S,i} L(W h_{m,S,i}, S) + lambda_W/2 |W|_F^2 + lambda_H/2 |H|_F^2
//! ```
//!
//! Features are stored per label set rather than per sample: group `(m, S)`
//! holds `replicas` vectors, each standing in for `r(m, S) / replicas`
//! samples.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_space::{LabelDistribution, LabelSet};
use crate::pal::{pal_grad, pal_loss, softmax};

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-30;

fn default_lambda() -> f64 {
    5e-3
}
fn default_replicas() -> usize {
    1
}
fn default_lr0() -> f64 {
    1.0
}
fn default_max_iters() -> usize {
    200_000
}
fn default_grad_tol() -> f64 {
    1e-10
}
fn default_restarts() -> usize {
    10
}
fn default_init_scale() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UfmConfig {
    /// Feature dimension; `None` means `K`.
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default = "default_lambda")]
    pub lambda_w: f64,
    #[serde(default = "default_lambda")]
    pub lambda_h: f64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

impl Default for UfmConfig {
    fn default() -> Self {
        Self {
            d: None,
            lambda_w: default_lambda(),
            lambda_h: default_lambda(),
            replicas: default_replicas(),
            lr0: default_lr0(),
            max_iters: default_max_iters(),
            grad_tol: default_grad_tol(),
            restarts: default_restarts(),
            seed: 0,
            init_scale: default_init_scale(),
        }
    }
}

impl UfmConfig {
    pub fn dim(&self, k: usize) -> usize {
        self.d.unwrap_or(k)
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        let d = self.dim(k);
        let bad = |msg: String| Err(Error::Config(msg));
        if d + 1 < k {
            return bad(format!("feature dimension d = {d} must be at least K - 1 = {}", k - 1));
        }
        if !(self.lambda_w > 0.0 && self.lambda_h > 0.0) {
            return bad("lambda_w and lambda_h must be positive".into());
        }
        if self.replicas == 0 {
            return bad("replicas must be at least 1".into());
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive".into());
        }
        if !(self.lr0 > 0.0) {
            return bad("lr0 must be positive".into());
        }
        if self.restarts == 0 {
            return bad("restarts must be at least 1".into());
        }
        if !(self.init_scale > 0.0) {
            return bad("init_scale must be positive".into());
        }
        Ok(())
    }
}

/// Replicated features for one label set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGroup {
    pub set: LabelSet,
    /// Sample count `r(m, S)`.
    pub count: u64,
    pub replicas: Vec<DVector<f64>>,
}

impl FeatureGroup {
    pub fn m(&self) -> usize {
        self.set.len()
    }

    /// Number of samples each replica stands for.
    pub fn weight(&self) -> f64 {
        self.count as f64 / self.replicas.len() as f64
    }

    /// Mean of the replicas.
    pub fn prototype(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.replicas[0].len());
        for h in &self.replicas {
            acc += h;
        }
        acc / self.replicas.len() as f64
    }

    /// `sum_i |h_{m,S,i}|^2` over the samples of this group.
    pub fn energy(&self) -> f64 {
        self.weight() * self.replicas.iter().map(|h| h.norm_squared()).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UfmState {
    pub w: DMatrix<f64>,
    pub groups: Vec<FeatureGroup>,
    pub lambda_w: f64,
    pub lambda_h: f64,
    pub objective_value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl UfmState {
    /// All-zero state shaped for `dist`, groups ordered by `(m, S)`.
    pub fn zeros(dist: &LabelDistribution, d: usize, replicas: usize, lambda_w: f64, lambda_h: f64) -> Self {
        let mut groups = Vec::new();
        for m in dist.multiplicities() {
            for (set, &count) in dist.group(m).expect("present") {
                if count == 0 {
                    continue;
                }
                groups.push(FeatureGroup {
                    set: set.clone(),
                    count,
                    replicas: vec![DVector::zeros(d); replicas.max(1)],
                });
            }
        }
        Self {
            w: DMatrix::zeros(dist.k(), d),
            groups,
            lambda_w,
            lambda_h,
            objective_value: f64::NAN,
            grad_norm: f64::NAN,
            iterations: 0,
            converged: false,
        }
    }

    /// Entries drawn i.i.d. from `Normal(0, init_scale^2)`.
    pub fn random(dist: &LabelDistribution, cfg: &UfmConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut state = Self::zeros(dist, cfg.dim(dist.k()), cfg.replicas, cfg.lambda_w, cfg.lambda_h);
        let normal = Normal::new(0.0, cfg.init_scale).expect("positive scale");
        for v in state.w.iter_mut() {
            *v = normal.sample(rng);
        }
        for g in &mut state.groups {
            for h in &mut g.replicas {
                for v in h.iter_mut() {
                    *v = normal.sample(rng);
                }
            }
        }
        state
    }

    pub fn k(&self) -> usize {
        self.w.nrows()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    /// `N`.
    pub fn sample_total(&self) -> u64 {
        self.groups.iter().map(|g| g.count).sum()
    }

    /// Weighted `|H|_F^2`, i.e. the per-sample sum.
    pub fn feature_energy(&self) -> f64 {
        self.groups.iter().map(FeatureGroup::energy).sum()
    }

    /// `E_m`, the per-sample feature energy of multiplicity group `m`.
    pub fn group_energy(&self, m: usize) -> f64 {
        self.groups.iter().filter(|g| g.m() == m).map(FeatureGroup::energy).sum()
    }

    pub fn groups_of(&self, m: usize) -> impl Iterator<Item = &FeatureGroup> {
        self.groups.iter().filter(move |g| g.m() == m)
    }

    /// Count table implied by the stored groups.
    pub fn distribution(&self) -> Result<LabelDistribution> {
        LabelDistribution::from_entries(
            self.k(),
            self.groups.iter().map(|g| (g.set.classes().to_vec(), g.count)),
        )
    }

    /// Checks that every positive-count set of `dist` has a group and vice versa.
    pub fn check_against(&self, dist: &LabelDistribution) -> Result<()> {
        let own = self.distribution()?;
        let strip = |d: &LabelDistribution| -> Vec<(Vec<usize>, u64)> {
            d.multiplicities()
                .flat_map(|m| d.group(m).expect("present").iter().filter(|(_, &r)| r > 0))
                .map(|(s, &r)| (s.classes().to_vec(), r))
                .collect()
        };
        if own.k() != dist.k() || strip(&own) != strip(dist) {
            return Err(Error::Config("UFM state does not match the count table".into()));
        }
        Ok(())
    }
}

/// Objective split into its three terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Objective {
    /// Empirical risk `g(WH)`.
    pub g: f64,
    pub reg_w: f64,
    pub reg_h: f64,
    pub total: f64,
}

pub fn objective(state: &UfmState) -> Result<Objective> {
    let n = state.sample_total() as f64;
    let mut g = 0.0;
    for group in &state.groups {
        let w = group.weight();
        for h in &group.replicas {
            let z = &state.w * h;
            g += w * pal_loss(z.as_slice(), &group.set)?;
        }
    }
    g /= n;
    let reg_w = 0.5 * state.lambda_w * state.w.norm_squared();
    let reg_h = 0.5 * state.lambda_h * state.feature_energy();
    let total = g + reg_w + reg_h;
    if !total.is_finite() {
        return Err(Error::Numeric("objective is not finite".into()));
    }
    Ok(Objective { g, reg_w, reg_h, total })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub dw: DMatrix<f64>,
    /// Indexed like `state.groups[g].replicas[i]`.
    pub dh: Vec<Vec<DVector<f64>>>,
}

impl Gradients {
    /// `|dW|_F + max_i |dh_i|`.
    pub fn norm(&self) -> f64 {
        let max_h = self
            .dh
            .iter()
            .flatten()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        self.dw.norm() + max_h
    }

    pub fn squared_norm(&self) -> f64 {
        self.dw.norm_squared() + self.dh.iter().flatten().map(|v| v.norm_squared()).sum::<f64>()
    }
}

pub fn gradients(state: &UfmState) -> Result<Gradients> {
    let n = state.sample_total() as f64;
    let mut dw = state.w.clone() * state.lambda_w;
    let mut dh = Vec::with_capacity(state.groups.len());
    for group in &state.groups {
        let w = group.weight();
        let mut per_group = Vec::with_capacity(group.replicas.len());
        for h in &group.replicas {
            let z = &state.w * h;
            let gz = DVector::from_vec(pal_grad(z.as_slice(), &group.set)?);
            dw.ger(w / n, &gz, h, 1.0);
            let mut g_h = state.w.tr_mul(&gz) * (w / n);
            g_h.axpy(state.lambda_h * w, h, 1.0);
            per_group.push(g_h);
        }
        dh.push(per_group);
    }
    Ok(Gradients { dw, dh })
}

/// `f(x - t * grad) - f(x)`, evaluated from differences so that it stays
/// accurate when the change is far below the rounding level of `f` itself.
pub fn objective_delta(state: &UfmState, grads: &Gradients, t: f64) -> Result<f64> {
    let n = state.sample_total() as f64;
    let mut loss_delta = 0.0;
    let mut reg_h_delta = 0.0;
    for (group, dh_group) in state.groups.iter().zip(&grads.dh) {
        let w = group.weight();
        let m = group.m() as f64;
        for (h, dh) in group.replicas.iter().zip(dh_group) {
            let z = &state.w * h;
            // z' - z = -t (dW h + W dh) + t^2 dW dh
            let mut dz = &grads.dw * h + &state.w * dh;
            dz *= -t;
            dz.axpy(t * t, &(&grads.dw * dh), 1.0);
            let d = if dz.amax() <= 1.0 {
                let p = softmax(z.as_slice());
                let s: f64 = p.iter().zip(dz.iter()).map(|(p, d)| p * d.exp_m1()).sum();
                m * s.ln_1p() - group.set.iter().map(|k| dz[k]).sum::<f64>()
            } else {
                let z_new = &z + &dz;
                pal_loss(z_new.as_slice(), &group.set)? - pal_loss(z.as_slice(), &group.set)?
            };
            loss_delta += w * d;
            // |h - t dh|^2 - |h|^2 = -t <dh, 2h - t dh>
            reg_h_delta += w * (-t) * dh.dot(&(h * 2.0 - dh * t));
        }
    }
    let reg_w_delta = -t * grads.dw.dot(&(&state.w * 2.0 - &grads.dw * t));
    let total = loss_delta / n + 0.5 * state.lambda_w * reg_w_delta + 0.5 * state.lambda_h * reg_h_delta;
    if total.is_nan() {
        return Err(Error::Numeric("objective change is NaN".into()));
    }
    Ok(total)
}

/// Applies `x <- x - t * grad`.
fn step(state: &mut UfmState, grads: &Gradients, t: f64) {
    state.w -= &grads.dw * t;
    for (group, dh_group) in state.groups.iter_mut().zip(&grads.dh) {
        for (h, dh) in group.replicas.iter_mut().zip(dh_group) {
            h.axpy(-t, dh, 1.0);
        }
    }
}

/// Gradient descent with halving backtracking from the current state.
/// Accepted objective changes are pushed to `trace` when given.
pub fn descend(state: &mut UfmState, cfg: &UfmConfig, mut trace: Option<&mut Vec<f64>>) -> Result<()> {
    let mut t = cfg.lr0;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let grads = gradients(state)?;
        if grads.norm() <= cfg.grad_tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iters {
            break;
        }
        let sq = grads.squared_norm();
        let accepted = loop {
            let delta = objective_delta(state, &grads, t)?;
            if delta <= -ARMIJO * t * sq {
                break Some(delta);
            }
            t *= 0.5;
            if t < MIN_STEP {
                break None;
            }
        };
        let Some(delta) = accepted else { break };
        step(state, &grads, t);
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(delta);
        }
        iterations += 1;
        t *= 2.0;
    }
    state.objective_value = objective(state)?.total;
    state.grad_norm = gradients(state)?.norm();
    state.iterations = iterations;
    state.converged = converged;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartSummary {
    pub index: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    /// Lowest-objective state over all restarts.
    pub best: UfmState,
    pub restarts: Vec<RestartSummary>,
}

impl Optimized {
    pub fn all_converged(&self) -> bool {
        self.restarts.iter().all(|r| r.converged)
    }

    /// `(max - min) / |min|` over the objectives of converged restarts.
    pub fn objective_spread(&self) -> f64 {
        let vals: Vec<f64> = self.restarts.iter().filter(|r| r.converged).map(|r| r.objective).collect();
        if vals.is_empty() {
            return f64::NAN;
        }
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo) / lo.abs().max(f64::MIN_POSITIVE)
    }
}

/// Deterministic generator for restart `index`.
pub fn restart_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Runs `cfg.restarts` independent descents and keeps the best.
pub fn optimize(cfg: &UfmConfig, dist: &LabelDistribution) -> Result<Optimized> {
    cfg.validate(dist.k())?;
    let runs: Vec<UfmState> = (0..cfg.restarts)
        .into_par_iter()
        .map(|i| {
            let mut state = UfmState::random(dist, cfg, &mut restart_rng(cfg.seed, i));
            descend(&mut state, cfg, None)?;
            Ok(state)
        })
        .collect::<Result<_>>()?;
    let restarts = runs
        .iter()
        .enumerate()
        .map(|(index, s)| RestartSummary {
            index,
            objective: s.objective_value,
            grad_norm: s.grad_norm,
            iterations: s.iterations,
            converged: s.converged,
        })
        .collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.objective_value < a.objective_value { b } else { a })
        .expect("at least one restart");
    Ok(Optimized { best, restarts })
}

/// On-disk form of a UFM state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    pub lambda_w: f64,
    pub lambda_h: f64,
    /// Row-major `K x d`.
    pub w: Vec<f64>,
    /// Keyed by `"m/S"`, e.g. `"2/0,3"`.
    pub features: BTreeMap<String, CheckpointGroup>,
    #[serde(default)]
    pub config: Option<UfmConfig>,
    pub convergence: Convergence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointGroup {
    pub count: u64,
    pub replicas: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Convergence {
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default)]
    pub restarts: Vec<RestartRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestartRecord {
    pub index: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl Checkpoint {
    pub fn from_state(state: &UfmState, config: Option<&UfmConfig>, restarts: &[RestartSummary]) -> Self {
        let (k, d) = (state.k(), state.d());
        let w = (0..k).flat_map(|i| (0..d).map(move |j| (i, j))).map(|ij| state.w[ij]).collect();
        let features = state
            .groups
            .iter()
            .map(|g| {
                (
                    format!("{}/{}", g.m(), g.set),
                    CheckpointGroup {
                        count: g.count,
                        replicas: g.replicas.iter().map(|h| h.iter().copied().collect()).collect(),
                    },
                )
            })
            .collect();
        Self {
            k,
            d,
            lambda_w: state.lambda_w,
            lambda_h: state.lambda_h,
            w,
            features,
            config: config.cloned(),
            convergence: Convergence {
                objective: state.objective_value,
                grad_norm: state.grad_norm,
                iterations: state.iterations,
                converged: state.converged,
                restarts: restarts
                    .iter()
                    .map(|r| RestartRecord {
                        index: r.index,
                        objective: r.objective,
                        grad_norm: r.grad_norm,
                        iterations: r.iterations,
                        converged: r.converged,
                    })
                    .collect(),
            },
        }
    }

    pub fn to_state(&self) -> Result<UfmState> {
        let (k, d) = (self.k, self.d);
        if self.w.len() != k * d {
            return Err(Error::Config(format!("W has {} entries, expected {}", self.w.len(), k * d)));
        }
        let w = DMatrix::from_row_slice(k, d, &self.w);
        let mut groups = Vec::with_capacity(self.features.len());
        for (key, entry) in &self.features {
            let (m_text, set_text) = key
                .split_once('/')
                .ok_or_else(|| Error::Config(format!("feature key {key:?} is not of the form m/S")))?;
            let m: usize = m_text
                .parse()
                .map_err(|_| Error::Config(format!("bad multiplicity in key {key:?}")))?;
            let set = LabelSet::parse(set_text, k)?;
            if set.len() != m {
                return Err(Error::Config(format!("key {key:?}: |S| differs from m")));
            }
            if entry.replicas.is_empty() || entry.replicas.iter().any(|h| h.len() != d) {
                return Err(Error::Config(format!("key {key:?}: replicas must be nonempty d-vectors")));
            }
            groups.push(FeatureGroup {
                set,
                count: entry.count,
                replicas: entry.replicas.iter().map(|h| DVector::from_vec(h.clone())).collect(),
            });
        }
        groups.sort_by(|a, b| (a.m(), &a.set).cmp(&(b.m(), &b.set)));
        Ok(UfmState {
            w,
            groups,
            lambda_w: self.lambda_w,
            lambda_h: self.lambda_h,
            objective_value: self.convergence.objective,
            grad_norm: self.convergence.grad_norm,
            iterations: self.convergence.iterations,
            converged: self.convergence.converged,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label_space::Scenario;
    use crate::spectral::centering_projector;

    fn small_dist() -> LabelDistribution {
        LabelDistribution::from_entries(
            4,
            [(vec![0], 3), (vec![1], 2), (vec![2], 5), (vec![3], 1), (vec![0, 2], 2), (vec![1, 3], 4)],
        )
        .unwrap()
    }

    fn random_state(dist: &LabelDistribution, seed: u64, scale: f64) -> UfmState {
        let cfg = UfmConfig { replicas: 2, init_scale: scale, ..Default::default() };
        UfmState::random(dist, &cfg, &mut restart_rng(seed, 0))
    }

    #[test]
    fn zero_state_objective() {
        let d = small_dist();
        let s = UfmState::zeros(&d, 4, 1, 5e-3, 5e-3);
        let o = objective(&s).unwrap();
        let expect = (11.0 * 4f64.ln() + 6.0 * 2.0 * 4f64.ln()) / 17.0;
        assert!((o.g - expect).abs() < 1e-14);
        assert_eq!(o.reg_w, 0.0);
        assert_eq!(o.reg_h, 0.0);
    }

    #[test]
    fn delta_matches_direct_difference() {
        let d = small_dist();
        let s = random_state(&d, 3, 1.0);
        let g = gradients(&s).unwrap();
        for t in [1e-3, 0.1, 1.0, 5.0] {
            let mut moved = s.clone();
            step(&mut moved, &g, t);
            let direct = objective(&moved).unwrap().total - objective(&s).unwrap().total;
            let delta = objective_delta(&s, &g, t).unwrap();
            assert!((direct - delta).abs() < 1e-12 * (1.0 + direct.abs()), "t={t}: {direct} vs {delta}");
        }
    }

    #[test]
    fn centering_never_increases_objective() {
        let d = small_dist();
        let pi = centering_projector(4);
        for seed in 0..20 {
            let s = random_state(&d, seed, 1.0);
            let mut centered = s.clone();
            centered.w = &pi * &s.w;
            let (a, b) = (objective(&s).unwrap(), objective(&centered).unwrap());
            assert!((a.g - b.g).abs() < 1e-12);
            assert!(b.total <= a.total + 1e-15);
        }
    }

    #[test]
    fn descent_is_monotone() {
        let d = small_dist();
        let mut s = random_state(&d, 1, 0.1);
        let cfg = UfmConfig { max_iters: 300, ..Default::default() };
        let mut trace = Vec::new();
        let before = objective(&s).unwrap().total;
        descend(&mut s, &cfg, Some(&mut trace)).unwrap();
        assert_eq!(trace.len(), 300);
        assert!(trace.iter().all(|&d| d <= 0.0));
        assert!(s.objective_value < before);
    }

    #[test]
    fn restarts_are_deterministic() {
        let d = Scenario::Balanced { k: 3, n1: 2, n2: 0 }.build().unwrap();
        let cfg = UfmConfig { restarts: 3, max_iters: 200, grad_tol: 1e-12, ..Default::default() };
        let a = optimize(&cfg, &d).unwrap();
        let b = optimize(&cfg, &d).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let bad_d = UfmConfig { d: Some(2), ..Default::default() };
        assert!(bad_d.validate(4).is_err());
        assert!(UfmConfig { d: Some(3), ..Default::default() }.validate(4).is_ok());
        assert!(UfmConfig { replicas: 0, ..Default::default() }.validate(4).is_err());
        assert!(UfmConfig { lambda_h: 0.0, ..Default::default() }.validate(4).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let d = small_dist();
        let mut s = random_state(&d, 9, 0.5);
        s.objective_value = objective(&s).unwrap().total;
        s.grad_norm = gradients(&s).unwrap().norm();
        let cp = Checkpoint::from_state(&s, None, &[]);
        let text = serde_json::to_string(&cp).unwrap();
        let back: Checkpoint = serde_json::from_str(&text).unwrap();
        let restored = back.to_state().unwrap();
        assert_eq!(restored.w, s.w);
        assert_eq!(restored.groups, s.groups);
        restored.check_against(&d).unwrap();
        assert!(cp.features.contains_key("2/0,2"));
    }
}
