//! Experiment orchestration behind the `mlnc` command line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{chain_csv, chain_slacks, interface_check, select_c1, theta_matrix, BoundReport, ChainSlacks, DEFAULT_C1_GRID};
use crate::diagnostics::{DiagnosticsReport, METRIC_CSV_HEADER};
use crate::error::{Error, Result};
use crate::label_space::{LabelDistribution, LabelSet, Scenario};
use crate::pal::{affine_bound, contrast, pal_loss};
use crate::spectral::{centering_projector, CenteredSpectrum};
use crate::ufm::{gradients, objective, optimize, restart_rng, Checkpoint, UfmConfig, UfmState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    ConfigError = 1,
    NonConvergence = 2,
    PropertyFailure = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
    Both,
}

impl Format {
    fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }
    fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

fn default_tol() -> f64 {
    1e-9
}

/// Pass thresholds for the structural checks of `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub centering: f64,
    pub collapse: f64,
    pub self_duality: f64,
    pub generation: f64,
    /// Relative to the logit norm.
    pub two_level: f64,
    pub scaling: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            centering: 1e-6,
            collapse: 1e-6,
            self_duality: 1e-3,
            generation: 1e-3,
            two_level: 1e-4,
            scaling: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub ufm: UfmConfig,
    /// `c1` values per multiplicity; missing multiplicities use the default grid.
    #[serde(default)]
    pub c1_grid: BTreeMap<usize, Vec<f64>>,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub format: Option<Format>,
    #[serde(default)]
    pub verbosity: u8,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Allowed negative margin for the risk lower bound.
    #[serde(default = "default_tol")]
    pub bound_tol: f64,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Builds the distribution and checks the config against it.
    pub fn distribution(&self) -> Result<LabelDistribution> {
        let dist = self.scenario.build()?;
        dist.check_coverage()?;
        self.ufm.validate(dist.k())?;
        let present: Vec<usize> = dist.multiplicities().collect();
        for (m, grid) in &self.c1_grid {
            if !present.contains(m) {
                return Err(Error::Config(format!("c1_grid names multiplicity {m}, absent from the scenario")));
            }
            if grid.is_empty() || grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
                return Err(Error::Config(format!("c1_grid for m = {m} must hold positive finite values")));
            }
        }
        if !(self.bound_tol >= 0.0) {
            return Err(Error::Config("bound_tol must be nonnegative".into()));
        }
        Ok(dist)
    }

    pub fn grid(&self, m: usize) -> Vec<f64> {
        self.c1_grid.get(&m).cloned().unwrap_or_else(|| DEFAULT_C1_GRID.to_vec())
    }
}

/// Where and how reports are written.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputOptions {
    pub dir: PathBuf,
    pub format: Format,
}

impl OutputOptions {
    /// Precedence: explicit flag, then `OUTPUT_DIR`, then the config, then `out`.
    pub fn resolve(flag: Option<&Path>, env: Option<String>, config: Option<&ExperimentConfig>, format: Option<Format>) -> Self {
        let dir = flag
            .map(Path::to_path_buf)
            .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
            .or_else(|| config.and_then(|c| c.output_dir.as_ref()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        let format = format.or_else(|| config.and_then(|c| c.format)).unwrap_or_default();
        Self { dir, format }
    }

    fn write(&self, name: &str, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|source| Error::Io {
            path: self.dir.display().to_string(),
            source,
        })?;
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        written.push(path);
        Ok(())
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

/// Result of a command: exit status, files written and lines for the terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub status: ExitStatus,
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumEntry {
    #[serde(flatten)]
    pub spectrum: CenteredSpectrum,
    pub classification: String,
    pub exchangeable_kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    #[serde(rename = "K")]
    pub k: usize,
    pub spectra: Vec<SpectrumEntry>,
}

impl SpectrumReport {
    pub fn compute(dist: &LabelDistribution) -> Result<Self> {
        let spectra = CenteredSpectrum::all(dist)?
            .into_iter()
            .map(|s| {
                let classification = s.classify().case_label().to_string();
                let exchangeable_kappa = crate::spectral::exchangeable_kappa(dist.k(), s.m);
                SpectrumEntry {
                    spectrum: s,
                    classification,
                    exchangeable_kappa,
                }
            })
            .collect();
        Ok(Self { k: dist.k(), spectra })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,kappa,centered_trace,classification\n");
        for e in &self.spectra {
            writeln!(
                out,
                "{},{:e},{:e},{}",
                e.spectrum.m, e.spectrum.kappa, e.spectrum.centered_trace, e.classification
            )
            .expect("write to string");
        }
        out
    }
}

pub fn cmd_spectrum(config: &ExperimentConfig, out: &OutputOptions) -> Result<Outcome> {
    let dist = config.distribution()?;
    let report = SpectrumReport::compute(&dist)?;
    let mut files = Vec::new();
    if out.format.json() {
        out.write("spectrum.json", &to_json(&report), &mut files)?;
    }
    if out.format.csv() {
        out.write("spectrum.csv", &report.to_csv(), &mut files)?;
    }
    let lines = report
        .spectra
        .iter()
        .map(|e| format!("m={} kappa={:e} {}", e.spectrum.m, e.spectrum.kappa, e.classification))
        .collect();
    Ok(Outcome {
        status: ExitStatus::Success,
        files,
        lines,
    })
}

/// Bound evaluation over the configured `c1` grids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsFile {
    /// `c1` per multiplicity giving the largest lower bound on `g(WH)`, which
    /// is also the smallest margin over the grid.
    pub tightest: BoundReport,
    /// Chain slacks for every multiplicity and grid value.
    pub chain: Vec<ChainSlacks>,
    /// Smallest `slack / scale` over the chain.
    pub min_relative_chain_slack: f64,
    pub chain_holds: bool,
    pub scaling_residual: f64,
}

impl BoundsFile {
    pub fn compute(
        state: &UfmState,
        dist: &LabelDistribution,
        spectra: &[CenteredSpectrum],
        config: &ExperimentConfig,
    ) -> Result<Self> {
        let rho = state.w.norm_squared();
        let mut tight = BTreeMap::new();
        let mut chain = Vec::new();
        for m in dist.multiplicities() {
            let grid = config.grid(m);
            for &c1 in &grid {
                chain.push(chain_slacks(state, dist, spectra, m, c1)?);
            }
            let chosen = select_c1(dist, spectra, m, &grid, state.lambda_w, state.lambda_h, rho)?;
            tight.insert(m, chosen);
        }
        let tightest = BoundReport::compute(state, dist, spectra, &tight, config.bound_tol)?;
        let min_relative_chain_slack = chain.iter().map(ChainSlacks::min_relative_slack).fold(f64::INFINITY, f64::min);
        let chain_holds = chain.iter().all(ChainSlacks::holds);
        Ok(Self {
            tightest,
            chain,
            min_relative_chain_slack,
            chain_holds,
            scaling_residual: crate::bounds::scaling_residual(state),
        })
    }

    pub fn to_csv(&self) -> String {
        chain_csv(&self.chain)
    }
}

fn load_checkpoint(path: &Path) -> Result<(UfmState, Option<UfmConfig>)> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cp: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok((cp.to_state()?, cp.config))
}

struct Solved {
    state: UfmState,
    restarts: Vec<crate::ufm::RestartSummary>,
    objective_spread: f64,
}

fn solve(config: &ExperimentConfig, dist: &LabelDistribution) -> Result<Solved> {
    let opt = optimize(&config.ufm, dist)?;
    let objective_spread = opt.objective_spread();
    Ok(Solved {
        state: opt.best,
        restarts: opt.restarts,
        objective_spread,
    })
}

/// Bound report for a checkpoint when given, otherwise for a fresh optimization.
pub fn cmd_bounds(config: &ExperimentConfig, out: &OutputOptions, checkpoint: Option<&Path>) -> Result<Outcome> {
    let dist = config.distribution()?;
    let state = match checkpoint {
        Some(p) => load_checkpoint(p)?.0,
        None => solve(config, &dist)?.state,
    };
    state.check_against(&dist)?;
    let spectra = CenteredSpectrum::all(&dist)?;
    let report = BoundsFile::compute(&state, &dist, &spectra, config)?;
    let mut files = Vec::new();
    if out.format.json() {
        out.write("bounds.json", &to_json(&report), &mut files)?;
    }
    if out.format.csv() {
        out.write("bounds_slack.csv", &report.to_csv(), &mut files)?;
    }
    let ok = report.tightest.satisfied && report.chain_holds;
    let lines = vec![
        format!("state: {}", report.tightest.state),
        format!("margin: {:e}", report.tightest.margin),
        format!("min relative chain slack: {:e}", report.min_relative_chain_slack),
    ];
    Ok(Outcome {
        status: if ok { ExitStatus::Success } else { ExitStatus::PropertyFailure },
        files,
        lines,
    })
}

/// Summary of a full run, written next to the detailed reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub converged: bool,
    pub objective: f64,
    pub grad_norm: f64,
    pub objective_spread: f64,
    pub bound_satisfied: bool,
    pub structural: BTreeMap<String, bool>,
    pub passed: bool,
}

fn structural_checks(diag: &DiagnosticsReport, t: &Thresholds) -> BTreeMap<String, bool> {
    let mut checks = BTreeMap::new();
    checks.insert("centering".to_string(), diag.centering_residual <= t.centering);
    checks.insert("collapse".to_string(), diag.collapse_residual <= t.collapse);
    if let Some(sd) = &diag.self_duality {
        checks.insert("self_duality".to_string(), sd.relative_residual <= t.self_duality && sd.sign > 0);
    }
    for g in &diag.generation {
        checks.insert(format!("generation_m{}", g.m), g.relative_residual <= t.generation);
    }
    checks.insert("two_level".to_string(), diag.two_level_max_relative <= t.two_level);
    checks.insert("scaling_identity".to_string(), diag.scaling_identity_residual <= t.scaling);
    checks
}

pub fn cmd_run(config: &ExperimentConfig, out: &OutputOptions) -> Result<Outcome> {
    let dist = config.distribution()?;
    let solved = solve(config, &dist)?;
    let state = &solved.state;
    let spectra = CenteredSpectrum::all(&dist)?;
    let bounds = BoundsFile::compute(state, &dist, &spectra, config)?;
    let diag = DiagnosticsReport::compute(state)?;
    let structural = structural_checks(&diag, &config.thresholds);
    let bound_ok = bounds.tightest.satisfied && bounds.chain_holds;
    let passed = state.converged && bound_ok && structural.values().all(|&v| v);
    let summary = RunSummary {
        converged: state.converged,
        objective: state.objective_value,
        grad_norm: state.grad_norm,
        objective_spread: solved.objective_spread,
        bound_satisfied: bound_ok,
        structural,
        passed,
    };
    let checkpoint = Checkpoint::from_state(state, Some(&config.ufm), &solved.restarts);
    let mut files = Vec::new();
    out.write("checkpoint.json", &to_json(&checkpoint), &mut files)?;
    if out.format.json() {
        out.write("bounds.json", &to_json(&bounds), &mut files)?;
        out.write("diagnostics.json", &to_json(&diag), &mut files)?;
        out.write("summary.json", &to_json(&summary), &mut files)?;
    }
    if out.format.csv() {
        out.write("bounds_slack.csv", &bounds.to_csv(), &mut files)?;
        let mut csv = METRIC_CSV_HEADER.to_string();
        csv.push_str(&diag.csv_rows(&format!("seed{}", config.ufm.seed)));
        out.write("metrics.csv", &csv, &mut files)?;
    }
    let mut lines = vec![
        format!("objective {:.15e} (spread {:e}), grad norm {:e}", state.objective_value, solved.objective_spread, state.grad_norm),
        format!("bound margin {:e}, min relative chain slack {:e}", bounds.tightest.margin, bounds.min_relative_chain_slack),
    ];
    for (name, ok) in &summary.structural {
        lines.push(format!("{name}: {}", if *ok { "ok" } else { "FAILED" }));
    }
    let status = if !state.converged {
        ExitStatus::NonConvergence
    } else if passed {
        ExitStatus::Success
    } else {
        ExitStatus::PropertyFailure
    };
    Ok(Outcome { status, files, lines })
}

/// Diagnostics for an external checkpoint.
pub fn cmd_diagnose(checkpoint: &Path, out: &OutputOptions, run_id: &str) -> Result<Outcome> {
    let (state, _) = load_checkpoint(checkpoint)?;
    let diag = DiagnosticsReport::compute(&state)?;
    let mut files = Vec::new();
    if out.format.json() {
        out.write("diagnostics.json", &to_json(&diag), &mut files)?;
    }
    if out.format.csv() {
        let mut csv = METRIC_CSV_HEADER.to_string();
        csv.push_str(&diag.csv_rows(run_id));
        out.write("metrics.csv", &csv, &mut files)?;
    }
    let lines = diag.metrics().into_iter().map(|(k, v)| format!("{k}: {v:e}")).collect();
    Ok(Outcome {
        status: ExitStatus::Success,
        files,
        lines,
    })
}

/// Deliberate defects used to confirm that the property suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Flip the sign of the linear term in the affine PAL bound.
    AffineSign,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub trials: usize,
    pub passed: usize,
    /// Smallest slack seen; negative values are violations.
    pub worst_slack: f64,
}

impl PropertyResult {
    pub fn ok(&self) -> bool {
        self.passed == self.trials
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub trials: usize,
    pub fault: Option<Fault>,
    pub properties: Vec<PropertyResult>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("property,trials,passed,worst_slack\n");
        for p in &self.properties {
            writeln!(out, "{},{},{},{:e}", p.name, p.trials, p.passed, p.worst_slack).expect("write to string");
        }
        out
    }
}

fn random_distribution(rng: &mut ChaCha8Rng, k: usize, m: usize) -> LabelDistribution {
    loop {
        let mut entries = Vec::new();
        let sets = rng.random_range(1..=8usize);
        for _ in 0..sets {
            let mut classes: Vec<usize> = (0..k).collect();
            for i in 0..m {
                let j = rng.random_range(i..k);
                classes.swap(i, j);
            }
            classes.truncate(m);
            classes.sort_unstable();
            if entries.iter().any(|(c, _): &(Vec<usize>, u64)| *c == classes) {
                continue;
            }
            entries.push((classes, rng.random_range(1..=20u64)));
        }
        if let Ok(d) = LabelDistribution::from_entries(k, entries) {
            return d;
        }
    }
}

/// Counts covering every class, so every `N_m^k > 0`.
fn random_covering_distribution(rng: &mut ChaCha8Rng, k: usize, m: usize) -> LabelDistribution {
    loop {
        let d = random_distribution(rng, k, m);
        if d.class_counts(m).map(|c| c.iter().all(|&n| n > 0)).unwrap_or(false) {
            return d;
        }
        // Add a covering family: consecutive windows of size m.
        let mut entries: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
        for (s, &r) in d.group(m).expect("present") {
            entries.insert(s.classes().to_vec(), r);
        }
        for start in (0..k).step_by(m) {
            let set: Vec<usize> = (0..m).map(|i| (start + i) % k).collect();
            let mut sorted = set.clone();
            sorted.sort_unstable();
            *entries.entry(sorted).or_insert(0) += rng.random_range(1..=5u64);
        }
        if let Ok(d) = LabelDistribution::from_entries(k, entries) {
            return d;
        }
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

fn random_state(rng: &mut ChaCha8Rng, dist: &LabelDistribution, d: usize, replicas: usize, scale: f64) -> UfmState {
    let mut state = UfmState::zeros(dist, d, replicas, rng.random_range(1e-3..1e-1), rng.random_range(1e-3..1e-1));
    state.w = random_matrix(rng, dist.k(), d, scale);
    for g in &mut state.groups {
        for h in &mut g.replicas {
            *h = DVector::from_fn(d, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0));
        }
    }
    state
}

struct Tally {
    name: &'static str,
    trials: usize,
    passed: usize,
    worst: f64,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            trials: 0,
            passed: 0,
            worst: f64::INFINITY,
        }
    }

    fn record(&mut self, slack: f64) {
        self.trials += 1;
        if slack >= 0.0 {
            self.passed += 1;
        }
        self.worst = self.worst.min(slack);
    }

    fn finish(self) -> PropertyResult {
        PropertyResult {
            name: self.name.to_string(),
            trials: self.trials,
            passed: self.passed,
            worst_slack: self.worst,
        }
    }
}

fn random_k_m(rng: &mut ChaCha8Rng, k_max: usize) -> (usize, usize) {
    let k = rng.random_range(3..=k_max);
    let m = rng.random_range(1..=(k - 1).min(4));
    (k, m)
}

/// Runs every randomized property suite `trials` times. Each suite reports
/// a slack that must be nonnegative; tolerances are folded into the slack.
pub fn property_suite(seed: u64, trials: usize, fault: Option<Fault>) -> Result<VerifyReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let mut results = Vec::new();

    let mut rng = restart_rng(seed, 0);
    let mut t = Tally::new("shift_invariance");
    for _ in 0..trials {
        let (k, m) = random_k_m(&mut rng, 10);
        let s = LabelSet::new(0..m, k)?;
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-10.0..10.0)).collect();
        let c = rng.random_range(-10.0..10.0);
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        t.record(1e-12 - (pal_loss(&shifted, &s)? - pal_loss(&z, &s)?).abs());
    }
    results.push(t.finish());

    let mut rng = restart_rng(seed, 1);
    let mut t = Tally::new("projection_invariance");
    for _ in 0..trials {
        let (k, m) = random_k_m(&mut rng, 6);
        let dist = random_distribution(&mut rng, k, m);
        let d = rng.random_range(k - 1..=k + 2);
        let state = random_state(&mut rng, &dist, d, 1, 2.0);
        let mut projected = state.clone();
        projected.w = centering_projector(k) * &state.w;
        let (a, b) = (objective(&state)?.total, objective(&projected)?.total);
        t.record(a - b + 1e-12 * a.abs());
    }
    results.push(t.finish());

    let mut rng = restart_rng(seed, 2);
    let mut t = Tally::new("affine_bound");
    let sign = if fault == Some(Fault::AffineSign) { -1.0 } else { 1.0 };
    for _ in 0..trials {
        let (k, m) = random_k_m(&mut rng, 10);
        let c1 = 2f64.powf(rng.random_range(-3.0..3.0));
        let consts = affine_bound(k, m, c1)?;
        let s = LabelSet::new(0..m, k)?;
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-8.0..8.0)).collect();
        let rhs = sign * consts.gamma1 * contrast(&z, &s) + consts.c2;
        t.record(pal_loss(&z, &s)? - rhs + 1e-12);
    }
    results.push(t.finish());

    let mut rng = restart_rng(seed, 3);
    let mut t = Tally::new("spectral_lower_bound");
    for _ in 0..trials {
        let (k, m) = random_k_m(&mut rng, 8);
        let dist = random_distribution(&mut rng, k, m);
        let spectrum = CenteredSpectrum::compute(&dist, m)?;
        let pi = centering_projector(k);
        let b = &pi * &spectrum.g * &pi;
        let cols = rng.random_range(1..=6);
        let z = random_matrix(&mut rng, k, cols, 3.0);
        let lhs = (z.transpose() * &b * &z).trace();
        let rhs = spectrum.kappa * (&pi * &z).norm_squared();
        t.record(lhs - rhs + 1e-10);
    }
    results.push(t.finish());

    let mut rng = restart_rng(seed, 4);
    let mut t = Tally::new("trace_inequality");
    for _ in 0..trials {
        let k = rng.random_range(2..=10);
        let rank = rng.random_range(1..=k);
        let a = random_matrix(&mut rng, k, rank, 2.0);
        let b = &a * a.transpose();
        let cols = rng.random_range(1..=6);
        let theta = random_matrix(&mut rng, k, cols, 3.0);
        let lhs = (theta.transpose() * &b * &theta).trace();
        let rhs = b.trace() * theta.norm_squared();
        t.record(rhs - lhs + 1e-10);
    }
    results.push(t.finish());

    let mut rng = restart_rng(seed, 5);
    let mut t = Tally::new("interface_inequality");
    for _ in 0..trials {
        let (k, m) = random_k_m(&mut rng, 7);
        let dist = random_covering_distribution(&mut rng, k, m);
        let (d, reps) = (rng.random_range(1..=6), rng.random_range(1..=3));
        let state = random_state(&mut rng, &dist, d, reps, 3.0);
        let theta = theta_matrix(&state.groups, k, m)?;
        let check = interface_check(&theta, &state.groups, &dist, m, 1e-10)?;
        t.record(check.rhs - check.lhs + 1e-10);
    }
    results.push(t.finish());

    let mut rng = restart_rng(seed, 6);
    let mut t = Tally::new("gradient_check");
    for _ in 0..trials {
        let (k, m) = random_k_m(&mut rng, 5);
        let dist = random_distribution(&mut rng, k, m);
        let d = rng.random_range(k - 1..=k + 1);
        let state = random_state(&mut rng, &dist, d, 1, 1.0);
        t.record(1e-6 - gradient_fd_error(&state, &mut rng)?);
    }
    results.push(t.finish());

    let mut rng = restart_rng(seed, 7);
    let mut t = Tally::new("scaling_identity");
    for _ in 0..trials {
        let (k, m) = random_k_m(&mut rng, 6);
        let dist = random_distribution(&mut rng, k, m);
        let reps = rng.random_range(1..=2);
        let state = random_state(&mut rng, &dist, k, reps, 2.0);
        t.record(1e-10 - balance_identity_error(&state)?);
    }
    results.push(t.finish());

    let passed = results.iter().all(PropertyResult::ok);
    Ok(VerifyReport {
        seed,
        trials,
        fault,
        properties: results,
        passed,
    })
}

/// Largest relative gap between analytic partial derivatives and central
/// differences over a random sample of coordinates.
fn gradient_fd_error(state: &UfmState, rng: &mut ChaCha8Rng) -> Result<f64> {
    let grads = gradients(state)?;
    let step = 1e-5;
    let f = |s: &UfmState| objective(s).map(|o| o.total);
    let scale = grads.squared_norm().sqrt().max(1e-8);
    let mut worst: f64 = 0.0;
    for _ in 0..4 {
        let (i, j) = (rng.random_range(0..state.k()), rng.random_range(0..state.d()));
        let (mut plus, mut minus) = (state.clone(), state.clone());
        plus.w[(i, j)] += step;
        minus.w[(i, j)] -= step;
        let fd = (f(&plus)? - f(&minus)?) / (2.0 * step);
        worst = worst.max((fd - grads.dw[(i, j)]).abs() / scale);
    }
    for _ in 0..4 {
        let g = rng.random_range(0..state.groups.len());
        let r = rng.random_range(0..state.groups[g].replicas.len());
        let c = rng.random_range(0..state.d());
        let (mut plus, mut minus) = (state.clone(), state.clone());
        plus.groups[g].replicas[r][c] += step;
        minus.groups[g].replicas[r][c] -= step;
        let fd = (f(&plus)? - f(&minus)?) / (2.0 * step);
        worst = worst.max((fd - grads.dh[g][r][c]).abs() / scale);
    }
    Ok(worst)
}

/// `|<dW, W> - <dH, H> - (lambda_W |W|^2 - lambda_H |H|^2)|`, relative to the
/// regularizer size. The risk term cancels because it is invariant under
/// `(W, H) -> (t W, H / t)`; at a critical point this is the scaling identity.
fn balance_identity_error(state: &UfmState) -> Result<f64> {
    let grads = gradients(state)?;
    let lhs_w = grads.dw.dot(&state.w);
    let mut lhs_h = 0.0;
    for (g, dh) in state.groups.iter().zip(&grads.dh) {
        for (h, d) in g.replicas.iter().zip(dh) {
            lhs_h += d.dot(h);
        }
    }
    let rw = state.lambda_w * state.w.norm_squared();
    let rh = state.lambda_h * state.feature_energy();
    Ok(((lhs_w - lhs_h) - (rw - rh)).abs() / (rw + rh).max(f64::MIN_POSITIVE))
}

pub fn cmd_verify(seed: u64, trials: usize, fault: Option<Fault>, out: &OutputOptions) -> Result<Outcome> {
    let report = property_suite(seed, trials, fault)?;
    let mut files = Vec::new();
    if out.format.json() {
        out.write("verify.json", &to_json(&report), &mut files)?;
    }
    if out.format.csv() {
        out.write("verify.csv", &report.to_csv(), &mut files)?;
    }
    let lines = report
        .properties
        .iter()
        .map(|p| {
            format!(
                "{}: {}/{} passed (worst slack {:e}){}",
                p.name,
                p.passed,
                p.trials,
                p.worst_slack,
                if p.ok() { "" } else { " FAILED" }
            )
        })
        .collect();
    Ok(Outcome {
        status: if report.passed { ExitStatus::Success } else { ExitStatus::PropertyFailure },
        files,
        lines,
    })
}

/// Maps an error to the process exit status.
pub fn error_status(err: &Error) -> ExitStatus {
    match err {
        Error::SpectralDegeneracy { .. } | Error::DegenerateClassifier(_) | Error::Numeric(_) => ExitStatus::PropertyFailure,
        _ => ExitStatus::ConfigError,
    }
}
