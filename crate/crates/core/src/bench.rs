//! Experiment runner: reference solutions, scheme × stepsize sweeps with error
//! and timing, space–time field dumps and coefficient magnitude maps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::cache;
use crate::coeffs::{build_coefficients, BuildOptions, EtdCoefficients};
use crate::error::{EtdError, Result};
use crate::problems::{initial_condition, GridSpec, ModelProblem, ProblemKind};
use crate::schemes::{EtdStepper, NnzReport, SchemeId};
use crate::system::{pc_integrate, pc_run, SemiLinearSystem, State};

/// Header of the sweep CSV.
pub const SWEEP_HEADER: &str = "scheme,tau,steps,error,cpu_coeff_s,cpu_run_s,nnz_Q,nnz_M1,nnz_M2,nnz_M3";
/// Header of the field dump CSV.
pub const FIELD_HEADER: &str = "t,x,u";

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub n: usize,
    pub domain_length: f64,
    pub v: f64,
    pub t_end: f64,
    pub schemes: Vec<SchemeId>,
    /// ETD stepsizes, ascending.
    pub tau_list: Vec<f64>,
    /// Auxiliary stepsize for coefficient builds; `None` means the problem preset.
    pub aux_tau1: Option<f64>,
    pub sparsity_threshold: f64,
    /// Reference stepsize in units of `h⁴` (CHE) or `h⁶` (MCE).
    pub reference_tau1_factor: f64,
    /// Run the predictor–corrector baseline at the preset stepsize.
    pub pc_baseline: bool,
    /// Load coefficient bundles from the cache directory when present.
    pub reuse_coefficients: bool,
    pub parallel_build: bool,
    pub output_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Che,
            n: 200,
            domain_length: 10.0,
            v: 1.0,
            t_end: 50.0,
            schemes: SchemeId::ETD.to_vec(),
            tau_list: vec![0.005, 0.01, 0.02, 0.04],
            aux_tau1: None,
            sparsity_threshold: 0.0,
            reference_tau1_factor: 0.01,
            pc_baseline: true,
            reuse_coefficients: false,
            parallel_build: false,
            output_dir: PathBuf::from("out"),
            cache_dir: None,
        }
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .trim()
        .parse()
        .map_err(|_| EtdError::Config(format!("{key}: cannot parse '{value}' as a number")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(EtdError::Config(format!("{key}: expected a boolean, got '{other}'"))),
    }
}

impl ExperimentConfig {
    /// Sets one `key=value` entry. Keys match the command-line flags
    /// (`problem`, `n`, `length`, `v`, `t-end`, `tau`, `scheme`, `tau1`,
    /// `threshold`, `reference-factor`, `pc-baseline`, `reuse-coefficients`,
    /// `parallel`, `out`, `cache-dir`); underscores are accepted for dashes and
    /// list values are comma separated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match key.as_str() {
            "problem" => self.problem = value.parse()?,
            "n" => {
                self.n = value
                    .parse()
                    .map_err(|_| EtdError::Config(format!("n: cannot parse '{value}'")))?
            }
            "length" => self.domain_length = parse_f64(&key, value)?,
            "v" => self.v = parse_f64(&key, value)?,
            "t-end" => self.t_end = parse_f64(&key, value)?,
            "tau" => {
                self.tau_list = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_f64(&key, s))
                    .collect::<Result<_>>()?
            }
            "scheme" => {
                self.schemes = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "tau1" => {
                self.aux_tau1 = if value == "preset" {
                    None
                } else {
                    Some(parse_f64(&key, value)?)
                }
            }
            "threshold" => self.sparsity_threshold = parse_f64(&key, value)?,
            "reference-factor" => self.reference_tau1_factor = parse_f64(&key, value)?,
            "pc-baseline" => self.pc_baseline = parse_bool(&key, value)?,
            "reuse-coefficients" => self.reuse_coefficients = parse_bool(&key, value)?,
            "parallel" => self.parallel_build = parse_bool(&key, value)?,
            "out" => self.output_dir = PathBuf::from(value),
            "cache-dir" => self.cache_dir = Some(PathBuf::from(value)),
            other => return Err(EtdError::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a plain-text `key=value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                EtdError::Config(format!("line {}: expected key=value, got '{raw}'", lineno + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        GridSpec::new(self.n, self.domain_length)?;
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(EtdError::Config(format!("t_end must be non-negative, got {}", self.t_end)));
        }
        if self.tau_list.iter().any(|t| !(*t > 0.0)) {
            return Err(EtdError::Config("every tau must be positive".into()));
        }
        if self.tau_list.windows(2).any(|w| w[0] > w[1]) {
            return Err(EtdError::Config("tau list must be sorted ascending".into()));
        }
        if !(self.sparsity_threshold >= 0.0) {
            return Err(EtdError::Config("threshold must be non-negative".into()));
        }
        if !(self.reference_tau1_factor > 0.0) {
            return Err(EtdError::Config("reference factor must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.n, self.domain_length)
    }

    pub fn system(&self) -> Result<ModelProblem> {
        Ok(ModelProblem::new(self.problem, self.grid()?, self.v))
    }

    pub fn aux_stepsize(&self) -> Result<f64> {
        let grid = self.grid()?;
        Ok(self.aux_tau1.unwrap_or_else(|| self.problem.preset_aux_stepsize(&grid)))
    }

    pub fn reference_stepsize(&self) -> Result<f64> {
        Ok(self.reference_tau1_factor * self.problem.stepsize_unit(&self.grid()?))
    }

    /// `τ` adjusted to divide `t_end` exactly, with the step count.
    pub fn snap_tau(&self, tau: f64) -> (f64, usize) {
        snap_to_interval(self.t_end, tau)
    }

    pub fn initial_state(&self) -> Result<State> {
        Ok(State::new(initial_condition(&self.grid()?), 0.0))
    }

    fn tag(&self) -> String {
        format!("{}_N{}_L{}_v{}", self.problem, self.n, self.domain_length, self.v)
    }

    pub fn reference_cache_path(&self) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| {
            d.join(format!(
                "ref_{}_T{}_f{}.bin",
                self.tag(),
                self.t_end,
                self.reference_tau1_factor
            ))
        })
    }

    pub fn coefficient_cache_path(&self, tau: f64, order: u8) -> Result<Option<PathBuf>> {
        let tau1 = self.aux_stepsize()?;
        Ok(self
            .cache_dir
            .as_ref()
            .map(|d| d.join(format!("coef_{}_tau{tau:e}_tau1{tau1:e}_o{order}.bin", self.tag()))))
    }
}

/// Nearest stepsize to `tau` that divides `span` into a whole number of steps.
pub fn snap_to_interval(span: f64, tau: f64) -> (f64, usize) {
    if span <= 0.0 {
        return (tau, 0);
    }
    let steps = ((span / tau).round() as usize).max(1);
    (span / steps as f64, steps)
}

/// Cache location of the reference state, when a cache directory is set.
pub fn reference_cache_path(cfg: &ExperimentConfig) -> Option<PathBuf> {
    cfg.reference_cache_path()
}

/// Predictor–corrector solution at `t_end` with stepsize `factor·h^m`,
/// read from or written to the cache directory when one is configured.
pub fn reference_solution(cfg: &ExperimentConfig) -> Result<State> {
    let u0 = cfg.initial_state()?;
    if cfg.t_end == 0.0 {
        return Ok(u0);
    }
    let path = cfg.reference_cache_path();
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        let state = cache::read_state(p)?;
        if state.dim() == cfg.n && state.time == cfg.t_end {
            return Ok(state);
        }
    }
    let state = pc_integrate(&cfg.system()?, &u0, cfg.t_end, cfg.reference_stepsize()?)?;
    if let Some(p) = path {
        cache::write_state(&p, &state)?;
    }
    Ok(state)
}

/// Max-norm of `u − reference`; the two states must share length and time.
pub fn compute_error(u: &State, reference: &State) -> Result<f64> {
    if u.dim() != reference.dim() {
        return Err(EtdError::DimensionMismatch {
            expected: reference.dim(),
            got: u.dim(),
        });
    }
    let scale = 1.0_f64.max(reference.time.abs());
    if (u.time - reference.time).abs() > 1e-9 * scale {
        return Err(EtdError::TimeMismatch {
            left: u.time,
            right: reference.time,
        });
    }
    Ok(u
        .values
        .iter()
        .zip(&reference.values)
        .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs())))
}

/// One (scheme, τ) cell of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub scheme: SchemeId,
    pub tau: f64,
    pub steps: usize,
    /// `+∞` when the cell failed.
    pub error: f64,
    /// `None` for the baseline and for coefficients loaded from cache.
    pub cpu_coeff_seconds: Option<f64>,
    pub cpu_run_seconds: f64,
    pub nnz: Option<NnzReport>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub rows: Vec<RunRow>,
}

impl RunReport {
    pub fn find(&self, scheme: SchemeId, tau: f64) -> Option<&RunRow> {
        self.rows
            .iter()
            .find(|r| r.scheme == scheme && (r.tau - tau).abs() <= 1e-12 * tau.abs().max(1e-300))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for r in &self.rows {
            let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
            let nnz = r.nnz.unwrap_or_default();
            let has = r.nnz.is_some();
            let _ = writeln!(
                out,
                "{},{:e},{},{:e},{},{:e},{},{},{},{}",
                r.scheme,
                r.tau,
                r.steps,
                r.error,
                r.cpu_coeff_seconds.map(|c| format!("{c:e}")).unwrap_or_default(),
                r.cpu_run_seconds,
                opt(has.then_some(nnz.q)),
                opt(has.then_some(nnz.m1)),
                opt(has.then_some(nnz.m2)),
                opt(nnz.m3.filter(|_| has)),
            );
        }
        out
    }
}

/// Builds coefficients, or loads them from the cache when allowed. The flag
/// reports whether they came from the cache.
pub fn load_or_build_coefficients(
    cfg: &ExperimentConfig,
    sys: &ModelProblem,
    tau: f64,
    order: u8,
    allow_cache: bool,
) -> Result<(EtdCoefficients, bool)> {
    let path = cfg.coefficient_cache_path(tau, order)?;
    if allow_cache {
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            let coef = cache::read_coefficients(p)?;
            if coef.dim() == cfg.n && coef.order() == order && coef.tau() == tau {
                return Ok((coef, true));
            }
        }
    }
    let opts = BuildOptions {
        parallel: cfg.parallel_build,
        stability_limit: None,
    };
    let coef = build_coefficients(sys, tau, cfg.aux_stepsize()?, order, opts)?;
    if let Some(p) = path {
        cache::write_coefficients(&p, &coef)?;
    }
    Ok((coef, false))
}

/// Coefficient class shared by schemes: ETD2RK needs `{Q, M1, M2}`, the others all six.
fn build_order(scheme: SchemeId) -> u8 {
    match scheme {
        SchemeId::Etd2rk => 2,
        _ => 4,
    }
}

/// Runs every scheme at every τ against one shared reference, then the
/// predictor–corrector baseline. Cell failures are recorded with `error = +∞`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let reference = reference_solution(cfg)?;
    let u0 = cfg.initial_state()?;
    let mut report = RunReport::default();

    for &tau_req in &cfg.tau_list {
        let (tau, steps) = cfg.snap_tau(tau_req);
        let mut built: BTreeMap<u8, std::result::Result<(EtdCoefficients, bool), String>> = BTreeMap::new();
        for &scheme in cfg.schemes.iter().filter(|s| **s != SchemeId::Pc) {
            let order = build_order(scheme);
            let entry = built.entry(order).or_insert_with(|| {
                load_or_build_coefficients(cfg, &sys, tau, order, cfg.reuse_coefficients)
                    .map_err(|e| e.to_string())
            });
            let row = match entry {
                Ok((coef, cached)) => {
                    let cpu_coeff = (!*cached).then(|| coef.build_seconds());
                    run_cell(&sys, coef, scheme, &u0, steps, &reference, cfg.sparsity_threshold, cpu_coeff)
                }
                Err(msg) => failed_row(scheme, tau, steps, msg.clone()),
            };
            report.rows.push(row);
        }
    }

    if cfg.pc_baseline {
        report.rows.push(run_pc_baseline(cfg, &sys, &u0, &reference));
    }
    Ok(report)
}

fn failed_row(scheme: SchemeId, tau: f64, steps: usize, msg: String) -> RunRow {
    RunRow {
        scheme,
        tau,
        steps,
        error: f64::INFINITY,
        cpu_coeff_seconds: None,
        cpu_run_seconds: 0.0,
        nnz: None,
        failure: Some(msg),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    sys: &ModelProblem,
    coef: &EtdCoefficients,
    scheme: SchemeId,
    u0: &State,
    steps: usize,
    reference: &State,
    threshold: f64,
    cpu_coeff: Option<f64>,
) -> RunRow {
    let tau = coef.tau();
    let mut stepper = match EtdStepper::new(coef, scheme, threshold) {
        Ok(s) => s,
        Err(e) => return failed_row(scheme, tau, steps, e.to_string()),
    };
    let nnz = stepper.nnz();
    match stepper.integrate(sys, u0, steps, None) {
        Ok(run) => match compute_error(&run.state, reference) {
            Ok(error) => RunRow {
                scheme,
                tau,
                steps,
                error,
                cpu_coeff_seconds: cpu_coeff,
                cpu_run_seconds: run.stepping_seconds,
                nnz: Some(nnz),
                failure: None,
            },
            Err(e) => failed_row(scheme, tau, steps, e.to_string()),
        },
        Err(e) => RunRow {
            cpu_coeff_seconds: cpu_coeff,
            nnz: Some(nnz),
            ..failed_row(scheme, tau, steps, e.to_string())
        },
    }
}

fn run_pc_baseline(cfg: &ExperimentConfig, sys: &ModelProblem, u0: &State, reference: &State) -> RunRow {
    let tau1 = sys.preset_aux_stepsize();
    let steps = crate::system::step_count(cfg.t_end, tau1);
    let start = Instant::now();
    let result = pc_integrate(sys, u0, cfg.t_end, tau1);
    let elapsed = start.elapsed().as_secs_f64();
    match result.and_then(|s| compute_error(&s, reference)) {
        Ok(error) => RunRow {
            scheme: SchemeId::Pc,
            tau: tau1,
            steps,
            error,
            cpu_coeff_seconds: None,
            cpu_run_seconds: elapsed,
            nnz: None,
            failure: None,
        },
        Err(e) => failed_row(SchemeId::Pc, tau1, steps, e.to_string()),
    }
}

/// Writes the sweep CSV into the output directory and returns its path.
pub fn write_sweep_csv(cfg: &ExperimentConfig, report: &RunReport) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join(format!("sweep_{}_N{}.csv", cfg.problem, cfg.n));
    fs::write(&path, report.to_csv())?;
    Ok(path)
}

/// Result of a single simulation with field sampling.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub state: State,
    pub samples: Vec<State>,
    pub stepping_seconds: f64,
    pub steps: usize,
}

/// Integrates from the standard initial condition to `t_end` with one scheme,
/// keeping the initial state and every `sample_every`-th step. For the
/// predictor–corrector scheme `tau` is its own stepsize.
pub fn simulate(
    cfg: &ExperimentConfig,
    scheme: SchemeId,
    tau: f64,
    sample_every: usize,
) -> Result<Simulation> {
    let sys = cfg.system()?;
    let u0 = cfg.initial_state()?;
    let every = sample_every.max(1);
    let mut samples = vec![u0.clone()];
    if scheme == SchemeId::Pc {
        let (tau, steps) = cfg.snap_tau(tau);
        let mut u = u0.values.clone();
        let start = Instant::now();
        pc_run(&sys, &mut u, 0.0, tau, steps, |k, v| {
            if k.is_multiple_of(every) {
                samples.push(State::new(v.to_vec(), k as f64 * tau));
            }
        })?;
        let elapsed = start.elapsed().as_secs_f64();
        return Ok(Simulation {
            state: State::new(u, steps as f64 * tau),
            samples,
            stepping_seconds: elapsed,
            steps,
        });
    }
    let order = scheme.coefficient_order().expect("ETD scheme");
    let (tau, steps) = cfg.snap_tau(tau);
    let (coef, _) = load_or_build_coefficients(cfg, &sys, tau, order, true)?;
    let mut stepper = EtdStepper::new(&coef, scheme, cfg.sparsity_threshold)?;
    let mut k = 0usize;
    let mut observer = |s: &State| {
        k += 1;
        if k.is_multiple_of(every) {
            samples.push(s.clone());
        }
    };
    let run = stepper.integrate(&sys, &u0, steps, Some(&mut observer))?;
    Ok(Simulation {
        state: run.state,
        samples,
        stepping_seconds: run.stepping_seconds,
        steps,
    })
}

/// Writes `t,x,u` rows for every sample and node; returns the number of data rows.
pub fn dump_field(path: &Path, grid: &GridSpec, samples: &[State]) -> Result<usize> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = String::from(FIELD_HEADER);
    out.push('\n');
    let mut rows = 0;
    for s in samples {
        for (i, u) in s.values.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", s.time, grid.position(i + 1), u);
            rows += 1;
        }
    }
    fs::write(path, out)?;
    Ok(rows)
}

/// Renders `log₁₀|m_jk|` as CSV rows, `NA` for exact zeros.
pub fn log_magnitude_csv(m: &crate::matrix::DenseMatrix) -> String {
    use crate::matrix::MatVec;
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m
            .row(i)
            .iter()
            .map(|&v| {
                if v == 0.0 {
                    "NA".to_string()
                } else {
                    format!("{}", v.abs().log10())
                }
            })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes `log₁₀` magnitude maps of `Q`, `M₁`, `τ⁻¹M₂` and (when present)
/// `τ⁻²M₃` into `dir`; returns the written paths.
pub fn dump_matrix_magnitudes(coef: &EtdCoefficients, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let tau = coef.tau();
    let mut maps = vec![
        ("log10_Q.csv", coef.q.clone()),
        ("log10_M1.csv", coef.m1.clone()),
        ("log10_M2_over_tau.csv", coef.m2.scaled(1.0 / tau)),
    ];
    if let Some(m3) = &coef.m3 {
        maps.push(("log10_M3_over_tau2.csv", m3.scaled(1.0 / (tau * tau))));
    }
    let mut paths = Vec::new();
    for (name, m) in maps {
        let path = dir.join(name);
        fs::write(&path, log_magnitude_csv(&m))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Local maxima of a sampled series (strictly above both neighbours).
pub fn count_local_maxima(series: &[f64]) -> usize {
    series
        .windows(3)
        .filter(|w| w[1] > w[0] && w[1] > w[2])
        .count()
}

/// Max-norm of `u` over `[t_from, t_end]` sampled every `sample_every` steps,
/// as `(time, max-norm)` pairs.
pub fn max_norm_series(samples: &[State], t_from: f64) -> Vec<(f64, f64)> {
    samples
        .iter()
        .filter(|s| s.time >= t_from)
        .map(|s| (s.time, s.max_norm()))
        .collect()
}

/// Wall time of the predictor–corrector on `sys` over `[0, t_end]`.
pub fn time_pc<S: SemiLinearSystem + ?Sized>(sys: &S, u0: &State, t_end: f64, tau1: f64) -> Result<(State, f64)> {
    let start = Instant::now();
    let s = pc_integrate(sys, u0, t_end, tau1)?;
    Ok((s, start.elapsed().as_secs_f64()))
}
