use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use etd_core::bench::{self, ExperimentConfig};
use etd_core::{residuals, EtdError, ProblemKind, SchemeId};

#[derive(Parser)]
#[command(name = "etd-bench", about = "ETD scheme benchmarks on the CHE and MCE model problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme at one stepsize and dump the space-time field.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Keep every k-th step in the field dump.
        #[arg(long, default_value_t = 100)]
        sample_every: usize,
    },
    /// Run every scheme at every stepsize and write the error/timing CSV.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Skip the predictor-corrector baseline row.
        #[arg(long)]
        no_baseline: bool,
        /// Reuse coefficient bundles found in the cache directory.
        #[arg(long)]
        reuse: bool,
    },
    /// Build coefficient matrices, cache them and dump log-magnitude maps.
    Coeffs {
        #[command(flatten)]
        common: CommonArgs,
        /// Coefficient order: 2 builds Q, M1, M2; 3 or 4 add half steps and M3.
        #[arg(long, default_value_t = 4)]
        order: u8,
        /// Also print the residuals of the coefficient identities.
        #[arg(long)]
        check: bool,
    },
    /// Compute (or refresh) the cached reference solution.
    Reference {
        #[command(flatten)]
        common: CommonArgs,
        /// Recompute even when a cached file exists.
        #[arg(long)]
        refresh: bool,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// key=value config file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<ProblemKind>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    length: Option<f64>,
    #[arg(long)]
    v: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    tau: Vec<f64>,
    #[arg(long)]
    scheme: Vec<SchemeId>,
    /// Auxiliary stepsize for coefficient builds.
    #[arg(long, conflicts_with = "tau1_preset")]
    tau1: Option<f64>,
    /// Use the problem's preset auxiliary stepsize (0.1 h^4 or 0.02 h^6).
    #[arg(long)]
    tau1_preset: bool,
    #[arg(long)]
    threshold: Option<f64>,
    /// Reference stepsize in units of h^4 (CHE) or h^6 (MCE).
    #[arg(long)]
    reference_factor: Option<f64>,
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

impl CommonArgs {
    fn resolve(&self) -> etd_core::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = self.problem {
            cfg.problem = p;
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(l) = self.length {
            cfg.domain_length = l;
        }
        if let Some(v) = self.v {
            cfg.v = v;
        }
        if let Some(t) = self.t_end {
            cfg.t_end = t;
        }
        if !self.tau.is_empty() {
            cfg.tau_list = self.tau.clone();
            cfg.tau_list.sort_by(f64::total_cmp);
        }
        if !self.scheme.is_empty() {
            cfg.schemes = self.scheme.clone();
        }
        if let Some(t) = self.tau1 {
            cfg.aux_tau1 = Some(t);
        }
        if self.tau1_preset {
            cfg.aux_tau1 = None;
        }
        if let Some(t) = self.threshold {
            cfg.sparsity_threshold = t;
        }
        if let Some(f) = self.reference_factor {
            cfg.reference_tau1_factor = f;
        }
        if self.parallel {
            cfg.parallel_build = true;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(c) = &self.cache_dir {
            cfg.cache_dir = Some(c.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> etd_core::Result<()> {
    match cli.command {
        Command::Simulate { common, sample_every } => {
            let cfg = common.resolve()?;
            let scheme = *cfg.schemes.first().ok_or_else(|| EtdError::Config("no scheme given".into()))?;
            let tau = match scheme {
                SchemeId::Pc => cfg.aux_stepsize()?,
                _ => *cfg.tau_list.first().ok_or_else(|| EtdError::Config("no tau given".into()))?,
            };
            let sim = bench::simulate(&cfg, scheme, tau, sample_every)?;
            let path = cfg
                .output_dir
                .join(format!("field_{}_N{}_{}.csv", cfg.problem, cfg.n, scheme));
            let rows = bench::dump_field(&path, &cfg.grid()?, &sim.samples)?;
            println!(
                "{scheme}: {} steps to t={} in {:.3} s, max|u|={:.6e}; {rows} rows -> {}",
                sim.steps,
                sim.state.time,
                sim.stepping_seconds,
                sim.state.max_norm(),
                path.display()
            );
        }
        Command::Sweep { common, no_baseline, reuse } => {
            let mut cfg = common.resolve()?;
            cfg.pc_baseline = !no_baseline;
            cfg.reuse_coefficients = reuse;
            let report = bench::run_sweep(&cfg)?;
            let path = bench::write_sweep_csv(&cfg, &report)?;
            print!("{}", report.to_csv());
            for row in report.rows.iter().filter(|r| r.failure.is_some()) {
                eprintln!("{} tau={}: {}", row.scheme, row.tau, row.failure.as_deref().unwrap_or(""));
            }
            println!("wrote {}", path.display());
        }
        Command::Coeffs { common, order, check } => {
            let cfg = common.resolve()?;
            let sys = cfg.system()?;
            for &tau_req in &cfg.tau_list {
                let (tau, _) = cfg.snap_tau(tau_req);
                let (coef, cached) = bench::load_or_build_coefficients(&cfg, &sys, tau, order, true)?;
                let dir = cfg.output_dir.join(format!("coeffs_{}_N{}_tau{tau}", cfg.problem, cfg.n));
                let paths = bench::dump_matrix_magnitudes(&coef, &dir)?;
                println!(
                    "tau={tau} tau1={:e} order={order} {} ({:.3} s); {} maps in {}",
                    coef.aux_stepsize(),
                    if cached { "loaded" } else { "built" },
                    coef.build_seconds(),
                    paths.len(),
                    dir.display()
                );
                if check {
                    let r = residuals(&sys, &coef);
                    println!(
                        "  residuals (Frobenius): m1={:e} m2={:e} m3={:?} semigroup={:?}; |Q|_F={:e}",
                        r.m1,
                        r.m2,
                        r.m3,
                        r.semigroup,
                        coef.q.frobenius_norm()
                    );
                }
            }
        }
        Command::Reference { common, refresh } => {
            let cfg = common.resolve()?;
            if refresh {
                if let Some(dir) = &cfg.cache_dir {
                    let tmp = ExperimentConfig { cache_dir: None, ..cfg.clone() };
                    let state = bench::reference_solution(&tmp)?;
                    let path = bench::reference_cache_path(&cfg).expect("cache dir set");
                    std::fs::create_dir_all(dir)?;
                    etd_core::cache::write_state(&path, &state)?;
                }
            }
            let start = std::time::Instant::now();
            let state = bench::reference_solution(&cfg)?;
            println!(
                "reference {} N={} t={} tau1={:e}: max|u|={:.6e} ({:.1} s)",
                cfg.problem,
                cfg.n,
                state.time,
                cfg.reference_stepsize()?,
                state.max_norm(),
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
