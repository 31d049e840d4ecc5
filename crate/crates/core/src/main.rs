use std::path::PathBuf;
use std::process::ExitCode;

use anova_denoise::cli::{self, CliError};
use anova_denoise::config::{Command, RunConfig};
use anova_denoise::kernel::KernelMode;
use anova_denoise::linops::PrecKind;
use clap::Parser;
use serde::de::DeserializeOwned;

const THREADS_ENV: &str = "ANOVA_DENOISE_THREADS";

fn kebab<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Nonlocal image denoising with a matrix-free ANOVA kernel.
///
/// Settings come from `--config` (JSON) and are then overridden by flags.
/// Set ANOVA_DENOISE_THREADS to cap the worker pool.
#[derive(Parser, Debug)]
#[command(name = "anova-denoise", version)]
struct Args {
    /// denoise | train | validate | spectra | bench-op | bench-solve | iteration-table
    #[arg(value_parser = kebab::<Command>)]
    command: Option<Command>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    dump_config: bool,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    /// Patch radius.
    #[arg(long)]
    rho: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// fast | exact
    #[arg(long, value_parser = kebab::<KernelMode>)]
    mode: Option<KernelMode>,
    /// none | jacobi | l2 | deflated-none | deflated-jacobi | deflated-l2
    #[arg(long, value_parser = kebab::<PrecKind>)]
    prec: Option<PrecKind>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    maxit: Option<usize>,
    /// NFFT window cutoff m.
    #[arg(long)]
    cutoff: Option<usize>,
    #[arg(long)]
    oversampling: Option<f64>,
    /// Smallest expansion degree per axis.
    #[arg(long)]
    min_degree: Option<usize>,
    #[arg(long)]
    max_degree: Option<usize>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    dense_limit: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    sigmas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    clean: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
}

macro_rules! set {
    ($src:expr => $dst:expr) => {
        if let Some(v) = $src {
            $dst = v;
        }
    };
}

impl Args {
    fn resolve(self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        set!(self.command => cfg.command);
        set!(self.sigma => cfg.kernel.sigma);
        set!(self.mu => cfg.mu);
        set!(self.lambda => cfg.lambda);
        set!(self.lambda_min => cfg.lambda_bounds[0]);
        set!(self.lambda_max => cfg.lambda_bounds[1]);
        set!(self.rho => cfg.kernel.rho);
        set!(self.bins => cfg.kernel.bins);
        set!(self.mode => cfg.kernel.mode);
        set!(self.prec => cfg.solver.prec);
        set!(self.tol => cfg.solver.tol);
        set!(self.maxit => cfg.solver.maxit);
        set!(self.cutoff => cfg.kernel.fastsum.nfft.cutoff);
        set!(self.oversampling => cfg.kernel.fastsum.nfft.oversampling);
        set!(self.min_degree => cfg.kernel.fastsum.min_degree);
        set!(self.max_degree => cfg.kernel.fastsum.max_degree);
        set!(self.eps => cfg.kernel.fastsum.eps);
        set!(self.dense_limit => cfg.dense_limit);
        set!(self.seed => cfg.seed);
        set!(self.noise => cfg.noise_stddev);
        set!(self.sigmas => cfg.sigmas);
        set!(self.lambdas => cfg.lambdas);
        set!(self.sizes => cfg.sizes);
        if self.input.is_some() {
            cfg.input = self.input;
        }
        if self.clean.is_some() {
            cfg.clean = self.clean;
        }
        if self.output.is_some() {
            cfg.output = self.output;
        }
        if self.manifest.is_some() {
            cfg.manifest = self.manifest;
        }
        if self.report.is_some() {
            cfg.report = self.report;
        }
        if self.csv.is_some() {
            cfg.csv = self.csv;
        }
        Ok(cfg)
    }
}

fn thread_cap() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let dump = args.dump_config;
    let result = thread_cap().and_then(|_| args.resolve()).and_then(|cfg| {
        if dump {
            println!("{}", cfg.to_json());
            Ok(())
        } else {
            cli::run(&cfg)
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
