//! Command runners behind the `anova-denoise` binary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::bilevel::{self, write_ssim_csv, BilevelError, TrainingReport, TrainingSet, ValidationReport};
use crate::config::{Command, ConfigError, ImagePair, Manifest, RunConfig};
use crate::imaging::{add_gaussian_noise, load_image, save_image, ssim, synthetic_scene, GrayImage, ImageError, NoiseSpec};
use crate::kernel::{AnovaOperator, KernelError, KernelMode, KernelOp};
use crate::linops::{solve, CgResult, PrecKind, ShiftedSystem, SolverConfig, SolverError};
use crate::spectral::{bounds_report, spectrum_rows, write_spectra_csv, SpectralError};

pub const BENCH_CSV_HEADER: &str = "n,setup_ms,apply_ms,total_ms,iters,residual";
pub const ITERATION_CSV_HEADER: &str = "lambda,prec,iterations,converged,residual";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::NotConverged(_) | CliError::Numerical(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Kernel(k) => k.into(),
            SolverError::BadLambda(_) | SolverError::BadMu(_) | SolverError::BadConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        match e {
            SpectralError::Solver(s) => s.into(),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<BilevelError> for CliError {
    fn from(e: BilevelError) -> Self {
        match e {
            BilevelError::Solver { .. } | BilevelError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            BilevelError::Image(i) => i.into(),
            _ => CliError::Config(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes to `path`, or to stdout when no path is configured.
fn with_output<F>(path: Option<&Path>, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    match path {
        Some(p) => {
            let file = File::create(p).map_err(|e| io_error(p, e))?;
            let mut w = BufWriter::new(file);
            f(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(p, e))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock).map_err(|e| CliError::Io(format!("stdout: {e}")))
        }
    }
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    with_output(path, |w| writeln!(w, "{text}"))
}

fn ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Height and width close to 4:3 with `h·w ≈ n`.
pub fn shape_for(n: usize) -> (usize, usize) {
    let h = ((n as f64 * 0.75).sqrt().round() as usize).max(1);
    let w = ((n as f64 / h as f64).round() as usize).max(1);
    (h, w)
}

/// The configured input image resampled to `h × w`, or the noisy synthetic
/// scene when no input is set.
pub fn scene(cfg: &RunConfig, h: usize, w: usize) -> Result<GrayImage, CliError> {
    match &cfg.input {
        Some(p) => {
            let img = load_image(p)?;
            if img.height() == h && img.width() == w {
                Ok(img)
            } else {
                Ok(img.resize(h, w)?)
            }
        }
        None => Ok(add_gaussian_noise(
            &synthetic_scene(h, w),
            NoiseSpec {
                stddev: cfg.noise_stddev,
                seed: cfg.seed,
            },
        )),
    }
}

fn input_image(cfg: &RunConfig) -> Result<GrayImage, CliError> {
    match &cfg.input {
        Some(p) => Ok(load_image(p)?),
        None => scene(cfg, cfg.size[0], cfg.size[1]),
    }
}

pub fn run(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    match cfg.command {
        Command::Denoise => run_denoise(cfg).map(|_| ()),
        Command::Train => run_train(cfg).map(|_| ()),
        Command::Validate => run_validate(cfg).map(|_| ()),
        Command::Spectra => run_spectra(cfg).map(|_| ()),
        Command::BenchOp | Command::BenchSolve => run_bench(cfg).map(|_| ()),
        Command::IterationTable => run_iteration_table(cfg).map(|_| ()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DenoiseStats {
    pub height: usize,
    pub width: usize,
    pub lambda: f64,
    pub mu: f64,
    pub sigma: f64,
    pub prec: PrecKind,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
    pub input_mean: f64,
    pub output_mean: f64,
    /// Against the clean reference, when one is given.
    pub ssim_before: Option<f64>,
    pub ssim_after: Option<f64>,
    pub setup_ms: f64,
    pub solve_ms: f64,
}

pub fn run_denoise(cfg: &RunConfig) -> Result<DenoiseStats, CliError> {
    let input = cfg
        .input
        .as_deref()
        .ok_or_else(|| CliError::Config("denoise needs an input image".into()))?;
    let output = cfg
        .output
        .as_deref()
        .ok_or_else(|| CliError::Config("denoise needs an output path".into()))?;
    let noisy = load_image(input)?;
    let clean = cfg.clean.as_deref().map(load_image).transpose()?;
    let t = Instant::now();
    let op = cfg.kernel.build(&noisy)?;
    let setup_ms = ms(t);
    let sys = ShiftedSystem::new(cfg.lambda, cfg.mu, &op)?;
    let t = Instant::now();
    let r = solve(&sys, noisy.pixels(), &cfg.solver)?;
    let solve_ms = ms(t);
    let out = noisy.with_pixels(r.x)?;
    save_image(&out, output)?;
    let (ssim_before, ssim_after) = match &clean {
        Some(c) => (Some(ssim(&noisy, c)?), Some(ssim(&out, c)?)),
        None => (None, None),
    };
    let stats = DenoiseStats {
        height: noisy.height(),
        width: noisy.width(),
        lambda: cfg.lambda,
        mu: cfg.mu,
        sigma: cfg.kernel.sigma,
        prec: cfg.solver.prec,
        iterations: r.iterations,
        relative_residual: r.relative_residual,
        converged: r.converged,
        input_mean: noisy.mean(),
        output_mean: out.mean(),
        ssim_before,
        ssim_after,
        setup_ms,
        solve_ms,
    };
    write_json(cfg.report.as_deref(), &stats)?;
    if !stats.converged {
        return Err(CliError::NotConverged(format!(
            "CG stopped after {} iterations at relative residual {:e} (tol {:e})",
            stats.iterations, stats.relative_residual, cfg.solver.tol
        )));
    }
    Ok(stats)
}

fn load_pairs(pairs: &[ImagePair]) -> Result<Vec<(GrayImage, GrayImage)>, CliError> {
    pairs
        .iter()
        .map(|p| Ok((load_image(&p.clean)?, load_image(&p.noisy)?)))
        .collect()
}

fn manifest(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let path = cfg
        .manifest
        .as_deref()
        .ok_or_else(|| CliError::Config("this command needs a manifest".into()))?;
    Ok(Manifest::load(path)?)
}

fn training_set(cfg: &RunConfig, pairs: &[ImagePair]) -> Result<TrainingSet, CliError> {
    let images = load_pairs(pairs)?;
    let [lo, hi] = cfg.lambda_bounds;
    Ok(TrainingSet::build(images, &cfg.kernel, cfg.mu, (lo, hi))?)
}

pub fn run_train(cfg: &RunConfig) -> Result<TrainingReport, CliError> {
    let m = manifest(cfg)?;
    if m.train.is_empty() {
        return Err(CliError::Config("manifest lists no training pairs".into()));
    }
    let ts = training_set(cfg, &m.train)?;
    let report = bilevel::train(&ts, &cfg.solver, &cfg.brent)?;
    write_json(cfg.report.as_deref(), &report)?;
    if let Some(p) = cfg.csv.as_deref() {
        with_output(Some(p), |w| write_ssim_csv(w, &report.scores))?;
    }
    if !report.brent_converged {
        return Err(CliError::NotConverged(format!(
            "Brent stopped after {} iterations without meeting tol {:e}",
            report.brent_iterations, cfg.brent.tol
        )));
    }
    Ok(report)
}

/// Scores the manifest's validation pairs at the configured `λ`.
pub fn run_validate(cfg: &RunConfig) -> Result<ValidationReport, CliError> {
    let m = manifest(cfg)?;
    let report = if m.validation.is_empty() {
        ValidationReport {
            lambda: cfg.lambda,
            images: Vec::new(),
            mean_ssim_before: 0.0,
            mean_ssim_after: 0.0,
        }
    } else {
        bilevel::validate(cfg.lambda, &training_set(cfg, &m.validation)?, &cfg.solver)?
    };
    write_json(cfg.report.as_deref(), &report)?;
    if let Some(p) = cfg.csv.as_deref() {
        with_output(Some(p), |w| write_ssim_csv(w, &report))?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectraSummary {
    pub sigma: f64,
    pub lambda: f64,
    pub n: usize,
    pub rho_a: f64,
    pub a_a: f64,
    pub condition_number: f64,
    pub in_working_range: bool,
    pub bounds_passed: bool,
    pub failed_checks: Vec<String>,
}

/// Dense eigenvalue sweeps over `sigmas × lambdas`.
pub fn run_spectra(cfg: &RunConfig) -> Result<Vec<SpectraSummary>, CliError> {
    let img = input_image(cfg)?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &sigma in &cfg.sigmas {
        let mut kc = cfg.kernel;
        kc.sigma = sigma;
        let k = kc.build_dense(&img, cfg.dense_limit)?;
        for &lambda in &cfg.lambdas {
            let r = bounds_report(&k, lambda, cfg.mu)?;
            rows.extend(spectrum_rows(&r, sigma));
            summary.push(SpectraSummary {
                sigma,
                lambda,
                n: r.n,
                rho_a: r.rho_a,
                a_a: r.a_a,
                condition_number: r.condition_number(),
                in_working_range: r.in_working_range(),
                bounds_passed: r.all_passed(),
                failed_checks: r.failures().iter().map(|c| c.name.clone()).collect(),
            });
        }
    }
    with_output(cfg.csv.as_deref(), |w| write_spectra_csv(w, &rows))?;
    match cfg.report.as_deref() {
        Some(p) => write_json(Some(p), &summary)?,
        None => {
            for s in &summary {
                eprintln!(
                    "sigma={} lambda={:e} n={} working_range={} kappa={:.3e} bounds={}",
                    s.sigma,
                    s.lambda,
                    s.n,
                    s.in_working_range,
                    s.condition_number,
                    if s.bounds_passed { "ok" } else { "FAILED" }
                );
            }
        }
    }
    Ok(summary)
}

/// One benchmark row; `None` timings mean the path was refused.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub setup_ms: Option<f64>,
    pub apply_ms: Option<f64>,
    pub iters: Option<usize>,
    pub residual: Option<f64>,
}

impl BenchRow {
    pub fn total_ms(&self) -> Option<f64> {
        Some(self.setup_ms? + self.apply_ms?)
    }

    pub fn to_csv(&self) -> String {
        let t = |v: Option<f64>| v.map_or("unavailable".to_string(), |v| format!("{v:.3}"));
        format!(
            "{},{},{},{},{},{}",
            self.n,
            t(self.setup_ms),
            t(self.apply_ms),
            t(self.total_ms()),
            self.iters.map_or(String::new(), |i| i.to_string()),
            self.residual.map_or(String::new(), |r| format!("{r:e}"))
        )
    }
}

fn bench_one(cfg: &RunConfig, n: usize) -> Result<BenchRow, CliError> {
    let (h, w) = shape_for(n);
    let img = scene(cfg, h, w)?;
    let n = img.len();
    if cfg.kernel.mode == KernelMode::Exact && n > cfg.dense_limit {
        return Ok(BenchRow {
            n,
            setup_ms: None,
            apply_ms: None,
            iters: None,
            residual: None,
        });
    }
    let t = Instant::now();
    let op = AnovaOperator::build(&cfg.kernel.windows(&img)?, cfg.kernel.mode, &cfg.kernel.fastsum)?;
    // both degree vectors belong to the setup
    op.degree();
    op.degree_squared();
    let setup_ms = ms(t);
    match cfg.command {
        Command::BenchSolve => {
            let sys = ShiftedSystem::new(cfg.lambda, cfg.mu, &op)?;
            let t = Instant::now();
            let r: CgResult = solve(&sys, img.pixels(), &cfg.solver)?;
            Ok(BenchRow {
                n,
                setup_ms: Some(setup_ms),
                apply_ms: Some(ms(t)),
                iters: Some(r.iterations),
                residual: Some(r.relative_residual),
            })
        }
        _ => {
            let v = img.pixels();
            let mut best = f64::INFINITY;
            for _ in 0..cfg.repeats {
                let t = Instant::now();
                op.apply(v)?;
                best = best.min(ms(t));
            }
            Ok(BenchRow {
                n,
                setup_ms: Some(setup_ms),
                apply_ms: Some(best),
                iters: None,
                residual: None,
            })
        }
    }
}

/// Timings over image rescalings to the configured pixel counts. Apply
/// times are the best of `repeats` runs.
pub fn run_bench(cfg: &RunConfig) -> Result<Vec<BenchRow>, CliError> {
    let rows = cfg
        .sizes
        .iter()
        .map(|&n| bench_one(cfg, n))
        .collect::<Result<Vec<_>, _>>()?;
    with_output(cfg.csv.as_deref(), |w| {
        writeln!(w, "{BENCH_CSV_HEADER}")?;
        for r in &rows {
            writeln!(w, "{}", r.to_csv())?;
        }
        Ok(())
    })?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRow {
    pub lambda: f64,
    pub prec: PrecKind,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

/// CG iteration counts for every preconditioner across `lambdas`.
pub fn iteration_table(img: &GrayImage, cfg: &RunConfig) -> Result<Vec<IterationRow>, CliError> {
    let op = cfg.kernel.build(img)?;
    let mut rows = Vec::new();
    for &lambda in &cfg.lambdas {
        let sys = ShiftedSystem::new(lambda, cfg.mu, &op)?;
        for prec in PrecKind::ALL {
            let sc = SolverConfig { prec, ..cfg.solver };
            let r = solve(&sys, img.pixels(), &sc)?;
            rows.push(IterationRow {
                lambda,
                prec,
                iterations: r.iterations,
                converged: r.converged,
                residual: r.relative_residual,
            });
        }
    }
    Ok(rows)
}

pub fn run_iteration_table(cfg: &RunConfig) -> Result<Vec<IterationRow>, CliError> {
    let rows = iteration_table(&input_image(cfg)?, cfg)?;
    with_output(cfg.csv.as_deref(), |w| {
        writeln!(w, "{ITERATION_CSV_HEADER}")?;
        for r in &rows {
            writeln!(w, "{:e},{},{},{},{:e}", r.lambda, r.prec.name(), r.iterations, r.converged, r.residual)?;
        }
        Ok(())
    })?;
    Ok(rows)
}
