//! Learning the fidelity weight `λ` from clean/noisy training pairs.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{ssim, GrayImage, ImageError};
use crate::kernel::{KernelConfig, KernelError, KernelOp};
use crate::linops::{solve, CgResult, ShiftedSystem, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum BilevelError {
    #[error("training set is empty")]
    Empty,
    #[error("image {index}: clean is {clean:?} but noisy is {noisy:?}")]
    DimensionMismatch {
        index: usize,
        clean: (usize, usize),
        noisy: (usize, usize),
    },
    #[error("invalid interval [{0}, {1}]: need 0 < min <= max")]
    BadInterval(f64, f64),
    #[error("invalid brent setting: {0}")]
    BadBrent(String),
    #[error("objective at {x} is not finite")]
    NonFinite { x: f64 },
    #[error("image {index}: {source}")]
    Solver {
        index: usize,
        #[source]
        source: SolverError,
    },
    #[error("image {index}: {source}")]
    Kernel {
        index: usize,
        #[source]
        source: KernelError,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// One training or validation image: reference, noisy observation and the
/// kernel built from the noisy image.
pub struct TrainingPair {
    pub clean: GrayImage,
    pub noisy: GrayImage,
    pub op: Box<dyn KernelOp + Send>,
}

impl std::fmt::Debug for TrainingPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainingPair")
            .field("height", &self.clean.height())
            .field("width", &self.clean.width())
            .finish()
    }
}

#[derive(Debug)]
pub struct TrainingSet {
    pairs: Vec<TrainingPair>,
    mu: f64,
    bounds: (f64, f64),
}

fn check_pair(index: usize, clean: &GrayImage, noisy: &GrayImage) -> Result<(), BilevelError> {
    if clean.height() != noisy.height() || clean.width() != noisy.width() {
        return Err(BilevelError::DimensionMismatch {
            index,
            clean: (clean.height(), clean.width()),
            noisy: (noisy.height(), noisy.width()),
        });
    }
    Ok(())
}

impl TrainingSet {
    /// Builds one kernel per noisy image (in parallel).
    pub fn build(images: Vec<(GrayImage, GrayImage)>, kernel: &KernelConfig, mu: f64, bounds: (f64, f64)) -> Result<Self, BilevelError> {
        for (i, (c, f)) in images.iter().enumerate() {
            check_pair(i, c, f)?;
        }
        let pairs = images
            .into_par_iter()
            .enumerate()
            .map(|(index, (clean, noisy))| {
                let op = kernel.build(&noisy).map_err(|source| BilevelError::Kernel { index, source })?;
                Ok(TrainingPair {
                    clean,
                    noisy,
                    op: Box::new(op),
                })
            })
            .collect::<Result<Vec<_>, BilevelError>>()?;
        Self::from_pairs(pairs, mu, bounds)
    }

    pub fn from_pairs(pairs: Vec<TrainingPair>, mu: f64, bounds: (f64, f64)) -> Result<Self, BilevelError> {
        let (lo, hi) = bounds;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(BilevelError::BadInterval(lo, hi));
        }
        for (index, p) in pairs.iter().enumerate() {
            check_pair(index, &p.clean, &p.noisy)?;
            if p.op.dim() != p.noisy.len() {
                return Err(BilevelError::Kernel {
                    index,
                    source: KernelError::LengthMismatch {
                        expected: p.noisy.len(),
                        got: p.op.dim(),
                    },
                });
            }
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(BilevelError::Solver {
                index: 0,
                source: SolverError::BadMu(mu),
            });
        }
        Ok(Self { pairs, mu, bounds })
    }

    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }
}

/// Solves `(λI + μL) u = λ f` for one pair.
pub fn denoise_pair(pair: &TrainingPair, lambda: f64, mu: f64, cfg: &SolverConfig) -> Result<CgResult, SolverError> {
    let sys = ShiftedSystem::new(lambda, mu, pair.op.as_ref())?;
    solve(&sys, pair.noisy.pixels(), cfg)
}

fn solve_all(ts: &TrainingSet, lambda: f64, cfg: &SolverConfig) -> Result<Vec<CgResult>, BilevelError> {
    ts.pairs
        .par_iter()
        .enumerate()
        .map(|(index, p)| denoise_pair(p, lambda, ts.mu, cfg).map_err(|source| BilevelError::Solver { index, source }))
        .collect()
}

fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `j(λ) = (1/T) Σ_t ‖u_{t,c} - u_t(λ)‖²`, summed in image order.
pub fn reduced_objective(lambda: f64, ts: &TrainingSet, cfg: &SolverConfig) -> Result<f64, BilevelError> {
    if ts.is_empty() {
        return Err(BilevelError::Empty);
    }
    let sols = solve_all(ts, lambda, cfg)?;
    let total: f64 = ts
        .pairs
        .iter()
        .zip(&sols)
        .map(|(p, r)| squared_error(p.clean.pixels(), &r.x))
        .sum();
    let j = total / ts.len() as f64;
    if !j.is_finite() {
        return Err(BilevelError::NonFinite { x: lambda });
    }
    Ok(j)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrentConfig {
    pub tol: f64,
    pub maxit: usize,
}

impl Default for BrentConfig {
    fn default() -> Self {
        Self { tol: 1e-10, maxit: 100 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrentResult {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Brent's derivative-free minimizer on `[a, b]` (golden section with
/// parabolic steps). Stops once the bracket is within `tol·|x| + tol`.
pub fn brent_minimize<F>(mut g: F, a: f64, b: f64, tol: f64, maxit: usize) -> Result<BrentResult, BilevelError>
where
    F: FnMut(f64) -> f64,
{
    try_brent_minimize(|x| Ok(g(x)), a, b, tol, maxit)
}

pub fn try_brent_minimize<F>(mut g: F, a: f64, b: f64, tol: f64, maxit: usize) -> Result<BrentResult, BilevelError>
where
    F: FnMut(f64) -> Result<f64, BilevelError>,
{
    if !(a < b && a.is_finite() && b.is_finite()) {
        return Err(BilevelError::BadBrent(format!("need a < b, got [{a}, {b}]")));
    }
    if !(tol > 0.0) {
        return Err(BilevelError::BadBrent(format!("tolerance {tol} must be positive")));
    }
    let c = 0.5 * (3.0 - 5f64.sqrt());
    let mut eval = |x: f64, count: &mut usize| -> Result<f64, BilevelError> {
        *count += 1;
        let v = g(x)?;
        if v.is_nan() {
            return Err(BilevelError::NonFinite { x });
        }
        Ok(v)
    };
    let mut evaluations = 0;
    let (mut lo, mut hi) = (a, b);
    let mut x = lo + c * (hi - lo);
    let (mut w, mut v) = (x, x);
    let mut fx = eval(x, &mut evaluations)?;
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    let mut iterations = 0;
    loop {
        let m = 0.5 * (lo + hi);
        let tol1 = 0.25 * (tol * x.abs() + tol);
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (hi - lo) {
            return Ok(BrentResult {
                x,
                fx,
                iterations,
                evaluations,
                converged: true,
            });
        }
        if iterations >= maxit {
            return Ok(BrentResult {
                x,
                fx,
                iterations,
                evaluations,
                converged: false,
            });
        }
        iterations += 1;
        let mut golden = true;
        if e.abs() > tol1 {
            // parabola through (x, fx), (w, fw), (v, fv)
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let e_prev = e;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (lo - x) && p < q * (hi - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - lo < tol2 || hi - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { hi - x } else { lo - x };
            d = c * e;
        }
        let u = if d.abs() >= tol1 { x + d } else if d > 0.0 { x + tol1 } else { x - tol1 };
        let fu = eval(u, &mut evaluations)?;
        if fu <= fx {
            if u < x {
                hi = x;
            } else {
                lo = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                lo = u;
            } else {
                hi = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub index: usize,
    pub ssim_before: f64,
    pub ssim_after: f64,
    pub cg_iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub lambda: f64,
    pub images: Vec<ImageScore>,
    pub mean_ssim_before: f64,
    pub mean_ssim_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub lambda_star: f64,
    pub objective: f64,
    pub brent_iterations: usize,
    pub brent_evaluations: usize,
    pub brent_converged: bool,
    /// `j` at the interval end points, evaluated for comparison only.
    pub objective_at_min: f64,
    pub objective_at_max: f64,
    pub scores: ValidationReport,
    pub wall_time_s: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// One solve per image at `λ`, scored by SSIM against the clean image.
pub fn validate(lambda: f64, set: &TrainingSet, cfg: &SolverConfig) -> Result<ValidationReport, BilevelError> {
    let sols = solve_all(set, lambda, cfg)?;
    let images = set
        .pairs
        .iter()
        .zip(sols)
        .enumerate()
        .map(|(index, (p, r))| {
            let out = p.noisy.with_pixels(r.x)?;
            Ok(ImageScore {
                index,
                ssim_before: ssim(&p.noisy, &p.clean)?,
                ssim_after: ssim(&out, &p.clean)?,
                cg_iterations: r.iterations,
                relative_residual: r.relative_residual,
                converged: r.converged,
            })
        })
        .collect::<Result<Vec<_>, BilevelError>>()?;
    Ok(ValidationReport {
        lambda,
        mean_ssim_before: mean(images.iter().map(|s| s.ssim_before)),
        mean_ssim_after: mean(images.iter().map(|s| s.ssim_after)),
        images,
    })
}

/// Minimizes `j` over the training interval with Brent's method.
pub fn train(ts: &TrainingSet, cfg: &SolverConfig, brent: &BrentConfig) -> Result<TrainingReport, BilevelError> {
    if ts.is_empty() {
        return Err(BilevelError::Empty);
    }
    let start = Instant::now();
    let (lo, hi) = ts.bounds;
    let (lambda_star, objective, iters, evals, converged) = if lo == hi {
        (lo, reduced_objective(lo, ts, cfg)?, 0, 1, true)
    } else {
        let r = try_brent_minimize(|l| reduced_objective(l, ts, cfg), lo, hi, brent.tol, brent.maxit)?;
        (r.x, r.fx, r.iterations, r.evaluations, r.converged)
    };
    let objective_at_min = reduced_objective(lo, ts, cfg)?;
    let objective_at_max = reduced_objective(hi, ts, cfg)?;
    let scores = validate(lambda_star, ts, cfg)?;
    Ok(TrainingReport {
        lambda_star,
        objective,
        brent_iterations: iters,
        brent_evaluations: evals,
        brent_converged: converged,
        objective_at_min,
        objective_at_max,
        scores,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

pub const SSIM_CSV_HEADER: &str = "index,ssim_before,ssim_after,cg_iterations,relative_residual";

pub fn write_ssim_csv<W: std::io::Write>(mut out: W, report: &ValidationReport) -> std::io::Result<()> {
    writeln!(out, "{SSIM_CSV_HEADER}")?;
    for s in &report.images {
        writeln!(
            out,
            "{},{},{},{},{:e}",
            s.index, s.ssim_before, s.ssim_after, s.cg_iterations, s.relative_residual
        )?;
    }
    Ok(())
}
