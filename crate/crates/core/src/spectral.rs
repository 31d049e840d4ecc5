//! Dense verification of the spectral bounds for desk-scale systems.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::kernel::{DenseKernel, KernelOp};
use crate::linops::{BasisForm, ChangeOfBasis, DiagonalPrec, PrecVariant, ShiftedSystem, SolverError};

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("matrix is not square ({rows} x {cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: max |m_ij - m_ji| = {0:e}")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    #[error("delta must lie in [0, 1], got {0}")]
    BadDelta(f64),
    #[error("eigenvalue iteration did not converge for a {0} x {0} matrix")]
    NoConvergence(usize),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// `A = λI + μ(diag(η) - Γ)` as an explicit matrix.
pub fn dense_system(lambda: f64, mu: f64, k: &DenseKernel) -> Result<DMatrix<f64>, SpectralError> {
    ShiftedSystem::new(lambda, mu, k)?;
    let mut a = k.matrix() * -mu;
    for (i, e) in k.degree().iter().enumerate() {
        a[(i, i)] = lambda + mu * e;
    }
    Ok(a)
}

/// Ascending eigenvalues with matching orthonormal eigenvectors (columns).
#[derive(Clone, Debug)]
pub struct Eigen {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn eig_symmetric(m: &DMatrix<f64>) -> Result<Eigen, SpectralError> {
    if !m.is_square() {
        return Err(SpectralError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * m.amax().max(1.0) {
        return Err(SpectralError::NotSymmetric(asym));
    }
    let sym = (m + m.transpose()) * 0.5;
    let e = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&i, &j| e.eigenvalues[i].total_cmp(&e.eigenvalues[j]));
    let values = order.iter().map(|&i| e.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| e.eigenvectors[(r, order[c])]);
    Ok(Eigen { values, vectors })
}

fn eigvals(m: &DMatrix<f64>) -> Result<Vec<f64>, SpectralError> {
    Ok(eig_symmetric(m)?.values)
}

/// Spectrum of `P⁻¹A` through the similar matrix `P^{-1/2} A P^{-1/2}`.
fn prec_spectrum(a: &DMatrix<f64>, p: &[f64]) -> Result<Vec<f64>, SpectralError> {
    let s: Vec<f64> = p.iter().map(|d| 1.0 / d.sqrt()).collect();
    eigvals(&DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| s[i] * a[(i, j)] * s[j]))
}

/// Real parts (ascending) and the largest imaginary part of the eigenvalues
/// of a general matrix.
///
/// With a stopping tolerance of one ulp the QR iteration can stall on
/// matrices that are a multiple of the identity up to rounding, so the
/// iteration is capped and the tolerance loosened a few times.
pub fn general_eigvals(m: &DMatrix<f64>) -> Result<(Vec<f64>, f64), SpectralError> {
    let n = m.nrows();
    if !m.is_square() {
        return Err(SpectralError::NotSquare { rows: n, cols: m.ncols() });
    }
    for ulps in [4.0, 32.0, 256.0] {
        let Some(schur) = nalgebra::linalg::Schur::try_new(m.clone(), ulps * f64::EPSILON, 100 * n.max(10)) else {
            continue;
        };
        let ev = schur.complex_eigenvalues();
        let imag = ev.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        let mut re: Vec<f64> = ev.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        return Ok((re, imag));
    }
    Err(SpectralError::NoConvergence(n))
}

fn dense_basis(n: usize, form: BasisForm) -> Result<(DMatrix<f64>, DMatrix<f64>), SpectralError> {
    let b = ChangeOfBasis::laplacian(n, form)?;
    let mut x = DMatrix::zeros(n, n);
    let mut xi = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        x.set_column(j, &DVector::from_vec(b.apply(&e)?));
        xi.set_column(j, &DVector::from_vec(b.apply_inverse(&e)?));
        e[j] = 0.0;
    }
    Ok((x, xi))
}

fn lower_block(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    m.view((1, 1), (n - 1, n - 1)).into_owned()
}

/// Largest deviation between two ascending spectra of equal length.
fn spectral_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundSide {
    Lower,
    Upper,
}

/// One inequality `value ≥ bound` (lower) or `value ≤ bound` (upper).
#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub side: BoundSide,
    pub value: f64,
    pub bound: f64,
    /// Signed slack, positive when the inequality holds strictly.
    pub margin: f64,
    /// False when the inequality is vacuous or its hypothesis does not hold.
    pub applicable: bool,
    pub passed: bool,
}

impl BoundCheck {
    fn new(name: impl Into<String>, side: BoundSide, value: f64, bound: f64, applicable: bool) -> Self {
        let margin = match side {
            BoundSide::Lower => value - bound,
            BoundSide::Upper => bound - value,
        };
        let tol = 1e-10 * bound.abs().max(value.abs()).max(1.0);
        Self {
            name: name.into(),
            side,
            value,
            bound,
            margin,
            applicable,
            passed: !applicable || margin >= -tol,
        }
    }
}

/// `π₂(X⁻¹P⁻¹AX)` for one basis and preconditioner.
#[derive(Clone, Debug, Serialize)]
pub struct ProjectedSpectrum {
    pub basis: BasisForm,
    pub prec: PrecVariant,
    pub values: Vec<f64>,
    /// Largest imaginary part met while computing a nonsymmetric spectrum.
    pub max_imag: f64,
    /// Distance to `Σ(P⁻¹A)` with its smallest eigenvalue removed.
    pub distance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundsReport {
    pub n: usize,
    pub lambda: f64,
    pub mu: f64,
    pub rho_l: f64,
    pub a_l: f64,
    pub rho_a: f64,
    pub a_a: f64,
    pub max_eta: f64,
    pub min_eta: f64,
    /// `min Γ_{2:n,1}`.
    pub min_gamma_col1: f64,
    /// `ρ(L) < 2 max η`, expected when every off-diagonal weight is positive.
    pub strict_rho_upper: bool,
    pub spectrum_l: Vec<f64>,
    pub spectrum_a: Vec<f64>,
    pub spectrum_jacobi: Vec<f64>,
    pub spectrum_l2: Vec<f64>,
    pub spectrum_l2_prime: Vec<f64>,
    pub projected: Vec<ProjectedSpectrum>,
    pub checks: Vec<BoundCheck>,
}

impl BoundsReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&BoundCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    /// `ρ(A) - a(A) > 1`.
    pub fn in_working_range(&self) -> bool {
        self.rho_a - self.a_a > 1.0
    }

    pub fn condition_number(&self) -> f64 {
        self.rho_a / self.spectrum_a[0]
    }
}

/// Assembles `A`, `L` and the preconditioned and projected operators, and
/// evaluates every bound with its margin.
pub fn bounds_report(k: &DenseKernel, lambda: f64, mu: f64) -> Result<BoundsReport, SpectralError> {
    let n = k.dim();
    let sys = ShiftedSystem::new(lambda, mu, k)?;
    let a = dense_system(lambda, mu, k)?;
    let eta = k.degree();
    let mut lap = -k.matrix().clone();
    for (i, e) in eta.iter().enumerate() {
        lap[(i, i)] = *e;
    }
    let spectrum_l = eigvals(&lap)?;
    let spectrum_a = eigvals(&a)?;
    let second = |s: &[f64]| if s.len() > 1 { s[1] } else { s[0] };
    let rho_l = spectrum_l[n - 1].max(-spectrum_l[0]);
    let a_l = second(&spectrum_l);
    let rho_a = spectrum_a[n - 1];
    let a_a = second(&spectrum_a);
    let max_eta = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_eta = eta.iter().copied().fold(f64::INFINITY, f64::min);
    let min_gamma_col1 = (1..n).map(|i| k.matrix()[(i, 0)]).fold(f64::INFINITY, f64::min);

    let pa = DiagonalPrec::jacobi(&sys);
    let pb = DiagonalPrec::l2_exact(&a);
    let pbp = DiagonalPrec::l2_prime(&sys);
    let spectrum_jacobi = prec_spectrum(&a, pa.diagonal())?;
    let spectrum_l2 = prec_spectrum(&a, pb.diagonal())?;
    let spectrum_l2_prime = prec_spectrum(&a, pbp.diagonal())?;

    let mut checks = vec![
        BoundCheck::new("rho(L) >= max eta", BoundSide::Lower, rho_l, max_eta, true),
        BoundCheck::new("rho(L) <= 2 max eta", BoundSide::Upper, rho_l, 2.0 * max_eta, true),
    ];
    if n > 1 {
        let nn = n as f64 / (n as f64 - 1.0);
        checks.push(BoundCheck::new("a(L) <= n/(n-1) min eta", BoundSide::Upper, a_l, nn * min_eta, true));
        checks.push(BoundCheck::new(
            "a(A) >= mu min Gamma_{2:n,1} + lambda",
            BoundSide::Lower,
            a_a,
            mu * min_gamma_col1 + lambda,
            min_gamma_col1 > 0.0,
        ));
    }
    let pa_lower = lambda / (lambda + mu * max_eta);
    let pa_upper = if n > 1 && a_l > 0.0 {
        (n as f64 / (n as f64 - 1.0) * rho_l / a_l).min(2.0)
    } else {
        2.0
    };
    // for μ = 0 the upper bound reads max{1, ...}
    let pa_upper = pa_upper.max(1.0);
    checks.push(BoundCheck::new("min Sigma(Pa^-1 A) >= lower", BoundSide::Lower, spectrum_jacobi[0], pa_lower, true));
    checks.push(BoundCheck::new("max Sigma(Pa^-1 A) <= upper", BoundSide::Upper, spectrum_jacobi[n - 1], pa_upper, true));
    for (tag, d) in [("Pb", &pb), ("Pb'", &pbp)] {
        let ratios: Vec<f64> = d.diagonal().iter().zip(pa.diagonal()).map(|(b, p)| b / p).collect();
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(0.0, f64::max);
        checks.push(BoundCheck::new(format!("min {tag}/Pa >= 1"), BoundSide::Lower, lo, 1.0, true));
        checks.push(BoundCheck::new(format!("max {tag}/Pa <= sqrt2"), BoundSide::Upper, hi, std::f64::consts::SQRT_2, true));
    }
    for (tag, s) in [("Pb", &spectrum_l2), ("Pb'", &spectrum_l2_prime)] {
        checks.push(BoundCheck::new(
            format!("min Sigma({tag}^-1 A) >= min Sigma(Pa^-1 A) / sqrt2"),
            BoundSide::Lower,
            s[0],
            spectrum_jacobi[0] / std::f64::consts::SQRT_2,
            true,
        ));
        checks.push(BoundCheck::new(
            format!("max Sigma({tag}^-1 A) <= max Sigma(Pa^-1 A)"),
            BoundSide::Upper,
            s[n - 1],
            spectrum_jacobi[n - 1],
            true,
        ));
    }

    let mut projected = Vec::new();
    if n > 1 {
        let prec_sets = [
            (PrecVariant::Jacobi, &pa, &spectrum_jacobi),
            (PrecVariant::L2Exact, &pb, &spectrum_l2),
            (PrecVariant::L2Prime, &pbp, &spectrum_l2_prime),
        ];
        for form in [BasisForm::Unitary, BasisForm::Hermitian] {
            let (x, xi) = dense_basis(n, form)?;
            let at = lower_block(&(&xi * &a * &x));
            for (variant, prec, full) in prec_sets {
                let pinv = DMatrix::from_diagonal(&DVector::from_iterator(n, prec.diagonal().iter().map(|d| 1.0 / d)));
                let dinv = lower_block(&(&xi * pinv * &x));
                let (values, max_imag) = match form {
                    BasisForm::Unitary => {
                        // π₂(D̃⁻¹) = RRᵀ, so the product is similar to Rᵀ π₂(Ã) R
                        let r = dinv
                            .cholesky()
                            .ok_or(SpectralError::NotPositiveDefinite("projected preconditioner"))?
                            .unpack();
                        (eigvals(&(r.transpose() * &at * &r))?, 0.0)
                    }
                    BasisForm::Hermitian => {
                        general_eigvals(&(dinv * &at))?
                    }
                };
                let distance = spectral_distance(&values, &full[1..]);
                let lower = full[1] - lambda / (lambda + mu * min_eta);
                let tag = format!("{form:?}/{variant:?}");
                checks.push(BoundCheck::new(
                    format!("min Sigma(projected {tag}) >= a(P^-1 A) - lambda/(lambda + mu min eta)"),
                    BoundSide::Lower,
                    values[0],
                    lower,
                    lower > 0.0,
                ));
                checks.push(BoundCheck::new(format!("min Sigma(projected {tag}) > 0"), BoundSide::Lower, values[0], 0.0, true));
                checks.push(BoundCheck::new(
                    format!("max Sigma(projected {tag}) <= rho(P^-1 A)"),
                    BoundSide::Upper,
                    values[n - 2],
                    full[n - 1],
                    true,
                ));
                checks.push(BoundCheck::new(
                    format!("max Sigma(projected {tag}) <= Pa upper bound"),
                    BoundSide::Upper,
                    values[n - 2],
                    pa_upper,
                    true,
                ));
                projected.push(ProjectedSpectrum {
                    basis: form,
                    prec: variant,
                    values,
                    max_imag,
                    distance,
                });
            }
        }
    }
    // strict positivity: rounding slack does not apply
    for c in checks.iter_mut().filter(|c| c.name.ends_with("> 0")) {
        c.passed = c.value > 0.0;
    }

    Ok(BoundsReport {
        n,
        lambda,
        mu,
        rho_l,
        a_l,
        rho_a,
        a_a,
        max_eta,
        min_eta,
        min_gamma_col1,
        strict_rho_upper: rho_l < 2.0 * max_eta,
        spectrum_l,
        spectrum_a,
        spectrum_jacobi,
        spectrum_l2,
        spectrum_l2_prime,
        projected,
        checks,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LeverageReport {
    pub delta: f64,
    /// `λ ℓ₁(λ) = δ ρ(B) + (1 - δ) a(B) + λ`.
    pub leveraged: f64,
    pub spectrum: Vec<f64>,
    /// `(Σ(A) \ {λ}) ∪ {λℓ₁(λ)}`, ascending.
    pub expected: Vec<f64>,
    pub max_deviation: f64,
    pub within_range: bool,
    pub passed: bool,
}

/// Spectrum of `(1/n)(λℓ₁ - λ) 1 1ᵀ + A` with `ℓ₂ ≡ 1`.
pub fn leverage_check(k: &DenseKernel, lambda: f64, mu: f64, delta: f64) -> Result<LeverageReport, SpectralError> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(SpectralError::BadDelta(delta));
    }
    let n = k.dim();
    let a = dense_system(lambda, mu, k)?;
    let sa = eigvals(&a)?;
    // Σ(B) = Σ(A) - λ, with B's zero eigenvalue in first position
    let a_b = if n > 1 { sa[1] - lambda } else { 0.0 };
    let rho_b = sa[n - 1] - lambda;
    let leveraged = delta * rho_b + (1.0 - delta) * a_b + lambda;
    let shift = (leveraged - lambda) / n as f64;
    let m = a.map(|x| x + shift);
    let spectrum = eigvals(&m)?;
    let mut expected: Vec<f64> = sa[1..].to_vec();
    expected.push(leveraged);
    expected.sort_by(f64::total_cmp);
    let max_deviation = spectral_distance(&spectrum, &expected);
    let eps = 1e-8 * sa[n - 1].max(1.0);
    let a_a = if n > 1 { sa[1] } else { sa[0] };
    let within_range = spectrum
        .iter()
        .all(|&s| (s >= a_a - eps && s <= sa[n - 1] + eps) || (s - leveraged).abs() <= eps);
    Ok(LeverageReport {
        delta,
        leveraged,
        spectrum,
        expected,
        max_deviation,
        within_range,
        passed: within_range && max_deviation <= eps,
    })
}

/// `κ̃ = 2 μ max η / λ + 1`.
pub fn condition_estimate(lambda: f64, mu: f64, max_eta: f64) -> f64 {
    2.0 * mu * max_eta / lambda + 1.0
}

/// One CSV row of an eigenvalue sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub sigma: f64,
    pub lambda: f64,
    pub eig_index: usize,
    pub value: f64,
    pub operator_tag: String,
}

pub const SPECTRA_CSV_HEADER: &str = "sigma,lambda,eig_index,value,operator_tag";

/// Flattens the spectra of a report into tagged rows.
pub fn spectrum_rows(report: &BoundsReport, sigma: f64) -> Vec<SpectrumRow> {
    let mut sets: Vec<(String, &[f64])> = vec![
        ("A".into(), &report.spectrum_a),
        ("jacobi".into(), &report.spectrum_jacobi),
        ("l2".into(), &report.spectrum_l2),
        ("l2-prime".into(), &report.spectrum_l2_prime),
    ];
    for p in &report.projected {
        let basis = match p.basis {
            BasisForm::Unitary => "u",
            BasisForm::Hermitian => "q",
        };
        let prec = match p.prec {
            PrecVariant::Jacobi => "jacobi",
            PrecVariant::L2Exact => "l2",
            PrecVariant::L2Prime => "l2-prime",
            PrecVariant::Custom => "custom",
        };
        sets.push((format!("projected-{basis}-{prec}"), &p.values));
    }
    sets.into_iter()
        .flat_map(|(tag, vals)| {
            vals.iter().enumerate().map(move |(i, &v)| SpectrumRow {
                sigma,
                lambda: report.lambda,
                eig_index: i,
                value: v,
                operator_tag: tag.clone(),
            })
        })
        .collect()
}

pub fn write_spectra_csv<W: Write>(mut out: W, rows: &[SpectrumRow]) -> std::io::Result<()> {
    writeln!(out, "{SPECTRA_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{:e},{}", r.sigma, r.lambda, r.eig_index, r.value, r.operator_tag)?;
    }
    Ok(())
}
