use serde::{Deserialize, Serialize};

use super::precond::{embed, project};
use super::{pcg, BasisForm, CgResult, ChangeOfBasis, DiagonalPrec, ShiftedSystem, SolverError};
use crate::kernel::KernelOp;

/// Solver/preconditioner combinations (the six columns of the iteration table).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecKind {
    None,
    Jacobi,
    L2,
    DeflatedNone,
    DeflatedJacobi,
    DeflatedL2,
}

impl PrecKind {
    pub const ALL: [PrecKind; 6] = [
        PrecKind::None,
        PrecKind::Jacobi,
        PrecKind::L2,
        PrecKind::DeflatedNone,
        PrecKind::DeflatedJacobi,
        PrecKind::DeflatedL2,
    ];

    pub fn is_deflated(self) -> bool {
        matches!(self, PrecKind::DeflatedNone | PrecKind::DeflatedJacobi | PrecKind::DeflatedL2)
    }

    pub fn name(self) -> &'static str {
        match self {
            PrecKind::None => "none",
            PrecKind::Jacobi => "jacobi",
            PrecKind::L2 => "l2",
            PrecKind::DeflatedNone => "deflated-none",
            PrecKind::DeflatedJacobi => "deflated-jacobi",
            PrecKind::DeflatedL2 => "deflated-l2",
        }
    }

    fn diagonal<K: KernelOp + ?Sized>(self, sys: &ShiftedSystem<'_, K>) -> Option<DiagonalPrec> {
        match self {
            PrecKind::None | PrecKind::DeflatedNone => None,
            PrecKind::Jacobi | PrecKind::DeflatedJacobi => Some(DiagonalPrec::jacobi(sys)),
            PrecKind::L2 | PrecKind::DeflatedL2 => Some(DiagonalPrec::l2_prime(sys)),
        }
    }
}

impl std::str::FromStr for PrecKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PrecKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown preconditioner {s:?}"))
    }
}

/// Starting point for CG.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGuess {
    /// `f` for plain CG, zero tail for deflated CG.
    #[default]
    Auto,
    /// `f`, or the tail of `Uᵀf` in the deflated basis.
    Data,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub prec: PrecKind,
    pub tol: f64,
    pub maxit: usize,
    pub initial: InitialGuess,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            prec: PrecKind::DeflatedJacobi,
            tol: 1e-10,
            maxit: 25,
            initial: InitialGuess::Auto,
        }
    }
}

/// The system in the basis of `U` (built for `v = 1`), restricted to the
/// block orthogonal to constants.
pub struct DeflatedSystem<'s, 'a, K: KernelOp + ?Sized> {
    sys: &'s ShiftedSystem<'a, K>,
    basis: ChangeOfBasis<f64>,
    prec: Option<DiagonalPrec>,
}

impl<'s, 'a, K: KernelOp + ?Sized> DeflatedSystem<'s, 'a, K> {
    pub fn new(sys: &'s ShiftedSystem<'a, K>, prec: Option<DiagonalPrec>) -> Result<Self, SolverError> {
        let n = sys.dim();
        if n < 2 {
            return Err(SolverError::BadConfig("deflation needs at least two unknowns".into()));
        }
        Ok(Self {
            sys,
            basis: ChangeOfBasis::laplacian(n, BasisForm::Unitary)?,
            prec,
        })
    }

    pub fn basis(&self) -> &ChangeOfBasis<f64> {
        &self.basis
    }

    /// `π₂(Uᵀ A U) y`.
    pub fn block_apply(&self, y: &[f64]) -> Result<Vec<f64>, SolverError> {
        let full = self.basis.apply(&embed(y, 0))?;
        let ay = self.sys.apply(&full)?;
        Ok(project(self.basis.apply_inverse(&ay)?, 0))
    }

    /// `π₂(Uᵀ P⁻¹ U) y`, or the identity without a preconditioner.
    pub fn prec_apply(&self, y: &[f64]) -> Result<Vec<f64>, SolverError> {
        match &self.prec {
            Some(p) => super::projected_prec_apply(p, &self.basis, y),
            None => Ok(y.to_vec()),
        }
    }

    /// Solves `A u = λ f` and maps the block solution back.
    pub fn solve(&self, f: &[f64], tol: f64, maxit: usize, initial: InitialGuess) -> Result<CgResult, SolverError> {
        let g = self.basis.apply_inverse(f)?;
        let lambda = self.sys.lambda();
        // first component decouples: λ x₁ = λ (Uᵀf)₁
        let x1 = g[0];
        let mut g = g;
        // a tail at the rounding level of U means f is constant
        let tail = g[1..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if tail <= 4.0 * g.len() as f64 * f64::EPSILON * x1.abs() {
            g[1..].iter_mut().for_each(|v| *v = 0.0);
        }
        let rhs: Vec<f64> = g[1..].iter().map(|v| lambda * v).collect();
        let x0 = match initial {
            InitialGuess::Data => g[1..].to_vec(),
            InitialGuess::Auto | InitialGuess::Zero => vec![0.0; rhs.len()],
        };
        let inner = pcg(|y| self.block_apply(y), |y| self.prec_apply(y), &rhs, &x0, tol, maxit)?;
        let mut full = inner.x;
        full.insert(0, x1);
        Ok(CgResult {
            x: self.basis.apply(&full)?,
            ..inner
        })
    }
}

fn check_rhs(n: usize, f: &[f64]) -> Result<(), SolverError> {
    if f.len() != n {
        return Err(SolverError::LengthMismatch {
            expected: n,
            got: f.len(),
        });
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::BadConfig("right-hand side has non-finite entries".into()));
    }
    Ok(())
}

/// Deflated CG for `A u = λ f` with the chosen diagonal preconditioner
/// conjugated into the deflated basis. Iterations count inner CG steps.
pub fn deflated_solve<K: KernelOp + ?Sized>(
    sys: &ShiftedSystem<'_, K>,
    f: &[f64],
    prec: Option<DiagonalPrec>,
    tol: f64,
    maxit: usize,
) -> Result<CgResult, SolverError> {
    check_rhs(sys.dim(), f)?;
    DeflatedSystem::new(sys, prec)?.solve(f, tol, maxit, InitialGuess::Auto)
}

/// Solves `A u = λ f` with any of the six solver variants.
pub fn solve<K: KernelOp + ?Sized>(sys: &ShiftedSystem<'_, K>, f: &[f64], cfg: &SolverConfig) -> Result<CgResult, SolverError> {
    check_rhs(sys.dim(), f)?;
    let prec = cfg.prec.diagonal(sys);
    if cfg.prec.is_deflated() {
        return DeflatedSystem::new(sys, prec)?.solve(f, cfg.tol, cfg.maxit, cfg.initial);
    }
    let b: Vec<f64> = f.iter().map(|v| sys.lambda() * v).collect();
    let x0 = match cfg.initial {
        InitialGuess::Auto | InitialGuess::Data => f.to_vec(),
        InitialGuess::Zero => vec![0.0; f.len()],
    };
    pcg(
        |v| sys.apply(v),
        |v| Ok(prec.as_ref().map_or_else(|| v.to_vec(), |p| p.apply_inverse(v))),
        &b,
        &x0,
        cfg.tol,
        cfg.maxit,
    )
}
