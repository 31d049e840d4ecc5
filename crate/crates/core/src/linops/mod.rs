//! Graph Laplacian and shifted nonlocal system, preconditioners, CG and the
//! deflated solver.

mod cg;
mod cob;
mod deflated;
mod precond;

use thiserror::Error;

use crate::kernel::{KernelError, KernelOp};

pub use cg::{pcg, pcg_monitored, CgResult};
pub use cob::{scs_down, scs_up, BasisForm, ChangeOfBasis, Scalar};
pub use deflated::{deflated_solve, solve, DeflatedSystem, InitialGuess, PrecKind, SolverConfig};
pub use precond::{projected_prec_apply, DiagonalPrec, PrecVariant};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("fidelity weight λ must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("regularization weight μ must be nonnegative and finite, got {0}")]
    BadMu(f64),
    #[error("vector length {got} does not match system size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("change of basis needs a nonzero vector")]
    ZeroVector,
    #[error("CG breakdown at iteration {iteration}: {reason}")]
    Breakdown { iteration: usize, reason: String },
    #[error("invalid solver setting: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// `L v = η ∘ v - Γ v`.
pub fn laplacian_apply<K: KernelOp + ?Sized>(op: &K, v: &[f64]) -> Result<Vec<f64>, SolverError> {
    let g = op.apply(v)?;
    Ok(op
        .degree()
        .iter()
        .zip(v)
        .zip(g)
        .map(|((e, x), gx)| e * x - gx)
        .collect())
}

/// `A = λI + μ(diag(η) - Γ)`.
#[derive(Clone, Copy)]
pub struct ShiftedSystem<'a, K: KernelOp + ?Sized> {
    lambda: f64,
    mu: f64,
    op: &'a K,
}

impl<'a, K: KernelOp + ?Sized> ShiftedSystem<'a, K> {
    pub fn new(lambda: f64, mu: f64, op: &'a K) -> Result<Self, SolverError> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(SolverError::BadLambda(lambda));
        }
        if !(mu >= 0.0 && mu.is_finite()) {
            return Err(SolverError::BadMu(mu));
        }
        Ok(Self { lambda, mu, op })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn op(&self) -> &'a K {
        self.op
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, SolverError> {
        if self.mu == 0.0 {
            if v.len() != self.dim() {
                return Err(SolverError::LengthMismatch {
                    expected: self.dim(),
                    got: v.len(),
                });
            }
            return Ok(v.iter().map(|x| self.lambda * x).collect());
        }
        let lv = laplacian_apply(self.op, v)?;
        Ok(v.iter().zip(lv).map(|(x, l)| self.lambda * x + self.mu * l).collect())
    }
}
