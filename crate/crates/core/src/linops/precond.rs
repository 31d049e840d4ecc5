use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ChangeOfBasis, ShiftedSystem, SolverError};
use crate::kernel::KernelOp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecVariant {
    /// `P_a = λI + μ diag(η)`.
    Jacobi,
    /// `P_b′`, row ℓ₂ norms with cross-window terms dropped.
    L2Prime,
    /// `P_b`, exact row ℓ₂ norms of a dense `A`.
    L2Exact,
    Custom,
}

/// Positive diagonal preconditioner `P`; `apply_inverse` computes `P⁻¹v`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalPrec {
    variant: PrecVariant,
    diag: Vec<f64>,
}

impl DiagonalPrec {
    pub fn jacobi<K: KernelOp + ?Sized>(sys: &ShiftedSystem<'_, K>) -> Self {
        let (l, m) = (sys.lambda(), sys.mu());
        Self {
            variant: PrecVariant::Jacobi,
            diag: sys.op().degree().iter().map(|e| l + m * e).collect(),
        }
    }

    /// `(P_b′)_ii = sqrt((μ/L)² (η₂)_i + (P_a)_ii²)`.
    pub fn l2_prime<K: KernelOp + ?Sized>(sys: &ShiftedSystem<'_, K>) -> Self {
        let pa = Self::jacobi(sys);
        let c = sys.mu() / sys.op().num_windows() as f64;
        let eta2 = sys.op().degree_squared();
        Self {
            variant: PrecVariant::L2Prime,
            diag: pa
                .diag
                .iter()
                .zip(eta2)
                .map(|(p, e2)| (c * c * e2 + p * p).sqrt())
                .collect(),
        }
    }

    /// Row ℓ₂ norms of an explicit system matrix.
    pub fn l2_exact(a: &DMatrix<f64>) -> Self {
        Self {
            variant: PrecVariant::L2Exact,
            diag: a.row_iter().map(|r| r.norm()).collect(),
        }
    }

    pub fn from_diagonal(diag: Vec<f64>) -> Result<Self, SolverError> {
        if let Some(i) = diag.iter().position(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(SolverError::BadConfig(format!("diagonal entry {i} is not positive")));
        }
        Ok(Self {
            variant: PrecVariant::Custom,
            diag,
        })
    }

    pub fn variant(&self) -> PrecVariant {
        self.variant
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn apply_inverse(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.diag).map(|(x, d)| x / d).collect()
    }
}

/// `π₂(X⁻¹ P⁻¹ X) y`: embed `y` around the deflated coordinate, conjugate,
/// and drop that coordinate again.
pub fn projected_prec_apply(prec: &DiagonalPrec, basis: &ChangeOfBasis<f64>, y: &[f64]) -> Result<Vec<f64>, SolverError> {
    let n = basis.dim();
    if y.len() + 1 != n || prec.diag.len() != n {
        return Err(SolverError::LengthMismatch {
            expected: n - 1,
            got: y.len(),
        });
    }
    let p = basis.pivot();
    let full = embed(y, p);
    let x = basis.apply(&full)?;
    let z = basis.apply_inverse(&prec.apply_inverse(&x))?;
    Ok(project(z, p))
}

pub(crate) fn embed(y: &[f64], p: usize) -> Vec<f64> {
    let mut full = Vec::with_capacity(y.len() + 1);
    full.extend_from_slice(&y[..p]);
    full.push(0.0);
    full.extend_from_slice(&y[p..]);
    full
}

pub(crate) fn project(mut z: Vec<f64>, p: usize) -> Vec<f64> {
    z.remove(p);
    z
}

#[cfg(test)]
mod tests {
    use super::super::BasisForm;
    use super::*;
    use crate::imaging::NormalStream;
    use crate::kernel::testutil::{complete_graph, random_windows};
    use crate::kernel::{assemble_dense, AnovaOperator, KernelMode};
    use crate::transform::FastsumParams;

    #[test]
    fn jacobi_on_complete_graph() {
        let k3 = complete_graph(3);
        let sys = ShiftedSystem::new(1.0, 1.0, &k3).unwrap();
        assert_eq!(DiagonalPrec::jacobi(&sys).diagonal(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn exact_l2_on_complete_graph() {
        let a = DMatrix::from_fn(3, 3, |i, j| if i == j { 3.0 } else { -1.0 });
        let p = DiagonalPrec::l2_exact(&a);
        assert!(p.diagonal().iter().all(|d| (d - 11f64.sqrt()).abs() < 1e-15));
    }

    #[test]
    fn jacobi_matches_dense_diagonal() {
        let k = assemble_dense(&random_windows(70, &[3, 3], 30.0, 1), 100).unwrap();
        let sys = ShiftedSystem::new(0.2, 0.5, &k).unwrap();
        let p = DiagonalPrec::jacobi(&sys);
        for i in 0..70 {
            let mut e = vec![0.0; 70];
            e[i] = 1.0;
            assert!((sys.apply(&e).unwrap()[i] - p.diagonal()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_prime_sandwich() {
        for seed in 0..5 {
            let ws = random_windows(120, &[3, 3, 2], 25.0 + 10.0 * seed as f64, seed);
            let op = AnovaOperator::build(&ws, KernelMode::Fast, &FastsumParams::default()).unwrap();
            for (l, m) in [(1e-3, 1e-2), (1.0, 1.0), (1e-9, 5.0)] {
                let sys = ShiftedSystem::new(l, m, &op).unwrap();
                let pa = DiagonalPrec::jacobi(&sys);
                let pb = DiagonalPrec::l2_prime(&sys);
                for (a, b) in pa.diagonal().iter().zip(pb.diagonal()) {
                    assert!(*a <= *b + 1e-12 && *b <= 2f64.sqrt() * a + 1e-12);
                }
            }
            let sys = ShiftedSystem::new(0.7, 0.0, &op).unwrap();
            assert!(DiagonalPrec::l2_prime(&sys).diagonal().iter().all(|d| *d == 0.7));
        }
    }

    #[test]
    fn projected_identity_and_scalar() {
        let basis = ChangeOfBasis::laplacian(9, BasisForm::Unitary).unwrap();
        let y: Vec<f64> = (0..8).map(|i| i as f64 - 3.5).collect();
        let id = DiagonalPrec::from_diagonal(vec![1.0; 9]).unwrap();
        let out = projected_prec_apply(&id, &basis, &y).unwrap();
        assert!(out.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-14));
        let c = DiagonalPrec::from_diagonal(vec![4.0; 9]).unwrap();
        let out = projected_prec_apply(&c, &basis, &y).unwrap();
        assert!(out.iter().zip(&y).all(|(a, b)| (a - b / 4.0).abs() < 1e-14));
    }

    #[test]
    fn projected_matches_dense_conjugation() {
        let n = 50;
        let k = assemble_dense(&random_windows(n, &[3, 2], 30.0, 7), 100).unwrap();
        let sys = ShiftedSystem::new(1e-2, 1.0, &k).unwrap();
        let prec = DiagonalPrec::jacobi(&sys);
        let mut s = NormalStream::new(8);
        let y: Vec<f64> = (0..n - 1).map(|_| s.next_normal()).collect();
        for form in [BasisForm::Unitary, BasisForm::Hermitian] {
            let basis = ChangeOfBasis::laplacian(n, form).unwrap();
            let x = DMatrix::from_fn(n, n, |i, j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                basis.apply(&e).unwrap()[i]
            });
            let xi = x.clone().try_inverse().unwrap();
            let pinv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                n,
                prec.diagonal().iter().map(|d| 1.0 / d),
            ));
            let conj = &xi * pinv * &x;
            let block = conj.view((1, 1), (n - 1, n - 1));
            let expect = block * nalgebra::DVector::from_column_slice(&y);
            let got = projected_prec_apply(&prec, &basis, &y).unwrap();
            let err = got.iter().zip(expect.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-11, "{form:?}: {err:e}");
        }
    }
}
