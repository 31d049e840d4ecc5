use serde::{Deserialize, Serialize};

use super::SolverError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgResult {
    pub x: Vec<f64>,
    /// Number of operator applications inside the iteration loop.
    pub iterations: usize,
    /// `‖b - Ax‖₂ / ‖b‖₂`, recomputed from the final iterate.
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual<A>(apply_a: &mut A, b: &[f64], x: &[f64]) -> Result<Vec<f64>, SolverError>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>, SolverError>,
{
    let ax = apply_a(x)?;
    Ok(b.iter().zip(ax).map(|(bi, ai)| bi - ai).collect())
}

/// Preconditioned conjugate gradients.
///
/// `apply_minv` applies the inverse preconditioner. Iteration stops once the
/// recurrence residual drops below `tol · ‖b‖` and an explicitly recomputed
/// residual confirms it; otherwise CG restarts from the true residual.
pub fn pcg<A, M>(apply_a: A, apply_minv: M, b: &[f64], x0: &[f64], tol: f64, maxit: usize) -> Result<CgResult, SolverError>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>, SolverError>,
    M: FnMut(&[f64]) -> Result<Vec<f64>, SolverError>,
{
    pcg_monitored(apply_a, apply_minv, b, x0, tol, maxit, |_, _| {})
}

/// [`pcg`] calling `monitor(iteration, x)` after every update.
pub fn pcg_monitored<A, M, F>(
    mut apply_a: A,
    mut apply_minv: M,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    maxit: usize,
    mut monitor: F,
) -> Result<CgResult, SolverError>
where
    A: FnMut(&[f64]) -> Result<Vec<f64>, SolverError>,
    M: FnMut(&[f64]) -> Result<Vec<f64>, SolverError>,
    F: FnMut(usize, &[f64]),
{
    if x0.len() != b.len() {
        return Err(SolverError::LengthMismatch {
            expected: b.len(),
            got: x0.len(),
        });
    }
    if !(tol > 0.0) {
        return Err(SolverError::BadConfig(format!("tolerance {tol} must be positive")));
    }
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(CgResult {
            x: vec![0.0; b.len()],
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let breakdown = |iteration: usize, reason: &str| SolverError::Breakdown {
        iteration,
        reason: reason.to_string(),
    };

    let mut x = x0.to_vec();
    let mut r = if x.iter().all(|&v| v == 0.0) {
        b.to_vec()
    } else {
        residual(&mut apply_a, b, &x)?
    };
    let mut rel = norm(&r) / bnorm;
    if !rel.is_finite() {
        return Err(breakdown(0, "non-finite initial residual"));
    }
    if rel <= tol || maxit == 0 {
        return Ok(CgResult {
            x,
            iterations: 0,
            relative_residual: rel,
            converged: rel <= tol,
        });
    }

    let mut z = apply_minv(&r)?;
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < maxit {
        iterations += 1;
        let q = apply_a(&p)?;
        let pq = dot(&p, &q);
        if !pq.is_finite() || pq <= 0.0 {
            return Err(breakdown(iterations, "operator is not positive definite along the search direction"));
        }
        let alpha = rz / pq;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        monitor(iterations, &x);
        rel = norm(&r) / bnorm;
        if !rel.is_finite() {
            return Err(breakdown(iterations, "non-finite residual"));
        }
        let mut restart = false;
        if rel <= tol {
            let true_r = residual(&mut apply_a, b, &x)?;
            rel = norm(&true_r) / bnorm;
            if rel <= tol {
                converged = true;
                break;
            }
            r = true_r;
            restart = true;
        }
        z = apply_minv(&r)?;
        let rz_new = dot(&r, &z);
        if !rz_new.is_finite() || rz_new < 0.0 {
            return Err(breakdown(iterations, "preconditioner is not positive definite"));
        }
        if restart {
            p.clone_from(&z);
        } else {
            let beta = rz_new / rz;
            for i in 0..p.len() {
                p[i] = z[i] + beta * p[i];
            }
        }
        rz = rz_new;
    }
    if !converged {
        rel = norm(&residual(&mut apply_a, b, &x)?) / bnorm;
    }
    Ok(CgResult {
        x,
        iterations,
        relative_residual: rel,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::testutil::{complete_graph, random_windows};
    use crate::kernel::{assemble_dense, KernelOp};
    use crate::linops::{DiagonalPrec, ShiftedSystem};
    use nalgebra::{DMatrix, DVector};

    fn ident(v: &[f64]) -> Result<Vec<f64>, SolverError> {
        Ok(v.to_vec())
    }

    #[test]
    fn identity_system_in_one_step() {
        let b = [1.0, -2.0, 5.0];
        let r = pcg(ident, ident, &b, &[0.0; 3], 1e-12, 10).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.converged);
        assert_eq!(r.x, b.to_vec());
    }

    #[test]
    fn complete_graph_system_matches_direct_solve() {
        let k3 = complete_graph(3);
        let sys = ShiftedSystem::new(1.0, 1.0, &k3).unwrap();
        let b = [1.0, 2.0, 3.0];
        let r = pcg(|v| sys.apply(v), ident, &b, &[0.0; 3], 1e-12, 10).unwrap();
        let a = DMatrix::from_fn(3, 3, |i, j| if i == j { 3.0 } else { -1.0 });
        let exact = a.lu().solve(&DVector::from_column_slice(&b)).unwrap();
        assert!(r.iterations <= 3);
        assert!(r.x.iter().zip(exact.iter()).all(|(x, y)| (x - y).abs() < 1e-9));
    }

    #[test]
    fn zero_iterations_return_the_initial_guess() {
        let r = pcg(ident, ident, &[1.0, 1.0], &[0.5, 0.0], 1e-8, 0).unwrap();
        assert_eq!(r.x, vec![0.5, 0.0]);
        assert!(!r.converged);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn non_finite_values_report_breakdown() {
        let nan = |v: &[f64]| Ok(v.iter().map(|_| f64::NAN).collect());
        assert!(matches!(
            pcg(nan, ident, &[1.0], &[1.0], 1e-8, 5),
            Err(SolverError::Breakdown { .. })
        ));
        let neg = |v: &[f64]| Ok(v.iter().map(|x| -x).collect());
        assert!(matches!(
            pcg(neg, ident, &[1.0, 2.0], &[0.0, 0.0], 1e-8, 5),
            Err(SolverError::Breakdown { iteration: 1, .. })
        ));
    }

    #[test]
    fn energy_norm_error_is_monotone() {
        let k = assemble_dense(&random_windows(120, &[3, 3], 30.0, 3), 200).unwrap();
        let sys = ShiftedSystem::new(1e-3, 1e-2, &k).unwrap();
        let n = k.dim();
        let b: Vec<f64> = (0..n).map(|i| ((i * 7) % 13) as f64).collect();
        let a = DMatrix::from_fn(n, n, |i, j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            sys.apply(&e).unwrap()[i]
        });
        let exact = a.clone().cholesky().unwrap().solve(&DVector::from_column_slice(&b));
        let prec = DiagonalPrec::jacobi(&sys);
        let mut errs = Vec::new();
        let res = pcg_monitored(
            |v| sys.apply(v),
            |v| Ok(prec.apply_inverse(v)),
            &b,
            &vec![0.0; n],
            1e-10,
            200,
            |_, x| {
                let e = DVector::from_column_slice(x) - &exact;
                errs.push(e.dot(&(&a * &e)).sqrt());
            },
        )
        .unwrap();
        assert!(res.converged);
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-10) + 1e-14);
        }
    }
}
