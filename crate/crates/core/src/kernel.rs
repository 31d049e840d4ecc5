//! The ANOVA similarity kernel `Γ`: matrix-free (fast or exact summation)
//! and dense.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{build_windows, FeatureError, WindowSet};
use crate::imaging::GrayImage;
use crate::transform::{gauss_transform_direct, FastsumParams, FastsumPlan, TransformError};

pub const DEFAULT_DENSE_LIMIT: usize = 5000;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("kernel needs at least one pixel")]
    Empty,
    #[error("kernel needs at least one window")]
    NoWindows,
    #[error("window {index} has {size} columns; fast summation supports at most 3")]
    WindowTooLarge { index: usize, size: usize },
    #[error("vector length {got} does not match kernel size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("dense assembly refused: n = {n} exceeds the dense limit {limit}")]
    DenseLimit { n: usize, limit: usize },
    #[error("invalid kernel matrix: {0}")]
    InvalidMatrix(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMode {
    #[default]
    Fast,
    Exact,
}

/// How to turn an image into a kernel: patch radius `ρ`, MIS bin count,
/// filtering parameter `σ` and summation backend.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub rho: usize,
    pub bins: usize,
    pub sigma: f64,
    pub mode: KernelMode,
    pub fastsum: FastsumParams,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            rho: 3,
            bins: 16,
            sigma: 30.0,
            mode: KernelMode::Fast,
            fastsum: FastsumParams::default(),
        }
    }
}

impl KernelConfig {
    pub fn windows(&self, img: &GrayImage) -> Result<WindowSet, KernelError> {
        Ok(build_windows(img, self.rho, self.bins, self.sigma)?)
    }

    pub fn build(&self, img: &GrayImage) -> Result<AnovaOperator, KernelError> {
        AnovaOperator::build(&self.windows(img)?, self.mode, &self.fastsum)
    }

    pub fn build_dense(&self, img: &GrayImage, dense_limit: usize) -> Result<DenseKernel, KernelError> {
        assemble_dense(&self.windows(img)?, dense_limit)
    }
}

/// Symmetric nonnegative weight matrix with zero diagonal, applied as a black box.
pub trait KernelOp: Sync {
    fn dim(&self) -> usize;

    /// `Γv`.
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>, KernelError>;

    /// `η = Γ1`, cached.
    fn degree(&self) -> &[f64];

    /// `Σ_ℓ Γ_ℓ^{∘2} 1` (not divided by `L`), cached.
    fn degree_squared(&self) -> &[f64];

    /// Number of subkernels `L`.
    fn num_windows(&self) -> usize;

    fn check_len(&self, v: &[f64]) -> Result<(), KernelError> {
        if v.len() != self.dim() {
            return Err(KernelError::LengthMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }
}

/// Matrix-free `Γ = (1/L) Σ_ℓ (K_ℓ - I)` with Gaussian subkernels
/// `K_ℓ = [exp(-‖W_ℓ f_i - W_ℓ f_j‖² / σ²)]`.
pub struct AnovaOperator {
    n: usize,
    sigma: f64,
    mode: KernelMode,
    fastsum: FastsumParams,
    points: Vec<(usize, Vec<f64>)>,
    plans: Vec<FastsumPlan>,
    eta: OnceLock<Vec<f64>>,
    eta2: OnceLock<Vec<f64>>,
}

impl std::fmt::Debug for AnovaOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnovaOperator")
            .field("n", &self.n)
            .field("sigma", &self.sigma)
            .field("mode", &self.mode)
            .field("windows", &self.points.len())
            .finish()
    }
}

impl AnovaOperator {
    pub fn build(ws: &WindowSet, mode: KernelMode, fastsum: &FastsumParams) -> Result<Self, KernelError> {
        let n = ws.n();
        if n == 0 {
            return Err(KernelError::Empty);
        }
        if ws.is_empty() {
            return Err(KernelError::NoWindows);
        }
        if mode == KernelMode::Fast {
            if let Some((index, w)) = ws.windows().iter().enumerate().find(|(_, w)| w.len() > 3) {
                return Err(KernelError::WindowTooLarge { index, size: w.len() });
            }
        }
        let points: Vec<(usize, Vec<f64>)> = ws
            .windows()
            .iter()
            .map(|w| (w.len(), ws.features().gather(w)))
            .collect();
        let shape = 1.0 / (ws.sigma() * ws.sigma());
        let plans = match mode {
            KernelMode::Fast => points
                .par_iter()
                .map(|(d, p)| FastsumPlan::new(*d, p, None, shape, fastsum))
                .collect::<Result<Vec<_>, _>>()?,
            KernelMode::Exact => Vec::new(),
        };
        Ok(Self {
            n,
            sigma: ws.sigma(),
            mode,
            fastsum: *fastsum,
            points,
            plans,
            eta: OnceLock::new(),
            eta2: OnceLock::new(),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mode(&self) -> KernelMode {
        self.mode
    }

    pub fn plans(&self) -> &[FastsumPlan] {
        &self.plans
    }

    /// `Σ_ℓ (K_ℓ(shape) v - v)` over all windows, summed in window order.
    fn subkernel_sum(&self, v: &[f64], shape: f64, plans: Option<&[FastsumPlan]>) -> Vec<f64> {
        let parts: Vec<Vec<f64>> = match plans {
            Some(plans) => plans
                .par_iter()
                .map(|p| p.apply(v).expect("plan size matches operator size"))
                .collect(),
            None => self
                .points
                .par_iter()
                .map(|(d, p)| gauss_transform_direct(*d, p, p, v, shape))
                .collect(),
        };
        let mut out = vec![0.0; self.n];
        for part in parts {
            for ((o, g), x) in out.iter_mut().zip(part).zip(v) {
                *o += g - x;
            }
        }
        out
    }

    fn shape(&self) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }
}

impl KernelOp for AnovaOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>, KernelError> {
        self.check_len(v)?;
        let plans = (self.mode == KernelMode::Fast).then_some(self.plans.as_slice());
        let inv_l = 1.0 / self.points.len() as f64;
        let mut out = self.subkernel_sum(v, self.shape(), plans);
        out.iter_mut().for_each(|o| *o *= inv_l);
        Ok(out)
    }

    fn degree(&self) -> &[f64] {
        self.eta.get_or_init(|| {
            self.apply(&vec![1.0; self.n])
                .expect("ones vector has the operator size")
        })
    }

    fn degree_squared(&self) -> &[f64] {
        self.eta2.get_or_init(|| {
            // squaring a Gaussian doubles its shape parameter
            let shape = 2.0 * self.shape();
            let ones = vec![1.0; self.n];
            match self.mode {
                KernelMode::Fast => {
                    let parts: Vec<Vec<f64>> = self
                        .points
                        .par_iter()
                        .map(|(d, p)| match FastsumPlan::new(*d, p, None, shape, &self.fastsum) {
                            Ok(plan) => plan.apply(&ones).expect("plan size matches operator size"),
                            // degree cap hit at σ/√2: sum this window directly
                            Err(_) => gauss_transform_direct(*d, p, p, &ones, shape),
                        })
                        .collect();
                    let mut out = vec![0.0; self.n];
                    for part in parts {
                        for (o, g) in out.iter_mut().zip(part) {
                            *o += g - 1.0;
                        }
                    }
                    out
                }
                KernelMode::Exact => self.subkernel_sum(&ones, shape, None),
            }
        })
    }

    fn num_windows(&self) -> usize {
        self.points.len()
    }
}

/// Explicit `n × n` kernel matrix for desk-scale oracles.
#[derive(Clone, Debug)]
pub struct DenseKernel {
    matrix: DMatrix<f64>,
    num_windows: usize,
    eta: Vec<f64>,
    eta2: Vec<f64>,
}

impl DenseKernel {
    /// Wraps a weight matrix as a single-window kernel. The matrix must be
    /// symmetric with zero diagonal and entries in `[0, 1]`.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self, KernelError> {
        let n = matrix.nrows();
        if n == 0 {
            return Err(KernelError::Empty);
        }
        if matrix.ncols() != n {
            return Err(KernelError::InvalidMatrix("not square".into()));
        }
        for i in 0..n {
            if matrix[(i, i)] != 0.0 {
                return Err(KernelError::InvalidMatrix(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let g = matrix[(i, j)];
                if !(0.0..=1.0).contains(&g) || g != matrix[(j, i)] {
                    return Err(KernelError::InvalidMatrix(format!("entry ({i}, {j}) = {g}")));
                }
            }
        }
        let eta = matrix.row_iter().map(|r| r.sum()).collect();
        let eta2 = matrix.row_iter().map(|r| r.iter().map(|g| g * g).sum()).collect();
        Ok(Self {
            matrix,
            num_windows: 1,
            eta,
            eta2,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Entrywise assembly of the ANOVA kernel with zero diagonal.
pub fn assemble_dense(ws: &WindowSet, dense_limit: usize) -> Result<DenseKernel, KernelError> {
    let n = ws.n();
    if n == 0 {
        return Err(KernelError::Empty);
    }
    if n > dense_limit {
        return Err(KernelError::DenseLimit { n, limit: dense_limit });
    }
    if ws.is_empty() {
        return Err(KernelError::NoWindows);
    }
    let l = ws.len();
    let shape = 1.0 / (ws.sigma() * ws.sigma());
    let windows: Vec<(usize, Vec<f64>)> = ws
        .windows()
        .iter()
        .map(|w| (w.len(), ws.features().gather(w)))
        .collect();
    // each row holds (γ_ij, Σ_ℓ exp(-2σ̄ r_ℓ²)) for all j
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = vec![0.0; n];
            let mut g2 = vec![0.0; n];
            for (d, p) in &windows {
                let xi = &p[i * d..(i + 1) * d];
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let xj = &p[j * d..(j + 1) * d];
                    let r2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
                    let e = (-shape * r2).exp();
                    g[j] += e;
                    g2[j] += e * e;
                }
            }
            g.iter_mut().for_each(|v| *v /= l as f64);
            (g, g2)
        })
        .collect();
    let mut matrix = DMatrix::zeros(n, n);
    let mut eta2 = Vec::with_capacity(n);
    for (i, (g, g2)) in rows.into_iter().enumerate() {
        for (j, v) in g.into_iter().enumerate() {
            matrix[(i, j)] = v;
        }
        eta2.push(g2.iter().sum());
    }
    // enforce exact symmetry against rounding in the window sums
    let matrix = (&matrix + matrix.transpose()) * 0.5;
    let eta = matrix.row_iter().map(|r| r.sum()).collect();
    Ok(DenseKernel {
        matrix,
        num_windows: l,
        eta,
        eta2,
    })
}

impl KernelOp for DenseKernel {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>, KernelError> {
        self.check_len(v)?;
        let x = nalgebra::DVector::from_column_slice(v);
        Ok((&self.matrix * x).as_slice().to_vec())
    }

    fn degree(&self) -> &[f64] {
        &self.eta
    }

    fn degree_squared(&self) -> &[f64] {
        &self.eta2
    }

    fn num_windows(&self) -> usize {
        self.num_windows
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::imaging::NormalStream;

    /// Random points in `[0, 255]` grouped into windows of the given sizes.
    pub fn random_windows(n: usize, sizes: &[usize], sigma: f64, seed: u64) -> WindowSet {
        let d: usize = sizes.iter().sum();
        let mut s = NormalStream::new(seed);
        let values = (0..n * d).map(|_| 255.0 * s.next_uniform()).collect();
        let mut windows = Vec::new();
        let mut c = 0;
        for &k in sizes {
            windows.push((c..c + k).collect());
            c += k;
        }
        WindowSet::from_points(n, d, values, windows, sigma).unwrap()
    }

    pub fn complete_graph(n: usize) -> DenseKernel {
        let m = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
        DenseKernel::from_matrix(m).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::imaging::NormalStream;

    fn identical_pair() -> WindowSet {
        WindowSet::from_points(2, 2, vec![5.0, 9.0, 5.0, 9.0], vec![vec![0, 1]], 10.0).unwrap()
    }

    fn rel_linf(a: &[f64], b: &[f64]) -> f64 {
        let err = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        err / b.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    #[test]
    fn identical_features_swap_entries() {
        for mode in [KernelMode::Exact, KernelMode::Fast] {
            let op = AnovaOperator::build(&identical_pair(), mode, &FastsumParams::default()).unwrap();
            let out = op.apply(&[3.0, -2.0]).unwrap();
            assert!((out[0] + 2.0).abs() < 1e-5 && (out[1] - 3.0).abs() < 1e-5, "{mode:?}: {out:?}");
            assert!(op.apply(&[0.0, 0.0]).unwrap().iter().all(|v| v.abs() < 1e-12));
            for (e, e2) in op.degree().iter().zip(op.degree_squared()) {
                assert!((e - 1.0).abs() < 1e-5 && (e2 - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn complete_similarity_degree() {
        let n = 6;
        let ws = WindowSet::from_points(n, 3, vec![4.0; 3 * n], vec![vec![0, 1], vec![2]], 30.0).unwrap();
        let op = AnovaOperator::build(&ws, KernelMode::Fast, &FastsumParams::default()).unwrap();
        assert!(op.degree().iter().all(|e| (e / (n - 1) as f64 - 1.0).abs() < 1e-5));
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let ws = WindowSet::from_points(0, 1, vec![], vec![vec![0]], 1.0).unwrap();
        assert!(matches!(
            AnovaOperator::build(&ws, KernelMode::Exact, &FastsumParams::default()),
            Err(KernelError::Empty)
        ));
        let ws = random_windows(5, &[4], 30.0, 1);
        assert!(matches!(
            AnovaOperator::build(&ws, KernelMode::Fast, &FastsumParams::default()),
            Err(KernelError::WindowTooLarge { index: 0, size: 4 })
        ));
        assert!(AnovaOperator::build(&ws, KernelMode::Exact, &FastsumParams::default()).is_ok());
        let op = AnovaOperator::build(&random_windows(5, &[1], 30.0, 1), KernelMode::Exact, &FastsumParams::default()).unwrap();
        assert!(matches!(op.apply(&[1.0; 4]), Err(KernelError::LengthMismatch { .. })));
    }

    #[test]
    fn exact_operator_matches_dense() {
        let ws = random_windows(300, &[3, 3, 2, 1], 40.0, 2);
        let op = AnovaOperator::build(&ws, KernelMode::Exact, &FastsumParams::default()).unwrap();
        let dense = assemble_dense(&ws, DEFAULT_DENSE_LIMIT).unwrap();
        let mut s = NormalStream::new(3);
        let v: Vec<f64> = (0..300).map(|_| s.next_normal()).collect();
        let a = op.apply(&v).unwrap();
        let b = dense.apply(&v).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(rel_linf(op.degree_squared(), dense.degree_squared()) < 1e-12);
    }

    #[test]
    fn fast_operator_matches_dense() {
        for sigma in [10.0, 30.0, 50.0, 200.0, 1400.0] {
            let ws = random_windows(1369, &[3, 3, 3], sigma, 4);
            let op = AnovaOperator::build(&ws, KernelMode::Fast, &FastsumParams::default()).unwrap();
            let dense = assemble_dense(&ws, DEFAULT_DENSE_LIMIT).unwrap();
            let mut s = NormalStream::new(5);
            let v: Vec<f64> = (0..1369).map(|_| s.next_uniform()).collect();
            let err = rel_linf(&op.apply(&v).unwrap(), &dense.apply(&v).unwrap());
            assert!(err <= 1e-5, "sigma {sigma}: {err:e}");
            assert!(rel_linf(op.degree(), dense.degree()) <= 1e-5);
            assert!(rel_linf(op.degree_squared(), dense.degree_squared()) <= 1e-5);
        }
    }

    #[test]
    fn dense_entries_are_valid_weights() {
        let ws = random_windows(80, &[2, 3], 30.0, 6);
        let d = assemble_dense(&ws, 100).unwrap();
        let m = d.matrix();
        for i in 0..80 {
            assert_eq!(m[(i, i)], 0.0);
            for j in 0..80 {
                assert!((0.0..=1.0).contains(&m[(i, j)]));
                assert_eq!(m[(i, j)], m[(j, i)]);
            }
        }
        assert!(matches!(assemble_dense(&ws, 79), Err(KernelError::DenseLimit { n: 80, limit: 79 })));
    }

    #[test]
    fn sigma_limits() {
        let ws = random_windows(40, &[3], 1e-3, 7);
        assert!(assemble_dense(&ws, 100).unwrap().matrix().iter().all(|&g| g <= 1e-6));
        let ws = ws.with_sigma(1e6).unwrap();
        let m = assemble_dense(&ws, 100).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                if i != j {
                    assert!((m.matrix()[(i, j)] - 1.0).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn squared_degree_bounded_by_squared_degree_for_one_window() {
        let ws = random_windows(200, &[3], 35.0, 8);
        let d = assemble_dense(&ws, 1000).unwrap();
        for (e2, e) in d.degree_squared().iter().zip(d.degree()) {
            assert!(*e2 <= e * e + 1e-12);
        }
    }

    #[test]
    fn complete_graph_kernel() {
        let k = complete_graph(3);
        assert_eq!(k.degree(), &[2.0, 2.0, 2.0]);
        assert_eq!(k.degree_squared(), &[2.0, 2.0, 2.0]);
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.4, 0.0]);
        assert!(DenseKernel::from_matrix(bad).is_err());
    }

    #[test]
    fn fast_operator_is_nearly_symmetric() {
        let ws = random_windows(2000, &[3, 3, 2], 40.0, 9);
        let op = AnovaOperator::build(&ws, KernelMode::Fast, &FastsumParams::default()).unwrap();
        let mut s = NormalStream::new(10);
        let u: Vec<f64> = (0..2000).map(|_| s.next_normal()).collect();
        let v: Vec<f64> = (0..2000).map(|_| s.next_normal()).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let lhs = dot(&op.apply(&u).unwrap(), &v);
        let rhs = dot(&u, &op.apply(&v).unwrap());
        let norm = dot(&u, &u).sqrt() * dot(&v, &v).sqrt();
        assert!((lhs - rhs).abs() <= 1e-4 * norm);
    }
}
