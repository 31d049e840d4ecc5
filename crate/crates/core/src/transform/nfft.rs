use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fft::{fft_friendly_size, FftNd};
use super::{check_bandwidth, NodeSet, TransformError};

/// Compactly supported window used for the spreading/gathering step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    #[default]
    KaiserBessel,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NfftParams {
    /// Oversampling factor of the FFT grid, at least 1.25.
    pub oversampling: f64,
    /// Window cutoff `m`; each node touches `2m + 2` grid points per axis.
    pub cutoff: usize,
    pub window: WindowKind,
}

impl Default for NfftParams {
    fn default() -> Self {
        Self {
            oversampling: 2.0,
            cutoff: 5,
            window: WindowKind::KaiserBessel,
        }
    }
}

impl NfftParams {
    pub fn validate(&self) -> Result<(), TransformError> {
        if !(self.oversampling >= 1.25 && self.oversampling.is_finite()) {
            return Err(TransformError::BadParameter(format!(
                "oversampling {} must be at least 1.25",
                self.oversampling
            )));
        }
        if self.cutoff == 0 {
            return Err(TransformError::BadParameter("cutoff must be positive".into()));
        }
        Ok(())
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > sum * 1e-17 {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

#[derive(Clone, Copy, Debug)]
struct Window {
    kind: WindowKind,
    m: f64,
    n: f64,
    b: f64,
}

impl Window {
    fn new(kind: WindowKind, m: usize, n: usize, bandwidth: usize) -> Self {
        let sigma = n as f64 / bandwidth as f64;
        let m = m as f64;
        let b = match kind {
            WindowKind::KaiserBessel => std::f64::consts::PI * (2.0 - 1.0 / sigma),
            WindowKind::Gaussian => 2.0 * sigma / (2.0 * sigma - 1.0) * m / std::f64::consts::PI,
        };
        Self { kind, m, n: n as f64, b }
    }

    /// `φ(t / n)` for a grid offset `t`, zero outside `|t| <= m`.
    fn value(&self, t: f64) -> f64 {
        let r = self.m * self.m - t * t;
        if r < 0.0 {
            return 0.0;
        }
        match self.kind {
            WindowKind::KaiserBessel => {
                let s = r.sqrt();
                if s < 1e-10 {
                    self.b / std::f64::consts::PI
                } else {
                    (self.b * s).sinh() / (std::f64::consts::PI * s)
                }
            }
            WindowKind::Gaussian => (-t * t / self.b).exp() / (std::f64::consts::PI * self.b).sqrt(),
        }
    }

    /// Fourier coefficient `φ̂(k)` of the periodized window.
    fn hat(&self, k: f64) -> f64 {
        match self.kind {
            WindowKind::KaiserBessel => {
                let w = 2.0 * std::f64::consts::PI * k / self.n;
                bessel_i0(self.m * (self.b * self.b - w * w).max(0.0).sqrt()) / self.n
            }
            WindowKind::Gaussian => {
                let w = std::f64::consts::PI * k / self.n;
                (-self.b * w * w).exp() / self.n
            }
        }
    }
}

/// Window values of a fixed node set against one plan's grid.
#[derive(Clone, Debug)]
pub struct NodeWeights {
    len: usize,
    dim: usize,
    support: usize,
    /// Slot `k` holds node `order[k]`; slots are sorted by grid position.
    order: Vec<u32>,
    starts: Vec<u32>,
    weights: Vec<f64>,
}

impl NodeWeights {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

fn unsort<T: Copy + Default>(sorted: &[T], order: &[u32]) -> Vec<T> {
    let mut out = vec![T::default(); sorted.len()];
    for (v, &j) in sorted.iter().zip(order) {
        out[j as usize] = *v;
    }
    out
}

/// Oversampled-FFT approximation of the NDFT and its adjoint.
#[derive(Clone, Debug)]
pub struct NfftPlan {
    bandwidth: Vec<usize>,
    grid: Vec<usize>,
    params: NfftParams,
    windows: Vec<Window>,
    /// `1 / (n_s φ̂_s(k))` for `k ∈ I_M`, per axis.
    deconv: Vec<Vec<f64>>,
    fft: FftNd,
}

impl NfftPlan {
    pub fn new(bandwidth: &[usize], params: NfftParams) -> Result<Self, TransformError> {
        check_bandwidth(bandwidth)?;
        params.validate()?;
        let grid: Vec<usize> = bandwidth
            .iter()
            .map(|&m| fft_friendly_size((params.oversampling * m as f64).ceil() as usize))
            .collect();
        let windows: Vec<Window> = grid
            .iter()
            .zip(bandwidth)
            .map(|(&n, &m)| Window::new(params.window, params.cutoff, n, m))
            .collect();
        let deconv = windows
            .iter()
            .zip(bandwidth)
            .map(|(w, &m)| {
                (0..m)
                    .map(|i| 1.0 / (w.n * w.hat(i as f64 - (m / 2) as f64)))
                    .collect()
            })
            .collect();
        Ok(Self {
            bandwidth: bandwidth.to_vec(),
            fft: FftNd::new(&grid),
            grid,
            params,
            windows,
            deconv,
        })
    }

    pub fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    pub fn bandwidth(&self) -> &[usize] {
        &self.bandwidth
    }

    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    pub fn params(&self) -> &NfftParams {
        &self.params
    }

    pub fn num_coeffs(&self) -> usize {
        self.bandwidth.iter().product()
    }

    pub fn node_weights(&self, nodes: &NodeSet) -> Result<NodeWeights, TransformError> {
        if nodes.dim() != self.dim() {
            return Err(TransformError::LengthMismatch {
                expected: self.dim(),
                got: nodes.dim(),
            });
        }
        let d = self.dim();
        let m = self.params.cutoff as i64;
        let support = 2 * self.params.cutoff + 2;
        let cell = |j: usize| -> Vec<i64> {
            nodes
                .node(j)
                .iter()
                .zip(&self.grid)
                .map(|(&x, &n)| ((x * n as f64).floor() as i64).rem_euclid(n as i64))
                .collect()
        };
        // grid order keeps consecutive nodes on nearby cache lines
        let mut order: Vec<u32> = (0..nodes.len() as u32).collect();
        let cells: Vec<Vec<i64>> = (0..nodes.len()).map(cell).collect();
        order.sort_by(|&a, &b| cells[a as usize].cmp(&cells[b as usize]));
        let mut starts = Vec::with_capacity(nodes.len() * d);
        let mut weights = Vec::with_capacity(nodes.len() * d * support);
        for &j in &order {
            for (s, &x) in nodes.node(j as usize).iter().enumerate() {
                let n = self.grid[s] as i64;
                let u = x * n as f64;
                let l0 = u.floor() as i64 - m;
                starts.push(l0.rem_euclid(n) as u32);
                for t in 0..support as i64 {
                    weights.push(self.windows[s].value(u - (l0 + t) as f64));
                }
            }
        }
        Ok(NodeWeights {
            len: nodes.len(),
            dim: d,
            support,
            order,
            starts,
            weights,
        })
    }

    /// Visits every `(grid index, weight)` pair touched by node `j`.
    #[inline]
    fn for_each_tap(&self, w: &NodeWeights, j: usize, mut f: impl FnMut(usize, f64)) {
        let p = w.support;
        let st = &w.starts[j * w.dim..(j + 1) * w.dim];
        let wt = &w.weights[j * w.dim * p..(j + 1) * w.dim * p];
        let wrap = |start: u32, t: usize, n: usize| {
            let i = start as usize + t;
            if i >= n {
                i % n
            } else {
                i
            }
        };
        match w.dim {
            1 => {
                for t in 0..p {
                    f(wrap(st[0], t, self.grid[0]), wt[t]);
                }
            }
            2 => {
                let n1 = self.grid[1];
                let idx1: Vec<usize> = (0..p).map(|t| wrap(st[1], t, n1)).collect();
                for t0 in 0..p {
                    let base = wrap(st[0], t0, self.grid[0]) * n1;
                    let a = wt[t0];
                    for t1 in 0..p {
                        f(base + idx1[t1], a * wt[p + t1]);
                    }
                }
            }
            _ => {
                let (n1, n2) = (self.grid[1], self.grid[2]);
                let mut idx1 = [0usize; 64];
                let mut idx2 = [0usize; 64];
                for t in 0..p {
                    idx1[t] = wrap(st[1], t, n1);
                    idx2[t] = wrap(st[2], t, n2);
                }
                for t0 in 0..p {
                    let b0 = wrap(st[0], t0, self.grid[0]) * n1;
                    let a0 = wt[t0];
                    for t1 in 0..p {
                        let b1 = (b0 + idx1[t1]) * n2;
                        let a1 = a0 * wt[p + t1];
                        for t2 in 0..p {
                            f(b1 + idx2[t2], a1 * wt[2 * p + t2]);
                        }
                    }
                }
            }
        }
    }

    pub(crate) fn check_weights(&self, w: &NodeWeights) {
        assert!(
            w.dim == self.dim() && w.support == 2 * self.params.cutoff + 2,
            "node weights built for another plan"
        );
        assert!(w.support <= 64, "window cutoff too large");
    }

    pub(crate) fn spread(&self, values: &[Complex64], w: &NodeWeights, grid: &mut [Complex64]) {
        self.check_weights(w);
        for (k, &j) in w.order.iter().enumerate() {
            let v = values[j as usize];
            self.for_each_tap(w, k, |i, a| grid[i] += v * a);
        }
    }

    /// Calls `f(row, start, weight)` for each run of `support` consecutive
    /// cells along the last axis touched by node `j`; `row` is the offset of
    /// the grid row and the run may wrap past its end.
    #[inline]
    fn for_each_run(&self, w: &NodeWeights, j: usize, mut f: impl FnMut(usize, usize, f64)) {
        let p = w.support;
        let d = w.dim;
        let st = &w.starts[j * d..(j + 1) * d];
        let wt = &w.weights[j * d * p..(j + 1) * d * p];
        let wrap = |start: u32, t: usize, n: usize| {
            let i = start as usize + t;
            if i >= n {
                i - n
            } else {
                i
            }
        };
        let n_last = self.grid[d - 1];
        let start = st[d - 1] as usize;
        match d {
            1 => f(0, start, 1.0),
            2 => {
                for t0 in 0..p {
                    f(wrap(st[0], t0, self.grid[0]) * n_last, start, wt[t0]);
                }
            }
            _ => {
                let n1 = self.grid[1];
                for t0 in 0..p {
                    let b0 = wrap(st[0], t0, self.grid[0]) * n1;
                    let a0 = wt[t0];
                    for t1 in 0..p {
                        f((b0 + wrap(st[1], t1, n1)) * n_last, start, a0 * wt[p + t1]);
                    }
                }
            }
        }
    }

    pub(crate) fn spread_real(&self, values: &[f64], w: &NodeWeights, grid: &mut [f64]) {
        self.check_weights(w);
        let p = w.support;
        let d = w.dim;
        let n = self.grid[d - 1];
        for (k, &j) in w.order.iter().enumerate() {
            let v = values[j as usize];
            let last = &w.weights[(k * d + d - 1) * p..(k * d + d) * p];
            self.for_each_run(w, k, |row, start, a| {
                let a = a * v;
                let row = &mut grid[row..row + n];
                if start + p <= n {
                    for (g, &c) in row[start..start + p].iter_mut().zip(last) {
                        *g += a * c;
                    }
                } else {
                    for (t, &c) in last.iter().enumerate() {
                        row[(start + t) % n] += a * c;
                    }
                }
            });
        }
    }

    pub(crate) fn gather(&self, grid: &[Complex64], w: &NodeWeights) -> Vec<Complex64> {
        self.check_weights(w);
        let sorted: Vec<Complex64> = (0..w.len)
            .into_par_iter()
            .with_min_len(256)
            .map(|k| {
                let mut acc = Complex64::new(0.0, 0.0);
                self.for_each_tap(w, k, |i, a| acc += grid[i] * a);
                acc
            })
            .collect();
        unsort(&sorted, &w.order)
    }

    pub(crate) fn gather_real(&self, grid: &[f64], w: &NodeWeights) -> Vec<f64> {
        self.check_weights(w);
        let p = w.support;
        let d = w.dim;
        let n = self.grid[d - 1];
        let sorted: Vec<f64> = (0..w.len)
            .into_par_iter()
            .with_min_len(256)
            .map(|k| {
                let last = &w.weights[(k * d + d - 1) * p..(k * d + d) * p];
                let mut acc = 0.0;
                self.for_each_run(w, k, |row, start, a| {
                    let row = &grid[row..row + n];
                    let dot: f64 = if start + p <= n {
                        row[start..start + p].iter().zip(last).map(|(g, c)| g * c).sum()
                    } else {
                        last.iter().enumerate().map(|(t, c)| row[(start + t) % n] * c).sum()
                    };
                    acc += a * dot;
                });
                acc
            })
            .collect();
        unsort(&sorted, &w.order)
    }

    /// `1 / (n_s φ̂_s(k))` for `|k| <= M_s / 2`.
    pub(crate) fn deconvolution(&self, axis: usize, k: i64) -> f64 {
        self.deconv[axis][(k + (self.bandwidth[axis] / 2) as i64) as usize]
    }

    /// Calls `f(grid index, coefficient index, deconvolution factor)` for every `k ∈ I_M`.
    pub(crate) fn for_each_mode(&self, mut f: impl FnMut(usize, usize, f64)) {
        let d = self.dim();
        let mut pos = vec![0usize; d];
        for idx in 0..self.num_coeffs() {
            let mut rem = idx;
            for s in (0..d).rev() {
                pos[s] = rem % self.bandwidth[s];
                rem /= self.bandwidth[s];
            }
            let mut g = 0usize;
            let mut factor = 1.0;
            for s in 0..d {
                let m = self.bandwidth[s];
                let n = self.grid[s];
                let k = pos[s] as i64 - (m / 2) as i64;
                g = g * n + k.rem_euclid(n as i64) as usize;
                factor *= self.deconv[s][pos[s]];
            }
            f(g, idx, factor);
        }
    }

    pub fn nfft(&self, coeffs: &[Complex64], nodes: &NodeSet) -> Result<Vec<Complex64>, TransformError> {
        let w = self.node_weights(nodes)?;
        self.nfft_with(coeffs, &w)
    }

    pub fn nfft_with(&self, coeffs: &[Complex64], w: &NodeWeights) -> Result<Vec<Complex64>, TransformError> {
        if coeffs.len() != self.num_coeffs() {
            return Err(TransformError::LengthMismatch {
                expected: self.num_coeffs(),
                got: coeffs.len(),
            });
        }
        let mut grid = vec![Complex64::new(0.0, 0.0); self.fft.len()];
        self.for_each_mode(|g, i, factor| grid[g] = coeffs[i] * factor);
        self.fft.forward(&mut grid);
        Ok(self.gather(&grid, w))
    }

    pub fn nfft_adjoint(&self, values: &[Complex64], nodes: &NodeSet) -> Result<Vec<Complex64>, TransformError> {
        let w = self.node_weights(nodes)?;
        self.nfft_adjoint_with(values, &w)
    }

    pub fn nfft_adjoint_with(&self, values: &[Complex64], w: &NodeWeights) -> Result<Vec<Complex64>, TransformError> {
        if values.len() != w.len {
            return Err(TransformError::LengthMismatch {
                expected: w.len,
                got: values.len(),
            });
        }
        let mut grid = vec![Complex64::new(0.0, 0.0); self.fft.len()];
        self.spread(values, w, &mut grid);
        self.fft.inverse(&mut grid);
        let mut out = vec![Complex64::new(0.0, 0.0); self.num_coeffs()];
        self.for_each_mode(|g, i, factor| out[i] = grid[g] * factor);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::super::{ndft, ndft_adjoint};
    use super::*;

    fn plan(m: &[usize], cutoff: usize) -> NfftPlan {
        NfftPlan::new(
            m,
            NfftParams {
                cutoff,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn bessel_i0_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-16);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-15);
        assert!((bessel_i0(10.0) / 2815.716_628_466_254 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_coefficients_give_zero() {
        let nodes = random_nodes(2, 9, 3);
        let out = plan(&[8, 8], 4).nfft(&vec![Complex64::new(0.0, 0.0); 64], &nodes).unwrap();
        assert!(out.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn one_dimensional_accuracy_at_cutoff_eight() {
        let nodes = random_nodes(1, 100, 5);
        let f = random_complex(32, 6);
        let p = plan(&[32], 8);
        let exact = ndft(&f, &[32], &nodes).unwrap();
        assert!(rel_linf(&p.nfft(&f, &nodes).unwrap(), &exact) <= 1e-10);
        let a = random_complex(100, 7);
        let exact = ndft_adjoint(&a, &nodes, &[32]).unwrap();
        assert!(rel_linf(&p.nfft_adjoint(&a, &nodes).unwrap(), &exact) <= 1e-10);
    }

    #[test]
    fn three_dimensional_accuracy_at_cutoff_five() {
        let m = [16, 16, 16];
        let nodes = random_nodes(3, 60, 8);
        let f = random_complex(4096, 9);
        let p = plan(&m, 5);
        let exact = ndft(&f, &m, &nodes).unwrap();
        assert!(rel_linf(&p.nfft(&f, &nodes).unwrap(), &exact) <= 1e-6);
        let a = random_complex(60, 10);
        let exact = ndft_adjoint(&a, &nodes, &m).unwrap();
        assert!(rel_linf(&p.nfft_adjoint(&a, &nodes).unwrap(), &exact) <= 1e-6);
    }

    #[test]
    fn error_decreases_with_cutoff() {
        let m = [24, 12];
        let nodes = random_nodes(2, 50, 11);
        let f = random_complex(288, 12);
        let exact = ndft(&f, &m, &nodes).unwrap();
        let errs: Vec<f64> = [2, 4, 6, 8]
            .iter()
            .map(|&c| rel_linf(&plan(&m, c).nfft(&f, &nodes).unwrap(), &exact))
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] <= (10.0 * w[0]).max(1e-13), "{errs:?}");
        }
        assert!(errs[3] < 1e-12, "{errs:?}");
    }

    #[test]
    fn gaussian_window_is_usable_but_less_accurate() {
        let nodes = random_nodes(1, 40, 13);
        let f = random_complex(16, 14);
        let p = NfftPlan::new(
            &[16],
            NfftParams {
                window: WindowKind::Gaussian,
                cutoff: 8,
                ..Default::default()
            },
        )
        .unwrap();
        let err = rel_linf(&p.nfft(&f, &nodes).unwrap(), &ndft(&f, &[16], &nodes).unwrap());
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn adjoint_identity() {
        for dim in 1..=3usize {
            let m = vec![10; dim];
            let total = 10usize.pow(dim as u32);
            let nodes = random_nodes(dim, 40, 20 + dim as u64);
            let p = plan(&m, 5);
            let f = random_complex(total, 21);
            let a = random_complex(40, 22);
            let lhs: Complex64 = p.nfft(&f, &nodes).unwrap().iter().zip(&a).map(|(x, y)| x * y.conj()).sum();
            let rhs: Complex64 = f
                .iter()
                .zip(p.nfft_adjoint(&a, &nodes).unwrap())
                .map(|(x, y)| x * y.conj())
                .sum();
            assert!((lhs - rhs).norm() <= 1e-8 * (lhs.norm() + 1.0), "d={dim}");
        }
    }

    #[test]
    fn bad_parameters_are_rejected() {
        assert!(NfftPlan::new(&[7], NfftParams::default()).is_err());
        assert!(NfftPlan::new(
            &[8],
            NfftParams {
                oversampling: 1.0,
                ..Default::default()
            }
        )
        .is_err());
    }
}
