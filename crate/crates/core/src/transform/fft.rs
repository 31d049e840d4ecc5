use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftDirection, FftPlanner};

/// Smallest even integer `>= target` whose prime factors are 2, 3 and 5.
pub fn fft_friendly_size(target: usize) -> usize {
    let mut n = target.max(2);
    loop {
        if n % 2 == 0 {
            let mut r = n;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            if r == 1 {
                return n;
            }
        }
        n += 1;
    }
}

const LINE_BATCH: usize = 16;

/// Unnormalized multi-dimensional complex FFT on a row-major grid.
#[derive(Clone)]
pub struct FftNd {
    dims: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for FftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftNd").field("dims", &self.dims).finish()
    }
}

impl FftNd {
    pub fn new(dims: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            dims: dims.to_vec(),
            forward: dims.iter().map(|&n| planner.plan_fft(n, FftDirection::Forward)).collect(),
            inverse: dims.iter().map(|&n| planner.plan_fft(n, FftDirection::Inverse)).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Σ_l x_l e^{-2πi k·l/n}`.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.forward);
    }

    /// `Σ_l x_l e^{+2πi k·l/n}` (no 1/N factor).
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inverse);
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(data.len(), self.len(), "grid size mismatch");
        let d = self.dims.len();
        let mut scratch = Vec::new();
        let mut lines = Vec::new();
        for axis in 0..d {
            let n = self.dims[axis];
            let plan = &plans[axis];
            let need = plan.get_inplace_scratch_len();
            if scratch.len() < need {
                scratch.resize(need, Complex64::new(0.0, 0.0));
            }
            let stride: usize = self.dims[axis + 1..].iter().product();
            if stride == 1 {
                plan.process_with_scratch(data, &mut scratch[..need]);
                continue;
            }
            let outer: usize = self.dims[..axis].iter().product();
            // gather a few strided lines at a time; each copy reads a short contiguous run
            let batch = stride.min(LINE_BATCH);
            lines.resize(n * batch, Complex64::new(0.0, 0.0));
            for o in 0..outer {
                let block = &mut data[o * n * stride..(o + 1) * n * stride];
                for i0 in (0..stride).step_by(batch) {
                    let b = batch.min(stride - i0);
                    let lines = &mut lines[..n * b];
                    for j in 0..n {
                        let row = &block[j * stride + i0..j * stride + i0 + b];
                        for (i, v) in row.iter().enumerate() {
                            lines[i * n + j] = *v;
                        }
                    }
                    plan.process_with_scratch(lines, &mut scratch[..need]);
                    for j in 0..n {
                        let row = &mut block[j * stride + i0..j * stride + i0 + b];
                        for (i, v) in row.iter_mut().enumerate() {
                            *v = lines[i * n + j];
                        }
                    }
                }
            }
        }
    }
}

/// Position of the `j`-th retained mode of a length-`n` axis keeping `keep`
/// modes `-keep/2 .. keep/2 - 1` (FFT ordering).
fn kept_position(j: usize, keep: usize, n: usize) -> usize {
    if j < keep / 2 {
        j
    } else {
        n - keep + j
    }
}

/// One strided axis of a row-major `(outer, len, inner)` array. With
/// `pad == false` the length-`n` lines are transformed and only `len_out`
/// retained modes are written; with `pad == true` `len_in` retained modes are
/// zero-padded to length `n` before transforming.
#[allow(clippy::too_many_arguments)]
fn transform_axis(
    input: &[Complex64],
    output: &mut [Complex64],
    outer: usize,
    inner: usize,
    len_in: usize,
    len_out: usize,
    n: usize,
    plan: &Arc<dyn Fft<f64>>,
    pad: bool,
) {
    let zero = Complex64::new(0.0, 0.0);
    let batch = inner.clamp(1, LINE_BATCH);
    let mut lines = vec![zero; n * batch];
    let mut scratch = vec![zero; plan.get_inplace_scratch_len()];
    for o in 0..outer {
        let src = &input[o * len_in * inner..(o + 1) * len_in * inner];
        let dst = &mut output[o * len_out * inner..(o + 1) * len_out * inner];
        for i0 in (0..inner).step_by(batch) {
            let b = batch.min(inner - i0);
            let lines = &mut lines[..n * b];
            if pad {
                lines.fill(zero);
            }
            for j in 0..len_in {
                let pos = if pad { kept_position(j, len_in, n) } else { j };
                for (i, v) in src[j * inner + i0..j * inner + i0 + b].iter().enumerate() {
                    lines[i * n + pos] = *v;
                }
            }
            plan.process_with_scratch(lines, &mut scratch);
            for j in 0..len_out {
                let pos = if pad { j } else { kept_position(j, len_out, n) };
                for (i, v) in dst[j * inner + i0..j * inner + i0 + b].iter_mut().enumerate() {
                    *v = lines[i * n + pos];
                }
            }
        }
    }
}

/// Periodic convolution of a real grid with a real, even multiplier that is
/// supported on the modes `|k_s| < keep_s / 2`: `y = F⁻¹(M ∘ F x)`, both
/// transforms unnormalized. Only retained modes are ever materialized.
#[derive(Clone)]
pub(crate) struct BandConvolution {
    grid: Vec<usize>,
    keep: Vec<usize>,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    /// Multiplier on the retained half-spectrum, row-major over
    /// `keep_0 × … × keep_{d-2} × keep_{d-1}/2`.
    mult: Vec<f64>,
}

impl std::fmt::Debug for BandConvolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BandConvolution")
            .field("grid", &self.grid)
            .field("keep", &self.keep)
            .finish()
    }
}

impl BandConvolution {
    /// `mult(k)` is queried for every retained `k` with `|k_s| < keep_s / 2`.
    pub(crate) fn new(grid: &[usize], keep: &[usize], mut mult: impl FnMut(&[i64]) -> f64) -> Self {
        let d = grid.len();
        let mut planner = FftPlanner::new();
        let mut real = RealFftPlanner::<f64>::new();
        let half = keep[d - 1] / 2;
        let shape: Vec<usize> = keep[..d - 1].iter().copied().chain([half]).collect();
        let total: usize = shape.iter().product();
        let mut values = Vec::with_capacity(total);
        let mut k = vec![0i64; d];
        for idx in 0..total {
            let mut rem = idx;
            let mut edge = false;
            for s in (0..d).rev() {
                let j = rem % shape[s];
                rem /= shape[s];
                k[s] = if s == d - 1 || j < keep[s] / 2 {
                    j as i64
                } else {
                    j as i64 - keep[s] as i64
                };
                edge |= k[s].unsigned_abs() as usize == keep[s] / 2;
            }
            values.push(if edge { 0.0 } else { mult(&k) });
        }
        Self {
            grid: grid.to_vec(),
            keep: keep.to_vec(),
            r2c: real.plan_fft_forward(grid[d - 1]),
            c2r: real.plan_fft_inverse(grid[d - 1]),
            forward: grid[..d - 1].iter().map(|&n| planner.plan_fft(n, FftDirection::Forward)).collect(),
            inverse: grid[..d - 1].iter().map(|&n| planner.plan_fft(n, FftDirection::Inverse)).collect(),
            mult: values,
        }
    }

    pub(crate) fn grid_len(&self) -> usize {
        self.grid.iter().product()
    }

    /// Convolves `x` in place.
    pub(crate) fn apply(&self, x: &mut [f64]) {
        let d = self.grid.len();
        assert_eq!(x.len(), self.grid_len(), "grid size mismatch");
        let zero = Complex64::new(0.0, 0.0);
        let n_last = self.grid[d - 1];
        let spec_len = n_last / 2 + 1;
        let half = self.keep[d - 1] / 2;
        let lines = x.len() / n_last;

        // real transform along the last axis, keeping k = 0 .. half - 1
        let mut spec = vec![zero; spec_len];
        let mut scratch = vec![zero; self.r2c.get_scratch_len().max(self.c2r.get_scratch_len())];
        let mut cur = vec![zero; lines * half];
        for (line, out) in x.chunks_exact_mut(n_last).zip(cur.chunks_exact_mut(half)) {
            self.r2c
                .process_with_scratch(line, &mut spec, &mut scratch)
                .expect("buffer sizes match the plan");
            out.copy_from_slice(&spec[..half]);
        }

        // remaining axes from last to first, pruning to the retained modes
        let mut dims: Vec<usize> = self.grid[..d - 1].iter().copied().chain([half]).collect();
        for axis in (0..d - 1).rev() {
            let outer: usize = dims[..axis].iter().product();
            let inner: usize = dims[axis + 1..].iter().product();
            let mut next = vec![zero; outer * self.keep[axis] * inner];
            transform_axis(&cur, &mut next, outer, inner, dims[axis], self.keep[axis], self.grid[axis], &self.forward[axis], false);
            dims[axis] = self.keep[axis];
            cur = next;
        }

        for (c, m) in cur.iter_mut().zip(&self.mult) {
            *c *= *m;
        }

        for axis in 0..d - 1 {
            let outer: usize = dims[..axis].iter().product();
            let inner: usize = dims[axis + 1..].iter().product();
            let mut next = vec![zero; outer * self.grid[axis] * inner];
            transform_axis(&cur, &mut next, outer, inner, self.keep[axis], self.grid[axis], self.grid[axis], &self.inverse[axis], true);
            dims[axis] = self.grid[axis];
            cur = next;
        }

        for (line, src) in x.chunks_exact_mut(n_last).zip(cur.chunks_exact(half)) {
            spec[..half].copy_from_slice(src);
            spec[half..].fill(zero);
            // the k = 0 entry of a Hermitian line is real up to rounding
            spec[0].im = 0.0;
            self.c2r
                .process_with_scratch(&mut spec, line, &mut scratch)
                .expect("buffer sizes match the plan");
        }
    }
}
