use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fft::{fft_friendly_size, BandConvolution};
use super::nfft::{NfftParams, NfftPlan, NodeWeights};
use super::{check_dim, NodeSet, TransformError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FastsumParams {
    /// Target size of each neglected tail (periodic images, Fourier truncation).
    pub eps: f64,
    pub nfft: NfftParams,
    /// Lower bound on the expansion degree per axis.
    pub min_degree: usize,
    /// Plans needing a larger degree are refused; use exact summation instead.
    pub max_degree: usize,
}

impl Default for FastsumParams {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            nfft: NfftParams {
                cutoff: 4,
                oversampling: 1.5,
                ..NfftParams::default()
            },
            min_degree: 8,
            max_degree: 256,
        }
    }
}

/// `g(x_i) = Σ_j α_j exp(-σ̄ ‖x_i - y_j‖²)` evaluated exactly.
pub fn gauss_transform_direct(dim: usize, sources: &[f64], targets: &[f64], alpha: &[f64], shape: f64) -> Vec<f64> {
    assert_eq!(sources.len(), alpha.len() * dim, "sources do not match coefficients");
    targets
        .par_chunks(dim)
        .map(|x| {
            sources
                .chunks(dim)
                .zip(alpha)
                .map(|(y, &a)| {
                    let r2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
                    a * (-shape * r2).exp()
                })
                .sum()
        })
        .collect()
}

/// One-shot fast Gauss transform with a freshly built plan.
pub fn gauss_transform_fast(
    dim: usize,
    sources: &[f64],
    targets: &[f64],
    alpha: &[f64],
    shape: f64,
    params: &FastsumParams,
) -> Result<Vec<f64>, TransformError> {
    FastsumPlan::new(dim, sources, Some(targets), shape, params)?.apply(alpha)
}

/// NFFT-based Gauss summation for fixed source and target sets.
///
/// Each axis is mapped affinely onto the torus with period `extent + δ`,
/// where `exp(-σ̄ δ²) = eps`, so periodic images contribute at most `eps`.
/// The expansion degree is then chosen so the truncated Fourier series of the
/// rescaled Gaussian is accurate to `eps`.
#[derive(Clone, Debug)]
pub struct FastsumPlan {
    dim: usize,
    shape: f64,
    n_sources: usize,
    n_targets: usize,
    periods: Vec<f64>,
    nfft: NfftPlan,
    conv: BandConvolution,
    source_weights: NodeWeights,
    target_weights: Option<NodeWeights>,
}

impl FastsumPlan {
    /// `targets = None` means targets coincide with sources.
    pub fn new(
        dim: usize,
        sources: &[f64],
        targets: Option<&[f64]>,
        shape: f64,
        params: &FastsumParams,
    ) -> Result<Self, TransformError> {
        check_dim(dim)?;
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(TransformError::BadParameter(format!("shape parameter {shape} must be positive")));
        }
        if !(params.eps > 0.0 && params.eps < 1.0) {
            return Err(TransformError::BadParameter(format!("eps {} must lie in (0, 1)", params.eps)));
        }
        for set in std::iter::once(sources).chain(targets) {
            if set.len() % dim != 0 {
                return Err(TransformError::LengthMismatch {
                    expected: set.len() / dim * dim,
                    got: set.len(),
                });
            }
        }
        let log_eps = (1.0 / params.eps).ln();
        let delta = (log_eps / shape).sqrt();
        let mut periods = Vec::with_capacity(dim);
        let mut centers = Vec::with_capacity(dim);
        let mut degrees = Vec::with_capacity(dim);
        for s in 0..dim {
            let (lo, hi) = std::iter::once(sources)
                .chain(targets)
                .flat_map(|set| set.iter().skip(s).step_by(dim))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 0.0) };
            let period = (hi - lo) + delta;
            let scaled = shape * period * period;
            let need = 2.0 * ((scaled * (log_eps + 4f64.ln())).sqrt() / std::f64::consts::PI).ceil();
            let degree = fft_friendly_size((need as usize).max(params.min_degree));
            if degree > params.max_degree {
                return Err(TransformError::BadParameter(format!(
                    "expansion degree {degree} exceeds the limit {}; the kernel is too narrow for the data spread",
                    params.max_degree
                )));
            }
            periods.push(period);
            centers.push(0.5 * (lo + hi));
            degrees.push(degree);
        }
        let to_torus = |set: &[f64]| -> Result<NodeSet, TransformError> {
            let coords = set
                .iter()
                .enumerate()
                .map(|(i, &v)| (v - centers[i % dim]) / periods[i % dim])
                .collect();
            NodeSet::new(dim, coords)
        };
        let nfft = NfftPlan::new(&degrees, params.nfft)?;
        let source_weights = nfft.node_weights(&to_torus(sources)?)?;
        let target_weights = match targets {
            Some(t) => Some(nfft.node_weights(&to_torus(t)?)?),
            None => None,
        };

        // Fourier coefficients of the periodized Gaussian exp(-σ̄ P² z²)
        let coeffs: Vec<Vec<f64>> = (0..dim)
            .map(|s| {
                let scaled = shape * periods[s] * periods[s];
                let n = degrees[s];
                (0..n)
                    .map(|i| {
                        let k = i as f64 - (n / 2) as f64;
                        (std::f64::consts::PI / scaled).sqrt()
                            * (-std::f64::consts::PI * std::f64::consts::PI * k * k / scaled).exp()
                    })
                    .collect()
            })
            .collect();
        let conv = BandConvolution::new(nfft.grid(), &degrees, |k| {
            (0..dim)
                .map(|s| {
                    let c = nfft.deconvolution(s, k[s]);
                    coeffs[s][(k[s] + (degrees[s] / 2) as i64) as usize] * c * c
                })
                .product()
        });

        Ok(Self {
            dim,
            shape,
            n_sources: sources.len() / dim,
            n_targets: targets.map_or(sources.len(), |t| t.len()) / dim,
            periods,
            nfft,
            conv,
            source_weights,
            target_weights,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    /// Expansion degree per axis.
    pub fn degrees(&self) -> &[usize] {
        self.nfft.bandwidth()
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn num_sources(&self) -> usize {
        self.n_sources
    }

    pub fn num_targets(&self) -> usize {
        self.n_targets
    }

    /// Adjoint NFFT of `α`, multiplication by the kernel coefficients, NFFT.
    pub fn apply(&self, alpha: &[f64]) -> Result<Vec<f64>, TransformError> {
        if alpha.len() != self.n_sources {
            return Err(TransformError::LengthMismatch {
                expected: self.n_sources,
                got: alpha.len(),
            });
        }
        let mut grid = vec![0.0; self.conv.grid_len()];
        self.nfft.spread_real(alpha, &self.source_weights, &mut grid);
        self.conv.apply(&mut grid);
        let targets = self.target_weights.as_ref().unwrap_or(&self.source_weights);
        Ok(self.nfft.gather_real(&grid, targets))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::NormalStream;

    fn uniform(n: usize, scale: f64, seed: u64) -> Vec<f64> {
        let mut s = NormalStream::new(seed);
        (0..n).map(|_| scale * s.next_uniform()).collect()
    }

    fn rel_linf(a: &[f64], b: &[f64]) -> f64 {
        let err = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        err / b.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    #[test]
    fn direct_hand_values() {
        assert_eq!(gauss_transform_direct(1, &[0.3], &[0.3], &[1.0], 2.0), vec![1.0]);
        let g = gauss_transform_direct(1, &[0.0, 1.0], &[0.0], &[1.0, 1.0], 1.0);
        assert!((g[0] - 1.367_879_441_171_442).abs() < 1e-15);
        assert_eq!(gauss_transform_direct(2, &[0.0; 4], &[1.0, 1.0], &[0.0, 0.0], 1.0), vec![0.0]);
    }

    #[test]
    fn zero_coefficients_give_zero() {
        let pts = uniform(300, 255.0, 1);
        let plan = FastsumPlan::new(3, &pts, None, 1.0 / 1600.0, &FastsumParams::default()).unwrap();
        assert!(plan.apply(&[0.0; 100]).unwrap().iter().all(|&v| v.abs() < 1e-300));
    }

    #[test]
    fn one_dimensional_intensity_data() {
        let src = uniform(1000, 255.0, 2);
        let tgt = uniform(1000, 255.0, 3);
        let alpha = uniform(1000, 1.0, 4);
        let shape = 1.0 / 1600.0;
        let fast = gauss_transform_fast(1, &src, &tgt, &alpha, shape, &FastsumParams::default()).unwrap();
        let exact = gauss_transform_direct(1, &src, &tgt, &alpha, shape);
        assert!(rel_linf(&fast, &exact) <= 1e-5);
    }

    #[test]
    fn three_dimensional_intensity_data() {
        for sigma in [10.0, 30.0, 50.0, 1400.0] {
            let src = uniform(6000, 255.0, 5);
            let alpha = uniform(2000, 1.0, 6);
            let shape = 1.0 / (sigma * sigma);
            let plan = FastsumPlan::new(3, &src, None, shape, &FastsumParams::default()).unwrap();
            let exact = gauss_transform_direct(3, &src, &src, &alpha, shape);
            let err = rel_linf(&plan.apply(&alpha).unwrap(), &exact);
            assert!(err <= 1e-5, "sigma {sigma}: {err:e}, degrees {:?}", plan.degrees());
        }
    }

    #[test]
    fn joint_permutation_invariance() {
        let pts = uniform(400, 255.0, 7);
        let alpha = uniform(200, 1.0, 8);
        let shape = 1.0 / 900.0;
        let params = FastsumParams::default();
        let base = FastsumPlan::new(2, &pts, None, shape, &params).unwrap().apply(&alpha).unwrap();
        let perm: Vec<usize> = (0..200).rev().collect();
        let pts_p: Vec<f64> = perm.iter().flat_map(|&i| [pts[2 * i], pts[2 * i + 1]]).collect();
        let alpha_p: Vec<f64> = perm.iter().map(|&i| alpha[i]).collect();
        let out = FastsumPlan::new(2, &pts_p, None, shape, &params).unwrap().apply(&alpha_p).unwrap();
        let scale = base.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (k, &i) in perm.iter().enumerate() {
            assert!((out[k] - base[i]).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn narrow_kernels_are_refused() {
        let pts = uniform(30, 1e4, 9);
        let err = FastsumPlan::new(1, &pts, None, 1.0, &FastsumParams::default());
        assert!(matches!(err, Err(TransformError::BadParameter(_))));
    }
}
