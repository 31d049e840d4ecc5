//! Nonequispaced Fourier transforms and Gauss sums.
//!
//! Trigonometric polynomials use the convention
//! `f(x) = Σ_{k ∈ I_M} f̂_k e^{-2πi k·x}` with `I_M = ∏ {-M_s/2, …, M_s/2 - 1}`.
//! Coefficient arrays are row-major with index `k_s + M_s/2` along axis `s`.

mod fastsum;
mod fft;
mod nfft;

use num_complex::Complex64;
use thiserror::Error;

pub use fastsum::{gauss_transform_direct, gauss_transform_fast, FastsumParams, FastsumPlan};
pub use fft::{fft_friendly_size, FftNd};
pub use nfft::{NfftParams, NfftPlan, NodeWeights, WindowKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("dimension {0} not supported (1 to 3)")]
    UnsupportedDimension(usize),
    #[error("node {node} coordinate {axis} = {value} lies outside [-1/2, 1/2)")]
    NodeOutOfRange { node: usize, axis: usize, value: f64 },
    #[error("bandwidth {0:?} invalid: entries must be even and positive")]
    BadBandwidth(Vec<usize>),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

/// Nodes on the torus `[-1/2, 1/2)^d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSet {
    dim: usize,
    coords: Vec<f64>,
}

impl NodeSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self, TransformError> {
        check_dim(dim)?;
        if coords.len() % dim != 0 {
            return Err(TransformError::LengthMismatch {
                expected: coords.len() / dim * dim + dim,
                got: coords.len(),
            });
        }
        for (i, &c) in coords.iter().enumerate() {
            if !(-0.5..0.5).contains(&c) {
                return Err(TransformError::NodeOutOfRange {
                    node: i / dim,
                    axis: i % dim,
                    value: c,
                });
            }
        }
        Ok(Self { dim, coords })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.coords[j * self.dim..(j + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}

pub(crate) fn check_dim(dim: usize) -> Result<(), TransformError> {
    if (1..=3).contains(&dim) {
        Ok(())
    } else {
        Err(TransformError::UnsupportedDimension(dim))
    }
}

pub(crate) fn check_bandwidth(m: &[usize]) -> Result<(), TransformError> {
    check_dim(m.len())?;
    if m.iter().any(|&v| v == 0 || v % 2 != 0) {
        return Err(TransformError::BadBandwidth(m.to_vec()));
    }
    Ok(())
}

/// Per-node, per-axis tables `e^{-2πi k x}` for `k ∈ {-M/2, …, M/2-1}`.
fn exp_tables(bandwidth: &[usize], nodes: &NodeSet, sign: f64) -> Vec<Vec<Complex64>> {
    let d = nodes.dim();
    (0..nodes.len())
        .map(|j| {
            let x = nodes.node(j);
            let mut t = Vec::with_capacity(bandwidth.iter().sum());
            for s in 0..d {
                let half = (bandwidth[s] / 2) as f64;
                for k in 0..bandwidth[s] {
                    let kk = k as f64 - half;
                    t.push(Complex64::from_polar(1.0, sign * 2.0 * std::f64::consts::PI * kk * x[s]));
                }
            }
            t
        })
        .collect()
}

fn check_nodes_bandwidth(bandwidth: &[usize], nodes: &NodeSet) -> Result<(), TransformError> {
    check_bandwidth(bandwidth)?;
    if bandwidth.len() != nodes.dim() {
        return Err(TransformError::LengthMismatch {
            expected: nodes.dim(),
            got: bandwidth.len(),
        });
    }
    Ok(())
}

/// Direct evaluation of the trigonometric polynomial at every node.
pub fn ndft(coeffs: &[Complex64], bandwidth: &[usize], nodes: &NodeSet) -> Result<Vec<Complex64>, TransformError> {
    check_nodes_bandwidth(bandwidth, nodes)?;
    let total: usize = bandwidth.iter().product();
    if coeffs.len() != total {
        return Err(TransformError::LengthMismatch {
            expected: total,
            got: coeffs.len(),
        });
    }
    let tables = exp_tables(bandwidth, nodes, -1.0);
    Ok(tables
        .iter()
        .map(|t| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (idx, c) in coeffs.iter().enumerate() {
                acc += c * table_product(t, bandwidth, idx);
            }
            acc
        })
        .collect())
}

/// Direct adjoint: `ĥ_k = Σ_j v_j e^{+2πi k·x_j}`.
pub fn ndft_adjoint(values: &[Complex64], nodes: &NodeSet, bandwidth: &[usize]) -> Result<Vec<Complex64>, TransformError> {
    check_nodes_bandwidth(bandwidth, nodes)?;
    if values.len() != nodes.len() {
        return Err(TransformError::LengthMismatch {
            expected: nodes.len(),
            got: values.len(),
        });
    }
    let total: usize = bandwidth.iter().product();
    let tables = exp_tables(bandwidth, nodes, 1.0);
    let mut out = vec![Complex64::new(0.0, 0.0); total];
    for (t, v) in tables.iter().zip(values) {
        for (idx, o) in out.iter_mut().enumerate() {
            *o += v * table_product(t, bandwidth, idx);
        }
    }
    Ok(out)
}

#[inline]
fn table_product(t: &[Complex64], bandwidth: &[usize], mut idx: usize) -> Complex64 {
    let mut prod = Complex64::new(1.0, 0.0);
    let mut offset: usize = bandwidth.iter().sum();
    for &m in bandwidth.iter().rev() {
        offset -= m;
        prod *= t[offset + idx % m];
        idx /= m;
    }
    prod
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::imaging::NormalStream;

    pub fn random_nodes(dim: usize, n: usize, seed: u64) -> NodeSet {
        let mut s = NormalStream::new(seed);
        NodeSet::new(dim, (0..n * dim).map(|_| s.next_uniform() - 0.5).collect()).unwrap()
    }

    pub fn random_complex(n: usize, seed: u64) -> Vec<Complex64> {
        let mut s = NormalStream::new(seed);
        (0..n)
            .map(|_| Complex64::new(s.next_uniform() - 0.5, s.next_uniform() - 0.5))
            .collect()
    }

    pub fn rel_linf(a: &[Complex64], b: &[Complex64]) -> f64 {
        let err = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        err / b.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}
