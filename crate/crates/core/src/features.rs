//! Patch features and their grouping into low-dimensional windows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::GrayImage;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("patch radius must be at least 1")]
    ZeroRadius,
    #[error("filtering parameter must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error("expected {expected} scores, got {got}")]
    ScoreLength { expected: usize, got: usize },
    #[error("need at least 2 pixels to estimate mutual information")]
    TooFewRows,
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("column {col} out of range for {d} feature columns")]
    ColumnOutOfRange { col: usize, d: usize },
    #[error("window {0} is empty")]
    EmptyWindow(usize),
    #[error("window {index} has {size} columns, at most 3 allowed")]
    WindowTooLarge { index: usize, size: usize },
    #[error("column {0} appears in more than one window")]
    DuplicateColumn(usize),
}

/// Row-major `n × d` patch matrix, `d = (2ρ+1)²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    radius: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Index of the offset (0, 0) column.
    pub fn center_column(&self) -> usize {
        (self.cols - 1) / 2
    }

    /// Gathers the given columns for every row into a packed `n × k` buffer.
    pub fn gather(&self, columns: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * columns.len());
        for i in 0..self.rows {
            let row = self.row(i);
            out.extend(columns.iter().map(|&c| row[c]));
        }
        out
    }
}

/// Closed square patches of radius `rho`, zero padded, offsets in raster
/// order (row offset outer).
pub fn extract_patches(img: &GrayImage, rho: usize) -> Result<FeatureMatrix, FeatureError> {
    if rho == 0 {
        return Err(FeatureError::ZeroRadius);
    }
    let (h, w) = (img.height() as isize, img.width() as isize);
    let r = rho as isize;
    let side = 2 * rho + 1;
    let cols = side * side;
    let px = img.pixels();
    let mut values = vec![0.0; img.len() * cols];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) as usize * cols;
            let mut k = 0;
            for dy in -r..=r {
                let yy = y + dy;
                for dx in -r..=r {
                    let xx = x + dx;
                    if yy >= 0 && yy < h && xx >= 0 && xx < w {
                        values[base + k] = px[(yy * w + xx) as usize];
                    }
                    k += 1;
                }
            }
        }
    }
    Ok(FeatureMatrix {
        rows: img.len(),
        cols,
        radius: rho,
        values,
    })
}

fn bin_indices(col: &[f64], bins: usize) -> Option<Vec<usize>> {
    let (lo, hi) = col
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return None;
    }
    let scale = bins as f64 / (hi - lo);
    Some(
        col.iter()
            .map(|&v| (((v - lo) * scale) as usize).min(bins - 1))
            .collect(),
    )
}

/// Plug-in mutual information (nats) of every column against the center
/// column, from an equal-width `bins × bins` joint histogram.
pub fn mutual_information_scores(fm: &FeatureMatrix, bins: usize) -> Result<Vec<f64>, FeatureError> {
    if fm.rows < 2 {
        return Err(FeatureError::TooFewRows);
    }
    if bins == 0 {
        return Err(FeatureError::ZeroBins);
    }
    let n = fm.rows as f64;
    let center = match bin_indices(&fm.column(fm.center_column()), bins) {
        Some(c) => c,
        None => return Ok(vec![0.0; fm.cols]),
    };
    let mut pc = vec![0.0; bins];
    for &b in &center {
        pc[b] += 1.0;
    }
    let mut scores = Vec::with_capacity(fm.cols);
    let mut joint = vec![0.0; bins * bins];
    for j in 0..fm.cols {
        let Some(cj) = bin_indices(&fm.column(j), bins) else {
            scores.push(0.0);
            continue;
        };
        joint.iter_mut().for_each(|v| *v = 0.0);
        let mut pj = vec![0.0; bins];
        for (&a, &b) in center.iter().zip(&cj) {
            joint[a * bins + b] += 1.0;
            pj[b] += 1.0;
        }
        let mut mi = 0.0;
        for a in 0..bins {
            for b in 0..bins {
                let c = joint[a * bins + b];
                if c > 0.0 {
                    mi += c / n * (c * n / (pc[a] * pj[b])).ln();
                }
            }
        }
        scores.push(mi.max(0.0));
    }
    Ok(scores)
}

/// Feature windows defining the ANOVA kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    windows: Vec<Vec<usize>>,
    sigma: f64,
    features: FeatureMatrix,
}

impl WindowSet {
    /// Validated constructor for hand-built window layouts.
    pub fn new(features: FeatureMatrix, windows: Vec<Vec<usize>>, sigma: f64) -> Result<Self, FeatureError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(FeatureError::BadSigma(sigma));
        }
        let mut seen = vec![false; features.cols];
        for (index, w) in windows.iter().enumerate() {
            if w.is_empty() {
                return Err(FeatureError::EmptyWindow(index));
            }
            for &c in w {
                if c >= features.cols {
                    return Err(FeatureError::ColumnOutOfRange { col: c, d: features.cols });
                }
                if std::mem::replace(&mut seen[c], true) {
                    return Err(FeatureError::DuplicateColumn(c));
                }
            }
        }
        Ok(Self {
            windows,
            sigma,
            features,
        })
    }

    /// Builds a window set from arbitrary row-major point data (`n × d`),
    /// bypassing patch extraction. Used for synthetic kernels.
    pub fn from_points(n: usize, d: usize, values: Vec<f64>, windows: Vec<Vec<usize>>, sigma: f64) -> Result<Self, FeatureError> {
        assert_eq!(values.len(), n * d, "point buffer does not match n × d");
        let fm = FeatureMatrix {
            rows: n,
            cols: d,
            radius: 0,
            values,
        };
        Self::new(fm, windows, sigma)
    }

    pub fn windows(&self) -> &[Vec<usize>] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn n(&self) -> usize {
        self.features.rows
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self, FeatureError> {
        Self::new(self.features.clone(), self.windows.clone(), sigma)
    }

    /// Checks the three-column limit of the fast transform.
    pub fn check_fast_compatible(&self) -> Result<(), FeatureError> {
        match self.windows.iter().enumerate().find(|(_, w)| w.len() > 3) {
            Some((index, w)) => Err(FeatureError::WindowTooLarge { index, size: w.len() }),
            None => Ok(()),
        }
    }
}

/// Sorts columns by descending score (ties by index) and groups consecutive
/// triples; the last window takes the remainder.
pub fn split_windows(fm: &FeatureMatrix, scores: &[f64], sigma: f64) -> Result<WindowSet, FeatureError> {
    if scores.len() != fm.cols {
        return Err(FeatureError::ScoreLength {
            expected: fm.cols,
            got: scores.len(),
        });
    }
    let mut order: Vec<usize> = (0..fm.cols).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let windows = order.chunks(3).map(|c| c.to_vec()).collect();
    WindowSet::new(fm.clone(), windows, sigma)
}

/// Patches, MIS ordering and window split in one call.
pub fn build_windows(img: &GrayImage, rho: usize, bins: usize, sigma: f64) -> Result<WindowSet, FeatureError> {
    let fm = extract_patches(img, rho)?;
    let scores = if fm.rows >= 2 {
        mutual_information_scores(&fm, bins)?
    } else {
        vec![0.0; fm.cols]
    };
    split_windows(&fm, &scores, sigma)
}
