//! Grayscale images on the 8-bit intensity scale: PGM I/O, additive noise
//! and the SSIM quality metric.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported magic number {0:?} (only binary P5 PGM is supported)")]
    UnsupportedMagic(String),
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("truncated PGM payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("image dimensions {h}x{w} do not match {len} pixels")]
    BadDimensions { h: usize, w: usize, len: usize },
    #[error("non-finite intensity at pixel {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

/// Row-major grayscale image with real intensities on the `[0, 255]` scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 || height * width != pixels.len() {
            return Err(ImageError::BadDimensions {
                h: height,
                w: width,
                len: pixels.len(),
            });
        }
        if let Some(i) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(ImageError::NonFinite(i));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self, ImageError> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Number of rows (n₁).
    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of columns (n₂).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Same dimensions, new pixel values.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<Self, ImageError> {
        Self::new(self.height, self.width, pixels)
    }

    /// Bilinear resampling to a new size (used to build problem-size sweeps).
    pub fn resize(&self, height: usize, width: usize) -> Result<Self, ImageError> {
        let sy = if height > 1 {
            (self.height - 1) as f64 / (height - 1) as f64
        } else {
            0.0
        };
        let sx = if width > 1 {
            (self.width - 1) as f64 / (width - 1) as f64
        } else {
            0.0
        };
        let mut out = Vec::with_capacity(height * width);
        for r in 0..height {
            let y = r as f64 * sy;
            let y0 = (y.floor() as usize).min(self.height - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = y - y0 as f64;
            for c in 0..width {
                let x = c as f64 * sx;
                let x0 = (x.floor() as usize).min(self.width - 1);
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = x - x0 as f64;
                let top = self.get(y0, x0) * (1.0 - tx) + self.get(y0, x1) * tx;
                let bottom = self.get(y1, x0) * (1.0 - tx) + self.get(y1, x1) * tx;
                out.push(top * (1.0 - ty) + bottom * ty);
            }
        }
        Self::new(height, width, out)
    }

    fn check_same_shape(&self, other: &Self) -> Result<(), ImageError> {
        if self.height != other.height || self.width != other.width {
            return Err(ImageError::DimensionMismatch(
                self.height,
                self.width,
                other.height,
                other.width,
            ));
        }
        Ok(())
    }
}

/// Additive white Gaussian noise parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub stddev: f64,
    pub seed: u64,
}

/// Standard-normal stream: xoshiro256++ seeded through SplitMix64, paired
/// Box–Muller transform. The exact sequence is part of the reproducibility
/// contract, so do not swap the generator without bumping the docs.
pub struct NormalStream {
    rng: Xoshiro256PlusPlus,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform in (0, 1].
    fn open_unit(&mut self) -> f64 {
        let bits = self.rng.next_u64() >> 11;
        1.0 - bits as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.open_unit();
        let u2 = self.open_unit();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Uniform in [0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Adds `stddev · N(0, 1)` to every pixel. Values are not clipped.
pub fn add_gaussian_noise(img: &GrayImage, spec: NoiseSpec) -> GrayImage {
    let mut stream = NormalStream::new(spec.seed);
    let pixels = img
        .pixels
        .iter()
        .map(|&p| p + spec.stddev * stream.next_normal())
        .collect();
    GrayImage {
        height: img.height,
        width: img.width,
        pixels,
    }
}

const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Mean SSIM over all 8×8 windows (stride 1, uniform weights, sample
/// covariance). Images smaller than 8 pixels along an axis use the whole axis.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64, ImageError> {
    a.check_same_shape(b)?;
    let wh = SSIM_WINDOW.min(a.height);
    let ww = SSIM_WINDOW.min(a.width);
    let count = (wh * ww) as f64;
    let cov_norm = if count > 1.0 {
        count / (count - 1.0)
    } else {
        1.0
    };
    let mut total = 0.0;
    let mut windows = 0usize;
    for r0 in 0..=(a.height - wh) {
        for c0 in 0..=(a.width - ww) {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in r0..r0 + wh {
                let row = r * a.width;
                for c in c0..c0 + ww {
                    let x = a.pixels[row + c];
                    let y = b.pixels[row + c];
                    sx += x;
                    sy += y;
                    sxx += x * x;
                    syy += y * y;
                    sxy += x * y;
                }
            }
            let mx = sx / count;
            let my = sy / count;
            let vx = cov_norm * (sxx / count - mx * mx);
            let vy = cov_norm * (syy / count - my * my);
            let cxy = cov_norm * (sxy / count - mx * my);
            let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2);
            let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
            total += num / den;
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Mean squared pixel difference.
pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64, ImageError> {
    a.check_same_shape(b)?;
    Ok(a.pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
}

fn io_err(path: &Path, source: std::io::Error) -> ImageError {
    ImageError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads a binary PGM. 8-bit samples map to intensities unchanged, 16-bit
/// samples are scaled by 255/65535.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    decode_pgm(&bytes)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let mut header = HeaderReader { bytes, pos: 0 };
    let magic = header.token()?;
    if magic != "P5" {
        return Err(ImageError::UnsupportedMagic(magic));
    }
    let width = header.number("width")?;
    let height = header.number("height")?;
    let maxval = header.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::MalformedHeader("zero dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(ImageError::MalformedHeader(format!("maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => header.pos += 1,
        _ => return Err(ImageError::MalformedHeader("missing raster separator".into())),
    }
    let n = width * height;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let payload = &bytes[header.pos..];
    let expected = n * sample_bytes;
    if payload.len() < expected {
        return Err(ImageError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let pixels = if sample_bytes == 1 {
        payload[..n].iter().map(|&b| b as f64).collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * (255.0 / 65535.0))
            .collect()
    };
    GrayImage::new(height, width, pixels)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn token(&mut self) -> Result<String, ImageError> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
                None => return Err(ImageError::MalformedHeader("unexpected end of header".into())),
            }
        }
        let start = self.pos;
        while let Some(b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || *b == b'#' {
                break;
            }
            self.pos += 1;
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self, what: &str) -> Result<usize, ImageError> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| ImageError::MalformedHeader(format!("bad {what} field {tok:?}")))
    }
}

/// Intensities are clamped to [0, 255] and rounded to the nearest integer.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&p| p.clamp(0.0, 255.0).round() as u8));
    out
}

pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_pgm(img))
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

/// Deterministic synthetic test scene: smooth gradient, a disc, a bright
/// square and a sinusoidal texture band. Used by examples, benches and the
/// acceptance suite so no image assets need to ship with the crate.
pub fn synthetic_scene(height: usize, width: usize) -> GrayImage {
    let mut pixels = Vec::with_capacity(height * width);
    for r in 0..height {
        let y = r as f64 / height.max(1) as f64;
        for c in 0..width {
            let x = c as f64 / width.max(1) as f64;
            let mut v = 60.0 + 60.0 * x + 30.0 * y;
            let (dx, dy) = (x - 0.35, y - 0.4);
            if dx * dx + dy * dy < 0.05 {
                v = 200.0;
            }
            if (0.6..0.85).contains(&x) && (0.15..0.45).contains(&y) {
                v = 30.0;
            }
            if y > 0.7 {
                v += 40.0 * (2.0 * std::f64::consts::PI * 6.0 * x).sin();
            }
            pixels.push(v.clamp(0.0, 255.0).round());
        }
    }
    GrayImage {
        height,
        width,
        pixels,
    }
}
