//! Run configuration and training manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bilevel::BrentConfig;
use crate::kernel::{KernelConfig, DEFAULT_DENSE_LIMIT};
use crate::linops::SolverConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    #[default]
    Denoise,
    Train,
    Validate,
    Spectra,
    BenchOp,
    BenchSolve,
    IterationTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Command,
    pub kernel: KernelConfig,
    pub mu: f64,
    pub lambda: f64,
    /// Search interval for training.
    pub lambda_bounds: [f64; 2],
    pub solver: SolverConfig,
    pub brent: BrentConfig,
    pub dense_limit: usize,
    pub seed: u64,
    /// Noise added to synthetic inputs.
    pub noise_stddev: f64,
    /// `[height, width]` of the synthetic scene used when no input is given.
    pub size: [usize; 2],
    /// Pixel counts for the benchmarks.
    pub sizes: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub repeats: usize,
    pub input: Option<PathBuf>,
    pub clean: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::Denoise,
            kernel: KernelConfig::default(),
            mu: 1e-2,
            lambda: 1e-1,
            lambda_bounds: [1e-9, 3.0],
            solver: SolverConfig::default(),
            brent: BrentConfig::default(),
            dense_limit: DEFAULT_DENSE_LIMIT,
            seed: 0,
            noise_stddev: 30.0,
            size: [16, 16],
            sizes: vec![4000, 8000, 16000, 32000],
            sigmas: vec![30.0],
            lambdas: vec![1e-3, 1e-6, 1e-9],
            repeats: 3,
            input: None,
            clean: None,
            output: None,
            manifest: None,
            report: None,
            csv: None,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        positive("kernel.sigma", self.kernel.sigma)?;
        positive("lambda", self.lambda)?;
        positive("solver.tol", self.solver.tol)?;
        positive("kernel.fastsum.eps", self.kernel.fastsum.eps)?;
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(ConfigError::Invalid(format!("mu must be nonnegative, got {}", self.mu)));
        }
        let [lo, hi] = self.lambda_bounds;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(ConfigError::Invalid(format!("lambda_bounds must satisfy 0 < min <= max, got [{lo}, {hi}]")));
        }
        positive("brent.tol", self.brent.tol)?;
        if self.kernel.rho == 0 {
            return Err(ConfigError::Invalid("kernel.rho must be at least 1".into()));
        }
        if self.kernel.bins < 2 {
            return Err(ConfigError::Invalid("kernel.bins must be at least 2".into()));
        }
        if self.dense_limit == 0 || self.repeats == 0 {
            return Err(ConfigError::Invalid("dense_limit and repeats must be positive".into()));
        }
        if self.size.contains(&0) || self.sizes.contains(&0) {
            return Err(ConfigError::Invalid("image sizes must be positive".into()));
        }
        if !(self.noise_stddev >= 0.0 && self.noise_stddev.is_finite()) {
            return Err(ConfigError::Invalid("noise_stddev must be nonnegative".into()));
        }
        for &s in &self.sigmas {
            positive("sigmas", s)?;
        }
        for &l in &self.lambdas {
            positive("lambdas", l)?;
        }
        self.kernel
            .fastsum
            .nfft
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagePair {
    pub clean: PathBuf,
    pub noisy: PathBuf,
}

/// Training and validation pairs; relative paths are taken from the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Manifest {
    pub train: Vec<ImagePair>,
    pub validation: Vec<ImagePair>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut m: Manifest = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in m.train.iter_mut().chain(m.validation.iter_mut()) {
            p.clean = base.join(&p.clean);
            p.noisy = base.join(&p.noisy);
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg = RunConfig::from_json(r#"{"mu": 0.5, "kernel": {"sigma": 40}, "solver": {"prec": "jacobi", "tol": 1e-8, "maxit": 30}}"#).unwrap();
        assert_eq!(cfg.mu, 0.5);
        assert_eq!(cfg.kernel.sigma, 40.0);
        assert_eq!(cfg.kernel.rho, 3);
        assert_eq!(cfg.solver.maxit, 30);
        assert_eq!(cfg.lambda_bounds, [1e-9, 3.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sigma": 30}"#).is_err());
        assert!(RunConfig::from_json(r#"{"kernel": {"radius": 2}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"kernel": {"fastsum": {"nfft": {"m": 2}}}}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            r#"{"lambda": 0}"#,
            r#"{"mu": -1}"#,
            r#"{"lambda_bounds": [0, 3]}"#,
            r#"{"lambda_bounds": [2, 1]}"#,
            r#"{"kernel": {"rho": 0}}"#,
            r#"{"sigmas": [30, -1]}"#,
        ] {
            assert!(RunConfig::from_json(text).unwrap().validate().is_err(), "{text}");
        }
    }

    #[test]
    fn manifest_paths_are_relative_to_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, r#"{"train": [{"clean": "a.pgm", "noisy": "b.pgm"}]}"#).unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.train[0].clean, dir.path().join("a.pgm"));
        assert!(m.validation.is_empty());
    }
}
