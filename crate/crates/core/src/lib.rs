//! Matrix-free nonlocal image denoising with an NFFT-accelerated ANOVA kernel.

pub mod bilevel;
pub mod cli;
pub mod config;
pub mod features;
pub mod imaging;
pub mod kernel;
pub mod linops;
pub mod spectral;
pub mod transform;
