//! Patch normalizing-flow regularizers for variational image reconstruction.
//!
//! A small invertible coupling flow is trained as a density model on image
//! patches taken from a handful of example images. Reconstruction then
//! minimizes `D(f(x), y) + lambda * R(x)` over the image, where `R` sums the
//! flow's negative log-likelihood over (randomly subsampled) patches.
//!
//! Modules, bottom up:
//! - [`diffcore`]: arrays, primitive gradients, Adam
//! - [`flow`]: unconditional and conditional coupling flows, training
//! - [`patchops`]: patch extraction and its adjoint
//! - [`priors`]: patchNR, conditional patchNR, EPLL with a GMM
//! - [`operators`]: blur+stride, convolution, Radon, FBP, noise simulation
//! - [`fidelity`]: Gaussian and Poisson (CT) data terms
//! - [`solver`]: Adam-based variational reconstruction
//! - [`metrics`]: PSNR, SSIM, blur effect, patch NLL histograms
//! - [`analysis`]: numerical checks of the induced patch/image densities
//! - [`io`]: PFM/PNG images, checkpoints, TOML experiment configs
//! - [`synth`]: synthetic textures and phantoms
//! - [`cli`]: the `patchnr` command line

pub mod analysis;
pub mod cli;
pub mod diffcore;
pub mod error;
pub mod fidelity;
pub mod flow;
pub mod io;
pub mod metrics;
pub mod operators;
pub mod patchops;
pub mod priors;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};

/// Grayscale image, indexed `[row, col]`.
pub type Image = ndarray::Array2<f64>;
