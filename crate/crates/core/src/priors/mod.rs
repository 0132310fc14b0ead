//! Patch-based regularizers `R(x)` with image-space gradients.
//!
//! All priors evaluate on a subset of patch indices (possibly with
//! repetitions) and return the value together with `grad_x R`.

mod epll;
mod gmm;
mod patchnr;

pub use epll::{epll, Epll};
pub use gmm::{gmm_fit, EmConfig, GmmFit, PatchGmm, DEFAULT_COMPONENTS};
pub use patchnr::{cpatchnr, patchnr, CPatchNr, PatchNr};

use crate::error::Result;
use crate::patchops::PatchGeometry;
use crate::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct PriorEval {
    pub value: f64,
    pub gradient: Image,
}

/// A regularizer defined through patches of the image.
pub trait PatchPrior {
    fn geometry(&self) -> &PatchGeometry;

    fn evaluate(&self, image: &Image, subset: &[usize]) -> Result<PriorEval>;

    fn name(&self) -> &'static str;

    /// Factor turning the user weight into the weight of [`PatchPrior::evaluate`]
    /// on a subset of `subset_len` patches: `s / n` for subset sums.
    fn weight_scale(&self, subset_len: usize) -> f64 {
        self.geometry().patch_dim() as f64 / subset_len as f64
    }
}
