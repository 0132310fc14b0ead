use super::{PatchGmm, PatchPrior, PriorEval};
use crate::error::{Error, Result};
use crate::patchops::{extract_patches, insert_adjoint, PatchGeometry};
use crate::Image;

/// Mean negative patch log-density over `subset`, with gradient.
pub fn epll(image: &Image, gmm: &PatchGmm, geometry: &PatchGeometry, subset: &[usize]) -> Result<PriorEval> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("empty patch subset".into()));
    }
    if gmm.dim() != geometry.patch_dim() {
        return Err(Error::shape("mixture vs patch dimension", geometry.patch_dim(), gmm.dim()));
    }
    let patches = extract_patches(image, geometry, subset)?;
    let (logp, grad) = gmm.logpdf_grad_batch(patches.view())?;
    let n = subset.len() as f64;
    let value = -logp.iter().fold(0.0, |a, v| a + v) / n;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("EPLL value {value}")));
    }
    let grad = grad * (-1.0 / n);
    Ok(PriorEval {
        value,
        gradient: insert_adjoint(grad.view(), subset, geometry)?,
    })
}

#[derive(Debug, Clone)]
pub struct Epll<'a> {
    pub gmm: &'a PatchGmm,
    pub geometry: PatchGeometry,
}

impl<'a> Epll<'a> {
    pub fn new(gmm: &'a PatchGmm, geometry: PatchGeometry) -> Result<Self> {
        if gmm.dim() != geometry.patch_dim() {
            return Err(Error::shape("mixture vs patch dimension", geometry.patch_dim(), gmm.dim()));
        }
        Ok(Self { gmm, geometry })
    }
}

impl PatchPrior for Epll<'_> {
    fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    fn evaluate(&self, image: &Image, subset: &[usize]) -> Result<PriorEval> {
        epll(image, self.gmm, &self.geometry, subset)
    }

    fn name(&self) -> &'static str {
        "epll"
    }

    /// The value is already a mean over the subset.
    fn weight_scale(&self, _subset_len: usize) -> f64 {
        1.0
    }
}
