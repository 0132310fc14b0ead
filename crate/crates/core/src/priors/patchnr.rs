use super::{PatchPrior, PriorEval};
use crate::error::{Error, Result};
use crate::flow::{ConditionalPatchFlow, PatchFlow};
use crate::patchops::{condition_patches, extract_patches, insert_adjoint, PatchGeometry};
use crate::Image;

fn check(subset: &[usize], flow_dim: usize, geometry: &PatchGeometry) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("empty patch subset".into()));
    }
    if flow_dim != geometry.patch_dim() {
        return Err(Error::shape("flow vs patch dimension", geometry.patch_dim(), flow_dim));
    }
    Ok(())
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(format!("{what} value {value}")))
    }
}

/// `(1/s) sum_{i in subset} 0.5 |T^{-1}(P_i x)|^2 - log|det grad T^{-1}(P_i x)|`
/// and its gradient with respect to `image`.
pub fn patchnr(image: &Image, flow: &PatchFlow, geometry: &PatchGeometry, subset: &[usize]) -> Result<PriorEval> {
    check(subset, flow.dim(), geometry)?;
    let patches = extract_patches(image, geometry, subset)?;
    let scale = 1.0 / geometry.patch_dim() as f64;
    let (nll, grads) = flow.nll_input_grad(patches.view(), scale)?;
    let value = finite(scale * nll.iter().fold(0.0, |a, v| a + v), "patchNR")?;
    Ok(PriorEval {
        value,
        gradient: insert_adjoint(grads.view(), subset, geometry)?,
    })
}

/// Conditional variant; conditions are windows of `cond_image` at the same
/// corners and are treated as constants.
pub fn cpatchnr(
    image: &Image,
    cond_image: &Image,
    flow: &ConditionalPatchFlow,
    geometry: &PatchGeometry,
    subset: &[usize],
) -> Result<PriorEval> {
    check(subset, flow.dim(), geometry)?;
    if flow.cond_dim() != geometry.patch_dim() {
        return Err(Error::shape("condition dimension", geometry.patch_dim(), flow.cond_dim()));
    }
    let patches = extract_patches(image, geometry, subset)?;
    let conds = condition_patches(cond_image, geometry, subset)?;
    let scale = 1.0 / geometry.patch_dim() as f64;
    let (nll, grads) = flow.cnll_input_grad(conds.view(), patches.view(), scale)?;
    let value = finite(scale * nll.iter().fold(0.0, |a, v| a + v), "cPatchNR")?;
    Ok(PriorEval {
        value,
        gradient: insert_adjoint(grads.view(), subset, geometry)?,
    })
}

/// patchNR bound to a trained flow.
#[derive(Debug, Clone)]
pub struct PatchNr<'a> {
    pub flow: &'a PatchFlow,
    pub geometry: PatchGeometry,
}

impl<'a> PatchNr<'a> {
    pub fn new(flow: &'a PatchFlow, geometry: PatchGeometry) -> Result<Self> {
        if flow.dim() != geometry.patch_dim() {
            return Err(Error::shape("flow vs patch dimension", geometry.patch_dim(), flow.dim()));
        }
        Ok(Self { flow, geometry })
    }
}

impl PatchPrior for PatchNr<'_> {
    fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    fn evaluate(&self, image: &Image, subset: &[usize]) -> Result<PriorEval> {
        patchnr(image, self.flow, &self.geometry, subset)
    }

    fn name(&self) -> &'static str {
        "patchnr"
    }
}

/// Conditional patchNR bound to a flow and a conditioning image.
#[derive(Debug, Clone)]
pub struct CPatchNr<'a> {
    pub flow: &'a ConditionalPatchFlow,
    pub cond_image: &'a Image,
    pub geometry: PatchGeometry,
}

impl<'a> CPatchNr<'a> {
    pub fn new(flow: &'a ConditionalPatchFlow, cond_image: &'a Image, geometry: PatchGeometry) -> Result<Self> {
        if flow.dim() != geometry.patch_dim() || flow.cond_dim() != geometry.patch_dim() {
            return Err(Error::shape("conditional flow vs patch dimension", geometry.patch_dim(), flow.dim()));
        }
        if cond_image.dim() != (geometry.rows, geometry.cols) {
            return Err(Error::shape(
                "conditioning image",
                format!("{}x{}", geometry.rows, geometry.cols),
                format!("{:?}", cond_image.dim()),
            ));
        }
        Ok(Self {
            flow,
            cond_image,
            geometry,
        })
    }
}

impl PatchPrior for CPatchNr<'_> {
    fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    fn evaluate(&self, image: &Image, subset: &[usize]) -> Result<PriorEval> {
        cpatchnr(image, self.cond_image, self.flow, &self.geometry, subset)
    }

    fn name(&self) -> &'static str {
        "cpatchnr"
    }
}
