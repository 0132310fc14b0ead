//! Dense stride-1 patch extraction `P_i`, its adjoint `P_i^T`, and random
//! patch-subset sampling.
//!
//! Patch indices are 0-based and enumerate top-left corners in row-major
//! order. Patches are vectorized row-major.

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub rows: usize,
    pub cols: usize,
    pub patch_rows: usize,
    pub patch_cols: usize,
}

impl PatchGeometry {
    pub fn new(rows: usize, cols: usize, patch_rows: usize, patch_cols: usize) -> Result<Self> {
        if patch_rows == 0 || patch_cols == 0 || patch_rows > rows || patch_cols > cols {
            return Err(Error::InvalidArgument(format!(
                "{patch_rows}x{patch_cols} patches do not fit a {rows}x{cols} image"
            )));
        }
        Ok(Self {
            rows,
            cols,
            patch_rows,
            patch_cols,
        })
    }

    /// Square patches of side `size` on an image of the given shape.
    pub fn square(image_shape: (usize, usize), size: usize) -> Result<Self> {
        Self::new(image_shape.0, image_shape.1, size, size)
    }

    fn corners_per_row(&self) -> usize {
        self.cols - self.patch_cols + 1
    }

    pub fn num_patches(&self) -> usize {
        (self.rows - self.patch_rows + 1) * self.corners_per_row()
    }

    /// `s = s1 * s2`
    pub fn patch_dim(&self) -> usize {
        self.patch_rows * self.patch_cols
    }

    pub fn corner(&self, index: usize) -> Result<(usize, usize)> {
        if index >= self.num_patches() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.num_patches(),
            });
        }
        Ok((index / self.corners_per_row(), index % self.corners_per_row()))
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.num_patches()).collect()
    }

    fn check_image(&self, shape: (usize, usize)) -> Result<()> {
        if shape != (self.rows, self.cols) {
            return Err(Error::shape(
                "patch geometry image extents",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", shape.0, shape.1),
            ));
        }
        Ok(())
    }

    /// Number of patches covering each pixel.
    pub fn coverage(&self) -> Image {
        let mut cov = Image::zeros((self.rows, self.cols));
        for i in 0..self.num_patches() {
            let (r, c) = self.corner(i).expect("in range");
            cov.slice_mut(s![r..r + self.patch_rows, c..c + self.patch_cols])
                .mapv_inplace(|v| v + 1.0);
        }
        cov
    }
}

pub fn extract_patch(image: &Image, geometry: &PatchGeometry, index: usize) -> Result<Array1<f64>> {
    geometry.check_image(image.dim())?;
    let (r, c) = geometry.corner(index)?;
    Ok(image
        .slice(s![r..r + geometry.patch_rows, c..c + geometry.patch_cols])
        .iter()
        .copied()
        .collect())
}

/// One patch per row, in the order of `indices`.
pub fn extract_patches(image: &Image, geometry: &PatchGeometry, indices: &[usize]) -> Result<Array2<f64>> {
    geometry.check_image(image.dim())?;
    let s = geometry.patch_dim();
    let mut out = Array2::zeros((indices.len(), s));
    for (mut row, &i) in out.rows_mut().into_iter().zip(indices) {
        let (r, c) = geometry.corner(i)?;
        let window = image.slice(s![r..r + geometry.patch_rows, c..c + geometry.patch_cols]);
        for (dst, src) in row.iter_mut().zip(window.iter()) {
            *dst = *src;
        }
    }
    Ok(out)
}

/// `sum_k P_{indices[k]}^T grads[k]`, accumulated in index order.
pub fn insert_adjoint(grads: ArrayView2<f64>, indices: &[usize], geometry: &PatchGeometry) -> Result<Image> {
    if grads.nrows() != indices.len() {
        return Err(Error::shape("patch gradients vs indices", indices.len(), grads.nrows()));
    }
    if grads.ncols() != geometry.patch_dim() {
        return Err(Error::shape("patch gradient dimension", geometry.patch_dim(), grads.ncols()));
    }
    let mut image = Image::zeros((geometry.rows, geometry.cols));
    for (row, &i) in grads.rows().into_iter().zip(indices) {
        let (r, c) = geometry.corner(i)?;
        let mut window = image.slice_mut(s![r..r + geometry.patch_rows, c..c + geometry.patch_cols]);
        for (dst, src) in window.iter_mut().zip(row.iter()) {
            *dst += *src;
        }
    }
    Ok(image)
}

/// `n` indices drawn uniformly with replacement.
pub fn sample_patch_indices(geometry: &PatchGeometry, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let np = geometry.num_patches();
    (0..n).map(|_| rng.random_range(0..np)).collect()
}

/// Condition vector for patch `index`: the same window taken from the
/// conditioning image (a naive reconstruction with the image's extents).
pub fn condition_patch(cond_image: &Image, geometry: &PatchGeometry, index: usize) -> Result<Array1<f64>> {
    extract_patch(cond_image, geometry, index)
}

pub fn condition_patches(cond_image: &Image, geometry: &PatchGeometry, indices: &[usize]) -> Result<Array2<f64>> {
    extract_patches(cond_image, geometry, indices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn nine() -> Image {
        array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]
    }

    #[test]
    fn small_grid_patches() {
        let g = PatchGeometry::new(3, 3, 2, 2).unwrap();
        assert_eq!(g.num_patches(), 4);
        assert_eq!(extract_patch(&nine(), &g, 0).unwrap().to_vec(), vec![1.0, 2.0, 4.0, 5.0]);
        assert_eq!(extract_patch(&nine(), &g, 3).unwrap().to_vec(), vec![5.0, 6.0, 8.0, 9.0]);
    }

    #[test]
    fn constant_image_constant_patches() {
        let g = PatchGeometry::new(5, 4, 2, 3).unwrap();
        let img = Image::from_elem((5, 4), 0.25);
        let p = extract_patches(&img, &g, &g.all_indices()).unwrap();
        assert!(p.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn out_of_range_index() {
        let g = PatchGeometry::new(3, 3, 2, 2).unwrap();
        assert!(matches!(extract_patch(&nine(), &g, 4), Err(Error::IndexOutOfRange { .. })));
        let grads = Array2::ones((1, 4));
        assert!(insert_adjoint(grads.view(), &[7], &g).is_err());
    }

    #[test]
    fn invalid_geometry() {
        assert!(PatchGeometry::new(3, 3, 4, 1).is_err());
        assert!(PatchGeometry::new(3, 3, 0, 1).is_err());
    }

    #[test]
    fn adjoint_single_and_overlap() {
        let g = PatchGeometry::new(3, 3, 2, 2).unwrap();
        let one = insert_adjoint(Array2::ones((1, 4)).view(), &[0], &g).unwrap();
        assert_eq!(one, array![[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]]);
        let two = insert_adjoint(Array2::ones((2, 4)).view(), &[0, 1], &g).unwrap();
        assert_eq!(two, array![[1.0, 2.0, 1.0], [1.0, 2.0, 1.0], [0.0, 0.0, 0.0]]);
    }

    #[test]
    fn single_patch_geometry_indices() {
        let g = PatchGeometry::new(4, 4, 4, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_patch_indices(&g, 50, &mut rng).iter().all(|&i| i == 0));
    }

    #[test]
    fn sampling_reproducible() {
        let g = PatchGeometry::new(10, 10, 3, 3).unwrap();
        let a = sample_patch_indices(&g, 100, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_patch_indices(&g, 100, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn conditions_share_corners() {
        let g = PatchGeometry::new(6, 5, 2, 3).unwrap();
        let img = Image::from_shape_fn((6, 5), |(r, c)| (r * 5 + c) as f64);
        for i in 0..g.num_patches() {
            assert_eq!(condition_patch(&img, &g, i).unwrap(), extract_patch(&img, &g, i).unwrap());
        }
        let constant = Image::from_elem((6, 5), 3.0);
        let c = condition_patches(&constant, &g, &g.all_indices()).unwrap();
        assert!(c.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn every_pixel_covered() {
        let g = PatchGeometry::new(9, 7, 3, 4).unwrap();
        assert!(g.coverage().iter().all(|&c| c >= 1.0));
    }
}
