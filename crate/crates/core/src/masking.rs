//! Square-hole geometry: masking, patch/contour extraction and the
//! modification step that pastes a reconstructed patch into a masked image.
//!
//! The hole ("patch") is a square; everything outside it is the "contour".
//! The two regions partition the pixel grid. The contour is kept full-size
//! with the hole set to [`MaskSpec::fill_value`].

use patchwork_autograd::{Array, Elem, Var};
use serde::{Deserialize, Serialize};

use crate::batch::ImageBatch;
use crate::error::{Error, Result};

/// Mid-gray in `[-1, 1]` space.
pub const DEFAULT_FILL: f32 = 0.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub image_size: usize,
    pub patch_size: usize,
    pub top: usize,
    pub left: usize,
    pub fill_value: f32,
}

/// Hole of side `patch_size` at the geometric image center.
pub fn centered_mask(image_size: usize, patch_size: usize) -> Result<MaskSpec> {
    if patch_size > image_size {
        return Err(Error::Argument(format!(
            "patch size {patch_size} exceeds image size {image_size}"
        )));
    }
    let offset = (image_size - patch_size) / 2;
    MaskSpec::new(image_size, patch_size, offset, offset, DEFAULT_FILL)
}

impl MaskSpec {
    pub fn new(
        image_size: usize,
        patch_size: usize,
        top: usize,
        left: usize,
        fill_value: f32,
    ) -> Result<Self> {
        if top + patch_size > image_size || left + patch_size > image_size {
            return Err(Error::Argument(format!(
                "patch {patch_size}px at ({top}, {left}) does not fit a {image_size}px image"
            )));
        }
        if !(-1.0..=1.0).contains(&fill_value) {
            return Err(Error::Argument(format!(
                "fill value {fill_value} outside [-1, 1]"
            )));
        }
        Ok(Self {
            image_size,
            patch_size,
            top,
            left,
            fill_value,
        })
    }

    pub fn in_patch(&self, y: usize, x: usize) -> bool {
        (self.top..self.top + self.patch_size).contains(&y)
            && (self.left..self.left + self.patch_size).contains(&x)
    }

    pub fn in_contour(&self, y: usize, x: usize) -> bool {
        !self.in_patch(y, x)
    }

    /// Row-major `H×W` map, `true` inside the hole.
    pub fn patch_region(&self) -> Vec<bool> {
        let s = self.image_size;
        (0..s * s).map(|i| self.in_patch(i / s, i % s)).collect()
    }

    /// Row-major `H×W` map, `true` outside the hole.
    pub fn contour_region(&self) -> Vec<bool> {
        self.patch_region().into_iter().map(|p| !p).collect()
    }

    pub fn patch_pixels(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn contour_pixels(&self) -> usize {
        self.image_size * self.image_size - self.patch_pixels()
    }

    /// `(1, 1, H, W)` indicator of the hole, for broadcasting.
    pub fn patch_indicator<T: Elem>(&self) -> Array<T> {
        let s = self.image_size;
        Array::from_fn(&[1, 1, s, s], |i| {
            if self.in_patch(i / s, i % s) {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    fn check_image(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[2] != self.image_size || shape[3] != self.image_size {
            return Err(Error::Argument(format!(
                "images of shape {shape:?} do not match a {}px mask",
                self.image_size
            )));
        }
        Ok(())
    }
}

/// `x̄`: the hole replaced by the fill value, contour untouched.
pub fn apply_mask(x: &ImageBatch, m: &MaskSpec) -> Result<ImageBatch> {
    m.check_image(x.array().shape())?;
    let mut out = x.array().clone();
    let [n, c, h, w] = x.shape();
    let data = out.data_mut();
    for plane in 0..n * c {
        for y in m.top..m.top + m.patch_size {
            let row = plane * h * w + y * w;
            data[row + m.left..row + m.left + m.patch_size].fill(m.fill_value);
        }
    }
    ImageBatch::new(out)
}

/// `x_p`: the `(N, C, p, p)` crop of the hole region.
pub fn extract_patch(x: &ImageBatch, m: &MaskSpec) -> Result<ImageBatch> {
    m.check_image(x.array().shape())?;
    let [n, c, h, w] = x.shape();
    let p = m.patch_size;
    let mut data = Vec::with_capacity(n * c * p * p);
    for plane in 0..n * c {
        for y in m.top..m.top + p {
            let row = plane * h * w + y * w;
            data.extend_from_slice(&x.array().data()[row + m.left..row + m.left + p]);
        }
    }
    ImageBatch::new(Array::from_vec(vec![n, c, p, p], data).unwrap())
}

/// `x_ct`: the outside-hole region, kept full-size with the hole filled.
pub fn extract_contour(x: &ImageBatch, m: &MaskSpec) -> Result<ImageBatch> {
    apply_mask(x, m)
}

/// `x̂`: `masked` outside the hole and `patch` inside it.
pub fn compose_modified(masked: &ImageBatch, patch: &ImageBatch, m: &MaskSpec) -> Result<ImageBatch> {
    m.check_image(masked.array().shape())?;
    let [n, c, h, w] = masked.shape();
    let p = m.patch_size;
    if patch.shape() != [n, c, p, p] {
        return Err(Error::Argument(format!(
            "patch batch of shape {:?} does not fill a {p}px hole in {:?}",
            patch.shape(),
            masked.shape()
        )));
    }
    let mut out = masked.array().clone();
    let data = out.data_mut();
    for plane in 0..n * c {
        for y in 0..p {
            let row = plane * h * w + (m.top + y) * w + m.left;
            let src = plane * p * p + y * p;
            data[row..row + p].copy_from_slice(&patch.array().data()[src..src + p]);
        }
    }
    ImageBatch::new(out)
}

/// Differentiable modification step on a full-size reconstruction:
/// `masked ⊙ (1 − M) + recon ⊙ M`, bit-exact on both regions.
pub fn compose_modified_var<T: Elem>(masked: &Var<T>, recon: &Var<T>, m: &MaskSpec) -> Var<T> {
    let inside = m.patch_indicator::<T>();
    let outside = inside.map(|v| T::one() - v);
    masked * &Var::constant(outside) + recon * &Var::constant(inside)
}
