//! Image and attribute batches.

use patchwork_autograd::{Array, Elem};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Images as a `(batch, channels, height, width)` array with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch(Array<f32>);

impl ImageBatch {
    pub fn new(array: Array<f32>) -> Result<Self> {
        if array.rank() != 4 {
            return Err(Error::Argument(format!(
                "image batch must be rank 4 (N, C, H, W), got shape {:?}",
                array.shape()
            )));
        }
        if let Some(v) = array.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!(
                "image value {v} outside [-1, 1]"
            )));
        }
        Ok(Self(array))
    }

    /// Clamps into `[-1, 1]` instead of rejecting (NaN becomes 0).
    pub fn from_clamped(array: Array<f32>) -> Result<Self> {
        let clamped = array.map(|v| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) });
        Self::new(clamped)
    }

    pub fn filled(n: usize, c: usize, h: usize, w: usize, value: f32) -> Self {
        Self(Array::full(&[n, c, h, w], value.clamp(-1.0, 1.0)))
    }

    pub fn array(&self) -> &Array<f32> {
        &self.0
    }

    pub fn into_array(self) -> Array<f32> {
        self.0
    }

    pub fn shape(&self) -> [usize; 4] {
        let s = self.0.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn len(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[3]
    }

    fn image_len(&self) -> usize {
        let [_, c, h, w] = self.shape();
        c * h * w
    }

    /// Pixel data of image `i` as a `(C, H, W)` slice.
    pub fn image_data(&self, i: usize) -> &[f32] {
        let n = self.image_len();
        &self.0.data()[i * n..(i + 1) * n]
    }

    pub fn image(&self, i: usize) -> ImageBatch {
        self.select(&[i])
    }

    pub fn select(&self, indices: &[usize]) -> ImageBatch {
        let [_, c, h, w] = self.shape();
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend_from_slice(self.image_data(i));
        }
        Self(Array::from_vec(vec![indices.len(), c, h, w], data).unwrap())
    }

    /// Concatenates batches along the batch axis.
    pub fn stack(parts: &[ImageBatch]) -> Result<ImageBatch> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("cannot stack zero batches".into()))?;
        let [_, c, h, w] = first.shape();
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            let [pn, pc, ph, pw] = p.shape();
            if (pc, ph, pw) != (c, h, w) {
                return Err(Error::Argument(format!(
                    "cannot stack images of shape {:?} with {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
            n += pn;
            data.extend_from_slice(p.0.data());
        }
        Ok(Self(Array::from_vec(vec![n, c, h, w], data).unwrap()))
    }

    pub fn cast<T: Elem>(&self) -> Array<T> {
        self.0.cast()
    }

    /// Values mapped from `[-1, 1]` to `[0, 1]`.
    pub fn to_unit_range(&self) -> Array<f64> {
        self.0.cast::<f64>().map(|v| (v + 1.0) / 2.0)
    }
}

/// One bit per selected attribute (1 = attribute present).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeCode(Vec<u8>);

impl AttributeCode {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::Argument(format!(
                "attribute bits must be 0 or 1, got {b}"
            )));
        }
        Ok(Self(bits))
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self(bits.iter().map(|&b| b as u8).collect())
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i] == 1
    }

    /// Copy with bit `i` inverted.
    pub fn flipped(&self, i: usize) -> Self {
        let mut bits = self.0.clone();
        bits[i] ^= 1;
        Self(bits)
    }

    pub fn with(&self, i: usize, value: bool) -> Self {
        let mut bits = self.0.clone();
        bits[i] = value as u8;
        Self(bits)
    }

    /// `"0110"`-style rendering, used in file names.
    pub fn to_bit_string(&self) -> String {
        self.0.iter().map(|b| if *b == 1 { '1' } else { '0' }).collect()
    }
}

/// Row-aligned attribute codes for a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttrBatch(Vec<AttributeCode>);

impl AttrBatch {
    pub fn new(codes: Vec<AttributeCode>) -> Result<Self> {
        if let Some(first) = codes.first() {
            if codes.iter().any(|c| c.len() != first.len()) {
                return Err(Error::Argument(
                    "attribute codes in a batch must have equal length".into(),
                ));
            }
        }
        Ok(Self(codes))
    }

    pub fn codes(&self) -> &[AttributeCode] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn n_attributes(&self) -> usize {
        self.0.first().map_or(0, |c| c.len())
    }

    pub fn select(&self, indices: &[usize]) -> AttrBatch {
        Self(indices.iter().map(|&i| self.0[i].clone()).collect())
    }

    pub fn map(&self, f: impl FnMut(&AttributeCode) -> AttributeCode) -> AttrBatch {
        Self(self.0.iter().map(f).collect())
    }

    /// `(N, A)` array of 0/1 values.
    pub fn to_array<T: Elem>(&self) -> Array<T> {
        let a = self.n_attributes();
        Array::from_fn(&[self.len(), a], |i| {
            if self.0[i / a.max(1)].bits()[i % a.max(1)] == 1 {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}
