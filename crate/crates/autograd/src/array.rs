use thiserror::Error;

use crate::Elem;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("shape {shape:?} needs {expected} elements, got {actual}")]
    Length {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("shapes {0:?} and {1:?} do not broadcast")]
    Broadcast(Vec<usize>, Vec<usize>),
    #[error("{0}")]
    Invalid(String),
}

/// Dense row-major n-dimensional array.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Elem> Array<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self, ShapeError> {
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(ShapeError::Length {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: (0..numel(shape)).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Value of a rank-0 (or single element) array.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on array of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self, ShapeError> {
        Self::from_vec(shape.to_vec(), self.data.clone())
    }

    pub fn into_shape(self, shape: &[usize]) -> Result<Self, ShapeError> {
        Self::from_vec(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        // Pairwise-free but fixed order: deterministic across runs.
        let mut acc = T::zero();
        for &v in &self.data {
            acc = acc + v;
        }
        acc
    }

    pub fn mean(&self) -> T {
        if self.data.is_empty() {
            return T::zero();
        }
        self.sum() / T::from_usize(self.data.len()).unwrap()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len());
        let mut off = 0;
        for (i, (&ix, &d)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < d, "index {ix} out of bounds for axis {i} of size {d}");
            off = off * d + ix;
        }
        off
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Converts to another element type.
    pub fn cast<U: Elem>(&self) -> Array<U> {
        Array {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64_lossy()).unwrap())
                .collect(),
        }
    }

    /// Elementwise binary op with numpy-style broadcasting.
    pub fn broadcast_zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self, ShapeError> {
        if self.shape == other.shape {
            return Ok(Self {
                shape: self.shape.clone(),
                data: self
                    .data
                    .iter()
                    .zip(&other.data)
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            });
        }
        let out_shape = broadcast_shape(&self.shape, &other.shape)?;
        let sa = broadcast_strides(&self.shape, &out_shape);
        let sb = broadcast_strides(&other.shape, &out_shape);
        let mut out = Vec::with_capacity(numel(&out_shape));
        for_each_row(&out_shape, &[&sa, &sb], |offs, inner, inner_strides| {
            let (oa, ob) = (offs[0], offs[1]);
            let (ia, ib) = (inner_strides[0], inner_strides[1]);
            for j in 0..inner {
                out.push(f(self.data[oa + j * ia], other.data[ob + j * ib]));
            }
        });
        Ok(Self {
            shape: out_shape,
            data: out,
        })
    }

    /// Repeats the array along broadcast axes to reach `shape`.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Self, ShapeError> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let target = broadcast_shape(&self.shape, shape)?;
        if target != shape {
            return Err(ShapeError::Broadcast(self.shape.clone(), shape.to_vec()));
        }
        let s = broadcast_strides(&self.shape, shape);
        let mut out = Vec::with_capacity(numel(shape));
        for_each_row(shape, &[&s], |offs, inner, st| {
            for j in 0..inner {
                out.push(self.data[offs[0] + j * st[0]]);
            }
        });
        Ok(Self {
            shape: shape.to_vec(),
            data: out,
        })
    }

    /// Sums over the axes along which `shape` was broadcast to `self.shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Result<Self, ShapeError> {
        if self.shape == shape {
            return Ok(self.clone());
        }
        let check = broadcast_shape(shape, &self.shape)?;
        if check != self.shape {
            return Err(ShapeError::Broadcast(shape.to_vec(), self.shape.clone()));
        }
        let s = broadcast_strides(shape, &self.shape);
        let mut out = vec![T::zero(); numel(shape)];
        let mut src = 0;
        for_each_row(&self.shape, &[&s], |offs, inner, st| {
            for j in 0..inner {
                let o = offs[0] + j * st[0];
                out[o] = out[o] + self.data[src];
                src += 1;
            }
        });
        Ok(Self {
            shape: shape.to_vec(),
            data: out,
        })
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>, ShapeError> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(ShapeError::Broadcast(a.to_vec(), b.to_vec()));
        };
    }
    Ok(out)
}

/// Strides of `shape` (left-padded with unit axes) when viewed as `out`,
/// with zero stride along broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let r = out.len();
    let pad = r - shape.len();
    let mut strides = vec![0; r];
    let mut acc = 1;
    for i in (0..r).rev() {
        let d = if i >= pad { shape[i - pad] } else { 1 };
        strides[i] = if d == 1 && out[i] != 1 { 0 } else { acc };
        acc *= d;
    }
    strides
}

/// Walks `shape` one innermost row at a time, handing the callback the
/// starting offsets for each strided operand, the row length and the
/// innermost strides.
fn for_each_row(
    shape: &[usize],
    strides: &[&[usize]],
    mut f: impl FnMut(&[usize], usize, &[usize]),
) {
    let k = strides.len();
    if shape.is_empty() {
        f(&vec![0; k], 1, &vec![0; k]);
        return;
    }
    if shape.contains(&0) {
        return;
    }
    let r = shape.len();
    let inner = shape[r - 1];
    let inner_strides: Vec<usize> = strides.iter().map(|s| s[r - 1]).collect();
    let mut index = vec![0usize; r - 1];
    let mut offs = vec![0usize; k];
    let rows: usize = shape[..r - 1].iter().product();
    for _ in 0..rows {
        f(&offs, inner, &inner_strides);
        // increment multi-index over the outer axes
        for ax in (0..r - 1).rev() {
            index[ax] += 1;
            for (o, s) in offs.iter_mut().zip(strides) {
                *o += s[ax];
            }
            if index[ax] < shape[ax] {
                break;
            }
            for (o, s) in offs.iter_mut().zip(strides) {
                *o -= s[ax] * shape[ax];
            }
            index[ax] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(shape: &[usize], data: &[f64]) -> Array<f64> {
        Array::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn broadcast_channel_bias() {
        let x = arr(&[1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = arr(&[1, 2, 1, 1], &[10.0, 20.0]);
        let y = x.broadcast_zip(&b, |a, b| a + b).unwrap();
        assert_eq!(y.data(), &[11.0, 12.0, 23.0, 24.0]);
        let s = y.sum_to(&[1, 2, 1, 1]).unwrap();
        assert_eq!(s.data(), &[23.0, 47.0]);
    }

    #[test]
    fn broadcast_scalar_and_reverse() {
        let x = arr(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let s = Array::scalar(2.0);
        let y = s.broadcast_zip(&x, |a, b| a * b).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);
        assert_eq!(x.sum_to(&[]).unwrap().item(), 10.0);
        let col = arr(&[2, 1], &[1.0, 2.0]);
        let b = col.broadcast_to(&[2, 3]).unwrap();
        assert_eq!(b.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn incompatible_shapes_error() {
        let a = Array::<f32>::zeros(&[2, 3]);
        let b = Array::<f32>::zeros(&[3, 2]);
        assert!(matches!(
            a.broadcast_zip(&b, |x, _| x),
            Err(ShapeError::Broadcast(..))
        ));
        assert!(Array::<f32>::from_vec(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
