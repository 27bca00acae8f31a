//! 2-D convolution kernels (im2col + gemm).
//!
//! The three kernels are the partial derivatives of the trilinear form
//! `<conv(x, w), gy>`, which is why the differentiable ops built on them
//! close under differentiation.

use crate::{Array, Elem};

/// Stride, zero padding and dilation of a square 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const fn new(stride: usize, pad: usize, dilation: usize) -> Self {
        Self {
            stride,
            pad,
            dilation,
        }
    }

    /// Output extent for an input extent and kernel extent, `None` if the
    /// kernel does not fit.
    pub fn out_size(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.pad;
        if padded < span || self.stride == 0 {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }
}

struct Dims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl Dims {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }
    fn p(&self) -> usize {
        self.ho * self.wo
    }
}

/// Valid `[lo, hi)` output range along one axis for kernel tap `tap`.
fn valid_range(out: usize, input: usize, tap: usize, g: ConvGeom) -> (usize, usize) {
    let off = (tap * g.dilation) as isize - g.pad as isize;
    let s = g.stride as isize;
    // need 0 <= o*s + off < input
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let hi = if input as isize - off <= 0 {
        0
    } else {
        ((input as isize - off) + s - 1) / s
    };
    let lo = (lo as usize).min(out);
    let hi = (hi as usize).min(out).max(lo);
    (lo, hi)
}

fn im2col<T: Elem>(x: &[T], d: &Dims, g: ConvGeom, cols: &mut [T]) {
    let p = d.p();
    for c in 0..d.c {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            let (ylo, yhi) = valid_range(d.ho, d.h, ki, g);
            for kj in 0..d.kw {
                let row = ((c * d.kh + ki) * d.kw + kj) * p;
                let dst = &mut cols[row..row + p];
                let (xlo, xhi) = valid_range(d.wo, d.w, kj, g);
                let xoff = (kj * g.dilation) as isize - g.pad as isize;
                for oy in 0..d.ho {
                    let out_row = &mut dst[oy * d.wo..(oy + 1) * d.wo];
                    if oy < ylo || oy >= yhi {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let iy = oy * g.stride + ki * g.dilation - g.pad;
                    let src = &plane[iy * d.w..(iy + 1) * d.w];
                    out_row[..xlo].fill(T::zero());
                    out_row[xhi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = (xlo as isize + xoff) as usize;
                        out_row[xlo..xhi].copy_from_slice(&src[start..start + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            out_row[ox] = src[(ox as isize * g.stride as isize + xoff) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Elem>(cols: &[T], d: &Dims, g: ConvGeom, x: &mut [T]) {
    let p = d.p();
    for c in 0..d.c {
        let plane = &mut x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.kh {
            let (ylo, yhi) = valid_range(d.ho, d.h, ki, g);
            for kj in 0..d.kw {
                let row = ((c * d.kh + ki) * d.kw + kj) * p;
                let src = &cols[row..row + p];
                let (xlo, xhi) = valid_range(d.wo, d.w, kj, g);
                let xoff = (kj * g.dilation) as isize - g.pad as isize;
                for oy in ylo..yhi {
                    let iy = oy * g.stride + ki * g.dilation - g.pad;
                    let dst = &mut plane[iy * d.w..(iy + 1) * d.w];
                    let srow = &src[oy * d.wo..(oy + 1) * d.wo];
                    for ox in xlo..xhi {
                        let ix = (ox as isize * g.stride as isize + xoff) as usize;
                        dst[ix] = dst[ix] + srow[ox];
                    }
                }
            }
        }
    }
}

fn dims(x_shape: &[usize], w_shape: &[usize], out_hw: (usize, usize)) -> Dims {
    Dims {
        n: x_shape[0],
        c: x_shape[1],
        h: x_shape[2],
        w: x_shape[3],
        o: w_shape[0],
        kh: w_shape[2],
        kw: w_shape[3],
        ho: out_hw.0,
        wo: out_hw.1,
    }
}

pub(crate) fn conv_out_hw(x_shape: &[usize], w_shape: &[usize], g: ConvGeom) -> (usize, usize) {
    assert_eq!(x_shape.len(), 4, "conv input must be NCHW, got {x_shape:?}");
    assert_eq!(w_shape.len(), 4, "conv weight must be OCkk, got {w_shape:?}");
    assert_eq!(
        x_shape[1], w_shape[1],
        "conv input has {} channels, weight expects {}",
        x_shape[1], w_shape[1]
    );
    let ho = g
        .out_size(x_shape[2], w_shape[2])
        .unwrap_or_else(|| panic!("kernel {w_shape:?} does not fit input {x_shape:?} with {g:?}"));
    let wo = g
        .out_size(x_shape[3], w_shape[3])
        .unwrap_or_else(|| panic!("kernel {w_shape:?} does not fit input {x_shape:?} with {g:?}"));
    (ho, wo)
}

/// `y[n] = W · im2col(x[n])`.
pub(crate) fn conv2d<T: Elem>(x: &Array<T>, w: &Array<T>, g: ConvGeom) -> Array<T> {
    let hw = conv_out_hw(x.shape(), w.shape(), g);
    let d = dims(x.shape(), w.shape(), hw);
    let (k, p) = (d.k(), d.p());
    let mut y = Array::zeros(&[d.n, d.o, d.ho, d.wo]);
    if k == 0 || p == 0 || d.o == 0 {
        return y;
    }
    let mut cols = vec![T::zero(); k * p];
    let xin = d.c * d.h * d.w;
    for n in 0..d.n {
        im2col(&x.data()[n * xin..(n + 1) * xin], &d, g, &mut cols);
        let out = &mut y.data_mut()[n * d.o * p..(n + 1) * d.o * p];
        unsafe {
            T::gemm(
                d.o,
                k,
                p,
                T::one(),
                w.data().as_ptr(),
                k as isize,
                1,
                cols.as_ptr(),
                p as isize,
                1,
                T::zero(),
                out.as_mut_ptr(),
                p as isize,
                1,
            );
        }
    }
    y
}

/// Gradient of `<conv(x, w), gy>` with respect to `x`; also the
/// transposed convolution of `gy` by `w`.
pub(crate) fn conv2d_input_grad<T: Elem>(
    gy: &Array<T>,
    w: &Array<T>,
    g: ConvGeom,
    in_hw: (usize, usize),
) -> Array<T> {
    let gs = gy.shape();
    let ws = w.shape();
    assert_eq!(gs.len(), 4, "transposed conv input must be NCHW, got {gs:?}");
    assert_eq!(gs[1], ws[0], "transposed conv channels {gs:?} vs weight {ws:?}");
    let x_shape = [gs[0], ws[1], in_hw.0, in_hw.1];
    let hw = conv_out_hw(&x_shape, ws, g);
    assert_eq!(
        (hw.0, hw.1),
        (gs[2], gs[3]),
        "output size {in_hw:?} inconsistent with input {gs:?} under {g:?}"
    );
    let d = dims(&x_shape, ws, hw);
    let (k, p) = (d.k(), d.p());
    let mut gx = Array::zeros(&x_shape);
    if k == 0 || p == 0 || d.o == 0 {
        return gx;
    }
    let mut cols = vec![T::zero(); k * p];
    let xin = d.c * d.h * d.w;
    for n in 0..d.n {
        let gyn = &gy.data()[n * d.o * p..(n + 1) * d.o * p];
        unsafe {
            T::gemm(
                k,
                d.o,
                p,
                T::one(),
                w.data().as_ptr(),
                1,
                k as isize,
                gyn.as_ptr(),
                p as isize,
                1,
                T::zero(),
                cols.as_mut_ptr(),
                p as isize,
                1,
            );
        }
        col2im(&cols, &d, g, &mut gx.data_mut()[n * xin..(n + 1) * xin]);
    }
    gx
}

/// Gradient of `<conv(x, w), gy>` with respect to `w`.
pub(crate) fn conv2d_weight_grad<T: Elem>(
    x: &Array<T>,
    gy: &Array<T>,
    g: ConvGeom,
    k_hw: (usize, usize),
) -> Array<T> {
    let xs = x.shape();
    let gs = gy.shape();
    let w_shape = [gs[1], xs[1], k_hw.0, k_hw.1];
    let hw = conv_out_hw(xs, &w_shape, g);
    assert_eq!((hw.0, hw.1), (gs[2], gs[3]), "weight grad: {xs:?} vs {gs:?}");
    assert_eq!(xs[0], gs[0], "weight grad batch mismatch");
    let d = dims(xs, &w_shape, hw);
    let (k, p) = (d.k(), d.p());
    let mut gw = Array::zeros(&w_shape);
    if k == 0 || p == 0 || d.o == 0 {
        return gw;
    }
    let mut cols = vec![T::zero(); k * p];
    let xin = d.c * d.h * d.w;
    for n in 0..d.n {
        im2col(&x.data()[n * xin..(n + 1) * xin], &d, g, &mut cols);
        let gyn = &gy.data()[n * d.o * p..(n + 1) * d.o * p];
        unsafe {
            T::gemm(
                d.o,
                p,
                k,
                T::one(),
                gyn.as_ptr(),
                p as isize,
                1,
                cols.as_ptr(),
                1,
                p as isize,
                T::one(),
                gw.data_mut().as_mut_ptr(),
                k as isize,
                1,
            );
        }
    }
    gw
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Literal definition of a convolution.
    fn naive_conv(x: &Array<f64>, w: &Array<f64>, g: ConvGeom) -> Array<f64> {
        let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let ho = g.out_size(h, kh).unwrap();
        let wo = g.out_size(wd, kw).unwrap();
        let mut y = Array::zeros(&[n, o, ho, wo]);
        for b in 0..n {
            for oc in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * g.stride + ki * g.dilation) as isize
                                        - g.pad as isize;
                                    let ix = (ox * g.stride + kj * g.dilation) as isize
                                        - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize
                                    {
                                        continue;
                                    }
                                    acc += x.at(&[b, ic, iy as usize, ix as usize])
                                        * w.at(&[oc, ic, ki, kj]);
                                }
                            }
                        }
                        y.set(&[b, oc, oy, ox], acc);
                    }
                }
            }
        }
        y
    }

    fn pseudo(shape: &[usize], seed: u64) -> Array<f64> {
        let mut s = seed;
        Array::from_fn(shape, |_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        })
    }

    fn dot(a: &Array<f64>, b: &Array<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn matches_naive_and_adjoints() {
        let geoms = [
            ConvGeom::new(1, 0, 1),
            ConvGeom::new(1, 1, 1),
            ConvGeom::new(2, 1, 1),
            ConvGeom::new(1, 2, 2),
            ConvGeom::new(2, 3, 1),
            ConvGeom::new(3, 0, 2),
        ];
        for (i, &g) in geoms.iter().enumerate() {
            for &(k, h) in &[(3usize, 9usize), (4, 8), (1, 5), (7, 11)] {
                if g.out_size(h, k).is_none() {
                    continue;
                }
                let x = pseudo(&[2, 3, h, h + 1], 1 + i as u64);
                let w = pseudo(&[4, 3, k, k], 100 + i as u64);
                let y = conv2d(&x, &w, g);
                let yn = naive_conv(&x, &w, g);
                assert_eq!(y.shape(), yn.shape());
                for (a, b) in y.data().iter().zip(yn.data()) {
                    assert!((a - b).abs() < 1e-12, "{g:?} k={k}");
                }
                // <conv(x,w), gy> = <x, gx(gy,w)> = <w, gw(x,gy)>
                let gy = pseudo(y.shape(), 7);
                let gx = conv2d_input_grad(&gy, &w, g, (h, h + 1));
                let gw = conv2d_weight_grad(&x, &gy, g, (k, k));
                let t = dot(&y, &gy);
                assert!((t - dot(&x, &gx)).abs() < 1e-10);
                assert!((t - dot(&w, &gw)).abs() < 1e-10);
            }
        }
    }
}
