//! Linear spatial rearrangements on NCHW arrays, each paired with its adjoint.

use crate::{Array, Elem};

fn nchw(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected NCHW array, got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Mirror padding (edge pixel not repeated).
pub(crate) fn reflect_pad<T: Elem>(x: &Array<T>, p: usize) -> Array<T> {
    let (n, c, h, w) = nchw(x.shape());
    assert!(
        p < h && p < w,
        "mirror padding {p} needs spatial size > {p}, got {h}x{w}"
    );
    let (ho, wo) = (h + 2 * p, w + 2 * p);
    let mut out = Array::zeros(&[n, c, ho, wo]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        let d = &mut dst[plane * ho * wo..(plane + 1) * ho * wo];
        for y in 0..ho {
            let sy = reflect(y as isize - p as isize, h);
            for xx in 0..wo {
                let sx = reflect(xx as isize - p as isize, w);
                d[y * wo + xx] = s[sy * w + sx];
            }
        }
    }
    out
}

/// Adjoint of [`reflect_pad`]: folds the padded border back onto the interior.
pub(crate) fn reflect_pad_adjoint<T: Elem>(g: &Array<T>, p: usize) -> Array<T> {
    let (n, c, ho, wo) = nchw(g.shape());
    let (h, w) = (ho - 2 * p, wo - 2 * p);
    let mut out = Array::zeros(&[n, c, h, w]);
    let src = g.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let s = &src[plane * ho * wo..(plane + 1) * ho * wo];
        let d = &mut dst[plane * h * w..(plane + 1) * h * w];
        for y in 0..ho {
            let sy = reflect(y as isize - p as isize, h);
            for xx in 0..wo {
                let sx = reflect(xx as isize - p as isize, w);
                d[sy * w + sx] = d[sy * w + sx] + s[y * wo + xx];
            }
        }
    }
    out
}

/// Spatial window `[top, top+h) × [left, left+w)`.
pub(crate) fn crop<T: Elem>(x: &Array<T>, top: usize, left: usize, h: usize, w: usize) -> Array<T> {
    let (n, c, hi, wi) = nchw(x.shape());
    assert!(
        top + h <= hi && left + w <= wi,
        "crop {h}x{w}@({top},{left}) outside {hi}x{wi}"
    );
    let mut out = Array::zeros(&[n, c, h, w]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        for y in 0..h {
            let so = plane * hi * wi + (top + y) * wi + left;
            let d0 = plane * h * w + y * w;
            dst[d0..d0 + w].copy_from_slice(&src[so..so + w]);
        }
    }
    out
}

/// Adjoint of [`crop`]: places `x` into a zero canvas of size `h × w`.
pub(crate) fn embed<T: Elem>(x: &Array<T>, h: usize, w: usize, top: usize, left: usize) -> Array<T> {
    let (n, c, hi, wi) = nchw(x.shape());
    assert!(top + hi <= h && left + wi <= w, "embed outside canvas");
    let mut out = Array::zeros(&[n, c, h, w]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        for y in 0..hi {
            let s0 = plane * hi * wi + y * wi;
            let d0 = plane * h * w + (top + y) * w + left;
            dst[d0..d0 + wi].copy_from_slice(&src[s0..s0 + wi]);
        }
    }
    out
}

pub(crate) fn upsample2<T: Elem>(x: &Array<T>) -> Array<T> {
    let (n, c, h, w) = nchw(x.shape());
    let mut out = Array::zeros(&[n, c, 2 * h, 2 * w]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                dst[plane * 4 * h * w + y * 2 * w + xx] = src[plane * h * w + (y / 2) * w + xx / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: 2×2 sum pooling.
pub(crate) fn sum_pool2<T: Elem>(x: &Array<T>) -> Array<T> {
    let (n, c, h2, w2) = nchw(x.shape());
    assert!(h2 % 2 == 0 && w2 % 2 == 0, "sum_pool2 needs even size");
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Array::zeros(&[n, c, h, w]);
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        for y in 0..h2 {
            for xx in 0..w2 {
                let d = plane * h * w + (y / 2) * w + xx / 2;
                dst[d] = dst[d] + src[plane * h2 * w2 + y * w2 + xx];
            }
        }
    }
    out
}

/// Channels `[start, start+len)`.
pub(crate) fn narrow_channels<T: Elem>(x: &Array<T>, start: usize, len: usize) -> Array<T> {
    let (n, c, h, w) = nchw(x.shape());
    assert!(start + len <= c, "channel slice out of range");
    let plane = h * w;
    let mut data = Vec::with_capacity(n * len * plane);
    for b in 0..n {
        let s0 = (b * c + start) * plane;
        data.extend_from_slice(&x.data()[s0..s0 + len * plane]);
    }
    Array::from_vec(vec![n, len, h, w], data).unwrap()
}

/// Adjoint of [`narrow_channels`]: zero canvas with `c` channels.
pub(crate) fn embed_channels<T: Elem>(x: &Array<T>, c: usize, start: usize) -> Array<T> {
    let (n, len, h, w) = nchw(x.shape());
    let plane = h * w;
    let mut out = Array::zeros(&[n, c, h, w]);
    for b in 0..n {
        let d0 = (b * c + start) * plane;
        let s0 = b * len * plane;
        out.data_mut()[d0..d0 + len * plane].copy_from_slice(&x.data()[s0..s0 + len * plane]);
    }
    out
}

pub(crate) fn concat_channels<T: Elem>(xs: &[&Array<T>]) -> Array<T> {
    assert!(!xs.is_empty(), "concat of nothing");
    let (n, _, h, w) = nchw(xs[0].shape());
    let total: usize = xs
        .iter()
        .map(|a| {
            let (an, ac, ah, aw) = nchw(a.shape());
            assert!(an == n && ah == h && aw == w, "concat shape mismatch");
            ac
        })
        .sum();
    let plane = h * w;
    let mut data = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for a in xs {
            let ac = a.shape()[1];
            data.extend_from_slice(&a.data()[b * ac * plane..(b + 1) * ac * plane]);
        }
    }
    Array::from_vec(vec![n, total, h, w], data).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> Array<f64> {
        Array::from_fn(shape, |i| (i as f64 * 0.37).sin())
    }

    fn dot(a: &Array<f64>, b: &Array<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn reflect_pad_values() {
        let x = Array::from_vec(vec![1, 1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let x = x.broadcast_to(&[1, 1, 3, 3]).unwrap();
        let y = reflect_pad(&x, 2);
        assert_eq!(&y.data()[..7], &[3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn adjoint_pairs() {
        let x = seq(&[2, 3, 6, 5]);
        let py = seq(&[2, 3, 10, 9]);
        assert!((dot(&reflect_pad(&x, 2), &py) - dot(&x, &reflect_pad_adjoint(&py, 2))).abs() < 1e-12);

        let cy = seq(&[2, 3, 3, 2]);
        assert!((dot(&crop(&x, 1, 2, 3, 2), &cy) - dot(&x, &embed(&cy, 6, 5, 1, 2))).abs() < 1e-12);

        let uy = seq(&[2, 3, 12, 10]);
        assert!((dot(&upsample2(&x), &uy) - dot(&x, &sum_pool2(&uy))).abs() < 1e-12);

        let ny = seq(&[2, 2, 6, 5]);
        assert!(
            (dot(&narrow_channels(&x, 1, 2), &ny) - dot(&x, &embed_channels(&ny, 3, 1))).abs()
                < 1e-12
        );
    }

    #[test]
    fn concat_then_narrow() {
        let a = seq(&[2, 1, 2, 2]);
        let b = seq(&[2, 3, 2, 2]).map(|v| v + 5.0);
        let c = concat_channels(&[&a, &b]);
        assert_eq!(c.shape(), &[2, 4, 2, 2]);
        assert_eq!(narrow_channels(&c, 0, 1), a);
        assert_eq!(narrow_channels(&c, 1, 3), b);
    }
}
