//! Differentiable operations on [`Var`].

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::conv::{self, ConvGeom};
use crate::spatial;
use crate::var::Backward;
use crate::{Array, Elem, Var};

fn zip<T: Elem>(a: &Array<T>, b: &Array<T>, f: impl Fn(T, T) -> T) -> Array<T> {
    a.broadcast_zip(b, f)
        .unwrap_or_else(|e| panic!("elementwise op: {e}"))
}

fn hw(shape: &[usize]) -> (usize, usize) {
    (shape[2], shape[3])
}

// ---------------------------------------------------------------- binary

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl<T: Elem> Backward<T> for Binary {
    fn name(&self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn backward(&self, out: &Var<T>, g: &Var<T>, inputs: &[Var<T>]) -> Vec<Option<Var<T>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let ga = a.requires_grad().then(|| {
            match self {
                Binary::Add | Binary::Sub => g.clone(),
                Binary::Mul => g * b,
                Binary::Div => g / b,
            }
            .sum_to(a.shape())
        });
        let gb = b.requires_grad().then(|| {
            match self {
                Binary::Add => g.clone(),
                Binary::Sub => g.neg(),
                Binary::Mul => g * a,
                Binary::Div => (g * out / b).neg(),
            }
            .sum_to(b.shape())
        });
        vec![ga, gb]
    }
}

fn binary<T: Elem>(a: &Var<T>, b: &Var<T>, op: Binary) -> Var<T> {
    let v = match op {
        Binary::Add => zip(a.value(), b.value(), |x, y| x + y),
        Binary::Sub => zip(a.value(), b.value(), |x, y| x - y),
        Binary::Mul => zip(a.value(), b.value(), |x, y| x * y),
        Binary::Div => zip(a.value(), b.value(), |x, y| x / y),
    };
    Var::from_op(v, vec![a.clone(), b.clone()], op)
}

macro_rules! binop {
    ($tr:ident, $m:ident, $op:expr) => {
        impl<T: Elem> $tr<&Var<T>> for &Var<T> {
            type Output = Var<T>;
            fn $m(self, rhs: &Var<T>) -> Var<T> {
                binary(self, rhs, $op)
            }
        }
        impl<T: Elem> $tr<Var<T>> for Var<T> {
            type Output = Var<T>;
            fn $m(self, rhs: Var<T>) -> Var<T> {
                binary(&self, &rhs, $op)
            }
        }
        impl<T: Elem> $tr<&Var<T>> for Var<T> {
            type Output = Var<T>;
            fn $m(self, rhs: &Var<T>) -> Var<T> {
                binary(&self, rhs, $op)
            }
        }
        impl<T: Elem> $tr<Var<T>> for &Var<T> {
            type Output = Var<T>;
            fn $m(self, rhs: Var<T>) -> Var<T> {
                binary(self, &rhs, $op)
            }
        }
    };
}

binop!(Add, add, Binary::Add);
binop!(Sub, sub, Binary::Sub);
binop!(Mul, mul, Binary::Mul);
binop!(Div, div, Binary::Div);

impl<T: Elem> Neg for &Var<T> {
    type Output = Var<T>;
    fn neg(self) -> Var<T> {
        unary(self, Unary::Neg)
    }
}

impl<T: Elem> Neg for Var<T> {
    type Output = Var<T>;
    fn neg(self) -> Var<T> {
        unary(&self, Unary::Neg)
    }
}

// ---------------------------------------------------------------- unary

#[derive(Clone, Copy)]
enum Unary {
    Neg,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Abs,
    Square,
    Sqrt,
    RecipSafe,
    Relu,
    LeakyRelu(f64),
    Elu,
    MulScalar(f64),
    AddScalar(f64),
}

fn sigmoid<T: Elem>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl Unary {
    fn apply<T: Elem>(self, x: T) -> T {
        match self {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Tanh => x.tanh(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Abs => x.abs(),
            Unary::Square => x * x,
            Unary::Sqrt => x.sqrt(),
            Unary::RecipSafe => {
                if x == T::zero() {
                    T::zero()
                } else {
                    T::one() / x
                }
            }
            Unary::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Unary::LeakyRelu(s) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::lit(s)
                }
            }
            Unary::Elu => {
                if x > T::zero() {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Unary::MulScalar(s) => x * T::lit(s),
            Unary::AddScalar(s) => x + T::lit(s),
        }
    }
}

impl<T: Elem> Backward<T> for Unary {
    fn name(&self) -> &'static str {
        match self {
            Unary::Neg => "neg",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Tanh => "tanh",
            Unary::Sigmoid => "sigmoid",
            Unary::Abs => "abs",
            Unary::Square => "square",
            Unary::Sqrt => "sqrt",
            Unary::RecipSafe => "recip_safe",
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Elu => "elu",
            Unary::MulScalar(_) => "mul_scalar",
            Unary::AddScalar(_) => "add_scalar",
        }
    }

    fn backward(&self, out: &Var<T>, g: &Var<T>, inputs: &[Var<T>]) -> Vec<Option<Var<T>>> {
        let x = &inputs[0];
        let xv = x.value();
        let step = |pos: T, neg: T| {
            Var::constant(xv.map(|v| if v > T::zero() { pos } else { neg }))
        };
        let gx = match *self {
            Unary::Neg => g.neg(),
            Unary::Exp => g * out,
            Unary::Log => g / x,
            Unary::Tanh => g * out.square().neg().add_scalar(1.0),
            Unary::Sigmoid => g * out * out.neg().add_scalar(1.0),
            Unary::Abs => {
                let sign = xv.map(|v| {
                    if v > T::zero() {
                        T::one()
                    } else if v < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                });
                g * Var::constant(sign)
            }
            Unary::Square => g * x.mul_scalar(2.0),
            // zero where the output is zero (subgradient choice)
            Unary::Sqrt => g * out.recip_safe().mul_scalar(0.5),
            Unary::RecipSafe => (g * out.square()).neg(),
            Unary::Relu => g * step(T::one(), T::zero()),
            Unary::LeakyRelu(s) => g * step(T::one(), T::lit(s)),
            // d/dx elu = 1 for x > 0, elu(x) + 1 otherwise
            Unary::Elu => g * (out * step(T::zero(), T::one())).add_scalar(1.0),
            Unary::MulScalar(s) => g.mul_scalar(s),
            Unary::AddScalar(_) => g.clone(),
        };
        vec![Some(gx)]
    }
}

fn unary<T: Elem>(x: &Var<T>, op: Unary) -> Var<T> {
    Var::from_op(x.value().map(|v| op.apply(v)), vec![x.clone()], op)
}

// ---------------------------------------------------------------- shape

struct Reshape(Vec<usize>);

impl<T: Elem> Backward<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _: &Var<T>, g: &Var<T>, _: &[Var<T>]) -> Vec<Option<Var<T>>> {
        vec![Some(g.reshape(&self.0))]
    }
}

struct SumTo(Vec<usize>);

impl<T: Elem> Backward<T> for SumTo {
    fn name(&self) -> &'static str {
        "sum_to"
    }
    fn backward(&self, _: &Var<T>, g: &Var<T>, _: &[Var<T>]) -> Vec<Option<Var<T>>> {
        vec![Some(g.broadcast_to(&self.0))]
    }
}

struct BroadcastTo(Vec<usize>);

impl<T: Elem> Backward<T> for BroadcastTo {
    fn name(&self) -> &'static str {
        "broadcast_to"
    }
    fn backward(&self, _: &Var<T>, g: &Var<T>, _: &[Var<T>]) -> Vec<Option<Var<T>>> {
        vec![Some(g.sum_to(&self.0))]
    }
}

// ---------------------------------------------------------------- conv

struct Conv2d(ConvGeom);

impl<T: Elem> Backward<T> for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn backward(&self, _: &Var<T>, g: &Var<T>, inputs: &[Var<T>]) -> Vec<Option<Var<T>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        vec![
            x.requires_grad()
                .then(|| g.conv_transpose2d(w, self.0, hw(x.shape()))),
            w.requires_grad()
                .then(|| x.conv2d_weight_grad(g, self.0, hw(w.shape()))),
        ]
    }
}

/// Inputs `[gy, w]`.
struct ConvInputGrad(ConvGeom);

impl<T: Elem> Backward<T> for ConvInputGrad {
    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }
    fn backward(&self, _: &Var<T>, h: &Var<T>, inputs: &[Var<T>]) -> Vec<Option<Var<T>>> {
        let (gy, w) = (&inputs[0], &inputs[1]);
        vec![
            gy.requires_grad().then(|| h.conv2d(w, self.0)),
            w.requires_grad()
                .then(|| h.conv2d_weight_grad(gy, self.0, hw(w.shape()))),
        ]
    }
}

/// Inputs `[x, gy]`.
struct ConvWeightGrad(ConvGeom);

impl<T: Elem> Backward<T> for ConvWeightGrad {
    fn name(&self) -> &'static str {
        "conv2d_weight_grad"
    }
    fn backward(&self, _: &Var<T>, k: &Var<T>, inputs: &[Var<T>]) -> Vec<Option<Var<T>>> {
        let (x, gy) = (&inputs[0], &inputs[1]);
        vec![
            x.requires_grad()
                .then(|| gy.conv_transpose2d(k, self.0, hw(x.shape()))),
            gy.requires_grad().then(|| x.conv2d(k, self.0)),
        ]
    }
}

// ---------------------------------------------------------------- spatial

enum Spatial {
    ReflectPad(usize),
    ReflectPadAdjoint(usize),
    Crop {
        top: usize,
        left: usize,
        full: (usize, usize),
    },
    Embed {
        top: usize,
        left: usize,
        inner: (usize, usize),
    },
    Upsample2,
    SumPool2,
    NarrowChannels {
        start: usize,
        channels: usize,
    },
    EmbedChannels {
        start: usize,
        len: usize,
    },
}

impl<T: Elem> Backward<T> for Spatial {
    fn name(&self) -> &'static str {
        match self {
            Spatial::ReflectPad(_) => "reflect_pad",
            Spatial::ReflectPadAdjoint(_) => "reflect_pad_adjoint",
            Spatial::Crop { .. } => "crop",
            Spatial::Embed { .. } => "embed",
            Spatial::Upsample2 => "upsample2",
            Spatial::SumPool2 => "sum_pool2",
            Spatial::NarrowChannels { .. } => "narrow_channels",
            Spatial::EmbedChannels { .. } => "embed_channels",
        }
    }

    fn backward(&self, _: &Var<T>, g: &Var<T>, _: &[Var<T>]) -> Vec<Option<Var<T>>> {
        let gx = match *self {
            Spatial::ReflectPad(p) => g.reflect_pad_adjoint(p),
            Spatial::ReflectPadAdjoint(p) => g.reflect_pad(p),
            Spatial::Crop { top, left, full } => g.embed(full.0, full.1, top, left),
            Spatial::Embed { top, left, inner } => g.crop(top, left, inner.0, inner.1),
            Spatial::Upsample2 => g.sum_pool2(),
            Spatial::SumPool2 => g.upsample2(),
            Spatial::NarrowChannels { start, channels } => g.embed_channels(channels, start),
            Spatial::EmbedChannels { start, len } => g.narrow_channels(start, len),
        };
        vec![Some(gx)]
    }
}

struct Concat(Vec<usize>);

impl<T: Elem> Backward<T> for Concat {
    fn name(&self) -> &'static str {
        "concat_channels"
    }
    fn backward(&self, _: &Var<T>, g: &Var<T>, inputs: &[Var<T>]) -> Vec<Option<Var<T>>> {
        let mut start = 0;
        self.0
            .iter()
            .zip(inputs)
            .map(|(&c, inp)| {
                let s = start;
                start += c;
                inp.requires_grad().then(|| g.narrow_channels(s, c))
            })
            .collect()
    }
}

// ---------------------------------------------------------------- losses

/// Inputs `[logits]`; targets are constant.
struct BceWithLogits(Array<f64>);

impl<T: Elem> Backward<T> for BceWithLogits {
    fn name(&self) -> &'static str {
        "bce_with_logits"
    }
    fn backward(&self, _: &Var<T>, g: &Var<T>, inputs: &[Var<T>]) -> Vec<Option<Var<T>>> {
        let z = Var::constant(self.0.cast::<T>());
        vec![Some(g * (inputs[0].sigmoid() - z))]
    }
}

impl<T: Elem> Var<T> {
    pub fn exp(&self) -> Var<T> {
        unary(self, Unary::Exp)
    }
    pub fn log(&self) -> Var<T> {
        unary(self, Unary::Log)
    }
    pub fn tanh(&self) -> Var<T> {
        unary(self, Unary::Tanh)
    }
    pub fn sigmoid(&self) -> Var<T> {
        unary(self, Unary::Sigmoid)
    }
    pub fn abs(&self) -> Var<T> {
        unary(self, Unary::Abs)
    }
    pub fn square(&self) -> Var<T> {
        unary(self, Unary::Square)
    }
    /// Square root whose derivative is taken as zero at zero.
    pub fn sqrt(&self) -> Var<T> {
        unary(self, Unary::Sqrt)
    }
    /// `1/x`, with `1/0` defined as `0`.
    pub fn recip_safe(&self) -> Var<T> {
        unary(self, Unary::RecipSafe)
    }
    pub fn relu(&self) -> Var<T> {
        unary(self, Unary::Relu)
    }
    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        unary(self, Unary::LeakyRelu(slope))
    }
    /// ELU with `alpha = 1`.
    pub fn elu(&self) -> Var<T> {
        unary(self, Unary::Elu)
    }
    pub fn mul_scalar(&self, s: f64) -> Var<T> {
        unary(self, Unary::MulScalar(s))
    }
    pub fn add_scalar(&self, s: f64) -> Var<T> {
        unary(self, Unary::AddScalar(s))
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<T> {
        let v = self
            .value()
            .reshape(shape)
            .unwrap_or_else(|e| panic!("reshape: {e}"));
        Var::from_op(v, vec![self.clone()], Reshape(self.shape().to_vec()))
    }

    /// Sums over broadcast axes down to `shape`.
    pub fn sum_to(&self, shape: &[usize]) -> Var<T> {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self
            .value()
            .sum_to(shape)
            .unwrap_or_else(|e| panic!("sum_to: {e}"));
        Var::from_op(v, vec![self.clone()], SumTo(self.shape().to_vec()))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Var<T> {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self
            .value()
            .broadcast_to(shape)
            .unwrap_or_else(|e| panic!("broadcast_to: {e}"));
        Var::from_op(v, vec![self.clone()], BroadcastTo(self.shape().to_vec()))
    }

    /// Sum of all elements (rank-0 result).
    pub fn sum(&self) -> Var<T> {
        self.sum_to(&[])
    }

    /// Mean of all elements; zero for an empty array.
    pub fn mean(&self) -> Var<T> {
        let n = self.value().len();
        if n == 0 {
            return Var::scalar(T::zero());
        }
        self.sum().mul_scalar(1.0 / n as f64)
    }

    /// Per-sample sums over every axis but the first, shape `[N]`.
    pub fn sum_per_sample(&self) -> Var<T> {
        let n = self.shape()[0];
        let rest = self.value().len() / n.max(1);
        self.reshape(&[n, rest]).sum_to(&[n, 1]).reshape(&[n])
    }

    /// Per-sample, per-channel spatial mean of an NCHW tensor, shape `[N, C, 1, 1]`.
    pub fn spatial_mean(&self) -> Var<T> {
        let s = self.shape();
        let (n, c) = (s[0], s[1]);
        self.sum_to(&[n, c, 1, 1])
            .mul_scalar(1.0 / (s[2] * s[3]) as f64)
    }

    /// Cross-correlation with `w` of shape `[out, in, kh, kw]`.
    pub fn conv2d(&self, w: &Var<T>, geom: ConvGeom) -> Var<T> {
        let v = conv::conv2d(self.value(), w.value(), geom);
        Var::from_op(v, vec![self.clone(), w.clone()], Conv2d(geom))
    }

    /// Transposed convolution. `w` is laid out `[in, out, kh, kw]` (the
    /// weight of the convolution this one transposes) and `out_hw` selects
    /// the output extent.
    pub fn conv_transpose2d(&self, w: &Var<T>, geom: ConvGeom, out_hw: (usize, usize)) -> Var<T> {
        let v = conv::conv2d_input_grad(self.value(), w.value(), geom, out_hw);
        Var::from_op(v, vec![self.clone(), w.clone()], ConvInputGrad(geom))
    }

    /// Weight gradient of `<conv(self, w), gy>`.
    pub fn conv2d_weight_grad(&self, gy: &Var<T>, geom: ConvGeom, k_hw: (usize, usize)) -> Var<T> {
        let v = conv::conv2d_weight_grad(self.value(), gy.value(), geom, k_hw);
        Var::from_op(v, vec![self.clone(), gy.clone()], ConvWeightGrad(geom))
    }

    pub fn reflect_pad(&self, p: usize) -> Var<T> {
        if p == 0 {
            return self.clone();
        }
        let v = spatial::reflect_pad(self.value(), p);
        Var::from_op(v, vec![self.clone()], Spatial::ReflectPad(p))
    }

    pub fn reflect_pad_adjoint(&self, p: usize) -> Var<T> {
        if p == 0 {
            return self.clone();
        }
        let v = spatial::reflect_pad_adjoint(self.value(), p);
        Var::from_op(v, vec![self.clone()], Spatial::ReflectPadAdjoint(p))
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Var<T> {
        let full = hw(self.shape());
        let v = spatial::crop(self.value(), top, left, h, w);
        Var::from_op(v, vec![self.clone()], Spatial::Crop { top, left, full })
    }

    /// Places `self` at `(top, left)` on a zero canvas of `h × w`.
    pub fn embed(&self, h: usize, w: usize, top: usize, left: usize) -> Var<T> {
        let inner = hw(self.shape());
        let v = spatial::embed(self.value(), h, w, top, left);
        Var::from_op(v, vec![self.clone()], Spatial::Embed { top, left, inner })
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&self) -> Var<T> {
        let v = spatial::upsample2(self.value());
        Var::from_op(v, vec![self.clone()], Spatial::Upsample2)
    }

    pub fn sum_pool2(&self) -> Var<T> {
        let v = spatial::sum_pool2(self.value());
        Var::from_op(v, vec![self.clone()], Spatial::SumPool2)
    }

    pub fn narrow_channels(&self, start: usize, len: usize) -> Var<T> {
        let channels = self.shape()[1];
        let v = spatial::narrow_channels(self.value(), start, len);
        Var::from_op(v, vec![self.clone()], Spatial::NarrowChannels { start, channels })
    }

    pub fn embed_channels(&self, channels: usize, start: usize) -> Var<T> {
        let len = self.shape()[1];
        let v = spatial::embed_channels(self.value(), channels, start);
        Var::from_op(v, vec![self.clone()], Spatial::EmbedChannels { start, len })
    }

    pub fn concat_channels(xs: &[&Var<T>]) -> Var<T> {
        let arrays: Vec<&Array<T>> = xs.iter().map(|v| v.value()).collect();
        let v = spatial::concat_channels(&arrays);
        let sizes = xs.iter().map(|v| v.shape()[1]).collect();
        Var::from_op(v, xs.iter().map(|&v| v.clone()).collect(), Concat(sizes))
    }

    /// Elementwise binary cross-entropy of `sigmoid(self)` against
    /// constant targets, in the overflow-free form
    /// `max(x, 0) - x·z + ln(1 + e^{-|x|})`.
    pub fn bce_with_logits(&self, targets: &Array<T>) -> Var<T> {
        assert_eq!(self.shape(), targets.shape(), "bce targets shape");
        let v = zip(self.value(), targets, |x, z| {
            x.max(T::zero()) - x * z + (-x.abs()).exp().ln_1p()
        });
        Var::from_op(v, vec![self.clone()], BceWithLogits(targets.cast()))
    }
}
