//! Named parameter collections and the convolution layer shared by all
//! three networks.

use std::collections::HashMap;

use patchwork_autograd::{Array, ConvGeom, Elem, Var};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Ordered, named tensors of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    values: Vec<Array<T>>,
}

impl<T: Elem> Default for ParamSet<T> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }
}

impl<T: Elem> ParamSet<T> {
    pub fn push(&mut self, name: impl Into<String>, value: Array<T>) {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array<T>] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn get(&self, name: &str) -> Option<&Array<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.values[i])
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Total scalar count.
    pub fn count(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    pub fn cast<U: Elem>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            values: self.values.iter().map(Array::cast).collect(),
        }
    }

    /// CRC32 over names, shapes and little-endian values.
    pub fn fingerprint(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        let mut buf = Vec::new();
        for (name, v) in self.iter() {
            h.update(name.as_bytes());
            for &d in v.shape() {
                h.update(&(d as u64).to_le_bytes());
            }
            buf.clear();
            T::write_le(v.data(), &mut buf);
            h.update(&buf);
        }
        h.finalize()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Array::all_finite)
    }
}

/// A [`ParamSet`] lifted into graph variables for one forward pass.
pub struct Bound<T: Elem> {
    vars: Vec<Var<T>>,
    lookup: HashMap<String, usize>,
}

impl<T: Elem> Bound<T> {
    /// Leaves that gradients flow into.
    pub fn trainable(p: &ParamSet<T>) -> Self {
        Self::bind(p, Var::leaf)
    }

    /// Constants: the network participates but is not updated.
    pub fn frozen(p: &ParamSet<T>) -> Self {
        Self::bind(p, Var::constant)
    }

    fn bind(p: &ParamSet<T>, make: fn(Array<T>) -> Var<T>) -> Self {
        Self {
            vars: p.values.iter().cloned().map(make).collect(),
            lookup: p.names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> &Var<T> {
        let i = self
            .lookup
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"));
        &self.vars[*i]
    }

    pub fn vars(&self) -> &[Var<T>] {
        &self.vars
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Reflect,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Act {
    Identity,
    Elu,
    Relu,
    Leaky(f64),
    Tanh,
}

impl Act {
    pub fn apply<T: Elem>(self, x: &Var<T>) -> Var<T> {
        match self {
            Act::Identity => x.clone(),
            Act::Elu => x.elu(),
            Act::Relu => x.relu(),
            Act::Leaky(s) => x.leaky_relu(s),
            Act::Tanh => x.tanh(),
        }
    }
}

/// One convolution stage: optional ×2 upsample, padding, (transposed)
/// convolution, bias, instance norm and activation, in that order.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub padding: Padding,
    pub transposed: bool,
    pub upsample: bool,
    pub bias: bool,
    pub norm: bool,
    pub act: Act,
    /// Fan-in scaled weights instead of the fixed `INIT_STD`.
    pub he_init: bool,
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

impl ConvSpec {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            kernel,
            stride: 1,
            pad: (kernel - 1) / 2,
            dilation: 1,
            padding: Padding::Zero,
            transposed: false,
            upsample: false,
            bias: true,
            norm: false,
            act: Act::Identity,
            he_init: false,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }
    pub fn pad(mut self, p: usize) -> Self {
        self.pad = p;
        self
    }
    /// Sets the dilation and the matching "same" padding.
    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self.pad = d * (self.kernel - 1) / 2;
        self
    }
    pub fn reflect(mut self) -> Self {
        self.padding = Padding::Reflect;
        self
    }
    pub fn transposed(mut self) -> Self {
        self.transposed = true;
        self
    }
    pub fn upsample(mut self) -> Self {
        self.upsample = true;
        self
    }
    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }
    pub fn norm(mut self) -> Self {
        self.norm = true;
        self
    }
    pub fn act(mut self, a: Act) -> Self {
        self.act = a;
        self
    }
    pub fn he_init(mut self) -> Self {
        self.he_init = true;
        self
    }

    pub fn init_std(&self) -> f64 {
        if self.he_init {
            (2.0 / (self.cin * self.kernel * self.kernel) as f64).sqrt()
        } else {
            INIT_STD
        }
    }

    fn weight_shape(&self) -> Vec<usize> {
        if self.transposed {
            vec![self.cin, self.cout, self.kernel, self.kernel]
        } else {
            vec![self.cout, self.cin, self.kernel, self.kernel]
        }
    }

    /// Appends this stage's parameters: conv weights `N(0, init_std)`, zero
    /// bias, instance-norm scale 1 and offset 0.
    pub fn init<T: Elem>(&self, params: &mut ParamSet<T>, rng: &mut impl Rng) {
        let normal = Normal::new(0.0, self.init_std()).unwrap();
        let shape = self.weight_shape();
        let w = Array::from_fn(&shape, |_| T::lit(normal.sample(rng)));
        params.push(format!("{}.weight", self.name), w);
        if self.bias {
            params.push(format!("{}.bias", self.name), Array::zeros(&[self.cout]));
        }
        if self.norm {
            params.push(format!("{}.in_scale", self.name), Array::ones(&[self.cout]));
            params.push(format!("{}.in_offset", self.name), Array::zeros(&[self.cout]));
        }
    }

    pub fn forward<T: Elem>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let y = self.linear(p, x);
        let y = if self.norm {
            instance_norm(
                &y,
                p.get(&format!("{}.in_scale", self.name)),
                p.get(&format!("{}.in_offset", self.name)),
            )
        } else {
            y
        };
        self.act.apply(&y)
    }

    /// Everything up to and including the bias.
    pub fn linear<T: Elem>(&self, p: &Bound<T>, x: &Var<T>) -> Var<T> {
        let x = if self.upsample { x.upsample2() } else { x.clone() };
        let w = p.get(&format!("{}.weight", self.name));
        let y = if self.transposed {
            let g = ConvGeom::new(self.stride, self.pad, self.dilation);
            let s = x.shape();
            let out = |n: usize| (n - 1) * self.stride + self.dilation * (self.kernel - 1) + 1 - 2 * self.pad;
            x.conv_transpose2d(w, g, (out(s[2]), out(s[3])))
        } else {
            match self.padding {
                Padding::Zero => x.conv2d(w, ConvGeom::new(self.stride, self.pad, self.dilation)),
                Padding::Reflect => x
                    .reflect_pad(self.pad)
                    .conv2d(w, ConvGeom::new(self.stride, 0, self.dilation)),
            }
        };
        if self.bias {
            let b = p.get(&format!("{}.bias", self.name)).reshape(&[1, self.cout, 1, 1]);
            &y + &b
        } else {
            y
        }
    }

    /// Output spatial extent for input extent `n`.
    pub fn out_size(&self, n: usize) -> Result<usize> {
        let n = if self.upsample { 2 * n } else { n };
        if self.transposed {
            return Ok((n - 1) * self.stride + self.dilation * (self.kernel - 1) + 1 - 2 * self.pad);
        }
        if self.padding == Padding::Reflect && self.pad >= n.max(1) {
            return Err(Error::Config(format!(
                "{}: mirror padding {} needs inputs larger than {n}px",
                self.name, self.pad
            )));
        }
        ConvGeom::new(self.stride, self.pad, self.dilation)
            .out_size(n, self.kernel)
            .ok_or_else(|| Error::Config(format!("{}: kernel does not fit a {n}px input", self.name)))
    }
}

/// Per-sample, per-channel normalization with learned affine `scale`, `offset`.
pub fn instance_norm<T: Elem>(x: &Var<T>, scale: &Var<T>, offset: &Var<T>) -> Var<T> {
    let c = x.shape()[1];
    let centered = x - &x.spatial_mean();
    let var = centered.square().spatial_mean();
    let inv = var.add_scalar(INSTANCE_NORM_EPS).sqrt().recip_safe();
    &(&centered * &inv) * &scale.reshape(&[1, c, 1, 1]) + offset.reshape(&[1, c, 1, 1])
}

/// Runs a stack of stages in order.
pub fn sequential<T: Elem>(specs: &[ConvSpec], p: &Bound<T>, x: &Var<T>) -> Var<T> {
    specs.iter().fold(x.clone(), |h, s| s.forward(p, &h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn instance_norm_standardizes() {
        let x = Var::constant(Array::<f64>::from_fn(&[2, 3, 4, 5], |i| ((i * 7) % 11) as f64));
        let y = instance_norm(
            &x,
            &Var::constant(Array::ones(&[3])),
            &Var::constant(Array::zeros(&[3])),
        );
        let m = y.spatial_mean();
        assert!(m.value().max_abs() < 1e-9);
        let v = y.square().spatial_mean();
        assert!(v.value().data().iter().all(|&s| (s - 1.0).abs() < 1e-3));
    }

    #[test]
    fn stage_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let specs = [
            ConvSpec::new("a", 3, 4, 5).reflect().act(Act::Elu),
            ConvSpec::new("b", 4, 6, 4).stride(2).pad(1).norm(),
            ConvSpec::new("c", 6, 2, 4).stride(2).pad(1).transposed(),
            ConvSpec::new("d", 2, 3, 3).upsample().dilation(2).reflect().act(Act::Tanh),
        ];
        let mut ps = ParamSet::<f32>::default();
        for s in &specs {
            s.init(&mut ps, &mut rng);
        }
        assert_eq!(ps.len(), 2 + 4 + 2 + 2);
        let x = Var::constant(Array::zeros(&[2, 3, 8, 8]));
        let y = sequential(&specs, &Bound::frozen(&ps), &x);
        assert_eq!(y.shape(), &[2, 3, 16, 16]);
        let mut n = 8;
        for s in &specs {
            n = s.out_size(n).unwrap();
        }
        assert_eq!(n, 16);
        assert!(ConvSpec::new("e", 1, 1, 3).dilation(4).reflect().out_size(4).is_err());
    }
}
