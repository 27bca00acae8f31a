//! Reconstructor R, generator G and the two-branch critic D.
//!
//! Layouts (`c` = `base_channels`, `s` = `image_size`):
//!
//! * **R** (inpainting, mirror padding, ELU, biases): input is the masked
//!   image plus a hole-indicator channel. `5×5 c`, `3×3/2 2c`, `3×3 2c`,
//!   `3×3/2 4c`, `3×3 4c` ×2, dilated `3×3 4c` at 2/4/8/16, `3×3 4c` ×2,
//!   up + `3×3 2c`, `3×3 2c`, up + `3×3 c`, `3×3 c/2`, `3×3 3` + tanh.
//!   Dilations are capped at a quarter of the bottleneck width (`s/8`) so
//!   mirror padding stays defined on small images.
//! * **G** (translation, zero padding, instance norm, no biases): the code
//!   is tiled into `n_attributes` constant planes next to the image.
//!   `7×7 c`, `4×4/2 2c`, `4×4/2 4c`, `n_res_blocks` residual blocks of two
//!   `3×3 4c` convs at dilations 1 and 2, transposed `4×4/2 2c` and `c`,
//!   `7×7 3` + tanh.
//! * **D**: global branch over the full image and patch branch over the
//!   hole crop, both `4×4/2` convs with LeakyReLU(0.01), channels doubling
//!   from `c` and capped at `8c`. The global branch halves down to 2–3px
//!   (6 stages at 128px); the patch branch halves while the input is at
//!   least 8px, with at least 2 stages (3 at 52px). Each branch has a
//!   `3×3 → 1` critic head averaged over space. Attribute logits are the
//!   sum of one full-extent conv over each branch's final features.

use patchwork_autograd::{no_grad, Array, Elem, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{AttrBatch, ImageBatch};
use crate::error::{Error, Result};
use crate::masking::{centered_mask, MaskSpec};
use crate::nn::{sequential, Act, Bound, ConvSpec, ParamSet};

const LEAK: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub n_attributes: usize,
    #[serde(default = "default_base")]
    pub base_channels: usize,
    #[serde(default = "default_blocks")]
    pub n_res_blocks: usize,
}

fn default_base() -> usize {
    64
}

fn default_blocks() -> usize {
    6
}

impl NetConfig {
    pub fn new(image_size: usize, patch_size: usize, n_attributes: usize) -> Self {
        Self {
            image_size,
            patch_size,
            n_attributes,
            base_channels: default_base(),
            n_res_blocks: default_blocks(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 || !self.image_size.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "image_size must be a multiple of 4 and at least 16, got {}",
                self.image_size
            )));
        }
        if self.patch_size < 8 || self.patch_size > self.image_size {
            return Err(Error::Config(format!(
                "patch_size must lie in [8, image_size], got {}",
                self.patch_size
            )));
        }
        if self.base_channels < 2 {
            return Err(Error::Config("base_channels must be at least 2".into()));
        }
        Ok(())
    }

    pub fn mask(&self) -> MaskSpec {
        centered_mask(self.image_size, self.patch_size).expect("validated geometry")
    }
}

pub fn reconstructor_layout(cfg: &NetConfig) -> Vec<ConvSpec> {
    let c = cfg.base_channels;
    let cap = (cfg.image_size / 8).max(1);
    // No normalization layers here, so N(0, 0.02) would shrink the signal
    // by ~4x per layer; fan-in scaling keeps it alive through the stack.
    let conv = |name: &str, cin, cout, k| ConvSpec::new(name, cin, cout, k).reflect().act(Act::Elu).he_init();
    let mut l = vec![
        conv("r.conv1", 4, c, 5),
        conv("r.conv2", c, 2 * c, 3).stride(2),
        conv("r.conv3", 2 * c, 2 * c, 3),
        conv("r.conv4", 2 * c, 4 * c, 3).stride(2),
        conv("r.conv5", 4 * c, 4 * c, 3),
        conv("r.conv6", 4 * c, 4 * c, 3),
    ];
    for (i, d) in [2, 4, 8, 16].into_iter().enumerate() {
        l.push(conv(&format!("r.dil{}", i + 1), 4 * c, 4 * c, 3).dilation(d.min(cap)));
    }
    l.extend([
        conv("r.conv7", 4 * c, 4 * c, 3),
        conv("r.conv8", 4 * c, 4 * c, 3),
        conv("r.up1", 4 * c, 2 * c, 3).upsample(),
        conv("r.conv9", 2 * c, 2 * c, 3),
        conv("r.up2", 2 * c, c, 3).upsample(),
        conv("r.conv10", c, (c / 2).max(1), 3),
        ConvSpec::new("r.out", (c / 2).max(1), 3, 3).reflect().act(Act::Tanh),
    ]);
    l
}

pub struct GeneratorLayout {
    pub head: Vec<ConvSpec>,
    pub blocks: Vec<[ConvSpec; 2]>,
    pub tail: Vec<ConvSpec>,
}

pub fn generator_layout(cfg: &NetConfig) -> GeneratorLayout {
    let c = cfg.base_channels;
    let a = cfg.n_attributes;
    let stage = |name: &str, cin, cout, k| ConvSpec::new(name, cin, cout, k).no_bias().norm().act(Act::Relu);
    let head = vec![
        stage("g.stem", 3 + a, c, 7),
        stage("g.down1", c, 2 * c, 4).stride(2).pad(1),
        stage("g.down2", 2 * c, 4 * c, 4).stride(2).pad(1),
    ];
    let blocks = (0..cfg.n_res_blocks)
        .map(|i| {
            [
                stage(&format!("g.res{i}.a"), 4 * c, 4 * c, 3),
                ConvSpec::new(format!("g.res{i}.b"), 4 * c, 4 * c, 3)
                    .dilation(2)
                    .no_bias()
                    .norm(),
            ]
        })
        .collect();
    let tail = vec![
        stage("g.up1", 4 * c, 2 * c, 4).stride(2).pad(1).transposed(),
        stage("g.up2", 2 * c, c, 4).stride(2).pad(1).transposed(),
        ConvSpec::new("g.out", c, 3, 7).no_bias().act(Act::Tanh),
    ];
    GeneratorLayout { head, blocks, tail }
}

pub struct CriticLayout {
    pub global: Vec<ConvSpec>,
    pub patch: Vec<ConvSpec>,
    pub adv_global: ConvSpec,
    pub adv_patch: ConvSpec,
    pub class_global: ConvSpec,
    pub class_patch: ConvSpec,
}

fn critic_branch(prefix: &str, base: usize, depth: usize) -> Vec<ConvSpec> {
    let mut cin = 3;
    (0..depth)
        .map(|k| {
            let cout = (base << k.min(3)).min(8 * base);
            let s = ConvSpec::new(format!("{prefix}.conv{}", k + 1), cin, cout, 4)
                .stride(2)
                .pad(1)
                .act(Act::Leaky(LEAK))
                .he_init();
            cin = cout;
            s
        })
        .collect()
}

fn halvings(mut size: usize, keep_going: impl Fn(usize) -> bool) -> (usize, usize) {
    let mut depth = 0;
    while keep_going(size) {
        size /= 2;
        depth += 1;
    }
    (depth, size)
}

pub fn critic_layout(cfg: &NetConfig) -> CriticLayout {
    let c = cfg.base_channels;
    let (dg, sg) = halvings(cfg.image_size, |s| s / 2 >= 2);
    let (mut dp, mut sp) = halvings(cfg.patch_size, |s| s >= 8);
    if dp < 2 {
        dp = 2;
        sp = cfg.patch_size / 4;
    }
    let global = critic_branch("d.global", c, dg);
    let patch = critic_branch("d.patch", c, dp);
    let fg = global.last().unwrap().cout;
    let fp = patch.last().unwrap().cout;
    let a = cfg.n_attributes;
    CriticLayout {
        adv_global: ConvSpec::new("d.global.adv", fg, 1, 3),
        adv_patch: ConvSpec::new("d.patch.adv", fp, 1, 3),
        class_global: ConvSpec::new("d.class.global", fg, a, sg).pad(0),
        class_patch: ConvSpec::new("d.class.patch", fp, a, sp).pad(0).no_bias(),
        global,
        patch,
    }
}

/// Parameters of all three networks. Each set is owned separately, so an
/// update to one never touches another.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle<T> {
    pub config: NetConfig,
    pub r: ParamSet<T>,
    pub g: ParamSet<T>,
    pub d: ParamSet<T>,
}

/// Deterministic initialization; R, G and D draw from separate streams of
/// one seeded generator.
pub fn init_bundle<T: Elem>(cfg: &NetConfig, seed: u64) -> Result<ModelBundle<T>> {
    cfg.validate()?;
    let rng_for = |stream| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    };

    let mut r = ParamSet::default();
    let mut rng = rng_for(0);
    let specs = reconstructor_layout(cfg);
    let mut size = cfg.image_size;
    for s in &specs {
        size = s.out_size(size)?;
        s.init(&mut r, &mut rng);
    }

    let mut g = ParamSet::default();
    let mut rng = rng_for(1);
    let gl = generator_layout(cfg);
    for s in gl.head.iter().chain(gl.blocks.iter().flatten()).chain(&gl.tail) {
        s.init(&mut g, &mut rng);
    }

    let mut d = ParamSet::default();
    let mut rng = rng_for(2);
    let dl = critic_layout(cfg);
    for s in dl.global.iter().chain(&dl.patch) {
        s.init(&mut d, &mut rng);
    }
    for s in [&dl.adv_global, &dl.adv_patch] {
        s.init(&mut d, &mut rng);
    }
    if cfg.n_attributes > 0 {
        dl.class_global.init(&mut d, &mut rng);
        dl.class_patch.init(&mut d, &mut rng);
    }

    Ok(ModelBundle {
        config: cfg.clone(),
        r,
        g,
        d,
    })
}

impl<T: Elem> ModelBundle<T> {
    pub fn cast<U: Elem>(&self) -> ModelBundle<U> {
        ModelBundle {
            config: self.config.clone(),
            r: self.r.cast(),
            g: self.g.cast(),
            d: self.d.cast(),
        }
    }

    pub fn parameter_counts(&self) -> [usize; 3] {
        [self.r.count(), self.g.count(), self.d.count()]
    }
}

/// R on a masked batch; the output covers the full image.
pub fn reconstruct<T: Elem>(cfg: &NetConfig, p: &Bound<T>, masked: &Var<T>) -> Var<T> {
    let n = masked.shape()[0];
    let s = cfg.image_size;
    let hole = cfg.mask().patch_indicator::<T>().broadcast_to(&[n, 1, s, s]).unwrap();
    let input = Var::concat_channels(&[masked, &Var::constant(hole)]);
    sequential(&reconstructor_layout(cfg), p, &input)
}

/// G on a batch and `(N, n_attributes)` target codes.
pub fn translate<T: Elem>(cfg: &NetConfig, p: &Bound<T>, x: &Var<T>, codes: &Array<T>) -> Var<T> {
    let layout = generator_layout(cfg);
    let s = x.shape();
    let (n, a) = (s[0], cfg.n_attributes);
    let planes = codes
        .reshape(&[n, a, 1, 1])
        .unwrap()
        .broadcast_to(&[n, a, s[2], s[3]])
        .unwrap();
    let mut h = sequential(&layout.head, p, &Var::concat_channels(&[x, &Var::constant(planes)]));
    for [a, b] in &layout.blocks {
        let r = b.forward(p, &a.forward(p, &h));
        h = &h + &r;
    }
    sequential(&layout.tail, p, &h)
}

pub struct CriticOutput<T: Elem> {
    /// `[N]` global critic scores.
    pub adv_g: Var<T>,
    /// `[N]` patch critic scores.
    pub adv_p: Var<T>,
    /// `[N, n_attributes]` attribute logits.
    pub logits: Var<T>,
}

fn head<T: Elem>(spec: &ConvSpec, p: &Bound<T>, features: &Var<T>) -> Var<T> {
    let n = features.shape()[0];
    spec.forward(p, features).spatial_mean().reshape(&[n])
}

/// Global critic score of full images, `[N]`.
pub fn critic_global<T: Elem>(cfg: &NetConfig, p: &Bound<T>, x: &Var<T>) -> Var<T> {
    let l = critic_layout(cfg);
    head(&l.adv_global, p, &sequential(&l.global, p, x))
}

/// Patch critic score of hole crops, `[N]`.
pub fn critic_patch<T: Elem>(cfg: &NetConfig, p: &Bound<T>, patch: &Var<T>) -> Var<T> {
    let l = critic_layout(cfg);
    head(&l.adv_patch, p, &sequential(&l.patch, p, patch))
}

pub fn discriminate<T: Elem>(cfg: &NetConfig, p: &Bound<T>, x: &Var<T>) -> CriticOutput<T> {
    let l = critic_layout(cfg);
    let m = cfg.mask();
    let n = x.shape()[0];
    let fg = sequential(&l.global, p, x);
    let fp = sequential(&l.patch, p, &x.crop(m.top, m.left, m.patch_size, m.patch_size));
    let logits = if cfg.n_attributes == 0 {
        Var::constant(Array::zeros(&[n, 0]))
    } else {
        let a = cfg.n_attributes;
        (l.class_global.linear(p, &fg) + l.class_patch.linear(p, &fp)).reshape(&[n, a])
    };
    CriticOutput {
        adv_g: head(&l.adv_global, p, &fg),
        adv_p: head(&l.adv_patch, p, &fp),
        logits,
    }
}

fn check_images(cfg: &NetConfig, x: &ImageBatch) -> Result<()> {
    let [_, c, h, w] = x.shape();
    if c != 3 || h != cfg.image_size || w != cfg.image_size {
        return Err(Error::Argument(format!(
            "expected (N, 3, {s}, {s}) images, got {:?}",
            x.shape(),
            s = cfg.image_size
        )));
    }
    Ok(())
}

fn check_codes(cfg: &NetConfig, x: &ImageBatch, c: &AttrBatch) -> Result<()> {
    if c.len() != x.len() {
        return Err(Error::Argument(format!(
            "{} attribute rows for {} images",
            c.len(),
            x.len()
        )));
    }
    if !c.is_empty() && c.n_attributes() != cfg.n_attributes {
        return Err(Error::Argument(format!(
            "codes have {} attributes, the model expects {}",
            c.n_attributes(),
            cfg.n_attributes
        )));
    }
    Ok(())
}

fn to_batch<T: Elem>(v: &Var<T>) -> Result<ImageBatch> {
    ImageBatch::from_clamped(v.value().cast())
}

/// Inference-mode R: masked batch in, full-image reconstruction out.
pub fn reconstructor_forward<T: Elem>(bundle: &ModelBundle<T>, masked: &ImageBatch) -> Result<ImageBatch> {
    check_images(&bundle.config, masked)?;
    let _g = no_grad();
    let p = Bound::frozen(&bundle.r);
    to_batch(&reconstruct(&bundle.config, &p, &Var::constant(masked.cast())))
}

/// Inference-mode G.
pub fn generator_forward<T: Elem>(bundle: &ModelBundle<T>, x: &ImageBatch, codes: &AttrBatch) -> Result<ImageBatch> {
    check_images(&bundle.config, x)?;
    check_codes(&bundle.config, x, codes)?;
    let _g = no_grad();
    let p = Bound::frozen(&bundle.g);
    to_batch(&translate(&bundle.config, &p, &Var::constant(x.cast()), &codes.to_array()))
}

/// Inference-mode D: `(adv_g [N], adv_p [N], logits [N, A])`.
pub fn discriminator_forward<T: Elem>(
    bundle: &ModelBundle<T>,
    x: &ImageBatch,
) -> Result<(Array<T>, Array<T>, Array<T>)> {
    check_images(&bundle.config, x)?;
    let _g = no_grad();
    let p = Bound::frozen(&bundle.d);
    let out = discriminate(&bundle.config, &p, &Var::constant(x.cast()));
    Ok((out.adv_g.value().clone(), out.adv_p.value().clone(), out.logits.value().clone()))
}
