//! Inpainting quality (PSNR, SSIM) and attribute-transfer success.
//!
//! All scores work on `[0, 1]` images; batches in `[-1, 1]` are converted
//! with [`ImageBatch::to_unit_range`] first.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use patchwork_autograd::Array;
use serde::{Deserialize, Serialize};

use crate::batch::{AttrBatch, AttributeCode, ImageBatch};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::masking::{apply_mask, compose_modified, extract_patch, MaskSpec};
use crate::networks::{generator_forward, reconstructor_forward, ModelBundle};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// PSNR of one pair. Identical images have no finite value and are kept
/// apart instead of being averaged as infinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    Identical,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Db(v) => Some(v),
            Psnr::Identical => None,
        }
    }
}

fn same_shape(a: &Array<f64>, b: &Array<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Argument(format!(
            "shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.is_empty() {
        return Err(Error::Argument("empty image".into()));
    }
    Ok(())
}

pub fn mse(a: &Array<f64>, b: &Array<f64>) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// `10·log10(1 / MSE)` with a peak value of 1.
pub fn psnr(a: &Array<f64>, b: &Array<f64>) -> Result<Psnr> {
    let e = mse(a, b)?;
    Ok(if e == 0.0 {
        Psnr::Identical
    } else {
        Psnr::Db(10.0 * (1.0 / e).log10())
    })
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut t = [0.0; SSIM_WINDOW];
    for (i, v) in t.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = t.iter().sum();
    t.map(|v| v / s)
}

/// Valid-mode separable filtering of one `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..k).map(|j| taps[j] * x[y * w + ox + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..k).map(|i| taps[i] * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, h, w, taps);
    let mu_b = filter_valid(b, h, w, taps);
    let aa = filter_valid(&prod(|x, _| x * x), h, w, taps);
    let bb = filter_valid(&prod(|_, y| y * y), h, w, taps);
    let ab = filter_valid(&prod(|x, y| x * y), h, w, taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Windowed SSIM of `(H, W)` or `(C, H, W)` images: Gaussian window
/// (11, σ = 1.5), dynamic range 1, valid windows only, channel mean.
pub fn ssim(a: &Array<f64>, b: &Array<f64>) -> Result<f64> {
    same_shape(a, b)?;
    let (c, h, w) = match *a.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        ref s => return Err(Error::Argument(format!("ssim expects (H, W) or (C, H, W), got {s:?}"))),
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Argument(format!(
            "image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let taps = gaussian_taps();
    let plane = h * w;
    let total: f64 = (0..c)
        .map(|k| {
            let r = k * plane..(k + 1) * plane;
            ssim_plane(&a.data()[r.clone()], &b.data()[r], h, w, &taps)
        })
        .sum();
    Ok(total / c as f64)
}

/// One `(C, H, W)` image of a batch, in `[0, 1]`.
pub fn unit_image(batch: &ImageBatch, i: usize) -> Array<f64> {
    let [_, c, h, w] = batch.shape();
    let data = batch.image_data(i).iter().map(|&v| (v as f64 + 1.0) / 2.0).collect();
    Array::from_vec(vec![c, h, w], data).expect("image shape")
}

/// Running means over a set of image pairs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    /// Mean over pairs with a finite PSNR; `None` when every pair was identical.
    pub psnr_mean: Option<f64>,
    pub ssim_mean: f64,
    /// PSNR restricted to the hole, same averaging rule.
    pub hole_psnr_mean: Option<f64>,
    /// Pairs whose full image matched exactly (excluded from `psnr_mean`).
    pub identical: usize,
    pub n_images: usize,
}

#[derive(Default)]
struct Accumulator {
    psnr: Vec<f64>,
    hole: Vec<f64>,
    ssim: Vec<f64>,
    identical: usize,
}

impl Accumulator {
    fn add(&mut self, out: &ImageBatch, truth: &ImageBatch, m: &MaskSpec) -> Result<()> {
        let out_hole = extract_patch(out, m)?;
        let truth_hole = extract_patch(truth, m)?;
        for i in 0..out.len() {
            let (a, b) = (unit_image(out, i), unit_image(truth, i));
            match psnr(&a, &b)? {
                Psnr::Db(v) => self.psnr.push(v),
                Psnr::Identical => self.identical += 1,
            }
            self.ssim.push(ssim(&a, &b)?);
            if let Psnr::Db(v) = psnr(&unit_image(&out_hole, i), &unit_image(&truth_hole, i))? {
                self.hole.push(v);
            }
        }
        Ok(())
    }

    fn finish(self) -> QualityScores {
        // sequential sums keep the means reproducible
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        QualityScores {
            psnr_mean: mean(&self.psnr),
            ssim_mean: mean(&self.ssim).unwrap_or(0.0),
            hole_psnr_mean: mean(&self.hole),
            identical: self.identical,
            n_images: self.ssim.len(),
        }
    }
}

/// Fills the hole of a masked batch. Returns a full-size image; only its
/// hole region is used.
pub trait Inpainter {
    fn inpaint(&self, masked: &ImageBatch) -> Result<ImageBatch>;
}

/// Attribute transfer from a clean image: whatever masking and inpainting
/// the model does happens inside.
pub trait Transfer {
    fn transfer(&self, x: &ImageBatch, target: &AttrBatch) -> Result<ImageBatch>;
}

/// Per-image attribute predictions.
pub trait AttributeClassifier {
    /// Held-out accuracy per attribute; `None` until trained.
    fn accuracy(&self) -> Option<&[f64]>;
    fn predict(&self, x: &ImageBatch) -> Result<Vec<AttributeCode>>;
}

/// A trained bundle viewed as an inference pipeline. In bypass mode the
/// generator consumes the masked image directly.
pub struct Pipeline<'a> {
    pub bundle: &'a ModelBundle<f32>,
    pub bypass_r: bool,
}

impl Inpainter for Pipeline<'_> {
    fn inpaint(&self, masked: &ImageBatch) -> Result<ImageBatch> {
        reconstructor_forward(self.bundle, masked)
    }
}

impl Transfer for Pipeline<'_> {
    fn transfer(&self, x: &ImageBatch, target: &AttrBatch) -> Result<ImageBatch> {
        let input = self.generator_input(x, &self.bundle.config.mask())?;
        self.translate(&input, target)
    }
}

impl Pipeline<'_> {
    /// G alone on an already prepared input.
    pub fn translate(&self, input: &ImageBatch, target: &AttrBatch) -> Result<ImageBatch> {
        generator_forward(self.bundle, input, target)
    }

    /// The image handed to the generator: x̂, or x̄ in bypass mode.
    pub fn generator_input(&self, x: &ImageBatch, m: &MaskSpec) -> Result<ImageBatch> {
        let masked = apply_mask(x, m)?;
        if self.bypass_r {
            Ok(masked)
        } else {
            modified(self, &masked, m)
        }
    }
}

/// x̂: the masked image with the inpainter's hole pasted in.
pub fn modified(model: &impl Inpainter, masked: &ImageBatch, m: &MaskSpec) -> Result<ImageBatch> {
    let recon = model.inpaint(masked)?;
    compose_modified(masked, &extract_patch(&recon, m)?, m)
}

fn check_nonempty(test: &Dataset) -> Result<()> {
    if test.is_empty() {
        return Err(Error::Argument("empty test set".into()));
    }
    Ok(())
}

/// Scores x̂ against x and, for context, x̄ against x.
pub fn evaluate_inpainting(
    model: &impl Inpainter,
    test: &Dataset,
    m: &MaskSpec,
    chunk: usize,
) -> Result<(QualityScores, QualityScores)> {
    check_nonempty(test)?;
    let mut ours = Accumulator::default();
    let mut base = Accumulator::default();
    for part in test.chunks(chunk) {
        let (x, _) = part?;
        let masked = apply_mask(&x, m)?;
        ours.add(&modified(model, &masked, m)?, &x, m)?;
        base.add(&masked, &x, m)?;
    }
    Ok((ours.finish(), base.finish()))
}

/// Scores G(input, c_original) against x: how much of the image survives the
/// full pipeline when no attribute change is requested.
pub fn evaluate_generator(pipeline: &Pipeline, test: &Dataset, m: &MaskSpec, chunk: usize) -> Result<QualityScores> {
    check_nonempty(test)?;
    let mut acc = Accumulator::default();
    for part in test.chunks(chunk) {
        let (x, attrs) = part?;
        acc.add(&pipeline.transfer(&x, &attrs)?, &x, m)?;
    }
    Ok(acc.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Images without the attribute, asked to gain it.
    Add,
    /// Images with the attribute, asked to lose it.
    Remove,
}

impl Direction {
    fn source_bit(self) -> bool {
        self == Direction::Remove
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlipCount {
    pub hits: usize,
    pub total: usize,
}

impl FlipCount {
    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.hits as f64 / self.total as f64)
    }
}

/// Feeds every test image whose `attribute` bit matches the direction's
/// source value through the pipeline with that single bit inverted, and
/// counts how often the probe reports the target value.
pub fn attribute_flip_rate(
    model: &dyn Transfer,
    probe: &dyn AttributeClassifier,
    test: &Dataset,
    attribute: usize,
    direction: Direction,
    chunk: usize,
) -> Result<FlipCount> {
    if probe.accuracy().is_none() {
        return Err(Error::State("probe classifier has not been trained".into()));
    }
    check_nonempty(test)?;
    let n_attr = test.index().selected_attributes.len();
    if attribute >= n_attr {
        return Err(Error::Argument(format!("attribute {attribute} out of range (have {n_attr})")));
    }
    let want = !direction.source_bit();
    let rows: Vec<usize> = (0..test.len())
        .filter(|&i| test.index().entries[i].attributes.get(attribute) == direction.source_bit())
        .collect();
    let mut count = FlipCount::default();
    for idx in rows.chunks(chunk.max(1)) {
        let (x, attrs) = test.gather(idx)?;
        let target = attrs.map(|c| c.with(attribute, want));
        let out = model.transfer(&x, &target)?;
        for code in probe.predict(&out)? {
            count.total += 1;
            if code.get(attribute) == want {
                count.hits += 1;
            }
        }
    }
    Ok(count)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeFlips {
    pub attribute: String,
    /// Absent → present.
    pub add: FlipCount,
    /// Present → absent.
    pub remove: FlipCount,
}

impl AttributeFlips {
    pub fn overall(&self) -> Option<f64> {
        FlipCount {
            hits: self.add.hits + self.remove.hits,
            total: self.add.total + self.remove.total,
        }
        .rate()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_images: usize,
    pub bypass_r: bool,
    /// x̂ against x.
    pub inpainted: QualityScores,
    /// x̄ against x.
    pub baseline: QualityScores,
    /// G(input, c_original) against x.
    pub generator: Option<QualityScores>,
    pub probe_accuracy: Option<BTreeMap<String, f64>>,
    pub flips: Vec<AttributeFlips>,
}

impl EvalReport {
    pub fn psnr_mean(&self) -> Option<f64> {
        self.inpainted.psnr_mean
    }

    pub fn ssim_mean(&self) -> f64 {
        self.inpainted.ssim_mean
    }

    pub fn per_attribute_flip_rate(&self) -> BTreeMap<String, f64> {
        self.flips
            .iter()
            .filter_map(|f| f.overall().map(|r| (f.attribute.clone(), r)))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let opt = |v: Option<f64>, d: usize| v.map_or("-".to_string(), |x| format!("{x:.d$}"));
        let mut s = String::new();
        let _ = writeln!(s, "### Inpainting ({} test images)\n", self.n_images);
        let _ = writeln!(s, "| | PSNR (dB) | SSIM | hole PSNR (dB) | identical |");
        let _ = writeln!(s, "|---|---|---|---|---|");
        let mut rows = vec![("masked baseline", &self.baseline), ("inpainted", &self.inpainted)];
        if let Some(g) = &self.generator {
            rows.push(("generator, no flip", g));
        }
        for (name, q) in rows {
            let _ = writeln!(
                s,
                "| {name} | {} | {:.4} | {} | {} |",
                opt(q.psnr_mean, 2),
                q.ssim_mean,
                opt(q.hole_psnr_mean, 2),
                q.identical
            );
        }
        if self.bypass_r {
            let _ = writeln!(s, "\nGenerator input: masked image (reconstructor bypassed).");
        }
        if let Some(acc) = &self.probe_accuracy {
            let list: Vec<String> = acc.iter().map(|(k, v)| format!("{k} {:.1}%", 100.0 * v)).collect();
            let _ = writeln!(s, "\nProbe accuracy: {}", list.join(", "));
        }
        if !self.flips.is_empty() {
            let _ = writeln!(s, "\n### Attribute transfer\n");
            let _ = writeln!(s, "| attribute | absent → present | present → absent | overall |");
            let _ = writeln!(s, "|---|---|---|---|");
            let cell = |c: &FlipCount| match c.rate() {
                Some(r) => format!("{:.3} ({}/{})", r, c.hits, c.total),
                None => "-".into(),
            };
            for f in &self.flips {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} |",
                    f.attribute,
                    cell(&f.add),
                    cell(&f.remove),
                    opt(f.overall(), 3)
                );
            }
        }
        s
    }
}

/// Everything in [`EvalReport`]: image quality for the pipeline and, when a
/// probe is given, flip rates in both directions for every attribute.
pub fn evaluate(
    pipeline: &Pipeline,
    probe: Option<&dyn AttributeClassifier>,
    test: &Dataset,
    chunk: usize,
) -> Result<EvalReport> {
    let m = pipeline.bundle.config.mask();
    let (inpainted, baseline) = evaluate_inpainting(pipeline, test, &m, chunk)?;
    let generator = if pipeline.bundle.config.n_attributes > 0 {
        Some(evaluate_generator(pipeline, test, &m, chunk)?)
    } else {
        None
    };
    let names = &test.index().selected_attributes;
    let mut report = EvalReport {
        n_images: test.len(),
        bypass_r: pipeline.bypass_r,
        inpainted,
        baseline,
        generator,
        probe_accuracy: None,
        flips: Vec::new(),
    };
    if let Some(p) = probe {
        let acc = p.accuracy().ok_or_else(|| Error::State("probe classifier has not been trained".into()))?;
        report.probe_accuracy = Some(names.iter().cloned().zip(acc.iter().copied()).collect());
        for (k, name) in names.iter().enumerate() {
            report.flips.push(AttributeFlips {
                attribute: name.clone(),
                add: attribute_flip_rate(pipeline, p, test, k, Direction::Add, chunk)?,
                remove: attribute_flip_rate(pipeline, p, test, k, Direction::Remove, chunk)?,
            });
        }
    }
    Ok(report)
}
