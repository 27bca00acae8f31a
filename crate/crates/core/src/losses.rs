//! Objective terms and their weighted totals.
//!
//! Every total is minimized. Sign table (`E` = batch mean):
//!
//! | quantity            | definition                                              |
//! |---------------------|---------------------------------------------------------|
//! | critic term (branch)| `E[D(real)] − E[D(fake)]`                               |
//! | `L_adv` (critic)    | `Σ_branch critic term − λ_gp · Σ_branch GP`             |
//! | `L_disc`            | `−L_adv + λ_c · L_class(real)`                          |
//! | `L_adv` (R or G)    | `−E[adv_g(fake)] − E[adv_p(fake)]`                      |
//! | `L_rec`             | `λ_ae · L_ae + L_adv + λ_c · L_class(fake)`             |
//! | `L_gen`             | `L_adv + λ_c · L_class(fake) + λ_cycle · L_cycle`       |
//!
//! L1 terms are per-element means so the weights do not depend on resolution.

use std::io::Write;
use std::path::Path;

use patchwork_autograd::{grad, Array, Elem, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::MaskSpec;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_ae: f64,
    pub lambda_cycle: f64,
    pub lambda_gp: f64,
    pub lambda_p: f64,
    pub lambda_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_ae: 10.0,
            lambda_cycle: 10.0,
            lambda_gp: 10.0,
            lambda_p: 5.0,
            lambda_c: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("lambda_ae", self.lambda_ae),
            ("lambda_cycle", self.lambda_cycle),
            ("lambda_gp", self.lambda_gp),
            ("lambda_p", self.lambda_p),
            ("lambda_c", self.lambda_c),
        ];
        for (name, v) in all {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Contour and patch parts of the reconstruction loss, unweighted.
pub struct AeTerms<T: Elem> {
    pub contour: Var<T>,
    pub patch: Var<T>,
}

impl<T: Elem> AeTerms<T> {
    pub fn total(&self, lambda_p: f64) -> Var<T> {
        &self.contour + &self.patch.mul_scalar(lambda_p)
    }
}

/// Mean absolute error between the masked input and the reconstruction
/// over contour elements, and between the true and reconstructed hole over
/// patch elements. An empty region contributes 0.
pub fn loss_ae_terms<T: Elem>(masked: &Var<T>, recon: &Var<T>, real: &Var<T>, m: &MaskSpec) -> AeTerms<T> {
    let s = masked.shape();
    let per_plane = s[0] * s[1];
    let outside = m.patch_indicator::<T>().map(|v| T::one() - v);
    let contour_n = per_plane * m.contour_pixels();
    let contour = if contour_n == 0 {
        Var::scalar(T::zero())
    } else {
        (&(masked - recon).abs() * &Var::constant(outside))
            .sum()
            .mul_scalar(1.0 / contour_n as f64)
    };
    let patch = if m.patch_size == 0 {
        Var::scalar(T::zero())
    } else {
        let (t, l, p) = (m.top, m.left, m.patch_size);
        (&real.crop(t, l, p, p) - &recon.crop(t, l, p, p)).abs().mean()
    };
    AeTerms { contour, patch }
}

pub fn loss_ae<T: Elem>(masked: &Var<T>, recon: &Var<T>, real: &Var<T>, m: &MaskSpec, lambda_p: f64) -> Var<T> {
    loss_ae_terms(masked, recon, real, m).total(lambda_p)
}

/// `mean(real) − mean(fake)` of one critic branch.
pub fn critic_term<T: Elem>(real: &Var<T>, fake: &Var<T>) -> Var<T> {
    real.mean() - fake.mean()
}

/// `mean_i (‖∇D(x̃_i)‖₂ − 1)²` with `x̃_i = ε_i·real_i + (1−ε_i)·fake_i`,
/// `ε_i ~ U[0, 1)` drawn per sample from `rng`.
///
/// `critic` maps an `(N, ...)` batch to `[N]` scores with rows independent.
/// The result stays differentiable with respect to the critic's parameters.
pub fn gradient_penalty<T: Elem>(
    critic: impl Fn(&Var<T>) -> Var<T>,
    real: &Array<T>,
    fake: &Array<T>,
    rng: &mut impl Rng,
) -> Result<Var<T>> {
    if real.shape() != fake.shape() || real.rank() == 0 {
        return Err(Error::Argument(format!(
            "penalty inputs {:?} and {:?} differ",
            real.shape(),
            fake.shape()
        )));
    }
    let n = real.shape()[0];
    let per = real.len() / n.max(1);
    let eps: Vec<T> = (0..n).map(|_| T::lit(rng.random::<f64>())).collect();
    let mixed = Array::from_fn(real.shape(), |i| {
        let e = eps[i / per];
        e * real.data()[i] + (T::one() - e) * fake.data()[i]
    });
    let xt = Var::leaf(mixed);
    let score = critic(&xt);
    let g = grad(&score.sum(), &[&xt], true).remove(0);
    if !g.value().all_finite() {
        return Err(Error::Numerical("non-finite critic gradient in the penalty".into()));
    }
    let norm = g.square().sum_per_sample().sqrt();
    Ok(norm.add_scalar(-1.0).square().mean())
}

/// Loss of the side being judged: `−mean(adv_g) − mean(adv_p)`.
pub fn loss_adv_generatorside<T: Elem>(adv_g: &Var<T>, adv_p: &Var<T>) -> Var<T> {
    -(adv_g.mean() + adv_p.mean())
}

/// Mean multi-label binary cross-entropy of `sigmoid(logits)` against 0/1 bits.
pub fn loss_class<T: Elem>(logits: &Var<T>, targets: &Array<T>) -> Var<T> {
    logits.bce_with_logits(targets).mean()
}

pub fn loss_class_fake<T: Elem>(logits: &Var<T>, c_target: &Array<T>) -> Var<T> {
    loss_class(logits, c_target)
}

pub fn loss_class_real<T: Elem>(logits: &Var<T>, c_original: &Array<T>) -> Var<T> {
    loss_class(logits, c_original)
}

/// Mean absolute error between the generator input and its round trip.
pub fn loss_cycle<T: Elem>(input: &Var<T>, round_trip: &Var<T>) -> Var<T> {
    (input - round_trip).abs().mean()
}

pub fn total_rec<T: Elem>(ae: &Var<T>, adv: &Var<T>, class_fake: &Var<T>, w: &LossWeights) -> Var<T> {
    &(&ae.mul_scalar(w.lambda_ae) + adv) + &class_fake.mul_scalar(w.lambda_c)
}

pub fn total_gen<T: Elem>(adv: &Var<T>, class_fake: &Var<T>, cycle: &Var<T>, w: &LossWeights) -> Var<T> {
    &(adv + &class_fake.mul_scalar(w.lambda_c)) + &cycle.mul_scalar(w.lambda_cycle)
}

/// Per-branch critic quantities entering the critic objective.
pub struct DiscTerms<T: Elem> {
    pub critic_g: Var<T>,
    pub critic_p: Var<T>,
    pub gp_g: Var<T>,
    pub gp_p: Var<T>,
    pub class_real: Var<T>,
}

impl<T: Elem> DiscTerms<T> {
    /// `L_adv` as the critic sees it (maximized), penalties included.
    pub fn adversarial(&self, w: &LossWeights) -> Var<T> {
        &(&self.critic_g + &self.critic_p) - &(&self.gp_g + &self.gp_p).mul_scalar(w.lambda_gp)
    }
}

pub fn total_disc<T: Elem>(t: &DiscTerms<T>, w: &LossWeights) -> Var<T> {
    &(-t.adversarial(w)) + &t.class_real.mul_scalar(w.lambda_c)
}

/// One iteration's scalars. Generator fields repeat the latest generator
/// update on iterations that skip it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: u64,
    pub ae_contour: f64,
    pub ae_patch: f64,
    pub adv_g: f64,
    pub adv_p: f64,
    pub gp_g: f64,
    pub gp_p: f64,
    pub class_f: f64,
    pub class_r: f64,
    pub cycle: f64,
    pub total_rec: f64,
    pub total_gen: f64,
    pub total_disc: f64,
}

impl LossReport {
    pub fn values(&self) -> [(&'static str, f64); 12] {
        [
            ("ae_contour", self.ae_contour),
            ("ae_patch", self.ae_patch),
            ("adv_g", self.adv_g),
            ("adv_p", self.adv_p),
            ("gp_g", self.gp_g),
            ("gp_p", self.gp_p),
            ("class_f", self.class_f),
            ("class_r", self.class_r),
            ("cycle", self.cycle),
            ("total_rec", self.total_rec),
            ("total_gen", self.total_gen),
            ("total_disc", self.total_disc),
        ]
    }

    /// Name of the first non-finite field, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        self.values().into_iter().find(|(_, v)| !v.is_finite()).map(|(k, _)| k)
    }

    /// `ae_contour + λ_p · ae_patch`.
    pub fn loss_ae(&self, lambda_p: f64) -> f64 {
        self.ae_contour + lambda_p * self.ae_patch
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("plain struct serializes")
    }
}

pub fn read_jsonl(path: &Path) -> Result<Vec<LossReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::data(path, e.to_string())))
        .collect()
}

pub fn write_csv(path: &Path, reports: &[LossReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    for r in reports {
        w.serialize(r).map_err(|e| Error::data(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends one JSON object per line.
pub struct JsonlWriter {
    file: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl JsonlWriter {
    pub fn create(path: &Path, append: bool) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            file: std::io::BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, r: &LossReport) -> Result<()> {
        writeln!(self.file, "{}", r.to_json_line()).map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.file.flush().map_err(|e| Error::io(&self.path, e))
    }
}
