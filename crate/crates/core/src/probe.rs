//! Small supervised attribute classifier used to score attribute transfer
//! automatically. Trained on real images only and then held fixed.

use patchwork_autograd::{grad, no_grad, Adam, AdamConfig, Array, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{AttributeCode, ImageBatch};
use crate::data::{BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::metrics::AttributeClassifier;
use crate::nn::{sequential, Act, Bound, ConvSpec, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub width: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            batch_size: 32,
            lr: 2e-3,
            width: 8,
            seed: 0,
        }
    }
}

/// Three stride-2 convolutions followed by a full-extent classification conv.
pub fn probe_layout(image_size: usize, n_attributes: usize, width: usize) -> Result<Vec<ConvSpec>> {
    if image_size < 16 || !image_size.is_multiple_of(8) {
        return Err(Error::Config(format!(
            "probe needs an image size divisible by 8 and at least 16, got {image_size}"
        )));
    }
    let down = |name: &str, cin, cout| {
        ConvSpec::new(name, cin, cout, 4)
            .stride(2)
            .pad(1)
            .act(Act::Leaky(0.2))
            .he_init()
    };
    Ok(vec![
        down("probe.conv1", 3, width),
        down("probe.conv2", width, 2 * width),
        down("probe.conv3", 2 * width, 4 * width),
        ConvSpec::new("probe.out", 4 * width, n_attributes, image_size / 8).pad(0),
    ])
}

pub struct Probe {
    specs: Vec<ConvSpec>,
    params: ParamSet<f32>,
    image_size: usize,
    accuracy: Option<Vec<f64>>,
}

impl Probe {
    pub fn new(image_size: usize, n_attributes: usize, cfg: &ProbeConfig) -> Result<Self> {
        let specs = probe_layout(image_size, n_attributes, cfg.width)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut params = ParamSet::default();
        for s in &specs {
            s.init(&mut params, &mut rng);
        }
        Ok(Self {
            specs,
            params,
            image_size,
            accuracy: None,
        })
    }

    fn logits(&self, p: &Bound<f32>, x: &ImageBatch) -> Result<Var<f32>> {
        let [_, c, h, w] = x.shape();
        if c != 3 || h != self.image_size || w != self.image_size {
            return Err(Error::Argument(format!(
                "probe expects 3x{0}x{0} images, got {c}x{h}x{w}",
                self.image_size
            )));
        }
        let y = sequential(&self.specs, p, &Var::constant(x.cast()));
        let n = y.shape()[0];
        Ok(y.reshape(&[n, y.shape()[1]]))
    }

    /// Fits on `train` with BCE and records per-attribute accuracy on `test`.
    pub fn fit(train: &Dataset, test: &Dataset, cfg: &ProbeConfig) -> Result<Self> {
        let n_attr = train.index().selected_attributes.len();
        if n_attr == 0 {
            return Err(Error::Config("probe needs at least one attribute".into()));
        }
        let mut probe = Self::new(train.image_size(), n_attr, cfg)?;
        let mut sampler = BatchSampler::new(train.len(), cfg.seed)?;
        let mut opt = Adam::new(AdamConfig::default(), probe.params.values());
        for _ in 0..cfg.iterations {
            let (x, attrs) = train.gather(&sampler.next_indices(cfg.batch_size))?;
            let p = Bound::trainable(&probe.params);
            let loss = probe.logits(&p, &x)?.bce_with_logits(&attrs.to_array()).mean();
            let wrt: Vec<&Var<f32>> = p.vars().iter().collect();
            let grads: Vec<Array<f32>> = grad(&loss, &wrt, false).into_iter().map(|g| g.value().clone()).collect();
            opt.step(probe.params.values_mut(), &grads, cfg.lr);
        }
        probe.accuracy = Some(probe.measure(test)?);
        Ok(probe)
    }

    /// Per-attribute fraction of correct predictions.
    pub fn measure(&self, data: &Dataset) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::Argument("empty evaluation set".into()));
        }
        let n_attr = data.index().selected_attributes.len();
        let mut hits = vec![0usize; n_attr];
        for part in data.chunks(64) {
            let (x, attrs) = part?;
            for (pred, truth) in self.classify(&x)?.iter().zip(attrs.codes()) {
                for (k, h) in hits.iter_mut().enumerate() {
                    *h += (pred.get(k) == truth.get(k)) as usize;
                }
            }
        }
        Ok(hits.iter().map(|&h| h as f64 / data.len() as f64).collect())
    }

    fn classify(&self, x: &ImageBatch) -> Result<Vec<AttributeCode>> {
        let _g = no_grad();
        let logits = self.logits(&Bound::frozen(&self.params), x)?;
        let v = logits.value();
        let a = v.shape()[1];
        Ok(v
            .data()
            .chunks(a)
            .map(|row| AttributeCode::from_bools(&row.iter().map(|&l| l > 0.0).collect::<Vec<_>>()))
            .collect())
    }
}

impl AttributeClassifier for Probe {
    fn accuracy(&self) -> Option<&[f64]> {
        self.accuracy.as_deref()
    }

    fn predict(&self, x: &ImageBatch) -> Result<Vec<AttributeCode>> {
        self.classify(x)
    }
}
