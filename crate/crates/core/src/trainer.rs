//! Joint training of critic, reconstructor and generator.
//!
//! Each iteration `i` (from 0):
//!
//! 1. draw real images `x` with labels `c_orig`, mask them to `x̄`, and pick
//!    `c_target` by flipping one random attribute per row;
//! 2. critic step on `L_disc`, fakes being `x′ = G(input, c_target)`;
//! 3. reconstructor step on `L_rec`, judged on `x̂ = x̄ ⊙ (1−M) + R(x̄) ⊙ M`;
//! 4. when `i % n_gen == 0`, generator step on `L_gen`.
//!
//! The generator input is the real batch while `i < th_disc` and `x̂` from
//! the current R afterwards; with `ablation_bypass_r` it is `x̄` throughout.
//! Each step only updates its own network; the others enter as constants.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use patchwork_autograd::{grad, no_grad, Adam, AdamConfig, Array, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{AttrBatch, ImageBatch};
use crate::checkpoint::{self, Checkpoint, GenScalars, RngState};
use crate::data::{next_batch, BatchSampler, Dataset, Prefetcher, SamplerState};
use crate::error::{Error, Result};
use crate::losses::{self, DiscTerms, JsonlWriter, LossReport, LossWeights};
use crate::masking::{apply_mask, compose_modified, compose_modified_var, extract_patch};
use crate::networks::{self, init_bundle, ModelBundle, NetConfig};
use crate::nn::Bound;

/// Learning rate is constant for `constant_epochs`, then falls linearly to
/// zero over `decay_epochs` (floored at [`MIN_LR`]).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub constant_epochs: f64,
    pub decay_epochs: f64,
}

impl Default for DecaySchedule {
    fn default() -> Self {
        Self {
            constant_epochs: 10.0,
            decay_epochs: 10.0,
        }
    }
}

pub const MIN_LR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_iter: u64,
    /// Iteration at which the generator starts consuming `x̂`; `n_iter / 4`
    /// when unset.
    pub th_disc: Option<u64>,
    pub batch_size: usize,
    pub n_gen: u64,
    pub lr_r: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weights: LossWeights,
    pub decay: DecaySchedule,
    pub seed: u64,
    pub ablation_bypass_r: bool,
    /// Write a checkpoint every this many iterations; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Batches decoded ahead on a worker thread; 0 decodes inline.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_iter: 200_000,
            th_disc: None,
            batch_size: 16,
            n_gen: 5,
            lr_r: 1e-4,
            lr_g: 1e-4,
            lr_d: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            weights: LossWeights::default(),
            decay: DecaySchedule::default(),
            seed: 0,
            ablation_bypass_r: false,
            checkpoint_every: 10_000,
            prefetch: 2,
        }
    }
}

impl TrainConfig {
    pub fn th_disc(&self) -> u64 {
        self.th_disc.unwrap_or(self.n_iter / 4)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_gen < 1 {
            return fail("n_gen must be at least 1".into());
        }
        if self.th_disc() > self.n_iter {
            return fail(format!("th_disc {} exceeds n_iter {}", self.th_disc(), self.n_iter));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        for (name, lr) in [("lr_r", self.lr_r), ("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{name} must be positive, got {lr}"));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.decay.constant_epochs < 0.0 || self.decay.decay_epochs < 0.0 {
            return fail("decay epochs must be nonnegative".into());
        }
        self.weights.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: 1e-8,
        }
    }
}

/// Iterations per epoch: `ceil(train_len / batch_size)`.
pub fn epoch_len(train_len: usize, batch_size: usize) -> u64 {
    train_len.div_ceil(batch_size.max(1)).max(1) as u64
}

/// Scheduled learning rate for base rate `base` at `iteration`.
pub fn lr_at(iteration: u64, base: f64, schedule: &DecaySchedule, epoch_len: u64) -> f64 {
    let e = epoch_len as f64;
    let start = schedule.constant_epochs * e;
    let span = schedule.decay_epochs * e;
    let t = iteration as f64;
    if t < start {
        return base;
    }
    if span <= 0.0 {
        return MIN_LR;
    }
    (base * (1.0 - (t - start) / span)).max(MIN_LR)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Network {
    Critic,
    Reconstructor,
    Generator,
}

/// Where the generator's input batch came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenInput {
    Real,
    Modified,
    Masked,
}

/// Instrumentation of one generator step.
pub struct GenStepView<'a> {
    pub iteration: u64,
    pub source: GenInput,
    pub input: &'a ImageBatch,
    pub real: &'a ImageBatch,
    pub modified: &'a ImageBatch,
}

/// Hooks called by the training loop. All methods default to no-ops.
pub trait Observer {
    fn after_update(&mut self, _iteration: u64, _network: Network, _bundle: &ModelBundle<f32>) {}
    fn generator_input(&mut self, _view: &GenStepView<'_>) {}
    fn iteration_done(&mut self, _report: &LossReport) {}
}

impl Observer for () {}

/// Counts updates per network and records generator input sources.
#[derive(Clone, Debug, Default)]
pub struct UpdateCounter {
    pub critic: u64,
    pub reconstructor: u64,
    pub generator: u64,
    pub sources: Vec<(u64, GenInput)>,
}

impl Observer for UpdateCounter {
    fn after_update(&mut self, _iteration: u64, network: Network, _bundle: &ModelBundle<f32>) {
        match network {
            Network::Critic => self.critic += 1,
            Network::Reconstructor => self.reconstructor += 1,
            Network::Generator => self.generator += 1,
        }
    }
    fn generator_input(&mut self, view: &GenStepView<'_>) {
        self.sources.push((view.iteration, view.source));
    }
}

/// Everything needed to continue training bit-exactly.
pub struct TrainState {
    pub iteration: u64,
    pub bundle: ModelBundle<f32>,
    opt: [Adam<f32>; 3],
    rng: ChaCha8Rng,
    sampler: SamplerState,
    gen: GenScalars,
}

impl TrainState {
    pub fn fresh(cfg: &TrainConfig, net: &NetConfig) -> Result<Self> {
        let bundle = init_bundle::<f32>(net, cfg.seed)?;
        let a = cfg.adam();
        let opt = [
            Adam::new(a, bundle.r.values()),
            Adam::new(a, bundle.g.values()),
            Adam::new(a, bundle.d.values()),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(3);
        Ok(Self {
            iteration: 0,
            bundle,
            opt,
            rng,
            sampler: SamplerState::default(),
            gen: GenScalars::default(),
        })
    }

    pub fn from_checkpoint(cfg: &TrainConfig, c: Checkpoint) -> Self {
        let mut rng = ChaCha8Rng::from_seed(c.rng.seed);
        rng.set_stream(c.rng.stream);
        rng.set_word_pos(c.rng.word_pos);
        let [r, g, d] = c.adam;
        let a = cfg.adam();
        let wrap = |state| Adam { config: a, state };
        Self {
            iteration: c.iteration,
            bundle: c.bundle,
            opt: [wrap(r), wrap(g), wrap(d)],
            rng,
            sampler: c.sampler,
            gen: c.gen,
        }
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig, attributes: &[String]) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            bundle: self.bundle.clone(),
            adam: [
                self.opt[0].state.clone(),
                self.opt[1].state.clone(),
                self.opt[2].state.clone(),
            ],
            rng: RngState {
                seed: self.rng.get_seed(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos(),
            },
            sampler: self.sampler,
            gen: self.gen,
            attributes: attributes.to_vec(),
            train_config: serde_json::to_value(cfg).expect("config serializes"),
        }
    }

    pub fn sampler_state(&self) -> SamplerState {
        self.sampler
    }
}

/// Output files of a run.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }
    pub fn loss_log(&self) -> PathBuf {
        self.dir.join("losses.jsonl")
    }
    pub fn checkpoint_dir(&self) -> PathBuf {
        self.dir.join("checkpoints")
    }
    pub fn checkpoint(&self, iteration: u64) -> PathBuf {
        self.checkpoint_dir().join(format!("iter-{iteration:08}.pwck"))
    }
    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoint_dir().join("final.pwck")
    }
}

enum Source {
    Inline(BatchSampler),
    Prefetch(Prefetcher),
}

pub struct Trainer {
    cfg: TrainConfig,
    dataset: Arc<Dataset>,
    state: TrainState,
    source: Source,
    epoch_len: u64,
    out: Option<(RunPaths, JsonlWriter)>,
    last_checkpoint: Option<PathBuf>,
    reports: Vec<LossReport>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, net: &NetConfig, dataset: Arc<Dataset>, out: Option<&Path>) -> Result<Self> {
        let state = TrainState::fresh(&cfg, net)?;
        Self::with_state(cfg, dataset, state, out, false)
    }

    /// Continues from a checkpoint; the loss log is appended to.
    pub fn resume(cfg: TrainConfig, dataset: Arc<Dataset>, checkpoint: &Path, out: Option<&Path>) -> Result<Self> {
        let c = checkpoint::load(checkpoint)?;
        let state = TrainState::from_checkpoint(&cfg, c);
        let mut t = Self::with_state(cfg, dataset, state, out, true)?;
        t.last_checkpoint = Some(checkpoint.to_path_buf());
        Ok(t)
    }

    fn with_state(
        cfg: TrainConfig,
        dataset: Arc<Dataset>,
        state: TrainState,
        out: Option<&Path>,
        append: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        let net = &state.bundle.config;
        if dataset.image_size() != net.image_size {
            return Err(Error::Config(format!(
                "dataset resolution {} does not match image_size {}",
                dataset.image_size(),
                net.image_size
            )));
        }
        if dataset.index().selected_attributes.len() != net.n_attributes {
            return Err(Error::Config(format!(
                "{} selected attributes but n_attributes = {}",
                dataset.index().selected_attributes.len(),
                net.n_attributes
            )));
        }
        let sampler = BatchSampler::resume(dataset.len(), cfg.seed, state.sampler)?;
        let source = if cfg.prefetch > 0 {
            Source::Prefetch(Prefetcher::spawn(Arc::clone(&dataset), sampler, cfg.batch_size, cfg.prefetch))
        } else {
            Source::Inline(sampler)
        };
        let out = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let paths = RunPaths::new(dir);
                let log = JsonlWriter::create(&paths.loss_log(), append)?;
                Some((paths, log))
            }
            None => None,
        };
        Ok(Self {
            epoch_len: epoch_len(dataset.len(), cfg.batch_size),
            cfg,
            dataset,
            state,
            source,
            out,
            last_checkpoint: None,
            reports: Vec::new(),
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn reports(&self) -> &[LossReport] {
        &self.reports
    }

    pub fn last_checkpoint(&self) -> Option<&Path> {
        self.last_checkpoint.as_deref()
    }

    fn next_batch(&mut self) -> Result<(ImageBatch, AttrBatch)> {
        match &mut self.source {
            Source::Inline(s) => {
                let b = next_batch(&self.dataset, s, self.cfg.batch_size)?;
                self.state.sampler = s.state();
                Ok(b)
            }
            Source::Prefetch(p) => {
                let b = p.recv()?;
                self.state.sampler = b.state_after;
                Ok((b.images, b.attrs))
            }
        }
    }

    pub fn save_checkpoint(&mut self, path: &Path) -> Result<()> {
        let c = self
            .state
            .to_checkpoint(&self.cfg, &self.dataset.index().selected_attributes);
        checkpoint::save(&c, path)?;
        self.last_checkpoint = Some(path.to_path_buf());
        Ok(())
    }

    fn abort(&self, reason: String) -> Error {
        Error::Aborted {
            iteration: self.state.iteration,
            reason,
            last_checkpoint: self
                .last_checkpoint
                .as_ref()
                .map_or_else(|| "none".to_string(), |p| p.display().to_string()),
        }
    }

    /// Runs until `n_iter` iterations have completed, then writes the final
    /// checkpoint (when an output directory is set).
    pub fn run(&mut self, observer: &mut dyn Observer) -> Result<()> {
        self.run_until(self.cfg.n_iter, observer)?;
        if let Some((paths, log)) = &mut self.out {
            log.flush()?;
            let p = paths.final_checkpoint();
            self.save_checkpoint(&p)?;
        }
        Ok(())
    }

    /// Runs until `target` iterations have completed (without the final checkpoint).
    pub fn run_until(&mut self, target: u64, observer: &mut dyn Observer) -> Result<()> {
        while self.state.iteration < target.min(self.cfg.n_iter) {
            let report = match self.step(observer) {
                Ok(r) => r,
                Err(Error::Numerical(m)) => return Err(self.abort(m)),
                Err(e) => return Err(e),
            };
            if let Some(k) = report.non_finite() {
                return Err(self.abort(format!("non-finite {k}")));
            }
            if let Some((_, log)) = &mut self.out {
                log.write(&report)?;
            }
            observer.iteration_done(&report);
            self.reports.push(report);
            self.state.iteration += 1;
            let every = self.cfg.checkpoint_every;
            if every > 0 && self.state.iteration.is_multiple_of(every) {
                if let Some((paths, log)) = &mut self.out {
                    log.flush()?;
                    let p = paths.checkpoint(self.state.iteration);
                    self.save_checkpoint(&p)?;
                }
            }
        }
        if let Some((_, log)) = &mut self.out {
            log.flush()?;
        }
        Ok(())
    }

    fn step(&mut self, observer: &mut dyn Observer) -> Result<LossReport> {
        let i = self.state.iteration;
        let (x, attrs) = self.next_batch()?;
        let net = self.state.bundle.config.clone();
        let m = net.mask();
        let w = self.cfg.weights;
        let masked = apply_mask(&x, &m)?;
        let c_orig: Array<f32> = attrs.to_array();
        let c_target = self.flip_one(&attrs);

        let x_var = Var::constant(x.cast::<f32>());
        let masked_var = Var::constant(masked.cast::<f32>());
        let use_modified = i >= self.cfg.th_disc();

        // critic
        let fake = {
            let _g = no_grad();
            let gin = if self.cfg.ablation_bypass_r {
                masked_var.clone()
            } else if use_modified {
                let recon = networks::reconstruct(&net, &Bound::frozen(&self.state.bundle.r), &masked_var);
                compose_modified_var(&masked_var, &recon, &m)
            } else {
                x_var.clone()
            };
            networks::translate(&net, &Bound::frozen(&self.state.bundle.g), &gin, &c_target)
                .value()
                .clone()
        };
        let (disc, terms) = {
            let d = Bound::trainable(&self.state.bundle.d);
            let real_out = networks::discriminate(&net, &d, &x_var);
            let fake_out = networks::discriminate(&net, &d, &Var::constant(fake.clone()));
            let crop = |a: &Array<f32>| {
                Var::constant(a.clone())
                    .crop(m.top, m.left, m.patch_size, m.patch_size)
                    .value()
                    .clone()
            };
            let gp_g = losses::gradient_penalty(
                |v| networks::critic_global(&net, &d, v),
                x_var.value(),
                &fake,
                &mut self.state.rng,
            )?;
            let gp_p = losses::gradient_penalty(
                |v| networks::critic_patch(&net, &d, v),
                &crop(x_var.value()),
                &crop(&fake),
                &mut self.state.rng,
            )?;
            let terms = DiscTerms {
                critic_g: losses::critic_term(&real_out.adv_g, &fake_out.adv_g),
                critic_p: losses::critic_term(&real_out.adv_p, &fake_out.adv_p),
                gp_g,
                gp_p,
                class_real: losses::loss_class_real(&real_out.logits, &c_orig),
            };
            let total = losses::total_disc(&terms, &w);
            let grads = self.grads(&total, &d)?;
            let lr = lr_at(i, self.cfg.lr_d, &self.cfg.decay, self.epoch_len);
            self.state.opt[2].step(self.state.bundle.d.values_mut(), &grads, lr);
            let scalars = [&terms.critic_g, &terms.critic_p, &terms.gp_g, &terms.gp_p, &terms.class_real]
                .map(|v| v.item() as f64);
            (total.item() as f64, scalars)
        };
        observer.after_update(i, Network::Critic, &self.state.bundle);

        // reconstructor
        let (rec, ae) = {
            let r = Bound::trainable(&self.state.bundle.r);
            let d = Bound::frozen(&self.state.bundle.d);
            let recon = networks::reconstruct(&net, &r, &masked_var);
            let modified = compose_modified_var(&masked_var, &recon, &m);
            let ae = losses::loss_ae_terms(&masked_var, &recon, &x_var, &m);
            let out = networks::discriminate(&net, &d, &modified);
            let adv = losses::loss_adv_generatorside(&out.adv_g, &out.adv_p);
            let class = losses::loss_class_fake(&out.logits, &c_orig);
            let total = losses::total_rec(&ae.total(w.lambda_p), &adv, &class, &w);
            let grads = self.grads(&total, &r)?;
            let lr = lr_at(i, self.cfg.lr_r, &self.cfg.decay, self.epoch_len);
            self.state.opt[0].step(self.state.bundle.r.values_mut(), &grads, lr);
            (total.item() as f64, (ae.contour.item() as f64, ae.patch.item() as f64))
        };
        observer.after_update(i, Network::Reconstructor, &self.state.bundle);

        // generator
        if i.is_multiple_of(self.cfg.n_gen) {
            let modified = {
                let _g = no_grad();
                let recon = networks::reconstruct(&net, &Bound::frozen(&self.state.bundle.r), &masked_var);
                let patch = extract_patch(&ImageBatch::from_clamped(recon.value().clone())?, &m)?;
                compose_modified(&masked, &patch, &m)?
            };
            let (source, input) = if self.cfg.ablation_bypass_r {
                (GenInput::Masked, masked.clone())
            } else if use_modified {
                (GenInput::Modified, modified.clone())
            } else {
                (GenInput::Real, x.clone())
            };
            observer.generator_input(&GenStepView {
                iteration: i,
                source,
                input: &input,
                real: &x,
                modified: &modified,
            });
            let g = Bound::trainable(&self.state.bundle.g);
            let d = Bound::frozen(&self.state.bundle.d);
            let gin = Var::constant(input.cast::<f32>());
            let translated = networks::translate(&net, &g, &gin, &c_target);
            let round_trip = networks::translate(&net, &g, &translated, &c_orig);
            let out = networks::discriminate(&net, &d, &translated);
            let adv = losses::loss_adv_generatorside(&out.adv_g, &out.adv_p);
            let class = losses::loss_class_fake(&out.logits, &c_target);
            let cycle = losses::loss_cycle(&gin, &round_trip);
            let total = losses::total_gen(&adv, &class, &cycle, &w);
            let grads = self.grads(&total, &g)?;
            let lr = lr_at(i, self.cfg.lr_g, &self.cfg.decay, self.epoch_len);
            self.state.opt[1].step(self.state.bundle.g.values_mut(), &grads, lr);
            self.state.gen = GenScalars {
                class_f: class.item() as f64,
                cycle: cycle.item() as f64,
                total_gen: total.item() as f64,
            };
            observer.after_update(i, Network::Generator, &self.state.bundle);
        }

        Ok(LossReport {
            iteration: i,
            ae_contour: ae.0,
            ae_patch: ae.1,
            adv_g: terms[0],
            adv_p: terms[1],
            gp_g: terms[2],
            gp_p: terms[3],
            class_f: self.state.gen.class_f,
            class_r: terms[4],
            cycle: self.state.gen.cycle,
            total_rec: rec,
            total_gen: self.state.gen.total_gen,
            total_disc: disc,
        })
    }

    fn grads(&self, loss: &Var<f32>, params: &Bound<f32>) -> Result<Vec<Array<f32>>> {
        if !loss.item().is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {}", loss.item())));
        }
        let wrt: Vec<&Var<f32>> = params.vars().iter().collect();
        let g: Vec<Array<f32>> = grad(loss, &wrt, false).into_iter().map(|v| v.value().clone()).collect();
        if !g.iter().all(Array::all_finite) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        Ok(g)
    }

    /// Target codes: one uniformly chosen attribute inverted per row.
    fn flip_one(&mut self, attrs: &AttrBatch) -> Array<f32> {
        let a = attrs.n_attributes();
        let flipped = attrs.map(|c| {
            if a == 0 {
                c.clone()
            } else {
                c.flipped(self.state.rng.random_range(0..a))
            }
        });
        flipped.to_array()
    }
}

/// Convenience wrapper: fresh run over `dataset`, returning the trainer.
pub fn train(
    cfg: TrainConfig,
    net: &NetConfig,
    dataset: Arc<Dataset>,
    out: Option<&Path>,
    observer: &mut dyn Observer,
) -> Result<Trainer> {
    let mut t = Trainer::new(cfg, net, dataset, out)?;
    t.run(observer)?;
    Ok(t)
}
