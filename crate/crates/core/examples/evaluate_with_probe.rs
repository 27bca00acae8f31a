//! Trains an attribute probe on procedural faces, trains a small model, and
//! prints the evaluation report: PSNR and SSIM against the masked baseline
//! plus probe-judged flip rates in both directions.
//!
//! `cargo run --release -p patchwork --example evaluate_with_probe -- [iterations]`

use std::sync::Arc;

use patchwork::data::{load_index, split, Dataset};
use patchwork::fixture;
use patchwork::metrics::{evaluate, AttributeClassifier, Pipeline};
use patchwork::networks::NetConfig;
use patchwork::probe::{Probe, ProbeConfig};
use patchwork::trainer::{DecaySchedule, TrainConfig, Trainer};

fn main() -> patchwork::Result<()> {
    let iters: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let dir = std::env::temp_dir().join("patchwork-fixture-600");
    let attr = fixture::generate(&dir, 600, 3)?;
    let index = load_index(&dir, &attr, &fixture::attribute_names())?;
    let (train, test) = split(&index, 100, 3)?;
    let size = 32;
    let train = Arc::new(Dataset::new(train, size));
    let test = Dataset::new(test, size);

    let probe = Probe::fit(&train, &test, &ProbeConfig::default())?;
    println!("probe accuracy on held-out faces: {:?}", probe.accuracy());

    let net = NetConfig {
        image_size: size,
        patch_size: 14,
        n_attributes: 2,
        base_channels: 8,
        n_res_blocks: 2,
    };
    let cfg = TrainConfig {
        n_iter: iters,
        batch_size: 8,
        lr_r: 3e-4,
        lr_g: 3e-4,
        lr_d: 3e-4,
        decay: DecaySchedule {
            constant_epochs: 20.0,
            decay_epochs: 10.0,
        },
        checkpoint_every: 0,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(cfg, &net, train, None)?;
    t.run(&mut ())?;
    let pipe = Pipeline {
        bundle: &t.state().bundle,
        bypass_r: false,
    };
    let report = evaluate(&pipe, Some(&probe), &test, 32)?;
    println!("{}", report.to_markdown());
    Ok(())
}
