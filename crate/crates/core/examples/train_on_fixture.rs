//! Trains all three networks on a freshly generated procedural face set and
//! prints losses and throughput.
//!
//! `cargo run --release -p patchwork --example train_on_fixture -- [images] [size] [iters] [base] [batch]`

use std::sync::Arc;
use std::time::Instant;

use patchwork::data::{load_index, Dataset};
use patchwork::fixture;
use patchwork::losses::LossReport;
use patchwork::networks::NetConfig;
use patchwork::trainer::{Observer, TrainConfig, Trainer};

struct Progress {
    start: Instant,
    every: u64,
}

impl Observer for Progress {
    fn iteration_done(&mut self, r: &LossReport) {
        if r.iteration.is_multiple_of(self.every) {
            println!(
                "iter {:5}  ae {:.4}/{:.4}  disc {:8.3}  rec {:8.3}  gen {:8.3}  ({:.2}s/iter)",
                r.iteration,
                r.ae_contour,
                r.ae_patch,
                r.total_disc,
                r.total_rec,
                r.total_gen,
                self.start.elapsed().as_secs_f64() / (r.iteration + 1) as f64
            );
        }
    }
}

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> patchwork::Result<()> {
    let (images, size, iters, base, batch) = (arg(1, 64), arg(2, 32), arg(3, 50), arg(4, 8), arg(5, 8));
    let dir = std::env::temp_dir().join(format!("patchwork-fixture-{images}"));
    let attrs = fixture::generate(&dir, images, 1)?;
    let index = load_index(&dir, &attrs, &fixture::attribute_names())?;
    let net = NetConfig {
        image_size: size,
        patch_size: size * 52 / 128,
        n_attributes: 2,
        base_channels: base,
        n_res_blocks: 6,
    };
    let cfg = TrainConfig {
        n_iter: iters as u64,
        batch_size: batch,
        ..TrainConfig::default()
    };
    let dataset = Arc::new(Dataset::new(index, size));
    let mut trainer = Trainer::new(cfg, &net, dataset, None)?;
    trainer.run(&mut Progress {
        start: Instant::now(),
        every: (iters as u64 / 10).max(1),
    })?;
    Ok(())
}
