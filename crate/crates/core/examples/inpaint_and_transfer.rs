//! Fills the hole of a fresh procedural face and flips each attribute in
//! turn, saving one strip: original, masked, inpainted, then one column per
//! flipped attribute.
//!
//! Pass a checkpoint written by `patchwork train` to use a trained model;
//! without one a small model is trained for a few hundred iterations first,
//! which is enough to see the pipeline run but not to get good pictures.
//!
//! `cargo run --release -p patchwork --example inpaint_and_transfer -- [checkpoint.pwck] [out.png]`

use std::path::PathBuf;
use std::sync::Arc;

use patchwork::batch::{AttrBatch, AttributeCode, ImageBatch};
use patchwork::checkpoint;
use patchwork::data::{load_index, Dataset};
use patchwork::fixture::{self, FaceParams};
use patchwork::imageio;
use patchwork::masking::apply_mask;
use patchwork::metrics::{self, Pipeline};
use patchwork::networks::{ModelBundle, NetConfig};
use patchwork::trainer::{DecaySchedule, TrainConfig, Trainer};
use patchwork_autograd::Array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quick_model() -> patchwork::Result<(ModelBundle<f32>, bool)> {
    let dir = std::env::temp_dir().join("patchwork-fixture-256");
    let attr = fixture::generate(&dir, 256, 1)?;
    let index = load_index(&dir, &attr, &fixture::attribute_names())?;
    let net = NetConfig {
        image_size: 32,
        patch_size: 14,
        n_attributes: 2,
        base_channels: 8,
        n_res_blocks: 2,
    };
    let cfg = TrainConfig {
        n_iter: 300,
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
    println!("no checkpoint given; training a 32px model for {} iterations", cfg.n_iter);
    let mut t = Trainer::new(cfg, &net, Arc::new(Dataset::new(index, 32)), None)?;
    t.run(&mut ())?;
    Ok((t.state().bundle.clone(), false))
}

fn main() -> patchwork::Result<()> {
    let mut args = std::env::args().skip(1);
    let (bundle, bypass_r) = match args.next() {
        Some(p) => {
            let c = checkpoint::load(&PathBuf::from(p))?;
            let bypass = c.train_config["ablation_bypass_r"].as_bool().unwrap_or(false);
            (c.bundle, bypass)
        }
        None => quick_model()?,
    };
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("patchwork-transfer.png"));

    let size = bundle.config.image_size;
    let n_attr = bundle.config.n_attributes;
    let original = AttributeCode::from_bools(&[true, false][..n_attr.min(2)]);
    let face = FaceParams::sample(&mut ChaCha8Rng::seed_from_u64(99), true, false).render();
    let rgb = imageio::crop_resize_rgb(&face, size as u32, &out)?;
    let x = ImageBatch::new(Array::from_vec(vec![1, 3, size, size], imageio::rgb_to_chw(&rgb)).expect("image shape"))?;

    let m = bundle.config.mask();
    let pipe = Pipeline { bundle: &bundle, bypass_r };
    let masked = apply_mask(&x, &m)?;
    let inpainted = metrics::modified(&pipe, &masked, &m)?;
    let input = pipe.generator_input(&x, &m)?;

    let mut strip = vec![rgb, imageio::batch_image_to_rgb(&masked, 0)?, imageio::batch_image_to_rgb(&inpainted, 0)?];
    for k in 0..original.len() {
        let target = original.flipped(k);
        println!("attribute {k}: {} -> {}", original.to_bit_string(), target.to_bit_string());
        let y = pipe.translate(&input, &AttrBatch::new(vec![target])?)?;
        strip.push(imageio::batch_image_to_rgb(&y, 0)?);
    }
    let cols = strip.len();
    imageio::save_png(&imageio::tile(&strip, cols)?, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
