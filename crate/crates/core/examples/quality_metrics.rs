//! Scores a procedural face against progressively noisier copies of itself
//! with PSNR and SSIM.
//!
//! `cargo run -p patchwork --example quality_metrics`

use patchwork::fixture::FaceParams;
use patchwork::imageio;
use patchwork::metrics::{psnr, ssim, Psnr};
use patchwork_autograd::Array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let face = FaceParams::sample(&mut rng, false, true).render();
    let rgb = imageio::crop_resize_rgb(&face, 64, std::path::Path::new("face"))?;
    let clean = Array::from_vec(
        vec![3, 64, 64],
        rgb_to_unit(&imageio::rgb_to_chw(&rgb)),
    )?;

    match psnr(&clean, &clean)? {
        Psnr::Identical => println!("identical images: PSNR undefined, SSIM {:.4}", ssim(&clean, &clean)?),
        Psnr::Db(v) => println!("unexpected finite PSNR {v}"),
    }
    println!("{:>8} {:>10} {:>8}", "sigma", "PSNR dB", "SSIM");
    for sigma in [0.01, 0.02, 0.05, 0.1, 0.2] {
        let noise = Normal::new(0.0, sigma).expect("valid sigma");
        let mut noisy = clean.clone();
        for v in noisy.data_mut() {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
        let p = psnr(&clean, &noisy)?.db().unwrap_or(f64::INFINITY);
        println!("{sigma:>8.2} {p:>10.2} {:>8.4}", ssim(&clean, &noisy)?);
    }
    Ok(())
}

/// `[-1, 1]` network range to `[0, 1]`.
fn rgb_to_unit(chw: &[f32]) -> Vec<f64> {
    chw.iter().map(|&v| (v as f64 + 1.0) / 2.0).collect()
}
