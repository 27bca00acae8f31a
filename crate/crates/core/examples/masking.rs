//! Cuts the centered hole out of a procedural face, saves the masked image
//! and the extracted patch, and checks that composing them restores the
//! original bit for bit.
//!
//! `cargo run -p patchwork --example masking -- [out_dir] [image_size]`

use std::path::PathBuf;

use patchwork::batch::ImageBatch;
use patchwork::fixture::FaceParams;
use patchwork::imageio;
use patchwork::masking::{apply_mask, centered_mask, compose_modified, extract_patch};
use patchwork_autograd::Array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("patchwork-masking"));
    let size: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(128);
    std::fs::create_dir_all(&out)?;

    let face = FaceParams::sample(&mut ChaCha8Rng::seed_from_u64(5), true, true).render();
    let rgb = imageio::crop_resize_rgb(&face, size as u32, &out)?;
    let x = ImageBatch::new(Array::from_vec(vec![1, 3, size, size], imageio::rgb_to_chw(&rgb))?)?;

    // the hole keeps the reference 52/128 proportion
    let m = centered_mask(size, size * 52 / 128)?;
    println!(
        "{size}px image, {}px hole at ({}, {}): {} patch and {} contour pixels",
        m.patch_size,
        m.top,
        m.left,
        m.patch_pixels(),
        m.contour_pixels()
    );

    let masked = apply_mask(&x, &m)?;
    let patch = extract_patch(&x, &m)?;
    let restored = compose_modified(&masked, &patch, &m)?;
    assert_eq!(restored, x);
    println!("masked + patch reassembles the original exactly");

    for (name, img) in [("original", &x), ("masked", &masked), ("patch", &patch)] {
        let path = out.join(format!("{name}.png"));
        imageio::save_png(&imageio::batch_image_to_rgb(img, 0)?, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
