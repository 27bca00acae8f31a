//! Writes a procedural face set with a CelebA-style attribute file and tiles
//! the first few faces into a contact sheet.
//!
//! `cargo run -p patchwork --example fixture_faces -- [out_dir] [count] [seed]`

use std::path::PathBuf;

use patchwork::data::load_index;
use patchwork::fixture;
use patchwork::imageio;

fn main() -> patchwork::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("patchwork-faces"));
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(16);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let attr = fixture::generate(&out, n, seed)?;
    let index = load_index(&out, &attr, &fixture::attribute_names())?;
    let mut counts = [0usize; 2];
    let mut thumbs = Vec::new();
    for e in &index.entries {
        for (k, c) in counts.iter_mut().enumerate() {
            *c += e.attributes.bits()[k] as usize;
        }
        if thumbs.len() < 16 {
            let raw = imageio::load_rgb(&e.path)?;
            thumbs.push(imageio::crop_resize_rgb(&raw, 64, &e.path)?);
        }
    }
    for (name, c) in index.selected_attributes.iter().zip(counts) {
        println!("{name}: {c}/{n}");
    }
    let sheet = out.join("contact-sheet.png");
    imageio::save_png(&imageio::tile(&thumbs, 4)?, &sheet)?;
    println!("wrote {n} faces to {}, contact sheet {}", out.display(), sheet.display());
    Ok(())
}
