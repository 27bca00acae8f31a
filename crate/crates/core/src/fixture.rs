//! Procedural face dataset: flat-shaded ellipse faces with optional
//! eyeglasses and mustache strokes, written in CelebA layout.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageio;

pub const ATTRIBUTES: [&str; 2] = ["Eyeglasses", "Mustache"];
pub const ATTR_FILE: &str = "list_attr_celeba.txt";

pub const WIDTH: u32 = imageio::CELEBA_SOURCE_SIZE.0;
pub const HEIGHT: u32 = imageio::CELEBA_SOURCE_SIZE.1;

#[derive(Clone, Debug, PartialEq)]
pub struct FaceParams {
    pub background: [u8; 3],
    pub skin: [u8; 3],
    pub hair: [u8; 3],
    pub center: (f32, f32),
    pub radii: (f32, f32),
    pub eye_dy: f32,
    pub eye_dx: f32,
    pub mouth_dy: f32,
    pub glasses: bool,
    pub mustache: bool,
    pub glasses_color: [u8; 3],
}

const GLASSES_RADIUS: f32 = 17.0;
const GLASSES_THICKNESS: f32 = 4.5;

impl FaceParams {
    pub fn sample(rng: &mut impl Rng, glasses: bool, mustache: bool) -> Self {
        let mut jitter = |amp: f32| rng.random_range(-amp..=amp);
        let center = (89.0 + jitter(3.0), 118.0 + jitter(3.0));
        let radii = (58.0 + jitter(4.0), 72.0 + jitter(4.0));
        let eye_dy = -18.0 + jitter(2.0);
        let eye_dx = 24.0 + jitter(2.0);
        let mouth_dy = 34.0 + jitter(2.0);
        let skin_base = rng.random_range(150..=235u8);
        let skin = [
            skin_base,
            (skin_base as f32 * rng.random_range(0.72..0.85)) as u8,
            (skin_base as f32 * rng.random_range(0.55..0.72)) as u8,
        ];
        let background = [
            rng.random_range(40..=220u8),
            rng.random_range(40..=220u8),
            rng.random_range(40..=220u8),
        ];
        let hair = [
            rng.random_range(20..=120u8),
            rng.random_range(15..=80u8),
            rng.random_range(10..=60u8),
        ];
        let g = rng.random_range(0..=40u8);
        Self {
            background,
            skin,
            hair,
            center,
            radii,
            eye_dy,
            eye_dx,
            mouth_dy,
            glasses,
            mustache,
            glasses_color: [g, g, g],
        }
    }

    fn eyes(&self) -> [(f32, f32); 2] {
        let (cx, cy) = self.center;
        [
            (cx - self.eye_dx, cy + self.eye_dy),
            (cx + self.eye_dx, cy + self.eye_dy),
        ]
    }

    /// Color at canvas point `(x, y)`.
    fn shade(&self, x: f32, y: f32) -> [u8; 3] {
        let (cx, cy) = self.center;
        let (rx, ry) = self.radii;
        let face = ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2);
        let hair = ((x - cx) / (rx + 8.0)).powi(2) + ((y - cy + 14.0) / (ry + 6.0)).powi(2);

        if self.glasses {
            let [l, r] = self.eyes();
            for (ex, ey) in [l, r] {
                let d = ((x - ex).powi(2) + (y - ey).powi(2)).sqrt();
                if (d - GLASSES_RADIUS).abs() < GLASSES_THICKNESS / 2.0 {
                    return self.glasses_color;
                }
            }
            let bridge = (y - l.1).abs() < GLASSES_THICKNESS / 2.0;
            if bridge && x > l.0 + GLASSES_RADIUS && x < r.0 - GLASSES_RADIUS {
                return self.glasses_color;
            }
            // temple arms reaching the face outline
            if bridge && face <= 1.0 && (x < l.0 - GLASSES_RADIUS || x > r.0 + GLASSES_RADIUS) {
                return self.glasses_color;
            }
        }

        if face > 1.0 {
            return if hair <= 1.0 && y < cy { self.hair } else { self.background };
        }
        for (ex, ey) in self.eyes() {
            if ((x - ex) / 7.0).powi(2) + ((y - ey) / 4.5).powi(2) <= 1.0 {
                return [30, 25, 20];
            }
        }
        let (mx, my) = (cx, cy + self.mouth_dy);
        if ((x - mx) / 17.0).powi(2) + ((y - my) / 4.0).powi(2) <= 1.0 {
            return [150, 40, 50];
        }
        if self.mustache {
            let top = my - 15.0;
            let half = 48.0 - (y - top).abs() * 0.8;
            if y >= top && y <= my - 5.0 && (x - mx).abs() <= half {
                return self.hair;
            }
        }
        // nose
        if ((x - cx) / 5.0).powi(2) + ((y - cy - 6.0) / 9.0).powi(2) <= 1.0 {
            return self.skin.map(|c| (c as f32 * 0.85) as u8);
        }
        self.skin
    }

    /// Renders at the raw CelebA canvas size, 2×2 supersampled.
    pub fn render(&self) -> RgbImage {
        RgbImage::from_fn(WIDTH, HEIGHT, |px, py| {
            let mut acc = [0u32; 3];
            for (ox, oy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let c = self.shade(px as f32 + ox, py as f32 + oy);
                for k in 0..3 {
                    acc[k] += c[k] as u32;
                }
            }
            Rgb(acc.map(|v| ((v + 2) / 4) as u8))
        })
    }
}

/// Writes `n` faces as `000000.png ...` plus an attribute file into
/// `out_dir`; byte-identical for a fixed `(n, seed)`. Returns the attribute
/// file path.
pub fn generate(out_dir: &Path, n: usize, seed: u64) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attr = format!("{n}\n{}\n", ATTRIBUTES.join(" "));
    for i in 0..n {
        let glasses = rng.random_bool(0.5);
        let mustache = rng.random_bool(0.5);
        let face = FaceParams::sample(&mut rng, glasses, mustache);
        let name = format!("{i:06}.png");
        imageio::save_png(&face.render(), &out_dir.join(&name))?;
        let flag = |b: bool| if b { " 1" } else { " -1" };
        attr.push_str(&name);
        attr.push_str(flag(glasses));
        attr.push_str(flag(mustache));
        attr.push('\n');
    }
    let path = out_dir.join(ATTR_FILE);
    std::fs::write(&path, attr).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn attribute_names() -> Vec<String> {
    ATTRIBUTES.iter().map(|s| s.to_string()).collect()
}
