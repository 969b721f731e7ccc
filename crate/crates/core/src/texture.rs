//! Procedural sea textures and boat templates.
//!
//! The mock generation backend paints these, and the fixture writer uses them
//! to build small source datasets and training corpora without real data.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::BoundingBox;
use crate::model::{save_png, SourceImage};

/// Mid-range base colour so that `base +/- AMPLITUDE` never clips.
pub const SEA_BASE: [f64; 3] = [60.0, 110.0, 150.0];
/// Peak per-pixel deviation at roughness 1.0.
pub const AMPLITUDE: f64 = 55.0;
/// Expected mean absolute neighbour luma difference (in 0..1 units) per unit
/// roughness: uniform noise on [-1, 1] has `E|a - b| = 2/3`.
pub const ROUGHNESS_GAIN: f64 = AMPLITUDE * (2.0 / 3.0) / 255.0;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Roughness in `[0, 1)` derived from a generation seed.
pub fn roughness_from_seed(seed: u64) -> f64 {
    (splitmix64(seed) >> 11) as f64 / (1u64 << 53) as f64
}

/// Uniform per-pixel noise scaled by `roughness`, around [`SEA_BASE`].
pub fn sea_texture(width: u32, height: u32, roughness: f64, noise_seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let amp = roughness.clamp(0.0, 1.0) * AMPLITUDE;
    RgbImage::from_fn(width, height, |_, _| {
        let n: f64 = rng.random_range(-1.0..=1.0);
        Rgb(SEA_BASE.map(|c| (c + amp * n).round().clamp(0.0, 255.0) as u8))
    })
}

/// Deterministic boat pattern: white hull, dark cabin, red stripe.
pub fn boat_template(width: u32, height: u32) -> RgbImage {
    RgbImage::from_fn(width, height, |x, y| {
        let cx = width / 4..width.saturating_sub(width / 4).max(width / 4 + 1);
        let cy = height / 4..height.saturating_sub(height / 4).max(height / 4 + 1);
        if cx.contains(&x) && cy.contains(&y) {
            Rgb([40, 40, 45])
        } else if y == height / 2 {
            Rgb([200, 30, 30])
        } else {
            Rgb([235, 235, 230])
        }
    })
}

pub fn paint_boat(img: &mut RgbImage, b: &BoundingBox) {
    let boat = boat_template(b.w as u32, b.h as u32);
    image::imageops::replace(img, &boat, b.x, b.y);
}

/// Writes `count` calm-sea source images with one to three boats each and
/// returns their descriptors. Images are named `src<k>.png`.
pub fn write_fixture_sources(
    dir: &Path,
    count: usize,
    width: u32,
    height: u32,
    seed: u64,
) -> Result<Vec<SourceImage>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sources = Vec::with_capacity(count);
    for k in 0..count {
        let mut img = sea_texture(width, height, 0.05, seed.wrapping_add(k as u64));
        let n_boats = rng.random_range(1..=3);
        let boxes: Vec<BoundingBox> = (0..n_boats)
            .map(|_| {
                let w = rng.random_range(6..=(width / 4).max(7)) as i64;
                let h = rng.random_range(4..=(height / 5).max(5)) as i64;
                let x = rng.random_range(0..=(width as i64 - w));
                let y = rng.random_range(0..=(height as i64 - h));
                BoundingBox::boat(x, y, w, h)
            })
            .collect();
        for b in &boxes {
            paint_boat(&mut img, b);
        }
        let path = dir.join(format!("src{k:03}.png"));
        save_png(&img, &path)?;
        sources.push(SourceImage {
            id: format!("src{k:03}"),
            path,
            width,
            height,
            boxes,
        });
    }
    Ok(sources)
}

/// Roughness band centre for a four-level toy corpus.
pub fn level_roughness(level_index: usize, jitter: f64) -> f64 {
    (level_index as f64 + 0.5 + jitter.clamp(-0.4, 0.4)) / 4.0
}

/// Writes `per_class` textures per sea-state directory `SS1..SS4`.
pub fn write_sea_state_corpus(dir: &Path, per_class: usize, size: u32, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for level in 0..4 {
        for i in 0..per_class {
            let r = level_roughness(level, rng.random_range(-0.3..0.3));
            let img = sea_texture(size, size, r, rng.random());
            save_png(&img, &dir.join(format!("SS{}/tex{i:03}.png", level + 1)))?;
        }
    }
    Ok(())
}

/// Writes boat-template crops into `boat/` and sea-texture crops into
/// `not_boat/`.
pub fn write_checker_corpus(dir: &Path, per_class: usize, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..per_class {
        let (w, h) = (rng.random_range(12..=24), rng.random_range(8..=16));
        let mut boat = boat_template(w, h);
        // Mild per-sample variation so the class is not a single image.
        let shade: i16 = rng.random_range(-20..=20);
        for p in boat.pixels_mut() {
            for c in p.0.iter_mut() {
                *c = (*c as i16 + shade).clamp(0, 255) as u8;
            }
        }
        save_png(&boat, &dir.join(format!("boat/boat{i:03}.png")))?;
        let tex = sea_texture(w, h, rng.random_range(0.0..1.0), rng.random());
        save_png(&tex, &dir.join(format!("not_boat/sea{i:03}.png")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_is_deterministic_and_seed_sensitive() {
        assert_eq!(sea_texture(16, 16, 0.5, 3), sea_texture(16, 16, 0.5, 3));
        assert_ne!(sea_texture(16, 16, 0.5, 3), sea_texture(16, 16, 0.5, 4));
    }

    #[test]
    fn roughness_is_in_unit_interval() {
        for s in 0..1000 {
            let r = roughness_from_seed(s);
            assert!((0.0..1.0).contains(&r));
        }
    }

    #[test]
    fn fixture_boxes_are_in_image() {
        let dir = tempfile::tempdir().unwrap();
        let srcs = write_fixture_sources(dir.path(), 5, 64, 48, 1).unwrap();
        assert_eq!(srcs.len(), 5);
        for s in &srcs {
            assert!(s.has_boats());
            assert!(s.boxes.iter().all(|b| b.in_image(64, 48)));
            assert!(s.path.is_file());
        }
    }
}
