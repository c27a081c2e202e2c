//! Small generated dataset in the on-disk layout: five environments, six
//! classes, two images each. Every class is a distinct geometric pattern and
//! every environment a distinct background tint.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::imageio::{write_ppm, RgbImage};
use crate::error::{Error, Result};

pub const ENVIRONMENTS: u32 = 5;
pub const IMAGES_PER_CLASS: usize = 2;

/// Raw class directory for image `i` of mapped class `class` under the
/// default label map. Two-handed steps alternate left and right.
fn raw_dir(class: usize, i: usize) -> &'static str {
    const SINGLE: [&str; 6] = ["Step1", "", "Step3", "", "", ""];
    const PAIRED: [[&str; 2]; 6] = [
        ["", ""],
        ["Step2Left", "Step2Right"],
        ["", ""],
        ["Step4Left", "Step4Right"],
        ["Step5Left", "Step5Right"],
        ["Step6Left", "Step6Right"],
    ];
    if SINGLE[class].is_empty() {
        PAIRED[class][i % 2]
    } else {
        SINGLE[class]
    }
}

/// Foreground mask of class `class` at `(y, x)`; `phase` shifts the pattern.
fn pattern(class: usize, y: usize, x: usize, size: usize, phase: usize) -> bool {
    let c = size / 2 + phase % 3;
    let (dy, dx) = (y as i64 - c as i64, x as i64 - c as i64);
    match class {
        0 => ((y + phase) / 4).is_multiple_of(2),
        1 => ((x + phase) / 4).is_multiple_of(2),
        2 => ((x + y + phase) / 4).is_multiple_of(2),
        3 => ((x + phase) / 8 + y / 8).is_multiple_of(2),
        4 => dy * dy + dx * dx <= (size as i64 * 9 / 32).pow(2),
        _ => dy.abs() <= 2 || dx.abs() <= 2,
    }
}

/// Renders image `index` of `class` in environment `env`.
pub fn render(class: usize, env: u32, index: usize, size: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((class as u64) << 32) ^ ((env as u64) << 16) ^ index as u64);
    let phase = rng.gen_range(0..4);
    let bg = [[40, 60, 90], [90, 70, 40], [50, 90, 60], [80, 80, 80], [70, 40, 80]][env as usize % 5];
    let fg = [225, 190, 160];
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let base = if pattern(class, y, x, size, phase) { fg } else { bg };
            for v in base {
                data.push((v + rng.gen_range(-12i32..=12)).clamp(0, 255) as u8);
            }
        }
    }
    RgbImage::new(size, size, data).expect("square raster")
}

/// Writes the 60 PPM files under `root` and returns their paths in write order.
pub fn generate(root: &Path, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for env in 0..ENVIRONMENTS {
        for class in 0..6 {
            for i in 0..IMAGES_PER_CLASS {
                let dir = root.join(format!("env{env}")).join(raw_dir(class, i));
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let path = dir.join(format!("c{class}e{env}_{i}.ppm"));
                write_ppm(&path, &render(class, env, i, size, seed))?;
                paths.push(path);
            }
        }
    }
    Ok(paths)
}
