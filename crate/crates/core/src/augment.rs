//! Seeded geometric and color augmentation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
    /// Maximum horizontal shift as a fraction of the width.
    pub width_shift_frac: f64,
    pub scale_range: (f64, f64),
    pub hflip_prob: f64,
    pub contrast_range: (f64, f64),
    pub brightness_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_deg: 15.0,
            width_shift_frac: 0.1,
            scale_range: (0.9, 1.1),
            hflip_prob: 0.5,
            contrast_range: (0.7, 1.3),
            brightness_range: (0.7, 1.3),
            seed: 0,
        }
    }
}

/// One sample's transform parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub rotation_deg: f64,
    /// Horizontal shift in pixels (positive moves content right).
    pub shift_px: f64,
    pub scale: f64,
    pub flip: bool,
    pub contrast: f64,
    pub brightness: f64,
}

impl Draw {
    pub const IDENTITY: Draw = Draw {
        rotation_deg: 0.0,
        shift_px: 0.0,
        scale: 1.0,
        flip: false,
        contrast: 1.0,
        brightness: 1.0,
    };
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

impl AugmentConfig {
    /// A configuration whose every draw is the identity.
    pub fn identity(seed: u64) -> Self {
        AugmentConfig {
            rotation_deg: 0.0,
            width_shift_frac: 0.0,
            scale_range: (1.0, 1.0),
            hflip_prob: 0.0,
            contrast_range: (1.0, 1.0),
            brightness_range: (1.0, 1.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("augment: invalid {what}")));
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi && hi.is_finite();
        if !(self.rotation_deg >= 0.0 && self.rotation_deg <= 180.0) {
            return bad("rotation_deg");
        }
        if !(0.0..=1.0).contains(&self.width_shift_frac) {
            return bad("width_shift_frac");
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return bad("hflip_prob");
        }
        if !range_ok(self.scale_range) {
            return bad("scale_range");
        }
        if !range_ok(self.contrast_range) {
            return bad("contrast_range");
        }
        if !range_ok(self.brightness_range) {
            return bad("brightness_range");
        }
        Ok(())
    }

    /// Draws every field in a fixed order so the stream position never
    /// depends on the configuration.
    pub fn sample(&self, width: usize, rng: &mut ChaCha8Rng) -> Draw {
        let r = self.rotation_deg;
        let s = self.width_shift_frac * width as f64;
        Draw {
            rotation_deg: uniform(rng, -r, r),
            shift_px: uniform(rng, -s, s),
            scale: uniform(rng, self.scale_range.0, self.scale_range.1),
            flip: rng.gen::<f64>() < self.hflip_prob,
            contrast: uniform(rng, self.contrast_range.0, self.contrast_range.1),
            brightness: uniform(rng, self.brightness_range.0, self.brightness_range.1),
        }
    }

    /// Deterministic generator for one sample of one batch.
    pub fn sample_rng(&self, epoch: usize, batch_index: usize, sample_index: usize) -> ChaCha8Rng {
        let mut h = self.seed;
        for v in [epoch as u64, batch_index as u64, sample_index as u64] {
            h = splitmix64(h ^ splitmix64(v));
        }
        ChaCha8Rng::seed_from_u64(h)
    }

    /// `augment.*` entries in run-config syntax.
    pub fn to_config_lines(&self) -> String {
        let pair = |(a, b): (f64, f64)| format!("{a}, {b}");
        format!(
            "augment.rotation_deg = {}\naugment.width_shift_frac = {}\naugment.scale_range = {}\n\
             augment.hflip_prob = {}\naugment.contrast_range = {}\naugment.brightness_range = {}\naugment.seed = {}\n",
            self.rotation_deg,
            self.width_shift_frac,
            pair(self.scale_range),
            self.hflip_prob,
            pair(self.contrast_range),
            pair(self.brightness_range),
            self.seed
        )
    }

    /// Reads `augment.*` keys, falling back to `self` for absent ones.
    pub fn overridden_by(&self, cfg: &RunConfig) -> Result<Self> {
        let out = AugmentConfig {
            rotation_deg: cfg.get_or("augment.rotation_deg", self.rotation_deg)?,
            width_shift_frac: cfg.get_or("augment.width_shift_frac", self.width_shift_frac)?,
            scale_range: cfg.pair_or("augment.scale_range", self.scale_range)?,
            hflip_prob: cfg.get_or("augment.hflip_prob", self.hflip_prob)?,
            contrast_range: cfg.pair_or("augment.contrast_range", self.contrast_range)?,
            brightness_range: cfg.pair_or("augment.brightness_range", self.brightness_range)?,
            seed: cfg.get_or("augment.seed", self.seed)?,
        };
        out.validate()?;
        Ok(out)
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hwc(img: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::invalid_shape("augment", format!("expected [H, W, C], got {:?}", img.shape()))),
    }
}

/// Rotation about the center (positive is counterclockwise on screen),
/// horizontal shift, isotropic scale about the center, then an optional
/// horizontal flip. Each output pixel is pulled back through the inverse
/// map and sampled bilinearly; coordinates outside the frame clamp to the
/// nearest edge pixel.
pub fn geometric_transform(img: &Tensor<f32>, draw: &Draw) -> Result<Tensor<f32>> {
    let (h, w, c) = hwc(img)?;
    if draw.rotation_deg == 0.0 && draw.shift_px == 0.0 && draw.scale == 1.0 && !draw.flip {
        return Ok(img.clone());
    }
    if draw.scale.is_nan() || draw.scale <= 0.0 {
        return Err(Error::InvalidArgument(format!("scale {} must be positive", draw.scale)));
    }
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let theta = draw.rotation_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let d = img.data();
    let mut out = Vec::with_capacity(d.len());
    for oy in 0..h {
        for ox in 0..w {
            let mut x = ox as f64 - cx;
            let y = (oy as f64 - cy) / draw.scale;
            if draw.flip {
                x = -x;
            }
            x = x / draw.scale - draw.shift_px;
            // inverse rotation in the y-down frame
            let sx = (x * cos - y * sin + cx).clamp(0.0, (w - 1) as f64);
            let sy = (x * sin + y * cos + cy).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for ch in 0..c {
                let v = |yy: usize, xx: usize| d[(yy * w + xx) * c + ch] as f64;
                let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                out.push(((top * (1.0 - fy) + bottom * fy) as f32).clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new(img.shape().to_vec(), out)
}

/// `clamp(brightness * (contrast * (x - 0.5) + 0.5), 0, 1)` per value.
pub fn color_jitter(img: &Tensor<f32>, contrast: f64, brightness: f64) -> Tensor<f32> {
    let (c, b) = (contrast as f32, brightness as f32);
    // contrast*x + (1-contrast)*0.5 is algebraically the same and exact at contrast 1
    let offset = (1.0 - c) * 0.5;
    img.map(|x| (b * (c * x + offset)).clamp(0.0, 1.0))
}

/// Augments every sample of an `[N, H, W, 3]` batch: geometry, then color.
pub fn augment_batch(batch: &Tensor<f32>, cfg: &AugmentConfig, epoch: usize, batch_index: usize) -> Result<Tensor<f32>> {
    let (n, _, w, _) = batch.dims4("augment_batch")?;
    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let draw = cfg.sample(w, &mut cfg.sample_rng(epoch, batch_index, i));
        let item = batch.batch_item(i)?;
        let img = item.reshape(batch.shape()[1..].to_vec())?;
        let geo = geometric_transform(&img, &draw)?;
        items.push(color_jitter(&geo, draw.contrast, draw.brightness));
    }
    Tensor::stack(&items)
}
