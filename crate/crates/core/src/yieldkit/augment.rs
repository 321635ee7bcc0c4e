use image::{Rgb, RgbImage};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Photometric augmentation knobs. All of them keep geometry, so
/// annotations carry over unchanged.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentParams {
    pub hue_deg: f64,
    pub brightness_pct: f64,
    pub exposure_pct: f64,
    /// Gaussian blur sigma in pixels.
    pub blur_px: f64,
    /// Fraction of pixels replaced with random colors.
    pub noise_frac: f64,
}

pub const HUE_MAX_DEG: f64 = 15.0;
pub const BRIGHTNESS_MAX_PCT: f64 = 15.0;
pub const EXPOSURE_MAX_PCT: f64 = 10.0;
pub const BLUR_MAX_PX: f64 = 2.5;
pub const NOISE_MAX_FRAC: f64 = 0.001;

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("hue_deg", self.hue_deg, -HUE_MAX_DEG, HUE_MAX_DEG),
            ("brightness_pct", self.brightness_pct, -BRIGHTNESS_MAX_PCT, BRIGHTNESS_MAX_PCT),
            ("exposure_pct", self.exposure_pct, -EXPOSURE_MAX_PCT, EXPOSURE_MAX_PCT),
            ("blur_px", self.blur_px, 0.0, BLUR_MAX_PX),
            ("noise_frac", self.noise_frac, 0.0, NOISE_MAX_FRAC),
        ];
        for (name, v, lo, hi) in checks {
            if !(lo..=hi).contains(&v) {
                return Err(Error::param(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Uniform draw over the full allowed range of every knob.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        AugmentParams {
            hue_deg: rng.random_range(-HUE_MAX_DEG..=HUE_MAX_DEG),
            brightness_pct: rng.random_range(-BRIGHTNESS_MAX_PCT..=BRIGHTNESS_MAX_PCT),
            exposure_pct: rng.random_range(-EXPOSURE_MAX_PCT..=EXPOSURE_MAX_PCT),
            blur_px: rng.random_range(0.0..=BLUR_MAX_PX),
            noise_frac: rng.random_range(0.0..=NOISE_MAX_FRAC),
        }
    }

    fn touches_color(&self) -> bool {
        self.hue_deg != 0.0 || self.brightness_pct != 0.0 || self.exposure_pct != 0.0
    }
}

/// RGB in [0, 255] to (hue degrees in [0, 360), saturation, value) in [0, 1].
pub fn rgb_to_hsv(p: Rgb<u8>) -> (f64, f64, f64) {
    let [r, g, b] = p.0.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> Rgb<u8> {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let x = c * (1.0 - ((h / 60.0).rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match (h / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    Rgb([r, g, b].map(|u| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8))
}

/// Applies hue, brightness, exposure, blur and noise in that order. Knobs
/// left at zero are skipped, so all-zero parameters return the input
/// unchanged bit for bit.
pub fn augment<R: Rng + ?Sized>(img: &RgbImage, params: &AugmentParams, rng: &mut R) -> Result<RgbImage> {
    params.validate()?;
    let mut out = img.clone();
    if params.touches_color() {
        let gain = 1.0 + params.brightness_pct / 100.0;
        // Gamma below one brightens: positive exposure lifts shadows most.
        let gamma = 1.0 - params.exposure_pct / 100.0;
        for p in out.pixels_mut() {
            let (h, s, v) = rgb_to_hsv(*p);
            let v = (v * gain).clamp(0.0, 1.0).powf(gamma);
            *p = hsv_to_rgb(h + params.hue_deg, s, v);
        }
    }
    if params.blur_px > 0.0 {
        out = image::imageops::blur(&out, params.blur_px as f32);
    }
    let n = noise_pixel_count(out.width(), out.height(), params.noise_frac);
    if n > 0 {
        let w = out.width();
        let total = (out.width() * out.height()) as usize;
        for i in index::sample(rng, total, n) {
            let (x, y) = (i as u32 % w, i as u32 / w);
            let old = *out.get_pixel(x, y);
            let mut new = old;
            while new == old {
                new = Rgb(rng.random());
            }
            out.put_pixel(x, y, new);
        }
    }
    Ok(out)
}

/// `round(noise_frac · N)`, the exact number of pixels noise replaces.
pub fn noise_pixel_count(width: u32, height: u32, noise_frac: f64) -> usize {
    (noise_frac * width as f64 * height as f64).round() as usize
}
