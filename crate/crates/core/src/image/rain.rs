use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Image, ImageError, Result};

/// Parameters of the additive streak layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RainConfig {
    pub streak_count: usize,
    /// Streak orientation in degrees from vertical, within `[-20, 20]`.
    pub angle_deg: f64,
    pub length_px: usize,
    pub width_px: usize,
    /// Peak streak brightness in `[0, 1]`.
    pub intensity: f64,
    pub seed: u64,
}

impl Default for RainConfig {
    fn default() -> Self {
        RainConfig {
            streak_count: 120,
            angle_deg: 10.0,
            length_px: 15,
            width_px: 1,
            intensity: 0.6,
            seed: 0,
        }
    }
}

impl RainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-20.0..=20.0).contains(&self.angle_deg) {
            return Err(ImageError::Dimensions(format!(
                "rain angle {} outside [-20, 20]",
                self.angle_deg
            )));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(ImageError::Dimensions(format!(
                "rain intensity {} outside [0, 1]",
                self.intensity
            )));
        }
        if self.length_px == 0 || self.width_px == 0 {
            return Err(ImageError::Dimensions(
                "streak length and width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Anti-aliased line segment through the kernel centre with peak value 1.
fn streak_kernel(cfg: &RainConfig) -> (isize, Vec<f32>) {
    let theta = cfg.angle_deg.to_radians();
    let (dx, dy) = (theta.sin(), theta.cos());
    let half_len = cfg.length_px as f64 / 2.0;
    let half_width = cfg.width_px as f64 / 2.0;
    let radius = (half_len + half_width).ceil() as isize + 1;
    let side = (2 * radius + 1) as usize;
    let mut k = vec![0.0f32; side * side];
    for ky in -radius..=radius {
        for kx in -radius..=radius {
            let (px, py) = (kx as f64, ky as f64);
            let along = px * dx + py * dy;
            let across = (px * dy - py * dx).abs();
            let w_across = (half_width + 0.5 - across).clamp(0.0, 1.0);
            let w_along = (half_len + 0.5 - along.abs()).clamp(0.0, 1.0);
            k[((ky + radius) as usize) * side + (kx + radius) as usize] = (w_across * w_along) as f32;
        }
    }
    (radius, k)
}

/// Returns `(rainy, rain)` with `rainy = clamp(clean + rain)` and `rain ≥ 0`.
///
/// The rain layer is a field of random impulses smeared along the streak
/// direction, scaled by `intensity`. Output depends only on `clean` and `cfg`.
pub fn synthesize_rain(clean: &Image, cfg: &RainConfig) -> Result<(Image, Image)> {
    cfg.validate()?;
    let (w, h) = (clean.width(), clean.height());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (radius, kernel) = streak_kernel(cfg);
    let side = (2 * radius + 1) as usize;
    let mut field = vec![0.0f32; w * h];
    for _ in 0..cfg.streak_count {
        let cx = rng.random_range(0..w) as isize;
        let cy = rng.random_range(0..h) as isize;
        let amp: f32 = rng.random_range(0.5..=1.0);
        for ky in -radius..=radius {
            let y = cy + ky;
            if y < 0 || y >= h as isize {
                continue;
            }
            for kx in -radius..=radius {
                let x = cx + kx;
                if x < 0 || x >= w as isize {
                    continue;
                }
                let kv = kernel[((ky + radius) as usize) * side + (kx + radius) as usize];
                field[y as usize * w + x as usize] += amp * kv;
            }
        }
    }
    let intensity = cfg.intensity as f32;
    let plane: Vec<f32> = field.iter().map(|&v| v.min(1.0) * intensity).collect();
    let mut data = Vec::with_capacity(plane.len() * clean.channels());
    for _ in 0..clean.channels() {
        data.extend_from_slice(&plane);
    }
    let rain = Image::new(w, h, clean.channels(), data)?;
    let rainy = clean.zip_map(&rain, |c, r| (c + r).clamp(0.0, 1.0))?;
    Ok((rainy, rain))
}
