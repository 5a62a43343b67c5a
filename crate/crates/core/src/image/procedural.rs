//! Synthetic clean images for tests, demos and toy datasets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Image;

/// Uniform noise in `[0, 1]`.
pub fn random_image(width: usize, height: usize, channels: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height * channels).map(|_| rng.random::<f32>()).collect();
    Image::new(width, height, channels, data).expect("valid dimensions")
}

/// Smooth colour gradient with a few flat shapes and mild texture; a stand-in
/// for natural rain-free backgrounds.
pub fn scene(width: usize, height: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_d0f5_ce4e);
    let base: [f32; 3] = [
        rng.random_range(0.15..0.6),
        rng.random_range(0.15..0.6),
        rng.random_range(0.15..0.6),
    ];
    let grad: [(f32, f32); 3] = [
        (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
        (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
        (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
    ];
    let mut img = Image::filled(width, height, 3, 0.0);
    for c in 0..3 {
        for y in 0..height {
            for x in 0..width {
                let u = x as f32 / width as f32;
                let v = y as f32 / height as f32;
                img.set(c, y, x, base[c] + grad[c].0 * u + grad[c].1 * v);
            }
        }
    }
    let shapes = rng.random_range(3..7);
    for _ in 0..shapes {
        let colour: [f32; 3] = [rng.random(), rng.random(), rng.random()];
        let cx = rng.random_range(0.0..width as f32);
        let cy = rng.random_range(0.0..height as f32);
        let r = rng.random_range(0.08..0.3) * width.min(height) as f32;
        let disc = rng.random_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let (dx, dy) = (x as f32 - cx, y as f32 - cy);
                let inside = if disc {
                    dx * dx + dy * dy <= r * r
                } else {
                    dx.abs() <= r && dy.abs() <= 0.6 * r
                };
                if inside {
                    for (c, &col) in colour.iter().enumerate() {
                        img.set(c, y, x, col);
                    }
                }
            }
        }
    }
    let freq = rng.random_range(0.2..0.6);
    let phase = rng.random_range(0.0..std::f32::consts::TAU);
    for c in 0..3 {
        for y in 0..height {
            for x in 0..width {
                let t = 0.04 * ((x as f32 * freq + phase).sin() * (y as f32 * freq * 0.7).cos());
                let v = img.get(c, y, x) + t;
                img.set(c, y, x, v.clamp(0.0, 1.0));
            }
        }
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_is_deterministic_and_in_range() {
        let a = scene(24, 16, 5);
        assert_eq!(a, scene(24, 16, 5));
        assert_ne!(a, scene(24, 16, 6));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
