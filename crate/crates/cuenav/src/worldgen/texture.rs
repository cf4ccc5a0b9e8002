//! Procedural surface textures for the line foreground.
//!
//! Colors are kept away from pure white so a textured pixel can never
//! quantize to the white background in an 8-bit PNG.

use serde::{Deserialize, Serialize};

use super::spline::Vec2;

/// Brightest allowed channel value for foreground colors.
pub const MAX_FOREGROUND_CHANNEL: f32 = 0.9;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub enum TexturePattern {
    Solid,
    /// Rings across the line, like a ribbed tube: brightness modulated
    /// along the arc-length coordinate.
    Stripes { period_m: f64, contrast: f32 },
    /// Value noise keyed to world position.
    Noise { scale_m: f64, contrast: f32 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ForegroundTexture {
    pub base_color: [f32; 3],
    pub pattern: TexturePattern,
    pub noise_seed: u64,
}

impl ForegroundTexture {
    /// Color at a surface point given its arc-length coordinate `along_m`
    /// and the world position (for noise).
    pub fn sample(&self, along_m: f64, world: Vec2) -> [f32; 3] {
        let factor = match self.pattern {
            TexturePattern::Solid => 1.0,
            TexturePattern::Stripes { period_m, contrast } => {
                let phase = (along_m / period_m) * std::f64::consts::TAU;
                1.0 - contrast * (0.5 + 0.5 * phase.sin() as f32)
            }
            TexturePattern::Noise { scale_m, contrast } => {
                let n = value_noise(world.x / scale_m, world.y / scale_m, self.noise_seed) as f32;
                1.0 - contrast * n
            }
        };
        let f = factor.clamp(0.2, 1.0);
        [
            (self.base_color[0] * f).min(MAX_FOREGROUND_CHANNEL),
            (self.base_color[1] * f).min(MAX_FOREGROUND_CHANNEL),
            (self.base_color[2] * f).min(MAX_FOREGROUND_CHANNEL),
        ]
    }
}

fn hash2(ix: i64, iy: i64, seed: u64) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [ix as u64, iy as u64] {
        h ^= v.wrapping_mul(0xff51_afd7_ed55_8ccd);
        h = h.rotate_left(31).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    }
    h ^= h >> 33;
    h
}

/// Smooth value noise in `[0, 1)` from a hashed integer lattice.
pub fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (ix, iy) = (x0 as i64, y0 as i64);
    let corner =
        |dx: i64, dy: i64| (hash2(ix + dx, iy + dy, seed) >> 11) as f64 / (1u64 << 53) as f64;
    let sx = fx * fx * (3.0 - 2.0 * fx);
    let sy = fy * fy * (3.0 - 2.0 * fy);
    let top = corner(0, 0) * (1.0 - sx) + corner(1, 0) * sx;
    let bot = corner(0, 1) * (1.0 - sx) + corner(1, 1) * sx;
    top * (1.0 - sy) + bot * sy
}

/// Multi-octave value noise in `[0, 1)`.
pub fn fractal_noise(x: f64, y: f64, seed: u64, octaves: u32) -> f64 {
    let mut amp = 0.5;
    let mut freq = 1.0;
    let mut sum = 0.0;
    let mut norm = 0.0;
    for o in 0..octaves {
        sum += amp * value_noise(x * freq, y * freq, seed.wrapping_add(o as u64));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_is_deterministic_and_bounded() {
        for i in 0..100 {
            let x = i as f64 * 0.37;
            let y = i as f64 * 0.91;
            let a = value_noise(x, y, 42);
            let b = value_noise(x, y, 42);
            assert_eq!(a, b);
            assert!((0.0..1.0).contains(&a));
        }
    }

    #[test]
    fn foreground_never_reaches_white() {
        let tex = ForegroundTexture {
            base_color: [1.0, 1.0, 1.0], // even an out-of-range base is clamped
            pattern: TexturePattern::Solid,
            noise_seed: 1,
        };
        let c = tex.sample(0.3, Vec2::new(0.1, 0.2));
        assert!(c.iter().all(|&v| v <= MAX_FOREGROUND_CHANNEL));
    }
}
