//! Analytic rasterization of a world onto the downward camera.
//!
//! The mask is strict geometric membership of the pixel center (no
//! antialiasing, labels stay binary). Pixel colors are supersampled for a
//! soft inner edge, but only where the mask is already 1, so `mask = 0`
//! pixels stay exactly white and `mask = 1` pixels are never white.
//! Distractor lines render as background: they color pixels without ever
//! setting the mask.

use super::camera::{CameraModel, Pose};
use super::spline::Vec2;
use super::LineWorld;
use crate::img::{ImageBuf, MaskBuf};

/// Segment with the arc length at its start, for texture coordinates.
struct Seg {
    a: Vec2,
    b: Vec2,
    s_base: f64,
}

fn nearest(segs: &[Seg], q: Vec2) -> (f64, f64) {
    let mut best_d = f64::INFINITY;
    let mut best_s = 0.0;
    for seg in segs {
        let ab = seg.b.sub(seg.a);
        let len2 = ab.dot(ab);
        let t = if len2 > 0.0 {
            (q.sub(seg.a).dot(ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let p = seg.a.add(ab.scale(t));
        let d = q.dist(p);
        if d < best_d {
            best_d = d;
            best_s = seg.s_base + t * len2.sqrt();
        }
    }
    (best_s, best_d)
}

/// Render the camera view at `pose`: RGB image plus the exact cue mask.
pub fn render(world: &LineWorld, camera: &CameraModel, pose: &Pose) -> (ImageBuf, MaskBuf) {
    let n = camera.resolution;
    let mut image = ImageBuf::white(n, n);
    let mut mask = MaskBuf::new(n, n);
    let hw = world.config.half_width;
    let center = pose.position_xy();
    let reach = camera.half_extent(pose.z) * std::f64::consts::SQRT_2 + hw + 0.05;

    // Only segments that can touch the footprint matter.
    let cue: Vec<Seg> = world
        .polyline
        .windows(2)
        .zip(&world.arc_lengths)
        .filter(|(w, _)| {
            segment_point_distance(w[0], w[1], center) <= reach
        })
        .map(|(w, &s)| Seg {
            a: w[0],
            b: w[1],
            s_base: s,
        })
        .collect();
    let distractors: Vec<Seg> = world
        .distractors
        .iter()
        .filter(|(a, b)| segment_point_distance(*a, *b, center) <= reach)
        .map(|&(a, b)| Seg { a, b, s_base: 0.0 })
        .collect();

    for r in 0..n {
        for c in 0..n {
            let g = camera.pixel_to_ground(pose, r as f64, c as f64);
            let (s_cue, d_cue) = if cue.is_empty() {
                (0.0, f64::INFINITY)
            } else {
                nearest(&cue, g)
            };
            if d_cue <= hw {
                mask.set(r, c, true);
                // Coverage over the center plus a 2x2 subsample grid. The
                // center is inside, so coverage is at least 1/5 and the
                // pixel cannot quantize back to white.
                let mut inside = 1;
                for (dr, dc) in [(-0.25, -0.25), (-0.25, 0.25), (0.25, -0.25), (0.25, 0.25)] {
                    let sg = camera.pixel_to_ground(pose, r as f64 + dr, c as f64 + dc);
                    let (_, sd) = nearest(&cue, sg);
                    if sd <= hw {
                        inside += 1;
                    }
                }
                let alpha = inside as f32 / 5.0;
                let tex = world.texture.sample(s_cue, g);
                image.set(
                    r,
                    c,
                    [
                        alpha * tex[0] + (1.0 - alpha),
                        alpha * tex[1] + (1.0 - alpha),
                        alpha * tex[2] + (1.0 - alpha),
                    ],
                );
            } else if !distractors.is_empty() {
                let (_, dd) = nearest(&distractors, g);
                if dd <= hw {
                    let tex = world
                        .distractor_texture
                        .as_ref()
                        .expect("distractor texture present when segments exist")
                        .sample(0.0, g);
                    image.set(r, c, tex);
                }
            }
        }
    }
    (image, mask)
}

fn segment_point_distance(a: Vec2, b: Vec2, q: Vec2) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 {
        (q.sub(a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    q.dist(a.add(ab.scale(t)))
}

/// True if any part of the cue line is inside the camera footprint
/// (used by the closed-loop success criterion).
pub fn cue_in_view(world: &LineWorld, camera: &CameraModel, pose: &Pose) -> bool {
    let margin = world.config.half_width;
    world
        .polyline
        .iter()
        .any(|&p| camera.sees(pose, p, margin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::{generate_world, WorldConfig};

    fn straight_world() -> LineWorld {
        generate_world(
            3,
            &WorldConfig {
                max_turn: 0.0,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn line_outside_footprint_renders_all_white() {
        let w = straight_world();
        let cam = CameraModel::default();
        // 10 m to the side of the whole line.
        let h = w.start_heading();
        let off = Vec2::new(-h.sin(), h.cos()).scale(10.0);
        let pose = Pose::new(w.start().x + off.x, w.start().y + off.y, 1.0, h);
        let (img, mask) = render(&w, &cam, &pose);
        assert_eq!(mask.count_ones(), 0);
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn center_row_run_width_matches_geometry() {
        let w = straight_world();
        let cam = CameraModel::default();
        // Hover over the line center, heading along it: the cue runs
        // vertically through the image, so the center row crosses it.
        let mid = w.point_at(w.total_length() / 2.0);
        let pose = Pose::new(mid.x, mid.y, 1.0, w.start_heading());
        let (_, mask) = render(&w, &cam, &pose);
        let n = cam.resolution;
        let run: usize = (0..n).filter(|&c| mask.get(n / 2, c)).count();
        let expected = 2.0 * w.config.half_width / cam.ground_resolution(pose.z);
        assert!(
            (run as f64 - expected).abs() <= 2.0,
            "run {run} vs expected {expected:.2}"
        );
    }

    #[test]
    fn mask_zero_is_exactly_white_without_distractors() {
        let cfg = WorldConfig::default();
        for seed in [1, 5, 9] {
            let w = generate_world(seed, &cfg).unwrap();
            let cam = CameraModel::default();
            let p = w.point_at(0.3);
            let pose = Pose::new(p.x, p.y, 1.0, w.start_heading());
            let (img, mask) = render(&w, &cam, &pose);
            for r in 0..cam.resolution {
                for c in 0..cam.resolution {
                    if !mask.get(r, c) {
                        assert_eq!(img.get(r, c), [1.0, 1.0, 1.0]);
                    } else {
                        assert!(img.get(r, c).iter().any(|&v| v < 0.99));
                    }
                }
            }
        }
    }

    #[test]
    fn distractors_color_pixels_but_not_mask() {
        let cfg = WorldConfig {
            distractor_mode: true,
            ..Default::default()
        };
        let w = generate_world(7, &cfg).unwrap();
        assert!(!w.distractors.is_empty());
        let cam = CameraModel::default();
        let p = w.point_at(0.5);
        let pose = Pose::new(p.x, p.y, 1.0, w.start_heading());
        let (img, mask) = render(&w, &cam, &pose);
        let mut distractor_pixels = 0;
        for r in 0..cam.resolution {
            for c in 0..cam.resolution {
                if !mask.get(r, c) && img.get(r, c) != [1.0, 1.0, 1.0] {
                    distractor_pixels += 1;
                }
            }
        }
        assert!(
            distractor_pixels > 0,
            "the background grid should be visible"
        );
        // Mask still tracks only the cue geometry.
        for r in 0..cam.resolution {
            for c in 0..cam.resolution {
                if mask.get(r, c) {
                    let g = cam.pixel_to_ground(&pose, r as f64, c as f64);
                    let (_, d) = w.closest(g);
                    assert!(d <= w.config.half_width + 1e-9);
                }
            }
        }
    }

    #[test]
    fn mask_one_survives_eight_bit_quantization() {
        let w = straight_world();
        let cam = CameraModel::default();
        let mid = w.point_at(1.0);
        let pose = Pose::new(mid.x, mid.y, 1.0, w.start_heading() + 0.3);
        let (img, mask) = render(&w, &cam, &pose);
        for r in 0..cam.resolution {
            for c in 0..cam.resolution {
                if mask.get(r, c) {
                    let px = img.get(r, c);
                    let as_u8: Vec<u8> =
                        px.iter().map(|v| (v * 255.0).round() as u8).collect();
                    assert!(
                        as_u8.iter().any(|&v| v < 255),
                        "mask-1 pixel quantized to pure white: {px:?}"
                    );
                }
            }
        }
    }
}
