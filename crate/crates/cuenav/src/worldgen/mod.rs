//! Procedural line-following worlds: spline geometry, waypoint labels,
//! white-background rendering, and dataset collection.

pub mod camera;
pub mod dataset;
pub mod render;
pub mod spline;
pub mod texture;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed;
use camera::Pose;
use spline::{closest_point, cumulative_lengths, point_at_arc_length, sample_polyline, Vec2};
use texture::{ForegroundTexture, TexturePattern};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("infeasible curvature range {0} rad/step: minimum turn radius {1:.3} m is below the line width {2:.3} m")]
    InfeasibleCurvature(f64, f64, f64),
    #[error("requested length must be positive, got {0}")]
    NonPositiveLength(f64),
    #[error("track lost: drone is {0:.3} m from the line, beyond recovery distance {1:.3} m")]
    TrackLost(f64, f64),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

pub type Result<T> = std::result::Result<T, WorldError>;

/// Maximum gap between consecutive dense polyline samples (m).
pub const POLYLINE_STEP: f64 = 0.01;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldConfig {
    /// Target spline length in meters.
    pub length: f64,
    /// Maximum absolute heading change between control points (radians).
    pub max_turn: f64,
    /// Number of control points is drawn uniformly from this range.
    pub control_points: (usize, usize),
    /// Line half-width in meters.
    pub half_width: f64,
    /// Render a grid of same-color straight lines behind the cue.
    pub distractor_mode: bool,
    /// Arc-length spacing of waypoint partitions (m).
    pub partition_step: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            length: 2.0,
            max_turn: 0.5,
            control_points: (5, 10),
            half_width: 0.05,
            distractor_mode: false,
            partition_step: 0.25,
        }
    }
}

/// One generated world: the cue spline plus its texture and any distractors.
#[derive(Debug, Clone)]
pub struct LineWorld {
    pub seed: u64,
    pub config: WorldConfig,
    pub control_points: Vec<Vec2>,
    pub polyline: Vec<Vec2>,
    pub arc_lengths: Vec<f64>,
    pub texture: ForegroundTexture,
    pub distractors: Vec<(Vec2, Vec2)>,
    pub distractor_texture: Option<ForegroundTexture>,
}

impl LineWorld {
    pub fn total_length(&self) -> f64 {
        *self.arc_lengths.last().unwrap()
    }

    pub fn start(&self) -> Vec2 {
        self.polyline[0]
    }

    /// Initial heading of the spline (radians).
    pub fn start_heading(&self) -> f64 {
        let d = self.polyline[1].sub(self.polyline[0]);
        d.y.atan2(d.x)
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        point_at_arc_length(&self.polyline, &self.arc_lengths, s)
    }

    /// Closest point on the cue: (arc length, distance).
    pub fn closest(&self, q: Vec2) -> (f64, f64) {
        closest_point(&self.polyline, &self.arc_lengths, q)
    }

    /// Arc length of the last waypoint partition (the spline end).
    pub fn final_partition(&self) -> f64 {
        self.total_length()
    }
}

/// Deterministically generate a world from a seed.
pub fn generate_world(seed_value: u64, config: &WorldConfig) -> Result<LineWorld> {
    if config.length <= 0.0 {
        return Err(WorldError::NonPositiveLength(config.length));
    }
    let mut rng = seed::substream(seed_value, "worldgen", 0);
    let n_ctrl = rng.gen_range(config.control_points.0..=config.control_points.1);
    let step = config.length / (n_ctrl - 1) as f64;
    // A heading change of max_turn over a step of arc gives a turn radius of
    // roughly step / max_turn; reject settings that curl tighter than the
    // line is wide.
    if config.max_turn > 0.0 {
        let radius = step / config.max_turn;
        if radius < 2.0 * config.half_width {
            return Err(WorldError::InfeasibleCurvature(
                config.max_turn,
                radius,
                2.0 * config.half_width,
            ));
        }
    }
    let mut heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut pts = vec![Vec2::new(0.0, 0.0)];
    for _ in 1..n_ctrl {
        heading += rng.gen_range(-config.max_turn..=config.max_turn);
        let last = *pts.last().unwrap();
        pts.push(last.add(Vec2::new(heading.cos() * step, heading.sin() * step)));
    }
    // Rescale about the start so the spline arc length matches the request
    // exactly (Catmull-Rom interpolation commutes with uniform scaling).
    let poly = sample_polyline(&pts, POLYLINE_STEP);
    let measured = spline::polyline_length(&poly);
    let factor = config.length / measured;
    let origin = pts[0];
    for p in &mut pts {
        *p = origin.add(p.sub(origin).scale(factor));
    }
    let polyline = sample_polyline(&pts, POLYLINE_STEP);
    let arc_lengths = cumulative_lengths(&polyline);

    let base_color = random_line_color(&mut rng);
    let pattern = if config.distractor_mode || rng.gen_bool(0.7) {
        // distractor mode needs a textured cue so texture is the only
        // difference between cue and background lines
        if rng.gen_bool(0.5) {
            TexturePattern::Stripes {
                period_m: rng.gen_range(0.05..0.2),
                contrast: rng.gen_range(0.3..0.7),
            }
        } else {
            TexturePattern::Noise {
                scale_m: rng.gen_range(0.02..0.1),
                contrast: rng.gen_range(0.3..0.7),
            }
        }
    } else {
        TexturePattern::Solid
    };
    let texture = ForegroundTexture {
        base_color,
        pattern,
        noise_seed: rng.gen(),
    };

    let (distractors, distractor_texture) = if config.distractor_mode {
        let spacing = rng.gen_range(0.25..0.45);
        let mut segments = Vec::new();
        // Grid covering the spline's bounding box with a margin.
        let (mut lo, mut hi) = (Vec2::new(f64::MAX, f64::MAX), Vec2::new(f64::MIN, f64::MIN));
        for p in &polyline {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let margin = 1.5;
        lo = lo.sub(Vec2::new(margin, margin));
        hi = hi.add(Vec2::new(margin, margin));
        let mut x = lo.x;
        while x <= hi.x {
            segments.push((Vec2::new(x, lo.y), Vec2::new(x, hi.y)));
            x += spacing;
        }
        let mut y = lo.y;
        while y <= hi.y {
            segments.push((Vec2::new(lo.x, y), Vec2::new(hi.x, y)));
            y += spacing;
        }
        // Same color family, different (flat) texture.
        let shade = rng.gen_range(0.85..1.0);
        let tex = ForegroundTexture {
            base_color: [
                base_color[0] * shade,
                base_color[1] * shade,
                base_color[2] * shade,
            ],
            pattern: TexturePattern::Solid,
            noise_seed: 0,
        };
        (segments, Some(tex))
    } else {
        (Vec::new(), None)
    };

    Ok(LineWorld {
        seed: seed_value,
        config: config.clone(),
        control_points: pts,
        polyline,
        arc_lengths,
        texture,
        distractors,
        distractor_texture,
    })
}

fn random_line_color(rng: &mut rand_chacha::ChaCha8Rng) -> [f32; 3] {
    // Saturated, clearly non-white colors.
    let hues = [
        [0.85, 0.15, 0.12], // red
        [0.12, 0.25, 0.8],  // blue
        [0.1, 0.6, 0.2],    // green
        [0.8, 0.55, 0.1],   // orange
        [0.5, 0.12, 0.6],   // purple
        [0.1, 0.55, 0.55],  // teal
    ];
    let mut c = hues[rng.gen_range(0..hues.len())];
    for v in &mut c {
        *v = (*v * rng.gen_range(0.8..1.2f32)).clamp(0.05, texture::MAX_FOREGROUND_CHANNEL);
    }
    c
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LabelConfig {
    /// Minimum lookahead from the drone's closest point to the commanded
    /// partition (m).
    pub d_min: f64,
    /// Altitude the z component of every waypoint commands (m).
    pub flight_height: f64,
    /// Beyond this distance from the line the label is "track lost" (m).
    pub recovery_distance: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            d_min: 0.25,
            flight_height: 1.0,
            recovery_distance: 0.85,
        }
    }
}

/// Body-frame waypoint label at a pose: the first arc-length partition at
/// least `d_min` ahead of the drone's closest point on the line, or the
/// spline end if none remains.
pub fn waypoint_label(pose: &Pose, world: &LineWorld, cfg: &LabelConfig) -> Result<[f64; 3]> {
    let (s0, dist) = world.closest(pose.position_xy());
    if dist > cfg.recovery_distance {
        return Err(WorldError::TrackLost(dist, cfg.recovery_distance));
    }
    let step = world.config.partition_step;
    let total = world.total_length();
    let k = ((s0 + cfg.d_min) / step).ceil();
    let s_target = (k * step).min(total);
    let target = world.point_at(s_target);
    let body = pose.world_to_body(target.sub(pose.position_xy()));
    Ok([body.x, body.y, cfg.flight_height - pose.z])
}
