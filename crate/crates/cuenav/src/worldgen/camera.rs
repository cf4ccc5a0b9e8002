//! Downward-looking pinhole camera over a flat ground plane.

use serde::{Deserialize, Serialize};

use super::spline::Vec2;

/// Drone pose used for rendering and labeling. Body frame: x forward,
/// y left, z up; yaw is the rotation of body-x from world-x.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Pose { x, y, z, yaw }
    }

    pub fn position_xy(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// World offset of a body-frame horizontal vector.
    pub fn body_to_world(&self, v: Vec2) -> Vec2 {
        let (s, c) = self.yaw.sin_cos();
        Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    /// Body-frame coordinates of a world-frame horizontal vector.
    pub fn world_to_body(&self, v: Vec2) -> Vec2 {
        let (s, c) = self.yaw.sin_cos();
        Vec2::new(c * v.x + s * v.y, -s * v.x + c * v.y)
    }
}

/// Vertical-axis pinhole camera with a square image.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CameraModel {
    /// Nominal height above ground (m); the pose's z is used when rendering.
    pub height: f64,
    /// Full field of view across the image (radians).
    pub fov: f64,
    /// Image resolution (pixels per side).
    pub resolution: usize,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            height: 1.0,
            fov: 60f64.to_radians(),
            resolution: 64,
        }
    }
}

impl CameraModel {
    /// Half extent of the ground footprint at height `z`.
    pub fn half_extent(&self, z: f64) -> f64 {
        z * (self.fov / 2.0).tan()
    }

    /// Ground size of one pixel at height `z`.
    pub fn ground_resolution(&self, z: f64) -> f64 {
        2.0 * self.half_extent(z) / self.resolution as f64
    }

    /// Ground point seen by continuous pixel coordinates (row, col), where
    /// integer coordinates address pixel centers. Image "up" (row 0) looks
    /// along body +x, image "left" (col 0) along body +y.
    pub fn pixel_to_ground(&self, pose: &Pose, row: f64, col: f64) -> Vec2 {
        let e = self.half_extent(pose.z);
        let n = self.resolution as f64;
        let fx = 1.0 - 2.0 * (row + 0.5) / n; // +1 at top edge → body +x
        let fy = 1.0 - 2.0 * (col + 0.5) / n; // +1 at left edge → body +y
        let body = Vec2::new(fx * e, fy * e);
        pose.position_xy().add(pose.body_to_world(body))
    }

    /// Continuous pixel coordinates (row, col) of a ground point.
    pub fn ground_to_pixel(&self, pose: &Pose, p: Vec2) -> (f64, f64) {
        let e = self.half_extent(pose.z);
        let body = pose.world_to_body(p.sub(pose.position_xy()));
        let n = self.resolution as f64;
        let row = (1.0 - body.x / e) * n / 2.0 - 0.5;
        let col = (1.0 - body.y / e) * n / 2.0 - 0.5;
        (row, col)
    }

    /// Whether a ground point falls inside the camera footprint, with an
    /// extra margin in meters.
    pub fn sees(&self, pose: &Pose, p: Vec2, margin: f64) -> bool {
        let e = self.half_extent(pose.z) + margin;
        let body = pose.world_to_body(p.sub(pose.position_xy()));
        body.x.abs() <= e && body.y.abs() <= e
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_round_trips() {
        let cam = CameraModel::default();
        let pose = Pose::new(1.3, -0.7, 1.1, 0.9);
        for &(r, c) in &[(0.0, 0.0), (31.5, 12.25), (63.0, 63.0), (10.1, 50.9)] {
            let g = cam.pixel_to_ground(&pose, r, c);
            let (r2, c2) = cam.ground_to_pixel(&pose, g);
            let g2 = cam.pixel_to_ground(&pose, r2, c2);
            assert!(g.dist(g2) < 1e-9, "round trip drifted: {:?} vs {:?}", g, g2);
            assert!((r - r2).abs() < 1e-9 && (c - c2).abs() < 1e-9);
        }
    }

    #[test]
    fn footprint_has_positive_area() {
        let cam = CameraModel::default();
        let pose = Pose::new(0.0, 0.0, 1.0, 0.0);
        let e = cam.half_extent(pose.z);
        assert!(e > 0.0);
        // Top-center pixel looks forward (+x body).
        let g = cam.pixel_to_ground(&pose, 0.0, 31.5);
        assert!(g.x > 0.0, "top of image should be ahead of the drone");
    }

    #[test]
    fn yaw_rotates_view() {
        let cam = CameraModel::default();
        let pose = Pose::new(0.0, 0.0, 1.0, std::f64::consts::FRAC_PI_2);
        // Facing +y: the top of the image now points along world +y.
        let g = cam.pixel_to_ground(&pose, 0.0, 31.5);
        assert!(g.y > 0.2 && g.x.abs() < 1e-9);
    }
}
