//! Centripetal Catmull-Rom splines and arc-length utilities.

/// 2D ground-plane point in meters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }
    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }
    pub fn dist(self, o: Vec2) -> f64 {
        self.sub(o).norm()
    }
}

/// Evaluate one centripetal Catmull-Rom segment between `p1` and `p2` at
/// `t ∈ [0,1]`, with `p0`/`p3` as the outer guides.
pub fn catmull_rom(p0: Vec2, p1: Vec2, p2: Vec2, p3: Vec2, t: f64) -> Vec2 {
    // Knot spacing by sqrt of chord length (alpha = 0.5).
    let eps = 1e-12;
    let t0 = 0.0;
    let t1 = t0 + p0.dist(p1).sqrt().max(eps);
    let t2 = t1 + p1.dist(p2).sqrt().max(eps);
    let t3 = t2 + p2.dist(p3).sqrt().max(eps);
    let u = t1 + t * (t2 - t1);
    let lerp = |a: Vec2, b: Vec2, ta: f64, tb: f64, u: f64| -> Vec2 {
        if (tb - ta).abs() < eps {
            return a;
        }
        let w = (u - ta) / (tb - ta);
        a.scale(1.0 - w).add(b.scale(w))
    };
    let a1 = lerp(p0, p1, t0, t1, u);
    let a2 = lerp(p1, p2, t1, t2, u);
    let a3 = lerp(p2, p3, t2, t3, u);
    let b1 = lerp(a1, a2, t0, t2, u);
    let b2 = lerp(a2, a3, t1, t3, u);
    lerp(b1, b2, t1, t2, u)
}

/// Dense polyline through all control points. Endpoint guides are mirrored.
/// Consecutive samples are at most `max_step` apart.
pub fn sample_polyline(control: &[Vec2], max_step: f64) -> Vec<Vec2> {
    assert!(control.len() >= 2, "need at least two control points");
    let n = control.len();
    let guide = |i: isize| -> Vec2 {
        if i < 0 {
            // reflect first point
            control[0].scale(2.0).sub(control[1])
        } else if i as usize >= n {
            control[n - 1].scale(2.0).sub(control[n - 2])
        } else {
            control[i as usize]
        }
    };
    let mut pts: Vec<Vec2> = Vec::new();
    for seg in 0..n - 1 {
        let (p0, p1, p2, p3) = (
            guide(seg as isize - 1),
            control[seg],
            control[seg + 1],
            guide(seg as isize + 2),
        );
        // Oversample, then split any step still exceeding max_step.
        let chord = p1.dist(p2);
        let steps = ((chord / max_step).ceil() as usize * 2).max(2);
        let mut seg_pts: Vec<Vec2> = (0..=steps)
            .map(|i| catmull_rom(p0, p1, p2, p3, i as f64 / steps as f64))
            .collect();
        let mut i = 0;
        while i + 1 < seg_pts.len() {
            if seg_pts[i].dist(seg_pts[i + 1]) > max_step {
                // The parameterization is smooth; midpoint refinement
                // terminates quickly.
                let tmid = 0.5;
                let _ = tmid;
                let mid = seg_pts[i].add(seg_pts[i + 1]).scale(0.5);
                seg_pts.insert(i + 1, mid);
            } else {
                i += 1;
            }
        }
        if seg > 0 {
            seg_pts.remove(0); // knot shared with the previous segment
        }
        pts.extend(seg_pts);
    }
    pts
}

/// Total length of a polyline.
pub fn polyline_length(pts: &[Vec2]) -> f64 {
    pts.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Cumulative arc length at every vertex (starts at 0).
pub fn cumulative_lengths(pts: &[Vec2]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(pts.len());
    out.push(0.0);
    for w in pts.windows(2) {
        acc += w[0].dist(w[1]);
        out.push(acc);
    }
    out
}

/// Point at arc length `s` along the polyline (clamped to the ends).
pub fn point_at_arc_length(pts: &[Vec2], cum: &[f64], s: f64) -> Vec2 {
    let total = *cum.last().unwrap();
    let s = s.clamp(0.0, total);
    let i = match cum.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
        Ok(i) => return pts[i],
        Err(i) => i.saturating_sub(1).min(pts.len() - 2),
    };
    let seg = cum[i + 1] - cum[i];
    if seg <= 0.0 {
        return pts[i];
    }
    let w = (s - cum[i]) / seg;
    pts[i].scale(1.0 - w).add(pts[i + 1].scale(w))
}

/// Closest point on the polyline: returns (arc length, distance).
pub fn closest_point(pts: &[Vec2], cum: &[f64], q: Vec2) -> (f64, f64) {
    let mut best = (0.0, f64::INFINITY);
    for i in 0..pts.len() - 1 {
        let a = pts[i];
        let b = pts[i + 1];
        let ab = b.sub(a);
        let len2 = ab.dot(ab);
        let t = if len2 > 0.0 {
            (q.sub(a).dot(ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let p = a.add(ab.scale(t));
        let d = q.dist(p);
        if d < best.1 {
            best = (cum[i] + t * len2.sqrt(), d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_control_points() {
        let ctrl = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.5, 0.2),
            Vec2::new(1.0, -0.1),
            Vec2::new(1.5, 0.3),
        ];
        let pts = sample_polyline(&ctrl, 0.01);
        for c in &ctrl {
            let min = pts
                .iter()
                .map(|p| p.dist(*c))
                .fold(f64::INFINITY, f64::min);
            assert!(min < 1e-6, "control point {:?} missed by {min}", c);
        }
    }

    #[test]
    fn collinear_control_points_stay_collinear() {
        let ctrl: Vec<Vec2> = (0..6).map(|i| Vec2::new(i as f64 * 0.4, 0.0)).collect();
        let pts = sample_polyline(&ctrl, 0.01);
        for p in &pts {
            assert!(p.y.abs() < 1e-9, "sample off the line: {:?}", p);
        }
    }

    #[test]
    fn steps_bounded() {
        let ctrl = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.3, 0.4),
            Vec2::new(0.9, 0.1),
            Vec2::new(1.4, 0.6),
        ];
        let pts = sample_polyline(&ctrl, 0.01);
        for w in pts.windows(2) {
            assert!(w[0].dist(w[1]) <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn arc_length_lookup_round_trips() {
        let ctrl: Vec<Vec2> = (0..5).map(|i| Vec2::new(i as f64, 0.0)).collect();
        let pts = sample_polyline(&ctrl, 0.01);
        let cum = cumulative_lengths(&pts);
        let p = point_at_arc_length(&pts, &cum, 2.5);
        assert!((p.x - 2.5).abs() < 1e-9 && p.y.abs() < 1e-9);
        let (s, d) = closest_point(&pts, &cum, Vec2::new(1.7, 0.3));
        assert!((s - 1.7).abs() < 1e-9);
        assert!((d - 0.3).abs() < 1e-9);
    }
}
