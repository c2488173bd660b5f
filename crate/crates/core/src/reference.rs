//! Reference path generation and geometry queries for the tracking scenarios.

use crate::error::{Error, Result};
use crate::plant::wrap_angle;

/// One sampled reference point.
#[derive(Debug, Clone, Copy)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    /// Heading of the segment leaving this point.
    pub phi: f64,
    /// Arc length from the path start, meters.
    pub station: f64,
}

/// A reference path sampled on the plant time grid (one point per
/// `speed * dt` meters of arc length).
#[derive(Debug, Clone)]
pub struct ReferencePath {
    points: Vec<PathPoint>,
    /// Arc-length spacing between consecutive points.
    spacing: f64,
    pub lane_offset: f64,
    /// Transition stations `(s1, s2, s3, s4)`.
    pub stations: (f64, f64, f64, f64),
}

/// Result of projecting a position onto the path.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// Arc length of the closest path point.
    pub station: f64,
    /// Signed perpendicular distance, positive left of the path.
    pub deviation: f64,
    /// Reference heading at the projection.
    pub heading: f64,
    pub x: f64,
    pub y: f64,
}

/// Quintic smoothstep: 0 to 1 with zero first and second derivatives at both
/// ends.
fn smoothstep(xi: f64) -> f64 {
    xi * xi * xi * (10.0 + xi * (-15.0 + 6.0 * xi))
}

fn smoothstep_slope(xi: f64) -> f64 {
    30.0 * xi * xi * (1.0 - xi) * (1.0 - xi)
}

/// Lateral offset profile of the dual lane switch as a function of the
/// longitudinal coordinate.
#[derive(Debug, Clone, Copy)]
pub struct LaneSwitchProfile {
    pub lane_offset: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
    pub s4: f64,
}

impl LaneSwitchProfile {
    pub fn offset_at(&self, x: f64) -> f64 {
        if x <= self.s1 {
            0.0
        } else if x < self.s2 {
            self.lane_offset * smoothstep((x - self.s1) / (self.s2 - self.s1))
        } else if x <= self.s3 {
            self.lane_offset
        } else if x < self.s4 {
            self.lane_offset * (1.0 - smoothstep((x - self.s3) / (self.s4 - self.s3)))
        } else {
            0.0
        }
    }

    pub fn slope_at(&self, x: f64) -> f64 {
        if x > self.s1 && x < self.s2 {
            let t = self.s2 - self.s1;
            self.lane_offset * smoothstep_slope((x - self.s1) / t) / t
        } else if x > self.s3 && x < self.s4 {
            let t = self.s4 - self.s3;
            -self.lane_offset * smoothstep_slope((x - self.s3) / t) / t
        } else {
            0.0
        }
    }
}

/// Builds the dual-lane-switch reference: straight, a smooth move of
/// `lane_offset` meters over `[s1, s2]`, a straight stretch on the new lane,
/// a symmetric return over `[s3, s4]`, straight to `total_length`.
#[allow(clippy::too_many_arguments)]
pub fn make_dual_lane_switch(
    lane_offset: f64,
    s1: f64,
    s2: f64,
    s3: f64,
    s4: f64,
    total_length: f64,
    dt: f64,
    speed: f64,
) -> Result<ReferencePath> {
    if !(0.0 < s1 && s1 < s2 && s2 < s3 && s3 < s4 && s4 < total_length) {
        return Err(Error::InvalidArgument(format!(
            "stations must satisfy 0 < s1 < s2 < s3 < s4 < total_length, got \
             {s1}, {s2}, {s3}, {s4}, {total_length}"
        )));
    }
    if !(dt > 0.0) || !(speed > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt and speed must be positive, got dt={dt}, speed={speed}"
        )));
    }
    if !lane_offset.is_finite() {
        return Err(Error::InvalidArgument("lane offset must be finite".into()));
    }
    let profile = LaneSwitchProfile {
        lane_offset,
        s1,
        s2,
        s3,
        s4,
    };

    // dense arc-length table over x
    let dx = 0.01;
    let steps = (total_length / dx).ceil() as usize;
    let mut xs = Vec::with_capacity(steps + 1);
    let mut arclen = Vec::with_capacity(steps + 1);
    let mut acc = 0.0;
    let mut prev_y = profile.offset_at(0.0);
    xs.push(0.0);
    arclen.push(0.0);
    for i in 1..=steps {
        let x = (i as f64 * dx).min(total_length);
        let y = profile.offset_at(x);
        let dxi = x - xs[i - 1];
        acc += (dxi * dxi + (y - prev_y) * (y - prev_y)).sqrt();
        xs.push(x);
        arclen.push(acc);
        prev_y = y;
    }
    let total_arc = acc;

    // resample at uniform arc length
    let spacing = speed * dt;
    let count = (total_arc / spacing).floor() as usize + 1;
    let mut points = Vec::with_capacity(count);
    let mut cursor = 0usize;
    for k in 0..count {
        let s = k as f64 * spacing;
        while cursor + 1 < arclen.len() && arclen[cursor + 1] < s {
            cursor += 1;
        }
        let x = if cursor + 1 < arclen.len() {
            let seg = arclen[cursor + 1] - arclen[cursor];
            let w = if seg > 0.0 { (s - arclen[cursor]) / seg } else { 0.0 };
            xs[cursor] + w * (xs[cursor + 1] - xs[cursor])
        } else {
            total_length
        };
        points.push(PathPoint {
            x,
            y: profile.offset_at(x),
            phi: 0.0,
            station: s,
        });
    }
    // headings from point differences
    for k in 0..points.len() {
        let (a, b) = if k + 1 < points.len() {
            (points[k], points[k + 1])
        } else {
            (points[k - 1], points[k])
        };
        points[k].phi = (b.y - a.y).atan2(b.x - a.x);
    }

    Ok(ReferencePath {
        points,
        spacing,
        lane_offset,
        stations: (s1, s2, s3, s4),
    })
}

impl ReferencePath {
    pub fn points(&self) -> &[PathPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn total_station(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.station)
    }

    /// The analytic lateral-offset profile, for geometry checks.
    pub fn profile(&self) -> LaneSwitchProfile {
        LaneSwitchProfile {
            lane_offset: self.lane_offset,
            s1: self.stations.0,
            s2: self.stations.1,
            s3: self.stations.2,
            s4: self.stations.3,
        }
    }

    /// Interpolated path point at a given arc length, clamped to the ends.
    pub fn sample_at_station(&self, s: f64) -> PathPoint {
        let last = self.points.len() - 1;
        if s <= 0.0 {
            return self.points[0];
        }
        let idx = (s / self.spacing).floor() as usize;
        if idx >= last {
            return self.points[last];
        }
        let a = &self.points[idx];
        let b = &self.points[idx + 1];
        let w = ((s - a.station) / self.spacing).clamp(0.0, 1.0);
        PathPoint {
            x: a.x + w * (b.x - a.x),
            y: a.y + w * (b.y - a.y),
            phi: a.phi + w * wrap_angle(b.phi - a.phi),
            station: s,
        }
    }

    /// Reference curvature near a station, from heading differences.
    pub fn curvature_at_station(&self, s: f64) -> f64 {
        let last = self.points.len() - 1;
        let idx = ((s / self.spacing).round() as usize).min(last.saturating_sub(1));
        let dphi = wrap_angle(self.points[idx + 1].phi - self.points[idx].phi);
        dphi / self.spacing
    }

    /// Projects a position onto the path: nearest sample (ties toward the
    /// smaller index), refined on the adjacent segments.
    pub fn project(&self, x: f64, y: f64) -> Projection {
        let mut best_i = 0usize;
        let mut best_d2 = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d2 = (x - p.x) * (x - p.x) + (y - p.y) * (y - p.y);
            if d2 < best_d2 {
                best_d2 = d2;
                best_i = i;
            }
        }

        let mut best: Option<(f64, f64, usize, f64)> = None; // (dist2, t, seg_index, station)
        let lo = best_i.saturating_sub(1);
        let hi = (best_i + 1).min(self.points.len() - 1);
        for seg in lo..hi {
            let a = &self.points[seg];
            let b = &self.points[seg + 1];
            let vx = b.x - a.x;
            let vy = b.y - a.y;
            let len2 = vx * vx + vy * vy;
            let t = if len2 > 0.0 {
                (((x - a.x) * vx + (y - a.y) * vy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let px = a.x + t * vx;
            let py = a.y + t * vy;
            let d2 = (x - px) * (x - px) + (y - py) * (y - py);
            let station = a.station + t * self.spacing;
            let better = match &best {
                None => true,
                Some((bd2, _, _, bs)) => d2 < bd2 - 1e-15 || (d2 <= bd2 + 1e-15 && station < *bs),
            };
            if better {
                best = Some((d2, t, seg, station));
            }
        }
        let (_, t, seg, station) = best.expect("path has at least two points");
        let a = &self.points[seg];
        let b = &self.points[seg + 1];
        let px = a.x + t * (b.x - a.x);
        let py = a.y + t * (b.y - a.y);
        let heading = a.phi;
        // signed perpendicular distance, positive to the left of the tangent
        let (tx, ty) = (heading.cos(), heading.sin());
        let deviation = tx * (y - py) - ty * (x - px);
        Projection {
            station,
            deviation,
            heading,
            x: px,
            y: py,
        }
    }
}

/// Default dual-lane-switch dimensions: 3.5 m offset, 40 m transitions,
/// 50 m straights between, 250 m total.
pub fn default_dual_lane_switch(dt: f64, speed: f64) -> Result<ReferencePath> {
    make_dual_lane_switch(3.5, 50.0, 90.0, 140.0, 180.0, 250.0, dt, speed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn path() -> ReferencePath {
        default_dual_lane_switch(0.05, 10.0).unwrap()
    }

    #[test]
    fn zero_before_first_station() {
        let p = path().profile();
        assert_eq!(p.offset_at(0.0), 0.0);
        assert_eq!(p.offset_at(49.9), 0.0);
        assert_eq!(p.offset_at(50.0), 0.0);
    }

    #[test]
    fn midpoint_is_half_offset() {
        let p = path().profile();
        assert_relative_eq!(p.offset_at(70.0), 1.75, epsilon = 1e-12);
        assert_relative_eq!(p.offset_at(160.0), 1.75, epsilon = 1e-12);
    }

    #[test]
    fn heading_at_transition_end_is_zero() {
        let p = path().profile();
        assert!(p.slope_at(90.0).atan().abs() < 1e-9);
        assert!(p.slope_at(50.0).atan().abs() < 1e-9);
        assert!(p.slope_at(180.0).atan().abs() < 1e-9);
    }

    #[test]
    fn station_ordering_is_enforced() {
        assert!(make_dual_lane_switch(3.5, 90.0, 50.0, 140.0, 180.0, 250.0, 0.05, 10.0).is_err());
        assert!(make_dual_lane_switch(3.5, 50.0, 90.0, 140.0, 260.0, 250.0, 0.05, 10.0).is_err());
    }

    #[test]
    fn stations_strictly_increase_and_points_are_close() {
        let p = path();
        let max_gap = 10.0 * 0.05 * 1.01;
        for w in p.points().windows(2) {
            assert!(w[1].station > w[0].station);
            let dx = w[1].x - w[0].x;
            let dy = w[1].y - w[0].y;
            assert!((dx * dx + dy * dy).sqrt() <= max_gap);
        }
    }

    #[test]
    fn heading_matches_point_differences() {
        let p = path();
        for w in p.points().windows(2) {
            let expected = (w[1].y - w[0].y).atan2(w[1].x - w[0].x);
            assert_relative_eq!(w[0].phi, expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn projection_sign_convention() {
        let p = path();
        // on the initial straight, left of the path means positive deviation
        let proj = p.project(20.0, 0.5);
        assert_relative_eq!(proj.deviation, 0.5, epsilon = 1e-9);
        assert_relative_eq!(proj.station, 20.0, epsilon = 1e-6);
        let proj = p.project(20.0, -0.25);
        assert_relative_eq!(proj.deviation, -0.25, epsilon = 1e-9);
    }

    #[test]
    fn projection_is_exact_on_the_path() {
        let p = path();
        for k in (0..p.len()).step_by(37) {
            let pt = p.points()[k];
            let proj = p.project(pt.x, pt.y);
            assert!(proj.deviation.abs() < 1e-9);
            assert_relative_eq!(proj.station, pt.station, epsilon = 1e-6);
        }
    }

    #[test]
    fn sample_clamps_at_the_ends() {
        let p = path();
        let end = p.sample_at_station(1e9);
        assert_relative_eq!(end.x, 250.0, epsilon = 0.6);
        let start = p.sample_at_station(-5.0);
        assert_eq!(start.x, 0.0);
    }
}
