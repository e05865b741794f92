//! Closed (or open) racetrack described by a piecewise-linear centerline with
//! per-point wall widths, plus conversions between Cartesian and Frenet
//! coordinates.
//!
//! Arc length `s` is measured along the polyline. The lateral offset `n` is
//! positive toward the left wall. Normals are blended linearly between vertex
//! normals so the Frenet map is continuous across vertices and exactly
//! invertible inside the tube.

use alloc::vec::Vec;

use crate::wrap_angle;

/// Default half-window (in vertices) of the curvature moving average.
pub const DEFAULT_CURVATURE_WINDOW: usize = 1;

/// How far beyond a wall a point may lie and still be projected.
pub const DEFAULT_TUBE_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrackError {
    #[error("track needs at least 3 centerline points, got {0}")]
    TooFewPoints(usize),
    #[error("centerline points {0} and {1} coincide")]
    DuplicatePoint(usize, usize),
    #[error("non-positive width at point {index} (left {left}, right {right})")]
    NonPositiveWidth { index: usize, left: f64, right: f64 },
    #[error("non-finite value at point {0}")]
    NonFinite(usize),
    #[error("width arrays do not match the centerline length")]
    LengthMismatch,
    #[error("pose outside the valid tube at s = {s:.3}, n = {n:.3}")]
    OutsideTube { s: f64, n: f64 },
    #[error("point ({x:.3}, {y:.3}) does not project onto the track tube")]
    NoProjection { x: f64, y: f64 },
}

/// Track-relative pose.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FrenetPose {
    pub s: f64,
    pub n: f64,
    pub delta_phi: f64,
}

impl FrenetPose {
    pub fn new(s: f64, n: f64, delta_phi: f64) -> Self {
        Self { s, n, delta_phi }
    }
}

#[derive(Debug, Clone)]
pub struct TrackSpec {
    points: Vec<[f64; 2]>,
    width_left: Vec<f64>,
    width_right: Vec<f64>,
    closed: bool,
    /// Cumulative arc length at each vertex; one extra entry (the total) on
    /// closed tracks.
    stations: Vec<f64>,
    normals: Vec<[f64; 2]>,
    curvature: Vec<f64>,
    /// dkappa/ds at the vertices; the Hermite tangents of the curvature.
    curvature_slope: Vec<f64>,
    total_length: f64,
    tube_margin: f64,
}

impl TrackSpec {
    /// Builds a track, validating the invariants and precomputing arc length,
    /// vertex normals and curvature.
    pub fn new(
        points: Vec<[f64; 2]>,
        width_left: Vec<f64>,
        width_right: Vec<f64>,
        closed: bool,
    ) -> Result<Self, TrackError> {
        Self::with_curvature_window(points, width_left, width_right, closed, DEFAULT_CURVATURE_WINDOW)
    }

    pub fn with_curvature_window(
        mut points: Vec<[f64; 2]>,
        mut width_left: Vec<f64>,
        mut width_right: Vec<f64>,
        closed: bool,
        window: usize,
    ) -> Result<Self, TrackError> {
        if points.len() != width_left.len() || points.len() != width_right.len() {
            return Err(TrackError::LengthMismatch);
        }
        // A closed track given with its first point repeated at the end.
        if closed && points.len() > 3 && points.first() == points.last() {
            points.pop();
            width_left.pop();
            width_right.pop();
        }
        let m = points.len();
        if m < 3 {
            return Err(TrackError::TooFewPoints(m));
        }
        for i in 0..m {
            let [x, y] = points[i];
            if !(x.is_finite() && y.is_finite() && width_left[i].is_finite() && width_right[i].is_finite()) {
                return Err(TrackError::NonFinite(i));
            }
            if width_left[i] <= 0.0 || width_right[i] <= 0.0 {
                return Err(TrackError::NonPositiveWidth {
                    index: i,
                    left: width_left[i],
                    right: width_right[i],
                });
            }
        }
        let segs = if closed { m } else { m - 1 };
        let mut stations = Vec::with_capacity(segs + 1);
        stations.push(0.0);
        let mut dirs = Vec::with_capacity(segs);
        for i in 0..segs {
            let j = (i + 1) % m;
            let d = sub(points[j], points[i]);
            let len = norm(d);
            if len <= 0.0 {
                return Err(TrackError::DuplicatePoint(i, j));
            }
            dirs.push(scale(d, 1.0 / len));
            stations.push(stations[i] + len);
        }
        let total_length = stations[segs];

        let mut normals = Vec::with_capacity(m);
        for i in 0..m {
            let t = if closed {
                let prev = dirs[(i + segs - 1) % segs];
                let next = dirs[i % segs];
                let sum = add(prev, next);
                let len = norm(sum);
                // A hairpin reversal leaves no usable bisector; fall back to the outgoing direction.
                if len < 1e-9 { next } else { scale(sum, 1.0 / len) }
            } else if i == 0 {
                dirs[0]
            } else if i == m - 1 {
                dirs[segs - 1]
            } else {
                let sum = add(dirs[i - 1], dirs[i]);
                let len = norm(sum);
                if len < 1e-9 { dirs[i] } else { scale(sum, 1.0 / len) }
            };
            normals.push([-t[1], t[0]]);
        }

        let raw: Vec<f64> = (0..m)
            .map(|i| {
                if closed {
                    circumcircle_curvature(points[(i + m - 1) % m], points[i], points[(i + 1) % m])
                } else if i == 0 || i == m - 1 {
                    f64::NAN
                } else {
                    circumcircle_curvature(points[i - 1], points[i], points[i + 1])
                }
            })
            .collect();
        let mut raw = raw;
        if !closed {
            raw[0] = raw[1];
            raw[m - 1] = raw[m - 2];
        }
        let curvature = smooth(&raw, window, closed);
        let curvature_slope = vertex_slopes(&curvature, &stations, closed);

        Ok(Self {
            points,
            width_left,
            width_right,
            closed,
            stations,
            normals,
            curvature,
            curvature_slope,
            total_length,
            tube_margin: DEFAULT_TUBE_MARGIN,
        })
    }

    pub fn with_tube_margin(mut self, margin: f64) -> Self {
        self.tube_margin = margin.max(0.0);
        self
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn widths_left(&self) -> &[f64] {
        &self.width_left
    }

    pub fn widths_right(&self) -> &[f64] {
        &self.width_right
    }

    pub fn num_segments(&self) -> usize {
        self.stations.len() - 1
    }

    /// Arc length at vertex `i`.
    pub fn station(&self, i: usize) -> f64 {
        self.stations[i]
    }

    /// Wraps `s` into `[0, total_length)` on closed tracks, clamps otherwise.
    pub fn wrap_s(&self, s: f64) -> f64 {
        if self.closed {
            let mut w = libm::fmod(s, self.total_length);
            if w < 0.0 {
                w += self.total_length;
            }
            if w >= self.total_length {
                w -= self.total_length;
            }
            w
        } else {
            s.clamp(0.0, self.total_length)
        }
    }

    /// Signed difference `b - a` along the track, taking the short way round
    /// on closed tracks.
    pub fn s_difference(&self, a: f64, b: f64) -> f64 {
        let d = b - a;
        if self.closed {
            let l = self.total_length;
            let mut w = libm::fmod(d, l);
            if w > l / 2.0 {
                w -= l;
            } else if w < -l / 2.0 {
                w += l;
            }
            w
        } else {
            d
        }
    }

    /// Segment index and fraction along it for an arc position.
    fn locate(&self, s: f64) -> (usize, f64) {
        let s = self.wrap_s(s);
        let segs = self.num_segments();
        // Largest i with stations[i] <= s.
        let i = match self.stations.binary_search_by(|v| v.partial_cmp(&s).unwrap_or(core::cmp::Ordering::Less)) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
        .min(segs - 1);
        let len = self.stations[i + 1] - self.stations[i];
        (i, ((s - self.stations[i]) / len).clamp(0.0, 1.0))
    }

    fn next_vertex(&self, i: usize) -> usize {
        (i + 1) % self.points.len()
    }

    fn lerp_vertex(&self, values: &[f64], s: f64) -> f64 {
        let (i, t) = self.locate(s);
        let j = self.next_vertex(i);
        values[i] + t * (values[j] - values[i])
    }

    /// Signed curvature of the centerline at `s` (positive = turning left).
    /// Cubic Hermite between vertices, so curvature and its slope are both
    /// continuous; a kinked slope costs the integrator its order.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let (i, t) = self.locate(s);
        let (k0, k1, d0, d1) = self.hermite(i);
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * k0 + (t3 - 2.0 * t2 + t) * d0 + (3.0 * t2 - 2.0 * t3) * k1 + (t3 - t2) * d1
    }

    /// Derivative of [`Self::curvature_at`] with respect to `s`.
    pub fn curvature_slope_at(&self, s: f64) -> f64 {
        let (i, t) = self.locate(s);
        let (k0, k1, d0, d1) = self.hermite(i);
        let h = self.stations[i + 1] - self.stations[i];
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * (k0 - k1) + (3.0 * t2 - 4.0 * t + 1.0) * d0 + (3.0 * t2 - 2.0 * t) * d1) / h
    }

    /// End values and length-scaled end slopes of segment `i`.
    fn hermite(&self, i: usize) -> (f64, f64, f64, f64) {
        let j = self.next_vertex(i);
        let h = self.stations[i + 1] - self.stations[i];
        (self.curvature[i], self.curvature[j], h * self.curvature_slope[i], h * self.curvature_slope[j])
    }

    pub fn width_left_at(&self, s: f64) -> f64 {
        self.lerp_vertex(&self.width_left, s)
    }

    pub fn width_right_at(&self, s: f64) -> f64 {
        self.lerp_vertex(&self.width_right, s)
    }

    /// Distances from a Frenet position to the left and right walls. Negative
    /// values mean the point is past the wall.
    pub fn wall_distances(&self, s: f64, n: f64) -> (f64, f64) {
        (self.width_left_at(s) - n, self.width_right_at(s) + n)
    }

    /// Centerline point, unit left normal and unit tangent at `s`.
    pub fn frame_at(&self, s: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let (i, t) = self.locate(s);
        let j = self.next_vertex(i);
        let c = add(self.points[i], scale(sub(self.points[j], self.points[i]), t));
        let m = add(scale(self.normals[i], 1.0 - t), scale(self.normals[j], t));
        let nrm = scale(m, 1.0 / norm(m));
        (c, nrm, [nrm[1], -nrm[0]])
    }

    fn in_tube(&self, s: f64, n: f64) -> bool {
        let k = self.curvature_at(s);
        let lateral_ok = n <= self.width_left_at(s) + self.tube_margin && n >= -(self.width_right_at(s) + self.tube_margin);
        lateral_ok && (n * k).abs() < 1.0
    }

    pub fn frenet_to_cartesian(&self, pose: FrenetPose) -> Result<(f64, f64, f64), TrackError> {
        let s = self.wrap_s(pose.s);
        if !pose.n.is_finite() || !self.in_tube(s, pose.n) {
            return Err(TrackError::OutsideTube { s, n: pose.n });
        }
        let (c, nrm, tan) = self.frame_at(s);
        let p = add(c, scale(nrm, pose.n));
        let heading = wrap_angle(libm::atan2(tan[1], tan[0]) + pose.delta_phi);
        Ok((p[0], p[1], heading))
    }

    /// Projects a Cartesian pose onto the track. Among all segments whose
    /// blended normal passes through the point, the one with the smallest
    /// |n| wins; exact ties go to the smaller `s`.
    pub fn cartesian_to_frenet(&self, x: f64, y: f64, heading: f64) -> Result<FrenetPose, TrackError> {
        let p = [x, y];
        let mut best: Option<(f64, f64)> = None; // (s, n)
        for i in 0..self.num_segments() {
            let j = self.next_vertex(i);
            let p0 = self.points[i];
            let d = sub(self.points[j], p0);
            let n0 = self.normals[i];
            let e = sub(self.normals[j], n0);
            let q = sub(p, p0);
            // cross(n0 + t e, q - t d) = 0 is quadratic in t.
            let a0 = cross(n0, q);
            let a1 = cross(e, q) - cross(n0, d);
            let a2 = -cross(e, d);
            let mut roots = [f64::NAN; 2];
            solve_quadratic(a2, a1, a0, &mut roots);
            for &t0 in roots.iter() {
                if !t0.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&t0) {
                    continue;
                }
                let t = refine_root(a2, a1, a0, t0).clamp(0.0, 1.0);
                let m = add(n0, scale(e, t));
                let mlen = norm(m);
                if mlen < 1e-12 {
                    continue;
                }
                let r = sub(q, scale(d, t));
                let n = dot(r, m) / mlen;
                // Reject the spurious root where the offset is perpendicular to the normal.
                if libm::fabs(cross(m, r)) / mlen > 1e-6 * (1.0 + libm::fabs(n)) {
                    continue;
                }
                let s = self.wrap_s(self.stations[i] + t * (self.stations[i + 1] - self.stations[i]));
                if !self.in_tube(s, n) {
                    continue;
                }
                best = match best {
                    None => Some((s, n)),
                    Some((bs, bn)) => {
                        let (a, b) = (libm::fabs(n), libm::fabs(bn));
                        if a < b - 1e-12 || (libm::fabs(a - b) <= 1e-12 && s < bs) {
                            Some((s, n))
                        } else {
                            Some((bs, bn))
                        }
                    }
                };
            }
        }
        let (s, n) = best.ok_or(TrackError::NoProjection { x, y })?;
        let (_, _, tan) = self.frame_at(s);
        let delta_phi = wrap_angle(heading - libm::atan2(tan[1], tan[0]));
        Ok(FrenetPose { s, n, delta_phi })
    }
}

fn circumcircle_curvature(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let ab = sub(b, a);
    let bc = sub(c, b);
    let ca = sub(a, c);
    let denom = norm(ab) * norm(bc) * norm(ca);
    if denom <= 0.0 {
        return 0.0;
    }
    2.0 * cross(ab, bc) / denom
}

/// Centred-difference slopes of vertex values over arc length, one-sided at
/// the ends of an open track.
fn vertex_slopes(values: &[f64], stations: &[f64], closed: bool) -> Vec<f64> {
    let m = values.len();
    let segs = stations.len() - 1;
    let len = |k: usize| stations[k + 1] - stations[k];
    (0..m)
        .map(|i| {
            if closed {
                let p = (i + m - 1) % m;
                (values[(i + 1) % m] - values[p]) / (len(i % segs) + len((i + segs - 1) % segs))
            } else if i == 0 {
                (values[1] - values[0]) / len(0)
            } else if i == m - 1 {
                (values[m - 1] - values[m - 2]) / len(m - 2)
            } else {
                (values[i + 1] - values[i - 1]) / (len(i) + len(i - 1))
            }
        })
        .collect()
}

fn smooth(raw: &[f64], window: usize, closed: bool) -> Vec<f64> {
    let m = raw.len();
    if window == 0 {
        return raw.to_vec();
    }
    (0..m)
        .map(|i| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for off in -(window as isize)..=(window as isize) {
                let k = i as isize + off;
                let idx = if closed {
                    Some(k.rem_euclid(m as isize) as usize)
                } else if k >= 0 && (k as usize) < m {
                    Some(k as usize)
                } else {
                    None
                };
                if let Some(idx) = idx {
                    sum += raw[idx];
                    count += 1;
                }
            }
            sum / count as f64
        })
        .collect()
}

fn solve_quadratic(a: f64, b: f64, c: f64, out: &mut [f64; 2]) {
    let scale_ = libm::fabs(a).max(libm::fabs(b)).max(libm::fabs(c));
    if scale_ == 0.0 {
        return;
    }
    if libm::fabs(a) <= 1e-12 * scale_ {
        if b != 0.0 {
            out[0] = -c / b;
        }
        return;
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        if disc > -1e-14 * b * b {
            out[0] = -b / (2.0 * a);
        }
        return;
    }
    let sq = libm::sqrt(disc);
    let qv = -0.5 * (b + if b >= 0.0 { sq } else { -sq });
    out[0] = qv / a;
    if qv != 0.0 {
        out[1] = c / qv;
    }
}

fn refine_root(a: f64, b: f64, c: f64, mut t: f64) -> f64 {
    for _ in 0..3 {
        let f = (a * t + b) * t + c;
        let df = 2.0 * a * t + b;
        if df == 0.0 {
            break;
        }
        t -= f / df;
    }
    t
}

#[inline]
fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}
#[inline]
fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}
#[inline]
fn scale(a: [f64; 2], k: f64) -> [f64; 2] {
    [a[0] * k, a[1] * k]
}
#[inline]
fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}
#[inline]
fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}
#[inline]
fn norm(a: [f64; 2]) -> f64 {
    libm::hypot(a[0], a[1])
}

/// Sample helpers for building analytic tracks in tests and tools.
pub mod shapes {
    use super::*;
    use core::f64::consts::PI;

    /// Circle of the given radius, counter-clockwise, `count` vertices.
    pub fn circle(radius: f64, count: usize, width: f64) -> TrackSpec {
        let pts = (0..count)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / count as f64;
                [radius * libm::cos(a), radius * libm::sin(a)]
            })
            .collect::<Vec<_>>();
        TrackSpec::new(pts, alloc::vec![width; count], alloc::vec![width; count], true).expect("valid circle")
    }

    /// Straight open track along +x starting at the origin.
    pub fn straight(length: f64, count: usize, width: f64) -> TrackSpec {
        let pts = (0..count)
            .map(|i| [length * i as f64 / (count - 1) as f64, 0.0])
            .collect::<Vec<_>>();
        TrackSpec::new(pts, alloc::vec![width; count], alloc::vec![width; count], false).expect("valid straight")
    }

    /// Counter-clockwise ellipse with semi-axes `a` (x) and `b` (y).
    pub fn ellipse(a: f64, b: f64, count: usize, width: f64) -> TrackSpec {
        let pts = ellipse_points(a, b, count);
        TrackSpec::new(pts, alloc::vec![width; count], alloc::vec![width; count], true).expect("valid ellipse")
    }

    pub fn ellipse_points(a: f64, b: f64, count: usize) -> Vec<[f64; 2]> {
        (0..count)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / count as f64;
                [a * libm::cos(t), b * libm::sin(t)]
            })
            .collect()
    }
}
