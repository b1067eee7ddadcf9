//! Closed two-lane track made of waypoint rings.
//!
//! Both lanes are traversed counter-clockwise. Lane 0 is the inner ring and
//! lane 1 the outer ring. Every query treats a ring as the closed polyline
//! through its waypoints.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Point2};

pub const DEFAULT_SPACING: f64 = 0.1;
pub const DEFAULT_LANE_WIDTH: f64 = 0.22;
pub const DEFAULT_HALF_WIDTH: f64 = 0.22;
const MAX_SPACING: f64 = 0.2;
const MIN_WAYPOINTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LaneId {
    Inner = 0,
    Outer = 1,
}

impl LaneId {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> LaneId {
        match self {
            LaneId::Inner => LaneId::Outer,
            LaneId::Outer => LaneId::Inner,
        }
    }

    pub fn from_index(i: usize) -> Option<LaneId> {
        match i {
            0 => Some(LaneId::Inner),
            1 => Some(LaneId::Outer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub position: Point2,
    pub lane_id: LaneId,
    pub index: usize,
}

/// One closed ring with precomputed cumulative arc lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    waypoints: Vec<Waypoint>,
    /// `cumulative[i]` is the arc length at waypoint `i`; the last entry is the ring length.
    cumulative: Vec<f64>,
}

impl Lane {
    fn new(lane_id: LaneId, points: &[Point2]) -> Self {
        let waypoints: Vec<Waypoint> = points
            .iter()
            .enumerate()
            .map(|(index, &position)| Waypoint {
                position,
                lane_id,
                index,
            })
            .collect();
        let mut cumulative = Vec::with_capacity(points.len() + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for i in 0..points.len() {
            acc += points[i].distance(points[(i + 1) % points.len()]);
            cumulative.push(acc);
        }
        Lane {
            waypoints,
            cumulative,
        }
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Total ring length in meters.
    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap_or(&0.0)
    }

    /// Start and end point of segment `i` (the last segment closes the ring).
    pub fn segment(&self, i: usize) -> (Point2, Point2) {
        let n = self.waypoints.len();
        (self.waypoints[i].position, self.waypoints[(i + 1) % n].position)
    }

    /// Point at arc length `s`, wrapped onto the ring.
    pub fn point_at(&self, s: f64) -> Point2 {
        let length = self.length();
        let mut s = s.rem_euclid(length);
        if s >= length {
            s = 0.0;
        }
        let seg = self.cumulative.partition_point(|&c| c <= s) - 1;
        let seg = seg.min(self.waypoints.len() - 1);
        let (a, b) = self.segment(seg);
        let seg_len = self.cumulative[seg + 1] - self.cumulative[seg];
        if seg_len <= 0.0 {
            return a;
        }
        let t = (s - self.cumulative[seg]) / seg_len;
        a + (b - a) * t
    }
}

/// Result of projecting a point onto a lane centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneProjection {
    pub nearest_point: Point2,
    /// Signed distance to the centerline, positive to the left of travel.
    pub lateral_offset: f64,
    pub tangent_angle: f64,
    pub arc_position: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackMap {
    lanes: [Lane; 2],
    spacing: f64,
    lane_width: f64,
    track_half_width: f64,
}

impl Default for TrackMap {
    fn default() -> Self {
        TrackMap::rounded_rectangle(0.6, 0.365, 0.5, DEFAULT_LANE_WIDTH, DEFAULT_SPACING)
            .expect("built-in track is valid")
    }
}

impl TrackMap {
    /// Builds a track from explicit rings, `[inner, outer]`.
    pub fn from_rings(
        inner: &[Point2],
        outer: &[Point2],
        spacing: f64,
        lane_width: f64,
        track_half_width: f64,
    ) -> Result<Self> {
        if !(lane_width > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lane width must be positive, got {lane_width}"
            )));
        }
        if !(track_half_width >= lane_width / 2.0) {
            return Err(Error::InvalidConfig(format!(
                "track half width {track_half_width} is below half the lane width"
            )));
        }
        for (name, ring) in [("inner", inner), ("outer", outer)] {
            if ring.len() < MIN_WAYPOINTS {
                return Err(Error::InvalidConfig(format!(
                    "{name} ring has {} waypoints, need at least {MIN_WAYPOINTS}",
                    ring.len()
                )));
            }
            for i in 0..ring.len() {
                let d = ring[i].distance(ring[(i + 1) % ring.len()]);
                if !(d > 0.0 && d <= MAX_SPACING) {
                    return Err(Error::InvalidConfig(format!(
                        "{name} ring waypoint {i}: spacing {d} outside (0, {MAX_SPACING}]"
                    )));
                }
            }
        }
        let lanes = [Lane::new(LaneId::Inner, inner), Lane::new(LaneId::Outer, outer)];
        if !(lanes[0].length() < lanes[1].length()) {
            return Err(Error::InvalidConfig(
                "inner ring must be shorter than outer ring".into(),
            ));
        }
        Ok(TrackMap {
            lanes,
            spacing,
            lane_width,
            track_half_width,
        })
    }

    /// Rounded-rectangle loop. `half_x`/`half_y` are half the straight lengths,
    /// `outer_radius` the corner radius of the outer lane. The inner lane is
    /// offset inward by `lane_width`.
    pub fn rounded_rectangle(
        half_x: f64,
        half_y: f64,
        outer_radius: f64,
        lane_width: f64,
        spacing: f64,
    ) -> Result<Self> {
        let inner_radius = outer_radius - lane_width;
        if !(inner_radius > 0.0) || !(half_x >= 0.0) || !(half_y >= 0.0) || !(spacing > 0.0) {
            return Err(Error::InvalidConfig(
                "rounded rectangle needs positive inner radius and spacing".into(),
            ));
        }
        let inner = sample_rounded_rectangle(half_x, half_y, inner_radius, spacing);
        let outer = sample_rounded_rectangle(half_x, half_y, outer_radius, spacing);
        TrackMap::from_rings(&inner, &outer, spacing, lane_width, DEFAULT_HALF_WIDTH.max(lane_width / 2.0))
    }

    pub fn lane(&self, lane: LaneId) -> &Lane {
        &self.lanes[lane.index()]
    }

    pub fn lanes(&self) -> &[Lane; 2] {
        &self.lanes
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn lane_width(&self) -> f64 {
        self.lane_width
    }

    pub fn track_half_width(&self) -> f64 {
        self.track_half_width
    }

    /// Projects `point` onto the closed polyline of `lane`.
    ///
    /// Ties between equally distant segments go to the lowest segment index.
    pub fn project(&self, lane: LaneId, point: Point2) -> LaneProjection {
        let ring = self.lane(lane);
        let mut best_d2 = f64::INFINITY;
        let mut best = (0usize, 0.0f64, point);
        for i in 0..ring.len() {
            let (a, b) = ring.segment(i);
            let ab = b - a;
            let len2 = ab.dot(ab);
            let t = if len2 > 0.0 {
                ((point - a).dot(ab) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = a + ab * t;
            let d = point - q;
            let d2 = d.dot(d);
            if d2 < best_d2 {
                best_d2 = d2;
                best = (i, t, q);
            }
        }
        let (seg, t, nearest) = best;
        let (a, b) = ring.segment(seg);
        let dir = b - a;
        let dist = point.distance(nearest);
        let side = dir.cross(point - nearest);
        let lateral_offset = if side >= 0.0 { dist } else { -dist };
        let seg_len = ring.cumulative[seg + 1] - ring.cumulative[seg];
        LaneProjection {
            nearest_point: nearest,
            lateral_offset,
            tangent_angle: wrap_angle(dir.y.atan2(dir.x)),
            arc_position: ring.cumulative[seg] + t * seg_len,
        }
    }

    /// Point `lookahead` meters further along the ring from a projection.
    pub fn goal_point(&self, lane: LaneId, proj: &LaneProjection, lookahead: f64) -> Point2 {
        self.lane(lane).point_at(proj.arc_position + lookahead)
    }

    /// True when the point lies outside both lanes' envelope. The boundary
    /// itself counts as on-track.
    pub fn is_off_track(&self, point: Point2) -> bool {
        let d = self.min_center_distance(point);
        d > self.track_half_width
    }

    /// Smallest unsigned distance to either centerline.
    pub fn min_center_distance(&self, point: Point2) -> f64 {
        let a = self.project(LaneId::Inner, point).lateral_offset.abs();
        let b = self.project(LaneId::Outer, point).lateral_offset.abs();
        a.min(b)
    }

    /// Lane whose centerline is closest to `point` (inner on ties).
    pub fn nearest_lane(&self, point: Point2) -> LaneId {
        let a = self.project(LaneId::Inner, point).lateral_offset.abs();
        let b = self.project(LaneId::Outer, point).lateral_offset.abs();
        if b < a {
            LaneId::Outer
        } else {
            LaneId::Inner
        }
    }

    /// Serializes to the line-oriented track format.
    pub fn to_track_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "lanes 2 spacing {} width {} half_width {}",
            fmt_sig9(self.spacing),
            fmt_sig9(self.lane_width),
            fmt_sig9(self.track_half_width)
        );
        for lane in &self.lanes {
            for w in lane.waypoints() {
                let _ = writeln!(
                    out,
                    "{} {} {}",
                    w.lane_id.index(),
                    fmt_sig9(w.position.x),
                    fmt_sig9(w.position.y)
                );
            }
        }
        out
    }

    pub fn parse_track(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "missing header line"))?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() != 8
            || tokens[0] != "lanes"
            || tokens[2] != "spacing"
            || tokens[4] != "width"
            || tokens[6] != "half_width"
        {
            return Err(Error::parse(
                origin,
                hline,
                "expected `lanes 2 spacing S width W half_width H`",
            ));
        }
        if tokens[1] != "2" {
            return Err(Error::parse(origin, hline, "only 2-lane tracks are supported"));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::parse(origin, hline, format!("bad number `{s}`")))
        };
        let spacing = num(tokens[3])?;
        let width = num(tokens[5])?;
        let half_width = num(tokens[7])?;

        let mut rings: [Vec<Point2>; 2] = [Vec::new(), Vec::new()];
        for (lineno, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(Error::parse(origin, lineno, "expected `lane_id x y`"));
            }
            let lane: usize = f[0]
                .parse()
                .ok()
                .filter(|&l| l < 2)
                .ok_or_else(|| Error::parse(origin, lineno, format!("bad lane id `{}`", f[0])))?;
            let coord = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(origin, lineno, format!("bad coordinate `{s}`")))
            };
            rings[lane].push(Point2::new(coord(f[1])?, coord(f[2])?));
        }
        TrackMap::from_rings(&rings[0], &rings[1], spacing, width, half_width)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrackMap::parse_track(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_track_string()).map_err(|e| Error::io(path, e))
    }
}

/// Formats a float rounded to 9 significant digits, using the shortest
/// representation of the rounded value.
pub fn fmt_sig9(v: f64) -> String {
    let rounded: f64 = format!("{v:.8e}").parse().unwrap_or(v);
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded}")
}

fn sample_rounded_rectangle(hx: f64, hy: f64, r: f64, spacing: f64) -> Vec<Point2> {
    // Pieces in travel order starting mid bottom straight, heading +x.
    let straight_x = 2.0 * hx;
    let straight_y = 2.0 * hy;
    let quarter = 0.5 * PI * r;
    let length = 2.0 * straight_x + 2.0 * straight_y + 4.0 * quarter;
    let n = (length / spacing).ceil() as usize;
    let corners = [
        Point2::new(hx, -hy),
        Point2::new(hx, hy),
        Point2::new(-hx, hy),
        Point2::new(-hx, -hy),
    ];
    let point_at = |s: f64| -> Point2 {
        let mut s = s;
        // first half of bottom straight
        if s < hx {
            return Point2::new(s, -hy - r);
        }
        s -= hx;
        let straights = [straight_y, straight_x, straight_y, hx];
        for k in 0..4 {
            if s < quarter {
                let phi = -0.5 * PI + k as f64 * 0.5 * PI + s / r;
                let c = corners[k];
                return Point2::new(c.x + r * phi.cos(), c.y + r * phi.sin());
            }
            s -= quarter;
            let len = straights[k];
            if s < len || k == 3 {
                return match k {
                    0 => Point2::new(hx + r, -hy + s),
                    1 => Point2::new(hx - s, hy + r),
                    2 => Point2::new(-hx - r, hy - s),
                    _ => Point2::new(-hx + s, -hy - r),
                };
            }
            s -= len;
        }
        unreachable!()
    };
    (0..n).map(|i| point_at(i as f64 * length / n as f64)).collect()
}
