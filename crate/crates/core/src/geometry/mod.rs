//! Room geometry: polygonal floor plans, interior wall panels,
//! line-of-sight tests and billiard-model user mobility.
//!
//! All coordinates are in meters. A room is described by a simple closed
//! outline polygon, a set of interior wall segments ("panels"), a ceiling
//! height and the 3D positions of its cells. The outline reflects moving
//! users and bounds containment; only panels block line of sight, since
//! every link in a room is intra-room.

mod mobility;

pub use mobility::{generate_trajectories, MobilityConfig, Trajectory};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Tolerance used for on-boundary and degeneracy checks, in meters.
const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("layout document is not valid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("failed to read layout file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("outline must have at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("outline vertex {0} is not finite")]
    NonFiniteVertex(usize),
    #[error("outline has a zero-length edge at vertex {0}")]
    ZeroLengthEdge(usize),
    #[error("outline is self-intersecting (edges {0} and {1} cross)")]
    SelfIntersecting(usize, usize),
    #[error("outline encloses no area")]
    ZeroArea,
    #[error("room height must be positive, got {0}")]
    BadHeight(f64),
    #[error("panel {0} has zero length")]
    ZeroLengthPanel(usize),
    #[error("panel {0} does not lie inside the room outline")]
    PanelOutsideRoom(usize),
    #[error("room must contain at least one cell")]
    NoCells,
    #[error("cell {0} at ({1}, {2}) lies outside the room outline")]
    CellOutsideRoom(usize, f64, f64),
    #[error("cell {index} height {z} must satisfy 0 < z <= room height {height}")]
    BadCellHeight { index: usize, z: f64, height: f64 },
    #[error("unknown builtin room {0:?} (expected one of A..E)")]
    UnknownRoom(String),
    #[error("room interior is empty: no interior point found")]
    EmptyInterior,
    #[error("invalid mobility config: {0}")]
    InvalidMobility(String),
}

/// A 2D point or vector, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// 2D cross product (z-component of the 3D cross product).
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    /// Unit perpendicular, rotated +90 degrees.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        Vec2::new(self.x / n, self.y / n)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl fmt::Display for Vec2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// A 3D position, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn xy(self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn distance(self, other: Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

/// A 2D line segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub fn new(a: Vec2, b: Vec2) -> Self {
        Segment { a, b }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

/// True if `p` lies on segment `s` (within `GEOM_EPS`).
fn point_on_segment(p: Vec2, s: &Segment) -> bool {
    let d = s.b - s.a;
    let len = d.norm();
    if len < GEOM_EPS {
        return (p - s.a).norm() < GEOM_EPS;
    }
    // Perpendicular distance from the segment's line, then a range check.
    let cross = (p - s.a).cross(d) / len;
    if cross.abs() > GEOM_EPS {
        return false;
    }
    let t = (p - s.a).dot(d) / (len * len);
    (-GEOM_EPS..=1.0 + GEOM_EPS).contains(&t)
}

/// Inclusive segment intersection: shared endpoints and endpoint-on-segment
/// touches count as intersections.
pub fn segments_intersect(s1: &Segment, s2: &Segment) -> bool {
    let d1 = orient(s2.a, s2.b, s1.a);
    let d2 = orient(s2.a, s2.b, s1.b);
    let d3 = orient(s1.a, s1.b, s2.a);
    let d4 = orient(s1.a, s1.b, s2.b);

    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    point_on_segment(s1.a, s2)
        || point_on_segment(s1.b, s2)
        || point_on_segment(s2.a, s1)
        || point_on_segment(s2.b, s1)
}

/// Strict (proper) crossing: the segments cross at a single interior point
/// of both. Touches and collinear overlaps do not count.
fn segments_cross_properly(s1: &Segment, s2: &Segment) -> bool {
    let d1 = orient(s2.a, s2.b, s1.a);
    let d2 = orient(s2.a, s2.b, s1.b);
    let d3 = orient(s1.a, s1.b, s2.a);
    let d4 = orient(s1.a, s1.b, s2.b);
    ((d1 > GEOM_EPS && d2 < -GEOM_EPS) || (d1 < -GEOM_EPS && d2 > GEOM_EPS))
        && ((d3 > GEOM_EPS && d4 < -GEOM_EPS) || (d3 < -GEOM_EPS && d4 > GEOM_EPS))
}

/// Identifiers of the five canonical rooms shipped with the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoomId {
    A,
    B,
    C,
    D,
    E,
}

impl RoomId {
    pub const ALL: [RoomId; 5] = [RoomId::A, RoomId::B, RoomId::C, RoomId::D, RoomId::E];

    pub fn parse(s: &str) -> Result<RoomId, GeometryError> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" | "ROOM_A" => Ok(RoomId::A),
            "B" | "ROOM_B" => Ok(RoomId::B),
            "C" | "ROOM_C" => Ok(RoomId::C),
            "D" | "ROOM_D" => Ok(RoomId::D),
            "E" | "ROOM_E" => Ok(RoomId::E),
            other => Err(GeometryError::UnknownRoom(other.to_string())),
        }
    }
}

impl fmt::Display for RoomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            RoomId::A => 'A',
            RoomId::B => 'B',
            RoomId::C => 'C',
            RoomId::D => 'D',
            RoomId::E => 'E',
        };
        write!(f, "{c}")
    }
}

/// On-disk layout document. Units are meters throughout.
#[derive(Debug, Serialize, Deserialize)]
struct LayoutDoc {
    name: String,
    outline: Vec<[f64; 2]>,
    #[serde(default)]
    panels: Vec<[[f64; 2]; 2]>,
    height: f64,
    cells: Vec<[f64; 3]>,
}

/// A validated room: simple closed outline, interior panels, cells.
#[derive(Debug, Clone)]
pub struct RoomLayout {
    name: String,
    outline: Vec<Vec2>,
    panels: Vec<Segment>,
    height: f64,
    cells: Vec<Point3>,
    /// Outline edges followed by panels; the surfaces billiard motion
    /// reflects off.
    walls: Vec<Segment>,
    bbox: (Vec2, Vec2),
}

impl RoomLayout {
    pub fn new(
        name: impl Into<String>,
        outline: Vec<Vec2>,
        panels: Vec<Segment>,
        height: f64,
        cells: Vec<Point3>,
    ) -> Result<Self, GeometryError> {
        if outline.len() < 3 {
            return Err(GeometryError::TooFewVertices(outline.len()));
        }
        for (i, v) in outline.iter().enumerate() {
            if !v.x.is_finite() || !v.y.is_finite() {
                return Err(GeometryError::NonFiniteVertex(i));
            }
        }
        let n = outline.len();
        let edges: Vec<Segment> = (0..n)
            .map(|i| Segment::new(outline[i], outline[(i + 1) % n]))
            .collect();
        for (i, e) in edges.iter().enumerate() {
            if e.length() < GEOM_EPS {
                return Err(GeometryError::ZeroLengthEdge(i));
            }
        }
        // Non-adjacent edge pairs must not intersect at all; adjacent pairs
        // share exactly their common vertex.
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    continue;
                }
                if segments_intersect(&edges[i], &edges[j]) {
                    return Err(GeometryError::SelfIntersecting(i, j));
                }
            }
        }
        let area2: f64 = (0..n)
            .map(|i| outline[i].cross(outline[(i + 1) % n]))
            .sum();
        if area2.abs() < GEOM_EPS {
            return Err(GeometryError::ZeroArea);
        }
        if !(height > 0.0) {
            return Err(GeometryError::BadHeight(height));
        }

        let mut layout = RoomLayout {
            name: name.into(),
            outline,
            panels: Vec::new(),
            height,
            cells: Vec::new(),
            walls: edges,
            bbox: (Vec2::new(0.0, 0.0), Vec2::new(0.0, 0.0)),
        };
        layout.bbox = layout.compute_bbox();

        for (i, p) in panels.iter().enumerate() {
            if p.length() < GEOM_EPS {
                return Err(GeometryError::ZeroLengthPanel(i));
            }
            let endpoints_ok = layout.contains(p.a) && layout.contains(p.b);
            let crosses_outline = layout.walls[..layout.outline.len()]
                .iter()
                .any(|e| segments_cross_properly(p, e));
            if !endpoints_ok || crosses_outline {
                return Err(GeometryError::PanelOutsideRoom(i));
            }
        }
        if cells.is_empty() {
            return Err(GeometryError::NoCells);
        }
        for (i, c) in cells.iter().enumerate() {
            if !layout.contains(c.xy()) {
                return Err(GeometryError::CellOutsideRoom(i, c.x, c.y));
            }
            if !(c.z > 0.0 && c.z <= height) {
                return Err(GeometryError::BadCellHeight {
                    index: i,
                    z: c.z,
                    height,
                });
            }
        }

        layout.walls.extend(panels.iter().copied());
        layout.panels = panels;
        layout.cells = cells;
        Ok(layout)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn outline(&self) -> &[Vec2] {
        &self.outline
    }

    pub fn panels(&self) -> &[Segment] {
        &self.panels
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn cells(&self) -> &[Point3] {
        &self.cells
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// All reflecting surfaces: outline edges first, then panels.
    pub(crate) fn walls(&self) -> &[Segment] {
        &self.walls
    }

    fn compute_bbox(&self) -> (Vec2, Vec2) {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.outline {
            min.x = min.x.min(v.x);
            min.y = min.y.min(v.y);
            max.x = max.x.max(v.x);
            max.y = max.y.max(v.y);
        }
        (min, max)
    }

    /// Axis-aligned bounding box of the outline as (min, max).
    pub fn bounding_box(&self) -> (Vec2, Vec2) {
        self.bbox
    }

    /// True if `p` lies inside or on the outline (even-odd rule, boundary
    /// inclusive). Panels never affect containment.
    pub fn contains(&self, p: Vec2) -> bool {
        let (min, max) = self.bbox;
        if p.x < min.x - GEOM_EPS
            || p.x > max.x + GEOM_EPS
            || p.y < min.y - GEOM_EPS
            || p.y > max.y + GEOM_EPS
        {
            return false;
        }
        let n = self.outline.len();
        for i in 0..n {
            let s = Segment::new(self.outline[i], self.outline[(i + 1) % n]);
            if point_on_segment(p, &s) {
                return true;
            }
        }
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let vi = self.outline[i];
            let vj = self.outline[j];
            if (vi.y > p.y) != (vj.y > p.y) {
                let x_cross = vj.x + (p.y - vj.y) / (vi.y - vj.y) * (vi.x - vj.x);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// True if the straight 2D path between the projections of `a` and `b`
    /// crosses no interior panel. Touching a panel endpoint counts as an
    /// obstruction. The outline itself never blocks intra-room links.
    pub fn has_los(&self, a: Point3, b: Point3) -> bool {
        let path = Segment::new(a.xy(), b.xy());
        !self.panels.iter().any(|p| segments_intersect(&path, p))
    }
}

/// Advances one billiard step: the position moves by `vel`, reflecting
/// specularly off outline edges and panels. Returns the new position and
/// (possibly reflected) velocity; speed is preserved.
pub fn billiard_step(pos: Vec2, vel: Vec2, layout: &RoomLayout) -> (Vec2, Vec2) {
    const MAX_BOUNCES: usize = 64;
    // Tiny forward nudge after each bounce so the next search does not
    // re-detect the wall we just left.
    const NUDGE: f64 = 1e-9;

    let mut p = pos;
    let mut v = vel;
    let mut disp = vel;
    let mut skip: Option<usize> = None;

    for _ in 0..MAX_BOUNCES {
        match first_wall_hit(p, disp, layout.walls(), skip) {
            None => {
                p = p + disp;
                break;
            }
            Some((t, wall_idx)) => {
                let hit = p + disp.scale(t);
                let wall = &layout.walls()[wall_idx];
                let normal = (wall.b - wall.a).perp().normalized();
                let reflect =
                    |u: Vec2| u - normal.scale(2.0 * u.dot(normal));
                let remaining = disp.scale(1.0 - t);
                v = reflect(v);
                disp = reflect(remaining);
                let dir = if disp.norm() > 0.0 {
                    disp.normalized()
                } else {
                    v.normalized()
                };
                p = hit + dir.scale(NUDGE);
                skip = Some(wall_idx);
            }
        }
    }

    if layout.contains(p) {
        (p, v)
    } else {
        // Floating-point leak through a corner; stay put and turn around.
        (pos, vel.scale(-1.0))
    }
}

/// Earliest intersection of the ray `p + t*d`, `t` in (0, 1], with any wall,
/// excluding `skip` (the wall bounced off in the previous iteration).
fn first_wall_hit(
    p: Vec2,
    d: Vec2,
    walls: &[Segment],
    skip: Option<usize>,
) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, w) in walls.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        let e = w.b - w.a;
        let denom = d.cross(e);
        if denom.abs() < 1e-15 {
            continue; // parallel to the wall
        }
        let ap = w.a - p;
        let t = ap.cross(e) / denom;
        let s = ap.cross(d) / denom;
        if t > 1e-12 && t <= 1.0 && (-1e-12..=1.0 + 1e-12).contains(&s) {
            match best {
                Some((tb, _)) if tb <= t => {}
                _ => best = Some((t, i)),
            }
        }
    }
    best
}

/// Parses and validates a layout document from JSON text.
pub fn load_layout_str(json: &str) -> Result<RoomLayout, GeometryError> {
    let doc: LayoutDoc = serde_json::from_str(json)?;
    RoomLayout::new(
        doc.name,
        doc.outline.iter().map(|v| Vec2::new(v[0], v[1])).collect(),
        doc.panels
            .iter()
            .map(|p| Segment::new(Vec2::new(p[0][0], p[0][1]), Vec2::new(p[1][0], p[1][1])))
            .collect(),
        doc.height,
        doc.cells
            .iter()
            .map(|c| Point3::new(c[0], c[1], c[2]))
            .collect(),
    )
}

/// Loads and validates a layout document from a file.
pub fn load_layout_file(path: impl AsRef<Path>) -> Result<RoomLayout, GeometryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_layout_str(&text)
}

/// Returns one of the five canonical rooms shipped with the crate.
pub fn builtin_layout(id: RoomId) -> RoomLayout {
    let json = match id {
        RoomId::A => include_str!("../../data/rooms/room_a.json"),
        RoomId::B => include_str!("../../data/rooms/room_b.json"),
        RoomId::C => include_str!("../../data/rooms/room_c.json"),
        RoomId::D => include_str!("../../data/rooms/room_d.json"),
        RoomId::E => include_str!("../../data/rooms/room_e.json"),
    };
    load_layout_str(json).expect("builtin room layouts are valid")
}
