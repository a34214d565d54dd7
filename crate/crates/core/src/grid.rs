//! Particle sample space, sketch polygons, and camera back-projection.
//!
//! A [`ParticleGrid`] is the finite hidden-state alphabet of the tracker: each
//! state is one candidate target position on the ground plane. Sketches are
//! resolved against it into a [`ParticleMask`], the set of enclosed particles.
//!
//! Pixel convention: origin at the top-left of the image, `u` to the right,
//! `v` downwards. A face-down camera with zero yaw maps image right to world
//! `+x` and image down to world `-y`, so an unrotated image reads like a map.

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Bounds {
    pub fn new(x: [f64; 2], y: [f64; 2]) -> Result<Self> {
        let b = Self { x, y };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.x.iter().chain(self.y.iter()).all(|v| v.is_finite());
        if !finite || self.x[1] <= self.x[0] || self.y[1] <= self.y[0] {
            return Err(Error::DegenerateBounds(format!("x {:?}, y {:?}", self.x, self.y)));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    pub fn height(&self) -> f64 {
        self.y[1] - self.y[0]
    }

    pub fn contains(&self, p: &Point2<f64>) -> bool {
        p.x >= self.x[0] && p.x <= self.x[1] && p.y >= self.y[0] && p.y <= self.y[1]
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { x: [self.x[0] + dx, self.x[1] + dx], y: [self.y[0] + dy, self.y[1] + dy] }
    }

    /// Corners in counter-clockwise order, as a world-frame polygon.
    pub fn to_polygon(&self) -> Polygon {
        Polygon {
            vertices: vec![
                Point2::new(self.x[0], self.y[0]),
                Point2::new(self.x[1], self.y[0]),
                Point2::new(self.x[1], self.y[1]),
                Point2::new(self.x[0], self.y[1]),
            ],
            frame: Frame::World,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// Row-major lattice: index `r * cols + c`, rows along `y`, columns along `x`.
    Regular {
        rows: usize,
        cols: usize,
    },
    Irregular,
}

/// The discrete sample space of candidate target positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleGrid {
    positions: Vec<Point2<f64>>,
    bounds: Bounds,
    layout: Layout,
}

impl ParticleGrid {
    /// Particles at the cell centers of a uniform `rows x cols` lattice over `bounds`.
    pub fn regular(bounds: Bounds, rows: usize, cols: usize) -> Result<Self> {
        bounds.validate()?;
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidGrid(format!("rows ({rows}) and cols ({cols}) must be at least 1")));
        }
        let dx = bounds.width() / cols as f64;
        let dy = bounds.height() / rows as f64;
        let mut positions = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                positions.push(Point2::new(bounds.x[0] + (c as f64 + 0.5) * dx, bounds.y[0] + (r as f64 + 0.5) * dy));
            }
        }
        Ok(Self { positions, bounds, layout: Layout::Regular { rows, cols } })
    }

    /// Arbitrary particle placement, e.g. along roads. Positions must be
    /// inside `bounds` and pairwise distinct.
    pub fn from_positions(bounds: Bounds, positions: Vec<Point2<f64>>) -> Result<Self> {
        bounds.validate()?;
        if positions.is_empty() {
            return Err(Error::InvalidGrid("at least one particle is required".into()));
        }
        if let Some(p) = positions.iter().find(|p| !bounds.contains(p)) {
            return Err(Error::InvalidGrid(format!("particle ({}, {}) lies outside the bounds", p.x, p.y)));
        }
        let mut sorted: Vec<(f64, f64)> = positions.iter().map(|p| (p.x, p.y)).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite positions"));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidGrid("particle positions must be distinct".into()));
        }
        Ok(Self { positions, bounds, layout: Layout::Irregular })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point2<f64>] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> Point2<f64> {
        self.positions[i]
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Index of the particle closest to `p` (lowest index on ties).
    pub fn nearest(&self, p: &Point2<f64>) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, q) in self.positions.iter().enumerate() {
            let d = (q - p).norm_squared();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Translated copy: every particle shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        match self.layout {
            Layout::Regular { rows, cols } => {
                Self::regular(self.bounds.translated(dx, dy), rows, cols).expect("translation keeps a valid grid")
            }
            Layout::Irregular => Self {
                positions: self.positions.iter().map(|p| Point2::new(p.x + dx, p.y + dy)).collect(),
                bounds: self.bounds.translated(dx, dy),
                layout: Layout::Irregular,
            },
        }
    }
}

/// Convenience wrapper for [`ParticleGrid::regular`].
pub fn build_grid(bounds: Bounds, rows: usize, cols: usize) -> Result<ParticleGrid> {
    ParticleGrid::regular(bounds, rows, cols)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    #[serde(rename = "px")]
    Pixel,
    #[serde(rename = "world")]
    World,
}

impl Frame {
    pub fn as_str(&self) -> &'static str {
        match self {
            Frame::Pixel => "px",
            Frame::World => "world",
        }
    }
}

/// A simple closed polygon, vertices in order, tagged by coordinate frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point2<f64>>,
    frame: Frame,
}

impl Polygon {
    /// Validates at least three distinct vertices and no self-intersection.
    /// A repeated closing vertex (last == first) is dropped.
    pub fn new(mut vertices: Vec<Point2<f64>>, frame: Frame) -> Result<Self> {
        if vertices.len() > 1 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!("{} vertices, need at least 3", vertices.len())));
        }
        if vertices.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(Error::InvalidPolygon("non-finite vertex".into()));
        }
        let n = vertices.len();
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(Error::InvalidPolygon(format!("repeated vertex at index {i}")));
            }
        }
        let poly = Self { vertices, frame };
        if poly.signed_area() == 0.0 {
            return Err(Error::InvalidPolygon("zero area".into()));
        }
        if let Some((i, j)) = poly.first_self_intersection() {
            return Err(Error::InvalidPolygon(format!("edges {i} and {j} intersect")));
        }
        Ok(poly)
    }

    /// Regular `n`-gon inscribed in the circle of `radius` around `center`.
    pub fn regular(center: Point2<f64>, radius: f64, n: usize, frame: Frame) -> Result<Self> {
        if !(radius > 0.0) || n < 3 {
            return Err(Error::InvalidPolygon(format!("regular polygon needs radius > 0 and n >= 3 (radius {radius}, n {n})")));
        }
        let vertices = (0..n)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                Point2::new(center.x + radius * th.cos(), center.y + radius * th.sin())
            })
            .collect();
        Self::new(vertices, frame)
    }

    pub fn vertices(&self) -> &[Point2<f64>] {
        &self.vertices
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn reversed(&self) -> Self {
        let mut vertices = self.vertices.clone();
        vertices.reverse();
        Self { vertices, frame: self.frame }
    }

    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        let mut acc = 0.0;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            acc += a.x * b.y - b.x * a.y;
        }
        0.5 * acc
    }

    fn first_self_intersection(&self) -> Option<(usize, usize)> {
        let n = self.vertices.len();
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                let (c, d) = (self.vertices[j], self.vertices[(j + 1) % n]);
                if adjacent {
                    // Adjacent edges share one endpoint; they only conflict if they fold back.
                    let (shared, p, q) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                    if orient(shared, p, q) == 0.0 && (p - shared).dot(&(q - shared)) > 0.0 {
                        return Some((i, j));
                    }
                } else if segments_intersect(a, b, c, d) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Membership with the boundary counted as inside.
    pub fn contains(&self, p: &Point2<f64>) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if on_segment(*p, a, b) {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn orient(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(p: Point2<f64>, a: Point2<f64>, b: Point2<f64>) -> bool {
    let scale = (b - a).norm().max(1.0);
    if orient(a, b, p).abs() > 1e-12 * scale * scale {
        return false;
    }
    let eps = 1e-12 * scale;
    p.x >= a.x.min(b.x) - eps && p.x <= a.x.max(b.x) + eps && p.y >= a.y.min(b.y) - eps && p.y <= a.y.max(b.y) + eps
}

fn segments_intersect(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>, d: Point2<f64>) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0)) && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0)) {
        return true;
    }
    on_segment(c, a, b) || on_segment(d, a, b) || on_segment(a, c, d) || on_segment(b, c, d)
}

/// Binary membership vector over the particles of a grid, with at least one member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticleMask {
    bits: Vec<bool>,
    count: usize,
}

impl ParticleMask {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self> {
        let count = bits.iter().filter(|b| **b).count();
        if count == 0 {
            return Err(Error::EmptySketch);
        }
        Ok(Self { bits, count })
    }

    pub fn full(n: usize) -> Self {
        Self { bits: vec![true; n], count: n }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of enclosed particles (`M`).
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn contains(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn covers_all(&self) -> bool {
        self.count == self.bits.len()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(|(i, _)| i)
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: other.len() });
        }
        Self::from_bits(self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect())
    }
}

/// Particles inside (or on the boundary of) a world-frame polygon.
pub fn polygon_mask(grid: &ParticleGrid, poly: &Polygon) -> Result<ParticleMask> {
    if poly.frame() != Frame::World {
        return Err(Error::WrongFrame { expected: "world", got: poly.frame().as_str() });
    }
    ParticleMask::from_bits(grid.positions().iter().map(|p| poly.contains(p)).collect())
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
}

impl Intrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, self.skew, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, skew: 0.0 }
    }
}

/// Face-down camera: world position, yaw about the vertical axis, and intrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseWire", into = "PoseWire")]
pub struct CameraPose {
    position: Point3<f64>,
    yaw: f64,
    intrinsics: Matrix3<f64>,
}

#[derive(Serialize, Deserialize)]
struct PoseWire {
    position: [f64; 3],
    yaw: f64,
    #[serde(default)]
    intrinsics: Intrinsics,
}

impl TryFrom<PoseWire> for CameraPose {
    type Error = Error;
    fn try_from(w: PoseWire) -> Result<Self> {
        CameraPose::new(Point3::from(w.position), w.yaw, w.intrinsics.matrix())
    }
}

impl From<CameraPose> for PoseWire {
    fn from(p: CameraPose) -> Self {
        let k = p.intrinsics;
        let s = k[(2, 2)];
        PoseWire {
            position: [p.position.x, p.position.y, p.position.z],
            yaw: p.yaw,
            intrinsics: Intrinsics { fx: k[(0, 0)] / s, fy: k[(1, 1)] / s, cx: k[(0, 2)] / s, cy: k[(1, 2)] / s, skew: k[(0, 1)] / s },
        }
    }
}

impl CameraPose {
    /// `yaw` is wrapped into `[0, 2pi)`. `intrinsics` must be upper triangular
    /// with positive focal entries and a positive bottom-right entry.
    pub fn new(position: Point3<f64>, yaw: f64, intrinsics: Matrix3<f64>) -> Result<Self> {
        if !position.coords.iter().all(|v| v.is_finite()) || !yaw.is_finite() {
            return Err(Error::InvalidPose("non-finite position or yaw".into()));
        }
        let lower = [intrinsics[(1, 0)], intrinsics[(2, 0)], intrinsics[(2, 1)]];
        if lower.iter().any(|v| *v != 0.0) {
            return Err(Error::InvalidPose("intrinsics must be upper triangular".into()));
        }
        if !(intrinsics[(0, 0)] > 0.0 && intrinsics[(1, 1)] > 0.0 && intrinsics[(2, 2)] > 0.0) {
            return Err(Error::InvalidPose("intrinsics need positive focal and scale entries".into()));
        }
        Ok(Self { position, yaw: yaw.rem_euclid(std::f64::consts::TAU), intrinsics })
    }

    pub fn position(&self) -> Point3<f64> {
        self.position
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    /// Camera-to-world rotation for the face-down view. The matrix is its own inverse.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Matrix3::new(c, s, 0.0, s, -c, 0.0, 0.0, 0.0, -1.0)
    }

    /// Pixel coordinates of a world point, `None` if it is behind the camera.
    pub fn project_to_image(&self, world: &Point3<f64>) -> Option<Point2<f64>> {
        let cam = self.rotation().transpose() * (world - self.position);
        if cam.z <= 0.0 {
            return None;
        }
        let h = self.intrinsics * cam;
        Some(Point2::new(h.x / h.z, h.y / h.z))
    }

    /// Intersection of the ray through pixel `(u, v)` with the ground plane `z = 0`.
    pub fn back_project(&self, px: &Point2<f64>) -> Result<Point2<f64>> {
        if !(self.position.z > 0.0) {
            return Err(Error::InvalidPose(format!("camera altitude {} must be positive", self.position.z)));
        }
        let ray_cam = self
            .intrinsics
            .solve_upper_triangular(&Vector3::new(px.x, px.y, 1.0))
            .ok_or_else(|| Error::InvalidPose("singular intrinsics".into()))?;
        let ray = self.rotation() * ray_cam;
        if ray.z > -1e-12 * ray.norm() {
            return Err(Error::RayParallelToGround { u: px.x, v: px.y });
        }
        let s = -self.position.z / ray.z;
        Ok(Point2::new(self.position.x + s * ray.x, self.position.y + s * ray.y))
    }
}

/// Back-project a pixel-frame outline onto the ground plane.
pub fn project_to_ground(points_px: &[Point2<f64>], pose: &CameraPose) -> Result<Polygon> {
    let world = points_px.iter().map(|p| pose.back_project(p)).collect::<Result<Vec<_>>>()?;
    Polygon::new(world, Frame::World)
}
