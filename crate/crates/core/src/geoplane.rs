//! Planar geometry kernel.
//!
//! Coordinates are meters in a local planar frame. Polygons are validated on
//! construction so downstream code can rely on a positive area and simple
//! rings. The Gaussian overlap estimator integrates an isotropic bivariate
//! normal over a footprint with a shifted Halton point set pushed through
//! Box-Muller; axis-aligned rectangles use the closed form instead.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::mix64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("self-intersecting ring (edges {0} and {1})")]
    SelfIntersection(usize, usize),
    #[error("hole {0} is not strictly inside the exterior ring")]
    HoleOutside(usize),
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("position standard deviation must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("sample budget must be at least {min}, got {got}")]
    InvalidBudget { min: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn inflate(self, margin: f64) -> Rect {
        Rect {
            min: Point::new(self.min.x - margin, self.min.y - margin),
            max: Point::new(self.max.x + margin, self.max.y + margin),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.min.x <= other.max.x
            && other.min.x <= self.max.x
            && self.min.y <= other.max.y
            && other.min.y <= self.max.y
    }

    /// Distance from a point to the box (zero inside).
    pub fn distance(&self, p: Point) -> f64 {
        let dx = (self.min.x - p.x).max(0.0).max(p.x - self.max.x);
        let dy = (self.min.y - p.y).max(0.0).max(p.y - self.max.y);
        dx.hypot(dy)
    }
}

/// Simple polygon with optional holes. Rings are stored open (no closing
/// duplicate vertex).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    exterior: Vec<Point>,
    holes: Vec<Vec<Point>>,
}

impl Polygon {
    pub fn new(exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Result<Self, GeoError> {
        let exterior = open_ring(exterior)?;
        validate_ring(&exterior)?;
        let mut open_holes = Vec::with_capacity(holes.len());
        for (i, hole) in holes.into_iter().enumerate() {
            let hole = open_ring(hole)?;
            validate_ring(&hole)?;
            let inside = hole.iter().all(|&p| {
                ring_contains(&exterior, p) && ring_boundary_distance(&exterior, p) > 0.0
            });
            if !inside {
                return Err(GeoError::HoleOutside(i));
            }
            open_holes.push(hole);
        }
        let poly = Self {
            exterior,
            holes: open_holes,
        };
        if poly.area() <= 0.0 {
            return Err(GeoError::DegenerateGeometry("non-positive area".into()));
        }
        Ok(poly)
    }

    pub fn rectangle(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self, GeoError> {
        Self::new(
            vec![
                Point::new(min_x, min_y),
                Point::new(max_x, min_y),
                Point::new(max_x, max_y),
                Point::new(min_x, max_y),
            ],
            Vec::new(),
        )
    }

    pub fn exterior(&self) -> &[Point] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<Point>] {
        &self.holes
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(|h| h.as_slice()))
    }

    pub fn area(&self) -> f64 {
        let outer = ring_signed_area(&self.exterior).abs();
        let inner: f64 = self.holes.iter().map(|h| ring_signed_area(h).abs()).sum();
        outer - inner
    }

    pub fn perimeter(&self) -> f64 {
        self.rings().map(ring_perimeter).sum()
    }

    pub fn vertex_count(&self) -> usize {
        self.rings().map(|r| r.len()).sum()
    }

    pub fn bbox(&self) -> Rect {
        let mut min = self.exterior[0];
        let mut max = self.exterior[0];
        for p in &self.exterior {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Rect { min, max }
    }

    /// Area-weighted centroid (holes subtracted).
    pub fn centroid(&self) -> Point {
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut total = 0.0;
        let o = self.exterior[0];
        for (k, ring) in self.rings().enumerate() {
            let (a, x, y) = ring_moments(ring, o);
            // Orientation-independent: exterior counts positive, holes negative.
            let sign = if k == 0 { a.signum() } else { -a.signum() };
            cx += sign * x;
            cy += sign * y;
            total += sign * a;
        }
        Point::new(o.x + cx / (6.0 * total), o.y + cy / (6.0 * total))
    }

    /// The bounding rectangle when the polygon is exactly an axis-aligned
    /// rectangle without holes.
    pub fn as_axis_aligned_rect(&self) -> Option<Rect> {
        if !self.holes.is_empty() || self.exterior.len() != 4 {
            return None;
        }
        let n = self.exterior.len();
        let axis_aligned = (0..n).all(|i| {
            let a = self.exterior[i];
            let b = self.exterior[(i + 1) % n];
            a.x == b.x || a.y == b.y
        });
        axis_aligned.then(|| self.bbox())
    }

    /// Applies `f` to every vertex. Fails if the image is not a valid polygon.
    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Result<Self, GeoError> {
        Self::new(
            self.exterior.iter().map(|&p| f(p)).collect(),
            self.holes
                .iter()
                .map(|h| h.iter().map(|&p| f(p)).collect())
                .collect(),
        )
    }
}

fn open_ring(mut ring: Vec<Point>) -> Result<Vec<Point>, GeoError> {
    if ring.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(GeoError::NonFinite);
    }
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    ring.dedup();
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(GeoError::DegenerateGeometry(format!(
            "ring needs at least 3 distinct vertices, got {}",
            ring.len()
        )));
    }
    Ok(ring)
}

fn validate_ring(ring: &[Point]) -> Result<(), GeoError> {
    if ring_signed_area(ring).abs() <= 0.0 {
        return Err(GeoError::DegenerateGeometry("zero-area ring".into()));
    }
    let n = ring.len();
    for i in 0..n {
        let (a1, a2) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            let (b1, b2) = (ring[j], ring[(j + 1) % n]);
            if adjacent {
                // Adjacent edges share one vertex; they must not fold back onto each other.
                let shared = if j == i + 1 { a2 } else { a1 };
                let (pa, pb) = if j == i + 1 { (a1, b2) } else { (a2, b1) };
                if cross(shared, pa, pb) == 0.0 && dot(shared, pa, pb) > 0.0 {
                    return Err(GeoError::SelfIntersection(i, j));
                }
            } else if segments_intersect(a1, a2, b1, b2) {
                return Err(GeoError::SelfIntersection(i, j));
            }
        }
    }
    Ok(())
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn dot(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.x - o.x) + (a.y - o.y) * (b.y - o.y)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

// Shoelace terms are taken about a local origin; far from the coordinate
// origin the raw cross products would cancel catastrophically.
fn ring_signed_area(ring: &[Point]) -> f64 {
    ring_moments(ring, ring[0]).0
}

/// Signed area and first moments of a ring about `o` (moments scaled by 6).
fn ring_moments(ring: &[Point], o: Point) -> (f64, f64, f64) {
    let n = ring.len();
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let p = Point::new(ring[i].x - o.x, ring[i].y - o.y);
        let q = Point::new(ring[(i + 1) % n].x - o.x, ring[(i + 1) % n].y - o.y);
        let c = p.x * q.y - q.x * p.y;
        a += 0.5 * c;
        cx += (p.x + q.x) * c;
        cy += (p.y + q.y) * c;
    }
    (a, cx, cy)
}

fn ring_perimeter(ring: &[Point]) -> f64 {
    let n = ring.len();
    (0..n).map(|i| ring[i].distance(ring[(i + 1) % n])).sum()
}

fn ring_contains(ring: &[Point], p: Point) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn segment_distance(a: Point, b: Point, p: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.distance(Point::new(a.x + t * dx, a.y + t * dy))
}

fn ring_boundary_distance(ring: &[Point], p: Point) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| segment_distance(ring[i], ring[(i + 1) % n], p))
        .fold(f64::INFINITY, f64::min)
}

/// Area, perimeter and Polsby-Popper compactness of a footprint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootprintMetrics {
    pub area: f64,
    pub perimeter: f64,
    pub compactness: f64,
    pub vertex_count: usize,
}

pub fn footprint_metrics(poly: &Polygon) -> Result<FootprintMetrics, GeoError> {
    let area = poly.area();
    if !(area > 0.0) {
        return Err(GeoError::DegenerateGeometry(format!("area {area}")));
    }
    let perimeter = poly.perimeter();
    let compactness = (2.0 * (PI * area).sqrt() / perimeter).min(1.0);
    Ok(FootprintMetrics {
        area,
        perimeter,
        compactness,
        vertex_count: poly.vertex_count(),
    })
}

/// Even-odd containment over all rings. Points on any ring boundary count as
/// inside.
pub fn contains_point(poly: &Polygon, pt: Point) -> bool {
    let bbox = poly.bbox();
    let scale = (bbox.max.x - bbox.min.x)
        .abs()
        .max((bbox.max.y - bbox.min.y).abs())
        .max(1.0);
    let eps = 1e-9 * scale;
    if !bbox.inflate(eps).contains(pt) {
        return false;
    }
    if poly.rings().any(|r| ring_boundary_distance(r, pt) <= eps) {
        return true;
    }
    poly.rings()
        .fold(false, |inside, r| inside ^ ring_contains(r, pt))
}

/// Distance from a point to the nearest edge of any ring.
pub fn distance_to_boundary(poly: &Polygon, pt: Point) -> f64 {
    poly.rings()
        .map(|r| ring_boundary_distance(r, pt))
        .fold(f64::INFINITY, f64::min)
}

/// Isotropic bivariate normal position, covariance `sigma² I`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosition {
    pub mean: Point,
    pub sigma: f64,
}

impl GaussianPosition {
    pub fn new(mean: Point, sigma: f64) -> Result<Self, GeoError> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(GeoError::InvalidSigma(sigma));
        }
        Ok(Self { mean, sigma })
    }
}

pub const MIN_OVERLAP_BUDGET: usize = 256;
pub const DEFAULT_OVERLAP_BUDGET: usize = 4096;
pub const DEFAULT_OVERLAP_SEED: u64 = 0x05EE_D0F1_A7E5;

/// Beyond this many standard deviations the neglected mass is below 1e-15.
const TAIL_CUTOFF: f64 = 8.5;

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / SQRT_2)
}

/// Exact Gaussian mass over an axis-aligned rectangle.
pub fn rectangle_mass(pos: &GaussianPosition, rect: &Rect) -> f64 {
    let s = pos.sigma;
    let px = std_normal_cdf((rect.max.x - pos.mean.x) / s)
        - std_normal_cdf((rect.min.x - pos.mean.x) / s);
    let py = std_normal_cdf((rect.max.y - pos.mean.y) / s)
        - std_normal_cdf((rect.min.y - pos.mean.y) / s);
    (px * py).clamp(0.0, 1.0)
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

/// Seeded standard-normal quasi-random point set, reusable across calls.
#[derive(Clone, Debug)]
pub struct OverlapEstimator {
    offsets: Vec<Point>,
}

impl OverlapEstimator {
    pub fn new(budget: usize, seed: u64) -> Result<Self, GeoError> {
        if budget < MIN_OVERLAP_BUDGET {
            return Err(GeoError::InvalidBudget {
                min: MIN_OVERLAP_BUDGET,
                got: budget,
            });
        }
        // Cranley-Patterson rotation of the (2, 3) Halton sequence.
        let shift_u = (mix64(seed) >> 11) as f64 / (1u64 << 53) as f64;
        let shift_v = (mix64(seed ^ 0xA5A5_A5A5) >> 11) as f64 / (1u64 << 53) as f64;
        let offsets = (1..=budget as u64)
            .map(|i| {
                let u = (radical_inverse(i, 2) + shift_u).fract();
                let v = (radical_inverse(i, 3) + shift_v).fract();
                let r = (-2.0 * (1.0 - u).ln()).sqrt();
                let theta = 2.0 * PI * v;
                Point::new(r * theta.cos(), r * theta.sin())
            })
            .collect();
        Ok(Self { offsets })
    }

    pub fn budget(&self) -> usize {
        self.offsets.len()
    }

    /// Overlap with the rectangle fast path and far-field shortcuts.
    pub fn overlap(&self, pos: &GaussianPosition, poly: &Polygon) -> f64 {
        if let Some(rect) = poly.as_axis_aligned_rect() {
            return rectangle_mass(pos, &rect);
        }
        let reach = TAIL_CUTOFF * pos.sigma;
        if poly.bbox().distance(pos.mean) > reach {
            return 0.0;
        }
        if distance_to_boundary(poly, pos.mean) > reach {
            return if contains_point(poly, pos.mean) {
                1.0
            } else {
                0.0
            };
        }
        self.sampled(pos, poly)
    }

    /// Pure quasi-Monte Carlo estimate: the fraction of transformed points
    /// landing inside the polygon.
    pub fn sampled(&self, pos: &GaussianPosition, poly: &Polygon) -> f64 {
        let bbox = poly.bbox();
        let inside = self
            .offsets
            .iter()
            .map(|o| Point::new(pos.mean.x + pos.sigma * o.x, pos.mean.y + pos.sigma * o.y))
            .filter(|&p| bbox.contains(p) && contains_point(poly, p))
            .count();
        inside as f64 / self.offsets.len() as f64
    }
}

/// Probability mass of `pos` inside `poly`, using the default seed.
pub fn gaussian_overlap(
    pos: &GaussianPosition,
    poly: &Polygon,
    budget: usize,
) -> Result<f64, GeoError> {
    Ok(OverlapEstimator::new(budget, DEFAULT_OVERLAP_SEED)?.overlap(pos, poly))
}
