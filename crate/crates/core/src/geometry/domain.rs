use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::{dot, Vec2};

/// Geometry of a bounded (or, for the half-plane, truncated) domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Interval { lo: f64, hi: f64 },
    Rectangle { lo: Vec2, hi: Vec2 },
    Disc { center: Vec2, radius: f64 },
    /// `{x₂ > 0}`; `extent` bounds the sampled region to `[-L, L] × [0, L]`.
    HalfPlane { extent: f64 },
    /// `{φ > 0}` for a level-set expression star-shaped about `center`.
    LevelSet { phi: String, center: Vec2, bbox_lo: Vec2, bbox_hi: Vec2 },
}

/// A point of the boundary with its Euclidean unit tangent and inward
/// normal. `sigma` is arc length along the boundary piece.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub piece: usize,
    pub sigma: f64,
    pub point: Vec2,
    pub tangent: Vec2,
    pub normal: Vec2,
}

#[derive(Clone)]
struct LevelSetTable {
    phi: Expr,
    grad: [Expr; 2],
    center: Vec2,
    rmax: f64,
    thetas: Vec<f64>,
    radii: Vec<f64>,
    sigmas: Vec<f64>,
    perimeter: f64,
}

/// A domain `Ω` with a level function `φ` (positive inside) and its boundary
/// split into smooth pieces, each parametrized by arc length.
#[derive(Clone)]
pub struct Domain {
    shape: Shape,
    level: Option<Arc<LevelSetTable>>,
}

impl fmt::Debug for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Domain({:?})", self.shape)
    }
}

impl PartialEq for Domain {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
    }
}

const LEVEL_TABLE: usize = 4096;

impl Domain {
    pub fn new(shape: Shape) -> Result<Self> {
        match &shape {
            Shape::Interval { lo, hi } if !(hi > lo) => {
                return Err(Error::Config(format!("interval needs lo < hi, got [{lo}, {hi}]")))
            }
            Shape::Rectangle { lo, hi } if !(hi[0] > lo[0] && hi[1] > lo[1]) => {
                return Err(Error::Config("rectangle needs lo < hi componentwise".into()))
            }
            Shape::Disc { radius, .. } if !(*radius > 0.0) => {
                return Err(Error::Config("disc radius must be positive".into()))
            }
            Shape::HalfPlane { extent } if !(*extent > 0.0) => {
                return Err(Error::Config("half-plane extent must be positive".into()))
            }
            _ => {}
        }
        let level = match &shape {
            Shape::LevelSet { phi, center, bbox_lo, bbox_hi } => {
                Some(Arc::new(LevelSetTable::build(phi, *center, *bbox_lo, *bbox_hi)?))
            }
            _ => None,
        };
        Ok(Self { shape, level })
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::new(Shape::Interval { lo, hi }).expect("valid interval")
    }

    pub fn rectangle(lo: Vec2, hi: Vec2) -> Self {
        Self::new(Shape::Rectangle { lo, hi }).expect("valid rectangle")
    }

    pub fn unit_square() -> Self {
        Self::rectangle([0.0, 0.0], [1.0, 1.0])
    }

    pub fn disc(center: Vec2, radius: f64) -> Self {
        Self::new(Shape::Disc { center, radius }).expect("valid disc")
    }

    pub fn unit_disc() -> Self {
        Self::disc([0.0, 0.0], 1.0)
    }

    pub fn half_plane(extent: f64) -> Self {
        Self::new(Shape::HalfPlane { extent }).expect("valid half-plane")
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        match self.shape {
            Shape::Interval { .. } => 1,
            _ => 2,
        }
    }

    /// Axis-aligned bounding box `(lo, hi)`.
    pub fn bbox(&self) -> (Vec2, Vec2) {
        match &self.shape {
            Shape::Interval { lo, hi } => ([*lo, 0.0], [*hi, 0.0]),
            Shape::Rectangle { lo, hi } => (*lo, *hi),
            Shape::Disc { center: c, radius: r } => ([c[0] - r, c[1] - r], [c[0] + r, c[1] + r]),
            Shape::HalfPlane { extent } => ([-extent, 0.0], [*extent, *extent]),
            Shape::LevelSet { bbox_lo, bbox_hi, .. } => (*bbox_lo, *bbox_hi),
        }
    }

    /// Level function, positive in the interior and zero on the boundary.
    /// For all shapes except level sets this is the distance to the boundary
    /// inside the domain.
    pub fn phi(&self, x: Vec2) -> f64 {
        match &self.shape {
            Shape::Interval { lo, hi } => (x[0] - lo).min(hi - x[0]),
            Shape::Rectangle { lo, hi } => (x[0] - lo[0]).min(hi[0] - x[0]).min(x[1] - lo[1]).min(hi[1] - x[1]),
            Shape::Disc { center: c, radius: r } => r - (x[0] - c[0]).hypot(x[1] - c[1]),
            Shape::HalfPlane { .. } => x[1],
            Shape::LevelSet { .. } => self.level.as_ref().unwrap().phi(x),
        }
    }

    pub fn contains(&self, x: Vec2, tol: f64) -> bool {
        self.phi(x) >= -tol
    }

    /// Approximate distance to the boundary (exact except for level sets,
    /// where `φ / |∇φ|` is used).
    pub fn boundary_distance(&self, x: Vec2) -> f64 {
        match &self.level {
            Some(l) => {
                let g = l.grad(x);
                l.phi(x) / g[0].hypot(g[1]).max(1e-300)
            }
            None => self.phi(x),
        }
    }

    pub fn n_pieces(&self) -> usize {
        match self.shape {
            Shape::Interval { .. } => 2,
            Shape::Rectangle { .. } => 4,
            _ => 1,
        }
    }

    /// Parameter range of a boundary piece.
    pub fn piece_range(&self, piece: usize) -> (f64, f64) {
        match &self.shape {
            Shape::Interval { .. } => (0.0, 0.0),
            Shape::Rectangle { lo, hi } => {
                let len = if piece.is_multiple_of(2) { hi[0] - lo[0] } else { hi[1] - lo[1] };
                (0.0, len)
            }
            Shape::Disc { radius, .. } => (0.0, 2.0 * PI * radius),
            Shape::HalfPlane { extent } => (-extent, *extent),
            Shape::LevelSet { .. } => (0.0, self.level.as_ref().unwrap().perimeter),
        }
    }

    /// Whether the parameter of a piece is periodic (closed smooth curve).
    pub fn piece_periodic(&self) -> bool {
        matches!(self.shape, Shape::Disc { .. } | Shape::LevelSet { .. })
    }

    pub fn perimeter(&self) -> f64 {
        (0..self.n_pieces())
            .map(|p| {
                let (a, b) = self.piece_range(p);
                b - a
            })
            .sum()
    }

    /// Boundary point at parameter `sigma` of `piece`.
    pub fn boundary_point(&self, piece: usize, sigma: f64) -> BoundaryPoint {
        let (point, tangent) = match &self.shape {
            Shape::Interval { lo, hi } => {
                let p = if piece == 0 { *lo } else { *hi };
                ([p, 0.0], [0.0, 0.0])
            }
            Shape::Rectangle { lo, hi } => match piece {
                0 => ([lo[0] + sigma, lo[1]], [1.0, 0.0]),
                1 => ([hi[0], lo[1] + sigma], [0.0, 1.0]),
                2 => ([hi[0] - sigma, hi[1]], [-1.0, 0.0]),
                _ => ([lo[0], hi[1] - sigma], [0.0, -1.0]),
            },
            Shape::Disc { center: c, radius: r } => {
                let a = sigma / r;
                ([c[0] + r * a.cos(), c[1] + r * a.sin()], [-a.sin(), a.cos()])
            }
            Shape::HalfPlane { .. } => ([sigma, 0.0], [1.0, 0.0]),
            Shape::LevelSet { .. } => self.level.as_ref().unwrap().point_tangent(sigma),
        };
        let normal = match self.shape {
            Shape::Interval { .. } => [if piece == 0 { 1.0 } else { -1.0 }, 0.0],
            _ => [-tangent[1], tangent[0]],
        };
        BoundaryPoint { piece, sigma, point, tangent, normal }
    }

    /// Nearest boundary point.
    pub fn project(&self, x: Vec2) -> BoundaryPoint {
        match &self.shape {
            Shape::Interval { lo, hi } => {
                let piece = if (x[0] - lo).abs() <= (hi - x[0]).abs() { 0 } else { 1 };
                self.boundary_point(piece, 0.0)
            }
            Shape::Rectangle { .. } => {
                let mut best = (f64::INFINITY, self.boundary_point(0, 0.0));
                for piece in 0..4 {
                    let (a, b) = self.piece_range(piece);
                    let p0 = self.boundary_point(piece, 0.0);
                    let s = dot([x[0] - p0.point[0], x[1] - p0.point[1]], p0.tangent).clamp(a, b);
                    let bp = self.boundary_point(piece, s);
                    let d = (x[0] - bp.point[0]).hypot(x[1] - bp.point[1]);
                    if d < best.0 {
                        best = (d, bp);
                    }
                }
                best.1
            }
            Shape::Disc { center: c, radius: r } => {
                let a = (x[1] - c[1]).atan2(x[0] - c[0]).rem_euclid(2.0 * PI);
                self.boundary_point(0, a * r)
            }
            Shape::HalfPlane { .. } => self.boundary_point(0, x[0]),
            Shape::LevelSet { .. } => {
                let s = self.level.as_ref().unwrap().project_sigma(x);
                self.boundary_point(0, s)
            }
        }
    }

    /// Boundary pieces passing within `tol` of `x` (two at a rectangle
    /// corner).
    pub fn pieces_at(&self, x: Vec2, tol: f64) -> Vec<usize> {
        match &self.shape {
            Shape::Rectangle { lo, hi } => {
                let d = [x[1] - lo[1], hi[0] - x[0], hi[1] - x[1], x[0] - lo[0]];
                (0..4).filter(|&i| d[i].abs() <= tol).collect()
            }
            _ => vec![self.project(x).piece],
        }
    }

    /// Wraps a parameter into the piece range (periodic pieces) or clamps it.
    pub fn normalize_sigma(&self, piece: usize, sigma: f64) -> f64 {
        let (a, b) = self.piece_range(piece);
        if self.piece_periodic() {
            a + (sigma - a).rem_euclid(b - a)
        } else {
            sigma.clamp(a, b)
        }
    }

    /// Center and boundary radius along the ray at angle `theta`, for the
    /// star-shaped domains (discs and level sets).
    pub fn star_radius(&self, theta: f64) -> Option<(Vec2, f64)> {
        match (&self.shape, &self.level) {
            (Shape::Disc { center, radius }, _) => Some((*center, *radius)),
            (Shape::LevelSet { .. }, Some(l)) => l.radial_root(theta.rem_euclid(2.0 * PI), None).map(|r| (l.center, r)),
            _ => None,
        }
    }

    /// Tensor grid of interior points at least `margin` from the boundary.
    /// One-dimensional domains use `nx` points and ignore `ny`.
    pub fn interior_grid(&self, nx: usize, ny: usize, margin: f64) -> Vec<Vec2> {
        let (lo, hi) = self.bbox();
        let mut out = Vec::new();
        let cell = |i: usize, n: usize, a: f64, b: f64| a + (b - a) * (i as f64 + 0.5) / n as f64;
        if self.dim() == 1 {
            for i in 0..nx {
                let x = [cell(i, nx, lo[0], hi[0]), 0.0];
                if self.boundary_distance(x) >= margin {
                    out.push(x);
                }
            }
            return out;
        }
        for i in 0..nx {
            for j in 0..ny {
                let x = [cell(i, nx, lo[0], hi[0]), cell(j, ny, lo[1], hi[1])];
                if self.boundary_distance(x) >= margin {
                    out.push(x);
                }
            }
        }
        out
    }

    /// `n` boundary points spread over all pieces proportionally to length.
    pub fn boundary_samples(&self, n: usize) -> Vec<BoundaryPoint> {
        if self.dim() == 1 {
            return vec![self.boundary_point(0, 0.0), self.boundary_point(1, 0.0)];
        }
        let total = self.perimeter();
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            let mut s = total * (k as f64 + 0.5) / n as f64;
            for piece in 0..self.n_pieces() {
                let (a, b) = self.piece_range(piece);
                if s <= b - a || piece + 1 == self.n_pieces() {
                    out.push(self.boundary_point(piece, a + s.min(b - a)));
                    break;
                }
                s -= b - a;
            }
        }
        out
    }
}

impl LevelSetTable {
    fn build(src: &str, center: Vec2, lo: Vec2, hi: Vec2) -> Result<Self> {
        let phi = Expr::parse(src, &super::metric::EXPR_VARS)?;
        let grad = [
            sum_expr(&phi.diff_index(0), &phi.diff_index(2)),
            sum_expr(&phi.diff_index(1), &phi.diff_index(3)),
        ];
        let mut t = Self {
            phi,
            grad,
            center,
            rmax: 0.0,
            thetas: Vec::new(),
            radii: Vec::new(),
            sigmas: Vec::new(),
            perimeter: 0.0,
        };
        if !(t.phi(center) > 0.0) {
            return Err(Error::Config(format!("level set '{src}' is not positive at its center")));
        }
        t.rmax = [lo, hi, [lo[0], hi[1]], [hi[0], lo[1]]]
            .iter()
            .map(|c| (c[0] - center[0]).hypot(c[1] - center[1]))
            .fold(0.0, f64::max);
        let mut prev: Option<Vec2> = None;
        let mut acc = 0.0;
        for j in 0..=LEVEL_TABLE {
            let th = 2.0 * PI * j as f64 / LEVEL_TABLE as f64;
            let r = t.radial_root(th, None).ok_or_else(|| {
                Error::Config(format!("level set '{src}' has no boundary crossing inside its box at angle {th:.3}"))
            })?;
            let q = [center[0] + r * th.cos(), center[1] + r * th.sin()];
            if let Some(p) = prev {
                acc += (q[0] - p[0]).hypot(q[1] - p[1]);
            }
            prev = Some(q);
            t.thetas.push(th);
            t.radii.push(r);
            t.sigmas.push(acc);
        }
        t.perimeter = acc;
        Ok(t)
    }

    fn phi(&self, x: Vec2) -> f64 {
        self.phi.eval(&[x[0], x[1], x[0], x[1]])
    }

    fn grad(&self, x: Vec2) -> Vec2 {
        let a = [x[0], x[1], x[0], x[1]];
        [self.grad[0].eval(&a), self.grad[1].eval(&a)]
    }

    fn ray(&self, th: f64, r: f64) -> Vec2 {
        [self.center[0] + r * th.cos(), self.center[1] + r * th.sin()]
    }

    /// First root of `r ↦ φ(c + r e_θ)`, refined from a guess when given.
    fn radial_root(&self, th: f64, guess: Option<f64>) -> Option<f64> {
        let f = |r: f64| self.phi(self.ray(th, r));
        let (mut a, mut b) = match guess {
            Some(g) => {
                let w = 1e-3 * self.rmax;
                let (a, b) = ((g - w).max(0.0), g + w);
                if f(a) > 0.0 && f(b) <= 0.0 {
                    (a, b)
                } else {
                    return self.radial_root(th, None);
                }
            }
            None => {
                let n = 400;
                let mut found = None;
                let mut ra = 0.0;
                for k in 1..=n {
                    let rb = self.rmax * k as f64 / n as f64;
                    if f(rb) <= 0.0 {
                        found = Some((ra, rb));
                        break;
                    }
                    ra = rb;
                }
                found?
            }
        };
        for _ in 0..80 {
            let m = 0.5 * (a + b);
            if f(m) > 0.0 {
                a = m;
            } else {
                b = m;
            }
            if b - a < 1e-15 * self.rmax.max(1.0) {
                break;
            }
        }
        Some(0.5 * (a + b))
    }

    fn theta_of_sigma(&self, s: f64) -> (f64, f64) {
        let s = s.rem_euclid(self.perimeter);
        let j = self.sigmas.partition_point(|&v| v <= s).clamp(1, self.sigmas.len() - 1);
        let (s0, s1) = (self.sigmas[j - 1], self.sigmas[j]);
        let w = if s1 > s0 { (s - s0) / (s1 - s0) } else { 0.0 };
        let th = self.thetas[j - 1] + w * (self.thetas[j] - self.thetas[j - 1]);
        let r = self.radii[j - 1] + w * (self.radii[j] - self.radii[j - 1]);
        (th, r)
    }

    fn point_at_theta(&self, th: f64, guess: f64) -> Vec2 {
        let r = self.radial_root(th, Some(guess)).unwrap_or(guess);
        self.ray(th, r)
    }

    fn point_tangent(&self, s: f64) -> (Vec2, Vec2) {
        let (th, r) = self.theta_of_sigma(s);
        let q = self.point_at_theta(th, r);
        // tangent from the gradient of φ, which is smooth in σ
        let g = self.grad(q);
        let n = g[0].hypot(g[1]);
        // inward normal is ∇φ/|∇φ|; tangent is its clockwise rotation
        (q, [g[1] / n, -g[0] / n])
    }

    fn project_sigma(&self, x: Vec2) -> f64 {
        let th = (x[1] - self.center[1]).atan2(x[0] - self.center[0]).rem_euclid(2.0 * PI);
        let j = ((th / (2.0 * PI) * LEVEL_TABLE as f64) as usize).min(LEVEL_TABLE - 1);
        let w = (th - self.thetas[j]) / (self.thetas[j + 1] - self.thetas[j]);
        let mut s = self.sigmas[j] + w * (self.sigmas[j + 1] - self.sigmas[j]);
        for _ in 0..6 {
            let (q, t) = self.point_tangent(s);
            let step = dot([x[0] - q[0], x[1] - q[1]], t);
            s += step;
            if step.abs() < 1e-13 {
                break;
            }
        }
        s.rem_euclid(self.perimeter)
    }
}

fn sum_expr(a: &Expr, b: &Expr) -> Expr {
    let zero = |e: &Expr| e.is_constant() && e.eval(&[0.0; 4]) == 0.0;
    if zero(b) {
        return a.clone();
    }
    if zero(a) {
        return b.clone();
    }
    Expr::parse(&format!("({a}) + ({b})"), &super::metric::EXPR_VARS).expect("rendered derivative parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_boundary_pieces_are_counterclockwise_with_inward_normals() {
        let d = Domain::unit_square();
        for piece in 0..4 {
            let b = d.boundary_point(piece, 0.5);
            let inner = [b.point[0] + 0.1 * b.normal[0], b.point[1] + 0.1 * b.normal[1]];
            assert!(d.phi(inner) > 0.05, "piece {piece}");
            assert_eq!(d.phi(b.point), 0.0);
        }
        assert_eq!(d.perimeter(), 4.0);
        assert_eq!(d.pieces_at([1.0, 1.0], 1e-12), vec![1, 2]);
    }

    #[test]
    fn disc_projection() {
        let d = Domain::unit_disc();
        let b = d.project([0.0, 0.5]);
        assert!((b.sigma - PI / 2.0).abs() < 1e-14);
        assert!((b.normal[1] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn level_set_disc_matches_closed_form() {
        let d = Domain::new(Shape::LevelSet {
            phi: "1 - x^2 - y^2".into(),
            center: [0.0, 0.0],
            bbox_lo: [-1.2, -1.2],
            bbox_hi: [1.2, 1.2],
        })
        .unwrap();
        assert!((d.perimeter() - 2.0 * PI).abs() < 1e-6);
        let b = d.boundary_point(0, 1.0);
        assert!((b.point[0] - 1f64.cos()).abs() < 1e-6 && (b.point[1] - 1f64.sin()).abs() < 1e-6);
        assert!((b.normal[0] + b.point[0]).abs() < 1e-9);
        let p = d.project([0.0, 0.4]);
        assert!((p.sigma - PI / 2.0).abs() < 1e-6);
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(Domain::new(Shape::Interval { lo: 1.0, hi: 0.0 }).is_err());
        assert!(Domain::new(Shape::Disc { center: [0.0, 0.0], radius: 0.0 }).is_err());
    }

    #[test]
    fn interval_grid_and_samples() {
        let d = Domain::interval(0.0, 1.0);
        assert_eq!(d.interior_grid(10, 0, 0.0).len(), 10);
        assert_eq!(d.boundary_samples(5).len(), 2);
        assert_eq!(d.boundary_point(1, 0.0).normal, [-1.0, 0.0]);
    }
}
