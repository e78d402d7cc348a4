//! Dirichlet spectral machinery for `A = κ⁻¹ div_g(κ ∇_g)`: discrete
//! eigenbases, dyadic frequency bands, exact spectral evolution, energies,
//! Neumann traces and dyadic observability constants.
//!
//! Intervals and rectangles use conservative finite differences on tensor
//! grids (with closed-form eigenpairs when the coefficients are constant
//! and diagonal); discs and star-shaped level sets use P1 elements on a
//! boundary-fitted polar mesh with lumped mass. The mass matrix is the
//! diagonal `κ√det g · cell volume`, so modes are orthonormal for the
//! weighted product `⟨u, v⟩ = Σ u v̄ κ√det g · vol`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcc::{Indicator, ObservationRegion};
use crate::geometry::{Domain, MetricField, Shape};
use crate::linalg::{hermitian_min_eigenvalue, quad_form, Vec2};

/// Largest system handed to the dense symmetric eigensolver.
pub const DENSE_LIMIT: usize = 3000;
/// Largest dyadic block for the dense Gram eigenproblem.
pub const GRAM_LIMIT: usize = 2000;
/// Eigenvalues above `NYQUIST_SAFETY · (π/Δx)²` are not trusted.
pub const NYQUIST_SAFETY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// tensor finite differences with separable constant coefficients
    ClosedForm,
    FiniteDifference,
    PolarP1,
}

/// A boundary node with a one-sided stencil for the inward `g`-normal
/// derivative `∂_n u ≈ Σ c u[i]`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceNode {
    pub piece: usize,
    pub sigma: f64,
    pub point: Vec2,
    /// boundary measure `κ · ds_g` carried by the node
    pub weight: f64,
    pub stencil: [(usize, f64); 2],
}

#[derive(Debug, Clone, Default)]
struct Sparse {
    rows: Vec<Vec<(usize, f64)>>,
}

impl Sparse {
    fn new(n: usize) -> Self {
        Self { rows: vec![Vec::new(); n] }
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let row = &mut self.rows[i];
        match row.iter_mut().find(|(c, _)| *c == j) {
            Some(e) => e.1 += v,
            None => row.push((j, v)),
        }
    }

    fn mul(&self, u: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(j, v)| v * u[j]).sum()).collect()
    }
}

struct Discrete {
    nodes: Vec<Vec2>,
    weights: Vec<f64>,
    stiffness: Sparse,
    trace: Vec<TraceNode>,
    nyquist: f64,
    /// `(n, spacing, g^{ii})` per axis when the closed form applies
    separable: Option<Vec<(usize, f64, f64)>>,
    sqrt_det: f64,
}

/// Discrete Dirichlet eigenpairs of `-A`, ascending.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub method: Method,
    pub resolution: usize,
    pub dim: usize,
    pub nodes: Vec<Vec2>,
    pub weights: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub modes: Vec<Vec<f64>>,
    pub trace: Vec<TraceNode>,
    /// every eigenpair of the discrete operator was computed
    pub complete: bool,
    /// `(π / Δx)²` for the mesh spacing
    pub nyquist: f64,
    stiffness: Sparse,
}

impl EigenBasis {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn omega(&self, nu: usize) -> f64 {
        self.lambdas[nu].sqrt()
    }

    /// Weighted inner product of real grid functions.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        u.iter().zip(v).zip(&self.weights).map(|((a, b), w)| a * b * w).sum()
    }

    /// `-A u = M⁻¹ K u`.
    pub fn apply_operator(&self, u: &[f64]) -> Vec<f64> {
        self.stiffness.mul(u).into_iter().zip(&self.weights).map(|(v, w)| v / w).collect()
    }

    /// Coefficients `⟨u, e_ν⟩` of a grid function.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        self.modes.iter().map(|e| self.inner(u, e)).collect()
    }

    pub fn project_complex(&self, u: &[Complex64]) -> Vec<Complex64> {
        self.modes
            .iter()
            .map(|e| u.iter().zip(e).zip(&self.weights).map(|((a, b), w)| a * (b * w)).sum())
            .collect()
    }

    /// Grid function `Σ c_ν e_ν`.
    pub fn synthesize(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.nodes.len()];
        for (c, e) in coeffs.iter().zip(&self.modes) {
            if *c == Complex64::new(0.0, 0.0) {
                continue;
            }
            for (o, v) in out.iter_mut().zip(e) {
                *o += c * v;
            }
        }
        out
    }

    /// Inward normal derivative of mode `ν` at every trace node.
    pub fn mode_trace(&self, nu: usize) -> Vec<f64> {
        let e = &self.modes[nu];
        self.trace.iter().map(|t| t.stencil.iter().map(|&(i, c)| c * e[i]).sum()).collect()
    }
}

fn constant_diagonal(metric: &MetricField, domain: &Domain) -> Option<(f64, f64)> {
    if metric.has_kappa() {
        return None;
    }
    let (lo, hi) = domain.bbox();
    let g0 = metric.g(lo);
    if g0[0][1] != 0.0 || g0[1][0] != 0.0 {
        return None;
    }
    for i in 0..=3 {
        for j in 0..=3 {
            let x = [lo[0] + (hi[0] - lo[0]) * i as f64 / 3.0, lo[1] + (hi[1] - lo[1]) * j as f64 / 3.0];
            if metric.g(x) != g0 {
                return None;
            }
        }
    }
    Some((g0[0][0], if metric.dim() == 2 { g0[1][1] } else { 1.0 }))
}

fn coef(metric: &MetricField, x: Vec2) -> (f64, [[f64; 2]; 2]) {
    (metric.kappa(x) * metric.sqrt_det_g(x), metric.g_inv(x))
}

fn fd_interval(domain: &Domain, metric: &MetricField, n: usize, lo: f64, hi: f64) -> Discrete {
    let dx = (hi - lo) / n as f64;
    let m = n - 1;
    let mut k = Sparse::new(m);
    for i in 0..n {
        // edge between node i and i + 1 (0 and n are Dirichlet)
        let (w, gi) = coef(metric, [lo + (i as f64 + 0.5) * dx, 0.0]);
        let c = w * gi[0][0] / dx;
        let a = i.checked_sub(1);
        let b = if i < m { Some(i) } else { None };
        if let Some(a) = a {
            k.add(a, a, c);
        }
        if let Some(b) = b {
            k.add(b, b, c);
        }
        if let (Some(a), Some(b)) = (a, b) {
            k.add(a, b, -c);
            k.add(b, a, -c);
        }
    }
    let nodes: Vec<Vec2> = (1..n).map(|i| [lo + i as f64 * dx, 0.0]).collect();
    let weights = nodes.iter().map(|&x| coef(metric, x).0 * dx).collect();
    let mut trace = Vec::new();
    for (x, i1, i2) in [(lo, 0, 1), (hi, m - 1, m - 2)] {
        let p = [x, 0.0];
        let s = metric.g_inv(p)[0][0].sqrt() / (2.0 * dx);
        let b = domain.project(p);
        trace.push(TraceNode {
            piece: b.piece,
            sigma: b.sigma,
            point: p,
            weight: metric.kappa(p),
            stencil: [(i1, 4.0 * s), (i2, -s)],
        });
    }
    let sep = constant_diagonal(metric, domain).map(|(a, _)| vec![(n, dx, 1.0 / a)]);
    let sqrt_det = metric.sqrt_det_g([lo, 0.0]);
    Discrete { nodes, weights, stiffness: k, trace, nyquist: (std::f64::consts::PI / dx).powi(2), separable: sep, sqrt_det }
}

fn fd_rectangle(domain: &Domain, metric: &MetricField, n: usize, lo: Vec2, hi: Vec2) -> Discrete {
    let dx = (hi[0] - lo[0]) / n as f64;
    let dy = (hi[1] - lo[1]) / n as f64;
    let m = n - 1;
    let idx = |i: usize, j: usize| -> Option<usize> {
        (i >= 1 && i <= m && j >= 1 && j <= m).then(|| (i - 1) * m + (j - 1))
    };
    let pt = |i: f64, j: f64| [lo[0] + i * dx, lo[1] + j * dy];
    let mut k = Sparse::new(m * m);
    let mut edge = |a: Option<usize>, b: Option<usize>, c: f64| {
        if let Some(a) = a {
            k.add(a, a, c);
        }
        if let Some(b) = b {
            k.add(b, b, c);
        }
        if let (Some(a), Some(b)) = (a, b) {
            k.add(a, b, -c);
            k.add(b, a, -c);
        }
    };
    for j in 1..=m {
        for i in 0..n {
            let (w, gi) = coef(metric, pt(i as f64 + 0.5, j as f64));
            edge(idx(i, j), idx(i + 1, j), w * gi[0][0] * dy / dx);
        }
    }
    for i in 1..=m {
        for j in 0..n {
            let (w, gi) = coef(metric, pt(i as f64, j as f64 + 0.5));
            edge(idx(i, j), idx(i, j + 1), w * gi[1][1] * dx / dy);
        }
    }
    // mixed term from cell-centred gradients
    for i in 0..n {
        for j in 0..n {
            let (w, gi) = coef(metric, pt(i as f64 + 0.5, j as f64 + 0.5));
            let c = w * gi[0][1] * dx * dy;
            if c == 0.0 {
                continue;
            }
            let corners = [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)];
            let ax = [-1.0, 1.0, -1.0, 1.0].map(|v| v / (2.0 * dx));
            let ay = [-1.0, -1.0, 1.0, 1.0].map(|v| v / (2.0 * dy));
            for (p, &(pi, pj)) in corners.iter().enumerate() {
                let Some(a) = idx(pi, pj) else { continue };
                for (q, &(qi, qj)) in corners.iter().enumerate() {
                    let Some(b) = idx(qi, qj) else { continue };
                    k.add(a, b, c * (ax[p] * ay[q] + ay[p] * ax[q]));
                }
            }
        }
    }
    let mut nodes = Vec::with_capacity(m * m);
    for i in 1..=m {
        for j in 1..=m {
            nodes.push(pt(i as f64, j as f64));
        }
    }
    let weights = nodes.iter().map(|&x| coef(metric, x).0 * dx * dy).collect();
    let mut trace = Vec::new();
    let mut push = |p: Vec2, i1: usize, i2: usize, normal_axis: usize, step: f64, len: f64| {
        let gi = metric.g_inv(p);
        let g = metric.g(p);
        let t_axis = 1 - normal_axis;
        let s = gi[normal_axis][normal_axis].sqrt() / (2.0 * step);
        let b = domain.project(p);
        trace.push(TraceNode {
            piece: b.piece,
            sigma: b.sigma,
            point: p,
            weight: len * g[t_axis][t_axis].sqrt() * metric.kappa(p),
            stencil: [(i1, 4.0 * s), (i2, -s)],
        });
    };
    for i in 1..=m {
        push(pt(i as f64, 0.0), idx(i, 1).unwrap(), idx(i, 2).unwrap(), 1, dy, dx);
        push(pt(i as f64, n as f64), idx(i, m).unwrap(), idx(i, m - 1).unwrap(), 1, dy, dx);
    }
    for j in 1..=m {
        push(pt(0.0, j as f64), idx(1, j).unwrap(), idx(2, j).unwrap(), 0, dx, dy);
        push(pt(n as f64, j as f64), idx(m, j).unwrap(), idx(m - 1, j).unwrap(), 0, dx, dy);
    }
    let sep = constant_diagonal(metric, domain).map(|(a, b)| vec![(n, dx, 1.0 / a), (n, dy, 1.0 / b)]);
    let sqrt_det = metric.sqrt_det_g(lo);
    let h = dx.min(dy);
    Discrete { nodes, weights, stiffness: k, trace, nyquist: (std::f64::consts::PI / h).powi(2), separable: sep, sqrt_det }
}

fn polar_mesh(domain: &Domain, metric: &MetricField, rings: usize) -> Result<Discrete> {
    use std::f64::consts::TAU;
    let sectors = 4 * (3 * rings).div_ceil(4);
    let mut radius = Vec::with_capacity(sectors);
    let mut center = [0.0, 0.0];
    for s in 0..sectors {
        let th = TAU * s as f64 / sectors as f64;
        let (c, r) = domain
            .star_radius(th)
            .ok_or_else(|| Error::Unsupported("polar mesh needs a star-shaped domain".into()))?;
        center = c;
        radius.push(r);
    }
    let pos = |j: usize, s: usize| -> Vec2 {
        let th = TAU * (s % sectors) as f64 / sectors as f64;
        let r = radius[s % sectors] * j as f64 / rings as f64;
        [center[0] + r * th.cos(), center[1] + r * th.sin()]
    };
    // unknowns: the centre and rings 1..rings-1
    let idx = |j: usize, s: usize| -> Option<usize> {
        if j == 0 {
            Some(0)
        } else if j < rings {
            Some(1 + (j - 1) * sectors + s % sectors)
        } else {
            None
        }
    };
    let n = 1 + (rings - 1) * sectors;
    let mut nodes = vec![center; n];
    for j in 1..rings {
        for s in 0..sectors {
            nodes[idx(j, s).unwrap()] = pos(j, s);
        }
    }
    let mut k = Sparse::new(n);
    let mut mass = vec![0.0; n];
    let mut tri = |v: [(usize, usize); 3]| {
        let p: Vec<Vec2> = v.iter().map(|&(j, s)| if j == 0 { center } else { pos(j, s) }).collect();
        let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let area = 0.5 * det.abs();
        let grads = [
            [(p[1][1] - p[2][1]) / det, (p[2][0] - p[1][0]) / det],
            [(p[2][1] - p[0][1]) / det, (p[0][0] - p[2][0]) / det],
            [(p[0][1] - p[1][1]) / det, (p[1][0] - p[0][0]) / det],
        ];
        let c = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
        let (w, gi) = coef(metric, c);
        for a in 0..3 {
            let Some(ia) = idx(v[a].0, v[a].1) else { continue };
            mass[ia] += area * w / 3.0;
            for b in 0..3 {
                let Some(ib) = idx(v[b].0, v[b].1) else { continue };
                let ga = grads[a];
                let gb = grads[b];
                let val = gi[0][0] * ga[0] * gb[0] + gi[0][1] * (ga[0] * gb[1] + ga[1] * gb[0]) + gi[1][1] * ga[1] * gb[1];
                k.add(ia, ib, area * w * val);
            }
        }
    };
    for s in 0..sectors {
        tri([(0, 0), (1, s), (1, s + 1)]);
        for j in 1..rings {
            tri([(j, s), (j + 1, s), (j + 1, s + 1)]);
            tri([(j, s), (j + 1, s + 1), (j, s + 1)]);
        }
    }
    let mut trace = Vec::with_capacity(sectors);
    for s in 0..sectors {
        let p = pos(rings, s);
        let b = domain.project(p);
        let th = TAU * s as f64 / sectors as f64;
        let d = radius[s] / rings as f64;
        // the stencil differentiates along the inward ray; divide by the
        // cosine between ray and normal
        let cos = -(b.normal[0] * th.cos() + b.normal[1] * th.sin());
        let gi = metric.g_inv(p);
        let scale = quad_form(&gi, b.normal).sqrt() / (2.0 * d * cos.max(1e-3));
        let prev = pos(rings, s + sectors - 1);
        let next = pos(rings, s + 1);
        let len = 0.5 * (next[0] - prev[0]).hypot(next[1] - prev[1]);
        let g = metric.g(p);
        let t = b.tangent;
        let tg = (g[0][0] * t[0] * t[0] + 2.0 * g[0][1] * t[0] * t[1] + g[1][1] * t[1] * t[1]).sqrt();
        trace.push(TraceNode {
            piece: b.piece,
            sigma: b.sigma,
            point: p,
            weight: len * tg * metric.kappa(p),
            stencil: [(idx(rings - 1, s).unwrap(), 4.0 * scale), (idx(rings - 2, s).unwrap(), -scale)],
        });
    }
    let hmin = radius.iter().cloned().fold(f64::INFINITY, f64::min) / rings as f64;
    Ok(Discrete {
        nodes,
        weights: mass,
        stiffness: k,
        trace,
        nyquist: (std::f64::consts::PI / hmin).powi(2),
        separable: None,
        sqrt_det: 1.0,
    })
}

fn closed_form(sep: &[(usize, f64, f64)], sqrt_det: f64, count: usize) -> (Vec<f64>, Vec<Vec<f64>>, bool) {
    let axis = |(n, d, gii): (usize, f64, f64)| -> Vec<f64> {
        (1..n).map(|m| gii * (2.0 / d * (m as f64 * std::f64::consts::PI / (2.0 * n as f64)).sin()).powi(2)).collect()
    };
    let sine = |n: usize, m: usize, i: usize| (m as f64 * std::f64::consts::PI * i as f64 / n as f64).sin();
    if sep.len() == 1 {
        let (n, d, _) = sep[0];
        let lam = axis(sep[0]);
        let take = count.min(lam.len());
        let c = (2.0 / (n as f64 * d * sqrt_det)).sqrt();
        let modes = (1..=take).map(|m| (1..n).map(|i| c * sine(n, m, i)).collect()).collect();
        return (lam[..take].to_vec(), modes, take == lam.len());
    }
    let (lx, ly) = (axis(sep[0]), axis(sep[1]));
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(lx.len() * ly.len());
    for (a, &u) in lx.iter().enumerate() {
        for (b, &v) in ly.iter().enumerate() {
            pairs.push((u + v, a + 1, b + 1));
        }
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
    let take = count.min(pairs.len());
    let (nx, dx, _) = sep[0];
    let (ny, dy, _) = sep[1];
    let c = (4.0 / (nx as f64 * ny as f64 * dx * dy * sqrt_det)).sqrt();
    let modes = pairs[..take]
        .par_iter()
        .map(|&(_, a, b)| {
            let sy: Vec<f64> = (1..ny).map(|j| sine(ny, b, j)).collect();
            let mut v = Vec::with_capacity((nx - 1) * (ny - 1));
            for i in 1..nx {
                let sx = c * sine(nx, a, i);
                v.extend(sy.iter().map(|s| sx * s));
            }
            v
        })
        .collect();
    (pairs[..take].iter().map(|p| p.0).collect(), modes, take == pairs.len())
}

fn dense_eig(d: &Discrete, count: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>, bool)> {
    let n = d.nodes.len();
    if n > DENSE_LIMIT {
        return Err(Error::Unsupported(format!(
            "dense eigensolve on {n} unknowns exceeds the limit {DENSE_LIMIT}; lower solver.resolution"
        )));
    }
    let sq: Vec<f64> = d.weights.iter().map(|w| w.sqrt()).collect();
    let mut b = DMatrix::<f64>::zeros(n, n);
    for (i, row) in d.stiffness.rows.iter().enumerate() {
        for &(j, v) in row {
            b[(i, j)] += v / (sq[i] * sq[j]);
        }
    }
    // symmetrize away rounding in the assembly
    let b = (&b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]));
    let take = count.min(n);
    let mut lambdas = Vec::with_capacity(take);
    let mut modes = Vec::with_capacity(take);
    for &o in &order[..take] {
        lambdas.push(eig.eigenvalues[o]);
        let col = eig.eigenvectors.column(o);
        let mut v: Vec<f64> = (0..n).map(|i| col[i] / sq[i]).collect();
        let lead = v.iter().cloned().find(|x| x.abs() > 1e-8).unwrap_or(1.0);
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        modes.push(v);
    }
    Ok((lambdas, modes, take == n))
}

/// Assembles the discrete Dirichlet operator and returns its lowest
/// `count` eigenpairs. `resolution` is the number of cells per axis (tensor
/// grids) or the number of rings (polar meshes).
pub fn assemble_and_eig(domain: &Domain, metric: &MetricField, resolution: usize, count: usize) -> Result<EigenBasis> {
    if count == 0 {
        return Err(Error::Config("eigenpair count must be positive".into()));
    }
    if resolution < 4 {
        return Err(Error::Config(format!("solver resolution must be at least 4, got {resolution}")));
    }
    let (disc, method) = match domain.shape() {
        Shape::Interval { lo, hi } => {
            let d = fd_interval(domain, metric, resolution, *lo, *hi);
            let m = if d.separable.is_some() { Method::ClosedForm } else { Method::FiniteDifference };
            (d, m)
        }
        Shape::Rectangle { lo, hi } => {
            let d = fd_rectangle(domain, metric, resolution, *lo, *hi);
            let m = if d.separable.is_some() { Method::ClosedForm } else { Method::FiniteDifference };
            (d, m)
        }
        Shape::Disc { .. } | Shape::LevelSet { .. } => (polar_mesh(domain, metric, resolution)?, Method::PolarP1),
        Shape::HalfPlane { .. } => {
            return Err(Error::Unsupported("the half-plane has no discrete Dirichlet spectrum".into()))
        }
    };
    let (lambdas, modes, complete) = match &disc.separable {
        Some(sep) => closed_form(sep, disc.sqrt_det, count),
        None => dense_eig(&disc, count)?,
    };
    let limit = NYQUIST_SAFETY * disc.nyquist;
    let admissible = lambdas.iter().filter(|&&l| l <= limit).count();
    if count > admissible && (lambdas.len() < count || lambdas[count - 1] > limit) {
        return Err(Error::SpectralBand { requested: count, admissible });
    }
    Ok(EigenBasis {
        method,
        resolution,
        dim: domain.dim(),
        nodes: disc.nodes,
        weights: disc.weights,
        lambdas,
        modes,
        trace: disc.trace,
        complete,
        nyquist: disc.nyquist,
        stiffness: disc.stiffness,
    })
}

/// Dyadic decomposition `h_k = ϱ^{-|k|}`, `J_k = {ν : α ≤ h_k √λ_ν < 1/α}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DyadicSpec {
    pub alpha: f64,
    pub rho: f64,
}

impl DyadicSpec {
    pub fn new(alpha: f64, rho: f64) -> Result<Self> {
        let s = Self { alpha, rho };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("dyadic.alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.rho > 1.0 && self.rho < 1.0 / self.alpha) {
            return Err(Error::Config(format!("dyadic.rho must lie in (1, 1/alpha), got {}", self.rho)));
        }
        Ok(())
    }

    pub fn h(&self, k: i32) -> f64 {
        self.rho.powi(-k.abs())
    }

    pub fn in_band(&self, h: f64, lambda: f64) -> bool {
        let s = h * lambda.sqrt();
        self.alpha <= s && s < 1.0 / self.alpha
    }
}

pub fn dyadic_index_set(spec: &DyadicSpec, basis: &EigenBasis, k: i32) -> Result<Vec<usize>> {
    spec.validate()?;
    let h = spec.h(k);
    let hi = 1.0 / (spec.alpha * h);
    let top = basis.lambdas.last().map_or(0.0, |l| l.sqrt());
    if !basis.complete && top < hi {
        return Err(Error::BandExceedsSpectrum { lo: spec.alpha / h, hi, max: top });
    }
    Ok((0..basis.len()).filter(|&nu| spec.in_band(h, basis.lambdas[nu])).collect())
}

/// A solution `u(t) = Σ (a⁺_ν e^{itω_ν} + a⁻_ν e^{-itω_ν}) e_ν`, `ω_ν = √λ_ν`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaveState {
    pub t: f64,
    /// semiclassical scale attached to the state
    pub h: Option<f64>,
    pub omega: Vec<f64>,
    pub plus: Vec<Complex64>,
    pub minus: Vec<Complex64>,
}

impl WaveState {
    /// State at `t = 0` from the coefficients of `(u⁰, u¹)`.
    pub fn from_data(basis: &EigenBasis, u0: &[Complex64], u1: &[Complex64], h: Option<f64>) -> Self {
        let omega: Vec<f64> = basis.lambdas.iter().map(|l| l.sqrt()).collect();
        let i = Complex64::i();
        let plus = (0..omega.len()).map(|n| (u0[n] - i * u1[n] / omega[n]) * 0.5).collect();
        let minus = (0..omega.len()).map(|n| (u0[n] + i * u1[n] / omega[n]) * 0.5).collect();
        Self { t: 0.0, h, omega, plus, minus }
    }

    /// State from grid values of `(u⁰, u¹)`, projected on the basis.
    pub fn from_grid(basis: &EigenBasis, u0: &[f64], u1: &[f64], h: Option<f64>) -> Self {
        let c = |u: &[f64]| basis.project(u).into_iter().map(|v| Complex64::new(v, 0.0)).collect::<Vec<_>>();
        Self::from_data(basis, &c(u0), &c(u1), h)
    }

    /// A one-sided packet `Σ c_ν e^{±itω_ν} e_ν` on the given modes.
    pub fn packet(basis: &EigenBasis, indices: &[usize], coeffs: &[Complex64], h: Option<f64>, positive: bool) -> Self {
        let n = basis.len();
        let zero = Complex64::new(0.0, 0.0);
        let mut side = vec![zero; n];
        for (&i, &c) in indices.iter().zip(coeffs) {
            side[i] = c;
        }
        let omega = basis.lambdas.iter().map(|l| l.sqrt()).collect();
        let (plus, minus) = if positive { (side, vec![zero; n]) } else { (vec![zero; n], side) };
        Self { t: 0.0, h, omega, plus, minus }
    }

    /// The state at time `t`; exact in the discrete model.
    pub fn evolve(&self, t: f64) -> Self {
        let dt = t - self.t;
        let rot = |w: f64, s: f64| Complex64::from_polar(1.0, s * w * dt);
        Self {
            t,
            h: self.h,
            omega: self.omega.clone(),
            plus: self.plus.iter().zip(&self.omega).map(|(a, &w)| a * rot(w, 1.0)).collect(),
            minus: self.minus.iter().zip(&self.omega).map(|(a, &w)| a * rot(w, -1.0)).collect(),
        }
    }

    /// Coefficients of `u(t)` and `∂_t u(t)`.
    pub fn coefficients(&self) -> (Vec<Complex64>, Vec<Complex64>) {
        let i = Complex64::i();
        let u = self.plus.iter().zip(&self.minus).map(|(p, m)| p + m).collect();
        let ut = self.plus.iter().zip(&self.minus).zip(&self.omega).map(|((p, m), &w)| i * w * (p - m)).collect();
        (u, ut)
    }

    pub fn l2_norm(&self) -> f64 {
        crate::linalg::norm2(&self.coefficients().0)
    }

    /// `‖h ∂_t u‖` (with `h = 1` when unset).
    pub fn dt_norm(&self) -> f64 {
        self.h.unwrap_or(1.0) * crate::linalg::norm2(&self.coefficients().1)
    }

    /// Energy `E = ½(‖∇_g u‖² + ‖∂_t u‖²)` and its semiclassical version
    /// `E^h = h² E`.
    pub fn energies(&self) -> (f64, f64) {
        let (u, ut) = self.coefficients();
        let e = 0.5
            * u.iter().zip(&ut).zip(&self.omega).map(|((a, b), w)| w * w * a.norm_sqr() + b.norm_sqr()).sum::<f64>();
        let h = self.h.unwrap_or(1.0);
        (e, h * h * e)
    }

    pub fn grid(&self, basis: &EigenBasis) -> Vec<Complex64> {
        basis.synthesize(&self.coefficients().0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceReport {
    pub times: Vec<f64>,
    pub nodes: Vec<TraceNode>,
    /// `v = h ∂_n u` per time and trace node
    pub values: Vec<Vec<Complex64>>,
    pub trace_norm_sq: f64,
    pub energy_integral: f64,
    /// `‖v‖²_{L²((0,T)×∂)} / ∫ E dt`
    pub admissibility: f64,
}

/// Samples `h ∂_n u` on the boundary nodes at the given times. Rectangle
/// corners carry no node and are excluded.
pub fn neumann_trace(basis: &EigenBasis, state: &WaveState, times: &[f64]) -> TraceReport {
    let h = state.h.unwrap_or(1.0);
    let traces: Vec<Vec<f64>> = (0..basis.len()).map(|nu| basis.mode_trace(nu)).collect();
    let nt = basis.trace.len();
    let mut values = Vec::with_capacity(times.len());
    let mut norms = Vec::with_capacity(times.len());
    let mut energies = Vec::with_capacity(times.len());
    for &t in times {
        let s = state.evolve(t);
        let (u, _) = s.coefficients();
        let mut v = vec![Complex64::new(0.0, 0.0); nt];
        for (c, tr) in u.iter().zip(&traces) {
            for (o, d) in v.iter_mut().zip(tr) {
                *o += c * (h * d);
            }
        }
        norms.push(v.iter().zip(&basis.trace).map(|(z, n)| z.norm_sqr() * n.weight).sum::<f64>());
        energies.push(s.energies().0);
        values.push(v);
    }
    let trap = |f: &[f64]| -> f64 { times.windows(2).zip(f.windows(2)).map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1])).sum() };
    let trace_norm_sq = trap(&norms);
    let energy_integral = trap(&energies);
    TraceReport {
        times: times.to_vec(),
        nodes: basis.trace.clone(),
        values,
        trace_norm_sq,
        energy_integral,
        admissibility: if energy_integral > 0.0 { trace_norm_sq / energy_integral } else { 0.0 },
    }
}

/// Default observation window `(δ, T - δ)` with `δ = 0.05 T`.
pub fn observation_window(t: f64) -> (f64, f64) {
    (0.05 * t, 0.95 * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsConstant {
    pub k: i32,
    pub h: f64,
    pub n_modes: usize,
    pub lambda_min: f64,
    /// `1 / λ_min`, infinite when the Gram form is singular
    pub c: f64,
}

fn time_overlap(a: f64, b: f64, d: f64) -> Complex64 {
    if (d * (b - a)).abs() < 1e-9 {
        return Complex64::new(b - a, 0.0) * Complex64::from_polar(1.0, d * 0.5 * (a + b));
    }
    (Complex64::from_polar(1.0, b * d) - Complex64::from_polar(1.0, a * d)) / Complex64::new(0.0, d)
}

/// Gram matrix of `u ↦ ‖1_{I×region} h O u‖²` on one-sided packets over
/// the modes `indices`, with `O = ∂_t` for interior regions and `O = ∂_n`
/// for boundary regions.
pub fn gram_matrix(
    basis: &EigenBasis,
    indices: &[usize],
    h: f64,
    region: &ObservationRegion,
    window: (f64, f64),
    domain: &Domain,
) -> Result<DMatrix<Complex64>> {
    let m = indices.len();
    if m > GRAM_LIMIT {
        return Err(Error::TooManyModes { size: m, limit: GRAM_LIMIT });
    }
    let ind = Indicator::new(region, false)?;
    // rows: √weight · (mode value or normal derivative) at observed points
    let rows: Vec<Vec<f64>> = if region.is_boundary() {
        let tr: Vec<Vec<f64>> = indices.iter().map(|&nu| basis.mode_trace(nu)).collect();
        basis
            .trace
            .iter()
            .enumerate()
            .filter(|(_, t)| ind.contains_boundary(domain, t.piece, t.sigma))
            .map(|(p, t)| tr.iter().map(|col| t.weight.sqrt() * col[p]).collect())
            .collect()
    } else {
        basis
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, x)| ind.contains(**x))
            .map(|(p, _)| indices.iter().map(|&nu| basis.weights[p].sqrt() * basis.modes[nu][p]).collect())
            .collect()
    };
    let mut e = DMatrix::<f64>::zeros(rows.len(), m);
    for (r, row) in rows.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            e[(r, c)] = *v;
        }
    }
    let s = e.transpose() * &e;
    let omega: Vec<f64> = indices.iter().map(|&nu| basis.omega(nu)).collect();
    let factor: Vec<f64> = if region.is_boundary() { vec![h; m] } else { omega.iter().map(|w| h * w).collect() };
    let data: Vec<Complex64> = (0..m)
        .into_par_iter()
        .flat_map_iter(|a| {
            let (s, omega, factor) = (&s, &omega, &factor);
            (0..m).map(move |b| time_overlap(window.0, window.1, omega[b] - omega[a]) * (factor[a] * factor[b] * s[(a, b)]))
        })
        .collect();
    Ok(DMatrix::from_row_slice(m, m, &data))
}

/// Observability constant `C(k) = 1/λ_min(G_k)` on the dyadic block `E_k`.
pub fn obs_constant_dyadic(
    basis: &EigenBasis,
    spec: &DyadicSpec,
    k: i32,
    region: &ObservationRegion,
    window: (f64, f64),
    domain: &Domain,
) -> Result<ObsConstant> {
    if !(window.1 > window.0) {
        return Err(Error::Config(format!("empty observation window {window:?}")));
    }
    let j = dyadic_index_set(spec, basis, k)?;
    if j.is_empty() {
        return Err(Error::Precondition(format!("dyadic band k = {k} contains no modes")));
    }
    let h = spec.h(k);
    let g = gram_matrix(basis, &j, h, region, window, domain)?;
    let lmin = hermitian_min_eigenvalue(g);
    Ok(ObsConstant { k, h, n_modes: j.len(), lambda_min: lmin, c: if lmin > 0.0 { 1.0 / lmin } else { f64::INFINITY } })
}

/// `C(k)` over a range of bands; empty bands are skipped.
pub fn observability_sweep(
    basis: &EigenBasis,
    spec: &DyadicSpec,
    ks: impl IntoIterator<Item = i32>,
    region: &ObservationRegion,
    window: (f64, f64),
    domain: &Domain,
) -> Result<Vec<ObsConstant>> {
    let mut out = Vec::new();
    for k in ks {
        match obs_constant_dyadic(basis, spec, k, region, window, domain) {
            Ok(c) => out.push(c),
            Err(Error::Precondition(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Random unit-norm one-sided packets on `indices`, for norm-equivalence
/// checks.
pub fn random_packets(basis: &EigenBasis, indices: &[usize], h: f64, n: usize, seed: u64) -> Vec<WaveState> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut c = crate::linalg::random_complex(indices.len(), &mut rng);
            let nrm = crate::linalg::norm2(&c);
            c.iter_mut().for_each(|z| *z /= nrm);
            WaveState::packet(basis, indices, &c, Some(h), true)
        })
        .collect()
}
