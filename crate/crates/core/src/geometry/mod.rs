//! Domains, rough metrics, the wave symbol and its Hamiltonian field, and
//! boundary collar charts.
//!
//! Sign conventions follow the principal symbol `p(t, x; τ, ξ) = -τ² + g^{ij}(x) ξ_i ξ_j`
//! with Hamiltonian field `H_p = -2τ ∂_t + 2 g^{ij} ξ_i ∂_{x_j} - ∂_{x_k} g^{ij} ξ_i ξ_j ∂_{ξ_k}`.
//! Along a bicharacteristic `dt/ds = -2τ`, so for `τ > 0` physical time runs
//! against the flow parameter and the spatial velocity is `dx/dt = -g⁻¹ξ / τ`.

mod chart;
mod domain;
mod metric;
mod perturb;

pub use chart::{build_collar_chart, ChartCoords, CollarChart, PieceFrame};
pub use domain::{BoundaryPoint, Domain, Shape};
pub use metric::{MetricField, MetricSpec, Regularity, EXPR_VARS};
pub use perturb::{lipschitz_perturb, PerturbationReport, PerturbationShape};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, mat_vec, quad_form, Vec2};

/// Containment slack used for "x in the closure of the domain".
pub const CLOSURE_TOL: f64 = 1e-9;

/// A point `(t, x; τ, ξ)` of the space-time cotangent bundle. In one space
/// dimension only `x[0]` and `xi[0]` are meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub t: f64,
    pub x: Vec2,
    pub tau: f64,
    pub xi: Vec2,
}

impl PhasePoint {
    pub fn new(t: f64, x: Vec2, tau: f64, xi: Vec2) -> Self {
        Self { t, x, tau, xi }
    }

    /// Characteristic point over `x` whose ray moves with spatial velocity
    /// along `v` (normalised to unit `g`-speed) when `t` increases.
    ///
    /// The cotangent vector is `ξ = -τ g v / |v|_g`, so that `|ξ|_x = |τ|`.
    pub fn from_velocity(metric: &MetricField, t: f64, x: Vec2, v: Vec2, tau: f64) -> Self {
        let g = metric.g(x);
        let mut v = v;
        if metric.dim() == 1 {
            v[1] = 0.0;
        }
        let gv = mat_vec(&g, v);
        let norm = dot(v, gv).sqrt();
        let xi = [-tau * gv[0] / norm, -tau * gv[1] / norm];
        Self { t, x, tau, xi }
    }

    /// Spatial velocity `dx/dt` of the ray through this point.
    pub fn velocity(&self, metric: &MetricField) -> Vec2 {
        let gi = metric.g_inv(self.x);
        let w = mat_vec(&gi, self.xi);
        [-w[0] / self.tau, -w[1] / self.tau]
    }
}

/// Tangent vector `(dt, dx, dτ, dξ)` to the cotangent bundle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tangent {
    pub dt: f64,
    pub dx: Vec2,
    pub dtau: f64,
    pub dxi: Vec2,
}

/// The principal symbol of the wave operator, `-τ² + g^{ij}(x) ξ_i ξ_j`.
pub fn wave_symbol(domain: &Domain, metric: &MetricField, rho: &PhasePoint) -> Result<f64> {
    if !domain.contains(rho.x, CLOSURE_TOL) {
        return Err(Error::OutsideDomain(rho.x));
    }
    Ok(symbol_unchecked(metric, rho))
}

/// The wave symbol without the domain check (the metric is extended over
/// the bounding box, so this is meaningful slightly outside as well).
#[inline]
pub fn symbol_unchecked(metric: &MetricField, rho: &PhasePoint) -> f64 {
    -rho.tau * rho.tau + quad_form(&metric.g_inv(rho.x), rho.xi)
}

/// The Hamiltonian vector field of the wave symbol at `rho`.
pub fn hamiltonian_field(metric: &MetricField, rho: &PhasePoint) -> Result<Tangent> {
    let gi = metric.g_inv(rho.x);
    let dgi = metric.dg_inv(rho.x)?;
    let v = mat_vec(&gi, rho.xi);
    let mut dxi = [0.0; 2];
    for (k, d) in dgi.iter().enumerate().take(metric.dim()) {
        dxi[k] = -quad_form(d, rho.xi);
    }
    let mut dx = [2.0 * v[0], 2.0 * v[1]];
    if metric.dim() == 1 {
        dx[1] = 0.0;
    }
    Ok(Tangent { dt: -2.0 * rho.tau, dx, dtau: 0.0, dxi })
}

/// Directional derivative of the wave symbol along a tangent vector, by
/// central differences with step `h`.
pub fn symbol_derivative_along(metric: &MetricField, rho: &PhasePoint, v: &Tangent, h: f64) -> f64 {
    let shift = |s: f64| PhasePoint {
        t: rho.t + s * v.dt,
        x: [rho.x[0] + s * v.dx[0], rho.x[1] + s * v.dx[1]],
        tau: rho.tau + s * v.dtau,
        xi: [rho.xi[0] + s * v.dxi[0], rho.xi[1] + s * v.dxi[1]],
    };
    (symbol_unchecked(metric, &shift(h)) - symbol_unchecked(metric, &shift(-h))) / (2.0 * h)
}
