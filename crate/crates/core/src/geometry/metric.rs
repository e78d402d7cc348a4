use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg::{inverse, sym_eigenvalues, Mat2, Vec2, IDENTITY};

pub type ScalarFn = Arc<dyn Fn(Vec2) -> f64 + Send + Sync>;
pub type VecFn = Arc<dyn Fn(Vec2) -> Vec2 + Send + Sync>;
pub type MatFn = Arc<dyn Fn(Vec2) -> Mat2 + Send + Sync>;
pub type DMatFn = Arc<dyn Fn(Vec2) -> [Mat2; 2] + Send + Sync>;

/// Variables available in metric expressions. `x1`, `x2` alias `x`, `y`.
pub const EXPR_VARS: [&str; 4] = ["x", "y", "x1", "x2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularity {
    Smooth,
    C1,
    Lipschitz,
}

/// Serializable description of how a metric was built; embedded in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Flat,
    Constant { g: Mat2 },
    /// `g^{ij} = c(x)² δ^{ij}` with wave speed `c`
    Conformal { speed: String },
    /// `g_{ij}` given entrywise
    Matrix { g11: String, g12: String, g22: String },
    Perturbed { base: Box<MetricSpec>, epsilon: f64, seed: u64, conformal: bool },
    Scaled { base: Box<MetricSpec>, speed_factor: f64 },
    Custom { name: String },
}

/// A symmetric positive definite metric `g_{ij}(x)` together with a density
/// `κ(x)`, defined on the bounding box of a domain.
#[derive(Clone)]
pub struct MetricField {
    dim: usize,
    spec: MetricSpec,
    g_fn: MatFn,
    g_inv_fn: MatFn,
    dg_inv_fn: Option<DMatFn>,
    kappa_fn: Option<ScalarFn>,
    regularity: Regularity,
    lip_modulus: f64,
    fd_step: Option<f64>,
}

impl fmt::Debug for MetricField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MetricField")
            .field("dim", &self.dim)
            .field("spec", &self.spec)
            .field("regularity", &self.regularity)
            .field("lip_modulus", &self.lip_modulus)
            .finish()
    }
}

fn expr_args(x: Vec2) -> [f64; 4] {
    [x[0], x[1], x[0], x[1]]
}

/// Partial derivative in coordinate `k`, covering both spellings of the
/// variable.
#[derive(Clone)]
struct Partial(Expr, Expr);

impl Partial {
    fn new(e: &Expr, k: usize) -> Self {
        Self(e.diff_index(k), e.diff_index(k + 2))
    }

    fn eval(&self, a: &[f64; 4]) -> f64 {
        self.0.eval(a) + self.1.eval(a)
    }
}

impl MetricField {
    fn base(dim: usize, spec: MetricSpec, g_fn: MatFn, g_inv_fn: MatFn, dg_inv_fn: Option<DMatFn>) -> Self {
        Self {
            dim,
            spec,
            g_fn,
            g_inv_fn,
            dg_inv_fn,
            kappa_fn: None,
            regularity: Regularity::Smooth,
            lip_modulus: 0.0,
            fd_step: Some(1e-5),
        }
    }

    pub fn flat(dim: usize) -> Self {
        Self::constant_with_spec(dim, IDENTITY, MetricSpec::Flat)
    }

    pub fn constant(dim: usize, g: Mat2) -> Self {
        Self::constant_with_spec(dim, g, MetricSpec::Constant { g })
    }

    fn constant_with_spec(dim: usize, g: Mat2, spec: MetricSpec) -> Self {
        let g = mask(g, dim);
        let gi = inverse(&g, dim);
        Self::base(
            dim,
            spec,
            Arc::new(move |_| g),
            Arc::new(move |_| gi),
            Some(Arc::new(|_| [[[0.0; 2]; 2]; 2])),
        )
    }

    /// Conformal metric with wave speed `c`: `g^{ij} = c² δ^{ij}`. `dc` is the
    /// gradient of `c`; without it derivatives are finite-differenced.
    pub fn conformal(dim: usize, c: ScalarFn, dc: Option<VecFn>) -> Self {
        let c1 = c.clone();
        let c2 = c.clone();
        let g_fn: MatFn = Arc::new(move |x| {
            let s = c1(x).powi(-2);
            mask([[s, 0.0], [0.0, s]], dim)
        });
        let g_inv_fn: MatFn = Arc::new(move |x| {
            let s = c2(x).powi(2);
            mask([[s, 0.0], [0.0, s]], dim)
        });
        let dg = dc.map(|dc| {
            let f: DMatFn = Arc::new(move |x| {
                let cx = c(x);
                let g = dc(x);
                let mut out = [[[0.0; 2]; 2]; 2];
                for k in 0..dim {
                    let v = 2.0 * cx * g[k];
                    out[k] = mask([[v, 0.0], [0.0, v]], dim);
                }
                out
            });
            f
        });
        Self::base(dim, MetricSpec::Custom { name: "conformal".into() }, g_fn, g_inv_fn, dg)
    }

    /// Conformal metric from a speed expression in `x, y`.
    pub fn conformal_expr(dim: usize, speed: &str) -> Result<Self> {
        let e = Expr::parse(speed, &EXPR_VARS)?;
        let de = [Partial::new(&e, 0), Partial::new(&e, 1)];
        let e1 = e.clone();
        let c: ScalarFn = Arc::new(move |x| e1.eval(&expr_args(x)));
        let dc: VecFn = Arc::new(move |x| {
            let a = expr_args(x);
            [de[0].eval(&a), de[1].eval(&a)]
        });
        let mut m = Self::conformal(dim, c, Some(dc));
        m.spec = MetricSpec::Conformal { speed: speed.to_string() };
        Ok(m)
    }

    /// Metric from entrywise expressions for `g_{ij}`.
    pub fn matrix_expr(dim: usize, g11: &str, g12: &str, g22: &str) -> Result<Self> {
        let es = [
            Expr::parse(g11, &EXPR_VARS)?,
            Expr::parse(g12, &EXPR_VARS)?,
            Expr::parse(g22, &EXPR_VARS)?,
        ];
        let des: Vec<[Partial; 2]> = es.iter().map(|e| [Partial::new(e, 0), Partial::new(e, 1)]).collect();
        let es1 = es.clone();
        let g_fn: MatFn = Arc::new(move |x| {
            let a = expr_args(x);
            let (p, q, r) = (es1[0].eval(&a), es1[1].eval(&a), es1[2].eval(&a));
            mask([[p, q], [q, r]], dim)
        });
        let g2 = g_fn.clone();
        let g_inv_fn: MatFn = Arc::new(move |x| inverse(&g2(x), dim));
        let g3 = g_fn.clone();
        let dg: DMatFn = Arc::new(move |x| {
            let a = expr_args(x);
            let gi = inverse(&g3(x), dim);
            let mut out = [[[0.0; 2]; 2]; 2];
            for k in 0..dim {
                let (p, q, r) = (des[0][k].eval(&a), des[1][k].eval(&a), des[2][k].eval(&a));
                let dgk = mask([[p, q], [q, r]], dim);
                // ∂(g⁻¹) = -g⁻¹ (∂g) g⁻¹
                let t = crate::linalg::mat_mul(&crate::linalg::mat_mul(&gi, &dgk), &gi);
                out[k] = [[-t[0][0], -t[0][1]], [-t[1][0], -t[1][1]]];
            }
            out
        });
        let mut m = Self::base(
            dim,
            MetricSpec::Matrix { g11: g11.into(), g12: g12.into(), g22: g22.into() },
            g_fn,
            g_inv_fn,
            Some(dg),
        );
        m.regularity = Regularity::Smooth;
        Ok(m)
    }

    /// Metric from a closure for `g_{ij}`; `dg_inv` supplies `∂_k g^{ij}`.
    pub fn custom(dim: usize, name: &str, g: MatFn, dg_inv: Option<DMatFn>) -> Self {
        let g1 = g.clone();
        let g_inv_fn: MatFn = Arc::new(move |x| inverse(&mask(g1(x), dim), dim));
        let g_fn: MatFn = Arc::new(move |x| mask(g(x), dim));
        Self::base(dim, MetricSpec::Custom { name: name.into() }, g_fn, g_inv_fn, dg_inv)
    }

    /// Custom metric given by its inverse `g^{ij}`.
    pub fn from_inverse(dim: usize, spec: MetricSpec, g_inv: MatFn, dg_inv: Option<DMatFn>) -> Self {
        let gi = g_inv.clone();
        let g_fn: MatFn = Arc::new(move |x| inverse(&mask(gi(x), dim), dim));
        let g_inv_fn: MatFn = Arc::new(move |x| mask(g_inv(x), dim));
        Self::base(dim, spec, g_fn, g_inv_fn, dg_inv)
    }

    /// Builds a metric from its serializable description.
    pub fn from_spec(dim: usize, spec: &MetricSpec) -> Result<Self> {
        match spec {
            MetricSpec::Flat => Ok(Self::flat(dim)),
            MetricSpec::Constant { g } => Ok(Self::constant(dim, *g)),
            MetricSpec::Conformal { speed } => Self::conformal_expr(dim, speed),
            MetricSpec::Matrix { g11, g12, g22 } => Self::matrix_expr(dim, g11, g12, g22),
            MetricSpec::Scaled { base, speed_factor } => Ok(Self::from_spec(dim, base)?.scaled(*speed_factor)),
            MetricSpec::Perturbed { .. } => Err(Error::Config(
                "perturbed metrics need a domain; build them with lipschitz_perturb".into(),
            )),
            MetricSpec::Custom { name } => Err(Error::Config(format!("custom metric '{name}' cannot be rebuilt"))),
        }
    }

    pub fn with_kappa(mut self, kappa: ScalarFn) -> Self {
        self.kappa_fn = Some(kappa);
        self
    }

    pub fn with_regularity(mut self, regularity: Regularity, lip_modulus: f64) -> Self {
        self.regularity = regularity;
        self.lip_modulus = lip_modulus;
        self
    }

    pub fn with_spec(mut self, spec: MetricSpec) -> Self {
        self.spec = spec;
        self
    }

    /// Drops the finite-difference fallback; metrics without analytic
    /// derivatives then fail with a configuration error.
    pub fn without_finite_differences(mut self) -> Self {
        self.fd_step = None;
        self
    }

    /// Wave speed multiplied by `factor`, i.e. `g^{ij} ↦ factor² g^{ij}`.
    pub fn scaled(&self, factor: f64) -> Self {
        let f2 = factor * factor;
        let (g, gi, dg) = (self.g_fn.clone(), self.g_inv_fn.clone(), self.dg_inv_fn.clone());
        let scale = |m: Mat2, s: f64| [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]];
        let dim = self.dim;
        let mut out = self.clone();
        out.g_fn = Arc::new(move |x| mask(scale(g(x), 1.0 / f2), dim));
        out.g_inv_fn = Arc::new(move |x| mask(scale(gi(x), f2), dim));
        out.dg_inv_fn = dg.map(|d| {
            let f: DMatFn = Arc::new(move |x| {
                let v = d(x);
                [scale(v[0], f2), scale(v[1], f2)]
            });
            f
        });
        out.spec = MetricSpec::Scaled { base: Box::new(self.spec.clone()), speed_factor: factor };
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spec(&self) -> &MetricSpec {
        &self.spec
    }

    pub fn regularity(&self) -> Regularity {
        self.regularity
    }

    pub fn lip_modulus(&self) -> f64 {
        self.lip_modulus
    }

    pub fn has_analytic_derivative(&self) -> bool {
        self.dg_inv_fn.is_some()
    }

    #[inline]
    pub fn g(&self, x: Vec2) -> Mat2 {
        (self.g_fn)(x)
    }

    #[inline]
    pub fn g_inv(&self, x: Vec2) -> Mat2 {
        (self.g_inv_fn)(x)
    }

    /// `∂_k g^{ij}` for `k = 0, 1`.
    pub fn dg_inv(&self, x: Vec2) -> Result<[Mat2; 2]> {
        if let Some(f) = &self.dg_inv_fn {
            return Ok(f(x));
        }
        let h = self
            .fd_step
            .ok_or_else(|| Error::Config("metric has no derivative oracle and finite differences are disabled".into()))?;
        let mut out = [[[0.0; 2]; 2]; 2];
        for (k, slot) in out.iter_mut().enumerate().take(self.dim) {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let (a, b) = (self.g_inv(xp), self.g_inv(xm));
            for i in 0..2 {
                for j in 0..2 {
                    slot[i][j] = (a[i][j] - b[i][j]) / (2.0 * h);
                }
            }
        }
        Ok(out)
    }

    pub fn has_kappa(&self) -> bool {
        self.kappa_fn.is_some()
    }

    pub fn kappa(&self, x: Vec2) -> f64 {
        self.kappa_fn.as_ref().map_or(1.0, |k| k(x))
    }

    pub fn sqrt_det_g(&self, x: Vec2) -> f64 {
        let g = self.g(x);
        if self.dim == 1 {
            g[0][0].sqrt()
        } else {
            crate::linalg::det(&g).sqrt()
        }
    }

    /// Smallest and largest eigenvalue of `g_{ij}` over the sample points;
    /// errors if positivity fails anywhere.
    pub fn spd_bounds(&self, points: &[Vec2]) -> Result<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for &x in points {
            let ev = sym_eigenvalues(&self.g(x), self.dim);
            if !(ev[0] > 0.0) || !ev[1].is_finite() {
                return Err(Error::Precondition(format!("metric not positive definite at {x:?}")));
            }
            lo = lo.min(ev[0]);
            hi = hi.max(ev[1]);
        }
        Ok((lo, hi))
    }

    /// Largest change of `∂g^{ij}` between points `δ` apart, over the
    /// samples. Tends to zero with `δ` for C¹ metrics and stays of order
    /// one across the kinks of a Lipschitz one.
    pub fn derivative_oscillation(&self, points: &[Vec2], delta: f64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for &x in points {
            let a = self.dg_inv(x)?;
            for k in 0..self.dim {
                let mut y = x;
                y[k] += delta;
                let b = self.dg_inv(y)?;
                for m in 0..self.dim {
                    for i in 0..2 {
                        for j in 0..2 {
                            worst = worst.max((a[m][i][j] - b[m][i][j]).abs());
                        }
                    }
                }
            }
        }
        Ok(worst)
    }
}

/// Zeroes the unused row/column in one dimension (keeping a unit diagonal).
fn mask(m: Mat2, dim: usize) -> Mat2 {
    if dim == 1 {
        [[m[0][0], 0.0], [0.0, 1.0]]
    } else {
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expr_conformal_matches_closure() {
        let m = MetricField::conformal_expr(2, "1 + 0.2*sin(3*x)*y").unwrap();
        let x = [0.3, 0.7];
        let c = 1.0 + 0.2 * (0.9f64).sin() * 0.7;
        assert!((m.g_inv(x)[0][0] - c * c).abs() < 1e-14);
        assert!((m.g(x)[1][1] - 1.0 / (c * c)).abs() < 1e-14);
        let d = m.dg_inv(x).unwrap();
        let dcdx = 0.2 * 3.0 * (0.9f64).cos() * 0.7;
        assert!((d[0][0][0] - 2.0 * c * dcdx).abs() < 1e-12);
    }

    #[test]
    fn matrix_expr_inverse_derivative_matches_fd() {
        let m = MetricField::matrix_expr(2, "2 + x^2", "0.3*y", "1 + x*y").unwrap();
        let fd = MetricField::custom(2, "fd", {
            let m = m.clone();
            Arc::new(move |x| m.g(x))
        }, None);
        let x = [0.4, 0.6];
        let a = m.dg_inv(x).unwrap();
        let b = fd.dg_inv(x).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    assert!((a[k][i][j] - b[k][i][j]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn scaled_speed() {
        let m = MetricField::flat(2).scaled(0.5);
        assert_eq!(m.g_inv([0.0, 0.0])[0][0], 0.25);
        assert_eq!(m.g([0.0, 0.0])[1][1], 4.0);
    }

    #[test]
    fn one_dimensional_mask() {
        let m = MetricField::conformal_expr(1, "2").unwrap();
        assert_eq!(m.g_inv([0.1, 5.0]), [[4.0, 0.0], [0.0, 1.0]]);
        assert!((m.sqrt_det_g([0.0, 0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn spd_failure_detected() {
        let m = MetricField::matrix_expr(2, "x", "0", "1").unwrap();
        assert!(m.spd_bounds(&[[0.5, 0.5], [-0.1, 0.5]]).is_err());
    }

    #[test]
    fn spec_round_trip() {
        let spec = MetricSpec::Conformal { speed: "1 + x".into() };
        let s = serde_json::to_string(&spec).unwrap();
        let back: MetricSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, spec);
        let m = MetricField::from_spec(2, &back).unwrap();
        assert_eq!(m.g_inv([1.0, 0.0])[0][0], 4.0);
    }
}
