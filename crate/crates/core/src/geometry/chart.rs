use serde::{Deserialize, Serialize};

use super::{Domain, MetricField};
use crate::error::{Error, Result};
use crate::linalg::{det, dot, inverse, mat_mul, mat_vec, transpose, Mat2, Vec2};

/// Coordinates `(σ, z)` in the collar of one boundary piece. In one space
/// dimension `sigma` is unused.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartCoords {
    pub piece: usize,
    pub sigma: f64,
    pub z: f64,
}

/// Boundary data at one parameter value: the point, its unit tangent, the
/// inward `g`-unit normal `n_g = g⁻¹ν / |ν|_{g⁻¹}` and `∂_σ n_g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PieceFrame {
    pub point: Vec2,
    pub tangent: Vec2,
    pub normal: Vec2,
    pub n_g: Vec2,
    pub dn_g: Vec2,
}

/// Boundary-normal coordinates `x = q(σ) + z n_g(σ)` on a collar of fixed
/// width. At `z = 0` the chart metric satisfies `G_zz = 1`, `G_σz = 0`.
#[derive(Debug, Clone)]
pub struct CollarChart {
    domain: Domain,
    metric: MetricField,
    width: f64,
}

/// Builds the collar chart and checks that the Jacobian stays nondegenerate
/// over the whole collar.
pub fn build_collar_chart(domain: &Domain, metric: &MetricField, width: f64) -> Result<CollarChart> {
    if !(width > 0.0) {
        return Err(Error::Config(format!("collar width must be positive, got {width}")));
    }
    let chart = CollarChart { domain: domain.clone(), metric: metric.clone(), width };
    let ns = if domain.dim() == 1 { 1 } else { 96 };
    let nz = 12;
    for piece in 0..domain.n_pieces() {
        let (a, b) = domain.piece_range(piece);
        // the reference value at z = 0 fixes the orientation
        for i in 0..ns {
            let sigma = a + (b - a) * (i as f64 + 0.5) / ns as f64;
            let d0 = det(&chart.jacobian(ChartCoords { piece, sigma, z: 0.0 }));
            for k in 1..=nz {
                let z = width * k as f64 / nz as f64;
                let d = det(&chart.jacobian(ChartCoords { piece, sigma, z }));
                if !(d / d0 > 1e-3) {
                    return Err(Error::CollarTooWide { width, sigma, z });
                }
            }
        }
    }
    Ok(chart)
}

impl CollarChart {
    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn metric(&self) -> &MetricField {
        &self.metric
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    fn n_g_at(&self, piece: usize, sigma: f64) -> Vec2 {
        let b = self.domain.boundary_point(piece, sigma);
        let gi = self.metric.g_inv(b.point);
        let v = mat_vec(&gi, b.normal);
        let s = dot(b.normal, v).sqrt();
        [v[0] / s, v[1] / s]
    }

    pub fn frame(&self, piece: usize, sigma: f64) -> PieceFrame {
        let b = self.domain.boundary_point(piece, sigma);
        let n_g = self.n_g_at(piece, sigma);
        let dn_g = if self.domain.dim() == 1 {
            [0.0, 0.0]
        } else {
            let h = 1e-5;
            let (p, m) = (self.n_g_at(piece, sigma + h), self.n_g_at(piece, sigma - h));
            [(p[0] - m[0]) / (2.0 * h), (p[1] - m[1]) / (2.0 * h)]
        };
        PieceFrame { point: b.point, tangent: b.tangent, normal: b.normal, n_g, dn_g }
    }

    pub fn to_cartesian(&self, c: ChartCoords) -> Vec2 {
        let f = self.frame(c.piece, c.sigma);
        [f.point[0] + c.z * f.n_g[0], f.point[1] + c.z * f.n_g[1]]
    }

    /// `∂x/∂(σ, z)` with columns `(∂_σ x, ∂_z x)`. In one dimension the
    /// σ column is the unit vector of the unused second coordinate.
    pub fn jacobian(&self, c: ChartCoords) -> Mat2 {
        let f = self.frame(c.piece, c.sigma);
        if self.domain.dim() == 1 {
            return [[0.0, f.n_g[0]], [1.0, 0.0]];
        }
        let ds = [f.tangent[0] + c.z * f.dn_g[0], f.tangent[1] + c.z * f.dn_g[1]];
        [[ds[0], f.n_g[0]], [ds[1], f.n_g[1]]]
    }

    /// Chart metric `G = Jᵀ g J`; index 0 is σ, index 1 is z.
    pub fn metric_in_chart(&self, c: ChartCoords) -> Mat2 {
        let x = self.to_cartesian(c);
        let j = self.jacobian(c);
        mat_mul(&mat_mul(&transpose(&j), &self.metric.g(x)), &j)
    }

    /// Inverse chart metric `G⁻¹`.
    pub fn inverse_metric_in_chart(&self, c: ChartCoords) -> Mat2 {
        inverse(&self.metric_in_chart(c), 2)
    }

    /// Chart coordinates of `x` relative to `piece` by Newton iteration.
    pub fn from_cartesian(&self, piece: usize, x: Vec2) -> Result<ChartCoords> {
        let f0 = self.frame(piece, 0.0);
        if self.domain.dim() == 1 {
            let z = (x[0] - f0.point[0]) / f0.n_g[0];
            return Ok(ChartCoords { piece, sigma: 0.0, z });
        }
        let bp = self.domain.project(x);
        let mut sigma = if bp.piece == piece {
            bp.sigma
        } else {
            let p0 = self.domain.boundary_point(piece, 0.0);
            let (a, b) = self.domain.piece_range(piece);
            dot([x[0] - p0.point[0], x[1] - p0.point[1]], p0.tangent).clamp(a, b)
        };
        let f = self.frame(piece, sigma);
        let mut z = dot([x[0] - f.point[0], x[1] - f.point[1]], f.normal) / dot(f.n_g, f.normal);
        for _ in 0..40 {
            let c = ChartCoords { piece, sigma, z };
            let y = self.to_cartesian(c);
            let r = [y[0] - x[0], y[1] - x[1]];
            let ji = inverse(&self.jacobian(c), 2);
            let d = mat_vec(&ji, r);
            sigma -= d[0];
            z -= d[1];
            if d[0].abs() + d[1].abs() < 1e-14 {
                break;
            }
        }
        if self.domain.piece_periodic() {
            sigma = self.domain.normalize_sigma(piece, sigma);
        }
        let back = self.to_cartesian(ChartCoords { piece, sigma, z });
        if (back[0] - x[0]).hypot(back[1] - x[1]) > 1e-9 {
            return Err(Error::Precondition(format!("collar chart inverse failed to converge at {x:?}")));
        }
        Ok(ChartCoords { piece, sigma, z })
    }

    /// Pulls a Cartesian covector back to the chart: `(ξ', ζ) = Jᵀ ξ`.
    pub fn covector_to_chart(&self, c: ChartCoords, xi: Vec2) -> Vec2 {
        mat_vec(&transpose(&self.jacobian(c)), xi)
    }

    /// Inverse of [`Self::covector_to_chart`].
    pub fn covector_from_chart(&self, c: ChartCoords, eta: Vec2) -> Vec2 {
        let jt_inv = inverse(&transpose(&self.jacobian(c)), 2);
        let xi = mat_vec(&jt_inv, eta);
        if self.domain.dim() == 1 {
            [xi[0], 0.0]
        } else {
            xi
        }
    }

    /// Cartesian gradient of the collar coordinate `z`.
    pub fn z_gradient(&self, c: ChartCoords) -> Vec2 {
        let ji = inverse(&self.jacobian(c), 2);
        let g = ji[1];
        if self.domain.dim() == 1 {
            [g[0], 0.0]
        } else {
            g
        }
    }

    pub fn in_collar(&self, c: ChartCoords) -> bool {
        c.z >= -1e-12 && c.z <= self.width
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Shape;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn curved_metric() -> MetricField {
        MetricField::custom(
            2,
            "aniso",
            Arc::new(|x: Vec2| [[1.5 + 0.3 * x[0], 0.2 * x[1]], [0.2 * x[1], 1.0 + 0.1 * x[0] * x[0]]]),
            None,
        )
    }

    #[test]
    fn flat_disc_chart_is_polar() {
        let d = Domain::unit_disc();
        let m = MetricField::flat(2);
        let ch = build_collar_chart(&d, &m, 0.2).unwrap();
        let x = ch.to_cartesian(ChartCoords { piece: 0, sigma: 0.0, z: 0.1 });
        assert!((x[0] - 0.9).abs() < 1e-14 && x[1].abs() < 1e-14);
        let g = ch.metric_in_chart(ChartCoords { piece: 0, sigma: 0.3, z: 0.1 });
        assert!((g[0][0] - 0.81).abs() < 1e-8 && (g[1][1] - 1.0).abs() < 1e-12 && g[0][1].abs() < 1e-8);
    }

    #[test]
    fn chart_metric_normal_form_on_boundary() {
        let d = Domain::unit_square();
        let ch = build_collar_chart(&d, &curved_metric(), 0.1).unwrap();
        for piece in 0..4 {
            let g = ch.metric_in_chart(ChartCoords { piece, sigma: 0.37, z: 0.0 });
            assert!((g[1][1] - 1.0).abs() < 1e-12, "G_zz={}", g[1][1]);
            assert!(g[0][1].abs() < 1e-12 && g[1][0].abs() < 1e-12);
        }
    }

    #[test]
    fn too_wide_collar_rejected() {
        let d = Domain::unit_disc();
        let m = MetricField::flat(2);
        assert!(matches!(build_collar_chart(&d, &m, 1.2), Err(Error::CollarTooWide { .. })));
    }

    #[test]
    fn one_dimensional_chart() {
        let d = Domain::interval(0.0, 1.0);
        let m = MetricField::conformal_expr(1, "2").unwrap();
        let ch = build_collar_chart(&d, &m, 0.2).unwrap();
        let c = ch.from_cartesian(1, [0.9, 0.0]).unwrap();
        assert!((c.z - 0.05).abs() < 1e-14);
        let g = ch.metric_in_chart(c);
        assert!((g[1][1] - 1.0).abs() < 1e-14);
        let eta = ch.covector_to_chart(c, [3.0, 0.0]);
        assert!((eta[1] + 6.0).abs() < 1e-14 && eta[0] == 0.0);
        assert_eq!(ch.covector_from_chart(c, eta), [3.0, 0.0]);
    }

    #[test]
    fn level_set_chart_round_trip() {
        let d = Domain::new(Shape::LevelSet {
            phi: "1 - x^2/1.44 - y^2".into(),
            center: [0.0, 0.0],
            bbox_lo: [-1.3, -1.1],
            bbox_hi: [1.3, 1.1],
        })
        .unwrap();
        let ch = build_collar_chart(&d, &MetricField::flat(2), 0.1).unwrap();
        let c = ChartCoords { piece: 0, sigma: 1.1, z: 0.05 };
        let x = ch.to_cartesian(c);
        let back = ch.from_cartesian(0, x).unwrap();
        assert!((back.sigma - 1.1).abs() < 1e-9 && (back.z - 0.05).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn chart_round_trip_and_covectors(piece in 0usize..4, s in 0.05f64..0.95, z in 0.0f64..0.1,
                                          a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let d = Domain::unit_square();
            let ch = build_collar_chart(&d, &curved_metric(), 0.1).unwrap();
            let c = ChartCoords { piece, sigma: s, z };
            let x = ch.to_cartesian(c);
            let back = ch.from_cartesian(piece, x).unwrap();
            prop_assert!((back.sigma - s).abs() < 1e-9 && (back.z - z).abs() < 1e-9);
            let eta = ch.covector_to_chart(c, [a, b]);
            let xi = ch.covector_from_chart(c, eta);
            prop_assert!((xi[0] - a).abs() < 1e-12 && (xi[1] - b).abs() < 1e-12);
            // symbol invariance: |ξ|²_g = |η|²_G
            let lhs = crate::linalg::quad_form(&ch.metric().g_inv(x), [a, b]);
            let rhs = crate::linalg::quad_form(&ch.inverse_metric_in_chart(c), eta);
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs));
        }
    }
}
