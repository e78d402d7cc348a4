//! Pointwise boundary laws: classification of boundary phase points,
//! hyperbolic lifts, the reflection involution, the gliding vector field and
//! escape-set membership.
//!
//! All quantities are computed in the collar chart `(σ, z)` with dual
//! variables `(ξ', ζ)`. With `τ > 0` a point with `ζ < 0` is carried out of
//! the domain as the flow parameter `s` increases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{hamiltonian_field, ChartCoords, CollarChart, PhasePoint, Tangent};
use crate::linalg::{dot, mat_vec, quad_form, Vec2};

/// Relative tolerance on `p(π∥ρ)` separating elliptic, hyperbolic and
/// glancing points; multiplied by `τ² + |ξ|²`.
pub const EPS_CLS: f64 = 1e-6;
/// Absolute tolerance on `H_p² z` splitting glancing points.
pub const EPS_D: f64 = 1e-6;
/// Step of the finite difference used for `H_p² z`.
pub const HP2Z_STEP: f64 = 1e-5;
/// Distance from `z = 0` accepted as "on the boundary".
pub const ON_BOUNDARY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    Elliptic,
    /// hyperbolic with `ζ ≥ 0`
    HyperbolicPlus,
    /// hyperbolic with `ζ < 0`
    HyperbolicMinus,
    GlancingDiffractive,
    GlancingGliding,
    GlancingOrder3,
}

impl BoundaryTag {
    pub fn is_hyperbolic(self) -> bool {
        matches!(self, Self::HyperbolicPlus | Self::HyperbolicMinus)
    }

    pub fn is_glancing(self) -> bool {
        matches!(self, Self::GlancingDiffractive | Self::GlancingGliding | Self::GlancingOrder3)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Elliptic => "elliptic",
            Self::HyperbolicPlus => "hyperbolic_plus",
            Self::HyperbolicMinus => "hyperbolic_minus",
            Self::GlancingDiffractive => "diffractive",
            Self::GlancingGliding => "gliding",
            Self::GlancingOrder3 => "order3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryClass {
    pub tag: BoundaryTag,
    pub p_parallel: f64,
    pub hpz: f64,
    pub hp2z: f64,
    pub coords: ChartCoords,
    /// chart covector `(ξ', ζ)`
    pub eta: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Future,
    Past,
}

/// Escape-set membership. Order-three contacts are not decided pointwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscapeVerdict {
    Escapes,
    Stays,
    Indeterminate,
}

impl EscapeVerdict {
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Self::Escapes => Some(true),
            Self::Stays => Some(false),
            Self::Indeterminate => None,
        }
    }
}

/// Chart coordinates and chart covector of a point over the boundary piece.
pub fn boundary_coords(chart: &CollarChart, piece: usize, rho: &PhasePoint) -> Result<(ChartCoords, Vec2)> {
    let c = chart.from_cartesian(piece, rho.x)?;
    if c.z.abs() > ON_BOUNDARY_TOL {
        return Err(Error::Precondition(format!("phase point at z = {:.3e} is not on the boundary", c.z)));
    }
    let c = ChartCoords { z: 0.0, ..c };
    Ok((c, chart.covector_to_chart(c, rho.xi)))
}

/// Cartesian covector `∇z` at a boundary point, i.e. `ν / |ν|_{g⁻¹}` with
/// `ν` the inward Euclidean normal.
pub fn z_covector(chart: &CollarChart, piece: usize, sigma: f64) -> Vec2 {
    let b = chart.domain().boundary_point(piece, sigma);
    let gi = chart.metric().g_inv(b.point);
    let s = quad_form(&gi, b.normal).sqrt();
    [b.normal[0] / s, b.normal[1] / s]
}

/// `H_p z` at an arbitrary point of the collar.
fn hpz_at(chart: &CollarChart, piece: usize, rho: &PhasePoint) -> Result<f64> {
    let c = chart.from_cartesian(piece, rho.x)?;
    let dz = chart.z_gradient(c);
    let v = mat_vec(&chart.metric().g_inv(rho.x), rho.xi);
    Ok(2.0 * dot(dz, v))
}

/// `H_p² z` by a central difference of `H_p z` along the Hamiltonian flow.
pub fn hp2z(chart: &CollarChart, piece: usize, rho: &PhasePoint) -> Result<f64> {
    let hp = hamiltonian_field(chart.metric(), rho)?;
    let shift = |s: f64| PhasePoint {
        t: rho.t + s * hp.dt,
        x: [rho.x[0] + s * hp.dx[0], rho.x[1] + s * hp.dx[1]],
        tau: rho.tau,
        xi: [rho.xi[0] + s * hp.dxi[0], rho.xi[1] + s * hp.dxi[1]],
    };
    let h = HP2Z_STEP;
    Ok((hpz_at(chart, piece, &shift(h))? - hpz_at(chart, piece, &shift(-h))?) / (2.0 * h))
}

pub fn classification_tolerance(rho: &PhasePoint) -> f64 {
    EPS_CLS * (rho.tau * rho.tau + dot(rho.xi, rho.xi))
}

/// Classifies a boundary phase point relative to the nearest boundary piece.
pub fn classify(chart: &CollarChart, rho: &PhasePoint) -> Result<BoundaryClass> {
    let piece = chart.domain().project(rho.x).piece;
    classify_on(chart, piece, rho)
}

/// Classifies a boundary phase point relative to a given boundary piece.
pub fn classify_on(chart: &CollarChart, piece: usize, rho: &PhasePoint) -> Result<BoundaryClass> {
    let (coords, eta) = boundary_coords(chart, piece, rho)?;
    let gi = chart.inverse_metric_in_chart(coords);
    let p_parallel = -rho.tau * rho.tau + gi[0][0] * eta[0] * eta[0];
    let hpz = 2.0 * (gi[1][1] * eta[1] + gi[1][0] * eta[0]);
    let eps = classification_tolerance(rho);
    let mut out = BoundaryClass { tag: BoundaryTag::Elliptic, p_parallel, hpz, hp2z: 0.0, coords, eta };
    if p_parallel > eps {
        return Ok(out);
    }
    if p_parallel < -eps {
        out.tag = if eta[1] >= 0.0 { BoundaryTag::HyperbolicPlus } else { BoundaryTag::HyperbolicMinus };
        return Ok(out);
    }
    out.hp2z = hp2z(chart, piece, rho)?;
    out.tag = if out.hp2z > EPS_D {
        BoundaryTag::GlancingDiffractive
    } else if out.hp2z < -EPS_D {
        BoundaryTag::GlancingGliding
    } else {
        BoundaryTag::GlancingOrder3
    };
    Ok(out)
}

/// The two characteristic points `(ρ⁻, ρ⁺)` over a hyperbolic boundary
/// point, with `ζ^± = ±√(-p(π∥ρ'))`. The `ζ` component of the input is
/// ignored.
pub fn hyperbolic_lift(chart: &CollarChart, piece: usize, rho: &PhasePoint) -> Result<(PhasePoint, PhasePoint)> {
    let (coords, eta) = boundary_coords(chart, piece, rho)?;
    let gi = chart.inverse_metric_in_chart(coords);
    let p_parallel = -rho.tau * rho.tau + gi[0][0] * eta[0] * eta[0];
    if !(p_parallel < -classification_tolerance(rho)) {
        return Err(Error::Classification {
            expected: "hyperbolic".into(),
            found: format!("p_parallel = {p_parallel:.3e}"),
        });
    }
    // G^{zz} ζ² + 2 G^{σz} ξ' ζ + p_parallel = 0; the cross term vanishes in
    // the collar chart but is kept so the lifts are exactly characteristic
    let (a, b) = (gi[1][1], gi[1][0] * eta[0]);
    let disc = (b * b - a * p_parallel).sqrt();
    let zp = (-b + disc) / a;
    let zm = (-b - disc) / a;
    let lift = |zeta: f64| PhasePoint { xi: chart.covector_from_chart(coords, [eta[0], zeta]), ..*rho };
    Ok((lift(zm), lift(zp)))
}

/// The reflection `Σ`: negates `ζ` keeping `τ` and `ξ'`.
pub fn reflect(chart: &CollarChart, piece: usize, rho: &PhasePoint) -> Result<PhasePoint> {
    let c = chart.from_cartesian(piece, rho.x)?;
    if c.z.abs() > ON_BOUNDARY_TOL {
        return Err(Error::Precondition(format!("reflection off the boundary (z = {:.3e})", c.z)));
    }
    // (ξ', ζ) ↦ (ξ', -ζ) in the collar chart, mapped back to Cartesian
    let c = ChartCoords { z: 0.0, ..c };
    let eta = reflect_chart(chart.covector_to_chart(c, rho.xi));
    let mut xi = chart.covector_from_chart(c, eta);
    if chart.domain().dim() == 1 {
        xi[1] = 0.0;
    }
    Ok(PhasePoint { xi, ..*rho })
}

/// The chart-level reflection on `(ξ', ζ)`.
pub fn reflect_chart(eta: Vec2) -> Vec2 {
    [eta[0], -eta[1]]
}

/// The gliding vector field `H_p^G = H_p + (H_p²z / H_z²p) H_z` at a
/// glancing point; `H_z²p = 2` in the collar chart and `H_z = -∂_ζ`.
pub fn gliding_field(chart: &CollarChart, piece: usize, rho: &PhasePoint) -> Result<Tangent> {
    let cls = classify_on(chart, piece, rho)?;
    if !cls.tag.is_glancing() {
        return Err(Error::Classification { expected: "glancing".into(), found: cls.tag.name().into() });
    }
    let mut v = hamiltonian_field(chart.metric(), rho)?;
    if cls.hp2z == 0.0 {
        return Ok(v);
    }
    let dz = z_covector(chart, piece, cls.coords.sigma);
    let k = cls.hp2z / 2.0;
    v.dxi[0] -= k * dz[0];
    v.dxi[1] -= k * dz[1];
    Ok(v)
}

/// Escape-set membership in the flow parameter sense: `Future` asks
/// whether the bicharacteristic leaves the closed cotangent bundle for
/// `s > 0` immediately.
pub fn is_escape_point(class: &BoundaryClass, direction: Direction) -> EscapeVerdict {
    use BoundaryTag::*;
    match (class.tag, direction) {
        (HyperbolicMinus, Direction::Future) | (HyperbolicPlus, Direction::Past) => EscapeVerdict::Escapes,
        (HyperbolicMinus, Direction::Past) | (HyperbolicPlus, Direction::Future) => EscapeVerdict::Stays,
        (GlancingGliding, _) => EscapeVerdict::Escapes,
        (GlancingDiffractive, _) | (Elliptic, _) => EscapeVerdict::Stays,
        (GlancingOrder3, _) => EscapeVerdict::Indeterminate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_collar_chart, symbol_unchecked, Domain, MetricField};
    use proptest::prelude::*;

    fn half_plane() -> CollarChart {
        build_collar_chart(&Domain::half_plane(4.0), &MetricField::flat(2), 0.5).unwrap()
    }

    fn disc() -> CollarChart {
        build_collar_chart(&Domain::unit_disc(), &MetricField::flat(2), 0.2).unwrap()
    }

    #[test]
    fn half_plane_normal_incidence_is_hyperbolic() {
        let ch = half_plane();
        let rho = PhasePoint::new(0.0, [0.3, 0.0], 1.0, [0.0, 0.0]);
        let c = classify_on(&ch, 0, &rho).unwrap();
        assert_eq!(c.p_parallel, -1.0);
        assert!(c.tag.is_hyperbolic());
        let (m, p) = hyperbolic_lift(&ch, 0, &rho).unwrap();
        assert_eq!(m.xi, [0.0, -1.0]);
        assert_eq!(p.xi, [0.0, 1.0]);
    }

    #[test]
    fn lift_with_tangential_momentum() {
        let ch = half_plane();
        let rho = PhasePoint::new(0.0, [0.3, 0.0], 2.0, [1.0, 0.0]);
        let (m, p) = hyperbolic_lift(&ch, 0, &rho).unwrap();
        assert!((p.xi[1] - 3f64.sqrt()).abs() < 1e-15 && (m.xi[1] + 3f64.sqrt()).abs() < 1e-15);
        // approaching the glancing set the lifts merge
        let rho = PhasePoint::new(0.0, [0.3, 0.0], 1.0 + 1e-5, [1.0, 0.0]);
        let (m, p) = hyperbolic_lift(&ch, 0, &rho).unwrap();
        assert!(p.xi[1] < 5e-3 && m.xi[1] > -5e-3);
    }

    #[test]
    fn straight_boundary_glancing_is_order3() {
        let ch = half_plane();
        let rho = PhasePoint::new(0.0, [0.3, 0.0], 1.0, [1.0, 0.0]);
        let c = classify_on(&ch, 0, &rho).unwrap();
        assert_eq!(c.p_parallel, 0.0);
        assert_eq!(c.tag, BoundaryTag::GlancingOrder3);
        assert_eq!(is_escape_point(&c, Direction::Future), EscapeVerdict::Indeterminate);
        // H_p^G = H_p on a straight boundary
        let g = gliding_field(&ch, 0, &rho).unwrap();
        assert_eq!(g, hamiltonian_field(ch.metric(), &rho).unwrap());
    }

    #[test]
    fn disc_tangent_is_gliding_with_curvature_value() {
        let ch = disc();
        let rho = PhasePoint::new(0.0, [1.0, 0.0], 1.0, [0.0, 1.0]);
        let c = classify_on(&ch, 0, &rho).unwrap();
        assert_eq!(c.tag, BoundaryTag::GlancingGliding);
        // z(s) = 1 - sqrt(1 + 4 s²) along the straight chord, so z'' = -4
        assert!((c.hp2z + 4.0).abs() < 1e-5, "{}", c.hp2z);
        assert_eq!(is_escape_point(&c, Direction::Past), EscapeVerdict::Escapes);
    }

    #[test]
    fn gliding_field_keeps_disc_constraint() {
        let ch = disc();
        let rho = PhasePoint::new(0.0, [1.0, 0.0], 1.0, [0.0, 1.0]);
        let v = gliding_field(&ch, 0, &rho).unwrap();
        assert_eq!(v.dtau, 0.0);
        assert_eq!(v.dt, -2.0);
        for ds in [1e-2, 5e-3] {
            let x = [rho.x[0] + ds * v.dx[0], rho.x[1] + ds * v.dx[1]];
            let r = x[0].hypot(x[1]);
            // one Euler step leaves the circle at second order only
            assert!((r - 1.0).abs() < 3.0 * ds * ds, "ds={ds}: r-1={}", r - 1.0);
        }
        // d/ds of ζ vanishes along the gliding field
        let zeta = |p: &PhasePoint| dot(ch.frame(0, ch.from_cartesian(0, p.x).unwrap().sigma).n_g, p.xi);
        let ds = 1e-4;
        let q = PhasePoint {
            x: [rho.x[0] + ds * v.dx[0], rho.x[1] + ds * v.dx[1]],
            xi: [rho.xi[0] + ds * v.dxi[0], rho.xi[1] + ds * v.dxi[1]],
            ..rho
        };
        assert!(zeta(&q).abs() < 1e-6);
    }

    #[test]
    fn non_glancing_rejected_by_gliding_field() {
        let ch = half_plane();
        let rho = PhasePoint::new(0.0, [0.3, 0.0], 1.0, [0.0, 1.0]);
        assert!(matches!(gliding_field(&ch, 0, &rho), Err(Error::Classification { .. })));
        let rho = PhasePoint::new(0.0, [0.3, 0.5], 1.0, [0.0, 1.0]);
        assert!(matches!(classify_on(&ch, 0, &rho), Err(Error::Precondition(_))));
    }

    #[test]
    fn reflection_examples() {
        let ch = half_plane();
        let rho = PhasePoint::new(0.2, [0.3, 0.0], 1.0, [0.5, 1.0]);
        let r = reflect(&ch, 0, &rho).unwrap();
        assert_eq!(r.xi, [0.5, -1.0]);
        assert_eq!((r.t, r.tau, r.x), (rho.t, rho.tau, rho.x));
        let g = PhasePoint::new(0.0, [0.3, 0.0], 1.0, [1.0, 0.0]);
        assert_eq!(reflect(&ch, 0, &g).unwrap(), g);
        // normal incidence on the disc reverses the covector
        let ch = disc();
        let rho = PhasePoint::new(0.0, [0.6, 0.8], 1.0, [0.6, 0.8]);
        let r = reflect(&ch, 0, &rho).unwrap();
        assert!((r.xi[0] + 0.6).abs() < 1e-14 && (r.xi[1] + 0.8).abs() < 1e-14);
    }

    #[test]
    fn escape_table() {
        let mk = |tag| BoundaryClass {
            tag,
            p_parallel: 0.0,
            hpz: 0.0,
            hp2z: 0.0,
            coords: ChartCoords { piece: 0, sigma: 0.0, z: 0.0 },
            eta: [0.0, 0.0],
        };
        use BoundaryTag::*;
        assert_eq!(is_escape_point(&mk(HyperbolicMinus), Direction::Future), EscapeVerdict::Escapes);
        assert_eq!(is_escape_point(&mk(HyperbolicMinus), Direction::Past), EscapeVerdict::Stays);
        assert_eq!(is_escape_point(&mk(HyperbolicPlus), Direction::Past), EscapeVerdict::Escapes);
        assert_eq!(is_escape_point(&mk(GlancingDiffractive), Direction::Future), EscapeVerdict::Stays);
        assert_eq!(is_escape_point(&mk(GlancingDiffractive), Direction::Past), EscapeVerdict::Stays);
        assert_eq!(is_escape_point(&mk(GlancingGliding), Direction::Past), EscapeVerdict::Escapes);
    }

    fn aniso_square() -> CollarChart {
        let m = MetricField::matrix_expr(2, "1.3 + 0.2*x", "0.1*y", "1 + 0.1*x*y").unwrap();
        build_collar_chart(&Domain::unit_square(), &m, 0.1).unwrap()
    }

    proptest! {
        #[test]
        fn reflect_is_an_involution_and_lifts_are_characteristic(
            piece in 0usize..4, s in 0.05f64..0.95, tau in 0.5f64..3.0, a in -0.6f64..0.6) {
            let ch = aniso_square();
            let x = ch.domain().boundary_point(piece, s).point;
            let c = ch.from_cartesian(piece, x).unwrap();
            let gi = ch.inverse_metric_in_chart(c);
            // tangential momentum inside the hyperbolic region
            let xt = a * tau / gi[0][0].sqrt();
            let rho = PhasePoint::new(0.0, x, tau, ch.covector_from_chart(c, [xt, 0.0]));
            let (m, p) = hyperbolic_lift(&ch, piece, &rho).unwrap();
            for q in [m, p] {
                prop_assert!(symbol_unchecked(ch.metric(), &q).abs() <= 1e-12 * (1.0 + tau * tau));
            }
            let r = reflect(&ch, piece, &p).unwrap();
            let rr = reflect(&ch, piece, &r).unwrap();
            prop_assert!((rr.xi[0] - p.xi[0]).abs() < 1e-13 && (rr.xi[1] - p.xi[1]).abs() < 1e-13);
            // the reflection maps ρ⁺ to ρ⁻
            prop_assert!((r.xi[0] - m.xi[0]).abs() < 1e-12 && (r.xi[1] - m.xi[1]).abs() < 1e-12);
            let e = reflect_chart(reflect_chart([xt, 0.7]));
            prop_assert_eq!(e, [xt, 0.7]);
        }

        #[test]
        fn classification_is_stable_under_tiny_perturbations(
            s in 0.1f64..0.9, tau in 0.5f64..2.0, a in 0.0f64..1.5, d in -1e-10f64..1e-10) {
            let ch = aniso_square();
            let x = ch.domain().boundary_point(0, s).point;
            let c = ch.from_cartesian(0, x).unwrap();
            let rho = PhasePoint::new(0.0, x, tau, ch.covector_from_chart(c, [a, 0.0]));
            let pert = PhasePoint::new(0.0, x, tau, ch.covector_from_chart(c, [a + d, 0.0]));
            let t0 = classify_on(&ch, 0, &rho).unwrap().tag;
            let t1 = classify_on(&ch, 0, &pert).unwrap().tag;
            let flip = (t0 == BoundaryTag::Elliptic && t1.is_hyperbolic())
                || (t1 == BoundaryTag::Elliptic && t0.is_hyperbolic());
            prop_assert!(!flip);
        }
    }
}
