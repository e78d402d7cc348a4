//! Cross-module invariants as property tests.

use std::sync::{Arc, OnceLock};

use gcc_core::bichar::{advance_generalized, BranchPolicy, FlowOptions};
use gcc_core::gcc::default_chart;
use gcc_core::measures::{gaussian_bump, HermitianMeasureEstimate, PhaseSymbol, WavePacket};
use gcc_core::semiclassical::{quantize, Grid, Symbol};
use gcc_core::wave::{assemble_and_eig, dyadic_index_set, DyadicSpec, EigenBasis, WaveState};
use gcc_core::{Complex64, Domain, MetricField, PhasePoint};
use proptest::prelude::*;

fn interval_basis() -> &'static EigenBasis {
    static B: OnceLock<EigenBasis> = OnceLock::new();
    B.get_or_init(|| assemble_and_eig(&Domain::interval(0.0, 1.0), &MetricField::flat(1), 400, 80).unwrap())
}

#[test]
fn eigenbasis_is_orthonormal_and_ascending() {
    let b = interval_basis();
    for i in 0..b.len() {
        for j in 0..b.len() {
            let g = b.inner(&b.modes[i], &b.modes[j]);
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((g - want).abs() < 1e-10, "({i},{j}): {g}");
        }
    }
    assert!(b.lambdas.windows(2).all(|w| w[0] > 0.0 && w[0] <= w[1]));
}

#[test]
fn dyadic_sets_are_symmetric_in_k() {
    let b = interval_basis();
    let spec = DyadicSpec::new(0.5, 1.5).unwrap();
    for k in 2..6 {
        assert_eq!(dyadic_index_set(&spec, b, k).unwrap(), dyadic_index_set(&spec, b, -k).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn parseval_holds_under_evolution(seed in 0u64..1000, t in -5.0f64..5.0) {
        let b = interval_basis();
        let mut s = seed;
        let mut rnd = || { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5 };
        let u0: Vec<Complex64> = (0..b.len()).map(|_| Complex64::new(rnd(), rnd())).collect();
        let u1: Vec<Complex64> = (0..b.len()).map(|_| Complex64::new(rnd(), 0.0)).collect();
        let st = WaveState::from_data(b, &u0, &u1, None).evolve(t);
        let grid = st.grid(b);
        let l2 = b.weights.iter().zip(&grid).map(|(w, v)| w * v.norm_sqr()).sum::<f64>().sqrt();
        prop_assert!((l2 / st.l2_norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn flow_time_is_monotone_and_on_shell(x in 0.1f64..0.9, y in 0.1f64..0.9, a in 0.0f64..std::f64::consts::TAU) {
        let m = MetricField::conformal_expr(2, "1 + 0.3*x*y").unwrap();
        let ch = default_chart(&Domain::unit_square(), &m).unwrap();
        let rho = PhasePoint::from_velocity(&m, 0.0, [x, y], [a.cos(), a.sin()], 1.0);
        let trs = advance_generalized(&ch, &rho, 2.0, &BranchPolicy::default(), &FlowOptions::default()).unwrap();
        let ts: Vec<f64> = trs[0].samples().map(|s| s.rho.t).collect();
        prop_assert!(ts.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(trs[0].max_p_drift() < 1e-6);
        for j in &trs[0].jumps {
            prop_assert_eq!(j.eta_after[1], -j.eta_before[1]);
        }
    }

    #[test]
    fn packet_norm_matches_profile(x0 in 0.3f64..0.7, xi0 in -2.0f64..2.0, sigma in 0.4f64..1.0) {
        let h = 2f64.powi(-7);
        let grid = Grid::new(1, 1024, 0.0, 1.0).unwrap();
        let p = WavePacket::new(1, [x0, 0.0], [xi0, 0.0], h, sigma);
        let n2 = p.sample(&grid).mass();
        prop_assert!((n2 / p.profile_norm_sq() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hermitian_block_for_real_symbols(x0 in 0.3f64..0.7, shift in 0.1f64..0.4) {
        let h = 2f64.powi(-7);
        let grid = Grid::new(1, 1024, 0.0, 1.0).unwrap();
        let u = WavePacket::new(1, [x0, 0.0], [1.0, 0.0], h, 0.6).sample(&grid).values;
        let w = WavePacket::new(1, [x0 + shift, 0.0], [0.8, 0.0], h, 0.6).sample(&grid).values;
        let (phi, g) = gaussian_bump([0.5, 0.0], 0.25);
        let a = PhaseSymbol::product("a", phi, Some(g), Arc::new(|z: [f64; 2]| Complex64::new((-z[0] * z[0] / 4.0).exp(), 0.0)));
        let m = HermitianMeasureEstimate::new(&a, &grid, h, &u, &w);
        let scale = m.block[0][0].norm() + m.block[1][1].norm();
        prop_assert!(m.hermitian_defect() <= 0.05 * scale);
        prop_assert!(m.block[0][0].re >= -0.05 * scale && m.block[1][1].re >= -0.05 * scale);
    }

    #[test]
    fn quantization_is_linear(c in -2.0f64..2.0, seed in 0u64..100) {
        let grid = Grid::new(1, 128, -std::f64::consts::PI, 2.0 * std::f64::consts::PI).unwrap();
        let a = Symbol::from_expr("a", 1, "(1 + 0.3*cos(x)) * exp(-xi^2)").unwrap();
        let op = quantize(&a, 0.2, &grid).unwrap();
        let u: Vec<Complex64> = (0..128).map(|i| Complex64::new(((i as u64 * 7 + seed) % 13) as f64, (i % 5) as f64)).collect();
        let v: Vec<Complex64> = (0..128).map(|i| Complex64::new((i as f64 * 0.3).sin(), 0.0)).collect();
        let lhs = op.apply(&u.iter().zip(&v).map(|(x, y)| x * c + y).collect::<Vec<_>>());
        let (au, av) = (op.apply(&u), op.apply(&v));
        for i in 0..128 {
            prop_assert!((lhs[i] - (au[i] * c + av[i])).norm() < 1e-9 * (1.0 + lhs[i].norm()));
        }
    }
}
