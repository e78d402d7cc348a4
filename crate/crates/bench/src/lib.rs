//! Shared fixtures for the benchmarks.

use gcc_core::gcc::{default_chart, CheckSettings, Sampling};
use gcc_core::{CollarChart, Domain, MetricField};

/// Unit disc with a C¹ conformal speed.
pub fn rough_disc() -> CollarChart {
    let m = MetricField::conformal_expr(2, "1 + 0.2*((x-0.3)^2 + (y-0.4)^2)^0.75").expect("valid speed");
    default_chart(&Domain::unit_disc(), &m).expect("chart")
}

pub fn flat_square() -> CollarChart {
    default_chart(&Domain::unit_square(), &MetricField::flat(2)).expect("chart")
}

pub fn coarse_settings(n: usize, n_dir: usize) -> CheckSettings {
    CheckSettings { sampling: Sampling { nx: n, ny: n, n_dir, margin: 1e-3, refine: false }, ..Default::default() }
}
