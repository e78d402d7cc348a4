use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metric::{DMatFn, MatFn};
use super::{Domain, MetricField, MetricSpec, Regularity};
use crate::error::{Error, Result};
use crate::linalg::{inverse, mat_mul, sym_eigenvalues, Mat2, Vec2};

/// Which matrix directions the random bumps may take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationShape {
    /// arbitrary symmetric matrices
    General,
    /// multiples of the identity, which keeps conformal metrics conformal
    Conformal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub epsilon: f64,
    pub seed: u64,
    pub attempts: usize,
    /// `sup|g̃ - g| + sup|∇(g̃ - g)|` measured on a sampling grid
    pub measured_w1inf: f64,
    pub min_eigenvalue: f64,
}

#[derive(Clone)]
struct Tent {
    center: Vec2,
    radius: f64,
    amp: Mat2,
}

const N_TENTS: usize = 12;
const MAX_ATTEMPTS: usize = 16;
const GRID: usize = 48;

/// A random Lipschitz perturbation `g̃ = g + ε B` with `B` a normalized sum
/// of radial tent functions, so that `‖B‖_{W^{1,∞}} ≤ 1` in the spectral
/// norm. Deterministic for a given seed.
pub fn lipschitz_perturb(
    m: &MetricField,
    domain: &Domain,
    epsilon: f64,
    seed: u64,
    shape: PerturbationShape,
) -> Result<(MetricField, PerturbationReport)> {
    if epsilon < 0.0 {
        return Err(Error::Config(format!("perturbation size must be nonnegative, got {epsilon}")));
    }
    let dim = m.dim();
    let samples = sample_grid(domain);
    let (lmin, _) = m.spd_bounds(&samples)?;
    if epsilon == 0.0 {
        let report = PerturbationReport { epsilon, seed, attempts: 0, measured_w1inf: 0.0, min_eigenvalue: lmin };
        return Ok((m.clone(), report));
    }
    if epsilon >= lmin / 2.0 {
        return Err(Error::Precondition(format!(
            "perturbation size {epsilon} must stay below half the smallest metric eigenvalue {lmin}"
        )));
    }
    let (lo, hi) = domain.bbox();
    let diam = (hi[0] - lo[0]).max(if dim == 2 { hi[1] - lo[1] } else { 0.0 });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1..=MAX_ATTEMPTS {
        let mut tents = Vec::with_capacity(N_TENTS);
        let mut norm = 0.0;
        for _ in 0..N_TENTS {
            let center = [
                rng.random_range(lo[0]..=hi[0]),
                if dim == 2 { rng.random_range(lo[1]..=hi[1]) } else { 0.0 },
            ];
            let radius = diam * rng.random_range(0.15..0.4);
            let a: f64 = rng.random_range(-1.0..1.0);
            let dir = match shape {
                PerturbationShape::Conformal => [[1.0, 0.0], [0.0, 1.0]],
                PerturbationShape::General => {
                    let (p, q, r): (f64, f64, f64) =
                        (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    let s = sym_eigenvalues(&[[p, q], [q, r]], dim).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                    [[p / s, q / s], [q / s, r / s]]
                }
            };
            norm += a.abs() * (1.0 + 1.0 / radius);
            tents.push(Tent { center, radius, amp: [[a * dir[0][0], a * dir[0][1]], [a * dir[1][0], a * dir[1][1]]] });
        }
        let scale = epsilon / norm;
        for t in &mut tents {
            for row in &mut t.amp {
                for v in row.iter_mut() {
                    *v *= scale;
                }
            }
        }
        let tents = Arc::new(tents);
        let pert = build(m, tents.clone(), dim);
        let Ok((new_min, _)) = pert.spd_bounds(&samples) else { continue };
        if new_min <= 0.0 {
            continue;
        }
        let measured = measure_w1inf(&tents, &samples, dim);
        let pert = pert
            .with_regularity(Regularity::Lipschitz, epsilon)
            .with_spec(MetricSpec::Perturbed {
                base: Box::new(m.spec().clone()),
                epsilon,
                seed,
                conformal: shape == PerturbationShape::Conformal,
            });
        let report = PerturbationReport { epsilon, seed, attempts: attempt, measured_w1inf: measured, min_eigenvalue: new_min };
        return Ok((pert, report));
    }
    Err(Error::PerturbationRejected(MAX_ATTEMPTS))
}

fn sample_grid(domain: &Domain) -> Vec<Vec2> {
    let (lo, hi) = domain.bbox();
    let mut out = Vec::new();
    let ny = if domain.dim() == 1 { 1 } else { GRID };
    for i in 0..=GRID {
        for j in 0..ny {
            let y = if ny == 1 { 0.0 } else { lo[1] + (hi[1] - lo[1]) * j as f64 / (ny - 1) as f64 };
            out.push([lo[0] + (hi[0] - lo[0]) * i as f64 / GRID as f64, y]);
        }
    }
    out
}

fn bump(tents: &[Tent], x: Vec2, dim: usize) -> (Mat2, [Mat2; 2]) {
    let mut b = [[0.0; 2]; 2];
    let mut db = [[[0.0; 2]; 2]; 2];
    for t in tents {
        let d = [x[0] - t.center[0], if dim == 2 { x[1] - t.center[1] } else { 0.0 }];
        let r = d[0].hypot(d[1]);
        if r >= t.radius {
            continue;
        }
        let w = 1.0 - r / t.radius;
        // gradient of the tent; zero at its apex by convention
        let grad = if r > 0.0 { [-d[0] / (r * t.radius), -d[1] / (r * t.radius)] } else { [0.0, 0.0] };
        for i in 0..2 {
            for j in 0..2 {
                b[i][j] += w * t.amp[i][j];
                for k in 0..dim {
                    db[k][i][j] += grad[k] * t.amp[i][j];
                }
            }
        }
    }
    (b, db)
}

fn build(m: &MetricField, tents: Arc<Vec<Tent>>, dim: usize) -> MetricField {
    let base = m.clone();
    let t1 = tents.clone();
    let g: MatFn = Arc::new(move |x| {
        let (b, _) = bump(&t1, x, dim);
        let g0 = base.g(x);
        [[g0[0][0] + b[0][0], g0[0][1] + b[0][1]], [g0[1][0] + b[1][0], g0[1][1] + b[1][1]]]
    });
    let base = m.clone();
    let g2 = g.clone();
    let dg: DMatFn = Arc::new(move |x| {
        let gt = g2(x);
        let gti = inverse(&gt, dim);
        let g0 = base.g(x);
        let (_, db) = bump(&tents, x, dim);
        let dgi0 = base.dg_inv(x).unwrap_or([[[0.0; 2]; 2]; 2]);
        let mut out = [[[0.0; 2]; 2]; 2];
        for k in 0..dim {
            // ∂g = -g (∂g⁻¹) g for the base metric
            let t = mat_mul(&mat_mul(&g0, &dgi0[k]), &g0);
            let dgk = [
                [-t[0][0] + db[k][0][0], -t[0][1] + db[k][0][1]],
                [-t[1][0] + db[k][1][0], -t[1][1] + db[k][1][1]],
            ];
            let s = mat_mul(&mat_mul(&gti, &dgk), &gti);
            out[k] = [[-s[0][0], -s[0][1]], [-s[1][0], -s[1][1]]];
        }
        out
    });
    MetricField::custom(dim, "perturbed", g, Some(dg))
}

fn spectral(m: &Mat2, dim: usize) -> f64 {
    let ev = sym_eigenvalues(m, dim);
    ev[0].abs().max(ev[1].abs())
}

fn measure_w1inf(tents: &[Tent], samples: &[Vec2], dim: usize) -> f64 {
    let mut sup_b: f64 = 0.0;
    let mut sup_db: f64 = 0.0;
    for &x in samples {
        let (b, db) = bump(tents, x, dim);
        sup_b = sup_b.max(spectral(&b, dim));
        for d in db.iter().take(dim) {
            sup_db = sup_db.max(spectral(d, dim));
        }
    }
    sup_b + sup_db
}
