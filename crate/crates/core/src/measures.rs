//! Semiclassical measure estimates for sequences of grid functions, wave
//! packets, dyadic projections, and numerical checks of the interior,
//! boundary and isochrone transport identities.
//!
//! Test symbols are finite sums of products `φ(z) ψ(ζ)`; the left
//! quantization of such a term is multiplication by `φ` after the Fourier
//! multiplier `ψ(hD)`, which keeps every pairing an FFT away.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semiclassical::{euclidean_divide, fourier_multiplier, quantize_unchecked, Grid, QuadraticInZeta, Symbol};
use crate::wave::EigenBasis;

pub type SpaceFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;
pub type FreqFn = Arc<dyn Fn([f64; 2]) -> Complex64 + Send + Sync>;

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// One term `φ(z) ψ(ζ)` of a test symbol.
#[derive(Clone)]
pub struct ProductTerm {
    pub space: SpaceFn,
    /// `∇φ`; central differences are used when absent
    pub grad: Option<GradFn>,
    pub freq: FreqFn,
}

impl ProductTerm {
    fn gradient(&self, z: [f64; 2]) -> [f64; 2] {
        if let Some(g) = &self.grad {
            return g(z);
        }
        let e = 1e-6;
        let d = |j: usize| {
            let (mut p, mut m) = (z, z);
            p[j] += e;
            m[j] -= e;
            ((self.space)(p) - (self.space)(m)) / (2.0 * e)
        };
        [d(0), d(1)]
    }
}

/// A test symbol on phase space, as a sum of product terms.
#[derive(Clone)]
pub struct PhaseSymbol {
    pub name: String,
    pub terms: Vec<ProductTerm>,
}

impl std::fmt::Debug for PhaseSymbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PhaseSymbol({}, {} terms)", self.name, self.terms.len())
    }
}

impl PhaseSymbol {
    pub fn product(name: &str, space: SpaceFn, grad: Option<GradFn>, freq: FreqFn) -> Self {
        Self { name: name.into(), terms: vec![ProductTerm { space, grad, freq }] }
    }

    pub fn eval(&self, z: [f64; 2], zeta: [f64; 2]) -> Complex64 {
        self.terms.iter().map(|t| (t.freq)(zeta) * (t.space)(z)).sum()
    }

    /// `H_p a` for `p = Σ s_j ζ_j²` with constant signature `s`
    /// (e.g. `[-1, 1]` for `-τ² + ξ²` on `(t, x)`).
    pub fn flat_hamiltonian(&self, signature: [f64; 2]) -> PhaseSymbol {
        let mut terms = Vec::new();
        for t in &self.terms {
            for j in 0..2 {
                if signature[j] == 0.0 {
                    continue;
                }
                let tj = t.clone();
                let fj = t.freq.clone();
                let s = signature[j];
                terms.push(ProductTerm {
                    space: Arc::new(move |z| tj.gradient(z)[j]),
                    grad: None,
                    freq: Arc::new(move |zeta| fj(zeta) * (2.0 * s * zeta[j])),
                });
            }
        }
        PhaseSymbol { name: format!("H_p({})", self.name), terms }
    }

    /// Sampled `sup |a|` over the grid points and a frequency box.
    pub fn sup_norm(&self, grid: &Grid, zeta_max: f64, n_zeta: usize) -> f64 {
        let pts: Vec<[f64; 2]> = grid.points().into_iter().step_by((grid.size() / 4096).max(1)).collect();
        let axis: Vec<f64> = (0..n_zeta).map(|i| -zeta_max + 2.0 * zeta_max * i as f64 / (n_zeta - 1) as f64).collect();
        let zetas: Vec<[f64; 2]> = if grid.dim == 1 {
            axis.iter().map(|&a| [a, 0.0]).collect()
        } else {
            axis.iter().flat_map(|&a| axis.iter().map(move |&b| [a, b])).collect()
        };
        pts.par_iter()
            .map(|&z| zetas.iter().map(|&q| self.eval(z, q).norm()).fold(0.0, f64::max))
            .reduce(|| 0.0, f64::max)
    }

    /// `Op^h(a) u` on a grid.
    pub fn apply(&self, grid: &Grid, h: f64, u: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![zero(); u.len()];
        for t in &self.terms {
            let f = t.freq.clone();
            let m = fourier_multiplier("psi", &move |xi| f(xi), h, grid);
            let v = m.apply(u);
            out.par_iter_mut().zip(v.par_iter()).enumerate().for_each(|(i, (o, w))| *o += w * (t.space)(grid.point(i)));
        }
        out
    }

    /// `⟨Op^h(a) u, w⟩` with the grid cell as quadrature weight.
    pub fn pair(&self, grid: &Grid, h: f64, u: &[Complex64], w: &[Complex64]) -> Complex64 {
        let au = self.apply(grid, h, u);
        au.iter().zip(w).map(|(a, b)| a * b.conj()).sum::<Complex64>() * grid.cell()
    }

    pub fn pairing(&self, s: &GridSample) -> Complex64 {
        self.pair(&s.grid, s.h, &s.values, &s.values)
    }
}

/// A grid function at semiclassical scale `h`.
#[derive(Debug, Clone)]
pub struct GridSample {
    pub h: f64,
    pub grid: Grid,
    pub values: Vec<Complex64>,
}

impl GridSample {
    pub fn mass(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LadderPoint {
    pub h: f64,
    pub value: Complex64,
    pub mass: f64,
}

/// Fraction of mass at `|hξ| > R` and at `|hξ| < 1/R`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LeakDiagnostic {
    pub high_tail: f64,
    pub low_tail: f64,
    pub flagged: bool,
}

/// Frequency ratio used by the leak test.
pub const LEAK_RATIO: f64 = 8.0;
/// Tail fraction above which a leak is flagged.
pub const LEAK_TOL: f64 = 0.01;

pub fn leak_diagnostic(s: &GridSample) -> LeakDiagnostic {
    let hi = fourier_multiplier(
        "hi",
        &|xi| Complex64::new(if (xi[0] * xi[0] + xi[1] * xi[1]).sqrt() > LEAK_RATIO { 1.0 } else { 0.0 }, 0.0),
        s.h,
        &s.grid,
    );
    let lo = fourier_multiplier(
        "lo",
        &|xi| Complex64::new(if (xi[0] * xi[0] + xi[1] * xi[1]).sqrt() < 1.0 / LEAK_RATIO { 1.0 } else { 0.0 }, 0.0),
        s.h,
        &s.grid,
    );
    let total: f64 = s.values.iter().map(|v| v.norm_sqr()).sum();
    let frac = |op: &crate::semiclassical::GridOperator| {
        if total == 0.0 {
            0.0
        } else {
            op.apply(&s.values).iter().map(|v| v.norm_sqr()).sum::<f64>() / total
        }
    };
    let (high_tail, low_tail) = (frac(&hi), frac(&lo));
    LeakDiagnostic { high_tail, low_tail, flagged: high_tail > LEAK_TOL || low_tail > LEAK_TOL }
}

/// Pairings of one test symbol along an `h`-ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub symbol: String,
    pub ladder: Vec<LadderPoint>,
    /// pairing at the finest `h`
    pub pairing: Complex64,
    /// first-order extrapolation from the two finest rungs
    pub limit: Complex64,
    /// spread between the two finest rungs
    pub spread: f64,
    pub mass: f64,
    pub leak: LeakDiagnostic,
    /// mass-conservation statements are only made without a leak
    pub mass_claims_enabled: bool,
}

fn extrapolate(ladder: &[LadderPoint]) -> (Complex64, f64) {
    match ladder {
        [] => (zero(), 0.0),
        [p] => (p.value, 0.0),
        _ => {
            let f = ladder[ladder.len() - 1];
            let p = ladder[ladder.len() - 2];
            let lim = f.value + (f.value - p.value) * (f.h / (p.h - f.h));
            (lim, (f.value - p.value).norm())
        }
    }
}

/// Pairings `⟨Op^h(a) u_h, u_h⟩` for every bank symbol along the sequence,
/// ordered from coarse to fine `h`.
pub fn estimate_measure(seq: &[GridSample], bank: &[PhaseSymbol]) -> Result<Vec<MeasureEstimate>> {
    if seq.is_empty() {
        return Err(Error::Precondition("empty sequence".into()));
    }
    let mut seq: Vec<&GridSample> = seq.iter().collect();
    seq.sort_by(|a, b| b.h.total_cmp(&a.h));
    let finest = *seq.last().unwrap();
    let leak = leak_diagnostic(finest);
    Ok(bank
        .par_iter()
        .map(|a| {
            let ladder: Vec<LadderPoint> =
                seq.iter().map(|s| LadderPoint { h: s.h, value: a.pairing(s), mass: s.mass() }).collect();
            let (limit, spread) = extrapolate(&ladder);
            let last = *ladder.last().unwrap();
            MeasureEstimate {
                symbol: a.name.clone(),
                pairing: last.value,
                mass: last.mass,
                limit,
                spread,
                ladder,
                leak,
                mass_claims_enabled: !leak.flagged,
            }
        })
        .collect())
}

/// The 2×2 block `M_ij = ⟨Op^h(a) u_i, u_j⟩` for a pair of sequences.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HermitianMeasureEstimate {
    pub block: [[Complex64; 2]; 2],
}

impl HermitianMeasureEstimate {
    pub fn new(a: &PhaseSymbol, grid: &Grid, h: f64, u: &[Complex64], w: &[Complex64]) -> Self {
        let v = [u, w];
        let mut block = [[zero(); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                block[i][j] = a.pair(grid, h, v[i], v[j]);
            }
        }
        Self { block }
    }

    /// `|M₀₁ - conj(M₁₀)|` relative to the block size.
    pub fn hermitian_defect(&self) -> f64 {
        let b = &self.block;
        let scale = b.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
        (b[0][1] - b[1][0].conj()).norm() / scale
    }
}

/// Gaussian profile `ψ(y) = e^{-|y|²/(2σ²)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavePacket {
    pub x0: [f64; 2],
    pub xi0: [f64; 2],
    pub h: f64,
    pub sigma: f64,
    pub dim: usize,
}

impl WavePacket {
    pub fn new(dim: usize, x0: [f64; 2], xi0: [f64; 2], h: f64, sigma: f64) -> Self {
        Self { x0, xi0, h, sigma, dim }
    }

    /// `w_h(x) = h^{-d/4} e^{i⟨x, ξ⁰⟩/h} ψ((x - x⁰)/√h)`.
    pub fn eval(&self, x: [f64; 2]) -> Complex64 {
        let d = self.dim;
        let s = self.h.sqrt();
        let mut r2 = 0.0;
        let mut ph = 0.0;
        for j in 0..d {
            let y = (x[j] - self.x0[j]) / s;
            r2 += y * y;
            ph += x[j] * self.xi0[j];
        }
        Complex64::from_polar(self.h.powf(-(d as f64) / 4.0) * (-r2 / (2.0 * self.sigma * self.sigma)).exp(), ph / self.h)
    }

    /// `∂_{x_j} w_h`.
    pub fn derivative(&self, x: [f64; 2], j: usize) -> Complex64 {
        let y = (x[j] - self.x0[j]) / (self.sigma * self.sigma * self.h);
        self.eval(x) * Complex64::new(-y, self.xi0[j] / self.h)
    }

    /// `‖ψ‖²_{L²} = (πσ²)^{d/2}`.
    pub fn profile_norm_sq(&self) -> f64 {
        (std::f64::consts::PI * self.sigma * self.sigma).powf(self.dim as f64 / 2.0)
    }

    pub fn sample(&self, grid: &Grid) -> GridSample {
        GridSample { h: self.h, grid: *grid, values: grid.points().iter().map(|&x| self.eval(x)).collect() }
    }

    /// Values at arbitrary points (e.g. the nodes of an eigenbasis).
    pub fn on_points(&self, pts: &[[f64; 2]]) -> Vec<Complex64> {
        pts.iter().map(|&x| self.eval(x)).collect()
    }
}

/// `‖(-Δ)^{s/2} w_h‖ / (h^{-s} |ξ⁰|^s ‖ψ‖)`, computed spectrally on the grid.
pub fn sobolev_ratio(p: &WavePacket, grid: &Grid, s: f64) -> f64 {
    let u = p.sample(grid);
    let m = fourier_multiplier("|D|^s", &|xi| Complex64::new((xi[0] * xi[0] + xi[1] * xi[1]).powf(s / 2.0), 0.0), 1.0, grid);
    let v = m.apply(&u.values);
    let num = (v.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.cell()).sqrt();
    let xi = (p.xi0[0] * p.xi0[0] + p.xi0[1] * p.xi0[1]).sqrt();
    num / (p.h.powf(-s) * xi.powf(s) * p.profile_norm_sq().sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DyadicProjection {
    pub values: Vec<Complex64>,
    pub coefficients: Vec<Complex64>,
    /// share of `‖v‖²` captured by the computed modes
    pub captured: f64,
    pub truncation_warning: bool,
}

/// `χ(-h²A) v = Σ χ(h²λ_ν) v̂_ν e_ν` by exact eigen functional calculus.
pub fn dyadic_project(basis: &EigenBasis, chi: &dyn Fn(f64) -> f64, h: f64, v: &[Complex64]) -> DyadicProjection {
    let vh = basis.project_complex(v);
    let total: f64 = v.iter().zip(&basis.weights).map(|(z, w)| z.norm_sqr() * w).sum();
    let got: f64 = vh.iter().map(|z| z.norm_sqr()).sum();
    let captured = if total > 0.0 { got / total } else { 1.0 };
    let coefficients: Vec<Complex64> = vh.iter().zip(&basis.lambdas).map(|(c, &l)| c * chi(h * h * l)).collect();
    DyadicProjection {
        values: basis.synthesize(&coefficients),
        coefficients,
        captured,
        truncation_warning: captured < 0.999,
    }
}

/// Weighted `L²` norm on the basis nodes.
pub fn basis_norm(basis: &EigenBasis, v: &[Complex64]) -> f64 {
    v.iter().zip(&basis.weights).map(|(z, w)| z.norm_sqr() * w).sum::<f64>().sqrt()
}

/// Space-time samples `cutoff(t) u(t, x)` on a 2D grid with axis 0 time and
/// axis 1 the space variable of a one-dimensional basis. Grid columns that
/// do not coincide with a basis node (boundary, exterior) are zero.
pub fn space_time_sample(
    basis: &EigenBasis,
    state: &crate::wave::WaveState,
    grid: &Grid,
    h: f64,
    cutoff: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<GridSample> {
    if basis.dim != 1 || grid.dim != 2 {
        return Err(Error::Precondition("space-time sampling needs a 1D basis and a 2D grid".into()));
    }
    let n = grid.n;
    let dx = grid.dx();
    let tol = 1e-9 * dx.max(1.0);
    let map: Vec<Option<usize>> = (0..n)
        .map(|j| {
            let x = grid.lo[1] + j as f64 * dx;
            basis.nodes.iter().position(|p| (p[0] - x).abs() <= tol)
        })
        .collect();
    let (u, _) = state.coefficients();
    let rows: Vec<Vec<Complex64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let t = grid.lo[0] + i as f64 * dx;
            let c = cutoff(t);
            if c == 0.0 {
                return vec![zero(); n];
            }
            let coeffs: Vec<Complex64> = u
                .iter()
                .zip(&state.omega)
                .zip(state.plus.iter().zip(&state.minus))
                .map(|((_, &w), (p, m))| {
                    let dt = t - state.t;
                    (p * Complex64::from_polar(1.0, w * dt) + m * Complex64::from_polar(1.0, -w * dt)) * c
                })
                .collect();
            map.iter()
                .map(|m| match m {
                    Some(k) => basis.modes.iter().zip(&coeffs).map(|(e, a)| a * e[*k]).sum(),
                    None => zero(),
                })
                .collect()
        })
        .collect();
    Ok(GridSample { h, grid: *grid, values: rows.into_iter().flatten().collect() })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportResidual {
    pub ladder: Vec<LadderPoint>,
    /// `|⟨µ̂, H_p a⟩|` at the finest `h`
    pub residual: f64,
    pub extrapolated: f64,
    /// sampled `‖H_p a‖_∞`
    pub scale: f64,
    /// `residual / (scale · mass)`
    pub relative: f64,
}

/// Checks that `a` vanishes outside `interior` and near the null section.
fn check_support(a: &PhaseSymbol, grid: &Grid, interior: &dyn Fn([f64; 2]) -> bool) -> Result<()> {
    for (i, z) in grid.points().into_iter().enumerate().step_by((grid.size() / 20000).max(1)) {
        if !interior(z) && a.terms.iter().any(|t| (t.space)(z).abs() > 1e-10) {
            return Err(Error::Precondition(format!("symbol {} does not vanish at {:?} (grid point {i})", a.name, z)));
        }
    }
    for k in 0..64 {
        let th = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
        for r in [0.0, 0.02, 0.05] {
            let zeta = [r * th.cos(), r * th.sin()];
            if a.terms.iter().any(|t| (t.freq)(zeta).norm() > 1e-8) {
                return Err(Error::Precondition(format!("symbol {} does not vanish near the null section", a.name)));
            }
        }
    }
    Ok(())
}

/// `⟨µ̂, H_p a⟩` along the ladder for `a` supported in the interior; the
/// transport identity predicts a vanishing limit.
pub fn interior_transport_residual(
    seq: &[GridSample],
    a: &PhaseSymbol,
    signature: [f64; 2],
    interior: &dyn Fn([f64; 2]) -> bool,
) -> Result<TransportResidual> {
    let finest = seq.iter().min_by(|p, q| p.h.total_cmp(&q.h)).ok_or_else(|| Error::Precondition("empty sequence".into()))?;
    check_support(a, &finest.grid, interior)?;
    let hp = a.flat_hamiltonian(signature);
    let est = estimate_measure(seq, std::slice::from_ref(&hp))?.remove(0);
    let scale = hp.sup_norm(&finest.grid, 4.0, 81);
    let residual = est.pairing.norm();
    Ok(TransportResidual {
        residual,
        extrapolated: est.limit.norm(),
        scale,
        relative: residual / (scale * est.mass).max(1e-300),
        ladder: est.ladder,
    })
}

/// The half-line `x > x_b` with Dirichlet condition: exact solution
/// `u(t, x) = w(x - x_b + t) - w(x_b - x + t)` built from a packet `w` by
/// the method of images, and its normal trace.
#[derive(Debug, Clone, Copy)]
pub struct HalfLineReflection {
    pub packet: WavePacket,
    pub boundary: f64,
}

impl HalfLineReflection {
    pub fn value(&self, t: f64, x: f64) -> Complex64 {
        if x < self.boundary {
            return zero();
        }
        let s = x - self.boundary;
        self.packet.eval([s + t, 0.0]) - self.packet.eval([t - s, 0.0])
    }

    /// `h ∂_x u(t, x_b)` (inward normal derivative).
    pub fn trace(&self, t: f64) -> Complex64 {
        (self.packet.derivative([t, 0.0], 0) * 2.0) * self.packet.h
    }

    /// Space-time sample (axis 0 time, axis 1 space) with a time cutoff.
    pub fn sample(&self, grid: &Grid, cutoff: &(dyn Fn(f64) -> f64 + Sync)) -> GridSample {
        let values =
            (0..grid.size()).into_par_iter().map(|i| {
                let z = grid.point(i);
                self.value(z[0], z[1]) * cutoff(z[0])
            }).collect();
        GridSample { h: self.packet.h, grid: *grid, values }
    }

    /// Trace sample on the time axis of `grid`.
    pub fn trace_sample(&self, grid: &Grid, cutoff: &(dyn Fn(f64) -> f64 + Sync)) -> Result<GridSample> {
        let line = Grid::new(1, grid.n, grid.lo[0], grid.len)?;
        let values = line.points().iter().map(|z| self.trace(z[0]) * cutoff(z[0])).collect();
        Ok(GridSample { h: self.packet.h, grid: line, values })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JumpRung {
    pub h: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JumpReport {
    pub ladder: Vec<JumpRung>,
    /// `-⟨µ̂, H_p a⟩` at the finest `h`
    pub lhs: f64,
    /// `ν̂((a(ρ⁺) - a(ρ⁻)) / (ζ⁺ - ζ⁻))` at the finest `h`
    pub rhs: f64,
    pub mismatch: f64,
    /// share of `ν̂` mass in the glancing band `|τ| < 0.1`
    pub glancing_fraction: f64,
    pub glancing_flag: bool,
}

/// Floor for the relative mismatch denominator.
pub const JUMP_FLOOR: f64 = 1e-8;

/// Boundary-jump identity on the flat half-line `x > x_b` for the symbol
/// `p = -τ² + ξ²` on `(t, x)`. `seq` holds space-time samples (zero for
/// `x < x_b`) and `trace_seq` the matching `h ∂_n u` samples on the time
/// axis.
pub fn boundary_jump_residual(
    seq: &[GridSample],
    trace_seq: &[GridSample],
    a: &PhaseSymbol,
    boundary: f64,
) -> Result<JumpReport> {
    if seq.len() != trace_seq.len() || seq.is_empty() {
        return Err(Error::Precondition("sequence and trace sequence must be nonempty and of equal length".into()));
    }
    let hp = a.flat_hamiltonian([-1.0, 1.0]);
    let a_bd = a.clone();
    let b = move |t: f64, tau: f64, zeta: Complex64| a_bd.eval([t, boundary], [tau, zeta.re]);
    let p = QuadraticInZeta::new(Arc::new(|_, tau| [-tau * tau, 0.0, 1.0]));
    let division = euclidean_divide(Arc::new(b), p);
    let mut ladder = Vec::with_capacity(seq.len());
    let mut glancing_fraction = 0.0;
    let mut order: Vec<usize> = (0..seq.len()).collect();
    order.sort_by(|&i, &j| seq[j].h.total_cmp(&seq[i].h));
    for &k in &order {
        let (s, tr) = (&seq[k], &trace_seq[k]);
        let lhs = -hp.pairing(s).re;
        let d = division.clone();
        let b1 = Symbol::new(
            "b1",
            1,
            Arc::new(move |x, xi| {
                if xi[0].abs() < 1e-9 {
                    // glancing limit, handled by the derivative rule
                    d.b1(x[0], 1e-9).unwrap_or(zero())
                } else {
                    d.b1(x[0], xi[0]).unwrap_or(zero())
                }
            }),
        );
        let op = quantize_unchecked(&b1, tr.h, &tr.grid);
        let rhs = crate::semiclassical::pairing(&op, &tr.values).re;
        let band = fourier_multiplier(
            "glancing",
            &|xi| Complex64::new(if xi[0].abs() < 0.1 { 1.0 } else { 0.0 }, 0.0),
            tr.h,
            &tr.grid,
        );
        let tot: f64 = tr.values.iter().map(|z| z.norm_sqr()).sum();
        glancing_fraction = band.apply(&tr.values).iter().map(|z| z.norm_sqr()).sum::<f64>() / tot.max(1e-300);
        ladder.push(JumpRung { h: s.h, lhs, rhs });
    }
    let last = ladder.last().unwrap().clone();
    let mismatch = (last.lhs - last.rhs).abs() / last.lhs.abs().max(last.rhs.abs()).max(JUMP_FLOOR);
    Ok(JumpReport {
        lhs: last.lhs,
        rhs: last.rhs,
        mismatch,
        glancing_fraction,
        glancing_flag: glancing_fraction > 0.1,
        ladder,
    })
}

/// `1` for `d ≤ 0.8r`, `0` for `d ≥ r`, quintic smoothstep between.
pub fn smooth_indicator(d: f64, r: f64) -> f64 {
    let s = ((r - d) / (0.2 * r)).clamp(0.0, 1.0);
    s * s * s * (s * (6.0 * s - 15.0) + 10.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsochroneReport {
    pub h: f64,
    pub tau0: f64,
    /// `⟨Op^h(a) U_i, U_j⟩` for `U = (ū⁰, h ū¹)`
    pub block: [[Complex64; 2]; 2],
    pub expected: [[Complex64; 2]; 2],
    /// largest entrywise error of `block` against `expected`, relative to
    /// `max(1, τ⁰²) · a(x⁰, ξ⁰)‖ψ‖²`
    pub block_error: f64,
    /// phase-space mass of `1_{0<t<T} u` within `r` of the forward branch
    pub forward_fraction: f64,
    /// same for the mirror branch
    pub backward_fraction: f64,
    pub captured: f64,
}

/// Settings of the isochrone experiment on a one-dimensional basis.
#[derive(Debug, Clone, Copy)]
pub struct IsochroneSetup {
    pub packet: WavePacket,
    pub tau0: f64,
    /// duration of the tube `Γ^T(ρ⁰)`
    pub duration: f64,
    pub radius: f64,
    /// space-time grid with axis 0 time, axis 1 space
    pub grid: Grid,
}

/// Builds `ū⁰ = χ(-h²A) w_h`, `ū¹ = i h⁻¹ τ⁰ ū⁰`, checks the block matrix of
/// pairings against `[[1, -iτ⁰], [iτ⁰, τ⁰²]] a(x⁰, ξ⁰)‖ψ‖²` and measures
/// how much of `1_{0<t<T} u` lies in the tube around the forward branch.
pub fn isochrone_check(
    basis: &EigenBasis,
    setup: &IsochroneSetup,
    chi: &dyn Fn(f64) -> f64,
    a: &PhaseSymbol,
) -> Result<IsochroneReport> {
    let p = setup.packet;
    let tau0 = setup.tau0;
    let xi0 = p.xi0[0];
    if (tau0 * tau0 - xi0 * xi0).abs() > 1e-9 * xi0 * xi0 || tau0 == 0.0 {
        return Err(Error::Precondition(format!("tau0 = {tau0} is not a root of tau² = |xi0|² = {}", xi0 * xi0)));
    }
    let h = p.h;
    let pts: Vec<[f64; 2]> = basis.nodes.clone();
    let w = p.on_points(&pts);
    let proj = dyadic_project(basis, chi, h, &w);
    let u0 = proj.values.clone();
    let i = Complex64::i();
    let hu1: Vec<Complex64> = u0.iter().map(|z| i * tau0 * z).collect();

    // block pairings on the spatial line of the grid
    let line = Grid::new(1, setup.grid.n, setup.grid.lo[1], setup.grid.len)?;
    let place = |v: &[Complex64]| -> Vec<Complex64> {
        line.points()
            .iter()
            .map(|x| {
                pts.iter().position(|q| (q[0] - x[0]).abs() < 1e-9 * line.dx().max(1.0)).map(|k| v[k]).unwrap_or(zero())
            })
            .collect()
    };
    let (g0, g1) = (place(&u0), place(&hu1));
    let block = HermitianMeasureEstimate::new(a, &line, h, &g0, &g1).block;
    let m0 = a.eval(p.x0, p.xi0).re * p.profile_norm_sq() * chi(xi0 * xi0).powi(2);
    let expected = [
        [Complex64::new(m0, 0.0), -i * tau0 * m0],
        [i * tau0 * m0, Complex64::new(tau0 * tau0 * m0, 0.0)],
    ];
    let scale = m0.abs().max(1e-300) * (1.0f64).max(tau0 * tau0);
    let mut block_error: f64 = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            block_error = block_error.max((block[r][c] - expected[r][c]).norm() / scale);
        }
    }

    // evolve, cut to 0 < t < T and measure the tube mass
    let u1: Vec<Complex64> = hu1.iter().map(|z| z / h).collect();
    let state = crate::wave::WaveState::from_data(basis, &basis.project_complex(&u0), &basis.project_complex(&u1), Some(h));
    let dur = setup.duration;
    let st = space_time_sample(basis, &state, &setup.grid, h, &|t| if t > 0.0 && t < dur { 1.0 } else { 0.0 })?;
    let speed = -xi0 / tau0;
    let r = setup.radius;
    let tube = |x0: f64, v: f64, tau: f64| {
        PhaseSymbol::product(
            "tube",
            Arc::new(move |z: [f64; 2]| smooth_indicator((z[1] - x0 - v * z[0]).abs(), r)),
            None,
            Arc::new(move |zeta: [f64; 2]| {
                let d = ((zeta[0] - tau).powi(2) + (zeta[1] - xi0).powi(2)).sqrt();
                Complex64::new(smooth_indicator(d, r), 0.0)
            }),
        )
    };
    let mass = st.mass().max(1e-300);
    let forward_fraction = tube(p.x0[0], speed, tau0).pairing(&st).re / mass;
    let backward_fraction = tube(p.x0[0], -speed, -tau0).pairing(&st).re / mass;
    Ok(IsochroneReport {
        h,
        tau0,
        block,
        expected,
        block_error,
        forward_fraction,
        backward_fraction,
        captured: proj.captured,
    })
}

/// Gaussian bump `e^{-|z - c|²/(2s²)}` with its gradient.
pub fn gaussian_bump(c: [f64; 2], s: f64) -> (SpaceFn, GradFn) {
    let f = move |z: [f64; 2]| (-((z[0] - c[0]).powi(2) + (z[1] - c[1]).powi(2)) / (2.0 * s * s)).exp();
    let g = move |z: [f64; 2]| {
        let v = f(z);
        [-(z[0] - c[0]) / (s * s) * v, -(z[1] - c[1]) / (s * s) * v]
    };
    (Arc::new(f), Arc::new(g))
}

/// Compactly supported bump `exp(1 - 1/(1 - |z - c|²/r²))` inside the ball
/// of radius `r`.
pub fn compact_bump(c: [f64; 2], r: f64) -> SpaceFn {
    Arc::new(move |z: [f64; 2]| {
        let q = ((z[0] - c[0]).powi(2) + (z[1] - c[1]).powi(2)) / (r * r);
        if q >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - q)).exp()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Domain, MetricField};
    use crate::wave::assemble_and_eig;

    fn freq_gauss(c: [f64; 2], s: f64) -> FreqFn {
        Arc::new(move |z: [f64; 2]| Complex64::new((-((z[0] - c[0]).powi(2) + (z[1] - c[1]).powi(2)) / (2.0 * s * s)).exp(), 0.0))
    }

    #[test]
    fn packet_norm_and_concentration() {
        let h = 2f64.powi(-8);
        let grid = Grid::new(1, 2048, 0.0, 1.0).unwrap();
        let p = WavePacket::new(1, [0.5, 0.0], [1.0, 0.0], h, 0.7);
        let s = p.sample(&grid);
        assert!((s.mass() / p.profile_norm_sq() - 1.0).abs() < 1e-10);
        let (phi, g) = gaussian_bump([0.45, 0.0], 0.3);
        let a = PhaseSymbol::product("a", phi, Some(g), freq_gauss([1.2, 0.0], 0.5));
        let est = estimate_measure(std::slice::from_ref(&s), std::slice::from_ref(&a)).unwrap().remove(0);
        let expect = a.eval(p.x0, p.xi0).re * p.profile_norm_sq();
        assert!((est.pairing.re / expect - 1.0).abs() < 0.05, "{} vs {expect}", est.pairing);
        assert!(!est.leak.flagged);
        // disjoint support
        let far = PhaseSymbol::product("far", compact_bump([0.1, 0.0], 0.1), None, freq_gauss([1.0, 0.0], 0.2));
        assert!(far.pairing(&s).norm() < 1e-6);
    }

    #[test]
    fn sobolev_scaling() {
        let grid = Grid::new(1, 4096, 0.0, 1.0).unwrap();
        for k in [6, 8] {
            let p = WavePacket::new(1, [0.5, 0.0], [1.0, 0.0], 2f64.powi(-k), 0.7);
            let r = sobolev_ratio(&p, &grid, 1.0);
            assert!((r - 1.0).abs() < 0.1, "{r}");
        }
    }

    #[test]
    fn partition_of_unity_and_hermitian_block() {
        let h = 2f64.powi(-6);
        let grid = Grid::new(1, 1024, 0.0, 1.0).unwrap();
        let p = WavePacket::new(1, [0.5, 0.0], [1.0, 0.0], h, 0.7);
        let q = WavePacket::new(1, [0.52, 0.0], [1.1, 0.0], h, 0.5);
        let s = p.sample(&grid);
        // Σ φ_i = 1 and Σ ψ_j = 1 give Σ pairings = ‖u‖²
        let halves: [SpaceFn; 2] = [Arc::new(|z: [f64; 2]| 0.5 + 0.5 * (6.0 * z[0]).sin()), Arc::new(|z: [f64; 2]| 0.5 - 0.5 * (6.0 * z[0]).sin())];
        let fr: [FreqFn; 2] = [
            Arc::new(|z: [f64; 2]| Complex64::new(1.0 / (1.0 + (-4.0 * (z[0] - 1.0)).exp()), 0.0)),
            Arc::new(|z: [f64; 2]| Complex64::new(1.0 - 1.0 / (1.0 + (-4.0 * (z[0] - 1.0)).exp()), 0.0)),
        ];
        let mut bank = Vec::new();
        for f in &halves {
            for g in &fr {
                bank.push(PhaseSymbol::product("piece", f.clone(), None, g.clone()));
            }
        }
        let est = estimate_measure(std::slice::from_ref(&s), &bank).unwrap();
        let total: f64 = est.iter().map(|e| e.pairing.re).sum();
        assert!((total / s.mass() - 1.0).abs() < 0.05);
        let (phi, g) = gaussian_bump([0.5, 0.0], 0.2);
        let a = PhaseSymbol::product("a", phi, Some(g), freq_gauss([1.0, 0.0], 0.3));
        let w = q.sample(&grid).values;
        let blk = HermitianMeasureEstimate::new(&a, &grid, h, &s.values, &w);
        assert!(blk.hermitian_defect() < 0.05);
        let b = blk.block;
        assert!(b[0][1].norm_sqr() <= b[0][0].re * b[1][1].re * 1.05);
    }

    fn interval_basis(n: usize, count: usize) -> EigenBasis {
        let d = Domain::interval(0.0, 1.0);
        assemble_and_eig(&d, &MetricField::flat(1), n, count).unwrap()
    }

    #[test]
    fn dyadic_projection_identity_and_rate() {
        let basis = interval_basis(1024, 300);
        // χ ≡ 1 returns the spectral truncation of v
        let h = 2f64.powi(-5);
        let p = WavePacket::new(1, [0.5, 0.0], [1.0, 0.0], h, 0.5);
        let v = p.on_points(&basis.nodes);
        let id = dyadic_project(&basis, &|_| 1.0, h, &v);
        assert!(id.captured > 0.999 && !id.truncation_warning);
        let diff: Vec<Complex64> = id.values.iter().zip(&v).map(|(a, b)| a - b).collect();
        assert!(basis_norm(&basis, &diff) < 1e-3 * basis_norm(&basis, &v));
        // χ(s) = e^{-(s-1.3)²}: remainder O(h^{1/2})
        let chi = |s: f64| (-(s - 1.3) * (s - 1.3)).exp();
        let mut hs = Vec::new();
        let mut errs = Vec::new();
        for k in 4..=8 {
            let h = 2f64.powi(-k);
            let p = WavePacket::new(1, [0.5, 0.0], [1.0, 0.0], h, 0.5);
            let v = p.on_points(&basis.nodes);
            let out = dyadic_project(&basis, &chi, h, &v);
            let d: Vec<Complex64> = out.values.iter().zip(&v).map(|(a, b)| a - b * chi(1.0)).collect();
            hs.push(h);
            errs.push(basis_norm(&basis, &d));
        }
        let slope = crate::linalg::loglog_slope(&hs, &errs);
        assert!(slope >= 0.4, "{slope} {errs:?}");
    }

    #[test]
    fn interior_residual_small_and_support_checked() {
        let basis = interval_basis(512, 150);
        let grid = Grid::new(2, 512, 0.0, 1.0).unwrap().with_origin([-0.25, 0.0]);
        let mut seq = Vec::new();
        for k in [5, 6, 7] {
            let h = 2f64.powi(-k);
            let p = WavePacket::new(1, [0.5, 0.0], [1.0, 0.0], h, 0.7);
            // rightward data: u¹ = -∂_x u⁰
            let u0 = p.on_points(&basis.nodes);
            let u1: Vec<Complex64> = basis.nodes.iter().map(|&x| -p.derivative(x, 0)).collect();
            let st = crate::wave::WaveState::from_data(&basis, &basis.project_complex(&u0), &basis.project_complex(&u1), Some(h));
            seq.push(space_time_sample(&basis, &st, &grid, h, &|_| 1.0).unwrap());
        }
        let (phi, g) = (compact_bump([0.1, 0.6], 0.2), None);
        let a = PhaseSymbol::product("a", phi, g, freq_gauss([-1.0, 1.0], 0.3));
        let interior = |z: [f64; 2]| z[1] > 0.05 && z[1] < 0.95;
        // the Gaussian tail in ζ is not compactly supported near zero
        let err = interior_transport_residual(&seq, &a, [-1.0, 1.0], &interior);
        assert!(matches!(err, Err(Error::Precondition(_))));
        let cut = |z: [f64; 2]| -> Complex64 {
            let r = ((z[0] + 1.0).powi(2) + (z[1] - 1.0).powi(2)).sqrt();
            Complex64::new(if r < 0.9 { (1.0 - 1.0 / (1.0 - (r / 0.9).powi(2))).exp() } else { 0.0 }, 0.0)
        };
        let a = PhaseSymbol::product("a", compact_bump([0.1, 0.6], 0.2), None, Arc::new(cut));
        let res = interior_transport_residual(&seq, &a, [-1.0, 1.0], &interior).unwrap();
        assert!(res.relative <= 0.1, "{res:?}");
    }

    #[test]
    fn half_line_jump() {
        let len = 1.0;
        let mut seq = Vec::new();
        let mut tr = Vec::new();
        for k in [5, 6, 7] {
            let h = 2f64.powi(-k);
            let grid = Grid::new(2, 512, 0.0, len).unwrap().with_origin([0.0, -0.25]);
            let hl = HalfLineReflection { packet: WavePacket::new(1, [0.5, 0.0], [1.0, 0.0], h, 0.7), boundary: 0.0 };
            seq.push(hl.sample(&grid, &|_| 1.0));
            tr.push(hl.trace_sample(&grid, &|_| 1.0).unwrap());
        }
        let (phi, g) = gaussian_bump([0.5, 0.0], 0.1);
        let freq: FreqFn = Arc::new(|z: [f64; 2]| {
            Complex64::new((-(z[0] - 1.0).powi(2) / 0.2).exp() * (-(z[1] - 0.5).powi(2) / 2.0).exp(), 0.0)
        });
        let a = PhaseSymbol::product("a", phi, Some(g), freq);
        let rep = boundary_jump_residual(&seq, &tr, &a, 0.0).unwrap();
        assert!(rep.mismatch <= 0.15, "{rep:?}");
        assert!(!rep.glancing_flag);
    }

    #[test]
    fn isochrone_forward_branch() {
        let basis = interval_basis(1024, 320);
        let h = 2f64.powi(-9);
        let grid = Grid::new(2, 1024, 0.0, 1.0).unwrap().with_origin([-0.3, 0.0]);
        let setup = IsochroneSetup {
            packet: WavePacket::new(1, [0.6, 0.0], [1.0, 0.0], h, 1.2),
            tau0: 1.0,
            duration: 0.4,
            radius: 0.1,
            grid,
        };
        let chi = |s: f64| (-(s.ln()).powi(2) / 0.18).exp();
        let (phi, g) = gaussian_bump([0.6, 0.0], 0.3);
        let a = PhaseSymbol::product("a", phi, Some(g), freq_gauss([1.0, 0.0], 0.5));
        let rep = isochrone_check(&basis, &setup, &chi, &a).unwrap();
        assert!(rep.block_error < 0.05, "{rep:?}");
        assert!(rep.forward_fraction >= 0.85, "{rep:?}");
        assert!(rep.backward_fraction < 0.05, "{rep:?}");
        let bad = IsochroneSetup { tau0: 0.5, ..setup };
        assert!(isochrone_check(&basis, &bad, &chi, &a).is_err());
    }
}
