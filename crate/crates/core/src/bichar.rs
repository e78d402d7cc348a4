//! Interior Hamiltonian flow and generalized bicharacteristics.
//!
//! Rays are integrated in physical time `t` with an adaptive Dormand–Prince
//! 5(4) scheme. Since `dt/ds = -2τ` with `τ` constant, the flow parameter is
//! recovered as `s = -(t - t₀) / (2τ)`. After each step `ξ` is rescaled onto
//! the characteristic set `{p = 0}`. Boundary contacts are located on a sign
//! change of the level function and handled by the laws of [`crate::boundary`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::{self, BoundaryTag};
use crate::error::{Error, Result};
use crate::geometry::{symbol_unchecked, ChartCoords, CollarChart, Domain, MetricField, PhasePoint};
use crate::linalg::{dot, mat_vec, quad_form, Vec2};

/// Tolerances and limits of the interior integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    /// largest time step; bounds the spacing of stored samples
    pub h_max: f64,
    pub h_min: f64,
    /// accuracy of boundary event location in time
    pub tol_event: f64,
    pub max_steps: usize,
    /// time step of the gliding integrator
    pub glide_step: f64,
    /// total number of boundary events before truncation
    pub max_events: usize,
    /// events per unit time before truncation
    pub max_events_per_time: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-11,
            atol: 1e-12,
            h_max: 0.05,
            h_min: 1e-13,
            tol_event: 1e-13,
            max_steps: 2_000_000,
            glide_step: 2e-3,
            max_events: 20_000,
            max_events_per_time: 5_000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Interior,
    Gliding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleTag {
    Start,
    Step,
    Reflect,
    Glancing,
    GlideStart,
    Release,
    End,
    Truncated,
}

impl SampleTag {
    pub fn name(self) -> &'static str {
        match self {
            Self::Start => "start",
            Self::Step => "",
            Self::Reflect => "reflect",
            Self::Glancing => "glancing",
            Self::GlideStart => "glide",
            Self::Release => "release",
            Self::End => "end",
            Self::Truncated => "truncated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub s: f64,
    pub rho: PhasePoint,
    pub tag: SampleTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub kind: SegmentKind,
    pub piece: Option<usize>,
    pub samples: Vec<Sample>,
    /// `max |p(ρ(s)) - p(ρ(0))|` over the stored samples
    pub p_drift: f64,
    /// largest `|p|` seen before the shell projection of a step
    pub projection_defect: f64,
}

/// Why an interior integration stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StopReason {
    EndOfSpan,
    Boundary(PhasePoint),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowOutcome {
    pub segment: TrajectorySegment,
    pub stop: StopReason,
}

/// A reflection `ρ(S⁺) = Σ ρ(S⁻)`, stored in time order: `before` is the
/// incoming point and `after` the outgoing one. `eta_*` are the chart
/// covectors `(ξ', ζ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub t: f64,
    pub s: f64,
    pub piece: usize,
    pub before: PhasePoint,
    pub after: PhasePoint,
    pub eta_before: Vec2,
    pub eta_after: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub t: f64,
    pub x: Vec2,
    pub piece: usize,
    pub sigma: f64,
    pub tag: BoundaryTag,
    pub p_parallel: f64,
    pub hp2z: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedTrajectory {
    pub branch_id: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub segments: Vec<TrajectorySegment>,
    pub jumps: Vec<Jump>,
    pub events: Vec<ContactEvent>,
    /// diagnostic when the trajectory was cut short
    pub truncated: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GlancingRule {
    BothContinuations,
    GlidingFirst,
    InteriorFirst,
}

/// Finite approximation of the (possibly non-unique) set of continuations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchPolicy {
    pub n_branches: usize,
    pub jitter: f64,
    pub glancing_rule: GlancingRule,
    pub rng_seed: u64,
}

impl Default for BranchPolicy {
    fn default() -> Self {
        Self { n_branches: 1, jitter: 0.0, glancing_rule: GlancingRule::InteriorFirst, rng_seed: 0 }
    }
}

impl BranchPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.n_branches < 1 {
            return Err(Error::Config("branch policy needs n_branches >= 1".into()));
        }
        if !(self.jitter >= 0.0) {
            return Err(Error::Config("branch policy jitter must be nonnegative".into()));
        }
        Ok(())
    }
}

impl GeneralizedTrajectory {
    /// All samples in time order.
    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.segments.iter().flat_map(|s| s.samples.iter())
    }

    pub fn max_p_drift(&self) -> f64 {
        self.segments.iter().map(|s| s.p_drift).fold(0.0, f64::max)
    }

    pub fn last(&self) -> Option<&Sample> {
        self.segments.iter().rev().find_map(|s| s.samples.last())
    }

    /// Position at time `t` by linear interpolation between samples.
    pub fn position_at(&self, t: f64) -> Option<Vec2> {
        let mut prev: Option<&Sample> = None;
        let fwd = self.t_end >= self.t_start;
        for s in self.samples() {
            if let Some(p) = prev {
                let (a, b) = (p.rho.t, s.rho.t);
                let inside = if fwd { a <= t && t <= b } else { b <= t && t <= a };
                if inside && a != b {
                    let w = (t - a) / (b - a);
                    return Some([
                        p.rho.x[0] + w * (s.rho.x[0] - p.rho.x[0]),
                        p.rho.x[1] + w * (s.rho.x[1] - p.rho.x[1]),
                    ]);
                }
            }
            if s.rho.t == t {
                return Some(s.rho.x);
            }
            prev = Some(s);
        }
        None
    }
}

type State = [f64; 4];

fn pack(r: &PhasePoint) -> State {
    [r.x[0], r.x[1], r.xi[0], r.xi[1]]
}

fn unpack(y: &State, t: f64, tau: f64) -> PhasePoint {
    PhasePoint { t, x: [y[0], y[1]], tau, xi: [y[2], y[3]] }
}

/// Right-hand side in physical time: `dx/dt = -g⁻¹ξ/τ`,
/// `dξ_k/dt = ∂_k g^{ij} ξ_i ξ_j / (2τ)`.
fn rhs(m: &MetricField, tau: f64, y: &State) -> Result<State> {
    let x = [y[0], y[1]];
    let xi = [y[2], y[3]];
    let v = mat_vec(&m.g_inv(x), xi);
    let dg = m.dg_inv(x)?;
    let mut out = [-v[0] / tau, -v[1] / tau, 0.0, 0.0];
    for k in 0..m.dim() {
        out[2 + k] = quad_form(&dg[k], xi) / (2.0 * tau);
    }
    if m.dim() == 1 {
        out[1] = 0.0;
        out[3] = 0.0;
    }
    Ok(out)
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// One Dormand–Prince step; returns the fifth-order solution and the
/// embedded error estimate.
fn dopri_step(m: &MetricField, tau: f64, y: &State, h: f64) -> Result<(State, State)> {
    let _ = C;
    let mut k = [[0.0; 4]; 7];
    k[0] = rhs(m, tau, y)?;
    for i in 1..7 {
        let mut yi = *y;
        for (j, kj) in k.iter().enumerate().take(i) {
            for c in 0..4 {
                yi[c] += h * A[i][j] * kj[c];
            }
        }
        k[i] = rhs(m, tau, &yi)?;
    }
    let mut y5 = *y;
    let mut err = [0.0; 4];
    for c in 0..4 {
        for i in 0..7 {
            y5[c] += h * B5[i] * k[i][c];
            err[c] += h * (B5[i] - B4[i]) * k[i][c];
        }
    }
    Ok((y5, err))
}

/// Rescales `ξ` so that `|ξ|_x = |τ|`, returning `|p|` before the rescale.
fn project_shell(m: &MetricField, r: &mut PhasePoint) -> f64 {
    let n2 = quad_form(&m.g_inv(r.x), r.xi);
    let defect = (n2 - r.tau * r.tau).abs();
    if n2 > 0.0 {
        let f = r.tau.abs() / n2.sqrt();
        r.xi = [r.xi[0] * f, r.xi[1] * f];
    }
    defect
}

fn s_of(t: f64, t0: f64, s0: f64, tau: f64) -> f64 {
    s0 - (t - t0) / (2.0 * tau)
}

/// Spatial velocity `dx/dt`.
fn velocity(m: &MetricField, r: &PhasePoint) -> Vec2 {
    let v = mat_vec(&m.g_inv(r.x), r.xi);
    [-v[0] / r.tau, -v[1] / r.tau]
}

/// Integrates the Hamiltonian flow from `rho0` over the signed time span
/// `duration` and stops at the first boundary contact.
///
/// `s0` is the flow parameter attached to `rho0`.
pub fn flow_interior(
    domain: &Domain,
    metric: &MetricField,
    rho0: &PhasePoint,
    s0: f64,
    duration: f64,
    opts: &FlowOptions,
) -> Result<FlowOutcome> {
    if !domain.contains(rho0.x, 1e-9) {
        return Err(Error::OutsideDomain(rho0.x));
    }
    if rho0.tau == 0.0 {
        return Err(Error::Precondition("interior flow needs tau != 0".into()));
    }
    let p0 = symbol_unchecked(metric, rho0);
    let scale = rho0.tau * rho0.tau + dot(rho0.xi, rho0.xi);
    if p0.abs() > 1e-6 * scale {
        return Err(Error::Precondition(format!("starting point is not characteristic: p = {p0:.3e}")));
    }
    let mut rho = *rho0;
    project_shell(metric, &mut rho);
    let p_ref = symbol_unchecked(metric, &rho);
    let (t0, tau) = (rho.t, rho.tau);
    let dir = if duration >= 0.0 { 1.0 } else { -1.0 };
    let t_end = t0 + duration;
    let mut seg = TrajectorySegment {
        kind: SegmentKind::Interior,
        piece: None,
        samples: vec![Sample { s: s0, rho, tag: SampleTag::Start }],
        p_drift: 0.0,
        projection_defect: 0.0,
    };
    let h_max = if metric.has_analytic_derivative() && is_constant(metric, domain) {
        opts.h_max.max(0.25)
    } else {
        opts.h_max
    };
    let mut h = dir * h_max.min(duration.abs()).max(opts.h_min);
    let mut steps = 0;
    let mut phi_prev = domain.phi(rho.x);
    while dir * (t_end - rho.t) > 0.0 {
        steps += 1;
        if steps > opts.max_steps {
            return Ok(FlowOutcome { segment: seg, stop: StopReason::Failed("step budget exhausted".into()) });
        }
        if dir * (rho.t + h - t_end) > 0.0 {
            h = t_end - rho.t;
        }
        let y = pack(&rho);
        let (y5, err) = dopri_step(metric, tau, &y, h)?;
        let mut en: f64 = 0.0;
        for c in 0..4 {
            let sc = opts.atol + opts.rtol * y[c].abs().max(y5[c].abs());
            en = en.max(err[c].abs() / sc);
        }
        if en > 1.0 || !en.is_finite() {
            let f = if en.is_finite() { (0.9 * en.powf(-0.2)).max(0.2) } else { 0.2 };
            h *= f;
            if h.abs() < opts.h_min {
                return Ok(FlowOutcome {
                    segment: seg,
                    stop: StopReason::Failed(format!("step size underflow at t = {}", rho.t)),
                });
            }
            continue;
        }
        let mut next = unpack(&y5, rho.t + h, tau);
        let phi_next = domain.phi(next.x);
        if phi_next <= 0.0 && !(phi_prev <= 0.0 && phi_next >= phi_prev) {
            // bracket the contact on [0, h] with the Illinois variant of regula falsi
            let contact = locate_event(domain, metric, tau, &rho, h, phi_prev, phi_next, opts)?;
            let mut hit = contact;
            snap_to_boundary(domain, metric, &mut hit);
            seg.projection_defect = seg.projection_defect.max(project_shell(metric, &mut hit));
            seg.p_drift = seg.p_drift.max((symbol_unchecked(metric, &hit) - p_ref).abs());
            seg.samples.push(Sample { s: s_of(hit.t, t0, s0, tau), rho: hit, tag: SampleTag::Step });
            return Ok(FlowOutcome { segment: seg, stop: StopReason::Boundary(hit) });
        }
        seg.projection_defect = seg.projection_defect.max(project_shell(metric, &mut next));
        seg.p_drift = seg.p_drift.max((symbol_unchecked(metric, &next) - p_ref).abs());
        seg.samples.push(Sample { s: s_of(next.t, t0, s0, tau), rho: next, tag: SampleTag::Step });
        rho = next;
        phi_prev = phi_next;
        let f = if en > 0.0 { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) } else { 5.0 };
        h = dir * (h.abs() * f).min(h_max);
    }
    Ok(FlowOutcome { segment: seg, stop: StopReason::EndOfSpan })
}

fn is_constant(metric: &MetricField, domain: &Domain) -> bool {
    use crate::geometry::MetricSpec;
    let _ = domain;
    matches!(metric.spec(), MetricSpec::Flat | MetricSpec::Constant { .. })
        || matches!(metric.spec(), MetricSpec::Scaled { base, .. } if matches!(**base, MetricSpec::Flat | MetricSpec::Constant { .. }))
}

#[allow(clippy::too_many_arguments)]
fn locate_event(
    domain: &Domain,
    metric: &MetricField,
    tau: f64,
    start: &PhasePoint,
    h: f64,
    phi_a: f64,
    phi_b: f64,
    opts: &FlowOptions,
) -> Result<PhasePoint> {
    let y0 = pack(start);
    let eval = |theta: f64| -> Result<(PhasePoint, f64)> {
        let (y, _) = dopri_step(metric, tau, &y0, theta * h)?;
        let r = unpack(&y, start.t + theta * h, tau);
        Ok((r, domain.phi(r.x)))
    };
    let (mut a, mut fa) = (0.0, phi_a.max(0.0));
    let (mut b, mut fb) = (1.0, phi_b);
    let mut side = 0;
    let mut best = *start;
    for _ in 0..200 {
        let theta = if fa - fb != 0.0 { (a * fb - b * fa) / (fb - fa) } else { 0.5 * (a + b) };
        let theta = if theta <= a || theta >= b { 0.5 * (a + b) } else { theta };
        let (r, f) = eval(theta)?;
        if f > 0.0 {
            a = theta;
            fa = f;
            best = r;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        } else {
            b = theta;
            fb = f;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
            if f == 0.0 {
                return Ok(r);
            }
        }
        if (b - a) * h.abs() < opts.tol_event || (a > 0.0 && fa.abs() < 1e-15) {
            break;
        }
    }
    // the inner endpoint of the bracket is at most tol_event away in time
    Ok(if a == 0.0 { eval(b)?.0 } else { best })
}

/// Moves `x` onto the nearest boundary piece along the collar normal.
fn snap_to_boundary(domain: &Domain, metric: &MetricField, r: &mut PhasePoint) {
    let b = domain.project(r.x);
    if domain.dim() == 1 {
        r.x = b.point;
        return;
    }
    let gi = metric.g_inv(b.point);
    let v = mat_vec(&gi, b.normal);
    let s = dot(b.normal, v).sqrt();
    let n_g = [v[0] / s, v[1] / s];
    let d = [r.x[0] - b.point[0], r.x[1] - b.point[1]];
    if domain.pieces_at(r.x, 1e-9).len() > 1 {
        // corner: the nearest boundary point is the corner itself
        r.x = b.point;
        return;
    }
    let z = dot(d, b.normal) / dot(n_g, b.normal);
    let t = dot([d[0] - z * n_g[0], d[1] - z * n_g[1]], b.tangent);
    let q = domain.boundary_point(b.piece, domain.normalize_sigma(b.piece, b.sigma + t));
    r.x = q.point;
}

struct Branch {
    traj: GeneralizedTrajectory,
    rho: PhasePoint,
    s: f64,
    mode: Mode,
}

#[derive(Clone, Copy)]
enum Mode {
    Interior,
    Glide(usize),
}

/// Assembles generalized bicharacteristics from `rho0` over the signed time
/// span `duration`, alternating interior flow with reflections and gliding.
pub fn advance_generalized(
    chart: &CollarChart,
    rho0: &PhasePoint,
    duration: f64,
    policy: &BranchPolicy,
    opts: &FlowOptions,
) -> Result<Vec<GeneralizedTrajectory>> {
    policy.validate()?;
    let domain = chart.domain();
    let metric = chart.metric();
    if !domain.contains(rho0.x, 1e-9) {
        return Err(Error::OutsideDomain(rho0.x));
    }
    let mut out = Vec::new();
    let mut queue = vec![new_branch(0, rho0, duration)];
    let mut spawned = 1;
    while let Some(mut br) = queue.pop() {
        run_branch(chart, &mut br, duration, policy, opts, &mut queue, &mut spawned)?;
        out.push(br.traj);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.rng_seed);
    while spawned < policy.n_branches {
        let id = spawned;
        spawned += 1;
        let start = jittered_start(domain, metric, rho0, policy.jitter, policy.rng_seed.wrapping_add(id as u64), &mut rng);
        let mut br = new_branch(id, &start, duration);
        let mut local = Vec::new();
        // continuations of restarts are not split further
        let mut budget = policy.n_branches;
        run_branch(chart, &mut br, duration, policy, opts, &mut local, &mut budget)?;
        out.push(br.traj);
    }
    out.sort_by_key(|t| t.branch_id);
    Ok(out)
}

fn new_branch(id: usize, rho0: &PhasePoint, duration: f64) -> Branch {
    Branch {
        traj: GeneralizedTrajectory {
            branch_id: id,
            t_start: rho0.t,
            t_end: rho0.t + duration,
            segments: Vec::new(),
            jumps: Vec::new(),
            events: Vec::new(),
            truncated: None,
        },
        rho: *rho0,
        s: 0.0,
        mode: Mode::Interior,
    }
}

fn jittered_start(
    domain: &Domain,
    metric: &MetricField,
    rho0: &PhasePoint,
    jitter: f64,
    seed: u64,
    _rng: &mut ChaCha8Rng,
) -> PhasePoint {
    if jitter == 0.0 {
        return *rho0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = domain.bbox();
    let diam = (hi[0] - lo[0]).hypot(hi[1] - lo[1]);
    let v0 = velocity(metric, rho0);
    for _ in 0..64 {
        let r: f64 = rng.random::<f64>().sqrt();
        let a: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let mut x = [rho0.x[0] + jitter * diam * r * a.cos(), rho0.x[1] + jitter * diam * r * a.sin()];
        if domain.dim() == 1 {
            x[1] = 0.0;
        }
        if domain.phi(x) <= 0.0 {
            continue;
        }
        let turn = jitter * std::f64::consts::PI * (2.0 * rng.random::<f64>() - 1.0);
        let v = if domain.dim() == 1 {
            v0
        } else {
            [v0[0] * turn.cos() - v0[1] * turn.sin(), v0[0] * turn.sin() + v0[1] * turn.cos()]
        };
        return PhasePoint::from_velocity(metric, rho0.t, x, v, rho0.tau);
    }
    *rho0
}

fn push_segment(traj: &mut GeneralizedTrajectory, seg: TrajectorySegment) {
    if seg.samples.len() > 1 || traj.segments.is_empty() {
        traj.segments.push(seg);
    } else if let Some(last) = traj.segments.last_mut() {
        // a single-sample segment only carries an event tag; fold it in
        if let (Some(a), Some(b)) = (last.samples.last_mut(), seg.samples.first()) {
            if a.rho.t == b.rho.t {
                a.tag = b.tag;
                a.rho = b.rho;
                return;
            }
        }
        traj.segments.push(seg);
    }
}

fn tag_last(traj: &mut GeneralizedTrajectory, tag: SampleTag) {
    if let Some(s) = traj.segments.last_mut().and_then(|s| s.samples.last_mut()) {
        s.tag = tag;
    }
}

fn run_branch(
    chart: &CollarChart,
    br: &mut Branch,
    duration: f64,
    policy: &BranchPolicy,
    opts: &FlowOptions,
    queue: &mut Vec<Branch>,
    spawned: &mut usize,
) -> Result<()> {
    let domain = chart.domain();
    let metric = chart.metric();
    let dir = if duration >= 0.0 { 1.0 } else { -1.0 };
    let t_end = br.traj.t_end;
    let cap = (opts.max_events as f64).min((opts.max_events_per_time * duration.abs()).max(16.0)) as usize;
    let mut stuck = 0;
    let mut last_event_t = f64::NAN;
    if matches!(br.mode, Mode::Interior) && domain.phi(br.rho.x).abs() < 1e-12 {
        // starting on the boundary: apply the boundary law first
        push_segment(
            &mut br.traj,
            TrajectorySegment {
                kind: SegmentKind::Interior,
                piece: None,
                samples: vec![Sample { s: br.s, rho: br.rho, tag: SampleTag::Start }],
                p_drift: 0.0,
                projection_defect: 0.0,
            },
        );
        last_event_t = br.rho.t;
        handle_contact(chart, br, dir, policy, queue, spawned, false)?;
    }
    loop {
        let remaining = t_end - br.rho.t;
        if dir * remaining <= 0.0 {
            tag_last(&mut br.traj, SampleTag::End);
            return Ok(());
        }
        if br.traj.events.len() >= cap {
            br.traj.truncated = Some(format!("event cap {cap} reached at t = {}", br.rho.t));
            tag_last(&mut br.traj, SampleTag::Truncated);
            return Ok(());
        }
        match br.mode {
            Mode::Glide(piece) => {
                let (seg, end) = glide(chart, piece, &br.rho, br.s, remaining, opts)?;
                let last = *seg.samples.last().unwrap();
                push_segment(&mut br.traj, seg);
                br.rho = last.rho;
                br.s = last.s;
                br.mode = Mode::Interior;
                match end {
                    GlideEnd::Span => {}
                    GlideEnd::Release => tag_last(&mut br.traj, SampleTag::Release),
                    GlideEnd::PieceEnd => {
                        // leave the end of the piece through the adjacent one
                        handle_contact(chart, br, dir, policy, queue, spawned, true)?;
                    }
                }
            }
            Mode::Interior => {
                let outcome = match flow_interior(domain, metric, &br.rho, br.s, remaining, opts) {
                    Ok(o) => o,
                    Err(e) => {
                        br.traj.truncated = Some(e.to_string());
                        return Ok(());
                    }
                };
                let seg = outcome.segment;
                let last = *seg.samples.last().unwrap();
                push_segment(&mut br.traj, seg);
                br.rho = last.rho;
                br.s = last.s;
                match outcome.stop {
                    StopReason::EndOfSpan => {
                        tag_last(&mut br.traj, SampleTag::End);
                        return Ok(());
                    }
                    StopReason::Failed(reason) => {
                        br.traj.truncated = Some(reason);
                        tag_last(&mut br.traj, SampleTag::Truncated);
                        return Ok(());
                    }
                    StopReason::Boundary(hit) => {
                        br.rho = hit;
                        if (hit.t - last_event_t).abs() < 1e-13 {
                            stuck += 1;
                            if stuck > 4 {
                                br.traj.truncated = Some(format!("event location stalled at t = {}", hit.t));
                                tag_last(&mut br.traj, SampleTag::Truncated);
                                return Ok(());
                            }
                        } else {
                            stuck = 0;
                        }
                        last_event_t = hit.t;
                        handle_contact(chart, br, dir, policy, queue, spawned, stuck > 0)?;
                    }
                }
            }
        }
    }
}

/// Applies the boundary law at the current (boundary) point of the branch.
fn handle_contact(
    chart: &CollarChart,
    br: &mut Branch,
    dir: f64,
    policy: &BranchPolicy,
    queue: &mut Vec<Branch>,
    spawned: &mut usize,
    force_all: bool,
) -> Result<()> {
    let domain = chart.domain();
    let metric = chart.metric();
    let rho = br.rho;
    let pieces = domain.pieces_at(rho.x, 1e-9);
    let corner = pieces.len() > 1;
    let mut current = rho;
    let mut reflected = false;
    for &piece in &pieces {
        let cls = match boundary::classify_on(chart, piece, &current) {
            Ok(c) => c,
            Err(e) => {
                br.traj.truncated = Some(format!("classification failed: {e}"));
                return Ok(());
            }
        };
        let normal = domain.boundary_point(piece, cls.coords.sigma).normal;
        let v = velocity(metric, &current);
        let outgoing = dir * dot(v, normal) < 0.0;
        br.traj.events.push(ContactEvent {
            t: current.t,
            x: current.x,
            piece,
            sigma: cls.coords.sigma,
            tag: cls.tag,
            p_parallel: cls.p_parallel,
            hp2z: cls.hp2z,
            zeta: cls.eta[1],
        });
        let tag = cls.tag;
        if tag.is_hyperbolic() || tag == BoundaryTag::Elliptic || corner || force_all {
            if outgoing {
                let after = boundary::reflect(chart, piece, &current)?;
                let eta_after = boundary::reflect_chart(cls.eta);
                if tag.is_hyperbolic() {
                    br.traj.jumps.push(Jump {
                        t: current.t,
                        s: br.s,
                        piece,
                        before: current,
                        after,
                        eta_before: cls.eta,
                        eta_after,
                    });
                }
                current = after;
                reflected = true;
            }
            continue;
        }
        // glancing contact on a single piece
        let glide_choice = match tag {
            BoundaryTag::GlancingGliding => true,
            BoundaryTag::GlancingDiffractive => false,
            _ => policy.glancing_rule == GlancingRule::GlidingFirst,
        };
        if tag == BoundaryTag::GlancingOrder3
            && policy.glancing_rule == GlancingRule::BothContinuations
            && *spawned < policy.n_branches
        {
            let mut other = Branch {
                traj: br.traj.clone(),
                rho: current,
                s: br.s,
                mode: Mode::Glide(piece),
            };
            other.traj.branch_id = *spawned;
            *spawned += 1;
            tag_last(&mut other.traj, SampleTag::GlideStart);
            queue.push(other);
        }
        if glide_choice {
            br.mode = Mode::Glide(piece);
            br.rho = current;
            tag_last(&mut br.traj, SampleTag::GlideStart);
            return Ok(());
        }
        // interior continuation; a tiny outgoing ζ is reflected so that the
        // ray stays in the closure
        if outgoing {
            current = boundary::reflect(chart, piece, &current)?;
        }
        tag_last(&mut br.traj, SampleTag::Glancing);
        br.rho = current;
        return Ok(());
    }
    if reflected {
        tag_last(&mut br.traj, SampleTag::Reflect);
        if let Some(s) = br.traj.segments.last_mut().and_then(|s| s.samples.last_mut()) {
            s.rho = current;
        }
    }
    br.rho = current;
    br.mode = Mode::Interior;
    Ok(())
}

enum GlideEnd {
    Span,
    Release,
    PieceEnd,
}

/// Integrates the gliding flow along `piece`: the boundary Hamiltonian
/// `-τ² + G^{σσ}(σ, 0) ξ'²` in `(σ, ξ')` with `z = ζ = 0`.
fn glide(
    chart: &CollarChart,
    piece: usize,
    rho: &PhasePoint,
    s0: f64,
    duration: f64,
    opts: &FlowOptions,
) -> Result<(TrajectorySegment, GlideEnd)> {
    let domain = chart.domain();
    let metric = chart.metric();
    let (c, eta) = boundary::boundary_coords(chart, piece, rho)?;
    let tau = rho.tau;
    let t0 = rho.t;
    let gss = |sigma: f64| chart.inverse_metric_in_chart(ChartCoords { piece, sigma, z: 0.0 })[0][0];
    let dgss = |sigma: f64| {
        let h = 1e-6;
        (gss(sigma + h) - gss(sigma - h)) / (2.0 * h)
    };
    // dσ/dt = -G^{σσ} ξ'/τ, dξ'/dt = ∂_σ G^{σσ} ξ'² / (2τ)
    let f = |y: [f64; 2]| -> [f64; 2] { [-gss(y[0]) * y[1] / tau, dgss(y[0]) * y[1] * y[1] / (2.0 * tau)] };
    let to_phase = |sigma: f64, xi_t: f64, t: f64| -> PhasePoint {
        let cc = ChartCoords { piece, sigma, z: 0.0 };
        PhasePoint { t, x: chart.to_cartesian(cc), tau, xi: chart.covector_from_chart(cc, [xi_t, 0.0]) }
    };
    let shell = |y: &mut [f64; 2]| {
        let g = gss(y[0]);
        y[1] = y[1].signum() * tau.abs() / g.sqrt();
    };
    let mut y = [c.sigma, eta[0]];
    shell(&mut y);
    let start = to_phase(y[0], y[1], t0);
    let p_ref = symbol_unchecked(metric, &start);
    let mut seg = TrajectorySegment {
        kind: SegmentKind::Gliding,
        piece: Some(piece),
        samples: vec![Sample { s: s0, rho: start, tag: SampleTag::GlideStart }],
        p_drift: 0.0,
        projection_defect: 0.0,
    };
    let dir = duration.signum();
    let mut t = t0;
    let t_end = t0 + duration;
    let (lo, hi) = domain.piece_range(piece);
    let periodic = domain.piece_periodic();
    loop {
        let h = dir * opts.glide_step.min((t_end - t).abs());
        if h == 0.0 {
            return Ok((seg, GlideEnd::Span));
        }
        let k1 = f(y);
        let k2 = f([y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]]);
        let k3 = f([y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]]);
        let k4 = f([y[0] + h * k3[0], y[1] + h * k3[1]]);
        let mut yn = [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        let mut tn = t + h;
        let mut end = None;
        if !periodic && (yn[0] < lo || yn[0] > hi) {
            // stop exactly at the end of the piece
            let target = if yn[0] < lo { lo } else { hi };
            let w = (target - y[0]) / (yn[0] - y[0]);
            yn = [target, y[1] + w * (yn[1] - y[1])];
            tn = t + w * h;
            end = Some(GlideEnd::PieceEnd);
        } else if periodic {
            yn[0] = domain.normalize_sigma(piece, yn[0]);
        }
        shell(&mut yn);
        let mut r = to_phase(yn[0], yn[1], tn);
        seg.p_drift = seg.p_drift.max((symbol_unchecked(metric, &r) - p_ref).abs());
        let s = s_of(tn, t0, s0, tau);
        if end.is_none() {
            // release once the boundary turns convex towards the ray
            if boundary::hp2z(chart, piece, &r)? > boundary::EPS_D {
                seg.samples.push(Sample { s, rho: r, tag: SampleTag::Release });
                return Ok((seg, GlideEnd::Release));
            }
        }
        if let Some(e) = end {
            project_shell(metric, &mut r);
            seg.samples.push(Sample { s, rho: r, tag: SampleTag::Step });
            return Ok((seg, e));
        }
        seg.samples.push(Sample { s, rho: r, tag: SampleTag::Step });
        y = yn;
        t = tn;
        if dir * (t_end - t) <= 0.0 {
            return Ok((seg, GlideEnd::Span));
        }
    }
}

/// Union of sampled points of all branches within `|t - t₀| ≤ T`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachTube {
    pub t0: f64,
    pub horizon: f64,
    pub branches: Vec<GeneralizedTrajectory>,
    /// largest spatial distance of a branch from branch 0 at equal times
    pub thickness: f64,
}

/// Generalized bicharacteristics through `rho0` in both time directions.
pub fn reach_tube(
    chart: &CollarChart,
    rho0: &PhasePoint,
    horizon: f64,
    policy: &BranchPolicy,
    opts: &FlowOptions,
) -> Result<ReachTube> {
    let mut branches = advance_generalized(chart, rho0, horizon, policy, opts)?;
    let past = advance_generalized(chart, rho0, -horizon, policy, opts)?;
    let n = branches.len();
    for (i, mut b) in past.into_iter().enumerate() {
        b.branch_id = n + i;
        branches.push(b);
    }
    let mut thickness: f64 = 0.0;
    for sign in [1.0, -1.0] {
        let group: Vec<&GeneralizedTrajectory> =
            branches.iter().filter(|b| (b.t_end - b.t_start) * sign > 0.0).collect();
        if let Some(first) = group.first() {
            for k in 1..=64 {
                let t = rho0.t + sign * horizon * k as f64 / 64.0;
                let Some(x0) = first.position_at(t) else { continue };
                for b in &group[1..] {
                    if let Some(x) = b.position_at(t) {
                        thickness = thickness.max((x[0] - x0[0]).hypot(x[1] - x0[1]));
                    }
                }
            }
        }
    }
    Ok(ReachTube { t0: rho0.t, horizon, branches, thickness })
}

impl ReachTube {
    /// Distance from `rho` to the tube in `(t, x, τ, ξ)`, measured to the
    /// polylines through consecutive samples.
    pub fn distance(&self, rho: &PhasePoint) -> f64 {
        let v = |r: &PhasePoint| [r.t, r.x[0], r.x[1], r.tau, r.xi[0], r.xi[1]];
        let p = v(rho);
        let mut best = f64::INFINITY;
        for b in &self.branches {
            for seg in &b.segments {
                let pts: Vec<[f64; 6]> = seg
                    .samples
                    .iter()
                    .filter(|s| (s.rho.t - self.t0).abs() <= self.horizon + 1e-12)
                    .map(|s| v(&s.rho))
                    .collect();
                if pts.len() == 1 {
                    best = best.min(dist6(&p, &pts[0]));
                }
                for w in pts.windows(2) {
                    best = best.min(segment_distance(&p, &w[0], &w[1]));
                }
            }
        }
        best
    }

    pub fn points(&self) -> Vec<PhasePoint> {
        self.branches.iter().flat_map(|b| b.samples().map(|s| s.rho)).collect()
    }
}

fn dist6(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn segment_distance(p: &[f64; 6], a: &[f64; 6], b: &[f64; 6]) -> f64 {
    let mut ab2 = 0.0;
    let mut ap_ab = 0.0;
    for i in 0..6 {
        let d = b[i] - a[i];
        ab2 += d * d;
        ap_ab += (p[i] - a[i]) * d;
    }
    let w = if ab2 > 0.0 { (ap_ab / ab2).clamp(0.0, 1.0) } else { 0.0 };
    let mut q = [0.0; 6];
    for i in 0..6 {
        q[i] = a[i] + w * (b[i] - a[i]);
    }
    dist6(p, &q)
}
