//! Geometric control checks on sampled phase space, `T_GCC` estimation and
//! perturbation sweeps.
//!
//! Samples are characteristic points with `τ = 1` and unit `g`-speed on a
//! tensor grid of interior positions times velocity directions. Data with
//! `τ = -1` are time reversals of these and are covered by symmetry of the
//! direction grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bichar::{advance_generalized, BranchPolicy, FlowOptions, GeneralizedTrajectory, SegmentKind};
use crate::boundary::{is_escape_point, BoundaryTag, Direction, EscapeVerdict};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{
    build_collar_chart, lipschitz_perturb, CollarChart, Domain, MetricField, PerturbationShape, PhasePoint,
};
use crate::linalg::Vec2;

/// Shape of an observation region. Interior shapes are open sets in `x`;
/// boundary shapes are open sets of boundary parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionShape {
    /// the whole domain
    All,
    /// `lo < x₁ < hi` (one dimension, or a vertical strip in two)
    Interval { lo: f64, hi: f64 },
    /// `lo < x_axis < hi`
    Strip { axis: usize, lo: f64, hi: f64 },
    Ball { center: Vec2, radius: f64 },
    Box { lo: Vec2, hi: Vec2 },
    /// `{x : f(x) > 0}` for an expression in `x, y`
    Expr { expr: String },
    /// the whole boundary
    BoundaryAll,
    /// whole boundary pieces (interval endpoints are pieces 0 and 1)
    BoundaryPieces { pieces: Vec<usize> },
    /// `lo < σ < hi` on one piece
    BoundaryArc { piece: usize, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRegion {
    pub shape: RegionShape,
    /// radius of the neighbourhood used by weak checks
    #[serde(default)]
    pub dilation: f64,
}

impl ObservationRegion {
    pub fn new(shape: RegionShape) -> Self {
        Self { shape, dilation: 0.0 }
    }

    pub fn with_dilation(mut self, dilation: f64) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn is_boundary(&self) -> bool {
        matches!(
            self.shape,
            RegionShape::BoundaryAll | RegionShape::BoundaryPieces { .. } | RegionShape::BoundaryArc { .. }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = match &self.shape {
            RegionShape::Interval { lo, hi } | RegionShape::Strip { lo, hi, .. } => !(hi > lo),
            RegionShape::Ball { radius, .. } => !(*radius > 0.0),
            RegionShape::Box { lo, hi } => !(hi[0] > lo[0] && hi[1] > lo[1]),
            RegionShape::BoundaryPieces { pieces } => pieces.is_empty(),
            RegionShape::BoundaryArc { lo, hi, .. } => !(hi > lo),
            RegionShape::Expr { expr } => {
                Expr::parse(expr, &crate::geometry::EXPR_VARS)?;
                false
            }
            _ => false,
        };
        if bad || !(self.dilation >= 0.0) {
            return Err(Error::Config(format!("empty or malformed observation region {:?}", self.shape)));
        }
        Ok(())
    }

    /// Smallest feature size, used to choose the sub-step resolution.
    pub fn width(&self) -> f64 {
        match &self.shape {
            RegionShape::Interval { lo, hi } | RegionShape::Strip { lo, hi, .. } => hi - lo,
            RegionShape::Ball { radius, .. } => 2.0 * radius,
            RegionShape::Box { lo, hi } => (hi[0] - lo[0]).min(hi[1] - lo[1]),
            RegionShape::Expr { .. } => 0.05,
            _ => f64::INFINITY,
        }
    }
}

/// Compiled membership test for an observation region.
pub struct Indicator {
    shape: RegionShape,
    expr: Option<Expr>,
    eps: f64,
}

impl Indicator {
    pub fn new(region: &ObservationRegion, dilated: bool) -> Result<Self> {
        region.validate()?;
        let expr = match &region.shape {
            RegionShape::Expr { expr } => Some(Expr::parse(expr, &crate::geometry::EXPR_VARS)?),
            _ => None,
        };
        Ok(Self { shape: region.shape.clone(), expr, eps: if dilated { region.dilation } else { 0.0 } })
    }

    /// Interior membership of `x`.
    pub fn contains(&self, x: Vec2) -> bool {
        let e = self.eps;
        match &self.shape {
            RegionShape::All => true,
            RegionShape::Interval { lo, hi } => x[0] > lo - e && x[0] < hi + e,
            RegionShape::Strip { axis, lo, hi } => x[*axis] > lo - e && x[*axis] < hi + e,
            RegionShape::Ball { center, radius } => (x[0] - center[0]).hypot(x[1] - center[1]) < radius + e,
            RegionShape::Box { lo, hi } => {
                x[0] > lo[0] - e && x[0] < hi[0] + e && x[1] > lo[1] - e && x[1] < hi[1] + e
            }
            RegionShape::Expr { .. } => {
                let f = self.expr.as_ref().unwrap();
                let at = |p: Vec2| f.eval(&[p[0], p[1], p[0], p[1]]) > 0.0;
                if at(x) {
                    return true;
                }
                // dilation approximated by a ring of probes
                e > 0.0
                    && (0..16).any(|k| {
                        let a = std::f64::consts::TAU * k as f64 / 16.0;
                        at([x[0] + e * a.cos(), x[1] + e * a.sin()])
                    })
            }
            _ => false,
        }
    }

    /// Boundary membership of the parameter `(piece, σ)`.
    pub fn contains_boundary(&self, domain: &Domain, piece: usize, sigma: f64) -> bool {
        let e = self.eps;
        match &self.shape {
            RegionShape::BoundaryAll => true,
            RegionShape::BoundaryPieces { pieces } => pieces.contains(&piece),
            RegionShape::BoundaryArc { piece: p, lo, hi } => {
                if *p != piece {
                    return false;
                }
                if domain.piece_periodic() {
                    let (a, b) = domain.piece_range(piece);
                    let period = b - a;
                    let rel = (sigma - (lo - e)).rem_euclid(period);
                    rel > 0.0 && rel < (hi - lo) + 2.0 * e
                } else {
                    sigma > lo - e && sigma < hi + e
                }
            }
            _ => false,
        }
    }
}

/// Phase-space sampling grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub nx: usize,
    pub ny: usize,
    pub n_dir: usize,
    /// minimal distance of sampled positions from the boundary
    pub margin: f64,
    /// re-test a ring of nearby samples around each failure
    pub refine: bool,
}

impl Default for Sampling {
    fn default() -> Self {
        Self { nx: 40, ny: 40, n_dir: 32, margin: 1e-3, refine: false }
    }
}

impl Sampling {
    /// Initial data: `τ = 1`, unit speed, velocity angle `2πk / n_dir`
    /// (in one dimension the two directions ±1).
    pub fn points(&self, domain: &Domain, metric: &MetricField) -> Vec<PhasePoint> {
        let xs = domain.interior_grid(self.nx, self.ny, self.margin);
        let dirs: Vec<Vec2> = if domain.dim() == 1 {
            vec![[1.0, 0.0], [-1.0, 0.0]]
        } else {
            (0..self.n_dir.max(1))
                .map(|k| {
                    let a = std::f64::consts::TAU * k as f64 / self.n_dir.max(1) as f64;
                    [a.cos(), a.sin()]
                })
                .collect()
        };
        let mut out = Vec::with_capacity(xs.len() * dirs.len());
        for &x in &xs {
            for &v in &dirs {
                out.push(PhasePoint::from_velocity(metric, 0.0, x, v, 1.0));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Holds,
    Fails,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantifier {
    /// every branch must reach the region
    Strong,
    /// some branch must reach the dilated region
    Weak,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Witness {
    pub initial: PhasePoint,
    pub trajectories: Vec<GeneralizedTrajectory>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GccReport {
    pub verdict: Verdict,
    pub quantifier: Quantifier,
    pub boundary: bool,
    pub time: f64,
    pub n_samples: usize,
    pub n_pass: usize,
    pub n_fail: usize,
    pub n_indeterminate: usize,
    /// fraction of samples certified to reach the region
    pub coverage: f64,
    /// largest first-hitting time among passing samples
    pub max_hit_time: f64,
    pub witnesses: Vec<Witness>,
    pub sampling: Sampling,
    pub policy: BranchPolicy,
    pub branches_per_sample: usize,
}

/// First-hitting data for one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleHit {
    pub initial: PhasePoint,
    /// first time the sample is controlled under the quantifier, `∞` if
    /// never within the horizon
    pub time: f64,
    /// a branch was cut short before reaching the region
    pub indeterminate: bool,
    pub branches: usize,
}

/// Settings shared by all checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckSettings {
    pub sampling: Sampling,
    pub policy: BranchPolicy,
    pub flow: FlowOptions,
    pub max_witnesses: usize,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self { sampling: Sampling::default(), policy: BranchPolicy::default(), flow: FlowOptions::default(), max_witnesses: 8 }
    }
}

/// Collar chart of a default width for the domain (halved until valid).
pub fn default_chart(domain: &Domain, metric: &MetricField) -> Result<CollarChart> {
    let (lo, hi) = domain.bbox();
    let mut width = 0.1 * (hi[0] - lo[0]).max(hi[1] - lo[1]).min(10.0);
    for _ in 0..20 {
        match build_collar_chart(domain, metric, width) {
            Ok(c) => return Ok(c),
            Err(Error::CollarTooWide { .. }) => width *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Precondition("no valid collar width found".into()))
}

/// First time in `(0, T]` at which a branch enters the interior region.
fn interior_hit(tr: &GeneralizedTrajectory, ind: &Indicator, res: f64) -> f64 {
    let mut prev: Option<(f64, Vec2)> = None;
    for s in tr.samples() {
        let (t, x) = (s.rho.t - tr.t_start, s.rho.x);
        if let Some((t0, x0)) = prev {
            let len = (x[0] - x0[0]).hypot(x[1] - x0[1]);
            let n = ((len / res).ceil() as usize).max(1);
            let mut last_out = 0.0;
            for k in 1..=n {
                let w = k as f64 / n as f64;
                let p = [x0[0] + w * (x[0] - x0[0]), x0[1] + w * (x[1] - x0[1])];
                if ind.contains(p) {
                    // bisect the entry along the chord
                    let (mut a, mut b) = (last_out, w);
                    for _ in 0..40 {
                        let m = 0.5 * (a + b);
                        let q = [x0[0] + m * (x[0] - x0[0]), x0[1] + m * (x[1] - x0[1])];
                        if ind.contains(q) {
                            b = m;
                        } else {
                            a = m;
                        }
                    }
                    return t0 + b * (t - t0);
                }
                last_out = w;
            }
        } else if ind.contains(x) {
            return 0.0;
        }
        prev = Some((t, x));
    }
    f64::INFINITY
}

/// First time at which a branch meets a boundary escape point over the
/// region; the flag reports order-three contacts over the region.
fn boundary_hit(tr: &GeneralizedTrajectory, ind: &Indicator, domain: &Domain) -> (f64, bool) {
    let mut order3 = false;
    let mut best = f64::INFINITY;
    for ev in &tr.events {
        if !ind.contains_boundary(domain, ev.piece, ev.sigma) {
            continue;
        }
        let cls = crate::boundary::BoundaryClass {
            tag: ev.tag,
            p_parallel: ev.p_parallel,
            hpz: 2.0 * ev.zeta,
            hp2z: ev.hp2z,
            coords: crate::geometry::ChartCoords { piece: ev.piece, sigma: ev.sigma, z: 0.0 },
            eta: [0.0, ev.zeta],
        };
        let v = [Direction::Future, Direction::Past].map(|d| is_escape_point(&cls, d));
        if v.contains(&EscapeVerdict::Escapes) {
            best = best.min(ev.t - tr.t_start);
            break;
        }
        if ev.tag == BoundaryTag::GlancingOrder3 {
            order3 = true;
        }
    }
    // gliding along the region is an escape contact as well
    for seg in &tr.segments {
        if seg.kind != SegmentKind::Gliding {
            continue;
        }
        for s in &seg.samples {
            let b = domain.project(s.rho.x);
            if ind.contains_boundary(domain, seg.piece.unwrap_or(b.piece), b.sigma) {
                best = best.min(s.rho.t - tr.t_start);
                break;
            }
        }
    }
    (best, order3)
}

fn evaluate_sample(
    chart: &CollarChart,
    rho: &PhasePoint,
    region: &ObservationRegion,
    ind: &Indicator,
    horizon: f64,
    quant: Quantifier,
    settings: &CheckSettings,
) -> Result<(SampleHit, Vec<GeneralizedTrajectory>)> {
    let trajs = advance_generalized(chart, rho, horizon, &settings.policy, &settings.flow)?;
    let res = (0.1 * region.width()).min(settings.flow.h_max).max(1e-4);
    let mut times = Vec::with_capacity(trajs.len());
    let mut indeterminate = false;
    for tr in &trajs {
        let (t, flag) = if region.is_boundary() {
            boundary_hit(tr, ind, chart.domain())
        } else {
            (interior_hit(tr, ind, res), false)
        };
        if !t.is_finite() && (tr.truncated.is_some() || flag) {
            indeterminate = true;
        }
        times.push(t);
    }
    let time = match quant {
        Quantifier::Strong => times.iter().cloned().fold(0.0, f64::max),
        Quantifier::Weak => times.iter().cloned().fold(f64::INFINITY, f64::min),
    };
    let hit = SampleHit { initial: *rho, time, indeterminate: indeterminate && !time.is_finite(), branches: trajs.len() };
    Ok((hit, trajs))
}

/// Computes first-hitting times for every sample up to `horizon`.
pub fn hitting_times(
    chart: &CollarChart,
    region: &ObservationRegion,
    horizon: f64,
    quant: Quantifier,
    settings: &CheckSettings,
) -> Result<Vec<SampleHit>> {
    let ind = Indicator::new(region, quant == Quantifier::Weak)?;
    let pts = settings.sampling.points(chart.domain(), chart.metric());
    let mut hits: Vec<SampleHit> = pts
        .par_iter()
        .map(|rho| evaluate_sample(chart, rho, region, &ind, horizon, quant, settings).map(|(h, _)| h))
        .collect::<Result<_>>()?;
    if settings.sampling.refine {
        let extra = refine_failures(chart, &hits, settings);
        let more: Vec<SampleHit> = extra
            .par_iter()
            .map(|rho| evaluate_sample(chart, rho, region, &ind, horizon, quant, settings).map(|(h, _)| h))
            .collect::<Result<_>>()?;
        hits.extend(more);
    }
    Ok(hits)
}

fn refine_failures(chart: &CollarChart, hits: &[SampleHit], settings: &CheckSettings) -> Vec<PhasePoint> {
    let domain = chart.domain();
    let metric = chart.metric();
    let (lo, hi) = domain.bbox();
    let dx = (hi[0] - lo[0]) / settings.sampling.nx.max(1) as f64;
    let da = std::f64::consts::TAU / settings.sampling.n_dir.max(1) as f64;
    let mut out = Vec::new();
    for h in hits.iter().filter(|h| !h.time.is_finite()).take(16) {
        let v = h.initial.velocity(metric);
        let a0 = v[1].atan2(v[0]);
        for k in 0..8 {
            let b = std::f64::consts::TAU * k as f64 / 8.0;
            let mut x = [h.initial.x[0] + 0.5 * dx * b.cos(), h.initial.x[1] + 0.5 * dx * b.sin()];
            if domain.dim() == 1 {
                x = [h.initial.x[0] + 0.5 * dx * b.cos().signum(), 0.0];
            }
            if domain.boundary_distance(x) < settings.sampling.margin {
                continue;
            }
            let a = if domain.dim() == 1 { a0 } else { a0 + 0.5 * da * b.sin() };
            out.push(PhasePoint::from_velocity(metric, 0.0, x, [a.cos(), a.sin()], 1.0));
        }
    }
    out
}

fn report_from_hits(
    chart: &CollarChart,
    region: &ObservationRegion,
    hits: &[SampleHit],
    time: f64,
    quant: Quantifier,
    settings: &CheckSettings,
) -> Result<GccReport> {
    let mut n_pass = 0;
    let mut n_fail = 0;
    let mut n_ind = 0;
    let mut max_hit: f64 = 0.0;
    let mut failing = Vec::new();
    for h in hits {
        // the open window (0, T) requires a strictly earlier hit
        if h.time < time {
            n_pass += 1;
            max_hit = max_hit.max(h.time);
        } else if h.indeterminate {
            n_ind += 1;
        } else {
            n_fail += 1;
            failing.push(h.initial);
        }
    }
    let verdict = if n_fail > 0 {
        Verdict::Fails
    } else if n_ind > 0 {
        Verdict::Indeterminate
    } else {
        Verdict::Holds
    };
    let mut witnesses = Vec::new();
    for rho in failing.iter().take(settings.max_witnesses) {
        let trajectories = advance_generalized(chart, rho, time, &settings.policy, &settings.flow)?;
        witnesses.push(Witness { initial: *rho, trajectories });
    }
    let _ = region;
    Ok(GccReport {
        verdict,
        quantifier: quant,
        boundary: region.is_boundary(),
        time,
        n_samples: hits.len(),
        n_pass,
        n_fail,
        n_indeterminate: n_ind,
        coverage: if hits.is_empty() { 0.0 } else { n_pass as f64 / hits.len() as f64 },
        max_hit_time: max_hit,
        witnesses,
        sampling: settings.sampling,
        policy: settings.policy,
        branches_per_sample: hits.iter().map(|h| h.branches).max().unwrap_or(0),
    })
}

fn check(
    chart: &CollarChart,
    region: &ObservationRegion,
    time: f64,
    quant: Quantifier,
    settings: &CheckSettings,
) -> Result<GccReport> {
    if !(time > 0.0) {
        return Err(Error::Config(format!("control time must be positive, got {time}")));
    }
    let hits = hitting_times(chart, region, time, quant, settings)?;
    report_from_hits(chart, region, &hits, time, quant, settings)
}

/// Interior geometric control: every branch from every sample meets `ω`
/// within `(0, T)`.
pub fn check_interior_gcc(
    chart: &CollarChart,
    region: &ObservationRegion,
    time: f64,
    settings: &CheckSettings,
) -> Result<GccReport> {
    if region.is_boundary() {
        return Err(Error::Config("interior check needs an interior region".into()));
    }
    check(chart, region, time, Quantifier::Strong, settings)
}

/// Boundary geometric control: every branch meets an escape point over `Γ`
/// within `(0, T)`.
pub fn check_boundary_gcc(
    chart: &CollarChart,
    region: &ObservationRegion,
    time: f64,
    settings: &CheckSettings,
) -> Result<GccReport> {
    if !region.is_boundary() {
        return Err(Error::Config("boundary check needs a boundary region".into()));
    }
    check(chart, region, time, Quantifier::Strong, settings)
}

/// Weak geometric control: some branch reaches the dilated region.
pub fn check_weak_gcc(
    chart: &CollarChart,
    region: &ObservationRegion,
    time: f64,
    settings: &CheckSettings,
) -> Result<GccReport> {
    if !(region.dilation > 0.0) {
        return Err(Error::Config("weak check needs a positive dilation".into()));
    }
    check(chart, region, time, Quantifier::Weak, settings)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TgccEstimate {
    /// `+∞` when control fails at the time budget
    pub t_gcc: f64,
    pub resolution: f64,
    /// `(T, holds)` pairs visited by the bisection
    pub trace: Vec<(f64, bool)>,
    pub worst: Option<PhasePoint>,
    pub n_samples: usize,
    pub n_indeterminate: usize,
}

/// Bisection for the smallest control time on `(0, T_max]`. Trajectories
/// are computed once to `T_max`; the predicate "every sample is hit
/// strictly before `T`" is then evaluated on the cached hitting times.
pub fn estimate_t_gcc(
    chart: &CollarChart,
    region: &ObservationRegion,
    t_max: f64,
    resolution: f64,
    quant: Quantifier,
    settings: &CheckSettings,
) -> Result<TgccEstimate> {
    if !(t_max > 0.0 && resolution > 0.0) {
        return Err(Error::Config("T_max and resolution must be positive".into()));
    }
    let hits = hitting_times(chart, region, t_max, quant, settings)?;
    let n_ind = hits.iter().filter(|h| h.indeterminate).count();
    let holds = |t: f64| hits.iter().all(|h| h.time < t);
    let mut trace = vec![(t_max, holds(t_max))];
    let worst = hits.iter().max_by(|a, b| a.time.total_cmp(&b.time)).map(|h| h.initial);
    if !trace[0].1 {
        return Ok(TgccEstimate {
            t_gcc: f64::INFINITY,
            resolution,
            trace,
            worst,
            n_samples: hits.len(),
            n_indeterminate: n_ind,
        });
    }
    let (mut lo, mut hi) = (0.0, t_max);
    while hi - lo > resolution {
        let mid = 0.5 * (lo + hi);
        let ok = holds(mid);
        trace.push((mid, ok));
        if ok {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(TgccEstimate { t_gcc: 0.5 * (lo + hi), resolution, trace, worst, n_samples: hits.len(), n_indeterminate: n_ind })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub trials: usize,
    pub passes: usize,
    pub pass_rate: f64,
    pub failing_seeds: Vec<u64>,
    pub max_measured_w1inf: f64,
}

/// Re-runs the check at the same `T` on random Lipschitz perturbations of
/// the metric, for each size in `epsilons`.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_sweep(
    domain: &Domain,
    metric: &MetricField,
    region: &ObservationRegion,
    time: f64,
    epsilons: &[f64],
    trials: usize,
    shape: PerturbationShape,
    seed: u64,
    settings: &CheckSettings,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (i, &eps) in epsilons.iter().enumerate() {
        let mut passes = 0;
        let mut failing = Vec::new();
        let mut w: f64 = 0.0;
        for k in 0..trials {
            let s = seed.wrapping_add((i * 1_000_003 + k) as u64);
            let (pm, rep) = lipschitz_perturb(metric, domain, eps, s, shape)?;
            w = w.max(rep.measured_w1inf);
            let chart = default_chart(domain, &pm)?;
            let r = if region.is_boundary() {
                check_boundary_gcc(&chart, region, time, settings)?
            } else {
                check_interior_gcc(&chart, region, time, settings)?
            };
            if r.verdict == Verdict::Holds {
                passes += 1;
            } else {
                failing.push(s);
            }
        }
        rows.push(SweepRow {
            epsilon: eps,
            trials,
            passes,
            pass_rate: if trials == 0 { 1.0 } else { passes as f64 / trials as f64 },
            failing_seeds: failing,
            max_measured_w1inf: w,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval_chart() -> CollarChart {
        default_chart(&Domain::interval(0.0, 1.0), &MetricField::flat(1)).unwrap()
    }

    fn settings_1d() -> CheckSettings {
        CheckSettings { sampling: Sampling { nx: 200, ny: 1, n_dir: 2, margin: 1e-3, refine: false }, ..Default::default() }
    }

    #[test]
    fn interval_interior_control() {
        let ch = interval_chart();
        let omega = ObservationRegion::new(RegionShape::Interval { lo: 0.3, hi: 0.6 });
        let r = check_interior_gcc(&ch, &omega, 1.0, &settings_1d()).unwrap();
        assert_eq!(r.verdict, Verdict::Holds);
        assert!(r.max_hit_time <= 0.8 && r.max_hit_time > 0.79);
        let r = check_interior_gcc(&ch, &omega, 0.7, &settings_1d()).unwrap();
        assert_eq!(r.verdict, Verdict::Fails);
        assert!(!r.witnesses.is_empty());
    }

    #[test]
    fn interval_t_gcc() {
        let ch = interval_chart();
        let omega = ObservationRegion::new(RegionShape::Interval { lo: 0.3, hi: 0.6 });
        let est = estimate_t_gcc(&ch, &omega, 3.0, 1e-3, Quantifier::Strong, &settings_1d()).unwrap();
        assert!((est.t_gcc - 0.8).abs() < 0.01, "{}", est.t_gcc);
        // monotone along the trace
        for &(t, ok) in &est.trace {
            for &(u, ok2) in &est.trace {
                if ok && u > t {
                    assert!(ok2);
                }
            }
        }
        let gamma = ObservationRegion::new(RegionShape::BoundaryPieces { pieces: vec![0] });
        let est = estimate_t_gcc(&ch, &gamma, 3.0, 1e-3, Quantifier::Strong, &settings_1d()).unwrap();
        assert!((est.t_gcc - 2.0).abs() < 0.01, "{}", est.t_gcc);
    }

    #[test]
    fn boundary_examples() {
        let ch = interval_chart();
        let gamma = ObservationRegion::new(RegionShape::BoundaryPieces { pieces: vec![0] });
        assert_eq!(check_boundary_gcc(&ch, &gamma, 2.5, &settings_1d()).unwrap().verdict, Verdict::Holds);
        let r = check_boundary_gcc(&ch, &gamma, 1.5, &settings_1d()).unwrap();
        assert_eq!(r.verdict, Verdict::Fails);
        let w = r.witnesses[0].initial;
        assert!(w.velocity(ch.metric())[0] > 0.0 && w.x[0] < 0.5);
    }

    #[test]
    fn whole_domain_controls_instantly() {
        let ch = default_chart(&Domain::unit_square(), &MetricField::flat(2)).unwrap();
        let all = ObservationRegion::new(RegionShape::All);
        let s = CheckSettings { sampling: Sampling { nx: 6, ny: 6, n_dir: 8, margin: 1e-3, refine: false }, ..Default::default() };
        assert_eq!(check_interior_gcc(&ch, &all, 1e-3, &s).unwrap().verdict, Verdict::Holds);
    }

    #[test]
    fn square_strip_fails_with_bouncing_ball() {
        let ch = default_chart(&Domain::unit_square(), &MetricField::flat(2)).unwrap();
        let omega = ObservationRegion::new(RegionShape::Strip { axis: 0, lo: -1.0, hi: 0.3 });
        let s = CheckSettings { sampling: Sampling { nx: 10, ny: 10, n_dir: 8, margin: 1e-3, refine: false }, ..Default::default() };
        let r = check_interior_gcc(&ch, &omega, 5.0, &s).unwrap();
        assert_eq!(r.verdict, Verdict::Fails);
        let vertical = r.witnesses.iter().any(|w| {
            let v = w.initial.velocity(ch.metric());
            v[0].abs() < 1e-12 && w.initial.x[0] >= 0.3
        });
        assert!(vertical);
        // the weak check with a small dilation still misses the vertical orbit
        let weak = ObservationRegion { dilation: 0.05, ..omega };
        assert_eq!(check_weak_gcc(&ch, &weak, 5.0, &s).unwrap().verdict, Verdict::Fails);
    }

    #[test]
    fn disc_boundary_control() {
        let ch = default_chart(&Domain::unit_disc(), &MetricField::flat(2)).unwrap();
        let gamma = ObservationRegion::new(RegionShape::BoundaryAll);
        let s = CheckSettings { sampling: Sampling { nx: 8, ny: 8, n_dir: 8, margin: 1e-2, refine: false }, ..Default::default() };
        let r = check_boundary_gcc(&ch, &gamma, 2.2, &s).unwrap();
        assert_eq!(r.verdict, Verdict::Holds);
        assert!(r.max_hit_time <= 2.0);
    }

    #[test]
    fn arc_membership_wraps() {
        let d = Domain::unit_disc();
        let ind = Indicator::new(
            &ObservationRegion::new(RegionShape::BoundaryArc { piece: 0, lo: 6.0, hi: 7.0 }),
            false,
        )
        .unwrap();
        assert!(ind.contains_boundary(&d, 0, 0.5));
        assert!(!ind.contains_boundary(&d, 0, 1.0));
    }

    #[test]
    fn bad_regions_rejected() {
        let ch = interval_chart();
        let r = ObservationRegion::new(RegionShape::Interval { lo: 0.6, hi: 0.3 });
        assert!(check_interior_gcc(&ch, &r, 1.0, &settings_1d()).is_err());
        let g = ObservationRegion::new(RegionShape::BoundaryAll);
        assert!(check_interior_gcc(&ch, &g, 1.0, &settings_1d()).is_err());
    }
}
