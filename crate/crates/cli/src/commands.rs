//! Subcommand bodies. Each returns a serializable result plus the artifact
//! files it wrote; the caller wraps the result in a report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use gcc_core::bichar::{advance_generalized, BranchPolicy, GeneralizedTrajectory, SampleTag};
use gcc_core::config::{parse_init, ExperimentConfig, TraceSection};
use gcc_core::export::{color, fmt, write_csv, SvgPlot};
use gcc_core::expr::Expr;
use gcc_core::gcc::{
    check_boundary_gcc, check_interior_gcc, check_weak_gcc, default_chart, estimate_t_gcc, perturbation_sweep,
    CheckSettings, ObservationRegion, Quantifier, RegionShape, Verdict,
};
use gcc_core::semiclassical::{euclidean_divide, DivisionSymbolFn, QuadraticInZeta, RootRegime};
use gcc_core::wave::{assemble_and_eig, observability_sweep, observation_window, DyadicSpec};
use gcc_core::{Complex64, Domain, MetricField, PhasePoint};
use serde::Serialize;
use serde_json::Value;

pub const COMMANDS: [&str; 8] = ["trace", "gcc", "tgcc", "observe", "spectrum", "measure", "divide", "perturb"];

pub struct Outcome {
    pub result: Value,
    pub verdict: Option<Verdict>,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

fn unused(flag: &str, cmd: &str) -> anyhow::Error {
    anyhow!("--{flag} has no effect on `{cmd}`")
}

/// Folds command-line overrides into the configuration and re-validates.
pub fn apply_overrides(cmd: &str, mut cfg: ExperimentConfig, ov: &BTreeMap<String, Value>) -> anyhow::Result<ExperimentConfig> {
    for (key, v) in ov {
        match key.as_str() {
            "region" => {
                let shape: RegionShape = serde_json::from_value(v.clone()).context("--region")?;
                let dilation = cfg.region.as_ref().map_or(0.0, |r| r.dilation);
                cfg.region = Some(ObservationRegion::new(shape).with_dilation(dilation));
            }
            "time" => {
                let t = v.as_f64().unwrap_or(f64::NAN);
                match cmd {
                    "trace" => cfg.trace.get_or_insert_with(TraceSection::default).time = Some(t),
                    "gcc" => cfg.gcc.get_or_insert_with(Default::default).time = Some(t),
                    "tgcc" => cfg.gcc.get_or_insert_with(Default::default).t_max = t,
                    "observe" => cfg.observe.get_or_insert_with(Default::default).time = Some(t),
                    "perturb" => {
                        cfg.perturb.as_mut().ok_or_else(|| anyhow!("missing [perturb] section"))?.time = Some(t);
                    }
                    _ => return Err(unused("time", cmd)),
                }
            }
            "branches" => {
                let b = v.as_u64().unwrap_or(0) as usize;
                match cmd {
                    "trace" => cfg.trace.get_or_insert_with(TraceSection::default).branches = b,
                    "gcc" | "tgcc" | "perturb" => cfg.gcc.get_or_insert_with(Default::default).branches = b,
                    _ => return Err(unused("branches", cmd)),
                }
            }
            "grid" => {
                let g = v.as_u64().unwrap_or(0) as usize;
                match cmd {
                    "gcc" | "tgcc" | "perturb" => {
                        let s = cfg.gcc.get_or_insert_with(Default::default);
                        s.nx = g;
                        s.ny = g;
                    }
                    "spectrum" => cfg.spectrum.get_or_insert_with(Default::default).resolution = g,
                    "observe" => cfg.observe.get_or_insert_with(Default::default).resolution = g,
                    "measure" => cfg.measure.get_or_insert_with(Default::default).grid = g,
                    _ => return Err(unused("grid", cmd)),
                }
            }
            "count" => {
                let c = v.as_u64().unwrap_or(0) as usize;
                match cmd {
                    "spectrum" => cfg.spectrum.get_or_insert_with(Default::default).count = c,
                    "observe" => cfg.observe.get_or_insert_with(Default::default).count = c,
                    _ => return Err(unused("count", cmd)),
                }
            }
            "init" => match cmd {
                "trace" => cfg.trace.get_or_insert_with(TraceSection::default).init = v.as_str().map(String::from),
                _ => return Err(unused("init", cmd)),
            },
            other => bail!("unknown override '{other}'"),
        }
    }
    cfg.check()?;
    Ok(cfg)
}

pub fn execute(cmd: &str, cfg: &ExperimentConfig, dir: &Path, prefix: &str) -> anyhow::Result<Outcome> {
    let domain = cfg.build_domain()?;
    let metric = cfg.build_metric(&domain)?;
    let ctx = Ctx { cfg, domain, metric, dir, prefix, cmd };
    match cmd {
        "trace" => trace(&ctx),
        "gcc" => gcc(&ctx),
        "tgcc" => tgcc(&ctx),
        "observe" => observe(&ctx),
        "spectrum" => spectrum(&ctx),
        "measure" => crate::measure::run(&ctx),
        "divide" => divide(&ctx),
        "perturb" => perturb(&ctx),
        other => bail!("unknown command '{other}'"),
    }
}

pub struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub domain: Domain,
    pub metric: MetricField,
    pub dir: &'a Path,
    pub prefix: &'a str,
    pub cmd: &'a str,
}

impl Ctx<'_> {
    pub fn path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}_{}{suffix}", self.prefix, self.cmd))
    }
}

pub fn to_value<T: Serialize>(v: &T) -> anyhow::Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn tag_name(t: SampleTag) -> String {
    serde_json::to_value(t).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_else(|| format!("{t:?}"))
}

fn trajectory_rows(id: &str, trs: &[GeneralizedTrajectory]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for tr in trs {
        for s in tr.samples() {
            let r = s.rho;
            rows.push(vec![
                id.to_string(),
                tr.branch_id.to_string(),
                fmt(s.s),
                fmt(r.t),
                fmt(r.x[0]),
                fmt(r.x[1]),
                fmt(r.tau),
                fmt(r.xi[0]),
                fmt(r.xi[1]),
                tag_name(s.tag),
            ]);
        }
    }
    rows
}

const TRAJ_HEADER: [&str; 10] = ["ray", "branch", "s", "t", "x", "y", "tau", "xi", "eta", "tag"];

/// Spatial path of a trajectory; in one dimension time is drawn vertically.
fn path_points(tr: &GeneralizedTrajectory, dim: usize) -> Vec<[f64; 2]> {
    tr.samples().map(|s| if dim == 1 { [s.rho.x[0], s.rho.t] } else { s.rho.x }).collect()
}

fn plot_for(domain: &Domain, trs: &[&GeneralizedTrajectory]) -> SvgPlot {
    if domain.dim() == 1 {
        let (lo, hi) = domain.bbox();
        let t1 = trs.iter().map(|t| t.t_end).fold(0.0, f64::max).max(1e-9);
        let mut p = SvgPlot::new([lo[0], 0.0], [hi[0], t1], 480.0);
        p.polyline(&[[lo[0], 0.0], [lo[0], t1]], "#444", 1.5);
        p.polyline(&[[hi[0], 0.0], [hi[0], t1]], "#444", 1.5);
        p
    } else {
        let mut p = SvgPlot::for_domain(domain, 480.0);
        p.outline(domain);
        p
    }
}

#[derive(Serialize)]
struct BranchSummary {
    branch_id: usize,
    t_end: f64,
    n_reflections: usize,
    reflection_times: Vec<f64>,
    end: Option<PhasePoint>,
    max_p_drift: f64,
    truncated: Option<String>,
}

#[derive(Serialize)]
struct TraceResult {
    initial: PhasePoint,
    time: f64,
    branches: Vec<BranchSummary>,
}

fn trace(c: &Ctx) -> anyhow::Result<Outcome> {
    let sec = c.cfg.trace.clone().unwrap_or_default();
    let init = sec.init.as_deref().ok_or_else(|| anyhow!("no initial point: set trace.init or pass --init"))?;
    let time = sec.time.ok_or_else(|| anyhow!("no time horizon: set trace.time or pass --time"))?;
    let (x, dir) = parse_init(init, c.domain.dim())?;
    let chart = default_chart(&c.domain, &c.metric)?;
    let rho = PhasePoint::from_velocity(&c.metric, 0.0, x, dir, sec.tau);
    let policy = BranchPolicy { n_branches: sec.branches, glancing_rule: sec.glancing_rule, rng_seed: c.cfg.seed, ..Default::default() };
    let trs = advance_generalized(&chart, &rho, time, &policy, &c.cfg.flow_options())?;

    let csv = c.path(".csv");
    write_csv(&csv, &TRAJ_HEADER, trajectory_rows("0", &trs))?;
    let mut plot = plot_for(&c.domain, &trs.iter().collect::<Vec<_>>());
    for (i, tr) in trs.iter().enumerate() {
        plot.polyline(&path_points(tr, c.domain.dim()), color(i), 1.2);
        for j in &tr.jumps {
            let p = if c.domain.dim() == 1 { [j.before.x[0], j.t] } else { j.before.x };
            plot.point(p, 2.5, color(i));
        }
    }
    let svg = c.path(".svg");
    plot.save(&svg)?;

    let branches: Vec<BranchSummary> = trs
        .iter()
        .map(|tr| BranchSummary {
            branch_id: tr.branch_id,
            t_end: tr.t_end,
            n_reflections: tr.jumps.len(),
            reflection_times: tr.jumps.iter().map(|j| j.t).collect(),
            end: tr.last().map(|s| s.rho),
            max_p_drift: tr.max_p_drift(),
            truncated: tr.truncated.clone(),
        })
        .collect();
    let summary = format!(
        "trace: {} branch(es), {} reflection(s) on the first, t_end = {}",
        branches.len(),
        branches[0].n_reflections,
        branches[0].t_end
    );
    Ok(Outcome {
        result: to_value(&TraceResult { initial: rho, time, branches })?,
        verdict: None,
        summary,
        artifacts: vec![csv, svg],
    })
}

fn settings(cfg: &ExperimentConfig) -> CheckSettings {
    let g = cfg.gcc.clone().unwrap_or_default();
    CheckSettings { sampling: g.sampling(), policy: g.policy(cfg.seed), flow: cfg.flow_options(), max_witnesses: g.max_witnesses }
}

fn quantifier(cfg: &ExperimentConfig) -> Quantifier {
    cfg.gcc.as_ref().map_or(Quantifier::Strong, |g| g.quantifier)
}

fn gcc(c: &Ctx) -> anyhow::Result<Outcome> {
    let region = c.cfg.region()?;
    let time = c
        .cfg
        .gcc
        .as_ref()
        .and_then(|g| g.time)
        .ok_or_else(|| anyhow!("no control time: set gcc.time or pass --time"))?;
    let chart = default_chart(&c.domain, &c.metric)?;
    let s = settings(c.cfg);
    let rep = match quantifier(c.cfg) {
        Quantifier::Weak => check_weak_gcc(&chart, region, time, &s)?,
        Quantifier::Strong if region.is_boundary() => check_boundary_gcc(&chart, region, time, &s)?,
        Quantifier::Strong => check_interior_gcc(&chart, region, time, &s)?,
    };

    let wcsv = c.dir.join(format!("{}_gcc_witnesses.csv", c.prefix));
    let rows = rep
        .witnesses
        .iter()
        .enumerate()
        .flat_map(|(i, w)| trajectory_rows(&i.to_string(), &w.trajectories))
        .collect::<Vec<_>>();
    write_csv(&wcsv, &TRAJ_HEADER, rows)?;
    let all: Vec<&GeneralizedTrajectory> = rep.witnesses.iter().flat_map(|w| &w.trajectories).collect();
    let mut plot = plot_for(&c.domain, &all);
    for (i, w) in rep.witnesses.iter().enumerate() {
        for tr in &w.trajectories {
            plot.polyline(&path_points(tr, c.domain.dim()), color(i), 1.2);
        }
    }
    let svg = c.dir.join(format!("{}_gcc_witnesses.svg", c.prefix));
    plot.save(&svg)?;

    let summary = format!(
        "gcc: {:?} at T = {time} ({} of {} samples controlled, {} indeterminate, {} witness(es))",
        rep.verdict,
        rep.n_pass,
        rep.n_samples,
        rep.n_indeterminate,
        rep.witnesses.len()
    );
    Ok(Outcome { verdict: Some(rep.verdict), result: to_value(&rep)?, summary, artifacts: vec![wcsv, svg] })
}

fn tgcc(c: &Ctx) -> anyhow::Result<Outcome> {
    let region = c.cfg.region()?;
    let g = c.cfg.gcc.clone().unwrap_or_default();
    let chart = default_chart(&c.domain, &c.metric)?;
    let est = estimate_t_gcc(&chart, region, g.t_max, g.resolution, g.quantifier, &settings(c.cfg))?;
    let csv = c.path(".csv");
    write_csv(&csv, &["T", "holds"], est.trace.iter().map(|(t, h)| vec![fmt(*t), h.to_string()]))?;
    let verdict = if est.t_gcc.is_finite() { Verdict::Holds } else { Verdict::Fails };
    let summary = if est.t_gcc.is_finite() {
        format!("tgcc: T_GCC ≈ {:.6} (± {})", est.t_gcc, 0.5 * est.resolution)
    } else {
        format!("tgcc: no control within T_max = {}", g.t_max)
    };
    Ok(Outcome { result: to_value(&est)?, verdict: Some(verdict), summary, artifacts: vec![csv] })
}

fn spectrum(c: &Ctx) -> anyhow::Result<Outcome> {
    let s = c.cfg.spectrum.clone().unwrap_or_default();
    let b = assemble_and_eig(&c.domain, &c.metric, s.resolution, s.count)?;
    let csv = c.path(".csv");
    write_csv(
        &csv,
        &["index", "lambda", "omega"],
        b.lambdas.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), fmt(*l), fmt(l.sqrt())]),
    )?;
    #[derive(Serialize)]
    struct R {
        method: String,
        resolution: usize,
        complete: bool,
        lambdas: Vec<f64>,
    }
    let summary = format!("spectrum: {} eigenvalues, λ₁ = {:.8}", b.lambdas.len(), b.lambdas.first().copied().unwrap_or(f64::NAN));
    Ok(Outcome {
        result: to_value(&R { method: format!("{:?}", b.method), resolution: b.resolution, complete: b.complete, lambdas: b.lambdas })?,
        verdict: None,
        summary,
        artifacts: vec![csv],
    })
}

fn observe(c: &Ctx) -> anyhow::Result<Outcome> {
    let o = c.cfg.observe.clone().unwrap_or_default();
    let region = c.cfg.region()?;
    let time = o.time.ok_or_else(|| anyhow!("no observation time: set observe.time or pass --time"))?;
    let spec = DyadicSpec::new(o.alpha, o.rho)?;
    let b = assemble_and_eig(&c.domain, &c.metric, o.resolution, o.count)?;
    let rows = observability_sweep(&b, &spec, o.k_min..=o.k_max, region, observation_window(time), &c.domain)?;
    let csv = c.path(".csv");
    write_csv(
        &csv,
        &["k", "h", "n_modes", "lambda_min", "C"],
        rows.iter().map(|r| vec![r.k.to_string(), fmt(r.h), r.n_modes.to_string(), fmt(r.lambda_min), fmt(r.c)]),
    )?;
    let mut artifacts = vec![csv];
    let pts: Vec<[f64; 2]> = rows.iter().filter(|r| r.c.is_finite()).map(|r| [r.k as f64, r.c.log10()]).collect();
    if pts.len() >= 2 {
        let (ylo, yhi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p[1]), b.max(p[1])));
        let mut plot = SvgPlot::new([pts[0][0], ylo.min(0.0)], [pts[pts.len() - 1][0], yhi.max(ylo + 1.0)], 480.0);
        plot.polyline(&pts, color(0), 1.5);
        for p in &pts {
            plot.point(*p, 3.0, color(0));
        }
        let svg = c.path(".svg");
        plot.save(&svg)?;
        artifacts.push(svg);
    }
    let cs: Vec<String> = rows.iter().map(|r| format!("{}:{:.3e}", r.k, r.c)).collect();
    Ok(Outcome { result: to_value(&rows)?, verdict: None, summary: format!("observe: C(k) = {}", cs.join(" ")), artifacts })
}

#[derive(Serialize)]
struct DivisionRow {
    y: f64,
    eta: f64,
    regime: RootRegime,
    roots: Option<[Complex64; 2]>,
    b0: Option<Complex64>,
    b1: Option<Complex64>,
    max_residual: Option<f64>,
    note: Option<String>,
}

fn divide(c: &Ctx) -> anyhow::Result<Outcome> {
    let d = c.cfg.divide.clone().ok_or_else(|| anyhow!("missing [divide] section"))?;
    let p = QuadraticInZeta::from_expr(&d.p)?;
    let e = Arc::new(Expr::parse(&d.b, &["y", "eta", "zeta"])?);
    let eb = e.clone();
    // the symbol is real-analytic in ζ but the expression evaluates on reals only
    let b: DivisionSymbolFn = Arc::new(move |y, eta, z: Complex64| {
        if z.im == 0.0 {
            Complex64::new(eb.eval(&[y, eta, z.re]), 0.0)
        } else {
            Complex64::new(f64::NAN, f64::NAN)
        }
    });
    let div = euclidean_divide(b, p);
    let zetas = if d.zeta.is_empty() { (0..=12).map(|i| -3.0 + 0.5 * i as f64).collect() } else { d.zeta.clone() };
    let mut rows = Vec::new();
    for &y in &d.y {
        for &eta in &d.eta {
            let regime = div.regime(y, eta)?;
            if regime == RootRegime::Elliptic {
                rows.push(DivisionRow {
                    y,
                    eta,
                    regime,
                    roots: None,
                    b0: None,
                    b1: None,
                    max_residual: None,
                    note: Some("complex roots: the symbol expression is evaluated on real ζ only".into()),
                });
                continue;
            }
            let (zp, zm) = div.roots(y, eta)?;
            let mut worst: f64 = 0.0;
            for &z in &zetas {
                let r = div.residual(y, eta, Complex64::new(z, 0.0))?;
                worst = worst.max(r.norm());
            }
            rows.push(DivisionRow {
                y,
                eta,
                regime,
                roots: Some([zp, zm]),
                b0: Some(div.b0(y, eta)?),
                b1: Some(div.b1(y, eta)?),
                max_residual: Some(worst),
                note: None,
            });
        }
    }
    let csv = c.path(".csv");
    let opt = |v: Option<Complex64>, im: bool| v.map(|z| fmt(if im { z.im } else { z.re })).unwrap_or_default();
    write_csv(
        &csv,
        &["y", "eta", "regime", "zeta_plus", "zeta_minus", "b0_re", "b0_im", "b1_re", "b1_im", "max_residual"],
        rows.iter().map(|r| {
            vec![
                fmt(r.y),
                fmt(r.eta),
                format!("{:?}", r.regime),
                r.roots.map(|z| fmt(z[0].re)).unwrap_or_default(),
                r.roots.map(|z| fmt(z[1].re)).unwrap_or_default(),
                opt(r.b0, false),
                opt(r.b0, true),
                opt(r.b1, false),
                opt(r.b1, true),
                r.max_residual.map(fmt).unwrap_or_default(),
            ]
        }),
    )?;
    let worst = rows.iter().filter_map(|r| r.max_residual).fold(0.0, f64::max);
    let skipped = rows.iter().filter(|r| r.max_residual.is_none()).count();
    let summary = format!("divide: {} point(s), max residual {worst:.3e}, {skipped} elliptic point(s) skipped", rows.len());
    Ok(Outcome { result: to_value(&rows)?, verdict: None, summary, artifacts: vec![csv] })
}

fn perturb(c: &Ctx) -> anyhow::Result<Outcome> {
    let p = c.cfg.perturb.clone().ok_or_else(|| anyhow!("missing [perturb] section"))?;
    let region = c.cfg.region()?;
    let time = p
        .time
        .or_else(|| c.cfg.gcc.as_ref().and_then(|g| g.time))
        .ok_or_else(|| anyhow!("no control time: set perturb.time, gcc.time or pass --time"))?;
    let rows = perturbation_sweep(&c.domain, &c.metric, region, time, &p.epsilons, p.trials, p.shape, c.cfg.seed, &settings(c.cfg))?;
    let csv = c.path(".csv");
    write_csv(
        &csv,
        &["epsilon", "trials", "passes", "pass_rate", "max_w1inf"],
        rows.iter().map(|r| vec![fmt(r.epsilon), r.trials.to_string(), r.passes.to_string(), fmt(r.pass_rate), fmt(r.max_measured_w1inf)]),
    )?;
    let rates: Vec<String> = rows.iter().map(|r| format!("ε={}: {:.2}", r.epsilon, r.pass_rate)).collect();
    Ok(Outcome { result: to_value(&rows)?, verdict: None, summary: format!("perturb: pass rates {}", rates.join(", ")), artifacts: vec![csv] })
}
