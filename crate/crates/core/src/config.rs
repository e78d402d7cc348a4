//! TOML experiment configuration. Unknown keys are rejected, and every error
//! names the offending key and its line.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bichar::{BranchPolicy, FlowOptions, GlancingRule};
use crate::error::{Error, Result};
use crate::gcc::{ObservationRegion, Quantifier, Sampling};
use crate::geometry::{lipschitz_perturb, Domain, MetricField, MetricSpec, PerturbationShape, Shape};
use crate::linalg::Vec2;

fn flat() -> MetricSpec {
    MetricSpec::Flat
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub domain: Shape,
    #[serde(default = "flat")]
    pub metric: MetricSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<ObservationRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gcc: Option<GccSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observe: Option<ObserveSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divide: Option<DivideSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb: Option<PerturbSection>,
    #[serde(default)]
    pub output: OutputSection,
    /// overrides of numerical tolerances, see [`TOLERANCE_KEYS`]
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tolerances: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSection {
    /// `"x=0.2,0.3;dir=30deg"` (2D) or `"x=0.4;dir=-1"` (1D)
    pub init: Option<String>,
    pub time: Option<f64>,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default = "one_usize")]
    pub branches: usize,
    #[serde(default = "interior_first")]
    pub glancing_rule: GlancingRule,
}

impl Default for TraceSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn interior_first() -> GlancingRule {
    GlancingRule::InteriorFirst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GccSection {
    pub time: Option<f64>,
    #[serde(default = "strong")]
    pub quantifier: Quantifier,
    #[serde(default = "d_nx")]
    pub nx: usize,
    #[serde(default = "d_nx")]
    pub ny: usize,
    #[serde(default = "d_ndir")]
    pub n_dir: usize,
    #[serde(default = "d_margin")]
    pub margin: f64,
    #[serde(default)]
    pub refine: bool,
    #[serde(default = "one_usize")]
    pub branches: usize,
    #[serde(default)]
    pub jitter: f64,
    #[serde(default = "interior_first")]
    pub glancing_rule: GlancingRule,
    /// upper end of the `T_GCC` search
    #[serde(default = "d_tmax")]
    pub t_max: f64,
    #[serde(default = "d_res")]
    pub resolution: f64,
    #[serde(default = "d_wit")]
    pub max_witnesses: usize,
}

fn strong() -> Quantifier {
    Quantifier::Strong
}
fn d_nx() -> usize {
    40
}
fn d_ndir() -> usize {
    32
}
fn d_margin() -> f64 {
    1e-3
}
fn d_tmax() -> f64 {
    10.0
}
fn d_res() -> f64 {
    0.01
}
fn d_wit() -> usize {
    8
}

impl Default for GccSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

impl GccSection {
    pub fn sampling(&self) -> Sampling {
        Sampling { nx: self.nx, ny: self.ny, n_dir: self.n_dir, margin: self.margin, refine: self.refine }
    }

    pub fn policy(&self, seed: u64) -> BranchPolicy {
        BranchPolicy { n_branches: self.branches, jitter: self.jitter, glancing_rule: self.glancing_rule, rng_seed: seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    #[serde(default = "d_resolution")]
    pub resolution: usize,
    #[serde(default = "d_count")]
    pub count: usize,
}

fn d_resolution() -> usize {
    200
}
fn d_count() -> usize {
    20
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self { resolution: d_resolution(), count: d_count() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserveSection {
    #[serde(default = "d_resolution")]
    pub resolution: usize,
    #[serde(default = "d_obs_count")]
    pub count: usize,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_rho")]
    pub rho: f64,
    #[serde(default = "d_kmin")]
    pub k_min: i32,
    #[serde(default = "d_kmax")]
    pub k_max: i32,
    pub time: Option<f64>,
}

fn d_obs_count() -> usize {
    200
}
fn d_alpha() -> f64 {
    0.5
}
fn d_rho() -> f64 {
    1.5
}
fn d_kmin() -> i32 {
    3
}
fn d_kmax() -> i32 {
    8
}

impl Default for ObserveSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureExperiment {
    /// pairings of a wave packet against a bump symbol
    Packet,
    /// interior transport residual of a free packet
    Interior,
    /// boundary jump on the half-line
    Jump,
    /// isochrone block matrix and forward-branch mass
    Isochrone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSection {
    #[serde(default = "packet")]
    pub experiment: MeasureExperiment,
    /// the ladder `h = 2^{-k}`
    #[serde(default = "d_hk")]
    pub h_exponents: Vec<i32>,
    #[serde(default = "d_x0")]
    pub x0: f64,
    #[serde(default = "one")]
    pub xi0: f64,
    #[serde(default = "d_sigma")]
    pub sigma: f64,
    #[serde(default = "d_grid")]
    pub grid: usize,
}

fn packet() -> MeasureExperiment {
    MeasureExperiment::Packet
}
fn d_hk() -> Vec<i32> {
    vec![5, 6, 7]
}
fn d_x0() -> f64 {
    0.5
}
fn d_sigma() -> f64 {
    0.7
}
fn d_grid() -> usize {
    512
}

impl Default for MeasureSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivideSection {
    /// symbol `b(y, eta, zeta)`
    pub b: String,
    /// polynomial `p(y, eta, zeta)`, quadratic in `zeta`
    pub p: String,
    #[serde(default = "d_zero_list")]
    pub y: Vec<f64>,
    pub eta: Vec<f64>,
    #[serde(default)]
    pub zeta: Vec<f64>,
}

fn d_zero_list() -> Vec<f64> {
    vec![0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSection {
    pub epsilons: Vec<f64>,
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default = "conformal")]
    pub shape: PerturbationShape,
    pub time: Option<f64>,
}

fn d_trials() -> usize {
    20
}
fn conformal() -> PerturbationShape {
    PerturbationShape::Conformal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "d_dir")]
    pub dir: String,
    #[serde(default = "d_prefix")]
    pub prefix: String,
}

fn d_dir() -> String {
    "out".into()
}
fn d_prefix() -> String {
    "run".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: d_dir(), prefix: d_prefix() }
    }
}

/// Keys accepted in `[tolerances]`; they override [`FlowOptions`] fields.
pub const TOLERANCE_KEYS: [&str; 5] = ["rtol", "atol", "tol_event", "h_max", "glide_step"];

impl ExperimentConfig {
    pub fn parse(src: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate(src)?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        Self::parse(&src).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Re-validates a configuration built or modified in code; messages
    /// name the key but carry no line number.
    pub fn check(&self) -> Result<()> {
        self.validate("")
    }

    fn validate(&self, src: &str) -> Result<()> {
        let bad = |section: &str, key: &str, msg: String| Error::Config(key_message(src, section, key, &msg));
        Domain::new(self.domain.clone()).map_err(|e| bad("domain", "kind", e.to_string()))?;
        for (k, v) in &self.tolerances {
            if !TOLERANCE_KEYS.contains(&k.as_str()) {
                return Err(bad("tolerances", k, format!("unknown tolerance, expected one of {TOLERANCE_KEYS:?}")));
            }
            if !(v.is_finite() && *v > 0.0) {
                return Err(bad("tolerances", k, format!("tolerance must be positive, got {v}")));
            }
        }
        if let Some(g) = &self.gcc {
            if let Some(t) = g.time {
                if !(t > 0.0) {
                    return Err(bad("gcc", "time", format!("must be positive, got {t}")));
                }
            }
            if g.n_dir == 0 || g.nx == 0 {
                return Err(bad("gcc", if g.n_dir == 0 { "n_dir" } else { "nx" }, "must be positive".into()));
            }
            if !(g.t_max > 0.0) {
                return Err(bad("gcc", "t_max", format!("must be positive, got {}", g.t_max)));
            }
        }
        if let Some(s) = &self.spectrum {
            if s.resolution < 4 {
                return Err(bad("spectrum", "resolution", format!("must be at least 4, got {}", s.resolution)));
            }
        }
        if let Some(o) = &self.observe {
            if o.k_min > o.k_max {
                return Err(bad("observe", "k_min", format!("k_min = {} exceeds k_max = {}", o.k_min, o.k_max)));
            }
        }
        if let Some(m) = &self.measure {
            if m.h_exponents.is_empty() || m.h_exponents.iter().any(|&k| !(1..=14).contains(&k)) {
                return Err(bad("measure", "h_exponents", "exponents must be nonempty and within 1..=14".into()));
            }
            if !m.grid.is_power_of_two() {
                return Err(bad("measure", "grid", format!("must be a power of two, got {}", m.grid)));
            }
        }
        if let Some(p) = &self.perturb {
            if p.epsilons.iter().any(|e| !(*e >= 0.0)) {
                return Err(bad("perturb", "epsilons", "must be nonnegative".into()));
            }
        }
        if let Some(t) = &self.trace {
            if let Some(s) = &t.init {
                parse_init(s, self.domain_dim()).map_err(|e| bad("trace", "init", e.to_string()))?;
            }
        }
        if let Some(r) = &self.region {
            r.validate().map_err(|e| bad("region", "shape", e.to_string()))?;
        }
        Ok(())
    }

    fn domain_dim(&self) -> usize {
        if matches!(self.domain, Shape::Interval { .. }) {
            1
        } else {
            2
        }
    }

    pub fn build_domain(&self) -> Result<Domain> {
        Domain::new(self.domain.clone())
    }

    /// The metric on `domain`; perturbed metrics are drawn here.
    pub fn build_metric(&self, domain: &Domain) -> Result<MetricField> {
        build_metric(&self.metric, domain)
    }

    pub fn flow_options(&self) -> FlowOptions {
        let mut o = FlowOptions::default();
        for (k, &v) in &self.tolerances {
            match k.as_str() {
                "rtol" => o.rtol = v,
                "atol" => o.atol = v,
                "tol_event" => o.tol_event = v,
                "h_max" => o.h_max = v,
                "glide_step" => o.glide_step = v,
                _ => {}
            }
        }
        o
    }

    pub fn region(&self) -> Result<&ObservationRegion> {
        self.region.as_ref().ok_or_else(|| Error::Config("missing [region] section".into()))
    }
}

fn build_metric(spec: &MetricSpec, domain: &Domain) -> Result<MetricField> {
    match spec {
        MetricSpec::Perturbed { base, epsilon, seed, conformal } => {
            let b = build_metric(base, domain)?;
            let shape = if *conformal { PerturbationShape::Conformal } else { PerturbationShape::General };
            Ok(lipschitz_perturb(&b, domain, *epsilon, *seed, shape)?.0)
        }
        other => MetricField::from_spec(domain.dim(), other),
    }
}

/// Finds the line of `key` inside `[section]` (or the section header).
pub fn locate(src: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, line) in src.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            let inner = t.trim_start_matches('[');
            current = inner[..inner.find(']').unwrap_or(inner.len())].trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        let in_section = current == section || current.starts_with(&format!("{section}."));
        if in_section || (section.is_empty() && current.is_empty()) {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key || k.trim().trim_matches('"') == key {
                    return Some(i + 1);
                }
            }
        }
    }
    // inline tables such as `region = { ... }`
    if header.is_none() {
        for (i, line) in src.lines().enumerate() {
            if let Some((k, _)) = line.trim().split_once('=') {
                if k.trim() == section {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

fn key_message(src: &str, section: &str, key: &str, msg: &str) -> String {
    let name = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
    match locate(src, section, key) {
        Some(line) => format!("invalid key `{name}` at line {line}: {msg}"),
        None => format!("invalid key `{name}`: {msg}"),
    }
}

/// Parses `"x=0.2,0.3;dir=30deg"` into a position and a unit direction.
/// Angles accept `deg` or radians; in one dimension `dir` is a signed
/// number.
pub fn parse_init(s: &str, dim: usize) -> Result<(Vec2, Vec2)> {
    let mut x = None;
    let mut dir = None;
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value in '{part}'")))?;
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| Error::Config(format!("'{t}' is not a number in '{part}'")));
        match k.trim() {
            "x" => {
                let c: Vec<&str> = v.split(',').collect();
                if c.len() != dim {
                    return Err(Error::Config(format!("x needs {dim} coordinate(s), got '{v}'")));
                }
                x = Some(if dim == 1 { [num(c[0])?, 0.0] } else { [num(c[0])?, num(c[1])?] });
            }
            "dir" => {
                let v = v.trim();
                if dim == 1 {
                    let d = num(v)?;
                    if d == 0.0 {
                        return Err(Error::Config("dir must be nonzero".into()));
                    }
                    dir = Some([d.signum(), 0.0]);
                } else {
                    let a = match v.strip_suffix("deg") {
                        Some(d) => num(d)?.to_radians(),
                        None => num(v)?,
                    };
                    dir = Some([a.cos(), a.sin()]);
                }
            }
            other => return Err(Error::Config(format!("unknown init key '{other}', expected x or dir"))),
        }
    }
    match (x, dir) {
        (Some(x), Some(d)) => Ok((x, d)),
        _ => Err(Error::Config(format!("init '{s}' needs both x and dir"))),
    }
}
