//! `gcc-kit`: batch front end for ray tracing, geometric control checks,
//! spectral observability sweeps and semiclassical diagnostics.
//!
//! Every run reads a TOML experiment file, applies command-line overrides,
//! and writes a JSON report (embedding the resolved configuration) next to
//! CSV tables and SVG plots. Exit status is 0 on success, 2 when a control
//! verdict fails, and 1 on errors.

mod commands;
mod measure;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use gcc_core::config::ExperimentConfig;
use gcc_core::export::{read_report, Report};
use gcc_core::gcc::Verdict;
use serde_json::Value;

#[derive(Parser, Debug)]
#[command(name = "gcc-kit", version, about = "Geometric control and wave observability toolkit", args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Re-run the experiment recorded in a JSON report and compare results
    #[arg(long, value_name = "REPORT")]
    replay: Option<PathBuf>,

    /// Worker threads for per-sample tasks (default: all cores)
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// Output directory, overriding `[output] dir`
    #[arg(long, short, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Trace generalized bicharacteristics from one initial point
    Trace(RunArgs),
    /// Check geometric control at a fixed time
    Gcc(RunArgs),
    /// Estimate the smallest control time by bisection
    Tgcc(RunArgs),
    /// Observability constants over dyadic frequency bands
    Observe(RunArgs),
    /// Dirichlet eigenvalues of the domain
    Spectrum(RunArgs),
    /// Semiclassical measure experiments on wave packets
    Measure(RunArgs),
    /// Euclidean division of a symbol by a quadratic polynomial
    Divide(RunArgs),
    /// Stability of the control verdict under metric perturbations
    Perturb(RunArgs),
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Experiment file (TOML)
    #[arg(long, short, value_name = "FILE")]
    config: PathBuf,
    /// Observation region as an inline TOML table, e.g.
    /// '{ kind = "interval", lo = 0.3, hi = 0.6 }'
    #[arg(long, value_name = "TABLE")]
    region: Option<String>,
    /// Time horizon (trace, gcc, observe, perturb) or search budget (tgcc)
    #[arg(long, value_name = "T")]
    time: Option<f64>,
    /// Number of continuations kept at ambiguous boundary contacts
    #[arg(long, value_name = "N")]
    branches: Option<usize>,
    /// Spatial sampling (gcc, tgcc, perturb) or mesh resolution (spectrum, observe, measure)
    #[arg(long, value_name = "N")]
    grid: Option<usize>,
    /// Number of eigenpairs (spectrum, observe)
    #[arg(long, value_name = "N")]
    count: Option<usize>,
    /// Initial point for trace, e.g. "x=0,0;dir=30deg" or "x=0.4;dir=-1"
    #[arg(long, value_name = "SPEC")]
    init: Option<String>,
}

impl Command {
    fn split(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Trace(a) => ("trace", a),
            Command::Gcc(a) => ("gcc", a),
            Command::Tgcc(a) => ("tgcc", a),
            Command::Observe(a) => ("observe", a),
            Command::Spectrum(a) => ("spectrum", a),
            Command::Measure(a) => ("measure", a),
            Command::Divide(a) => ("divide", a),
            Command::Perturb(a) => ("perturb", a),
        }
    }
}

fn overrides(a: &RunArgs) -> anyhow::Result<BTreeMap<String, Value>> {
    let mut o = BTreeMap::new();
    if let Some(r) = &a.region {
        let shape: toml::Value = toml::from_str(&format!("shape = {r}")).context("--region is not an inline TOML table")?;
        o.insert("region".into(), serde_json::to_value(&shape["shape"])?);
    }
    if let Some(t) = a.time {
        o.insert("time".into(), t.into());
    }
    if let Some(b) = a.branches {
        o.insert("branches".into(), b.into());
    }
    if let Some(g) = a.grid {
        o.insert("grid".into(), g.into());
    }
    if let Some(c) = a.count {
        o.insert("count".into(), c.into());
    }
    if let Some(i) = &a.init {
        o.insert("init".into(), i.clone().into());
    }
    Ok(o)
}

fn exit_for(verdict: Option<Verdict>) -> ExitCode {
    match verdict {
        Some(Verdict::Fails) => ExitCode::from(2),
        _ => ExitCode::SUCCESS,
    }
}

fn run_command(cli: &Cli, cmd: &Command) -> anyhow::Result<ExitCode> {
    let (name, args) = cmd.split();
    let cfg = ExperimentConfig::from_path(&args.config)?;
    let ov = overrides(args)?;
    let resolved = commands::apply_overrides(name, cfg, &ov)?;
    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(&resolved.output.dir));
    let prefix = resolved.output.prefix.clone();
    let outcome = commands::execute(name, &resolved, &out_dir, &prefix)?;
    let report = Report::new(name, &resolved, ov, outcome.result);
    let path = out_dir.join(format!("{prefix}_{name}.json"));
    report.write(&path)?;
    println!("{}", outcome.summary);
    println!("report: {}", path.display());
    for a in &outcome.artifacts {
        println!("wrote: {}", a.display());
    }
    Ok(exit_for(outcome.verdict))
}

fn replay(cli: &Cli, path: &std::path::Path) -> anyhow::Result<ExitCode> {
    let old: Report<Value> = read_report(path)?;
    let name = old.command.as_str();
    if !commands::COMMANDS.contains(&name) {
        bail!("{}: unknown command '{name}' in report", path.display());
    }
    let out_dir = match &cli.out {
        Some(d) => d.clone(),
        None => path.parent().map(PathBuf::from).unwrap_or_default(),
    };
    let prefix = format!("{}_replay", old.config.output.prefix);
    let outcome = commands::execute(name, &old.config, &out_dir, &prefix)?;
    // compare through the same text form the report was stored in
    let fresh: Value = serde_json::from_str(&serde_json::to_string(&outcome.result)?)?;
    println!("{}", outcome.summary);
    if fresh != old.result {
        eprintln!("replay of {} differs from the recorded result", path.display());
        return Ok(ExitCode::from(1));
    }
    println!("replay of {} reproduces the recorded result", path.display());
    Ok(exit_for(outcome.verdict))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let r = match (&cli.replay, &cli.command) {
        (Some(p), _) => replay(&cli, p),
        (None, Some(cmd)) => run_command(&cli, cmd),
        (None, None) => {
            eprintln!("error: a subcommand or --replay is required (see --help)");
            return ExitCode::from(1);
        }
    };
    match r {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn region_override_parses_inline_table() {
        let a = RunArgs {
            config: "x.toml".into(),
            region: Some(r#"{ kind = "interval", lo = 0.3, hi = 0.6 }"#.into()),
            time: Some(2.0),
            branches: None,
            grid: None,
            count: None,
            init: None,
        };
        let o = overrides(&a).unwrap();
        assert_eq!(o["region"]["kind"], "interval");
        assert_eq!(o["time"], 2.0);
    }
}
