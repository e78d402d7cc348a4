//! Report artifacts: JSON envelopes embedding the resolved configuration,
//! CSV tables and standalone SVG plots.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use svg::node::element::{Circle, Group, Polyline, Rectangle};
use svg::Document;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::linalg::Vec2;

/// A run report. Everything except `generated_unix` is a deterministic
/// function of the configuration, the command and its overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report<T> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub generated_unix: u64,
    pub config: ExperimentConfig,
    /// command-line values that override the configuration
    pub overrides: BTreeMap<String, serde_json::Value>,
    pub result: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &str, config: &ExperimentConfig, overrides: BTreeMap<String, serde_json::Value>, result: T) -> Self {
        let generated_unix =
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self {
            tool: "gcc-kit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            generated_unix,
            config: config.clone(),
            overrides,
            result,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(format!("serializing report: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

pub fn read_report<T: DeserializeOwned>(path: &Path) -> Result<Report<T>> {
    let s = std::fs::read_to_string(path)?;
    serde_json::from_str(&s).map_err(|e| Error::Config(format!("{}: not a report: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        if !p.as_os_str().is_empty() {
            std::fs::create_dir_all(p)?;
        }
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

/// Writes a header and rows of already formatted cells.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-trip formatting for floats in tables.
pub fn fmt(v: f64) -> String {
    format!("{v}")
}

/// A 2D plot in world coordinates, rendered with `y` pointing up.
pub struct SvgPlot {
    lo: Vec2,
    hi: Vec2,
    width: f64,
    height: f64,
    group: Group,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

impl SvgPlot {
    pub fn new(lo: Vec2, hi: Vec2, width: f64) -> Self {
        let (w, h) = ((hi[0] - lo[0]).max(1e-12), (hi[1] - lo[1]).max(1e-12));
        let pad = 0.04 * w.max(h);
        let lo = [lo[0] - pad, lo[1] - pad];
        let hi = [hi[0] + pad, hi[1] + pad];
        let height = width * (hi[1] - lo[1]) / (hi[0] - lo[0]);
        Self { lo, hi, width, height, group: Group::new() }
    }

    /// Plot framed on the bounding box of a domain; one-dimensional domains
    /// get a unit-height strip.
    pub fn for_domain(domain: &Domain, width: f64) -> Self {
        let (lo, hi) = domain.bbox();
        if domain.dim() == 1 {
            Self::new([lo[0], -0.5], [hi[0], 0.5], width)
        } else {
            Self::new(lo, hi, width)
        }
    }

    fn map(&self, p: Vec2) -> (f64, f64) {
        let x = (p[0] - self.lo[0]) / (self.hi[0] - self.lo[0]) * self.width;
        let y = (self.hi[1] - p[1]) / (self.hi[1] - self.lo[1]) * self.height;
        (x, y)
    }

    pub fn polyline(&mut self, pts: &[Vec2], stroke: &str, width: f64) {
        let s: Vec<String> = pts
            .iter()
            .map(|&p| {
                let (x, y) = self.map(p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let line = Polyline::new()
            .set("points", s.join(" "))
            .set("fill", "none")
            .set("stroke", stroke)
            .set("stroke-width", width);
        self.group = std::mem::take(&mut self.group).add(line);
    }

    pub fn point(&mut self, p: Vec2, r: f64, fill: &str) {
        let (x, y) = self.map(p);
        self.group = std::mem::take(&mut self.group).add(Circle::new().set("cx", x).set("cy", y).set("r", r).set("fill", fill));
    }

    /// Boundary of the domain as a closed outline.
    pub fn outline(&mut self, domain: &Domain) {
        if domain.dim() == 1 {
            let (lo, hi) = domain.bbox();
            self.polyline(&[[lo[0], 0.0], [hi[0], 0.0]], "#444", 1.0);
            return;
        }
        let samples = domain.boundary_samples(400);
        let mut by_piece: BTreeMap<usize, Vec<Vec2>> = BTreeMap::new();
        for b in samples {
            by_piece.entry(b.piece).or_default().push(b.point);
        }
        for (_, mut pts) in by_piece {
            if domain.piece_periodic() {
                if let Some(&f) = pts.first() {
                    pts.push(f);
                }
            }
            self.polyline(&pts, "#444", 1.5);
        }
    }

    /// Axis-aligned cells coloured by `values` normalized to `[0, 1]`;
    /// `values[i][j]` covers cell `(i, j)` of an `nx × ny` grid on the frame.
    pub fn heatmap(&mut self, lo: Vec2, hi: Vec2, values: &[Vec<f64>]) {
        let nx = values.len();
        let ny = values.first().map_or(0, |r| r.len());
        let vmax = values.iter().flatten().cloned().fold(0.0, f64::max).max(1e-300);
        let (dx, dy) = ((hi[0] - lo[0]) / nx as f64, (hi[1] - lo[1]) / ny.max(1) as f64);
        for (i, row) in values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let s = (v / vmax).clamp(0.0, 1.0);
                if s < 1e-3 {
                    continue;
                }
                let (x0, y1) = self.map([lo[0] + i as f64 * dx, lo[1] + (j + 1) as f64 * dy]);
                let (x1, y0) = self.map([lo[0] + (i + 1) as f64 * dx, lo[1] + j as f64 * dy]);
                let shade = (255.0 * (1.0 - s)).round() as u8;
                let rect = Rectangle::new()
                    .set("x", x0)
                    .set("y", y1)
                    .set("width", (x1 - x0).abs())
                    .set("height", (y0 - y1).abs())
                    .set("fill", format!("rgb({shade},{shade},255)"));
                self.group = std::mem::take(&mut self.group).add(rect);
            }
        }
    }

    pub fn document(&self) -> Document {
        Document::new()
            .set("viewBox", (0.0, 0.0, self.width, self.height))
            .set("width", self.width)
            .set("height", self.height)
            .add(Rectangle::new().set("width", "100%").set("height", "100%").set("fill", "white"))
            .add(self.group.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        svg::save(path, &self.document())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_roundtrip_and_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::parse("[domain]\nkind = \"interval\"\nlo = 0.0\nhi = 1.0\n").unwrap();
        let r = Report::new("spectrum", &cfg, BTreeMap::new(), vec![1.0, 2.0]);
        let p = dir.path().join("a/report.json");
        r.write(&p).unwrap();
        let back: Report<Vec<f64>> = read_report(&p).unwrap();
        assert_eq!(back.result, vec![1.0, 2.0]);
        assert_eq!(back.config, cfg);
        let c = dir.path().join("t.csv");
        write_csv(&c, &["a", "b"], vec![vec![fmt(1.5), fmt(2.0)]]).unwrap();
        assert_eq!(std::fs::read_to_string(&c).unwrap(), "a,b\n1.5,2\n");
        let d = Domain::unit_disc();
        let mut plot = SvgPlot::for_domain(&d, 400.0);
        plot.outline(&d);
        plot.polyline(&[[0.0, 0.0], [0.5, 0.5]], color(0), 1.0);
        plot.heatmap([-1.0, -1.0], [1.0, 1.0], &[vec![0.0, 1.0], vec![0.5, 0.2]]);
        let s = dir.path().join("p.svg");
        plot.save(&s).unwrap();
        let txt = std::fs::read_to_string(&s).unwrap();
        assert!(txt.contains("<svg") && txt.contains("polyline"));
    }
}
