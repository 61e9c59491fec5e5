//! Metrics tables, dataset CSVs and JSON artifacts.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::Serialize;

use rvae::analytic1d::LandscapeRow;
use rvae::{ManifoldKind, ManifoldPoint};

use crate::config::ExperimentConfig;
use crate::error::{io_err, HarnessError, Result};

/// Build identifier baked in at compile time (`git describe` when available).
pub const BUILD_ID: &str = env!("RVAE_BUILD_ID");

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Str(String),
    Int(i64),
    Float(f64),
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Str(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Str(s)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Str(v.to_string())
    }
}

impl Cell {
    fn rank(&self) -> u8 {
        match self {
            Cell::Int(_) | Cell::Float(_) => 0,
            Cell::Str(_) => 1,
        }
    }

    fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Float(f) => Some(*f),
            Cell::Str(_) => None,
        }
    }

    fn total_cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Cell::Str(a), Cell::Str(b)) => a.cmp(b),
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                _ => a.rank().cmp(&b.rank()),
            },
        }
    }

    pub fn render(&self) -> String {
        match self {
            Cell::Str(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Float(f) => format_float(*f),
        }
    }
}

/// 17 significant digits in scientific notation; `NaN`, `inf`, `-inf` for
/// non-finite values.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

/// A keyed results table. Rows are sorted before writing so that the output
/// does not depend on the order in which parallel jobs finished.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl MetricsTable {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        });
    }

    /// Sorted CSV with `seed`, `build_id` and `config_hash` columns appended.
    pub fn to_csv(&self, cfg: &ExperimentConfig) -> Result<String> {
        let mut sorted = self.clone();
        sorted.sort();
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let mut header = sorted.columns.clone();
        header.extend(["seed", "build_id", "config_hash"].map(String::from));
        w.write_record(&header)?;
        let hash = cfg.hash();
        for row in &sorted.rows {
            let mut rec: Vec<String> = row.iter().map(Cell::render).collect();
            rec.push(cfg.seed.to_string());
            rec.push(BUILD_ID.to_string());
            rec.push(hash.clone());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Input(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::Input(e.to_string()))
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

/// `summary.json`: experiment name, provenance and the full resolved config
/// next to the experiment's own results.
pub fn summary_json<T: Serialize>(cfg: &ExperimentConfig, results: &T) -> Result<serde_json::Value> {
    let mut c = cfg.clone();
    c.output_dir = None;
    Ok(serde_json::json!({
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "build_id": BUILD_ID,
        "config_hash": cfg.hash(),
        "config": c,
        "results": results,
    }))
}

/// Writes `metrics.csv` and `summary.json` into `dir`.
pub fn write_outputs<T: Serialize>(dir: &Path, cfg: &ExperimentConfig, table: &MetricsTable, results: &T) -> Result<()> {
    write_text(&dir.join("metrics.csv"), &table.to_csv(cfg)?)?;
    write_json(&dir.join("summary.json"), &summary_json(cfg, results)?)
}

/// Points as CSV rows `x0, x1, ...` (coordinates as stored: log-coordinates
/// for SPD).
pub fn points_to_csv(points: &[ManifoldPoint]) -> Result<String> {
    let dim = points.first().map_or(0, |p| p.coords.len());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record((0..dim).map(|i| format!("x{i}")))?;
    for p in points {
        w.write_record(p.coords.iter().map(|v| format_float(*v)))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Input(e.to_string()))
}

/// Reads a dataset written by [`points_to_csv`] (header optional) and checks
/// every point against `manifold`.
pub fn read_points(path: &Path, manifold: &ManifoldKind) -> Result<Vec<ManifoldPoint>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let Ok(vals) = vals else {
            if i == 0 {
                continue;
            }
            return Err(HarnessError::Input(format!("{}: row {} is not numeric", path.display(), i + 1)));
        };
        let p = manifold
            .point(vals)
            .map_err(|e| HarnessError::Input(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        out.push(p);
    }
    if out.is_empty() {
        return Err(HarnessError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(out)
}

pub fn landscape_table(rows: &[LandscapeRow]) -> MetricsTable {
    let mut t = MetricsTable::new(&["w", "phi", "loglik", "neg_kl_expectation", "elbo_analytic", "elbo_composed"]);
    for r in rows {
        t.push(vec![
            r.w.into(),
            r.phi.into(),
            r.loglik.into(),
            r.neg_kl_expectation.into(),
            r.elbo_analytic.into(),
            r.elbo_composed.into(),
        ]);
    }
    t
}

/// Landscape CSV with exactly the six objective columns.
pub fn landscape_csv(rows: &[LandscapeRow]) -> Result<String> {
    let t = landscape_table(rows);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(&t.columns)?;
    for row in &t.rows {
        w.write_record(row.iter().map(Cell::render))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Input(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Input(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentKind;

    #[test]
    fn floats_have_seventeen_significant_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(2.0), "2.0000000000000000e0");
        assert_eq!(format_float(f64::NAN), "NaN");
        let x = 0.775_255_128_608_410_9_f64;
        assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn csv_rows_are_sorted_and_carry_provenance() {
        let cfg = ExperimentConfig::defaults_for(ExperimentKind::ConsistencyStudy);
        let mut t = MetricsTable::new(&["manifold", "n", "w2"]);
        t.push(vec!["sphere".into(), 2000usize.into(), 0.5.into()]);
        t.push(vec!["euclidean".into(), 500usize.into(), 0.25.into()]);
        t.push(vec!["sphere".into(), 500usize.into(), 0.125.into()]);
        let csv = t.to_csv(&cfg).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "manifold,n,w2,seed,build_id,config_hash");
        assert!(lines[1].starts_with("euclidean,500,"));
        assert!(lines[2].starts_with("sphere,500,"));
        assert!(lines[3].starts_with("sphere,2000,"));
        assert!(lines[3].ends_with(&cfg.hash()));
    }

    #[test]
    fn points_roundtrip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let m = ManifoldKind::Sphere(2);
        let mut rng = rvae::rng::stream(1);
        let pts: Vec<_> = (0..5).map(|_| rvae::geometry::random_point(&m, &mut rng, 0.5)).collect();
        let path = dir.path().join("d.csv");
        write_text(&path, &points_to_csv(&pts).unwrap()).unwrap();
        assert_eq!(read_points(&path, &m).unwrap(), pts);
        assert!(read_points(&path, &ManifoldKind::Hyperbolic(2)).is_err());
    }

    #[test]
    fn landscape_columns() {
        let rows = rvae::analytic1d::landscape(5.0, &[0.5, 1.0], &[0.2]);
        let csv = landscape_csv(&rows).unwrap();
        assert!(csv.starts_with("w,phi,loglik,neg_kl_expectation,elbo_analytic,elbo_composed\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
