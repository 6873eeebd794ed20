//! Table output (CSV or JSON), metadata sidecars, and reading spectra back.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fret_core::Spectrum;
use serde::Serialize;

use crate::config::{FileConfig, OutputFormat, RunConfig};

/// Numeric table with named columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }
}

/// Writes tables and sidecars into one output directory.
pub struct Writer {
    dir: PathBuf,
    format: OutputFormat,
    written: Vec<PathBuf>,
}

impl Writer {
    pub fn new(dir: &Path, format: OutputFormat) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("--out: cannot create {}", dir.display()))?;
        let probe = dir.join(".rydfret-write-test");
        fs::write(&probe, b"")
            .with_context(|| format!("--out: {} is not writable", dir.display()))?;
        fs::remove_file(&probe).ok();
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn table(&mut self, table: &Table) -> Result<PathBuf> {
        let path = match self.format {
            OutputFormat::Csv => {
                let path = self.dir.join(format!("{}.csv", table.name));
                let mut w = csv::WriterBuilder::new()
                    .terminator(csv::Terminator::Any(b'\n'))
                    .from_path(&path)
                    .with_context(|| format!("cannot write {}", path.display()))?;
                w.write_record(&table.columns)?;
                for row in &table.rows {
                    w.write_record(row.iter().map(|v| v.to_string()))?;
                }
                w.flush()?;
                path
            }
            OutputFormat::Json => {
                let path = self.dir.join(format!("{}.json", table.name));
                let text = serde_json::to_string_pretty(table)? + "\n";
                fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
                path
            }
        };
        self.written.push(path.clone());
        Ok(path)
    }

    /// Writes `<name>.meta.toml`: the run's config (reloadable with
    /// `--config`), the command, the tool version, and run metrics.
    pub fn sidecar(&mut self, name: &str, command: &str, cfg: &RunConfig, metrics: toml::Table) -> Result<PathBuf> {
        let mut doc: FileConfig = cfg.to_file_config();
        let mut run = toml::Table::new();
        run.insert("command".into(), command.into());
        run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        doc.run = Some(run);
        doc.metrics = Some(metrics);
        let path = self.dir.join(format!("{name}.meta.toml"));
        fs::write(&path, toml::to_string(&doc)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
        self.written.push(path.clone());
        Ok(path)
    }
}

pub fn spectrum_table(name: &str, spec: &Spectrum) -> Table {
    let mut t = Table::new(name, &["detuning_mhz", "rho", "stderr"]);
    for k in 0..spec.len() {
        t.push(vec![spec.detunings[k], spec.values[k], spec.stderr[k]]);
    }
    t
}

/// Reads a `detuning_mhz,rho,stderr` CSV.
pub fn read_spectrum(path: &Path) -> Result<Spectrum> {
    let mut r = csv::Reader::from_path(path)
        .with_context(|| format!("--from: cannot read {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["detuning_mhz", "rho", "stderr"] {
        bail!(
            "{}: expected header detuning_mhz,rho,stderr, got {}",
            path.display(),
            header.join(",")
        );
    }
    let (mut d, mut v, mut e) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| anyhow::anyhow!("missing column {k}"))?
                .parse::<f64>()
                .with_context(|| format!("{}: bad number on data row {}", path.display(), line + 1))
        };
        d.push(parse(0)?);
        v.push(parse(1)?);
        e.push(parse(2)?);
    }
    Ok(Spectrum::new(d, v, e)?)
}

/// Linear interpolation of `spec` at `x` (clamped to the grid ends).
pub fn interpolate(spec: &Spectrum, x: f64) -> f64 {
    let d = &spec.detunings;
    let v = &spec.values;
    if x <= d[0] {
        return v[0];
    }
    if x >= d[d.len() - 1] {
        return v[v.len() - 1];
    }
    let hi = d.partition_point(|&p| p < x);
    let lo = hi - 1;
    v[lo] + (v[hi] - v[lo]) * (x - d[lo]) / (d[hi] - d[lo])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_and_line_endings() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = Writer::new(dir.path(), OutputFormat::Csv).unwrap();
        let spec = Spectrum::new(vec![-0.25, 0.0, 0.25], vec![0.01, 0.125, 1.0 / 3.0], vec![0.0, 1e-3, 2e-3]).unwrap();
        let path = w.table(&spectrum_table("rho_2", &spec)).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("detuning_mhz,rho,stderr\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_spectrum(&path).unwrap(), spec);
    }

    #[test]
    fn rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "detuning,s_n\n0,1\n").unwrap();
        assert!(read_spectrum(&path).is_err());
    }

    #[test]
    fn interpolation() {
        let spec = Spectrum::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 0.0], vec![0.0; 3]).unwrap();
        assert_eq!(interpolate(&spec, 0.5), 1.0);
        assert_eq!(interpolate(&spec, 1.0), 2.0);
        assert_eq!(interpolate(&spec, 1.75), 0.5);
        assert_eq!(interpolate(&spec, -3.0), 0.0);
    }

    #[test]
    fn unwritable_output() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        assert!(Writer::new(&blocker.join("sub"), OutputFormat::Csv).is_err());
    }
}
