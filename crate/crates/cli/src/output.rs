//! CSV and summary artifacts.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use nonlocal_sir::diagnostics::{total_mass, DiagnosticSeries};
use nonlocal_sir::solver::SnapshotSink;
use nonlocal_sir::{Error, State};

/// Shortest decimal that parses back to the same `f64`; exponent form for
/// very small or large magnitudes.
pub fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if x != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Writes one snapshot: cell coordinates, one column per compartment and
/// their sum `N`.
pub fn write_snapshot(path: &Path, names: &[String], state: &State) -> io::Result<()> {
    let grid = state.grid();
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<&str> = vec!["x"];
    if grid.dim() == 2 {
        header.push("y");
    }
    header.extend(names.iter().map(String::as_str));
    header.push("N");
    w.write_record(&header).map_err(csv_err)?;
    let total = state.total_density();
    for cell in 0..grid.cell_count() {
        let c = grid.cell_center(cell);
        let mut row: Vec<String> = c[..grid.dim()].iter().map(|v| fmt_num(*v)).collect();
        row.extend(state.fields().iter().map(|f| fmt_num(f.values()[cell])));
        row.push(fmt_num(total.values()[cell]));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

/// Writes the time series gathered during a run.
pub fn write_diagnostics(path: &Path, names: &[String], series: &DiagnosticSeries) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["t".to_string(), "total_mass".to_string()];
    header.extend(names.iter().map(|n| format!("linf_{n}")));
    header.push("min_value".into());
    header.push("support_width_N".into());
    w.write_record(&header).map_err(csv_err)?;
    for k in 0..series.len() {
        let mut row = vec![fmt_num(series.times[k]), fmt_num(series.total_mass[k])];
        row.extend(series.linf_per_compartment[k].iter().map(|v| fmt_num(*v)));
        row.push(fmt_num(series.min_value[k]));
        row.push(fmt_num(series.support_width_n[k]));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

/// Writes a header and rows of numbers; NaN marks an empty cell.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        let cells = row.iter().map(|v| if v.is_nan() { String::new() } else { fmt_num(*v) });
        w.write_record(cells).map_err(csv_err)?;
    }
    w.flush()
}

/// Writes `key = value` lines.
pub fn write_summary(path: &Path, lines: &[(String, String)]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (k, v) in lines {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()
}

/// Streams snapshots to `<dir>/<prefix>_snapshot_<step>.csv` and keeps the
/// diagnostic series. The first write error is kept and later snapshots are
/// skipped.
pub struct SnapshotWriter {
    dir: PathBuf,
    prefix: String,
    names: Vec<String>,
    pub series: DiagnosticSeries,
    pub written: Vec<PathBuf>,
    pub error: Option<io::Error>,
    pub aborted_at: Option<usize>,
}

impl SnapshotWriter {
    pub fn new(dir: &Path, prefix: &str, names: &[String]) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            prefix: prefix.to_string(),
            names: names.to_vec(),
            series: DiagnosticSeries::new(),
            written: Vec::new(),
            error: None,
            aborted_at: None,
        })
    }

    fn write(&mut self, step: usize, state: &State) {
        if self.error.is_some() {
            return;
        }
        let path = self.dir.join(format!("{}_snapshot_{step:07}.csv", self.prefix));
        match write_snapshot(&path, &self.names, state) {
            Ok(()) => self.written.push(path),
            Err(e) => self.error = Some(e),
        }
    }
}

impl SnapshotSink for SnapshotWriter {
    fn on_snapshot(&mut self, step: usize, state: &State) {
        self.series.record(state);
        self.write(step, state);
    }

    fn on_abort(&mut self, step: usize, state: &State, _error: &Error) {
        self.aborted_at = Some(step);
        self.series.record(state);
        self.write(step, state);
    }
}

/// Per-compartment masses as summary lines.
pub fn mass_lines(names: &[String], state: &State, label: &str) -> Vec<(String, String)> {
    let grid = state.grid();
    names
        .iter()
        .zip(state.fields())
        .map(|(n, f)| (format!("{label}_mass_{n}"), fmt_num(total_mass(grid, f))))
        .collect()
}
