//! Result records and the file formats: trajectory CSV, results JSONL and report JSON.
//! Every writer has a reader with `read(write(x)) == x`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use chazy_core::blowup::ManifoldParams;
use chazy_core::integrator::Trajectory;
use chazy_core::scattering::{ScatteringDiagnostics, ScatteringEnd, ScatteringResult, ScatteringStatus};
use chazy_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::coords;

/// First line of every trajectory CSV; bump the version when the columns change.
pub const TRAJECTORY_HEADER: &str = "# chazy trajectory v1";

/// Floats are written with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub tau: f64,
    pub t: Option<f64>,
    pub rho: f64,
    pub v: f64,
    pub s: Vec<f64>,
    pub w: Vec<f64>,
}

/// A trajectory as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    /// Length of the `s` and `w` blocks.
    pub dim: usize,
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryTable {
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        let dim = traj.first().state.s.len();
        let rows = traj
            .samples
            .iter()
            .map(|smp| TrajectoryRow {
                tau: smp.tau,
                t: smp.t,
                rho: smp.state.rho,
                v: smp.state.v,
                s: coords(&smp.state.s),
                w: coords(&smp.state.w),
            })
            .collect();
        Self { dim, rows }
    }

    pub fn columns(dim: usize) -> Vec<String> {
        let mut cols: Vec<String> = ["tau", "t", "rho", "v"].iter().map(|c| c.to_string()).collect();
        cols.extend((0..dim).map(|k| format!("s{k}")));
        cols.extend((0..dim).map(|k| format!("w{k}")));
        cols
    }
}

pub fn write_trajectory_csv(path: &Path, table: &TrajectoryTable) -> Result<()> {
    let mut file = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(file, "{TRAJECTORY_HEADER}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(TrajectoryTable::columns(table.dim))?;
    for r in &table.rows {
        let mut rec = vec![fmt17(r.tau), r.t.map(fmt17).unwrap_or_default(), fmt17(r.rho), fmt17(r.v)];
        rec.extend(r.s.iter().chain(&r.w).map(|x| fmt17(*x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryTable> {
    let mut reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != TRAJECTORY_HEADER {
        bail!("{}: expected `{TRAJECTORY_HEADER}`, found `{}`", path.display(), first.trim_end());
    }
    let mut csv = csv::Reader::from_reader(reader);
    let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    if header.len() < 4 || (header.len() - 4) % 2 != 0 {
        bail!("{}: malformed column header", path.display());
    }
    let dim = (header.len() - 4) / 2;
    if header != TrajectoryTable::columns(dim) {
        bail!("{}: unexpected columns {header:?}", path.display());
    }
    let mut rows = Vec::new();
    for (line, rec) in csv.records().enumerate() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse::<f64>().with_context(|| format!("row {line}, column {}", header[k]))
        };
        let t = if rec[1].is_empty() { None } else { Some(num(1)?) };
        rows.push(TrajectoryRow {
            tau: num(0)?,
            t,
            rho: num(2)?,
            v: num(3)?,
            s: (4..4 + dim).map(num).collect::<Result<_>>()?,
            w: (4 + dim..4 + 2 * dim).map(num).collect::<Result<_>>()?,
        });
    }
    Ok(TrajectoryTable { dim, rows })
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in records {
        serde_json::to_writer(&mut file, r)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}: line {}", path.display(), k + 1))?);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// One end of a scattering orbit: manifold parameters and, for `rho1 > 0`, Chazy data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndRecord {
    pub s0: Vec<f64>,
    pub v0: f64,
    pub s1: Vec<f64>,
    pub rho1: f64,
    pub a: Vec<f64>,
    pub b: Option<Vec<f64>>,
    pub c: Option<Vec<f64>>,
}

impl EndRecord {
    pub fn from_params(mp: &ManifoldParams) -> Self {
        Self {
            s0: coords(&mp.eq.s0),
            v0: mp.eq.v0,
            s1: coords(&mp.s1),
            rho1: mp.rho1,
            a: coords(&mp.eq.chazy_a()),
            b: None,
            c: None,
        }
    }

    pub fn from_end(end: &ScatteringEnd) -> Self {
        let mut r = Self::from_params(&end.params);
        if let Some(ch) = &end.chazy {
            r.b = Some(coords(&ch.b));
            r.c = Some(coords(&ch.c));
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub min_pair_distance: f64,
    pub max_rho: f64,
    pub max_potential: f64,
    pub energy_drift: f64,
    pub seed_scale: f64,
    pub clock_shift: f64,
    pub tau_span: f64,
    pub steps: usize,
}

impl From<&ScatteringDiagnostics> for DiagnosticsRecord {
    fn from(d: &ScatteringDiagnostics) -> Self {
        Self {
            min_pair_distance: d.min_pair_distance,
            max_rho: d.max_rho,
            max_potential: d.max_potential,
            energy_drift: d.energy_drift,
            seed_scale: d.seed_scale,
            clock_shift: d.clock_shift,
            tau_span: d.tau_span,
            steps: d.steps,
        }
    }
}

/// One line of a results JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRecord {
    pub index: usize,
    pub status: ScatteringStatus,
    pub past: EndRecord,
    pub future: Option<EndRecord>,
    pub diagnostics: Option<DiagnosticsRecord>,
    pub error: Option<String>,
}

impl ScatterRecord {
    pub fn new(index: usize, past: &ManifoldParams, outcome: &std::result::Result<ScatteringResult, Error>) -> Self {
        match outcome {
            Ok(res) => Self {
                index,
                status: ScatteringStatus::Ok,
                past: EndRecord::from_end(&res.past),
                future: Some(EndRecord::from_end(&res.future)),
                diagnostics: Some((&res.diagnostics).into()),
                error: None,
            },
            Err(e) => Self {
                index,
                status: ScatteringStatus::of_error(e),
                past: EndRecord::from_params(past),
                future: None,
                diagnostics: None,
                error: Some(e.to_string()),
            },
        }
    }
}
