//! CSV files: populations (`stratum,value`), draw logs (`t,stratum,value`),
//! trajectories and experiment tables. Strata are numbered from 1 on disk.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audit::Draw;
use crate::error::{Error, Result};
use crate::methods::StepRecord;
use crate::population::StratifiedPopulation;

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?;
    write_rows_to(file, rows)
}

pub fn write_rows_to<T: Serialize, W: Write>(w: W, rows: &[T]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(io_err)?;
    }
    wr.flush().map_err(io_err)
}

#[derive(Debug, Deserialize)]
struct UnitRow {
    stratum: usize,
    value: f64,
}

/// Reads a population; every stratum from 1 to the largest index must appear.
pub fn read_population<R: Read>(r: R) -> Result<StratifiedPopulation> {
    let mut strata: Vec<Vec<f64>> = Vec::new();
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    for (i, rec) in rd.deserialize::<UnitRow>().enumerate() {
        let row = rec.map_err(|e| Error::InvalidParam(format!("row {}: {e}", i + 1)))?;
        if row.stratum == 0 {
            return Err(Error::InvalidParam(format!("row {}: strata are numbered from 1", i + 1)));
        }
        if strata.len() < row.stratum {
            strata.resize(row.stratum, Vec::new());
        }
        strata[row.stratum - 1].push(row.value);
    }
    if let Some(k) = strata.iter().position(Vec::is_empty) {
        return Err(Error::InvalidSpec(format!("stratum {} has no units", k + 1)));
    }
    StratifiedPopulation::new(strata)
}

pub fn read_population_file(path: &Path) -> Result<StratifiedPopulation> {
    let f = std::fs::File::open(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?;
    read_population(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrawRow {
    pub t: usize,
    pub stratum: usize,
    pub value: f64,
}

/// Reads a draw log; `t` must increase strictly from row to row.
pub fn read_draws<R: Read>(r: R) -> Result<Vec<Draw>> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    let mut last_t = 0;
    for (i, rec) in rd.deserialize::<DrawRow>().enumerate() {
        let row = i + 1;
        let d = rec.map_err(|e| Error::InvalidParam(format!("row {row}: {e}")))?;
        if d.t <= last_t {
            return Err(Error::InvalidParam(format!("row {row}: t = {} does not increase", d.t)));
        }
        last_t = d.t;
        out.push(Draw { stratum: d.stratum, value: d.value });
    }
    Ok(out)
}

pub fn read_draws_file(path: &Path) -> Result<Vec<Draw>> {
    let f = std::fs::File::open(path).map_err(|e| io_err(format!("{}: {e}", path.display())))?;
    read_draws(f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub stratum: Option<usize>,
    pub value: Option<f64>,
    pub eta_kt: Option<f64>,
    pub lambda: Option<f64>,
    #[serde(rename = "log_M")]
    pub log_m: f64,
    pub p_value: f64,
    pub lcb: Option<f64>,
    pub n: usize,
}

impl From<&StepRecord> for TrajectoryRow {
    fn from(s: &StepRecord) -> Self {
        Self {
            t: s.t,
            stratum: s.stratum.map(|k| k + 1),
            value: s.value,
            eta_kt: s.eta_kt,
            lambda: s.lambda,
            log_m: s.log_m,
            p_value: s.p_value,
            lcb: s.lcb,
            n: s.n,
        }
    }
}

pub fn trajectory_csv(steps: &[StepRecord]) -> Result<String> {
    let rows: Vec<TrajectoryRow> = steps.iter().map(TrajectoryRow::from).collect();
    let mut buf = Vec::new();
    if rows.is_empty() {
        buf.extend_from_slice(b"t,stratum,value,eta_kt,lambda,log_M,p_value,lcb,n\n");
    } else {
        write_rows_to(&mut buf, &rows)?;
    }
    String::from_utf8(buf).map_err(io_err)
}

pub fn read_trajectory<R: Read>(r: R) -> Result<Vec<TrajectoryRow>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|r| r.map_err(io_err)).collect()
}

/// Draw log implied by a trajectory of one shared interleaving.
pub fn draws_of(rows: &[TrajectoryRow]) -> Result<Vec<DrawRow>> {
    rows.iter()
        .map(|r| match (r.stratum, r.value) {
            (Some(stratum), Some(value)) => Ok(DrawRow { t: r.t, stratum, value }),
            _ => Err(Error::InvalidParam(format!("step {} has no single draw", r.t))),
        })
        .collect()
}
