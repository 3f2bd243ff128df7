//! CSV formats for atomic measures, transport plans and per-replica results.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use brownot_core::transport::{TransportPlan, TransportProblem};
use brownot_core::{Space, WeightedAtoms};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, LabError, LabResult};

/// Columns `x1..xd, mass`.
pub fn write_atoms<W: Write>(out: W, mu: &WeightedAtoms) -> LabResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = mu.dim();
    let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    header.push("mass".into());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(d + 1);
    for (x, m) in mu.iter() {
        row.clear();
        row.extend(x.iter().map(|v| v.to_string()));
        row.push(m.to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(io_err("<atoms>"))?;
    Ok(())
}

pub fn read_atoms<R: Read>(input: R, space: Space) -> LabResult<WeightedAtoms> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let cols = headers.len();
    if cols < 2 || headers.get(cols - 1) != Some("mass") {
        return Err(LabError::Config("atom CSV needs columns x1..xd, mass".into()));
    }
    for (k, h) in headers.iter().take(cols - 1).enumerate() {
        if h != format!("x{}", k + 1) {
            return Err(LabError::Config(format!("unexpected atom CSV column '{h}'")));
        }
    }
    let d = cols - 1;
    let mut positions = Vec::new();
    let mut masses = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        for k in 0..d {
            positions.push(parse_f64(&rec[k])?);
        }
        masses.push(parse_f64(&rec[d])?);
    }
    Ok(WeightedAtoms::from_parts(d, space, positions, masses)?)
}

pub fn save_atoms(path: &Path, mu: &WeightedAtoms) -> LabResult<()> {
    let f = File::create(path).map_err(io_err(path))?;
    write_atoms(f, mu)
}

pub fn load_atoms(path: &Path, space: Space) -> LabResult<WeightedAtoms> {
    let f = File::open(path).map_err(io_err(path))?;
    read_atoms(BufReader::new(f), space)
}

fn parse_f64(s: &str) -> LabResult<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| LabError::Config(format!("not a number: '{s}'")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub i: usize,
    pub j: usize,
    pub mass: f64,
    pub cost_contrib: f64,
}

/// Columns `i, j, mass, cost_contrib`.
pub fn write_plan<W: Write>(out: W, plan: &TransportPlan, problem: &TransportProblem) -> LabResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let contrib = plan.contributions(problem);
    for (&(i, j, mass), c) in plan.entries.iter().zip(contrib) {
        w.serialize(PlanRow {
            i,
            j,
            mass,
            cost_contrib: c,
        })?;
    }
    w.flush().map_err(io_err("<plan>"))?;
    Ok(())
}

pub fn read_plan<R: Read>(input: R) -> LabResult<Vec<PlanRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

pub fn save_plan(path: &Path, plan: &TransportPlan, problem: &TransportProblem) -> LabResult<()> {
    let f = File::create(path).map_err(io_err(path))?;
    write_plan(f, plan, problem)
}

/// One line of `results.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRow {
    pub grid_value: f64,
    pub replica: u64,
    pub cost: f64,
    pub mass: f64,
    pub wall_ms: f64,
}

/// One line of `aux.csv`: a named per-replica quantity that does not fit the
/// fixed results columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxRow {
    pub grid_value: f64,
    pub replica: u64,
    pub name: String,
    pub value: f64,
}

/// Reads rows, dropping a trailing record cut short by an interruption.
pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> LabResult<Vec<T>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(BufReader::new(f));
    let mut rows = Vec::new();
    let mut bad = 0usize;
    for rec in r.deserialize::<T>() {
        match rec {
            Ok(row) => {
                if bad > 0 {
                    return Err(LabError::Resume {
                        path: path.to_path_buf(),
                        reason: "malformed row before the end of the file".into(),
                    });
                }
                rows.push(row);
            }
            Err(_) => bad += 1,
        }
    }
    if bad > 1 {
        return Err(LabError::Resume {
            path: path.to_path_buf(),
            reason: format!("{bad} malformed rows"),
        });
    }
    Ok(rows)
}
