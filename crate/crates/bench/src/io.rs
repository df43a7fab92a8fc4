//! Instance files, trace CSV and summary JSON.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use bregman_ot::{OtInstance, SolveTrace};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// On-disk form of an instance: marginals and the cost matrix by rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub m: usize,
    pub n: usize,
    pub seed: Option<u64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub cost: Vec<Vec<f64>>,
}

impl InstanceFile {
    pub fn from_instance(inst: &OtInstance, seed: Option<u64>) -> Self {
        let (m, n) = inst.dim();
        Self {
            m,
            n,
            seed,
            a: inst.a().to_vec(),
            b: inst.b().to_vec(),
            cost: inst.cost().outer_iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn to_instance(&self) -> Result<OtInstance> {
        let flat: Vec<f64> = self.cost.iter().flatten().copied().collect();
        let cost = Array2::from_shape_vec((self.m, self.n), flat).context("cost matrix does not match m x n")?;
        Ok(OtInstance::new(
            cost,
            Array1::from(self.a.clone()),
            Array1::from(self.b.clone()),
        )?)
    }
}

pub fn write_instance(path: &Path, file: &InstanceFile) -> Result<()> {
    let text = serde_json::to_string(file)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_instance(path: &Path) -> Result<OtInstance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: InstanceFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    file.to_instance()
}

#[derive(Debug, Serialize)]
struct CsvRow {
    outer: usize,
    k_inner_cum: usize,
    objective: f64,
    nfval: Option<f64>,
    kkt: f64,
    theta: Option<f64>,
    gamma: f64,
    time_s: f64,
}

/// Writes `outer,k_inner_cum,objective,nfval,kkt,theta,gamma,time_s`, one
/// row per outer iteration. Empty cells mean "not applicable". With
/// `zero_time` the time column is written as 0 so output is byte-stable.
pub fn write_trace<W: Write>(out: W, trace: &SolveTrace, zero_time: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in trace.rows() {
        w.serialize(CsvRow {
            outer: r.outer_iter,
            k_inner_cum: r.cum_inner_iters,
            objective: r.objective,
            nfval: r.nfval,
            kkt: r.kkt,
            theta: r.theta,
            gamma: r.gamma,
            time_s: if zero_time { 0.0 } else { r.wall_time_s },
        })?;
    }
    if trace.is_empty() {
        w.write_record([
            "outer",
            "k_inner_cum",
            "objective",
            "nfval",
            "kkt",
            "theta",
            "gamma",
            "time_s",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_file(path: &Path, trace: &SolveTrace, zero_time: bool) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_trace(f, trace, zero_time)
}
