//! JSON-lines logs for flow and Newton runs. Every line is a complete JSON
//! object and is flushed as written, so a truncated log is still valid up
//! to its last line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use hypflow::flows::{FlowRun, FlowStatus, NewtonRun, StepRecord};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLine {
    pub t: f64,
    pub dt: f64,
    pub sup_err: f64,
    #[serde(rename = "min_M")]
    pub min_m: f64,
    #[serde(rename = "max_M")]
    pub max_m: f64,
    pub flips: usize,
    pub energy: f64,
}

impl From<&StepRecord> for StepLine {
    fn from(r: &StepRecord) -> Self {
        StepLine { t: r.t, dt: r.dt, sup_err: r.sup_err, min_m: r.min_m, max_m: r.max_m, flips: r.flips, energy: r.energy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonLine {
    pub iter: usize,
    pub residual: f64,
    pub step_scale: f64,
    pub flips: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalLine {
    pub status: String,
    pub steps: usize,
    pub final_sup_err: f64,
    pub u: Vec<f64>,
}

pub fn status_name(status: &FlowStatus) -> &'static str {
    match status {
        FlowStatus::Converged => "converged",
        FlowStatus::MaxSteps => "max_steps",
        FlowStatus::Failed(_) => "failed",
    }
}

pub struct LogWriter {
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        Ok(LogWriter { out: BufWriter::new(File::create(path)?) })
    }

    pub fn line<T: Serialize>(&mut self, record: &T) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }

    pub fn flow(&mut self, run: &FlowRun) -> std::io::Result<()> {
        for r in &run.records {
            self.line(&StepLine::from(r))?;
        }
        self.line(&TerminalLine {
            status: status_name(&run.status).into(),
            steps: run.steps(),
            final_sup_err: run.final_sup_err(),
            u: run.u.clone(),
        })
    }

    pub fn newton(&mut self, run: &NewtonRun) -> std::io::Result<()> {
        for (iter, it) in run.iterations.iter().enumerate() {
            self.line(&NewtonLine { iter, residual: it.residual, step_scale: it.step_scale, flips: it.flips })?;
        }
        self.line(&TerminalLine {
            status: if run.converged { "converged" } else { "max_iter" }.into(),
            steps: run.iterations.len(),
            final_sup_err: run.final_residual,
            u: run.u.clone(),
        })
    }
}
