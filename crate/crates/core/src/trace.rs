//! Sensory stream records and the line-delimited trace file format.
//!
//! A trace file is UTF-8 JSON Lines. Each trace starts with a header record
//! followed by exactly `T` step records:
//!
//! ```text
//! {"type":"trace","id":"trace-5000","T":80,"seed":5000}
//! {"type":"step","t":0,"true_label":3,"robot_pred":3,"robot_conf":0.91,"cloud_pred":3,"cloud_conf":1.0,"phi":0.83}
//! ```
//!
//! Externally produced prediction logs (real vision models) can be ingested
//! by writing them in this format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{OffloadError, Result};

/// Class identifier produced by the prediction models.
pub type Label = u32;

/// One timestep of the sensory stream with both models' precomputed outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub true_label: Label,
    pub robot_pred: Label,
    pub robot_conf: f64,
    pub cloud_pred: Label,
    pub cloud_conf: f64,
    /// Frame-difference feature of the input, arbitrary units.
    pub phi: f64,
}

impl TraceStep {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [("robot_conf", self.robot_conf), ("cloud_conf", self.cloud_conf)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            return Err(format!("phi = {} must be finite and >= 0", self.phi));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub id: String,
    pub seed: u64,
    pub steps: Vec<TraceStep>,
}

impl Trace {
    pub fn new(id: impl Into<String>, seed: u64, steps: Vec<TraceStep>) -> Self {
        Trace { id: id.into(), seed, steps }
    }

    /// Episode horizon `T`.
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(OffloadError::InvalidTrace(format!("trace `{}` has no steps", self.id)));
        }
        for (t, s) in self.steps.iter().enumerate() {
            s.validate()
                .map_err(|msg| OffloadError::InvalidTrace(format!("trace `{}` step {t}: {msg}", self.id)))?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Record {
    Trace {
        id: String,
        #[serde(rename = "T")]
        horizon: usize,
        seed: u64,
    },
    Step {
        t: usize,
        #[serde(flatten)]
        step: TraceStep,
    },
}

/// Writes traces as JSON Lines, one header record per trace followed by its steps.
pub fn save_traces(traces: &[Trace], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| OffloadError::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_traces(traces, &mut out).map_err(|e| OffloadError::io(path, e))?;
    out.flush().map_err(|e| OffloadError::io(path, e))
}

pub fn write_traces<W: Write>(traces: &[Trace], out: &mut W) -> std::io::Result<()> {
    for trace in traces {
        let header = Record::Trace { id: trace.id.clone(), horizon: trace.horizon(), seed: trace.seed };
        serde_json::to_writer(&mut *out, &header)?;
        out.write_all(b"\n")?;
        for (t, step) in trace.steps.iter().enumerate() {
            serde_json::to_writer(&mut *out, &Record::Step { t, step: *step })?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub fn load_traces(path: impl AsRef<Path>) -> Result<Vec<Trace>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| OffloadError::io(path, e))?;
    read_traces(BufReader::new(file), path)
}

/// Parses a trace stream; `origin` is only used in error messages.
pub fn read_traces<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<Trace>> {
    let parse_err = |line: usize, msg: String| OffloadError::Parse { path: origin.to_path_buf(), line, msg };
    let invalid = |line: usize, msg: String| OffloadError::Validation { path: origin.to_path_buf(), line, msg };

    let mut traces = Vec::new();
    // (trace, declared horizon, header line)
    let mut open: Option<(Trace, usize, usize)> = None;

    let close = |open: Option<(Trace, usize, usize)>, traces: &mut Vec<Trace>| -> Result<()> {
        if let Some((trace, horizon, line)) = open {
            if trace.steps.len() != horizon {
                return Err(invalid(
                    line,
                    format!("trace `{}` declares T = {horizon} but has {} steps", trace.id, trace.steps.len()),
                ));
            }
            traces.push(trace);
        }
        Ok(())
    };

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| OffloadError::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        match record {
            Record::Trace { id, horizon, seed } => {
                close(open.take(), &mut traces)?;
                if horizon == 0 {
                    return Err(invalid(lineno, format!("trace `{id}` declares T = 0")));
                }
                open = Some((Trace { id, seed, steps: Vec::with_capacity(horizon) }, horizon, lineno));
            }
            Record::Step { t, step } => {
                let Some((trace, horizon, _)) = open.as_mut() else {
                    return Err(parse_err(lineno, "step record before any trace header".into()));
                };
                if t != trace.steps.len() {
                    return Err(invalid(lineno, format!("expected step t = {}, found t = {t}", trace.steps.len())));
                }
                if t >= *horizon {
                    return Err(invalid(lineno, format!("step t = {t} beyond declared T = {horizon}")));
                }
                step.validate().map_err(|msg| invalid(lineno, msg))?;
                trace.steps.push(step);
            }
        }
    }
    close(open, &mut traces)?;
    Ok(traces)
}
