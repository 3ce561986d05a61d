use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::write_atomic;
use crate::error::{Error, Result};

/// Column order of the trace CSV.
pub const TRACE_HEADER: &str =
    "step,true_x,true_y,est_x,est_y,error_m,dispersion_rms_m,max_sim,argmax_row,argmax_col,ms";

/// One measurement update. `step` counts updates from 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub true_x: f64,
    pub true_y: f64,
    pub est_x: f64,
    pub est_y: f64,
    pub error_m: f64,
    pub dispersion_rms_m: f64,
    pub max_sim: f32,
    pub argmax_row: usize,
    pub argmax_col: usize,
    /// Wall-clock milliseconds for the step; 0 unless timing is recorded.
    pub ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).expect("trace records serialize");
        }
        let body = w.into_inner().expect("in-memory writer");
        let mut out = Vec::with_capacity(body.len() + TRACE_HEADER.len() + 1);
        out.extend_from_slice(TRACE_HEADER.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&body);
        out
    }

    pub fn from_csv(bytes: &[u8], source: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(bytes);
        let header = reader
            .headers()
            .map_err(|e| Error::format(source, e.to_string()))?
            .iter()
            .collect::<Vec<_>>()
            .join(",");
        if header != TRACE_HEADER {
            return Err(Error::format(source, format!("unexpected trace header `{header}`")));
        }
        let records = reader
            .deserialize()
            .collect::<std::result::Result<Vec<TraceRecord>, _>>()
            .map_err(|e| Error::format(source, e.to_string()))?;
        Ok(RunTrace { records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&bytes, path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceRule {
    /// First step whose dispersion is below the threshold.
    #[default]
    FirstCrossing,
    /// First step from which dispersion stays below the threshold to the end.
    Sustained,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub average_error_m: f64,
    pub final_error_m: f64,
    pub convergence_step: Option<usize>,
    pub threshold_m: f64,
    pub convergence_rule: ConvergenceRule,
}

pub fn summarize(trace: &RunTrace, threshold_m: f64, rule: ConvergenceRule) -> Result<RunSummary> {
    let last = trace
        .records
        .last()
        .ok_or_else(|| Error::config("cannot summarize an empty trace"))?;
    let n = trace.len() as f64;
    let average_error_m = trace.records.iter().map(|r| r.error_m).sum::<f64>() / n;
    let below = |r: &TraceRecord| r.dispersion_rms_m < threshold_m;
    let convergence_step = match rule {
        ConvergenceRule::FirstCrossing => trace.records.iter().find(|r| below(r)).map(|r| r.step),
        ConvergenceRule::Sustained => {
            let tail = trace.records.iter().rev().take_while(|r| below(r)).count();
            (tail > 0).then(|| trace.records[trace.len() - tail].step)
        }
    };
    Ok(RunSummary {
        steps: trace.len(),
        average_error_m,
        final_error_m: last.error_m,
        convergence_step,
        threshold_m,
        convergence_rule: rule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(errors: &[f64], dispersion: &[f64]) -> RunTrace {
        RunTrace {
            records: errors
                .iter()
                .zip(dispersion)
                .enumerate()
                .map(|(i, (&e, &d))| TraceRecord {
                    step: i + 1,
                    true_x: 1.0 / 3.0,
                    true_y: 2.0,
                    est_x: 0.1 + i as f64,
                    est_y: -7.25,
                    error_m: e,
                    dispersion_rms_m: d,
                    max_sim: 0.812_345_7,
                    argmax_row: i,
                    argmax_col: 3,
                    ms: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn constant_error() {
        let s = summarize(&trace(&[10.0; 5], &[500.0; 5]), 60.0, ConvergenceRule::FirstCrossing).unwrap();
        assert_eq!((s.average_error_m, s.final_error_m, s.convergence_step), (10.0, 10.0, None));
    }

    #[test]
    fn first_crossing_vs_sustained() {
        let t = trace(&[1.0; 4], &[100.0, 59.0, 80.0, 50.0]);
        assert_eq!(summarize(&t, 60.0, ConvergenceRule::FirstCrossing).unwrap().convergence_step, Some(2));
        assert_eq!(summarize(&t, 60.0, ConvergenceRule::Sustained).unwrap().convergence_step, Some(4));
        let never = trace(&[1.0; 2], &[100.0, 60.0]);
        assert_eq!(summarize(&never, 60.0, ConvergenceRule::Sustained).unwrap().convergence_step, None);
    }

    #[test]
    fn empty_trace_rejected() {
        assert!(summarize(&RunTrace::default(), 60.0, ConvergenceRule::FirstCrossing).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = trace(&[3.141_592_653_589_793, 1e-17, 12.5], &[1e5, 64.000_000_000_1, 0.3]);
        let bytes = t.to_csv();
        assert!(bytes.starts_with(format!("{TRACE_HEADER}\n").as_bytes()));
        let back = RunTrace::from_csv(&bytes, Path::new("t.csv")).unwrap();
        assert_eq!(back, t);
        let a = summarize(&t, 64.0, ConvergenceRule::FirstCrossing).unwrap();
        let b = summarize(&back, 64.0, ConvergenceRule::FirstCrossing).unwrap();
        assert_eq!(a, b);
        assert!(RunTrace::from_csv(b"a,b\n1,2\n", Path::new("x")).is_err());
    }
}
