use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_scenario, ScenarioConfig};
use crate::artifact::config_hash;
use crate::error::{Error, Result};

pub const COMPARISON_FORMAT_VERSION: u32 = 1;

/// Metrics of one (config, seed) run. A run that degenerated keeps its error
/// message and counts as infinitely bad in the medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub average_error_m: Option<f64>,
    pub final_error_m: Option<f64>,
    pub convergence_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigComparison {
    pub label: String,
    pub config_hash: String,
    /// Medians over seeds; `None` when the median is infinite.
    pub median_average_error_m: Option<f64>,
    pub median_final_error_m: Option<f64>,
    pub median_convergence_step: Option<f64>,
    pub converged_runs: usize,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub format_version: u32,
    pub seeds: Vec<u64>,
    pub configs: Vec<ConfigComparison>,
}

/// Median with missing values treated as `+inf`; mean of the middle pair for
/// even counts.
pub(crate) fn median_inf(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    m.is_finite().then_some(m)
}

/// Runs every labelled config under every seed (overriding each config's own
/// seed) and reports per-config medians. Independent runs execute in
/// parallel; each has its own state and streams, so the report does not
/// depend on scheduling.
pub fn compare_runs(cfgs: &[(String, ScenarioConfig)], seeds: &[u64]) -> Result<ComparisonReport> {
    if cfgs.is_empty() || seeds.is_empty() {
        return Err(Error::config("compare needs at least one config and one seed"));
    }
    for (label, cfg) in cfgs {
        cfg.validate()
            .map_err(|e| Error::config(format!("config `{label}`: {e}")))?;
    }
    let jobs: Vec<(usize, u64)> = (0..cfgs.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let mut cfg = cfgs[c].1.clone();
            cfg.seed = seed;
            match run_scenario(&cfg) {
                Ok((_, s)) => Ok(RunRecord {
                    seed,
                    average_error_m: Some(s.average_error_m),
                    final_error_m: Some(s.final_error_m),
                    convergence_step: s.convergence_step,
                    error: None,
                }),
                Err(e @ Error::Degenerate(_)) => Ok(RunRecord {
                    seed,
                    average_error_m: None,
                    final_error_m: None,
                    convergence_step: None,
                    error: Some(e.to_string()),
                }),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let configs = cfgs
        .iter()
        .zip(records.chunks(seeds.len()))
        .map(|((label, cfg), runs)| ConfigComparison {
            label: label.clone(),
            config_hash: config_hash(cfg),
            median_average_error_m: median_inf(runs.iter().map(|r| r.average_error_m)),
            median_final_error_m: median_inf(runs.iter().map(|r| r.final_error_m)),
            median_convergence_step: median_inf(
                runs.iter().map(|r| r.convergence_step.map(|s| s as f64)),
            ),
            converged_runs: runs.iter().filter(|r| r.convergence_step.is_some()).count(),
            runs: runs.to_vec(),
        })
        .collect();
    Ok(ComparisonReport {
        format_version: COMPARISON_FORMAT_VERSION,
        seeds: seeds.to_vec(),
        configs,
    })
}
