//! CSV output for run logs and TD sweeps. Floats are written with 17
//! significant digits so every value parses back to the same double.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::ascent::RunLog;
use crate::error::Result;
use crate::td0::TdRunStats;

/// Round-trip float formatting.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub const ASCENT_HEADER: [&str; 11] =
    ["run_id", "seed", "t", "J", "grad_norm", "top_eig", "region", "xi_norm", "d_norm", "p_norm", "q_norm"];

/// One row per iteration; `top_eig` and `region` are blank off the logging
/// cadence.
pub fn write_ascent_csv<W: Write>(out: W, logs: &[(String, &RunLog)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ASCENT_HEADER)?;
    for (run_id, log) in logs {
        for r in &log.records {
            w.write_record([
                run_id.clone(),
                log.seed.to_string(),
                r.t.to_string(),
                fmt_f64(r.j),
                fmt_f64(r.grad_norm),
                fmt_opt(r.top_eig),
                r.region.map(|g| g.label().to_string()).unwrap_or_else(|| "unlabeled".into()),
                fmt_f64(r.sample.xi_norm()),
                fmt_f64(r.sample.d_norm()),
                fmt_opt(r.sample.p_norm()),
                fmt_opt(r.sample.q_norm()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub const TD_TRACE_HEADER: [&str; 5] = ["run_id", "k", "sq_error", "step_size", "seed"];

/// Per-step trace of runs that recorded their path.
pub fn write_td_trace_csv<W: Write>(out: W, runs: &[(String, u64, &TdRunStats)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TD_TRACE_HEADER)?;
    for (run_id, seed, stats) in runs {
        for (k, (e, a)) in stats.per_step_sq_error.iter().zip(&stats.step_sizes).enumerate() {
            w.write_record([run_id.clone(), k.to_string(), fmt_f64(*e), fmt_f64(*a), seed.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of a TD sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdSummaryRow {
    pub run_id: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub start: String,
    pub seed: u64,
    pub sq_error: f64,
    pub bound: f64,
    pub stationary_bound: f64,
    pub tau_mix: usize,
    pub fourth_moment: f64,
}

pub const TD_SUMMARY_HEADER: [&str; 9] =
    ["run_id", "K", "start", "seed", "sq_error", "bound", "stationary_bound", "tau_mix", "fourth_moment"];

pub fn write_td_summary_csv<W: Write>(out: W, rows: &[TdSummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TD_SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.run_id.clone(),
            r.k.to_string(),
            r.start.clone(),
            r.seed.to_string(),
            fmt_f64(r.sq_error),
            fmt_f64(r.bound),
            fmt_f64(r.stationary_bound),
            r.tau_mix.to_string(),
            fmt_f64(r.fourth_moment),
        ])?;
    }
    w.flush()?;
    Ok(())
}
