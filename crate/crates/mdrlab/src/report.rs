//! Versioned CSV logs: one row per training step.
//!
//! Floats are written with `{:.16e}` (17 significant digits), which
//! round-trips every finite f64 exactly, so a re-run under the same
//! manifest produces byte-identical files. Wall-clock timings go to a
//! separate sidecar precisely because they can never be reproducible.

use crate::error::{Error, Result};

pub const RUN_SCHEMA: &str = "run-v1";
pub const TIMING_SCHEMA: &str = "timing-v1";

pub const RUN_COLUMNS: [&str; 17] = [
    "step",
    "env_steps",
    "reward_mean",
    "reward_std",
    "episodes",
    "delta_pi_minus",
    "delta_pi_plus",
    "abs_dr_mean",
    "abs_dr_max",
    "delta_eps",
    "clip_fraction",
    "entropy",
    "loss_total",
    "loss_clip",
    "loss_value",
    "standard_updates",
    "rectification_updates",
];

/// One training step's worth of metrics. Reward statistics cover episodes
/// that finished during the step's collection phase and are NaN when none
/// did.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub step: usize,
    pub env_steps: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub episodes: usize,
    pub delta_pi_minus: f64,
    pub delta_pi_plus: f64,
    pub abs_dr_mean: f64,
    pub abs_dr_max: f64,
    pub delta_eps: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
    pub loss_total: f64,
    pub loss_clip: f64,
    pub loss_value: f64,
    pub standard_updates: usize,
    pub rectification_updates: usize,
}

/// 17-significant-digit field: round-trips every finite f64 exactly.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

use format_float as fmt;

pub fn run_header() -> String {
    format!("# {RUN_SCHEMA}\n{}\n", RUN_COLUMNS.join(","))
}

pub fn format_record(r: &RunRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
        r.step,
        r.env_steps,
        fmt(r.reward_mean),
        fmt(r.reward_std),
        r.episodes,
        fmt(r.delta_pi_minus),
        fmt(r.delta_pi_plus),
        fmt(r.abs_dr_mean),
        fmt(r.abs_dr_max),
        fmt(r.delta_eps),
        fmt(r.clip_fraction),
        fmt(r.entropy),
        fmt(r.loss_total),
        fmt(r.loss_clip),
        fmt(r.loss_value),
        r.standard_updates,
        r.rectification_updates,
    )
}

/// Appended when a run dies mid-flight; the rows above it stay valid.
pub fn format_error_row(message: &str) -> String {
    format!("# error: {}\n", message.replace('\n', " "))
}

pub fn to_run_csv(records: &[RunRecord]) -> String {
    let mut s = run_header();
    for r in records {
        s.push_str(&format_record(r));
    }
    s
}

/// Parsed CSV: records plus the trailing error marker, if the run died.
#[derive(Debug, Clone, Default)]
pub struct RunTable {
    pub records: Vec<RunRecord>,
    pub error: Option<String>,
}

pub fn parse_run_csv(text: &str) -> Result<RunTable> {
    let mut lines = text.lines();
    let marker = lines.next().unwrap_or("");
    let found = marker.strip_prefix("# ").unwrap_or(marker);
    if found != RUN_SCHEMA {
        return Err(Error::Csv(format!(
            "schema mismatch: expected '{RUN_SCHEMA}', found '{found}'"
        )));
    }
    let header = lines.next().unwrap_or("");
    if header != RUN_COLUMNS.join(",") {
        return Err(Error::Csv(format!("unexpected column header '{header}'")));
    }
    let mut table = RunTable::default();
    for (i, line) in lines.enumerate() {
        let lineno = i + 3;
        if line.is_empty() {
            continue;
        }
        if let Some(msg) = line.strip_prefix("# error: ") {
            table.error = Some(msg.to_string());
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != RUN_COLUMNS.len() {
            return Err(Error::Csv(format!(
                "line {lineno}: expected {} fields, found {}",
                RUN_COLUMNS.len(),
                parts.len()
            )));
        }
        let u = |j: usize| -> Result<usize> {
            parts[j]
                .parse()
                .map_err(|_| Error::Csv(format!("line {lineno}: bad integer '{}'", parts[j])))
        };
        let f = |j: usize| -> Result<f64> {
            parts[j]
                .parse()
                .map_err(|_| Error::Csv(format!("line {lineno}: bad float '{}'", parts[j])))
        };
        table.records.push(RunRecord {
            step: u(0)?,
            env_steps: u(1)?,
            reward_mean: f(2)?,
            reward_std: f(3)?,
            episodes: u(4)?,
            delta_pi_minus: f(5)?,
            delta_pi_plus: f(6)?,
            abs_dr_mean: f(7)?,
            abs_dr_max: f(8)?,
            delta_eps: f(9)?,
            clip_fraction: f(10)?,
            entropy: f(11)?,
            loss_total: f(12)?,
            loss_clip: f(13)?,
            loss_value: f(14)?,
            standard_updates: u(15)?,
            rectification_updates: u(16)?,
        });
    }
    Ok(table)
}

pub fn timing_header() -> String {
    format!("# {TIMING_SCHEMA}\nstep,seconds\n")
}

pub fn format_timing_row(step: usize, seconds: f64) -> String {
    format!("{step},{seconds:.3}\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(step: usize) -> RunRecord {
        RunRecord {
            step,
            env_steps: step * 512,
            reward_mean: 0.1 + step as f64 * std::f64::consts::PI,
            reward_std: 1.0 / 3.0,
            episodes: 17,
            delta_pi_minus: 1e-17,
            delta_pi_plus: 0.0123456789012345678,
            abs_dr_mean: 2.2250738585072014e-308,
            abs_dr_max: 1.7e12,
            delta_eps: 0.0,
            clip_fraction: 0.25,
            entropy: 1.0986122886681098,
            loss_total: -0.5,
            loss_clip: 0.25,
            loss_value: 0.125,
            standard_updates: 8,
            rectification_updates: 4,
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let records = vec![sample(0), sample(1), sample(2)];
        let csv = to_run_csv(&records);
        let table = parse_run_csv(&csv).unwrap();
        assert_eq!(table.records, records, "every f64 must survive bit-for-bit");
        assert!(table.error.is_none());
        assert_eq!(to_run_csv(&table.records), csv, "re-serialization is byte-identical");
    }

    #[test]
    fn nan_rewards_survive() {
        let mut r = sample(0);
        r.reward_mean = f64::NAN;
        r.reward_std = f64::NAN;
        let csv = to_run_csv(&[r]);
        let table = parse_run_csv(&csv).unwrap();
        assert!(table.records[0].reward_mean.is_nan());
        assert!(table.records[0].reward_std.is_nan());
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let err = parse_run_csv("# run-v0\nstep\n").unwrap_err();
        assert!(err.to_string().contains("schema"), "{err}");
        let err = parse_run_csv("# run-v1\nstep,foo\n").unwrap_err();
        assert!(err.to_string().contains("header"), "{err}");
    }

    #[test]
    fn malformed_rows_are_rejected() {
        let csv = format!("{}1,2,3\n", run_header());
        let err = parse_run_csv(&csv).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn error_row_is_captured() {
        let mut csv = to_run_csv(&[sample(0)]);
        csv.push_str(&format_error_row("training aborted at step 1, standard update 0: boom"));
        let table = parse_run_csv(&csv).unwrap();
        assert_eq!(table.records.len(), 1);
        assert_eq!(
            table.error.as_deref(),
            Some("training aborted at step 1, standard update 0: boom")
        );
    }

    #[test]
    fn header_is_versioned() {
        assert!(run_header().starts_with("# run-v1\n"));
        assert!(timing_header().starts_with("# timing-v1\n"));
    }
}
