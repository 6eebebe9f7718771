//! CSV and text outputs: per-run round logs, loss/accuracy curves against
//! wall clock, the summary table, and calibration/frontier exports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! re-parsing a file reproduces the in-memory values exactly and identical
//! configs produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fedcomv::RoundLog;
use crate::quantizer::{VarianceMap, MAX_BITS};

use super::{ExperimentResults, OracleReport, SummaryRow};

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn round_log_csv(logs: &[RoundLog]) -> String {
    let mut out = String::from("n,duration_s,cum_time_s,q_bar,train_loss,test_acc,bits\n");
    for log in logs {
        let bits: Vec<String> = log.bits.bits().iter().map(u8::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            log.round,
            log.duration_s,
            log.cum_time_s,
            log.q_bar,
            log.train_loss,
            log.test_acc,
            bits.join(";")
        );
    }
    out
}

fn curves_csv(logs: &[RoundLog]) -> String {
    let mut out = String::from("cum_time_s,train_loss,test_acc\n");
    for log in logs {
        let _ = writeln!(out, "{},{},{}", log.cum_time_s, log.train_loss, log.test_acc);
    }
    out
}

pub fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut out = String::from("policy,mean_s,p90_s,p10_s,gain_pct,n_converged\n");
    for row in summary {
        let gain = row
            .gain_vs_reference_pct
            .map(|g| g.to_string())
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.policy, row.mean_s, row.p90_s, row.p10_s, gain, row.n_converged
        );
    }
    out
}

/// Re-parse a summary CSV into rows; inverse of [`summary_csv`].
pub fn parse_summary_csv(contents: &str) -> Result<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for (idx, line) in contents.lines().enumerate() {
        if idx == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Config(format!(
                "summary line {idx} has {} fields, expected 6",
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Config(format!("bad float {s:?} on line {idx}")))
        };
        rows.push(SummaryRow {
            policy: fields[0].to_string(),
            mean_s: parse(fields[1])?,
            p90_s: parse(fields[2])?,
            p10_s: parse(fields[3])?,
            gain_vs_reference_pct: if fields[4].is_empty() {
                None
            } else {
                Some(parse(fields[4])?)
            },
            n_converged: fields[5]
                .parse()
                .map_err(|_| Error::Config(format!("bad count {:?} on line {idx}", fields[5])))?,
        });
    }
    Ok(rows)
}

pub fn summary_text(summary: &[SummaryRow], reference: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>14} {:>14} {:>14} {:>10} {:>12}",
        "policy", "mean_s", "p90_s", "p10_s", "gain_pct", "n_converged"
    );
    for row in summary {
        let gain = row
            .gain_vs_reference_pct
            .map(|g| format!("{g:.1}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<14} {:>14.4e} {:>14.4e} {:>14.4e} {:>10} {:>12}",
            row.policy, row.mean_s, row.p90_s, row.p10_s, gain, row.n_converged
        );
    }
    let _ = writeln!(out, "gain reference: {reference} (mean of per-seed time ratios, minus one)");
    out
}

/// Write all experiment outputs under `dir`; returns the created paths.
pub fn emit_outputs(results: &ExperimentResults, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for run in &results.runs {
        let log_path = dir.join(format!("runlog_{}_{}.csv", run.policy, run.seed));
        write_file(&log_path, &round_log_csv(&run.logs))?;
        written.push(log_path);
        let curve_path = dir.join(format!("curves_{}_{}.csv", run.policy, run.seed));
        write_file(&curve_path, &curves_csv(&run.logs))?;
        written.push(curve_path);
    }
    let csv_path = dir.join("summary.csv");
    write_file(&csv_path, &summary_csv(&results.summary))?;
    written.push(csv_path);
    let text_path = dir.join("summary.txt");
    write_file(&text_path, &summary_text(&results.summary, &results.reference))?;
    written.push(text_path);
    Ok(written)
}

/// Calibration table as `b,q` rows.
pub fn calibration_csv(vmap: &VarianceMap) -> String {
    let mut out = String::from("b,q\n");
    for b in 1..=MAX_BITS {
        let _ = writeln!(out, "{},{}", b, vmap.q(b));
    }
    out
}

/// Frontier rows as `omega,r,d,t_hat`.
pub fn frontier_csv(rows: &[(f64, f64, f64, f64)]) -> String {
    let mut out = String::from("omega,r,d,t_hat\n");
    for (omega, r, d, t_hat) in rows {
        let _ = writeln!(out, "{omega},{r},{d},{t_hat}");
    }
    out
}

/// Write oracle outputs under `dir`; returns the created paths.
pub fn emit_oracle_outputs(report: &OracleReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let frontier_path = dir.join("frontier.csv");
    write_file(&frontier_path, &frontier_csv(&report.frontier))?;
    written.push(frontier_path);

    let mut text = String::new();
    let _ = writeln!(text, "chain states: {}", report.chain_states);
    let _ = writeln!(
        text,
        "optimal proxy point: r = {}, d = {}, t_hat = {}",
        report.optimal_point.rounds_cost, report.optimal_point.duration, report.optimal_proxy_time
    );
    for (state, bits) in report.optimal_policy.0.iter().enumerate() {
        let joined: Vec<String> = bits.bits().iter().map(u8::to_string).collect();
        let _ = writeln!(text, "state {state}: bits = {}", joined.join(";"));
    }
    if let Some((end, rel)) = &report.ffw_end {
        let _ = writeln!(
            text,
            "fluid trajectory end: r = {}, d = {} (relative distance to optimum {rel:.3e})",
            end.rounds_cost, end.duration
        );
    }
    if let Some(check) = &report.check {
        let _ = writeln!(
            text,
            "convergence check: {:.1}% of trials within radius (max relative deviation {:.3e})",
            100.0 * check.fraction_within,
            check.max_rel_deviation
        );
    }
    let report_path = dir.join("oracle_report.txt");
    write_file(&report_path, &text)?;
    written.push(report_path);
    Ok(written)
}
