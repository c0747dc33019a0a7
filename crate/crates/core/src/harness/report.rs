//! CSV persistence for iteration reports.
//!
//! Floats are written in Rust's shortest round-trip decimal form, so reading
//! a file back reproduces every value bit for bit. The weight vector is one
//! field with `;`-separated components. Wall-clock times go to a separate
//! `timing.csv` so that `reports.csv` is a pure function of the config.

use std::path::Path;

use crate::metrics::{IterationReport, RlIterationReport};
use crate::{Error, Result};

/// Header of `reports.csv`, in column order.
pub const REPORT_COLUMNS: &str = "iteration,delta,delta_se,phi_gap_norm,true_cost,true_cost_se,\
excess_cost,performance_ratio,kl,accepted,backtracks,step_norm,surrogate_before,surrogate_after,\
anchor_gap,grad_gap,clamped_ratios,cg_fallback,weights";

/// Header of the expert-training log.
pub const RL_REPORT_COLUMNS: &str =
    "iteration,true_cost,true_cost_se,kl,accepted,backtracks,surrogate_before,surrogate_after";

pub const TIMING_COLUMNS: &str = "iteration,wall_secs";

fn report_fields(r: &IterationReport) -> Vec<String> {
    let weights: Vec<String> = r.weights.iter().map(|w| w.to_string()).collect();
    vec![
        r.iteration.to_string(),
        r.delta.to_string(),
        r.delta_se.to_string(),
        r.phi_gap_norm.to_string(),
        r.true_cost.to_string(),
        r.true_cost_se.to_string(),
        r.excess_cost.to_string(),
        r.performance_ratio.to_string(),
        r.kl.to_string(),
        r.accepted.to_string(),
        r.backtracks.to_string(),
        r.step_norm.to_string(),
        r.surrogate_before.to_string(),
        r.surrogate_after.to_string(),
        r.anchor_gap.to_string(),
        r.grad_gap.to_string(),
        r.clamped_ratios.to_string(),
        r.cg_fallback.to_string(),
        weights.join(";"),
    ]
}

fn write_rows<I>(path: &Path, header: &str, rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let csv_err = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut out = csv::Writer::from_path(path).map_err(csv_err)?;
    out.write_record(header.split(',')).map_err(csv_err)?;
    for row in rows {
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Writes `reports.csv` with the [`REPORT_COLUMNS`] header.
pub fn write_reports(reports: &[IterationReport], path: impl AsRef<Path>) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::EmptyBatch);
    }
    write_rows(path.as_ref(), REPORT_COLUMNS, reports.iter().map(report_fields))
}

/// Writes reports for several learners with a leading `learner` column.
pub fn write_comparison(
    runs: &[(String, Vec<IterationReport>)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let header = format!("learner,{REPORT_COLUMNS}");
    let rows = runs.iter().flat_map(|(name, reports)| {
        reports.iter().map(move |r| {
            let mut row = vec![name.clone()];
            row.extend(report_fields(r));
            row
        })
    });
    write_rows(path.as_ref(), &header, rows)
}

pub fn write_timing(wall_secs: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let rows = wall_secs
        .iter()
        .enumerate()
        .map(|(i, t)| vec![i.to_string(), t.to_string()]);
    write_rows(path.as_ref(), TIMING_COLUMNS, rows)
}

pub fn write_rl_reports(reports: &[RlIterationReport], path: impl AsRef<Path>) -> Result<()> {
    let rows = reports.iter().map(|r| {
        vec![
            r.iteration.to_string(),
            r.true_cost.to_string(),
            r.true_cost_se.to_string(),
            r.kl.to_string(),
            r.accepted.to_string(),
            r.backtracks.to_string(),
            r.surrogate_before.to_string(),
            r.surrogate_after.to_string(),
        ]
    });
    write_rows(path.as_ref(), RL_REPORT_COLUMNS, rows)
}

/// Reads a file written by [`write_reports`]. `wall_secs` is zero.
pub fn read_reports(path: impl AsRef<Path>) -> Result<Vec<IterationReport>> {
    let path = path.as_ref();
    let fmt = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
    let header = reader.headers().map_err(|e| fmt(e.to_string()))?;
    let header: Vec<&str> = header.iter().collect();
    if header.join(",") != REPORT_COLUMNS {
        return Err(fmt(format!("unexpected header {:?}", header.join(","))));
    }
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| fmt(e.to_string()))?;
        let at = |col: usize| -> Result<&str> {
            record
                .get(col)
                .ok_or_else(|| fmt(format!("row {}: missing column {col}", line + 1)))
        };
        let float = |col: usize| -> Result<f64> {
            at(col)?
                .parse()
                .map_err(|e| fmt(format!("row {}, column {col}: {e}", line + 1)))
        };
        let int = |col: usize| -> Result<usize> {
            at(col)?
                .parse()
                .map_err(|e| fmt(format!("row {}, column {col}: {e}", line + 1)))
        };
        let boolean = |col: usize| -> Result<bool> {
            at(col)?
                .parse()
                .map_err(|e| fmt(format!("row {}, column {col}: {e}", line + 1)))
        };
        let weights_field = at(18)?;
        let weights = if weights_field.is_empty() {
            Vec::new()
        } else {
            weights_field
                .split(';')
                .map(|w| w.parse().map_err(|e| fmt(format!("row {}: weights: {e}", line + 1))))
                .collect::<Result<Vec<f64>>>()?
        };
        out.push(IterationReport {
            iteration: int(0)?,
            delta: float(1)?,
            delta_se: float(2)?,
            phi_gap_norm: float(3)?,
            true_cost: float(4)?,
            true_cost_se: float(5)?,
            excess_cost: float(6)?,
            performance_ratio: float(7)?,
            kl: float(8)?,
            accepted: boolean(9)?,
            backtracks: int(10)?,
            step_norm: float(11)?,
            surrogate_before: float(12)?,
            surrogate_after: float(13)?,
            anchor_gap: float(14)?,
            grad_gap: float(15)?,
            clamped_ratios: int(16)?,
            cg_fallback: boolean(17)?,
            weights,
            wall_secs: 0.0,
        });
    }
    Ok(out)
}

/// Python script that plots `comparison.csv` (or any `reports.csv`).
pub const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plot learning curves from comparison.csv or reports.csv.

Usage: python3 plot.py [CSV] [OUTPUT.png]
"""
import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

src = sys.argv[1] if len(sys.argv) > 1 else "comparison.csv"
dst = sys.argv[2] if len(sys.argv) > 2 else "comparison.png"

series = defaultdict(lambda: defaultdict(list))
with open(src, newline="") as f:
    for row in csv.DictReader(f):
        name = row.get("learner", "run")
        for key in ("iteration", "phi_gap_norm", "excess_cost", "delta"):
            series[name][key].append(float(row[key]))

fig, axes = plt.subplots(1, 3, figsize=(15, 4))
for name, cols in series.items():
    for ax, key in zip(axes, ("phi_gap_norm", "excess_cost", "delta")):
        ax.plot(cols["iteration"], cols[key], label=name)
        ax.set_xlabel("iteration")
        ax.set_ylabel(key)
axes[0].set_yscale("log")
axes[0].legend()
fig.tight_layout()
fig.savefig(dst, dpi=120)
print(f"wrote {dst}")
"#;
