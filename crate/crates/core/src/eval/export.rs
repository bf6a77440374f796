//! Plot-ready CSV outputs with fixed headers.

use super::retrieval_exp::RetrievalExperimentResult;
use super::sweep::SweepRow;
use super::WaypointRow;
use crate::error::Result;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Per-method reports across budgets:
/// budget_m, method, acc_5m, acc_10m, acc_15m, mean_error_m, recall, n_queries.
pub fn write_reports_csv(results: &[RetrievalExperimentResult], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "budget_m,method,acc_5m,acc_10m,acc_15m,mean_error_m,recall,n_queries"
    )?;
    for res in results {
        for (method, report) in &res.reports {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                res.budget,
                method.label(),
                report.acc_5m,
                report.acc_10m,
                report.acc_15m,
                report.mean_error,
                report.recall,
                report.n_queries
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sweep table: sigma_m, fused_me_m, raw_me_m, improvement_ratio.
pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "sigma_m,fused_me_m,raw_me_m,improvement_ratio")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.sigma, r.fused_mean_error, r.raw_mean_error, r.improvement
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format complementary CDFs: series, threshold_m, frac_at_least.
pub fn write_cdf_csv(series: &[(&str, &[(u32, f64)])], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "series,threshold_m,frac_at_least")?;
    for (name, rows) in series {
        for (t, frac) in *rows {
            writeln!(w, "{name},{t},{frac}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-ride aligned waypoint traces: ride_id, t, series, x, y.
pub fn write_waypoints_csv(rows: &[WaypointRow], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ride_id,t,series,x,y")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.ride_id, r.t, r.series, r.x, r.y)?;
    }
    w.flush()?;
    Ok(())
}

/// Paired error samples in long format: source, error_m.
pub fn write_e2e_errors_csv(raw: &[f64], fused: &[f64], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "source,error_m")?;
    for e in raw {
        writeln!(w, "raw,{e}")?;
    }
    for e in fused {
        writeln!(w, "fused,{e}")?;
    }
    w.flush()?;
    Ok(())
}
