//! Run artifacts: `trajectory.csv`, `metrics.csv`, `summary.json` and `sweep.csv`.
//!
//! Numbers are written with six decimals so that identical runs produce
//! identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::engine::{MetricRow, RunResult, Summary, SweepRow, TrajectoryRow};
use crate::error::{Error, Result};

pub const TRAJECTORY_HEADER: &str =
    "time_s,vehicle_id,leg,virtual_pos_m,speed_mps,accel_mps2,est_target_pos_m,pos_est_err_m,link_up";
pub const METRICS_HEADER: &str = "time_s,vehicle_id,target_id,est_target_pos_m,true_target_pos_m,pos_est_err_m,speed_est_err_mps,link_up,horizon_exhausted";
pub const SWEEP_HEADER: &str = "prediction_step_s,max_abs_pos_err_m,rms_pos_err_m,mean_step_wallclock_ms";

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

pub fn write_trajectory<W: Write>(mut w: W, rows: &[TrajectoryRow]) -> std::io::Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{:.6},{},{},{:.6},{:.6},{:.6},{},{},{}",
            r.time,
            r.vehicle,
            r.leg,
            r.position,
            r.speed,
            r.accel,
            opt(r.est_target_pos),
            opt(r.pos_est_err),
            u8::from(r.link_up)
        )?;
    }
    Ok(())
}

pub fn write_metrics<W: Write>(mut w: W, rows: &[MetricRow]) -> std::io::Result<()> {
    writeln!(w, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{:.6},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.time,
            r.vehicle,
            r.target,
            r.est_target_pos,
            r.true_target_pos,
            r.pos_err,
            r.speed_err,
            u8::from(r.link_up),
            u8::from(r.horizon_exhausted)
        )?;
    }
    Ok(())
}

pub fn write_sweep<W: Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{:.6},{:.6},{:.6},{:.6}",
            r.prediction_step_s, r.max_abs_pos_err_m, r.rms_pos_err_m, r.mean_step_wallclock_ms
        )?;
    }
    Ok(())
}

pub fn summary_json(summary: &Summary) -> String {
    serde_json::to_string_pretty(summary).expect("summary serializes")
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Writes the three per-run files into `dir`, creating it if needed.
pub fn write_run(dir: &Path, result: &RunResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join("trajectory.csv"), |w| write_trajectory(w, &result.trajectory))?;
    write_file(&dir.join("metrics.csv"), |w| write_metrics(w, &result.metrics))?;
    write_file(&dir.join("summary.json"), |w| {
        writeln!(w, "{}", summary_json(&result.summary))
    })
}

pub fn write_sweep_file(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_file(path, |w| write_sweep(w, rows))
}
