//! Sweep summary CSV: one row per (point, replica) and one aggregate row per point.

use std::io::{self, Write};

use super::trace::fmt_f64;
use crate::epidemic::Outcome;
use crate::experiments::SweepResult;
use crate::geometry::Region;

pub const COLUMNS: [&str; 24] = [
    "row",
    "point",
    "replica",
    "seed",
    "shape",
    "size",
    "diameter",
    "n",
    "radius",
    "rho",
    "k",
    "status",
    "failed",
    "completion_time",
    "failed_at",
    "t_r_over_d",
    "t_rho_over_d",
    "ecc",
    "runs",
    "completed",
    "median",
    "mean",
    "q10",
    "q90",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn optf(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_summary<W: Write>(out: W, sweep: &SweepResult) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for (i, pt) in sweep.points.iter().enumerate() {
        let p = &pt.params;
        let (shape, size) = match p.region {
            Region::Square { side } => ("square", side),
            Region::Disk { radius } => ("disk", 2.0 * radius),
        };
        let d = p.region.diameter();
        let head = |row: &str, replica: String, seed: String| {
            vec![
                row.to_string(),
                i.to_string(),
                replica,
                seed,
                shape.to_string(),
                fmt_f64(size),
                fmt_f64(d),
                p.n.to_string(),
                fmt_f64(p.radius),
                fmt_f64(p.rho()),
                p.k.to_string(),
            ]
        };
        for r in &pt.runs {
            let (status, failed_at) = match (&r.outcome, &r.error) {
                (Some(Outcome::Completed(_)), _) => ("completed", None),
                (Some(Outcome::Failed(t)), _) => ("failed", Some(*t)),
                (Some(Outcome::Exhausted(t)), _) => ("exhausted", Some(*t)),
                (None, _) => ("error", None),
            };
            let t = r.completion_time().map(|t| t as f64);
            let mut row = head("run", r.replica.to_string(), r.seed.to_string());
            row.extend([
                status.to_string(),
                r.failed().to_string(),
                opt(r.completion_time()),
                opt(failed_at),
                optf(t.map(|t| t * p.radius / d)),
                optf(t.map(|t| t * p.rho() / d)),
                optf(r.ecc),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ]);
            w.write_record(&row)?;
        }
        let a = &pt.aggregate;
        let mut row = head("aggregate", String::new(), String::new());
        row.extend([
            String::new(),
            (a.completed < a.runs).to_string(),
            String::new(),
            String::new(),
            optf(a.median.map(|t| t * p.radius / d)),
            optf(a.median.map(|t| t * p.rho() / d)),
            String::new(),
            a.runs.to_string(),
            a.completed.to_string(),
            optf(a.median),
            optf(a.mean),
            optf(a.q10),
            optf(a.q90),
        ]);
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn emit_summary(sweep: &SweepResult, path: &std::path::Path) -> io::Result<()> {
    let f = std::fs::File::create(path)?;
    let mut b = io::BufWriter::new(f);
    write_summary(&mut b, sweep)?;
    b.flush()
}
