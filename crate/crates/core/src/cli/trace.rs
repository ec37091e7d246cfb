//! Per-step trace files. Both formats carry the same fields and values.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::epidemic::RunRecord;

pub const SCHEMA_VERSION: u32 = 1;

pub const FIELDS: [&str; 11] = [
    "schema_version",
    "step",
    "white",
    "red",
    "black",
    "regular",
    "grey_cells",
    "empty_cells",
    "wavefront_max",
    "wavefront_mean",
    "cells",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Ndjson,
    Csv,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Ndjson => "ndjson",
            Format::Csv => "csv",
        }
    }
}

/// One trace line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub schema_version: u32,
    pub step: u64,
    pub white: usize,
    pub red: usize,
    pub black: usize,
    pub regular: Option<bool>,
    pub grey_cells: Option<usize>,
    pub empty_cells: Option<usize>,
    pub wavefront_max: Option<u32>,
    pub wavefront_mean: Option<f64>,
    pub cells: Option<String>,
}

pub fn records(run: &RunRecord) -> Vec<TraceRecord> {
    run.series
        .iter()
        .map(|s| {
            let c = s.instruments.as_ref().and_then(|i| i.cells.as_ref());
            TraceRecord {
                schema_version: SCHEMA_VERSION,
                step: s.step,
                white: s.counts.white,
                red: s.counts.red,
                black: s.counts.black,
                regular: c.map(|c| c.regular),
                grey_cells: c.map(|c| c.grey_cells),
                empty_cells: c.map(|c| c.empty_cells),
                wavefront_max: c.and_then(|c| c.wavefront_max),
                wavefront_mean: c.and_then(|c| c.wavefront_mean),
                cells: c.and_then(|c| c.dump.clone()),
            }
        })
        .collect()
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn values(r: &TraceRecord) -> [Option<String>; 11] {
    [
        Some(r.schema_version.to_string()),
        Some(r.step.to_string()),
        Some(r.white.to_string()),
        Some(r.red.to_string()),
        Some(r.black.to_string()),
        r.regular.map(|b| b.to_string()),
        r.grey_cells.map(|v| v.to_string()),
        r.empty_cells.map(|v| v.to_string()),
        r.wavefront_max.map(|v| v.to_string()),
        r.wavefront_mean.map(fmt_f64),
        r.cells.clone(),
    ]
}

pub fn write_ndjson<W: Write>(out: &mut W, records: &[TraceRecord]) -> io::Result<()> {
    for r in records {
        let mut line = String::from("{");
        for (i, (name, v)) in FIELDS.iter().zip(values(r)).enumerate() {
            if i > 0 {
                line.push(',');
            }
            let v = match (v, *name) {
                (None, _) => "null".to_string(),
                // dump codes are plain ASCII without quotes or backslashes
                (Some(s), "cells") => format!("\"{s}\""),
                (Some(s), _) => s,
            };
            line.push_str(&format!("\"{name}\":{v}"));
        }
        line.push_str("}\n");
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn write_csv<W: Write>(out: W, records: &[TraceRecord]) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIELDS)?;
    for r in records {
        w.write_record(values(r).iter().map(|v| v.as_deref().unwrap_or("")))?;
    }
    w.flush()
}

pub fn write<W: Write>(out: &mut W, format: Format, records: &[TraceRecord]) -> io::Result<()> {
    match format {
        Format::Ndjson => write_ndjson(out, records),
        Format::Csv => write_csv(out, records),
    }
}

pub fn emit_trace(run: &RunRecord, format: Format, path: &std::path::Path) -> io::Result<()> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    write(&mut f, format, &records(run))?;
    f.flush()
}

pub fn read_ndjson<R: BufRead>(input: R) -> io::Result<Vec<TraceRecord>> {
    input
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| {
            serde_json::from_str(&l?).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
        })
        .collect()
}

pub fn read_csv<R: io::Read>(input: R) -> io::Result<Vec<TraceRecord>> {
    fn opt<T: std::str::FromStr>(s: &str) -> io::Result<Option<T>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, format!("bad value `{s}`")))
        }
    }
    fn req<T: std::str::FromStr>(s: &str) -> io::Result<T> {
        opt(s)?.ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "missing value"))
    }
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let f = |i: usize| row.get(i).unwrap_or("");
        out.push(TraceRecord {
            schema_version: req(f(0))?,
            step: req(f(1))?,
            white: req(f(2))?,
            red: req(f(3))?,
            black: req(f(4))?,
            regular: opt(f(5))?,
            grey_cells: opt(f(6))?,
            empty_cells: opt(f(7))?,
            wavefront_max: opt(f(8))?,
            wavefront_mean: opt(f(9))?,
            cells: opt(f(10))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Region;
    use crate::params::{DumpCells, MobilityMode, SimParams};

    fn run(n: usize, seed: u64) -> RunRecord {
        let mut p = SimParams::new(
            Region::square(16.0).unwrap(),
            n,
            3.0,
            MobilityMode::Standard { rho: 1.0 },
        )
        .with_seed(seed);
        p.instrumentation.cells = true;
        p.instrumentation.dump_cells = DumpCells::Each;
        crate::epidemic::run(&p).unwrap()
    }

    fn bytes(r: &RunRecord, f: Format) -> Vec<u8> {
        let mut v = Vec::new();
        write(&mut v, f, &records(r)).unwrap();
        v
    }

    #[test]
    fn single_agent_run_has_two_records() {
        let r = run(1, 0);
        let recs = records(&r);
        assert_eq!(recs.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn rerun_is_byte_identical() {
        for f in [Format::Ndjson, Format::Csv] {
            assert_eq!(bytes(&run(256, 3), f), bytes(&run(256, 3), f));
        }
    }

    #[test]
    fn formats_agree() {
        let r = run(256, 4);
        let a = read_ndjson(&bytes(&r, Format::Ndjson)[..]).unwrap();
        let b = read_csv(&bytes(&r, Format::Csv)[..]).unwrap();
        assert_eq!(a, b);
        // the 17-digit rendering round-trips exactly
        assert_eq!(a, records(&r));
    }

    #[test]
    fn float_rendering() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(2.0).parse::<f64>().unwrap(), 2.0);
    }
}
