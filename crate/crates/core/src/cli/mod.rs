//! Command-line front end.

pub mod config;
pub mod summary;
pub mod trace;

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::epidemic::{self, ChainCheck, Outcome};
use crate::experiments;
use crate::instrument::{self, CellState, RunAudits, Tally};
use crate::params::DumpCells;

pub use config::{parse_config, Config, ConfigError};
pub use trace::Format;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUN: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "redwave", version, about = "Parsimonious flooding over mobile geometric networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed and REDWAVE_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Ndjson,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DumpArg {
    Never,
    Each,
    Final,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Single run; writes the per-step trace.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "ndjson")]
        format: FormatArg,
        #[arg(long, value_enum)]
        dump_cells: Option<DumpArg>,
        /// Exit with status 3 unless the run completes.
        #[arg(long)]
        expect_completion: bool,
    },
    /// Experiment plan; writes the summary CSV.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        expect_completion: bool,
    },
    /// Re-checks the instrument fields of a saved trace against its cell dumps.
    Audit {
        /// Trace file (.ndjson or .csv) written with cell dumps.
        trace: PathBuf,
    },
    /// Isolated agents at t = 0 and flooding from an isolated source.
    Isolated {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 200)]
        trials: u32,
        /// Trials of the isolated-source flooding experiment.
        #[arg(long, default_value_t = 100)]
        flood_trials: u32,
    },
}

#[derive(Debug)]
enum Failure {
    Config(ConfigError),
    Run(String),
    Io(io::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { source, .. } => Failure::Io(source),
            e => Failure::Config(e),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.into())
    }
}

impl From<crate::error::SimError> for Failure {
    fn from(e: crate::error::SimError) -> Self {
        Failure::Run(e.to_string())
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(execute(cli))
}

/// Runs a parsed command and returns the process exit status.
pub fn execute(cli: Cli) -> u8 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("config error [{}]: {e}", e.code());
            EXIT_CONFIG
        }
        Err(Failure::Run(e)) => {
            eprintln!("run error: {e}");
            EXIT_RUN
        }
        Err(Failure::Io(e)) => {
            eprintln!("i/o error: {e}");
            EXIT_IO
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Run {
            common,
            format,
            dump_cells,
            expect_completion,
        } => cmd_run(&common, format, dump_cells, expect_completion),
        Command::Sweep {
            common,
            expect_completion,
        } => cmd_sweep(&common, expect_completion),
        Command::Audit { trace } => cmd_audit(&trace),
        Command::Isolated {
            common,
            trials,
            flood_trials,
        } => cmd_isolated(&common, trials, flood_trials),
    }
}

fn output(dir: &Option<PathBuf>, name: &str) -> io::Result<Option<PathBuf>> {
    match dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            Ok(Some(d.join(name)))
        }
        None => Ok(None),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    s.push('\n');
    std::fs::write(path, s)
}

#[derive(Serialize)]
struct RunReport<'a> {
    outcome: &'a Outcome,
    completion_time: Option<u64>,
    failed_at: Option<u64>,
    seed: u64,
    source_agents: &'a [usize],
    chain: &'a ChainCheck,
    audits: Option<&'a RunAudits>,
}

fn cmd_run(
    common: &Common,
    format: FormatArg,
    dump: Option<DumpArg>,
    expect_completion: bool,
) -> Result<u8, Failure> {
    let cfg = parse_config(&common.config, common.seed)?;
    let mut params = cfg.params;
    if let Some(d) = dump {
        params.instrumentation.dump_cells = match d {
            DumpArg::Never => DumpCells::Never,
            DumpArg::Each => DumpCells::Each,
            DumpArg::Final => DumpCells::Final,
        };
        if params.instrumentation.dump_cells != DumpCells::Never {
            params.instrumentation.cells = true;
        }
    }
    let format = match format {
        FormatArg::Csv => Format::Csv,
        FormatArg::Ndjson => Format::Ndjson,
    };
    let rec = epidemic::run(&params)?;
    let records = trace::records(&rec);
    match output(&common.out, &format!("trace.{}", format.extension()))? {
        Some(path) => {
            let mut f = io::BufWriter::new(std::fs::File::create(&path)?);
            trace::write(&mut f, format, &records)?;
            f.flush()?;
            let report = RunReport {
                outcome: &rec.outcome,
                completion_time: rec.completion_time(),
                failed_at: rec.failed_at(),
                seed: params.seed,
                source_agents: &rec.source_agents,
                chain: &rec.chain,
                audits: rec.audits.as_ref(),
            };
            write_json(&path.with_file_name("run.json"), &report)?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            trace::write(&mut lock, format, &records)?;
        }
    }
    eprintln!("outcome: {:?}", rec.outcome);
    if rec.chain.violations > 0 {
        eprintln!("informer-chain violations: {}", rec.chain.violations);
    }
    let done = matches!(rec.outcome, Outcome::Completed(_));
    Ok(if expect_completion && !done { EXIT_RUN } else { EXIT_OK })
}

fn cmd_sweep(common: &Common, expect_completion: bool) -> Result<u8, Failure> {
    let cfg = parse_config(&common.config, common.seed)?;
    let plan = cfg.plan.ok_or_else(|| {
        Failure::Config(ConfigError::MissingKey("experiment".into()))
    })?;
    let result = experiments::replicate(&plan)?;
    match output(&common.out, "summary.csv")? {
        Some(path) => {
            summary::emit_summary(&result, &path)?;
            write_json(&path.with_file_name("sweep.json"), &result)?;
        }
        None => summary::write_summary(io::stdout().lock(), &result)?,
    }
    for (i, p) in result.points.iter().enumerate() {
        let a = &p.aggregate;
        eprintln!(
            "point {i}: {}/{} completed, median T = {}",
            a.completed,
            a.runs,
            a.median.map_or("-".into(), |m| m.to_string())
        );
    }
    let all_done = result.points.iter().all(|p| p.aggregate.completed == p.aggregate.runs);
    Ok(if expect_completion && !all_done { EXIT_RUN } else { EXIT_OK })
}

/// Per-field agreement between a trace and its recomputed instruments.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct AuditReport {
    pub dumped: usize,
    pub mismatches: Vec<String>,
    pub regular: Tally,
    pub grey_free: Tally,
    pub red_speed: Tally,
}

pub fn audit_records(records: &[trace::TraceRecord]) -> Result<AuditReport, String> {
    let mut rep = AuditReport::default();
    let mut prev: Option<(u64, instrument::CellStates)> = None;
    for r in records {
        let Some(dump) = &r.cells else {
            prev = None;
            continue;
        };
        let (grid, states) = instrument::decode_cells(dump).map_err(|e| format!("step {}: {e}", r.step))?;
        rep.dumped += 1;
        let reg = instrument::is_regular(&states, &grid);
        let grey = states.count(CellState::Grey);
        let empty = states.count(CellState::Empty);
        let wave = instrument::wavefront_distances(&states, &grid);
        let stats = wave.white_stats(&states);
        let mut check = |name: &str, ok: bool| {
            if !ok {
                rep.mismatches.push(format!("step {}: {name}", r.step));
            }
        };
        check("regular", r.regular == Some(reg.regular));
        check("grey_cells", r.grey_cells == Some(grey));
        check("empty_cells", r.empty_cells == Some(empty));
        check("wavefront_max", r.wavefront_max == stats.map(|s| s.0));
        check("wavefront_mean", r.wavefront_mean == stats.map(|s| s.1));
        rep.regular.record(reg.regular);
        rep.grey_free.record(grey == 0);
        if let Some((ps, p)) = &prev {
            if *ps + 1 == r.step {
                rep.red_speed.merge(instrument::red_wave_speed(p, &states, &grid));
            }
        }
        prev = Some((r.step, states));
    }
    Ok(rep)
}

fn rate(t: &Tally) -> String {
    t.rate().map_or("n/a".into(), |r| format!("{:.4}", r))
}

fn cmd_audit(path: &Path) -> Result<u8, Failure> {
    let file = std::fs::File::open(path)?;
    let records = if path.extension().is_some_and(|e| e == "csv") {
        trace::read_csv(file)?
    } else {
        trace::read_ndjson(io::BufReader::new(file))?
    };
    let rep = audit_records(&records).map_err(|e| Failure::Io(io::Error::new(io::ErrorKind::InvalidData, e)))?;
    let mut out = io::stdout().lock();
    writeln!(out, "records: {}  with cell dumps: {}", records.len(), rep.dumped)?;
    writeln!(out, "regular configurations: {} ({}/{})", rate(&rep.regular), rep.regular.holds, rep.regular.instances)?;
    writeln!(out, "grey-free configurations: {} ({}/{})", rate(&rep.grey_free), rep.grey_free.holds, rep.grey_free.instances)?;
    writeln!(out, "wave speed pairs: {} ({}/{})", rate(&rep.red_speed), rep.red_speed.holds, rep.red_speed.instances)?;
    for m in &rep.mismatches {
        writeln!(out, "mismatch: {m}")?;
    }
    Ok(if rep.mismatches.is_empty() { EXIT_OK } else { EXIT_RUN })
}

fn cmd_isolated(common: &Common, trials: u32, flood_trials: u32) -> Result<u8, Failure> {
    let cfg = parse_config(&common.config, common.seed)?;
    let p = cfg.params;
    let counts = experiments::isolated_trials(p.n, p.radius, trials, p.seed)?;
    let mean = counts.iter().map(|c| c.count as f64).sum::<f64>() / counts.len().max(1) as f64;
    let bound = experiments::isolated_bound(p.n, p.radius);
    let flood = experiments::threshold_experiment(&p, flood_trials)?;

    let mut csv_out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut csv_out);
        w.write_record(["trial", "seed", "count", "bound"])?;
        for (i, c) in counts.iter().enumerate() {
            w.write_record([
                i.to_string(),
                p.seed.wrapping_add(i as u64).to_string(),
                c.count.to_string(),
                trace::fmt_f64(c.bound),
            ])?;
        }
        w.flush()?;
    }
    match output(&common.out, "isolated.csv")? {
        Some(path) => {
            std::fs::write(&path, &csv_out)?;
            write_json(&path.with_file_name("threshold.json"), &flood)?;
        }
        None => io::stdout().lock().write_all(&csv_out)?,
    }
    eprintln!("mean isolated: {mean} (bound {bound}) over {trials} trials");
    eprintln!(
        "isolated-source flooding: {} failures in {} trials with an isolated source ({} skipped)",
        flood.failures, flood.isolated_sources_found, flood.skipped
    );
    Ok(EXIT_OK)
}
