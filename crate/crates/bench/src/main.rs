use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use idxbench::alloc::CountingAllocator;
use idxbench::chart::{render_breakdown_chart, ChartKind};
use idxbench::emit::{self, Format};
use idxbench::matrix::{run_matrix, MatrixOptions, Preset};
use idxbench::runner::EXEC_CONFIG_COMMAND;
use idxbench::{run_experiment, ExperimentArgs, ExperimentConfig, IndexKind, RunError, RunReport};

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

/// Benchmark driver for ordered in-memory indexes.
#[derive(Debug, Parser)]
#[command(name = "idxbench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment
    Run {
        #[command(flatten)]
        args: ExperimentArgs,
        /// Key-value file with the same keys as the flags; flags win
        #[arg(long)]
        config: Option<PathBuf>,
        /// table, csv or json
        #[arg(long, default_value = "table")]
        format: String,
        /// Run the same experiment this many times
        #[arg(long, default_value_t = 1)]
        repeat: u32,
    },
    /// Run a preset matrix of sets x mixes x indexes
    Matrix {
        /// desk-small, desk-large, or a preset file
        #[arg(long, default_value = "desk-small")]
        preset: String,
        /// Output directory for reports, CSV, charts and the manifest
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_counters: bool,
        #[arg(long)]
        require_counters: bool,
        #[arg(long)]
        level: Option<u8>,
        /// counters or callgrind
        #[arg(long)]
        instructions: Option<String>,
        #[arg(long)]
        tunables: Option<PathBuf>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        rss_interval_ms: Option<u64>,
        /// Only these sets (repeatable)
        #[arg(long = "set")]
        sets: Vec<String>,
        /// Only these mixes (repeatable)
        #[arg(long = "only-mix")]
        mixes: Vec<String>,
        /// Only these indexes (repeatable)
        #[arg(long = "only-index")]
        indexes: Vec<String>,
        /// table, csv or json, printed after the run
        #[arg(long, default_value = "table")]
        format: String,
    },
    /// Render a chart from a results CSV
    Chart {
        #[arg(long)]
        input: PathBuf,
        /// exec_time, instr, cpi, level1, backend, memory_norm or memory_abs
        #[arg(long)]
        kind: String,
        /// Restrict to one experiment set
        #[arg(long)]
        set: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    #[command(name = EXEC_CONFIG_COMMAND, hide = true)]
    ExecConfig {
        path: PathBuf,
        /// Write the report JSON here
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    msg: String,
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure {
            code: e.exit_code() as u8,
            msg: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: 2,
            msg: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

fn parse_format(s: &str) -> Result<Format, Failure> {
    s.parse().map_err(usage)
}

fn write_outputs(dir: &Path, reports: &[RunReport], stem: &str) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = Vec::new();
    emit::write_json(reports, &mut json)?;
    fs::write(dir.join(format!("{stem}.json")), json)?;
    let mut csv = Vec::new();
    emit::write_csv(&emit::rows(reports), &mut csv)?;
    fs::write(dir.join(format!("{stem}.csv")), csv)
}

fn cmd_run(args: ExperimentArgs, config: Option<PathBuf>, format: &str, repeat: u32) -> Result<(), Failure> {
    let format = parse_format(format)?;
    let args = match &config {
        Some(p) => args.over(ExperimentArgs::from_config_file(p).map_err(|e| usage(e.0))?),
        None => args,
    };
    let config = args.into_config().map_err(|e| usage(e.0))?;
    if repeat == 0 {
        return Err(usage("--repeat must be at least 1"));
    }
    let mut reports = Vec::new();
    for _ in 0..repeat {
        reports.push(run_experiment(&config)?);
    }
    if let Some(dir) = &config.output_dir {
        write_outputs(dir, &reports, &config.cell_id())?;
    }
    emit::emit_report(&reports, format, io::stdout().lock())?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_matrix(
    preset: &str,
    out: Option<PathBuf>,
    overrides: ExperimentArgs,
    sets: Vec<String>,
    mixes: Vec<String>,
    indexes: Vec<String>,
    format: &str,
) -> Result<u8, Failure> {
    let format = parse_format(format)?;
    let preset = Preset::resolve(preset).map_err(|e| usage(e.0))?;
    let only_indexes = indexes
        .iter()
        .map(|s| s.parse::<IndexKind>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| usage(e.0))?;
    let opts = MatrixOptions {
        overrides,
        out_dir: out,
        only_sets: sets,
        only_mixes: mixes,
        only_indexes,
        progress: true,
        isolate_exe: Some(std::env::current_exe()?),
    };
    let outcome = run_matrix(&preset, &opts)?;
    if !outcome.reports.is_empty() {
        emit::emit_report(&outcome.reports, format, io::stdout().lock())?;
    }
    let m = &outcome.manifest;
    eprintln!("{} cells, {} failed, seed {}", m.cells.len(), m.failures, m.seed);
    for c in m.cells.iter().filter(|c| !c.ok) {
        eprintln!("  {}: {}", c.cell, c.error.as_deref().unwrap_or(""));
    }
    Ok(m.exit_code() as u8)
}

fn cmd_chart(input: &Path, kind: &str, set: Option<String>, out: &Path) -> Result<(), Failure> {
    let kind: ChartKind = kind.parse().map_err(usage)?;
    let mut rows = emit::read_csv(input)?;
    if let Some(s) = set {
        rows.retain(|r| r.set == s);
    }
    let svg = render_breakdown_chart(&rows, kind).map_err(|e| usage(e.to_string()))?;
    fs::write(out, svg)?;
    Ok(())
}

fn cmd_exec_config(path: &Path, report_path: Option<&Path>) -> Result<(), Failure> {
    let text = fs::read_to_string(path)?;
    let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| usage(e.to_string()))?;
    let report = run_experiment(&config)?;
    if let Some(p) = report_path {
        let mut buf = Vec::new();
        emit::write_json(std::slice::from_ref(&report), &mut buf)?;
        fs::write(p, buf)?;
    }
    // keeps the tally observable so the run loop cannot be optimized away
    writeln!(io::stdout(), "{}", report.outcomes.issued())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Run {
            args,
            config,
            format,
            repeat,
        } => cmd_run(args, config, &format, repeat).map(|_| 0),
        Command::Matrix {
            preset,
            out,
            seed,
            no_counters,
            require_counters,
            level,
            instructions,
            tunables,
            warmup,
            rss_interval_ms,
            sets,
            mixes,
            indexes,
            format,
        } => {
            let overrides = ExperimentArgs {
                seed,
                no_counters,
                require_counters,
                level,
                instructions,
                tunables,
                warmup,
                rss_interval_ms,
                ..Default::default()
            };
            cmd_matrix(&preset, out, overrides, sets, mixes, indexes, &format)
        }
        Command::Chart { input, kind, set, out } => cmd_chart(&input, &kind, set, &out).map(|_| 0),
        Command::ExecConfig { path, report } => cmd_exec_config(&path, report.as_deref()).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("idxbench: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
