//! Report output: fixed-column CSV, verbatim JSON, and a plain-text table.
//!
//! CSV columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `index` | alex, art, btree or noop |
//! | `pattern` | consecutive or random |
//! | `scale` | preset name, empty for single runs |
//! | `set` | experiment set within the preset |
//! | `mix` | builtin mix name or `r/u/i/d` |
//! | `seed` | workload seed |
//! | `population` | keys loaded before the run |
//! | `requests` | requests in the run phase |
//! | `avg_exec_time_us` | run-phase time over requests |
//! | `instr_per_request` | instructions over requests |
//! | `instr_source` | counters or callgrind |
//! | `cpi` | cycles over instructions |
//! | `footprint_bytes` | allocator net bytes, else RSS net bytes |
//! | `allocator_net_bytes`, `rss_net_bytes`, `peak_rss_bytes` | raw footprint readings |
//! | `retiring` .. `backend_bound` | level-1 fractions of slots |
//! | `core_bound`, `memory_bound` | backend split |
//! | `l1_bound` .. `store_bound` | memory components normalized to `memory_bound` |
//! | `anomalies` | requests answered AlreadyExists, NotFound or Missing |
//! | `multiplex_ratio` | lowest running/enabled ratio over the counters |
//!
//! Empty cells mean unavailable; the JSON report says why.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::report::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Table,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "table" => Ok(Format::Table),
            _ => Err(format!("unknown format '{s}' (csv, json or table)")),
        }
    }
}

/// One flattened report, one CSV line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub index: String,
    pub pattern: String,
    pub scale: String,
    pub set: String,
    pub mix: String,
    pub seed: u64,
    pub population: u64,
    pub requests: u64,
    pub avg_exec_time_us: f64,
    pub instr_per_request: Option<f64>,
    pub instr_source: Option<String>,
    pub cpi: Option<f64>,
    pub footprint_bytes: Option<u64>,
    pub allocator_net_bytes: Option<u64>,
    pub rss_net_bytes: Option<u64>,
    pub peak_rss_bytes: Option<u64>,
    pub retiring: Option<f64>,
    pub bad_speculation: Option<f64>,
    pub frontend_bound: Option<f64>,
    pub backend_bound: Option<f64>,
    pub core_bound: Option<f64>,
    pub memory_bound: Option<f64>,
    pub l1_bound: Option<f64>,
    pub l2_bound: Option<f64>,
    pub l3_bound: Option<f64>,
    pub dram_bound: Option<f64>,
    pub store_bound: Option<f64>,
    pub anomalies: u64,
    pub multiplex_ratio: Option<f64>,
}

impl From<&RunReport> for ReportRow {
    fn from(r: &RunReport) -> Self {
        let l1 = r.tmam.level1;
        let be = r.tmam.level3_backend;
        let mem = r.tmam.level4_memory;
        ReportRow {
            index: r.index.clone(),
            pattern: r.pattern.clone(),
            scale: r.scale.clone(),
            set: r.set.clone(),
            mix: r.mix.clone(),
            seed: r.seed,
            population: r.population_count,
            requests: r.request_count,
            avg_exec_time_us: r.avg_exec_time_us,
            instr_per_request: r.instructions_per_request,
            instr_source: r.instructions_source.clone(),
            cpi: r.cpi,
            footprint_bytes: r.footprint_bytes(),
            allocator_net_bytes: r.memory.allocator_net_bytes,
            rss_net_bytes: r.memory.rss_net_bytes,
            peak_rss_bytes: r.memory.peak_rss_bytes,
            retiring: l1.map(|l| l.retiring),
            bad_speculation: l1.map(|l| l.bad_speculation),
            frontend_bound: l1.map(|l| l.frontend_bound),
            backend_bound: l1.map(|l| l.backend_bound),
            core_bound: be.map(|b| b.core_bound),
            memory_bound: be.map(|b| b.memory_bound),
            l1_bound: mem.map(|m| m.l1_bound),
            l2_bound: mem.map(|m| m.l2_bound),
            l3_bound: mem.map(|m| m.l3_bound),
            dram_bound: mem.map(|m| m.dram_bound),
            store_bound: mem.map(|m| m.store_bound),
            anomalies: r.anomalies,
            multiplex_ratio: r.multiplex_ratio,
        }
    }
}

impl ReportRow {
    pub fn level1(&self) -> Option<[f64; 4]> {
        Some([self.retiring?, self.bad_speculation?, self.frontend_bound?, self.backend_bound?])
    }

    pub fn memory(&self) -> Option<[f64; 5]> {
        Some([self.l1_bound?, self.l2_bound?, self.l3_bound?, self.dram_bound?, self.store_bound?])
    }
}

pub fn rows(reports: &[RunReport]) -> Vec<ReportRow> {
    reports.iter().map(ReportRow::from).collect()
}

pub fn write_csv<W: Write>(rows: &[ReportRow], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(io::Error::other)?;
    }
    w.flush()
}

pub fn read_csv(path: &Path) -> io::Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(io::Error::other)?;
    rdr.deserialize().collect::<Result<_, _>>().map_err(io::Error::other)
}

/// One report is written as an object, several as an array.
pub fn write_json<W: Write>(reports: &[RunReport], mut out: W) -> io::Result<()> {
    match reports {
        [one] => serde_json::to_writer_pretty(&mut out, one)?,
        many => serde_json::to_writer_pretty(&mut out, many)?,
    }
    writeln!(out)
}

/// Reads what [`write_json`] wrote.
pub fn load_json(text: &str) -> serde_json::Result<Vec<RunReport>> {
    if text.trim_start().starts_with('[') {
        serde_json::from_str(text)
    } else {
        serde_json::from_str(text).map(|r| vec![r])
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.digits$}"))
}

fn mib(v: Option<u64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |b| format!("{:.1}", b as f64 / (1 << 20) as f64))
}

pub fn render_table(reports: &[RunReport]) -> String {
    let header = [
        "set", "mix", "index", "requests", "us/req", "instr/req", "cpi", "MiB", "retire", "badspec", "fe", "be",
        "mem", "dram", "anom",
    ];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in reports {
        let row = ReportRow::from(r);
        let set = if r.set.is_empty() { r.pattern.clone() } else { r.set.clone() };
        cells.push(vec![
            set,
            row.mix.clone(),
            row.index.clone(),
            row.requests.to_string(),
            format!("{:.4}", row.avg_exec_time_us),
            opt(row.instr_per_request, 1),
            opt(row.cpi, 3),
            mib(row.footprint_bytes),
            opt(row.retiring, 3),
            opt(row.bad_speculation, 3),
            opt(row.frontend_bound, 3),
            opt(row.backend_bound, 3),
            opt(row.memory_bound, 3),
            opt(row.dram_bound, 3),
            row.anomalies.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    for r in reports {
        if !r.unavailable.is_empty() {
            let _ = writeln!(out, "\n{} {} {} unavailable:", r.index, r.mix, r.pattern);
            for u in &r.unavailable {
                let _ = writeln!(out, "  {u}");
            }
            break;
        }
    }
    out
}

/// Writes reports in `format`. An empty slice is an error.
pub fn emit_report<W: Write>(reports: &[RunReport], format: Format, mut out: W) -> io::Result<()> {
    if reports.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "no reports to emit"));
    }
    match format {
        Format::Csv => write_csv(&rows(reports), out),
        Format::Json => write_json(reports, out),
        Format::Table => out.write_all(render_table(reports).as_bytes()),
    }
}

/// Checks that every row's level-1 fractions, when present, sum to 1 within 0.02.
pub fn validate_rows(rows: &[ReportRow]) -> Vec<String> {
    let mut problems = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        if let Some(l1) = r.level1() {
            let s: f64 = l1.iter().sum();
            if (s - 1.0).abs() > 0.02 {
                problems.push(format!("row {}: level-1 fractions sum to {s}", i + 1));
            }
        }
        if let (Some(mem), Some(mb)) = (r.memory(), r.memory_bound) {
            let s: f64 = mem.iter().sum();
            if (s - mb).abs() > 1e-9 {
                problems.push(format!("row {}: memory components sum to {s}, memory_bound {mb}", i + 1));
            }
        }
    }
    problems
}
