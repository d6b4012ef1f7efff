//! Preset matrices: experiment sets × mixes × indexes, run one cell at a time.
//!
//! A preset file has top-level keys (`scale`, `indexes`, `mixes`, plus any experiment key that
//! applies to every cell) followed by `[set <name>]` sections of experiment keys.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::chart::{render_breakdown_chart, ChartKind};
use crate::config::{CellLabel, ExperimentArgs, ExperimentConfig, IndexKind, UsageError};
use crate::emit::{self, ReportRow};
use crate::report::RunReport;
use crate::runner::{run_experiment, RunError, EXEC_CONFIG_COMMAND, EXE_ENV};

pub const DESK_SMALL: &str = include_str!("../presets/desk-small.conf");
pub const DESK_LARGE: &str = include_str!("../presets/desk-large.conf");

#[derive(Debug, Clone)]
pub struct Preset {
    pub scale: String,
    pub indexes: Vec<IndexKind>,
    pub mixes: Vec<String>,
    /// Keys shared by every cell.
    pub common: ExperimentArgs,
    pub sets: Vec<(String, ExperimentArgs)>,
}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

impl Preset {
    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let mut scale = None;
        let mut indexes = vec![IndexKind::Alex, IndexKind::Art, IndexKind::BPlusTree];
        let mut mixes: Vec<String> = ["read-only", "read-heavy", "write-heavy", "insert-only"]
            .map(String::from)
            .to_vec();
        let mut common = String::new();
        let mut sets: Vec<(String, String)> = Vec::new();
        for line in text.lines() {
            let t = line.split('#').next().unwrap_or("").trim();
            if let Some(name) = t.strip_prefix("[set ").and_then(|r| r.strip_suffix(']')) {
                let name = name.trim().to_string();
                if sets.iter().any(|(n, _)| *n == name) {
                    return Err(usage(format!("preset set '{name}' defined twice")));
                }
                sets.push((name, String::new()));
                continue;
            }
            if t.starts_with('[') {
                return Err(usage(format!("bad preset section '{t}'")));
            }
            if let Some((_, body)) = sets.last_mut() {
                body.push_str(t);
                body.push('\n');
                continue;
            }
            match t.split_once('=').map(|(k, v)| (k.trim(), v.trim())) {
                Some(("scale", v)) => scale = Some(v.to_string()),
                Some(("indexes", v)) => {
                    indexes = list(v).iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
                }
                Some(("mixes", v)) => mixes = list(v),
                _ => {
                    common.push_str(t);
                    common.push('\n');
                }
            }
        }
        if sets.is_empty() {
            return Err(usage("preset defines no [set ...] sections"));
        }
        let common = ExperimentArgs::from_config_text(&common)?;
        let sets = sets
            .into_iter()
            .map(|(n, body)| ExperimentArgs::from_config_text(&body).map(|a| (n, a)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            scale: scale.ok_or_else(|| usage("preset needs a 'scale' name"))?,
            indexes,
            mixes,
            common,
            sets,
        })
    }

    /// A builtin preset name or a path to a preset file.
    pub fn resolve(name: &str) -> Result<Self, UsageError> {
        match name {
            "desk-small" => Self::parse(DESK_SMALL),
            "desk-large" => Self::parse(DESK_LARGE),
            path => {
                let text = fs::read_to_string(path).map_err(|e| {
                    usage(format!("unknown preset '{path}' (desk-small, desk-large or a file): {e}"))
                })?;
                Self::parse(&text)
            }
        }
    }

    pub fn cell_count(&self) -> usize {
        self.sets.len() * self.mixes.len() * self.indexes.len()
    }
}

#[derive(Debug, Clone, Default)]
pub struct MatrixOptions {
    /// Flags that override the preset for every cell.
    pub overrides: ExperimentArgs,
    pub out_dir: Option<PathBuf>,
    /// Restrict to these sets, mixes or indexes when non-empty.
    pub only_sets: Vec<String>,
    pub only_mixes: Vec<String>,
    pub only_indexes: Vec<IndexKind>,
    pub progress: bool,
    /// Runs every cell in a fresh child process of this executable, so RSS readings and heap
    /// state do not carry over between cells.
    pub isolate_exe: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub cell: String,
    pub set: String,
    pub mix: String,
    pub index: String,
    pub ok: bool,
    pub report: Option<PathBuf>,
    pub error: Option<String>,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scale: String,
    pub seed: u64,
    pub cells: Vec<ManifestEntry>,
    pub failures: usize,
    pub csv: Option<PathBuf>,
    pub charts: Vec<PathBuf>,
}

impl Manifest {
    /// 0 when every cell ran, 3 if any failure was environmental, else 2.
    pub fn exit_code(&self) -> i32 {
        let failed = self.cells.iter().filter(|c| !c.ok);
        let mut code = 0;
        for c in failed {
            code = if c.exit_code == 3 { 3 } else { code.max(2) };
            if code == 3 {
                break;
            }
        }
        code
    }
}

pub struct MatrixOutcome {
    pub reports: Vec<RunReport>,
    pub manifest: Manifest,
}

/// Builds the config of every selected cell, failing early on any usage error.
pub fn plan(preset: &Preset, opts: &MatrixOptions) -> Result<Vec<ExperimentConfig>, UsageError> {
    let seed = opts
        .overrides
        .seed
        .or(preset.common.seed)
        .unwrap_or_else(rand::random::<u64>);
    let mut out = Vec::new();
    for want in &opts.only_sets {
        if !preset.sets.iter().any(|(n, _)| n == want) {
            return Err(usage(format!("preset {} has no set '{want}'", preset.scale)));
        }
    }
    for (set, set_args) in &preset.sets {
        if !opts.only_sets.is_empty() && !opts.only_sets.contains(set) {
            continue;
        }
        for mix in &preset.mixes {
            if !opts.only_mixes.is_empty() && !opts.only_mixes.contains(mix) {
                continue;
            }
            for index in &preset.indexes {
                if !opts.only_indexes.is_empty() && !opts.only_indexes.contains(index) {
                    continue;
                }
                let cell = ExperimentArgs {
                    index: Some(index.name().into()),
                    mix: Some(mix.clone()),
                    seed: Some(seed),
                    ..Default::default()
                };
                let args = cell.over(opts.overrides.clone()).over(set_args.clone()).over(preset.common.clone());
                let mut config = args
                    .into_config()
                    .map_err(|e| usage(format!("set {set}, mix {mix}, index {index}: {e}")))?;
                config.label = CellLabel {
                    scale: preset.scale.clone(),
                    set: set.clone(),
                };
                config.output_dir = opts.out_dir.as_ref().map(|d| d.join("rss"));
                out.push(config);
            }
        }
    }
    if out.is_empty() {
        return Err(usage("the selection matches no matrix cell"));
    }
    Ok(out)
}

fn run_cell_isolated(exe: &Path, config: &ExperimentConfig, scratch: &Path) -> Result<RunReport, (String, i32)> {
    let io_err = |e: std::io::Error| (e.to_string(), 2);
    let stem = scratch.join(format!(".{}-{}", config.cell_id(), std::process::id()));
    let cfg_path = stem.with_extension("config.json");
    let report_path = stem.with_extension("report.json");
    let json = serde_json::to_vec(config).map_err(|e| (e.to_string(), 2))?;
    fs::write(&cfg_path, json).map_err(io_err)?;
    let out = Command::new(exe)
        .arg(EXEC_CONFIG_COMMAND)
        .arg(&cfg_path)
        .arg("--report")
        .arg(&report_path)
        .env(EXE_ENV, exe)
        .output();
    let _ = fs::remove_file(&cfg_path);
    let out = out.map_err(io_err)?;
    let report = fs::read_to_string(&report_path);
    let _ = fs::remove_file(&report_path);
    if !out.status.success() {
        let stderr = String::from_utf8_lossy(&out.stderr);
        let msg = stderr.lines().last().unwrap_or("").trim().to_string();
        let code = out.status.code().filter(|c| (1..=3).contains(c)).unwrap_or(2);
        return Err((format!("child exited with {}: {msg}", out.status), code));
    }
    let text = report.map_err(io_err)?;
    serde_json::from_str(&text).map_err(|e| (format!("unreadable child report: {e}"), 2))
}

fn run_cell(config: &ExperimentConfig) -> Result<RunReport, (String, i32)> {
    match panic::catch_unwind(AssertUnwindSafe(|| run_experiment(config))) {
        Ok(Ok(r)) => Ok(r),
        Ok(Err(e)) => Err((e.to_string(), e.exit_code())),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err((format!("panicked: {msg}"), 2))
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)
}

/// Runs every selected cell sequentially. Failed cells are listed in the manifest and the rest
/// still run. With an output directory, writes per-cell JSON, `results.csv`, charts per set and
/// `manifest.json`.
pub fn run_matrix(preset: &Preset, opts: &MatrixOptions) -> Result<MatrixOutcome, RunError> {
    let configs = plan(preset, opts)?;
    let seed = configs[0].workload.seed;
    if let Some(d) = &opts.out_dir {
        fs::create_dir_all(d.join("rss"))?;
        fs::create_dir_all(d.join("reports"))?;
    }
    let mut reports = Vec::new();
    let mut cells = Vec::new();
    for (i, config) in configs.iter().enumerate() {
        let cell = config.cell_id();
        if opts.progress {
            eprintln!("[{}/{}] {cell}", i + 1, configs.len());
        }
        let mut entry = ManifestEntry {
            cell: cell.clone(),
            set: config.label.set.clone(),
            mix: crate::config::mix_label(&config.workload.mix),
            index: config.index.name().into(),
            ok: false,
            report: None,
            error: None,
            exit_code: 0,
        };
        let result = match &opts.isolate_exe {
            Some(exe) => {
                let scratch = opts.out_dir.clone().unwrap_or_else(std::env::temp_dir);
                run_cell_isolated(exe, config, &scratch)
            }
            None => run_cell(config),
        };
        match result {
            Ok(report) => {
                if let Some(d) = &opts.out_dir {
                    let path = d.join("reports").join(format!("{cell}.json"));
                    let mut buf = Vec::new();
                    emit::write_json(std::slice::from_ref(&report), &mut buf)?;
                    write_file(&path, &buf)?;
                    entry.report = Some(path);
                }
                entry.ok = true;
                reports.push(report);
            }
            Err((msg, code)) => {
                if opts.progress {
                    eprintln!("  failed: {msg}");
                }
                entry.error = Some(msg);
                entry.exit_code = code;
            }
        }
        cells.push(entry);
    }

    let mut manifest = Manifest {
        scale: preset.scale.clone(),
        seed,
        failures: cells.iter().filter(|c| !c.ok).count(),
        cells,
        csv: None,
        charts: Vec::new(),
    };
    if let Some(d) = &opts.out_dir {
        if !reports.is_empty() {
            let rows = emit::rows(&reports);
            let csv_path = d.join("results.csv");
            let mut buf = Vec::new();
            emit::write_csv(&rows, &mut buf)?;
            write_file(&csv_path, &buf)?;
            manifest.csv = Some(csv_path);
            manifest.charts = write_charts(&rows, &d.join("charts"))?;
        }
        let json = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
        write_file(&d.join("manifest.json"), &json)?;
    }
    Ok(MatrixOutcome { reports, manifest })
}

/// One chart of every kind per (scale, set).
pub fn write_charts(rows: &[ReportRow], dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut keys: Vec<(String, String)> = rows.iter().map(|r| (r.scale.clone(), r.set.clone())).collect();
    keys.dedup();
    keys.sort();
    keys.dedup();
    let mut written = Vec::new();
    for (scale, set) in keys {
        let subset: Vec<ReportRow> = rows.iter().filter(|r| r.scale == scale && r.set == set).cloned().collect();
        for kind in ChartKind::ALL {
            let svg = render_breakdown_chart(&subset, kind).map_err(std::io::Error::other)?;
            let stem = [scale.as_str(), set.as_str(), kind.name()]
                .iter()
                .filter(|s| !s.is_empty())
                .copied()
                .collect::<Vec<_>>()
                .join("_");
            let path = dir.join(format!("{stem}.svg"));
            write_file(&path, svg.as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_presets_parse() {
        let s = Preset::resolve("desk-small").unwrap();
        assert_eq!(s.scale, "desk-small");
        assert_eq!(s.cell_count(), 36);
        let l = Preset::resolve("desk-large").unwrap();
        assert_eq!(l.cell_count(), 36);
        assert!(Preset::resolve("desk-huge").is_err());
    }

    #[test]
    fn plan_covers_grid() {
        let p = Preset::resolve("desk-small").unwrap();
        let cfgs = plan(&p, &MatrixOptions::default()).unwrap();
        assert_eq!(cfgs.len(), 36);
        let seed = cfgs[0].workload.seed;
        assert!(cfgs.iter().all(|c| c.workload.seed == seed && c.warmup_reads == 100_000));
        let random: Vec<_> = cfgs.iter().filter(|c| c.label.set == "random-1.6m").collect();
        assert_eq!(random.len(), 12);
        assert_eq!(random[0].workload.insert_bounds, (0, 3_200_000));
        let mut ids: Vec<String> = cfgs.iter().map(|c| c.cell_id()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 36);
    }

    #[test]
    fn plan_filters_and_overrides() {
        let p = Preset::resolve("desk-small").unwrap();
        let opts = MatrixOptions {
            overrides: ExperimentArgs {
                seed: Some(11),
                no_counters: true,
                ..Default::default()
            },
            only_sets: vec!["consecutive-160k".into()],
            only_indexes: vec![IndexKind::Art],
            ..Default::default()
        };
        let cfgs = plan(&p, &opts).unwrap();
        assert_eq!(cfgs.len(), 4);
        assert!(cfgs.iter().all(|c| c.workload.seed == 11 && !c.profiler.enabled));
        let bad = MatrixOptions {
            only_sets: vec!["nope".into()],
            ..Default::default()
        };
        assert!(plan(&p, &bad).is_err());
    }

    #[test]
    fn preset_errors() {
        assert!(Preset::parse("scale = x\n").is_err());
        assert!(Preset::parse("[set a]\npopulate = 1\n").is_err());
        assert!(Preset::parse("scale = x\n[set a]\nbogus = 1\n").is_err());
        assert!(Preset::parse("scale = x\n[set a]\n[set a]\n").is_err());
    }

    #[test]
    fn manifest_exit_codes() {
        let entry = |ok, code| ManifestEntry {
            cell: "c".into(),
            set: "s".into(),
            mix: "m".into(),
            index: "i".into(),
            ok,
            report: None,
            error: None,
            exit_code: code,
        };
        let mut m = Manifest {
            scale: "x".into(),
            seed: 0,
            cells: vec![entry(true, 0)],
            failures: 0,
            csv: None,
            charts: vec![],
        };
        assert_eq!(m.exit_code(), 0);
        m.cells.push(entry(false, 2));
        assert_eq!(m.exit_code(), 2);
        m.cells.push(entry(false, 3));
        assert_eq!(m.exit_code(), 3);
    }
}
