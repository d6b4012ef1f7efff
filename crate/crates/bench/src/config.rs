//! Experiment configuration from flags and key-value files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use idxbench_core::alex::AlexConfig;
use idxbench_core::workload::{
    builtin_mix, BuiltinMix, MixSpec, Pattern, RngKind, WorkloadConfig, DEFAULT_WARMUP_READS,
};
use idxbench_core::Key;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IndexKind {
    Alex,
    Art,
    BPlusTree,
    /// Stores nothing; measures the harness itself.
    Noop,
}

impl IndexKind {
    pub const MEASURED: [IndexKind; 3] = [IndexKind::Alex, IndexKind::Art, IndexKind::BPlusTree];

    pub fn name(self) -> &'static str {
        match self {
            IndexKind::Alex => "alex",
            IndexKind::Art => "art",
            IndexKind::BPlusTree => "btree",
            IndexKind::Noop => "noop",
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndexKind {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, UsageError> {
        match s.to_ascii_lowercase().replace(['-', '_', '+'], "").as_str() {
            "alex" => Ok(IndexKind::Alex),
            "art" => Ok(IndexKind::Art),
            "btree" | "bplustree" | "bptree" => Ok(IndexKind::BPlusTree),
            "noop" => Ok(IndexKind::Noop),
            _ => Err(usage(format!("unknown index '{s}' (expected alex, art, btree or noop)"))),
        }
    }
}

/// Where instructions per request come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InstructionSource {
    /// Hardware counters, when available.
    #[default]
    Counters,
    /// A second run under callgrind counting only the run phase.
    Callgrind,
}

impl FromStr for InstructionSource {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, UsageError> {
        match s {
            "counters" => Ok(InstructionSource::Counters),
            "callgrind" => Ok(InstructionSource::Callgrind),
            _ => Err(usage(format!("unknown instruction source '{s}' (counters or callgrind)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexTunables {
    pub alex: AlexConfig,
    pub btree_order: usize,
}

impl Default for IndexTunables {
    fn default() -> Self {
        Self {
            alex: AlexConfig::default(),
            btree_order: idxbench_core::btree::DEFAULT_ORDER,
        }
    }
}

impl IndexTunables {
    /// Reads `alex.<field> = value` and `btree.order = value` lines.
    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let mut t = Self::default();
        for (key, value) in parse_kv(text)? {
            let f = || value.parse::<f64>().map_err(|_| usage(format!("{key}: '{value}' is not a number")));
            let n = || value.parse::<usize>().map_err(|_| usage(format!("{key}: '{value}' is not an integer")));
            match key.as_str() {
                "alex.density_lower" => t.alex.density_lower = f()?,
                "alex.density_upper" => t.alex.density_upper = f()?,
                "alex.initial_density" => t.alex.initial_density = f()?,
                "alex.expansion_factor" => t.alex.expansion_factor = n()?,
                "alex.append_window" => t.alex.append_window = n()?,
                "alex.max_data_capacity" => t.alex.max_data_capacity = n()?,
                "alex.fanout" => t.alex.fanout = n()?,
                "alex.max_internal_slots" => t.alex.max_internal_slots = n()?,
                "btree.order" => t.btree_order = n()?,
                _ => return Err(usage(format!("unknown tunable '{key}'"))),
            }
        }
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        self.alex.validate().map_err(|e| usage(format!("alex tunables: {e}")))?;
        if self.btree_order < 4 || !self.btree_order.is_multiple_of(2) {
            return Err(usage("btree.order must be even and at least 4"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfilerConfig {
    pub enabled: bool,
    /// Deepest breakdown level to collect, 1 to 4.
    pub level: u8,
    /// Treat any missing counter as an environment failure.
    pub require_complete: bool,
}

impl Default for ProfilerConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            level: 4,
            require_complete: false,
        }
    }
}

/// Labels placing a run in the experiment matrix.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CellLabel {
    pub scale: String,
    pub set: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub index: IndexKind,
    pub workload: WorkloadConfig,
    pub tunables: IndexTunables,
    pub profiler: ProfilerConfig,
    pub instructions: InstructionSource,
    pub warmup_reads: usize,
    pub output_dir: Option<PathBuf>,
    /// Sampling period of the RSS sidecar series; 0 disables the sampler.
    pub rss_interval_ms: u64,
    pub label: CellLabel,
    pub seed_from_entropy: bool,
}

impl ExperimentConfig {
    pub fn new(index: IndexKind, workload: WorkloadConfig) -> Self {
        Self {
            index,
            workload,
            tunables: IndexTunables::default(),
            profiler: ProfilerConfig::default(),
            instructions: InstructionSource::default(),
            warmup_reads: DEFAULT_WARMUP_READS,
            output_dir: None,
            rss_interval_ms: 1000,
            label: CellLabel::default(),
            seed_from_entropy: false,
        }
    }

    /// File-name friendly identifier of the matrix cell.
    pub fn cell_id(&self) -> String {
        let mut parts = Vec::new();
        if !self.label.scale.is_empty() {
            parts.push(self.label.scale.clone());
        }
        if self.label.set.is_empty() {
            parts.push(self.workload.pattern.to_string());
        } else {
            parts.push(self.label.set.clone());
        }
        parts.push(mix_label(&self.workload.mix).replace('/', "-"));
        parts.push(self.index.name().to_string());
        parts.join("_")
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        self.workload.validate().map_err(|e| usage(e.to_string()))?;
        self.tunables.validate()?;
        if !(1..=4).contains(&self.profiler.level) {
            return Err(usage("counter level must be between 1 and 4"));
        }
        Ok(())
    }
}

/// Every experiment flag. The same names, without the leading dashes, are the keys of a
/// `--config` file.
#[derive(Debug, Clone, Default, Args)]
pub struct ExperimentArgs {
    /// alex, art, btree or noop
    #[arg(long)]
    pub index: Option<String>,
    /// read-only, read-heavy, write-heavy, insert-only, or four percentages "r/u/i/d"
    #[arg(long)]
    pub mix: Option<String>,
    /// consecutive or random
    #[arg(long)]
    pub pattern: Option<String>,
    /// Keys loaded before the run
    #[arg(long)]
    pub populate: Option<u64>,
    /// Requests issued in the run phase
    #[arg(long)]
    pub requests: Option<u64>,
    /// Half-open range "lo,hi" for read, update and delete keys
    #[arg(long)]
    pub read_bounds: Option<String>,
    /// Half-open range "lo,hi" for random population and insert keys
    #[arg(long)]
    pub insert_bounds: Option<String>,
    /// Shorthand for read and insert bounds of [0, N) under the random pattern
    #[arg(long)]
    pub key_range: Option<u64>,
    /// Workload seed; drawn from entropy when omitted
    #[arg(long)]
    pub seed: Option<u64>,
    /// splitmix64 or xoshiro256pp
    #[arg(long)]
    pub rng: Option<String>,
    /// Warm-up reads before the run
    #[arg(long)]
    pub warmup: Option<usize>,
    /// File of index tunables (alex.*, btree.order)
    #[arg(long)]
    pub tunables: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip hardware counters
    #[arg(long)]
    pub no_counters: bool,
    /// Deepest breakdown level to collect (1-4)
    #[arg(long)]
    pub level: Option<u8>,
    /// Exit with status 3 if any counter of the requested level is unavailable
    #[arg(long)]
    pub require_counters: bool,
    /// counters or callgrind
    #[arg(long)]
    pub instructions: Option<String>,
    /// RSS sidecar sampling period in milliseconds (0 disables)
    #[arg(long)]
    pub rss_interval_ms: Option<u64>,
}

/// Builtin name of a mix, or its four percentages.
pub fn mix_label(mix: &MixSpec) -> String {
    BuiltinMix::ALL
        .into_iter()
        .find(|b| builtin_mix(*b) == *mix)
        .map_or_else(|| mix.to_string(), |b| b.name().to_string())
}

fn parse_kv(text: &str) -> Result<Vec<(String, String)>, UsageError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("line {}: expected 'key = value'", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_bounds(s: &str) -> Result<(Key, Key), UsageError> {
    let (lo, hi) = s
        .split_once([',', ':'])
        .ok_or_else(|| usage(format!("bounds '{s}' must look like lo,hi")))?;
    let n = |x: &str| x.trim().replace('_', "").parse::<Key>().map_err(|_| usage(format!("bad bound '{x}'")));
    let (lo, hi) = (n(lo)?, n(hi)?);
    if lo >= hi {
        return Err(usage(format!("empty bounds [{lo}, {hi})")));
    }
    Ok((lo, hi))
}

fn parse_rng(s: &str) -> Result<RngKind, UsageError> {
    match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
        "splitmix64" | "splitmix" => Ok(RngKind::SplitMix64),
        "xoshiro256pp" | "xoshiro256plusplus" | "xoshiro" => Ok(RngKind::Xoshiro256PlusPlus),
        _ => Err(usage(format!("unknown rng '{s}'"))),
    }
}

impl ExperimentArgs {
    pub fn from_config_text(text: &str) -> Result<Self, UsageError> {
        let mut a = Self::default();
        let mut seen = BTreeMap::new();
        for (key, value) in parse_kv(text)? {
            if seen.insert(key.clone(), ()).is_some() {
                return Err(usage(format!("config key '{key}' given twice")));
            }
            let num = |v: &str| v.replace('_', "").parse::<u64>().map_err(|_| usage(format!("{key}: '{v}' is not an integer")));
            let flag = |v: &str| match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(usage(format!("{key}: '{v}' is not a boolean"))),
            };
            match key.replace('_', "-").as_str() {
                "index" => a.index = Some(value),
                "mix" => a.mix = Some(value),
                "pattern" => a.pattern = Some(value),
                "populate" => a.populate = Some(num(&value)?),
                "requests" => a.requests = Some(num(&value)?),
                "read-bounds" => a.read_bounds = Some(value),
                "insert-bounds" => a.insert_bounds = Some(value),
                "key-range" => a.key_range = Some(num(&value)?),
                "seed" => a.seed = Some(num(&value)?),
                "rng" => a.rng = Some(value),
                "warmup" => a.warmup = Some(num(&value)? as usize),
                "tunables" => a.tunables = Some(PathBuf::from(value)),
                "out" => a.out = Some(PathBuf::from(value)),
                "no-counters" => a.no_counters = flag(&value)?,
                "level" => a.level = Some(num(&value)? as u8),
                "require-counters" => a.require_counters = flag(&value)?,
                "instructions" => a.instructions = Some(value),
                "rss-interval-ms" => a.rss_interval_ms = Some(num(&value)?),
                _ => return Err(usage(format!("unknown config key '{key}'"))),
            }
        }
        Ok(a)
    }

    pub fn from_config_file(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_config_text(&text)
    }

    /// Fields set in `self` win over `base`.
    pub fn over(self, base: ExperimentArgs) -> ExperimentArgs {
        ExperimentArgs {
            index: self.index.or(base.index),
            mix: self.mix.or(base.mix),
            pattern: self.pattern.or(base.pattern),
            populate: self.populate.or(base.populate),
            requests: self.requests.or(base.requests),
            read_bounds: self.read_bounds.or(base.read_bounds),
            insert_bounds: self.insert_bounds.or(base.insert_bounds),
            key_range: self.key_range.or(base.key_range),
            seed: self.seed.or(base.seed),
            rng: self.rng.or(base.rng),
            warmup: self.warmup.or(base.warmup),
            tunables: self.tunables.or(base.tunables),
            out: self.out.or(base.out),
            no_counters: self.no_counters || base.no_counters,
            level: self.level.or(base.level),
            require_counters: self.require_counters || base.require_counters,
            instructions: self.instructions.or(base.instructions),
            rss_interval_ms: self.rss_interval_ms.or(base.rss_interval_ms),
        }
    }

    pub fn into_config(self) -> Result<ExperimentConfig, UsageError> {
        let index: IndexKind = self.index.as_deref().ok_or_else(|| usage("--index is required"))?.parse()?;
        let mix: MixSpec = self
            .mix
            .as_deref()
            .ok_or_else(|| usage("--mix is required"))?
            .parse()
            .map_err(|e: idxbench_core::workload::WorkloadError| usage(format!("--mix: {e}")))?;
        let pattern: Pattern = match self.pattern.as_deref() {
            Some(p) => p.parse().map_err(|e: idxbench_core::workload::WorkloadError| usage(e.to_string()))?,
            None => Pattern::Consecutive,
        };
        let populate = self.populate.ok_or_else(|| usage("--populate is required"))?;
        let requests = self.requests.ok_or_else(|| usage("--requests is required"))?;
        if pattern == Pattern::Consecutive && self.key_range.is_some() {
            return Err(usage("--key-range only applies to the random pattern"));
        }
        let (seed, seed_from_entropy) = match self.seed {
            Some(s) => (s, false),
            None => (rand::random::<u64>(), true),
        };
        let mut workload = match pattern {
            Pattern::Consecutive => WorkloadConfig::consecutive(populate, requests, mix, seed),
            Pattern::Random => {
                let range = self.key_range.unwrap_or(populate.saturating_mul(2).max(1));
                WorkloadConfig::random(populate, range, requests, mix, seed)
            }
        };
        if let Some(b) = &self.insert_bounds {
            workload.insert_bounds = parse_bounds(b)?;
            if pattern == Pattern::Consecutive {
                let lo = workload.insert_bounds.0;
                workload.read_bounds = (lo, lo + populate.max(1));
            } else {
                workload.read_bounds = workload.insert_bounds;
            }
        }
        if let Some(b) = &self.read_bounds {
            workload.read_bounds = parse_bounds(b)?;
        }
        if populate == 0 && pattern == Pattern::Consecutive {
            workload.read_bounds.1 = workload.read_bounds.1.max(workload.read_bounds.0 + 1);
        }
        if let Some(r) = &self.rng {
            workload.rng = parse_rng(r)?;
        }
        let mut config = ExperimentConfig::new(index, workload);
        config.seed_from_entropy = seed_from_entropy;
        if let Some(path) = &self.tunables {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read tunables {}: {e}", path.display())))?;
            config.tunables = IndexTunables::parse(&text)?;
        }
        if let Some(w) = self.warmup {
            config.warmup_reads = w;
        }
        config.output_dir = self.out;
        config.profiler = ProfilerConfig {
            enabled: !self.no_counters,
            level: self.level.unwrap_or(4),
            require_complete: self.require_counters,
        };
        if self.no_counters && self.require_counters {
            return Err(usage("--no-counters contradicts --require-counters"));
        }
        if let Some(s) = &self.instructions {
            config.instructions = s.parse()?;
        }
        if let Some(ms) = self.rss_interval_ms {
            config.rss_interval_ms = ms;
        }
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(index: &str, mix: &str, pop: u64, req: u64) -> ExperimentArgs {
        ExperimentArgs {
            index: Some(index.into()),
            mix: Some(mix.into()),
            populate: Some(pop),
            requests: Some(req),
            ..Default::default()
        }
    }

    #[test]
    fn basic_config() {
        let mut a = args("alex", "write-heavy", 1_600_000, 1_600_000);
        a.seed = Some(7);
        let c = a.into_config().unwrap();
        assert_eq!(c.index, IndexKind::Alex);
        assert_eq!(c.workload.mix, MixSpec::new(40, 30, 20, 10));
        assert_eq!(c.workload.pattern, Pattern::Consecutive);
        assert_eq!(c.workload.read_bounds, (0, 1_600_000));
        assert_eq!(c.workload.seed, 7);
        assert!(!c.seed_from_entropy);
    }

    #[test]
    fn usage_errors() {
        assert!(args("alex", "10,10,10,10", 10, 10).into_config().unwrap_err().0.contains("40"));
        assert!(args("lsm", "read-only", 10, 10).into_config().is_err());
        let mut a = args("art", "read-only", 10, 10);
        a.key_range = Some(100);
        assert!(a.into_config().is_err());
        let mut a = args("art", "read-only", 10, 10);
        a.pattern = Some("random".into());
        a.key_range = Some(5);
        assert!(a.into_config().is_err());
        let mut a = args("art", "read-only", 10, 10);
        a.read_bounds = Some("9,3".into());
        assert!(a.into_config().is_err());
        let mut a = args("art", "read-only", 10, 10);
        a.no_counters = true;
        a.require_counters = true;
        assert!(a.into_config().is_err());
        assert!(ExperimentArgs::default().into_config().is_err());
    }

    #[test]
    fn entropy_seed_is_flagged() {
        let c = args("btree", "read-only", 10, 10).into_config().unwrap();
        assert!(c.seed_from_entropy);
    }

    #[test]
    fn random_defaults_double_range() {
        let mut a = args("art", "insert-only", 1000, 500);
        a.pattern = Some("random".into());
        a.seed = Some(1);
        let c = a.into_config().unwrap();
        assert_eq!(c.workload.insert_bounds, (0, 2000));
        assert_eq!(c.workload.read_bounds, (0, 2000));
    }

    #[test]
    fn config_file_mirrors_flags() {
        let text = "index = art\nmix = 80/10/10/0\npattern = random\npopulate = 1_000\nrequests = 10\nkey-range = 5000\nseed = 3\nno_counters = true\n";
        let file = ExperimentArgs::from_config_text(text).unwrap();
        let flags = ExperimentArgs {
            seed: Some(9),
            ..Default::default()
        };
        let c = flags.over(file).into_config().unwrap();
        assert_eq!(c.index, IndexKind::Art);
        assert_eq!(c.workload.seed, 9);
        assert_eq!(c.workload.insert_bounds, (0, 5000));
        assert!(!c.profiler.enabled);
        assert!(ExperimentArgs::from_config_text("bogus = 1").is_err());
        assert!(ExperimentArgs::from_config_text("seed = 1\nseed = 2").is_err());
    }

    #[test]
    fn tunables_file() {
        let t = IndexTunables::parse("alex.density_upper = 0.9\nbtree.order = 32\n").unwrap();
        assert_eq!(t.alex.density_upper, 0.9);
        assert_eq!(t.btree_order, 32);
        assert!(IndexTunables::parse("btree.order = 7").is_err());
        assert!(IndexTunables::parse("alex.density_lower = 0.95").is_err());
    }
}
