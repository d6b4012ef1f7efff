//! The record produced by one experiment.

use std::path::PathBuf;

use idxbench_core::alex::AlexStats;
use idxbench_core::{Outcome, RequestKind};
use idxbench_profiler::{CounterSample, TmamBreakdown};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Per request kind counts of what the index answered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KindTally {
    pub issued: u64,
    /// Reads that found a value, or writes that succeeded.
    pub ok: u64,
    /// Reads of absent keys.
    pub missing: u64,
    pub already_exists: u64,
    pub not_found: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeTally {
    pub read: KindTally,
    pub update: KindTally,
    pub insert: KindTally,
    pub delete: KindTally,
}

impl OutcomeTally {
    #[inline]
    pub fn record(&mut self, kind: RequestKind, outcome: Outcome) {
        let t = match kind {
            RequestKind::Read => &mut self.read,
            RequestKind::Update => &mut self.update,
            RequestKind::Insert => &mut self.insert,
            RequestKind::Delete => &mut self.delete,
        };
        t.issued += 1;
        match outcome {
            Outcome::Found(_) | Outcome::Ok => t.ok += 1,
            Outcome::Missing => t.missing += 1,
            Outcome::AlreadyExists => t.already_exists += 1,
            Outcome::NotFound => t.not_found += 1,
        }
    }

    pub fn issued(&self) -> u64 {
        self.read.issued + self.update.issued + self.insert.issued + self.delete.issued
    }

    /// Requests that did not find or create what they targeted.
    pub fn anomalies(&self) -> u64 {
        let all = [self.read, self.update, self.insert, self.delete];
        all.iter().map(|t| t.missing + t.already_exists + t.not_found).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PhaseDurations {
    pub population_ns: u64,
    pub warmup_ns: u64,
    pub run_ns: u64,
    pub wrapup_ns: u64,
}

/// Footprint sampled at the end of the run phase, after request buffers are released.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MemoryFootprint {
    /// Live heap bytes through the counting allocator, minus the pre-population baseline.
    pub allocator_net_bytes: Option<u64>,
    pub allocator_live_bytes: Option<u64>,
    pub allocator_baseline_bytes: Option<u64>,
    /// Resident set size of the whole process.
    pub rss_bytes: Option<u64>,
    pub rss_baseline_bytes: Option<u64>,
    pub rss_net_bytes: Option<u64>,
    /// Largest RSS seen by the sidecar sampler.
    pub peak_rss_bytes: Option<u64>,
    /// The index's own estimate of its heap use.
    pub index_estimate_bytes: Option<u64>,
}

impl MemoryFootprint {
    /// Preferred single number: the allocator count, else RSS.
    pub fn footprint_bytes(&self) -> Option<u64> {
        self.allocator_net_bytes.or(self.rss_net_bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HostInfo {
    pub hostname: String,
    pub cpu_model: String,
    pub cpu_vendor: String,
    pub cpu_family: u32,
    pub cpu_model_id: u32,
    pub logical_cpus: usize,
    pub kernel: String,
    pub pinned_cpu: Option<usize>,
}

impl HostInfo {
    pub fn detect() -> Self {
        let cpu = idxbench_profiler::CpuId::detect();
        let read = |p: &str| std::fs::read_to_string(p).map(|s| s.trim().to_string()).unwrap_or_default();
        Self {
            hostname: read("/proc/sys/kernel/hostname"),
            cpu_model: cpu.model_name,
            cpu_vendor: cpu.vendor,
            cpu_family: cpu.family,
            cpu_model_id: cpu.model,
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            kernel: read("/proc/sys/kernel/osrelease"),
            pinned_cpu: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub index: String,
    pub pattern: String,
    pub mix: String,
    pub scale: String,
    pub set: String,
    pub seed: u64,
    pub rng: String,
    pub config: ExperimentConfig,
    pub host: HostInfo,
    pub phases: PhaseDurations,
    pub population_count: u64,
    pub request_count: u64,
    pub warmup_count: u64,
    /// Run-phase time divided by request count.
    pub avg_exec_time_us: f64,
    pub instructions_per_request: Option<f64>,
    /// "counters" or "callgrind" when instructions are known.
    pub instructions_source: Option<String>,
    pub cycles_per_request: Option<f64>,
    pub cpi: Option<f64>,
    pub tmam: TmamBreakdown,
    pub counters: Option<CounterSample>,
    pub multiplex_ratio: Option<f64>,
    pub event_map_section: Option<String>,
    pub memory: MemoryFootprint,
    pub outcomes: OutcomeTally,
    pub anomalies: u64,
    pub final_index_len: u64,
    pub alex_stats: Option<AlexStats>,
    pub rss_series: Option<PathBuf>,
    /// Every field that could not be measured, with the reason.
    pub unavailable: Vec<String>,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn footprint_bytes(&self) -> Option<u64> {
        self.memory.footprint_bytes()
    }
}
