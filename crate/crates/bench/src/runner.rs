//! The four experiment phases: population, warm-up, run and wrap-up.
//!
//! Counters are armed before population and only enabled around [`execute_run_phase`]. Request
//! streams are materialized up front so generation cost stays out of the run phase; the buffer
//! is released before the footprint is sampled.

use std::fs::File;
use std::hint::black_box;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use idxbench_core::alex::{AlexIndex, AlexStats};
use idxbench_core::art::ArtIndex;
use idxbench_core::btree::BPlusTree;
use idxbench_core::workload::{
    generate_population, generate_requests, population_pairs, warmup_stream, WorkloadError,
};
use idxbench_core::{execute, IndexError, KvIndex, NoopIndex, Request};
use idxbench_profiler::{callgrind, CpuId, EventMap, ProfileResult, Profiler, TmamBreakdown};
use thiserror::Error;

use crate::alloc;
use crate::config::{mix_label, ExperimentConfig, IndexKind, InstructionSource, UsageError};
use crate::report::{HostInfo, MemoryFootprint, OutcomeTally, PhaseDurations, RunReport};

/// Name of the hidden subcommand that runs a serialized config; used for the callgrind pass.
pub const EXEC_CONFIG_COMMAND: &str = "__exec-config";
/// Overrides the executable re-run under callgrind (defaults to the current executable).
pub const EXE_ENV: &str = "IDXBENCH_EXE";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("usage: {0}")]
    Usage(#[from] UsageError),
    #[error("population failed: {0}")]
    Workload(#[from] WorkloadError),
    #[error("population failed: {0}")]
    Index(#[from] IndexError),
    #[error("environment: {0}")]
    Environment(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => 1,
            RunError::Environment(_) => 3,
            _ => 2,
        }
    }
}

/// Runs `body` and returns its result with the elapsed monotonic time in nanoseconds.
#[inline]
pub fn time_phase<R>(body: impl FnOnce() -> R) -> (R, u64) {
    let t0 = Instant::now();
    let r = body();
    let ns = t0.elapsed().as_nanos() as u64;
    (r, ns)
}

/// Resident set size of this process.
pub fn read_rss_bytes() -> Option<u64> {
    let statm = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
    // SAFETY: sysconf has no preconditions.
    let page = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    (page > 0).then(|| pages * page as u64)
}

/// Kernel high-water mark of the resident set (`VmHWM`).
pub fn read_peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Resets the kernel high-water mark to the current RSS. Silently does nothing where unsupported.
fn reset_peak_rss() {
    let _ = std::fs::write("/proc/self/clear_refs", "5");
}

/// Hands freed heap pages back to the OS so an RSS baseline is not inflated by earlier runs in
/// the same process.
fn release_free_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: malloc_trim only walks the allocator's own free lists.
    unsafe {
        libc::malloc_trim(0);
    }
}

/// Point-in-time memory readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MemorySample {
    pub rss_bytes: Option<u64>,
    /// Live heap bytes, when the counting allocator is installed.
    pub allocator_live_bytes: Option<u64>,
}

pub fn measure_memory_footprint() -> MemorySample {
    MemorySample {
        rss_bytes: read_rss_bytes(),
        allocator_live_bytes: alloc::allocator_installed().then(|| alloc::live_bytes() as u64),
    }
}

/// Background thread sampling RSS at a fixed period, optionally to a CSV file of
/// `timestamp_ms,rss_bytes`.
pub struct RssSampler {
    stop: Arc<AtomicBool>,
    peak: Arc<AtomicU64>,
    handle: Option<JoinHandle<io::Result<()>>>,
    path: Option<PathBuf>,
}

impl RssSampler {
    pub fn start(interval: Duration, path: Option<&Path>) -> io::Result<Self> {
        let stop = Arc::new(AtomicBool::new(false));
        reset_peak_rss();
        let peak = Arc::new(AtomicU64::new(read_rss_bytes().unwrap_or(0)));
        let mut out = match path {
            Some(p) => {
                let mut w = BufWriter::new(File::create(p)?);
                writeln!(w, "timestamp_ms,rss_bytes")?;
                Some(w)
            }
            None => None,
        };
        let (s, pk) = (stop.clone(), peak.clone());
        let tick = interval.min(Duration::from_millis(10)).max(Duration::from_millis(1));
        let handle = std::thread::Builder::new().name("rss-sampler".into()).spawn(move || {
            let mut next = Instant::now();
            loop {
                let done = s.load(Ordering::Relaxed);
                if done || Instant::now() >= next {
                    if let Some(rss) = read_rss_bytes() {
                        pk.fetch_max(rss, Ordering::Relaxed);
                        if let Some(w) = out.as_mut() {
                            let ms = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default().as_millis();
                            writeln!(w, "{ms},{rss}")?;
                        }
                    }
                    next += interval;
                }
                if done {
                    break;
                }
                std::thread::sleep(tick);
            }
            if let Some(mut w) = out {
                w.flush()?;
            }
            Ok(())
        })?;
        Ok(Self {
            stop,
            peak,
            handle: Some(handle),
            path: path.map(Path::to_path_buf),
        })
    }

    /// Stops sampling and returns the peak RSS and the series file. The peak also takes the
    /// kernel high-water mark, which catches spikes shorter than the sampling interval.
    pub fn finish(mut self) -> io::Result<(u64, Option<PathBuf>)> {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            h.join().map_err(|_| io::Error::other("rss sampler panicked"))??;
        }
        let peak = self.peak.load(Ordering::Relaxed).max(read_peak_rss_bytes().unwrap_or(0));
        Ok((peak, self.path.take()))
    }
}

impl Drop for RssSampler {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Restores the thread's original CPU affinity when dropped.
struct Pin {
    saved: Option<libc::cpu_set_t>,
    cpu: Option<usize>,
}

fn pin_to_current_cpu() -> Pin {
    // SAFETY: cpu_set_t is plain data; the libc calls only read and write the sets we pass.
    unsafe {
        let mut saved: libc::cpu_set_t = std::mem::zeroed();
        if libc::sched_getaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &mut saved) != 0 {
            return Pin { saved: None, cpu: None };
        }
        let cpu = libc::sched_getcpu();
        if cpu < 0 {
            return Pin { saved: None, cpu: None };
        }
        let mut one: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(cpu as usize, &mut one);
        if libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &one) != 0 {
            return Pin { saved: None, cpu: None };
        }
        Pin {
            saved: Some(saved),
            cpu: Some(cpu as usize),
        }
    }
}

impl Drop for Pin {
    fn drop(&mut self) {
        if let Some(set) = &self.saved {
            // SAFETY: restores a mask previously returned by sched_getaffinity.
            unsafe { libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), set) };
        }
    }
}

/// The measured loop. Kept out of line so callgrind can restrict counting to it.
#[inline(never)]
pub fn execute_run_phase<I: KvIndex>(index: &mut I, requests: &[Request]) -> OutcomeTally {
    let mut tally = OutcomeTally::default();
    for r in requests {
        let outcome = execute(index, r);
        tally.record(r.kind(), outcome);
    }
    tally
}

trait Inspect: KvIndex {
    fn alex_stats(&self) -> Option<AlexStats> {
        None
    }
    fn heap_estimate(&self) -> Option<u64> {
        None
    }
}

impl Inspect for AlexIndex {
    fn alex_stats(&self) -> Option<AlexStats> {
        Some(self.stats())
    }
    fn heap_estimate(&self) -> Option<u64> {
        Some(self.heap_bytes() as u64)
    }
}

impl Inspect for ArtIndex {
    fn heap_estimate(&self) -> Option<u64> {
        Some(self.heap_bytes() as u64)
    }
}

impl Inspect for BPlusTree {
    fn heap_estimate(&self) -> Option<u64> {
        Some(self.heap_bytes() as u64)
    }
}

impl Inspect for NoopIndex {}

struct PhaseOutput {
    phases: PhaseDurations,
    tally: OutcomeTally,
    profile: ProfileResult,
    memory: MemoryFootprint,
    final_len: u64,
    alex_stats: Option<AlexStats>,
    warmup_count: u64,
}

fn run_phases<I: Inspect>(mut index: I, config: &ExperimentConfig, mut profiler: Profiler) -> Result<PhaseOutput, RunError> {
    let w = &config.workload;
    release_free_memory();
    let baseline = measure_memory_footprint();
    alloc::reset_peak();

    let keys = generate_population(w)?;
    let pairs = population_pairs(&keys);
    let (loaded, population_ns) = time_phase(|| index.bulk_load(&pairs));
    loaded?;
    drop(pairs);
    let requests: Vec<Request> = generate_requests(w, &keys).collect();
    drop(keys);

    let warmup: Vec<Request> = warmup_stream(config.warmup_reads, w.read_bounds, w.rng, w.seed).collect();
    let ((), warmup_ns) = time_phase(|| {
        for r in &warmup {
            black_box(index.read(black_box(r.key())));
        }
    });
    let warmup_count = warmup.len() as u64;
    drop(warmup);

    profiler.start();
    let (tally, run_ns) = time_phase(|| execute_run_phase(&mut index, &requests));
    let profile = profiler.stop();
    drop(requests);

    let end = measure_memory_footprint();
    let memory = MemoryFootprint {
        allocator_net_bytes: end
            .allocator_live_bytes
            .zip(baseline.allocator_live_bytes)
            .map(|(e, b)| e.saturating_sub(b)),
        allocator_live_bytes: end.allocator_live_bytes,
        allocator_baseline_bytes: baseline.allocator_live_bytes,
        rss_bytes: end.rss_bytes,
        rss_baseline_bytes: baseline.rss_bytes,
        rss_net_bytes: end.rss_bytes.zip(baseline.rss_bytes).map(|(e, b)| e.saturating_sub(b)),
        peak_rss_bytes: None,
        index_estimate_bytes: index.heap_estimate(),
    };

    let ((final_len, alex_stats), wrapup_ns) = time_phase(|| {
        let out = (index.len() as u64, index.alex_stats());
        drop(index);
        out
    });

    Ok(PhaseOutput {
        phases: PhaseDurations {
            population_ns,
            warmup_ns,
            run_ns,
            wrapup_ns,
        },
        tally,
        profile,
        memory,
        final_len,
        alex_stats,
        warmup_count,
    })
}

fn open_profiler(config: &ExperimentConfig, cpu: &CpuId) -> Result<Profiler, RunError> {
    if !config.profiler.enabled {
        return Ok(Profiler::disabled());
    }
    let p = Profiler::open(&EventMap::builtin(), cpu, config.profiler.level);
    if config.profiler.require_complete && !p.is_complete() {
        let mut why: Vec<String> = p.notes().to_vec();
        why.extend(p.missing().iter().map(|m| format!("{}: {}", m.input, m.reason)));
        return Err(RunError::Environment(format!(
            "counters for level {} are not all available: {}",
            config.profiler.level,
            why.join("; ")
        )));
    }
    Ok(p)
}

/// Executes one experiment and returns its report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport, RunError> {
    config.validate()?;
    let mut host = HostInfo::detect();
    let cpu = CpuId::detect();
    let profiler = open_profiler(config, &cpu)?;

    if let Some(d) = &config.output_dir {
        std::fs::create_dir_all(d)?;
    }
    let series_path = config
        .output_dir
        .as_ref()
        .map(|d| d.join(format!("{}.rss.csv", config.cell_id())));
    let sampler = if config.rss_interval_ms > 0 {
        Some(RssSampler::start(Duration::from_millis(config.rss_interval_ms), series_path.as_deref())?)
    } else {
        None
    };
    // pin after the sampler exists so it does not inherit the single-CPU mask
    let pin = pin_to_current_cpu();
    host.pinned_cpu = pin.cpu;

    let out = match config.index {
        IndexKind::Alex => run_phases(AlexIndex::new(config.tunables.alex.clone()), config, profiler),
        IndexKind::Art => run_phases(ArtIndex::new(), config, profiler),
        IndexKind::BPlusTree => run_phases(BPlusTree::with_order(config.tunables.btree_order), config, profiler),
        IndexKind::Noop => run_phases(NoopIndex::default(), config, profiler),
    };
    drop(pin);
    let (peak_rss, rss_series) = match sampler {
        Some(s) => {
            let (peak, path) = s.finish()?;
            (Some(peak), path)
        }
        None => (None, None),
    };
    let mut out = out?;
    out.memory.peak_rss_bytes = peak_rss;

    let mut report = assemble(config, host, out, rss_series);
    if config.instructions == InstructionSource::Callgrind {
        match callgrind_instructions(config) {
            Ok(ir) => {
                report.instructions_per_request = Some(ir as f64 / config.workload.request_count.max(1) as f64);
                report.instructions_source = Some("callgrind".into());
                report.unavailable.retain(|u| !u.starts_with("instructions_per_request"));
            }
            Err(e) => report.unavailable.push(format!("instructions_per_request: callgrind failed: {e}")),
        }
    }
    Ok(report)
}

fn assemble(config: &ExperimentConfig, host: HostInfo, out: PhaseOutput, rss_series: Option<PathBuf>) -> RunReport {
    let w = &config.workload;
    let requests = w.request_count;
    let profile = out.profile;
    let mut unavailable = Vec::new();
    let mut notes = profile.notes.clone();

    let instructions_per_request = profile.instructions.filter(|_| requests > 0).map(|i| i as f64 / requests as f64);
    if instructions_per_request.is_none() {
        unavailable.push("instructions_per_request: no instruction counter".to_string());
    }
    let cycles_per_request = profile.cycles.filter(|_| requests > 0).map(|c| c as f64 / requests as f64);
    if cycles_per_request.is_none() {
        unavailable.push("cycles_per_request: no cycle counter".to_string());
    }
    if profile.cpi.is_none() {
        unavailable.push("cpi: needs cycle and instruction counters".to_string());
    }
    let mut tmam: TmamBreakdown = profile.breakdown;
    if !config.profiler.enabled {
        tmam.unavailable = vec!["counters disabled".into()];
    }
    unavailable.extend(tmam.unavailable.iter().map(|u| format!("tmam: {u}")));
    let m = &out.memory;
    if m.allocator_net_bytes.is_none() {
        unavailable.push("allocator_net_bytes: counting allocator not installed".into());
    }
    if m.rss_bytes.is_none() {
        unavailable.push("rss_bytes: /proc/self/statm unreadable".into());
    }
    if m.peak_rss_bytes.is_none() {
        unavailable.push("peak_rss_bytes: sampler disabled".into());
    }

    let t = &out.tally;
    let expected_len = (w.population_count + t.insert.ok).saturating_sub(t.delete.ok);
    if config.index != IndexKind::Noop && out.final_len != expected_len {
        notes.push(format!(
            "final size {} differs from population + inserts - deletes = {expected_len}",
            out.final_len
        ));
    }
    if config.seed_from_entropy {
        notes.push(format!("seed {} drawn from entropy", w.seed));
    }

    RunReport {
        index: config.index.name().into(),
        pattern: w.pattern.to_string(),
        mix: mix_label(&w.mix),
        scale: config.label.scale.clone(),
        set: config.label.set.clone(),
        seed: w.seed,
        rng: format!("{:?}", w.rng),
        config: config.clone(),
        host,
        phases: out.phases,
        population_count: w.population_count,
        request_count: requests,
        warmup_count: out.warmup_count,
        avg_exec_time_us: if requests > 0 {
            out.phases.run_ns as f64 / 1000.0 / requests as f64
        } else {
            0.0
        },
        instructions_per_request,
        instructions_source: instructions_per_request.map(|_| "counters".into()),
        cycles_per_request,
        cpi: profile.cpi,
        tmam,
        counters: profile.sample,
        multiplex_ratio: profile.multiplex_ratio,
        event_map_section: profile.event_map_section,
        memory: out.memory,
        outcomes: out.tally,
        anomalies: out.tally.anomalies(),
        final_index_len: out.final_len,
        alex_stats: out.alex_stats,
        rss_series,
        unavailable,
        notes,
    }
}

fn self_exe() -> io::Result<PathBuf> {
    match std::env::var_os(EXE_ENV) {
        Some(p) => Ok(PathBuf::from(p)),
        None => std::env::current_exe(),
    }
}

/// Counts run-phase instructions by re-running the same experiment under callgrind.
fn callgrind_instructions(config: &ExperimentConfig) -> Result<u64, String> {
    if !callgrind::valgrind_available() {
        return Err("valgrind not found".into());
    }
    let exe = self_exe().map_err(|e| e.to_string())?;
    let mut child = config.clone();
    child.instructions = InstructionSource::Counters;
    child.profiler.enabled = false;
    child.profiler.require_complete = false;
    child.rss_interval_ms = 0;
    child.output_dir = None;
    // the warm-up only reads, so it cannot change what the run phase executes
    child.warmup_reads = 0;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default().as_nanos();
    let base = config
        .output_dir
        .clone()
        .unwrap_or_else(std::env::temp_dir)
        .join(format!(".{}-{}-{stamp}", config.cell_id(), std::process::id()));
    let cfg_path = base.with_extension("json");
    let out_path = base.with_extension("callgrind");
    let json = serde_json::to_string(&child).map_err(|e| e.to_string())?;
    std::fs::write(&cfg_path, json).map_err(|e| e.to_string())?;
    let mut cmd = callgrind::command(&exe, "*execute_run_phase*", &out_path);
    cmd.arg(EXEC_CONFIG_COMMAND).arg(&cfg_path);
    let r = callgrind::run(cmd, &out_path).map_err(|e| e.to_string());
    let _ = std::fs::remove_file(&cfg_path);
    let _ = std::fs::remove_file(&out_path);
    r
}
