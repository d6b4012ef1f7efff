//! Acceptance run: one PASS or FAIL line per criterion, exit status 1 if any failed.
//!
//! Criteria that need hardware counters run through the binary with `--require-counters`; on a
//! host without them the binary exits with the environment code and the criterion fails as
//! blocked, with the reason it printed.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use idxbench::alloc::CountingAllocator;
use idxbench::emit::{self, ReportRow};
use idxbench::matrix::Manifest;
use idxbench_core::alex::{exponential_search, AlexConfig, AlexIndex, DataNode};
use idxbench_core::art::ArtIndex;
use idxbench_core::btree::BPlusTree;
use idxbench_core::workload::{builtin_mix, generate_population, generate_requests, BuiltinMix, WorkloadConfig};
use idxbench_core::{execute, Key, KvIndex, OracleIndex, Request, RequestKind, Value};
use idxbench_profiler::{
    compute_cpi, compute_level1, normalize_memory_breakdown, CounterSample, Level1, MemoryComponents, TmamInput,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator;

const BIN: &str = env!("CARGO_BIN_EXE_idxbench");

type Verdict = Result<String, String>;
type Criterion<'a> = Box<dyn Fn() -> Verdict + 'a>;

fn indexes() -> Vec<Box<dyn KvIndex>> {
    vec![
        Box::new(AlexIndex::new(AlexConfig::default())),
        // small nodes so splits and parent growth happen within short sequences
        Box::new(AlexIndex::new(AlexConfig {
            max_data_capacity: 64,
            fanout: 4,
            max_internal_slots: 16,
            ..AlexConfig::default()
        })),
        Box::new(ArtIndex::new()),
        Box::new(BPlusTree::new()),
        Box::new(BPlusTree::with_order(4)),
    ]
}

/// Keys that hit often, miss often, and share long byte prefixes.
fn random_key(rng: &mut StdRng, domain: u64) -> Key {
    match rng.random_range(0..10) {
        0..=6 => rng.random_range(0..domain),
        7 => rng.random(),
        8 => rng.random_range(0..64u64) << 56 | rng.random_range(0..4u64),
        _ => u64::MAX - rng.random_range(0..16u64),
    }
}

fn random_request(rng: &mut StdRng, domain: u64) -> Request {
    let k = random_key(rng, domain);
    match rng.random_range(0..4) {
        0 => Request::Read(k),
        1 => Request::Update(k, rng.random()),
        2 => Request::Insert(k, rng.random()),
        _ => Request::Delete(k),
    }
}

fn random_population(rng: &mut StdRng, domain: u64) -> Vec<(Key, Value)> {
    let n = rng.random_range(0..20_000usize);
    let keys: std::collections::BTreeSet<Key> = (0..n).map(|_| rng.random_range(0..domain)).collect();
    keys.into_iter().map(|k| (k, k ^ 0x5555)).collect()
}

fn oracle_equivalence() -> Verdict {
    let mut ops = 0u64;
    let mut kinds = [0u64; 4];
    for seed in 0..100u64 {
        let mut rng = StdRng::seed_from_u64(seed);
        let domain = rng.random_range(1_000..200_000u64);
        let pop = random_population(&mut rng, domain);
        let mut oracle = OracleIndex::new();
        oracle.bulk_load(&pop).map_err(|e| e.to_string())?;
        let mut idx = indexes();
        for i in idx.iter_mut() {
            i.bulk_load(&pop).map_err(|e| format!("seed {seed} {}: {e}", i.name()))?;
        }
        for step in 0..100_000 {
            let r = random_request(&mut rng, domain);
            kinds[r.kind().tag() as usize] += 1;
            let want = execute(&mut oracle, &r);
            for i in idx.iter_mut() {
                let got = execute(i.as_mut(), &r);
                if got != want {
                    return Err(format!("seed {seed} step {step} {}: {r:?} gave {got:?}, oracle {want:?}", i.name()));
                }
            }
            ops += 1;
        }
        let entries = oracle.entries();
        for i in &idx {
            if i.entries() != entries {
                return Err(format!("seed {seed} {}: final contents differ from the oracle", i.name()));
            }
        }
    }
    Ok(format!(
        "100 seeds, {ops} ops compared on 5 index configs (reads {}, updates {}, inserts {}, deletes {})",
        kinds[0], kinds[1], kinds[2], kinds[3]
    ))
}

fn structural_invariants() -> Verdict {
    let mut rng = StdRng::seed_from_u64(2024);
    let domain = 30_000;
    let pop: Vec<(Key, Value)> = (0..3_000u64).map(|k| (k * 7, k)).collect();
    let mut oracle = OracleIndex::new();
    oracle.bulk_load(&pop).unwrap();
    let mut idx = indexes();
    for i in idx.iter_mut() {
        i.bulk_load(&pop).unwrap();
        i.check_invariants().map_err(|e| format!("{} after bulk load: {e}", i.name()))?;
    }
    let mut checks = 0u64;
    for step in 0..10_000 {
        let r = random_request(&mut rng, domain);
        execute(&mut oracle, &r);
        for i in idx.iter_mut() {
            execute(i.as_mut(), &r);
            i.check_invariants().map_err(|e| format!("{} step {step} {r:?}: {e}", i.name()))?;
            if i.len() != oracle.len() {
                return Err(format!("{} step {step}: len {} but oracle holds {}", i.name(), i.len(), oracle.len()));
            }
            checks += 1;
        }
    }
    Ok(format!("{checks} checks after 10000 ops, final size {}", oracle.len()))
}

/// Insertion slot: just past the last occupied slot holding a smaller key.
fn scan_search(node: &DataNode, key: Key) -> (bool, usize) {
    let mut insertion = 0;
    for (slot, k) in node.occupied_slots() {
        if k == key {
            return (true, slot);
        }
        if k < key {
            insertion = slot + 1;
        }
    }
    (false, insertion)
}

fn random_node(rng: &mut StdRng) -> DataNode {
    let n = rng.random_range(1..300usize);
    let spread = rng.random_range(1..1_000u64);
    let mut keys: Vec<Key> = (0..n).map(|_| rng.random_range(0..n as u64 * spread)).collect();
    keys.sort_unstable();
    keys.dedup();
    let pairs: Vec<(Key, Value)> = keys.iter().map(|&k| (k, k + 1)).collect();
    let cap = (pairs.len() as f64 / rng.random_range(0.3..0.8)).ceil() as usize + 1;
    let mut node = DataNode::build(&pairs, cap.max(pairs.len() + 1));
    // perturb the trained layout so the predictions drift
    for _ in 0..rng.random_range(0..40) {
        let k = rng.random_range(0..n as u64 * spread + 100);
        if rng.random_bool(0.5) && node.len() < node.capacity() {
            let _ = node.insert(k, k);
        } else {
            node.remove(k);
        }
    }
    node
}

fn exponential_search_equivalence() -> Verdict {
    let mut rng = StdRng::seed_from_u64(77);
    let mut node = random_node(&mut rng);
    let mut found = 0;
    for t in 0..100_000 {
        if t % 50 == 0 {
            node = random_node(&mut rng);
        }
        let start = rng.random_range(0..node.capacity());
        let occupied: Vec<Key> = node.occupied_slots().map(|(_, k)| k).collect();
        let key = match rng.random_range(0..4) {
            0 if !occupied.is_empty() => occupied[rng.random_range(0..occupied.len())],
            1 if !occupied.is_empty() => occupied[rng.random_range(0..occupied.len())].wrapping_add(1),
            2 => rng.random(),
            _ => rng.random_range(0..=occupied.last().copied().unwrap_or(0).saturating_add(10)),
        };
        let got = exponential_search(&node, start, key);
        let want = scan_search(&node, key);
        if got != want {
            return Err(format!("start {start} key {key}: got {got:?}, linear scan {want:?}"));
        }
        found += got.0 as u32;
    }
    Ok(format!("100000 triples agree, {found} hits"))
}

fn tmam_arithmetic() -> Verdict {
    let mut rng = StdRng::seed_from_u64(5);
    let mut worst_sum = 0f64;
    let mut worst_term = 0f64;
    for i in 0..10_000 {
        let mut raw = [0f64; 5];
        for v in raw.iter_mut() {
            if !rng.random_bool(0.1) {
                *v = rng.random_range(0.0..0.5);
            }
        }
        if raw.iter().all(|&v| v == 0.0) {
            raw[0] = 0.01;
        }
        let mb = rng.random_range(0.0..1.0);
        let got = normalize_memory_breakdown(&MemoryComponents::from_array(raw), mb)
            .map_err(|e| format!("input {i}: {e}"))?
            .as_array();
        let total: f64 = raw.iter().sum();
        for (g, m) in got.iter().zip(raw) {
            worst_term = worst_term.max((g - m * mb / total).abs());
        }
        worst_sum = worst_sum.max((got.iter().sum::<f64>() - mb).abs());
    }
    if worst_sum > 1e-12 || worst_term > 1e-12 {
        return Err(format!("sum error {worst_sum:e}, term error {worst_term:e}"));
    }

    // 1000 cycles on a 4-wide core is 4000 slots
    let base = CounterSample::new(4)
        .with(TmamInput::Cycles, 1_000)
        .with(TmamInput::Instructions, 1_600);
    let cases = [
        // retired 2000 = 1/2, not delivered 1000 = 1/4, (2300 - 2000 + 4 * 50) = 500 = 1/8
        (2_000, 1_000, 2_300, 50, [0.5, 0.125, 0.25, 0.125]),
        // everything retired
        (4_000, 0, 4_000, 0, [1.0, 0.0, 0.0, 0.0]),
        // nothing delivered and nothing retired: all front end
        (0, 4_000, 0, 0, [0.0, 0.0, 1.0, 0.0]),
        // idle pipeline: all back end
        (0, 0, 0, 0, [0.0, 0.0, 0.0, 1.0]),
        // 1000 retired = 1/4, 3000 undelivered = 3/4, no room left for the back end
        (1_000, 3_000, 1_000, 0, [0.25, 0.0, 0.75, 0.0]),
    ];
    for (retired, undelivered, issued, recovery, want) in cases {
        let s = base
            .clone()
            .with(TmamInput::RetireSlots, retired)
            .with(TmamInput::UopsNotDelivered, undelivered)
            .with(TmamInput::UopsIssued, issued)
            .with(TmamInput::RecoveryCycles, recovery);
        let l: Level1 = compute_level1(&s).map_err(|e| e.to_string())?;
        let got = [l.retiring, l.bad_speculation, l.frontend_bound, l.backend_bound];
        if got != want {
            return Err(format!("level 1 for retired {retired}: got {got:?}, want {want:?}"));
        }
    }
    let cpi = compute_cpi(&base).map_err(|e| e.to_string())?;
    if cpi != 0.625 {
        return Err(format!("cpi {cpi}, want 0.625"));
    }
    Ok(format!(
        "10000 normalizations, max sum error {worst_sum:.1e}, max term error {worst_term:.1e}; {} level-1 cases exact",
        cases.len()
    ))
}

fn mix_fidelity() -> Verdict {
    let cfg = WorkloadConfig::consecutive(100_000, 1_000_000, builtin_mix(BuiltinMix::WriteHeavy), 99);
    let pop = generate_population(&cfg).map_err(|e| e.to_string())?;
    let mut counts = [0u64; 4];
    for r in generate_requests(&cfg, &pop) {
        counts[r.kind().tag() as usize] += 1;
    }
    let target = [40.0, 30.0, 20.0, 10.0];
    let kinds = [RequestKind::Read, RequestKind::Update, RequestKind::Insert, RequestKind::Delete];
    let mut parts = Vec::new();
    let mut ok = true;
    for (kind, want) in kinds.iter().zip(target) {
        let pct = counts[kind.tag() as usize] as f64 / 1e4;
        ok &= (pct - want).abs() <= 0.5;
        parts.push(format!("{kind:?} {pct:.3}%"));
    }
    let line = format!("1000000 requests: {}", parts.join(", "));
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

struct Cli {
    code: Option<i32>,
    stderr: String,
}

fn idxbench(args: &[&str]) -> Result<Cli, String> {
    let o = Command::new(BIN)
        .args(args)
        .env("IDXBENCH_EXE", BIN)
        .output()
        .map_err(|e| format!("cannot start {BIN}: {e}"))?;
    Ok(Cli {
        code: o.status.code(),
        stderr: String::from_utf8_lossy(&o.stderr).into_owned(),
    })
}

/// Runs a preset matrix into `out` and returns its rows; exit 3 means the host lacks what the
/// run requires.
fn matrix(out: &Path, args: &[&str]) -> Result<(Manifest, Vec<ReportRow>), String> {
    let mut full = vec!["matrix", "--out", out.to_str().unwrap(), "--format", "csv"];
    full.extend_from_slice(args);
    let run = idxbench(&full)?;
    let manifest: Option<Manifest> = fs::read_to_string(out.join("manifest.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    match (run.code, manifest) {
        (Some(0), Some(m)) => {
            let rows = emit::read_csv(&out.join("results.csv")).map_err(|e| e.to_string())?;
            Ok((m, rows))
        }
        (Some(3), m) => {
            let why = m
                .and_then(|m| m.cells.into_iter().find_map(|c| c.error))
                .unwrap_or_else(|| run.stderr.trim().to_string());
            Err(format!("BLOCKED: {why}"))
        }
        (code, _) => Err(format!("matrix exited with {code:?}: {}", run.stderr.trim())),
    }
}

fn by_cell(rows: &[ReportRow]) -> BTreeMap<(String, String, String), &ReportRow> {
    rows.iter().map(|r| ((r.set.clone(), r.mix.clone(), r.index.clone()), r)).collect()
}

fn cpi_floor(dir: &Path) -> Verdict {
    let (_, rows) = matrix(
        dir,
        &["--preset", "desk-small", "--require-counters", "--level", "1", "--seed", "21"],
    )?;
    let low: Vec<String> = rows
        .iter()
        .filter(|r| r.cpi.is_none_or(|c| c < 0.25))
        .map(|r| format!("{} {} {} cpi {:?}", r.set, r.mix, r.index, r.cpi))
        .collect();
    if low.is_empty() {
        let min = rows.iter().filter_map(|r| r.cpi).fold(f64::INFINITY, f64::min);
        Ok(format!("{} runs, lowest CPI {min:.3}", rows.len()))
    } else {
        Err(low.join("; "))
    }
}

fn instruction_blowup(dir: &Path) -> Verdict {
    let mut ratios = Vec::new();
    for set in ["consecutive-160k", "consecutive-1.6m"] {
        let (_, rows) = matrix(
            &dir.join(set),
            &[
                "--preset", "desk-small", "--set", set, "--only-mix", "read-only", "--only-mix", "insert-only",
                "--instructions", "callgrind", "--no-counters", "--seed", "7",
            ],
        )?;
        let cells = by_cell(&rows);
        let mut ratio = BTreeMap::new();
        for index in ["alex", "art", "btree"] {
            let ipr = |mix: &str| {
                cells
                    .get(&(set.to_string(), mix.to_string(), index.to_string()))
                    .and_then(|r| r.instr_per_request)
                    .ok_or_else(|| format!("{set} {mix} {index}: no instruction count"))
            };
            ratio.insert(index, ipr("insert-only")? / ipr("read-only")?);
        }
        let (alex, art, btree) = (ratio["alex"], ratio["art"], ratio["btree"]);
        let line = format!("{set}: alex {alex:.2}x, art {art:.2}x, btree {btree:.2}x");
        if alex < 4.0 || alex <= art || alex <= btree {
            return Err(line);
        }
        ratios.push(line);
    }
    Ok(format!("insert-only / read-only instructions per request: {}", ratios.join("; ")))
}

fn cpi_ordering(dir: &Path) -> Verdict {
    let (_, rows) = matrix(
        dir,
        &[
            "--preset", "desk-large", "--set", "consecutive-16m", "--only-mix", "read-only", "--only-mix", "read-heavy",
            "--require-counters", "--level", "1", "--seed", "8",
        ],
    )?;
    let cells = by_cell(&rows);
    let mut parts = Vec::new();
    for mix in ["read-only", "read-heavy"] {
        let cpi = |index: &str| {
            cells
                .get(&("consecutive-16m".into(), mix.into(), index.into()))
                .and_then(|r| r.cpi)
                .ok_or_else(|| format!("{mix} {index}: no cpi"))
        };
        let (alex, art, btree) = (cpi("alex")?, cpi("art")?, cpi("btree")?);
        let line = format!("{mix}: alex {alex:.3}, art {art:.3}, btree {btree:.3}");
        if alex > art || alex > btree {
            return Err(line);
        }
        parts.push(line);
    }
    Ok(parts.join("; "))
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}

fn memory_bound_dominance(dir: &Path) -> Verdict {
    let (_, rows) = matrix(
        dir,
        &["--preset", "desk-large", "--only-mix", "read-only", "--require-counters", "--level", "4", "--seed", "9"],
    )?;
    let mut bad = Vec::new();
    for r in &rows {
        let (Some(l1), Some(mem)) = (r.level1(), r.memory()) else {
            bad.push(format!("{} {}: breakdown missing", r.set, r.index));
            continue;
        };
        if argmax(&l1) != 3 || argmax(&mem) != 3 {
            bad.push(format!("{} {}: level1 {l1:?} memory {mem:?}", r.set, r.index));
        }
    }
    if bad.is_empty() {
        Ok(format!("{} read-only runs: back end and dram lead everywhere", rows.len()))
    } else {
        Err(bad.join("; "))
    }
}

fn footprint_directions(dir: &Path) -> Verdict {
    let (_, ro) = matrix(
        &dir.join("ro"),
        &["--preset", "desk-large", "--only-mix", "read-only", "--no-counters", "--warmup", "1000", "--seed", "10"],
    )?;
    let (_, io) = matrix(
        &dir.join("io"),
        &[
            "--preset", "desk-large", "--set", "consecutive-1.6m", "--set", "consecutive-16m", "--only-mix", "insert-only",
            "--no-counters", "--warmup", "1000", "--seed", "10",
        ],
    )?;
    let cells = by_cell(&ro);
    let alloc = |set: &str, mix: &str, index: &str, cells: &BTreeMap<_, &ReportRow>| {
        cells
            .get(&(set.to_string(), mix.to_string(), index.to_string()))
            .and_then(|r| r.allocator_net_bytes)
            .map(|b| b as f64 / (1 << 20) as f64)
            .ok_or_else(|| format!("{set} {mix} {index}: no allocator footprint"))
    };
    let mut parts = Vec::new();
    let mut failed = false;
    for set in ["consecutive-1.6m", "consecutive-16m", "random-16m"] {
        let (alex, art, btree) = (
            alloc(set, "read-only", "alex", &cells)?,
            alloc(set, "read-only", "art", &cells)?,
            alloc(set, "read-only", "btree", &cells)?,
        );
        failed |= art <= alex || art <= btree;
        parts.push(format!("{set} read-only MiB: alex {alex:.0}, art {art:.0}, btree {btree:.0}"));
    }
    let icells = by_cell(&io);
    for set in ["consecutive-1.6m", "consecutive-16m"] {
        for index in ["alex", "art", "btree"] {
            let (r, i) = (alloc(set, "read-only", index, &cells)?, alloc(set, "insert-only", index, &icells)?);
            failed |= i <= r;
            parts.push(format!("{set} {index} insert-only {i:.0} vs read-only {r:.0}"));
        }
    }
    let line = parts.join("; ");
    if failed {
        Err(line)
    } else {
        Ok(line)
    }
}

fn degradation(dir: &Path) -> Verdict {
    let (manifest, rows) = matrix(dir, &["--preset", "desk-small", "--no-counters", "--seed", "11"])?;
    if manifest.failures != 0 || rows.len() != 36 || manifest.cells.len() != 36 {
        return Err(format!("{} cells, {} failures, {} rows", manifest.cells.len(), manifest.failures, rows.len()));
    }
    for entry in &manifest.cells {
        let path = entry.report.as_ref().ok_or(format!("{}: no report path", entry.cell))?;
        let report = &emit::load_json(&fs::read_to_string(path).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?[0];
        let marked = report.tmam.level1.is_none()
            && report.tmam.level3_backend.is_none()
            && report.tmam.level4_memory.is_none()
            && report.cpi.is_none()
            && report.unavailable.iter().any(|u| u.starts_with("tmam"))
            && report.unavailable.iter().any(|u| u.starts_with("cpi"));
        if !marked {
            return Err(format!("{}: TMAM fields not marked unavailable", entry.cell));
        }
        if report.avg_exec_time_us.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || report.footprint_bytes().is_none() {
            return Err(format!("{}: timing or footprint missing", entry.cell));
        }
    }
    Ok("36 cells ran, each with timing and footprint and TMAM marked unavailable".into())
}

fn main() -> ExitCode {
    // Flags cargo test forwards are ignored, except --list; bare words filter criteria by name.
    let args: Vec<String> = std::env::args().skip(1).collect();
    let list = args.iter().any(|a| a == "--list");
    let filter: Vec<String> = args.into_iter().filter(|a| !a.starts_with('-')).collect();
    let scratch = tempfile::tempdir().expect("scratch directory");
    let sub = |name: &str| scratch.path().join(name);
    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("oracle-equivalence", Box::new(oracle_equivalence)),
        ("structural-invariants", Box::new(structural_invariants)),
        ("exponential-search", Box::new(exponential_search_equivalence)),
        ("tmam-arithmetic", Box::new(tmam_arithmetic)),
        ("mix-fidelity", Box::new(mix_fidelity)),
        ("cpi-floor", Box::new(move || cpi_floor(&sub("cpi-floor")))),
        ("instruction-blowup", Box::new(move || instruction_blowup(&sub("blowup")))),
        ("cpi-ordering", Box::new(move || cpi_ordering(&sub("cpi-ordering")))),
        ("memory-bound-dominance", Box::new(move || memory_bound_dominance(&sub("memory-bound")))),
        ("footprint-directions", Box::new(move || footprint_directions(&sub("footprint")))),
        ("degradation", Box::new(move || degradation(&sub("degradation")))),
    ];
    if list {
        for (name, _) in &criteria {
            println!("{name}: test");
        }
        return ExitCode::SUCCESS;
    }
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let verdict = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match verdict {
            Ok(msg) => println!("[PASS] {name}: {msg} ({secs:.1} s)"),
            Err(msg) => {
                failed += 1;
                println!("[FAIL] {name}: {msg} ({secs:.1} s)");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
