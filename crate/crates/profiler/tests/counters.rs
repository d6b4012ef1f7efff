use idxbench_profiler::calibration::{chase_ring, fp_chain, independent_adds, pointer_chase};
use idxbench_profiler::eventmap::{EventDescriptor, EventMap, EventMapSection, TmamInput};
use idxbench_profiler::{open_counters, CpuId, Profiler};

fn software_section() -> EventMapSection {
    let mut text = String::from("[soft]\nmatch = any\ncycles = sw:task-clock\ninstructions = sw:page-faults\n");
    for input in TmamInput::ALL.iter().skip(2) {
        text.push_str(&format!("{input} = unavailable\n"));
    }
    EventMap::parse(&text).unwrap().sections.remove(0)
}

fn hardware_counters_work() -> bool {
    idxbench_profiler::PerfCounter::open(EventDescriptor::Hardware(idxbench_profiler::eventmap::GenericEvent::Cycles)).is_ok()
}

#[test]
fn software_events_bracket_a_region() {
    let section = software_section();
    let group = open_counters(&section, 1).expect("software counters open");
    assert_eq!(group.opened(), 2);
    assert_eq!(group.missing().len(), 4);
    assert!(!group.is_complete());
    group.start().unwrap();
    let buf: Vec<u8> = vec![1; 8 << 20];
    std::hint::black_box(independent_adds(20_000_000) ^ buf.iter().map(|&b| b as u64).sum::<u64>());
    group.stop().unwrap();
    let s = group.sample().unwrap();
    // task-clock is in nanoseconds of on-cpu time
    assert!(s.cycles().unwrap() > 1_000_000, "{s:?}");
    assert!(s.instructions().unwrap() > 0, "touching 8 MiB must fault");
    assert!(s.multiplex_ratio > 0.99);
    // nothing counts once stopped
    let before = group.sample().unwrap().cycles();
    independent_adds(5_000_000);
    assert_eq!(group.sample().unwrap().cycles(), before);
}

#[test]
fn profiler_degrades_without_failing() {
    let mut p = Profiler::open(&EventMap::builtin(), &CpuId::detect(), 4);
    p.start();
    independent_adds(1_000_000);
    let r = p.stop();
    if p.is_complete() {
        assert!(r.breakdown.level1.is_some() && r.cpi.is_some());
    } else {
        assert!(!r.breakdown.unavailable.is_empty());
        assert!(r.breakdown.level4_memory.is_none() || r.breakdown.level1.is_some());
    }
    let mut off = Profiler::disabled();
    off.start();
    let r = off.stop();
    assert!(r.cpi.is_none() && r.breakdown.level1.is_none());
    assert_eq!(r.breakdown.unavailable, vec!["counters disabled".to_string()]);
}

fn measure<F: FnOnce()>(f: F) -> idxbench_profiler::ProfileResult {
    let mut p = Profiler::open(&EventMap::builtin(), &CpuId::detect(), 4);
    assert!(p.is_complete(), "missing counters: {:?}", p.missing());
    p.start();
    f();
    p.stop()
}

const LLC_BYTES: usize = 32 << 20;

#[test]
#[ignore = "needs hardware performance counters"]
fn calibration_pointer_chase_is_memory_bound() {
    assert!(hardware_counters_work());
    let ring = chase_ring(10 * LLC_BYTES / 8, 1);
    let r = measure(|| {
        pointer_chase(&ring, 20_000_000);
    });
    let l1 = r.breakdown.level1.unwrap();
    let split = r.breakdown.level3_backend.unwrap();
    assert!(l1.backend_bound > 0.6, "{l1:?}");
    assert!(split.memory_bound > 3.0 * split.core_bound, "{split:?}");
    assert!(r.breakdown.level4_memory.unwrap().dram_bound > 0.3);
    assert!(r.cpi.unwrap() >= 0.25);
}

#[test]
#[ignore = "needs hardware performance counters"]
fn calibration_l1_resident_chase_avoids_dram() {
    let ring = chase_ring(2048, 2);
    let r = measure(|| {
        pointer_chase(&ring, 50_000_000);
    });
    assert!(r.breakdown.level4_memory.unwrap().dram_bound < 0.05);
}

#[test]
#[ignore = "needs hardware performance counters"]
fn calibration_independent_adds_have_low_cpi() {
    let r = measure(|| {
        independent_adds(100_000_000);
    });
    let cpi = r.cpi.unwrap();
    assert!((0.25..0.5).contains(&cpi), "cpi {cpi}");
}

#[test]
#[ignore = "needs hardware performance counters"]
fn calibration_fp_chain_is_core_bound() {
    let r = measure(|| {
        fp_chain(20_000_000);
    });
    let split = r.breakdown.level3_backend.unwrap();
    assert!(split.core_bound > split.memory_bound, "{split:?}");
}

#[test]
#[ignore = "needs hardware performance counters"]
fn calibration_identical_regions_match() {
    let a = measure(|| {
        independent_adds(10_000_000);
    });
    let b = measure(|| {
        independent_adds(10_000_000);
    });
    let (a, b) = (a.instructions.unwrap() as f64, b.instructions.unwrap() as f64);
    assert!((a - b).abs() / a < 0.01, "{a} vs {b}");
}
