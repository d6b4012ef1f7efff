use idxbench_core::alex::{AlexConfig, AlexIndex};
use idxbench_core::workload::{builtin_mix, generate_population, generate_requests, population_pairs, BuiltinMix, WorkloadConfig};
use idxbench_core::{execute, KvIndex, Outcome};

fn loaded(cfg: &WorkloadConfig) -> (AlexIndex, Vec<u64>) {
    let pop = generate_population(cfg).unwrap();
    let mut alex = AlexIndex::new(AlexConfig::default());
    alex.bulk_load(&population_pairs(&pop)).unwrap();
    (alex, pop)
}

#[test]
fn consecutive_inserts_mostly_append() {
    let cfg = WorkloadConfig::consecutive(160_000, 160_000, builtin_mix(BuiltinMix::InsertOnly), 1);
    let (mut alex, pop) = loaded(&cfg);
    for r in generate_requests(&cfg, &pop) {
        assert_eq!(execute(&mut alex, &r), Outcome::Ok);
    }
    let s = alex.stats();
    assert_eq!(alex.len(), 320_000);
    assert!(s.appends_without_remodel >= 10 * s.model_retrains.max(1), "{s:?}");
    assert!(s.root_expansions > 0, "{s:?}");
    // appends land in the gap after the maximum; only the inserts before the mode latches shift
    assert!(s.shifted_slots < 160_000, "{s:?}");
    alex.check_invariants().unwrap();
}

#[test]
fn random_inserts_retrain_and_split() {
    let cfg = WorkloadConfig::random(50_000, 1_000_000, 200_000, builtin_mix(BuiltinMix::InsertOnly), 2);
    let (mut alex, pop) = loaded(&cfg);
    for r in generate_requests(&cfg, &pop) {
        assert_eq!(execute(&mut alex, &r), Outcome::Ok);
    }
    let s = alex.stats();
    assert!(s.node_expansions > 0 && s.model_retrains > 0, "{s:?}");
    assert_eq!(s.appends_without_remodel, 0, "{s:?}");
    alex.check_invariants().unwrap();
}

#[test]
fn read_only_consecutive_finds_every_key() {
    let cfg = WorkloadConfig::consecutive(100_000, 100_000, builtin_mix(BuiltinMix::ReadOnly), 3);
    let (mut alex, pop) = loaded(&cfg);
    let before = alex.stats();
    for r in generate_requests(&cfg, &pop) {
        assert!(matches!(execute(&mut alex, &r), Outcome::Found(_)));
    }
    let after = alex.stats();
    assert_eq!(after.model_retrains, before.model_retrains);
    assert!(after.exponential_search_steps > before.exponential_search_steps);
}
