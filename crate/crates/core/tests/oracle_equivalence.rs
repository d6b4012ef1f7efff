use idxbench_core::alex::{AlexConfig, AlexIndex};
use idxbench_core::art::ArtIndex;
use idxbench_core::btree::BPlusTree;
use idxbench_core::workload::{builtin_mix, generate_population, generate_requests, population_pairs, BuiltinMix, WorkloadConfig};
use idxbench_core::{execute, Key, KvIndex, OracleIndex, Request, Value};
use proptest::prelude::*;

fn small_alex() -> AlexIndex {
    // small nodes force expansions and splits within short sequences
    AlexIndex::new(AlexConfig {
        max_data_capacity: 64,
        fanout: 4,
        max_internal_slots: 16,
        ..AlexConfig::default()
    })
}

fn indexes() -> Vec<Box<dyn KvIndex>> {
    vec![
        Box::new(AlexIndex::new(AlexConfig::default())),
        Box::new(small_alex()),
        Box::new(ArtIndex::new()),
        Box::new(BPlusTree::new()),
        Box::new(BPlusTree::with_order(4)),
    ]
}

fn request() -> impl Strategy<Value = Request> {
    let key = prop_oneof![0u64..512, any::<u64>(), (0u64..64).prop_map(|k| k << 56)];
    (0u8..4, key, any::<Value>()).prop_map(|(op, k, v)| match op {
        0 => Request::Read(k),
        1 => Request::Update(k, v),
        2 => Request::Insert(k, v),
        _ => Request::Delete(k),
    })
}

fn replay(seed: &[(Key, Value)], reqs: &[Request]) -> Result<(), TestCaseError> {
    let mut oracle = OracleIndex::new();
    oracle.bulk_load(seed).unwrap();
    let mut idx = indexes();
    for i in idx.iter_mut() {
        i.bulk_load(seed).unwrap();
        prop_assert_eq!(i.check_invariants(), Ok(()));
    }
    for r in reqs {
        let want = execute(&mut oracle, r);
        for i in idx.iter_mut() {
            prop_assert_eq!(execute(i.as_mut(), r), want, "{} on {:?}", i.name(), r);
        }
    }
    for i in &idx {
        prop_assert_eq!(i.check_invariants(), Ok(()), "{}", i.name());
        prop_assert_eq!(i.len(), oracle.len());
        prop_assert_eq!(i.entries(), oracle.entries(), "{}", i.name());
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixed_sequences_from_empty(reqs in proptest::collection::vec(request(), 0..2_000)) {
        replay(&[], &reqs)?;
    }

    #[test]
    fn mixed_sequences_after_bulk_load(
        keys in proptest::collection::btree_set(0u64..100_000, 0..3_000),
        reqs in proptest::collection::vec(request(), 0..1_000),
    ) {
        let seed: Vec<(Key, Value)> = keys.into_iter().map(|k| (k, k + 1)).collect();
        replay(&seed, &reqs)?;
    }
}

#[test]
fn workload_streams_agree() {
    for mix in BuiltinMix::ALL {
        for cfg in [
            WorkloadConfig::consecutive(20_000, 30_000, builtin_mix(mix), 5),
            WorkloadConfig::random(20_000, 40_000, 15_000, builtin_mix(mix), 6),
        ] {
            let pop = generate_population(&cfg).unwrap();
            let pairs = population_pairs(&pop);
            let reqs: Vec<Request> = generate_requests(&cfg, &pop).collect();
            replay(&pairs, &reqs).unwrap();
        }
    }
}

#[test]
fn bulk_load_contract() {
    for mut i in indexes() {
        assert!(i.bulk_load(&[(1, 1), (1, 2)]).is_err(), "{}", i.name());
        assert!(i.is_empty());
        i.insert(3, 3).unwrap();
        assert!(i.bulk_load(&[(5, 5)]).is_err(), "{}", i.name());
        assert_eq!(i.entries(), vec![(3, 3)]);
    }
}
