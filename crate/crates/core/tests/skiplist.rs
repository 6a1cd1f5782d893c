mod common;

use std::collections::BTreeSet;

use bskiplist::blockstore::digest_hex;
use bskiplist::hashing::LevelHasher;
use bskiplist::skiplist::Fault;
use bskiplist::{
    BSkipList, BlockStore, ElementKey, Error, HashSeeds, MemStore, Params, PartitionLabel,
    SlotRecord,
};
use common::{partition_from_scratch, ReferenceSkipList};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fresh(capacity: u64, gamma: u64, block_size: u64, seed: u64) -> BSkipList<MemStore> {
    let params = Params::new(capacity, gamma, block_size).unwrap();
    BSkipList::new(params, HashSeeds::from_master(seed), MemStore::for_params(&params).unwrap()).unwrap()
}

fn levels_for(capacity: u64, gamma: u64, seed: u64) -> LevelHasher {
    let params = Params::new(capacity, gamma, 2).unwrap();
    LevelHasher::new(HashSeeds::from_master(seed).seed_level, gamma, params.beta)
}

fn key(x: u64) -> ElementKey {
    ElementKey(x)
}

fn label(x: u64, k: u8) -> PartitionLabel {
    PartitionLabel::new(ElementKey(x), k)
}

fn keys(xs: &[u64]) -> Vec<ElementKey> {
    xs.iter().map(|&x| ElementKey(x)).collect()
}

fn assert_matches_oracle(list: &BSkipList<MemStore>, set: &BTreeSet<u64>) {
    let expected = partition_from_scratch(set, &list.hashes().levels);
    assert_eq!(list.partitions().unwrap(), expected);
    assert_eq!(list.element_count(), set.len() as u64);
    let report = list.check_invariants().unwrap();
    assert!(report.is_clean(), "{:?}", report.violations);
}

#[test]
fn empty_structure_has_one_front_partition_per_level() {
    let mut list = fresh(1000, 16, 16, 42);
    let beta = list.params().beta;
    assert_eq!(beta, 5);
    let parts = list.partitions().unwrap();
    assert_eq!(parts.len(), beta as usize);
    for k in 1..=beta {
        assert_eq!(parts[&label(0, k)], vec![ElementKey::FRONT]);
    }
    assert_eq!(list.node_count(), beta as u64);
    assert_eq!(list.element_count(), 0);
    let strings = list.allocator().string_count();
    assert_eq!(strings, beta as u64);
    assert_eq!(list.allocator().occupied(), 2 * beta as u64);
    for x in [1, 17, 999, u64::MAX] {
        let r = list.lookup(key(x)).unwrap();
        assert!(!r.found);
        assert_eq!(r.partitions_read, beta as u32);
    }
    assert!(list.check_invariants().unwrap().is_clean());
}

#[test]
fn empty_structure_golden_digest() {
    let list = fresh(1000, 16, 16, 42);
    assert_eq!(
        digest_hex(&list.image_digest().unwrap()),
        "bae21f0df41621ad576f27d67529d0ee4ac383f182db9538dcff345983fef88f"
    );
}

#[test]
fn front_key_is_reserved() {
    let mut list = fresh(100, 4, 8, 1);
    assert!(matches!(list.insert(ElementKey::FRONT), Err(Error::ReservedKey)));
    assert!(matches!(list.delete(ElementKey::FRONT), Err(Error::ReservedKey)));
    assert!(matches!(list.lookup(ElementKey::FRONT), Err(Error::ReservedKey)));
    assert!(matches!(list.range_query(key(5), key(4)), Err(Error::InvalidRange { .. })));
}

#[test]
fn non_blank_store_is_rejected() {
    let params = Params::new(100, 4, 8).unwrap();
    let mut store = MemStore::for_params(&params).unwrap();
    store.begin_op().unwrap();
    store.write_slot(3, SlotRecord::End).unwrap();
    store.end_op().unwrap();
    let err = BSkipList::new(params, HashSeeds::from_master(1), store);
    assert!(matches!(err, Err(Error::StoreNotEmpty)));
}

/// Seed where 7 has level 3, 10 has level 2, 23 has level >= 3 and some
/// y in (10, 23) has level 3.
fn figure_seed() -> (u64, u64) {
    for seed in 0..100_000u64 {
        let lv = levels_for(32, 2, seed);
        if lv.level_of(key(7)) == 3 && lv.level_of(key(10)) == 2 && lv.level_of(key(23)) >= 3 {
            if let Some(y) = (11..23).find(|&y| lv.level_of(key(y)) == 3) {
                return (seed, y);
            }
        }
    }
    panic!("no seed found");
}

#[test]
fn worked_example_search_and_insert() {
    let (seed, y) = figure_seed();
    let mut list = fresh(32, 2, 16, seed);
    for x in [7, 10, 23] {
        assert!(list.insert(key(x)).unwrap().0);
    }
    let parts = list.partitions().unwrap();
    assert_eq!(parts[&label(7, 2)], keys(&[7, 10]));
    assert_eq!(parts[&label(10, 1)], keys(&[10]));

    let path = list.search_path(key(12)).unwrap();
    let l2 = path.at_level(2).unwrap();
    assert_eq!(l2.label, label(7, 2));
    assert_eq!(l2.predecessor(), key(10));
    let l1 = path.at_level(1).unwrap();
    assert_eq!(l1.label, label(10, 1));
    assert_eq!(l1.predecessor(), key(10));

    list.insert(key(y)).unwrap();
    let parts = list.partitions().unwrap();
    assert_eq!(parts[&label(7, 2)], keys(&[7, 10]));
    assert_eq!(parts[&label(y, 2)], keys(&[y]));
    assert_eq!(parts[&label(10, 1)], keys(&[10]));
    assert_eq!(parts[&label(y, 1)], keys(&[y]));
    let level3 = parts
        .iter()
        .find(|(l, v)| l.level == 3 && v.contains(&key(7)))
        .unwrap()
        .1;
    assert!(level3.windows(2).any(|w| w == keys(&[7, y]).as_slice()));
    assert_matches_oracle(&list, &[7, 10, 23, y].into_iter().collect());
}

/// Every 3-subset of {1..6}, every level assignment, every insertion order.
#[test]
fn exhaustive_three_element_sets() {
    let beta = Params::new(6, 2, 4).unwrap().beta;
    let subsets: Vec<[u64; 3]> = (1..=6u64)
        .flat_map(|a| (a + 1..=6).flat_map(move |b| (b + 1..=6).map(move |c| [a, b, c])))
        .collect();
    assert_eq!(subsets.len(), 20);
    let mut covered: BTreeSet<([u64; 3], [u8; 3])> = BTreeSet::new();
    let target = subsets.len() * (beta as usize).pow(3);
    let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut seed = 0u64;
    while covered.len() < target {
        assert!(seed < 2_000_000, "coverage stalled at {}", covered.len());
        let lv = levels_for(6, 2, seed);
        for set in &subsets {
            let assignment = set.map(|x| lv.level_of(key(x)));
            if !covered.insert((*set, assignment)) {
                continue;
            }
            let expected_set: BTreeSet<u64> = set.iter().copied().collect();
            let mut digests = BTreeSet::new();
            for order in &orders {
                // Worst case (every element at the top level) needs more
                // room than the expected-space table size.
                let params = Params::new(6, 2, 4).unwrap().with_slots(101).unwrap();
                let mut list = BSkipList::new(
                    params,
                    HashSeeds::from_master(seed),
                    MemStore::for_params(&params).unwrap(),
                )
                .unwrap();
                for &i in order {
                    list.insert(key(set[i])).unwrap();
                }
                assert_matches_oracle(&list, &expected_set);
                digests.insert(list.image_digest().unwrap());
            }
            assert_eq!(digests.len(), 1);
        }
        seed += 1;
    }
}

#[test]
fn search_path_matches_reference_skip_list() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut list = fresh(600, 4, 16, 11);
    let mut set = BTreeSet::new();
    while set.len() < 512 {
        let x = rng.gen_range(1..100_000u64);
        set.insert(x);
        list.insert(key(x)).unwrap();
    }
    let reference = ReferenceSkipList::new(&set, &list.hashes().levels);
    for _ in 0..2000 {
        let y = rng.gen_range(1..100_001u64);
        let path = list.search_path(key(y)).unwrap();
        let expected = reference.predecessors(y);
        assert_eq!(path.steps.len(), expected.len());
        for (step, &(k, head, pred)) in path.steps.iter().zip(&expected) {
            assert_eq!(step.level, k);
            assert_eq!(step.label, label(head, k));
            assert_eq!(step.predecessor(), key(pred));
        }
        let r = list.lookup(key(y)).unwrap();
        assert_eq!(r.found, set.contains(&y));
        assert!(r.partitions_read <= list.params().beta as u32);
        if !r.found {
            assert_eq!(r.partitions_read, list.params().beta as u32);
        }
    }
}

#[test]
fn random_trace_matches_partitioner() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut list = fresh(100, 2, 8, 3);
    let mut set = BTreeSet::new();
    for _ in 0..200 {
        let x = rng.gen_range(1..150u64);
        if rng.gen_bool(0.6) && set.len() < 100 {
            let (changed, _) = list.insert(key(x)).unwrap();
            assert_eq!(changed, set.insert(x));
        } else {
            let (changed, _) = list.delete(key(x)).unwrap();
            assert_eq!(changed, set.remove(&x));
        }
        assert_matches_oracle(&list, &set);
    }
}

#[test]
fn duplicate_insert_and_absent_delete_are_no_ops() {
    let mut list = fresh(100, 4, 8, 21);
    for x in [5, 9, 40] {
        list.insert(key(x)).unwrap();
    }
    let before = list.image_digest().unwrap();
    assert!(!list.insert(key(9)).unwrap().0);
    assert!(!list.delete(key(10)).unwrap().0);
    assert_eq!(list.image_digest().unwrap(), before);
    assert_eq!(list.element_count(), 3);
}

#[test]
fn insert_then_delete_restores_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut list = fresh(300, 4, 16, 8);
    for _ in 0..200 {
        list.insert(key(rng.gen_range(1..10_000))).unwrap();
    }
    for _ in 0..100 {
        let before = list.image_digest().unwrap();
        let x = rng.gen_range(1..10_000);
        if list.insert(key(x)).unwrap().0 {
            list.delete(key(x)).unwrap();
        }
        assert_eq!(list.image_digest().unwrap(), before);
    }
}

#[test]
fn capacity_is_enforced() {
    let mut list = fresh(3, 2, 4, 1);
    for x in 1..=3 {
        list.insert(key(x)).unwrap();
    }
    assert!(matches!(list.insert(key(4)), Err(Error::CapacityExceeded { capacity: 3 })));
    assert!(!list.insert(key(2)).unwrap().0);
    list.delete(key(1)).unwrap();
    list.insert(key(4)).unwrap();
    assert_matches_oracle(&list, &[2, 3, 4].into_iter().collect());
}

#[test]
fn range_queries_match_sorted_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut list = fresh(2000, 8, 16, 4);
    let mut set = BTreeSet::new();
    while set.len() < 1500 {
        let x = rng.gen_range(1..1_000_000u64);
        set.insert(x);
        list.insert(key(x)).unwrap();
    }
    for _ in 0..300 {
        let a = rng.gen_range(1..1_000_000u64);
        let b = a + rng.gen_range(0..200_000u64);
        let got = list.range_query(key(a), key(b)).unwrap().elements;
        let want: Vec<ElementKey> = set.range(a..=b).map(|&x| key(x)).collect();
        assert_eq!(got, want);
    }
    let all = list.range_query(key(1), key(u64::MAX)).unwrap().elements;
    assert_eq!(all.len(), set.len());
    assert_eq!(list.elements().unwrap(), all);
    let top = *set.iter().next_back().unwrap();
    assert!(list.range_query(key(top + 1), key(u64::MAX)).unwrap().elements.is_empty());
}

#[test]
fn space_bound_holds() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 5000;
    let mut list = fresh(n, 16, 16, 6);
    while list.element_count() < n {
        list.insert(key(rng.gen_range(1..u64::MAX))).unwrap();
    }
    let params = *list.params();
    let strings = list.allocator().string_count();
    let occupied = list.allocator().occupied();
    assert_eq!(occupied, list.node_count() + strings);
    assert!(list.load() <= params.max_load.as_f64());
    assert!(params.slots < 3 * n);
}

#[test]
fn corrupted_node_level_reports_layout_only() {
    let mut list = fresh(200, 2, 8, 31);
    for x in 1..=100 {
        list.insert(key(x * 3)).unwrap();
    }
    let image = list.store().snapshot().unwrap();
    let (slot, element) = image
        .windows(2)
        .enumerate()
        .find_map(|(i, w)| match (w[0], w[1]) {
            (SlotRecord::Node { .. }, SlotRecord::Node { element, level: 1 }) => {
                Some((i as u64 + 1, element))
            }
            _ => None,
        })
        .expect("a level-1 partition with two nodes");
    let store = list.allocator_mut().store_mut();
    store.begin_op().unwrap();
    store
        .write_slot(slot, SlotRecord::Node { element, level: 2 })
        .unwrap();
    store.end_op().unwrap();
    let report = list.check_invariants().unwrap();
    assert_eq!(
        report.classes().into_iter().collect::<Vec<_>>(),
        vec!["layout"]
    );
}

#[test]
fn skipped_merge_is_detected() {
    let mut list = fresh(200, 2, 8, 12);
    let set: Vec<u64> = (1..=60).collect();
    for &x in &set {
        list.insert(key(x)).unwrap();
    }
    let victim = *set
        .iter()
        .find(|&&x| list.level_of(key(x)) >= 2)
        .unwrap();
    list.set_fault(Some(Fault::SkipMerge));
    list.delete(key(victim)).unwrap();
    let report = list.check_invariants().unwrap();
    assert!(!report.is_clean());
    let expected: BTreeSet<u64> = set.iter().copied().filter(|&x| x != victim).collect();
    let oracle = partition_from_scratch(&expected, &list.hashes().levels);
    assert_ne!(list.partitions().unwrap(), oracle);
}

#[test]
fn file_backend_reopens_and_checks_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("list.bsl");
    let params = Params::new(500, 4, 16).unwrap();
    let mut mem = BSkipList::new(params, HashSeeds::from_master(77), MemStore::for_params(&params).unwrap()).unwrap();
    {
        let mut file = BSkipList::create_file(&path, params, 77).unwrap();
        for x in (1..400).map(|i| i * 7919 % 100_003) {
            let a = file.insert(key(x)).unwrap();
            let b = mem.insert(key(x)).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(file.image_digest().unwrap(), mem.image_digest().unwrap());
        file.into_store().flush().unwrap();
    }
    let mut reopened = BSkipList::open_file(&path, 77).unwrap();
    assert_eq!(reopened.element_count(), mem.element_count());
    assert_eq!(reopened.node_count(), mem.node_count());
    assert_eq!(reopened.image_digest().unwrap(), mem.image_digest().unwrap());
    assert!(reopened.check_invariants().unwrap().is_clean());
    assert!(reopened.contains(key(7919)).unwrap());
    assert!(matches!(
        BSkipList::open_file(&path, 78),
        Err(Error::SeedMismatch { stored: 77, given: 78 })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn image_depends_only_on_final_set(
        ops in proptest::collection::vec((any::<bool>(), 1u64..80), 0..120),
        seed in any::<u64>(),
    ) {
        let mut list = fresh(80, 2, 8, seed);
        let mut set = BTreeSet::new();
        for (ins, x) in ops {
            if ins {
                list.insert(key(x)).unwrap();
                set.insert(x);
            } else {
                list.delete(key(x)).unwrap();
                set.remove(&x);
            }
        }
        let mut direct = fresh(80, 2, 8, seed);
        for &x in &set {
            direct.insert(key(x)).unwrap();
        }
        prop_assert_eq!(list.image_digest().unwrap(), direct.image_digest().unwrap());
        prop_assert!(list.check_invariants().unwrap().is_clean());
        let expected = partition_from_scratch(&set, &list.hashes().levels);
        prop_assert_eq!(list.partitions().unwrap(), expected);
    }
}
