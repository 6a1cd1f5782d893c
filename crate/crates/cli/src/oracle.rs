//! Brute-force reference for the partition structure.

use std::collections::{BTreeMap, BTreeSet};

use bskiplist::hashing::LevelHasher;
use bskiplist::{ElementKey, PartitionLabel};

/// Partitions of `set` built level by level from the level function alone.
pub fn partition_from_scratch(
    set: &BTreeSet<u64>,
    levels: &LevelHasher,
) -> BTreeMap<PartitionLabel, Vec<ElementKey>> {
    let mut out = BTreeMap::new();
    for k in 1..=levels.beta() {
        let mut chain: Vec<ElementKey> = vec![ElementKey::FRONT];
        for &x in set {
            let level = levels.level_of(ElementKey(x));
            if level < k {
                continue;
            }
            if level > k {
                let done = std::mem::replace(&mut chain, vec![ElementKey(x)]);
                out.insert(PartitionLabel::new(done[0], k), done);
            } else {
                chain.push(ElementKey(x));
            }
        }
        out.insert(PartitionLabel::new(chain[0], k), chain);
    }
    out
}
