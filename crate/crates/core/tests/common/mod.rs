#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use bskiplist::hashing::LevelHasher;
use bskiplist::{ElementKey, Level, PartitionLabel};

/// Partitions of a set computed directly from the level function: level k
/// holds every element of level >= k, cut before each element of level > k.
pub fn partition_from_scratch(
    set: &BTreeSet<u64>,
    levels: &LevelHasher,
) -> BTreeMap<PartitionLabel, Vec<ElementKey>> {
    let beta = levels.beta();
    let mut out = BTreeMap::new();
    for k in 1..=beta {
        let mut head = ElementKey::FRONT;
        let mut current = vec![ElementKey::FRONT];
        for &x in set {
            let l = levels.level_of(ElementKey(x));
            if l < k {
                continue;
            }
            if l > k {
                out.insert(PartitionLabel::new(head, k), std::mem::take(&mut current));
                head = ElementKey(x);
            }
            current.push(ElementKey(x));
        }
        out.insert(PartitionLabel::new(head, k), current);
    }
    out
}

/// Plain skip list: per-level sorted lists, no blocking.
pub struct ReferenceSkipList {
    lists: Vec<Vec<u64>>,
}

impl ReferenceSkipList {
    pub fn new(set: &BTreeSet<u64>, levels: &LevelHasher) -> Self {
        let beta = levels.beta() as usize;
        let mut lists = vec![vec![0u64]; beta + 1];
        for &x in set {
            for list in lists.iter_mut().take(levels.level_of(ElementKey(x)) as usize + 1).skip(1) {
                list.push(x);
            }
        }
        ReferenceSkipList { lists }
    }

    /// (level, head of the entered partition, predecessor) from the top.
    pub fn predecessors(&self, y: u64) -> Vec<(Level, u64, u64)> {
        let beta = self.lists.len() - 1;
        let mut out = Vec::new();
        let mut head = 0u64;
        for k in (1..=beta).rev() {
            let pred = *self.lists[k].iter().rev().find(|&&e| e < y).unwrap();
            out.push((k as Level, head, pred));
            head = pred;
        }
        out
    }
}
