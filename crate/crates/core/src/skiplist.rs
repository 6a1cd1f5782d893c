//! The B-skip-list: a skip list whose level-k list is cut into partitions
//! at the elements of level > k, each partition stored as one allocator
//! string under the label (smallest element, k).
//!
//! No pointers are stored. Descending from element `x` at level `k` lands
//! in partition `(x, k - 1)`, which exists because `level(x) >= k`. Range
//! scans move forward with the search path as a cursor stack.

use std::collections::{BTreeMap, BTreeSet};

use crate::allocator::{Allocator, LayoutViolation};
use crate::blockstore::{BlockStore, Digest, FileStore, IoStats};
use crate::error::{Error, Result};
use crate::hashing::{HashFamily, HashSeeds, LoadFactor, Params};
use crate::key::{ElementKey, Level, PartitionLabel};

/// One level of a search path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathStep {
    pub level: Level,
    /// Partition the search entered at this level.
    pub label: PartitionLabel,
    /// Position of the predecessor inside `nodes`.
    pub index: usize,
    pub nodes: Vec<ElementKey>,
}

impl PathStep {
    pub fn predecessor(&self) -> ElementKey {
        self.nodes[self.index]
    }
}

/// Entries from level beta down to level 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchPath {
    pub steps: Vec<PathStep>,
}

impl SearchPath {
    pub fn at_level(&self, level: Level) -> Option<&PathStep> {
        self.steps.iter().find(|s| s.level == level)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LookupResult {
    pub found: bool,
    pub io: IoStats,
    /// Allocator lookups performed; at most one per level.
    pub partitions_read: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RangeResult {
    pub elements: Vec<ElementKey>,
    pub io: IoStats,
}

/// Fault hooks for negative controls.
#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Deleting an element of level >= 2 leaves the level-1 partitions
    /// unmerged.
    SkipMerge,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Layout(LayoutViolation),
    MissingFront { level: Level },
    BadLabelLevel { label: PartitionLabel },
    NodeLevel { label: PartitionLabel, element: ElementKey },
    HeadLevel { label: PartitionLabel },
    Membership { element: ElementKey, levels: Vec<Level> },
    Boundary { level: Level },
    Refinement { level: Level },
    Count { what: &'static str, tracked: u64, found: u64 },
}

impl Violation {
    pub fn class(&self) -> &'static str {
        match self {
            Violation::Layout(_) => "layout",
            Violation::MissingFront { .. } => "missing-front",
            Violation::BadLabelLevel { .. } => "label-level",
            Violation::NodeLevel { .. } => "node-level",
            Violation::HeadLevel { .. } => "head-level",
            Violation::Membership { .. } => "membership",
            Violation::Boundary { .. } => "boundary",
            Violation::Refinement { .. } => "refinement",
            Violation::Count { .. } => "count",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InvariantReport {
    pub violations: Vec<Violation>,
}

impl InvariantReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn classes(&self) -> BTreeSet<&'static str> {
        self.violations.iter().map(Violation::class).collect()
    }
}

pub struct BSkipList<S> {
    params: Params,
    hashes: HashFamily,
    alloc: Allocator<S>,
    elements: u64,
    nodes: u64,
    fault: Option<Fault>,
}

impl<S: BlockStore> BSkipList<S> {
    /// Builds an empty structure: one front-only partition per level.
    pub fn new(params: Params, seeds: HashSeeds, store: S) -> Result<Self> {
        check_geometry(&params, &store)?;
        if !store.is_blank()? {
            return Err(Error::StoreNotEmpty);
        }
        let hashes = HashFamily::new(seeds, &params);
        let mut alloc = Allocator::new(store, hashes.labels.clone(), params.max_load)?;
        for k in 1..=params.beta {
            alloc.insert(PartitionLabel::new(ElementKey::FRONT, k), &[ElementKey::FRONT])?;
        }
        Ok(BSkipList {
            params,
            hashes,
            alloc,
            elements: 0,
            nodes: params.beta as u64,
            fault: None,
        })
    }

    /// Reattaches to a populated store built with the same params and seeds.
    pub fn attach(params: Params, seeds: HashSeeds, store: S) -> Result<Self> {
        check_geometry(&params, &store)?;
        let hashes = HashFamily::new(seeds, &params);
        let alloc = Allocator::new(store, hashes.labels.clone(), params.max_load)?;
        let mut list = BSkipList {
            params,
            hashes,
            alloc,
            elements: 0,
            nodes: 0,
            fault: None,
        };
        let parts = list.partitions()?;
        for k in 1..=params.beta {
            if !parts.contains_key(&PartitionLabel::new(ElementKey::FRONT, k)) {
                return Err(Error::Corrupt(format!("no front partition at level {k}")));
            }
        }
        list.nodes = parts.values().map(|v| v.len() as u64).sum();
        list.elements = parts
            .iter()
            .filter(|(l, _)| l.level == 1)
            .map(|(_, v)| v.len() as u64)
            .sum::<u64>()
            - 1;
        Ok(list)
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn hashes(&self) -> &HashFamily {
        &self.hashes
    }

    pub fn level_of(&self, x: ElementKey) -> Level {
        self.hashes.level_of(x)
    }

    pub fn element_count(&self) -> u64 {
        self.elements
    }

    /// Stored nodes, including the beta front nodes.
    pub fn node_count(&self) -> u64 {
        self.nodes
    }

    pub fn load(&self) -> f64 {
        self.alloc.load()
    }

    pub fn allocator(&self) -> &Allocator<S> {
        &self.alloc
    }

    #[doc(hidden)]
    pub fn allocator_mut(&mut self) -> &mut Allocator<S> {
        &mut self.alloc
    }

    pub fn store(&self) -> &S {
        self.alloc.store()
    }

    pub fn into_store(self) -> S {
        self.alloc.into_store()
    }

    pub fn image_digest(&self) -> Result<Digest> {
        self.alloc.store().image_digest()
    }

    #[doc(hidden)]
    pub fn set_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    fn measured<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<(T, IoStats)> {
        self.alloc.store_mut().begin_op()?;
        let out = f(self);
        let io = self.alloc.store_mut().end_op()?;
        Ok((out?, io))
    }

    fn fetch(&mut self, label: PartitionLabel) -> Result<Vec<ElementKey>> {
        self.alloc
            .lookup(&label)?
            .payload
            .ok_or_else(|| Error::Corrupt(format!("partition {label} is missing")))
    }

    /// Top-down descent. With `inclusive` the predecessor is the largest
    /// node <= y, otherwise the largest node < y. Stops at the first level
    /// holding `y` when `stop_on_hit` is set.
    fn descend(&mut self, y: ElementKey, inclusive: bool, stop_on_hit: bool) -> Result<(SearchPath, bool)> {
        let mut steps = Vec::with_capacity(self.params.beta as usize);
        let mut label = PartitionLabel::new(ElementKey::FRONT, self.params.beta);
        let mut hit = false;
        for level in (1..=self.params.beta).rev() {
            let nodes = self.fetch(label)?;
            let below = if inclusive {
                nodes.partition_point(|&e| e <= y)
            } else {
                nodes.partition_point(|&e| e < y)
            };
            if below == 0 {
                return Err(Error::Corrupt(format!(
                    "partition {label} does not start below {y}"
                )));
            }
            let index = below - 1;
            let pred = nodes[index];
            hit = pred == y;
            steps.push(PathStep {
                level,
                label,
                index,
                nodes,
            });
            if hit && stop_on_hit {
                break;
            }
            label = PartitionLabel::new(pred, level.saturating_sub(1));
        }
        Ok((SearchPath { steps }, hit))
    }

    /// Predecessor search: at each level, the largest node strictly below `y`.
    pub fn search_path(&mut self, y: ElementKey) -> Result<SearchPath> {
        check_key(y)?;
        Ok(self.descend(y, false, false)?.0)
    }

    pub fn lookup(&mut self, y: ElementKey) -> Result<LookupResult> {
        check_key(y)?;
        let ((found, partitions_read), io) = self.measured(|s| {
            let (path, hit) = s.descend(y, true, true)?;
            Ok((hit, path.steps.len() as u32))
        })?;
        Ok(LookupResult {
            found,
            io,
            partitions_read,
        })
    }

    pub fn contains(&mut self, y: ElementKey) -> Result<bool> {
        Ok(self.lookup(y)?.found)
    }

    /// Inserts `y`; returns false (and changes nothing) if already present.
    pub fn insert(&mut self, y: ElementKey) -> Result<(bool, IoStats)> {
        check_key(y)?;
        self.measured(|s| s.insert_inner(y))
    }

    fn insert_inner(&mut self, y: ElementKey) -> Result<bool> {
        let (path, hit) = self.descend(y, true, true)?;
        if hit {
            return Ok(false);
        }
        if self.elements >= self.params.capacity {
            return Err(Error::CapacityExceeded {
                capacity: self.params.capacity,
            });
        }
        let top = self.level_of(y);
        let mut writes: Vec<(PartitionLabel, Vec<ElementKey>)> = Vec::new();
        for step in path.steps.iter().filter(|s| s.level <= top) {
            self.alloc.delete(&step.label)?;
            let (left, right) = step.nodes.split_at(step.index + 1);
            if step.level == top {
                let mut joined = left.to_vec();
                joined.push(y);
                joined.extend_from_slice(right);
                writes.push((step.label, joined));
            } else {
                let mut split = Vec::with_capacity(right.len() + 1);
                split.push(y);
                split.extend_from_slice(right);
                writes.push((step.label, left.to_vec()));
                writes.push((PartitionLabel::new(y, step.level), split));
            }
        }
        for (label, payload) in writes {
            self.alloc.insert(label, &payload)?;
        }
        self.elements += 1;
        self.nodes += top as u64;
        Ok(true)
    }

    /// Deletes `y`; returns false (and changes nothing) if absent.
    pub fn delete(&mut self, y: ElementKey) -> Result<(bool, IoStats)> {
        check_key(y)?;
        self.measured(|s| s.delete_inner(y))
    }

    fn delete_inner(&mut self, y: ElementKey) -> Result<bool> {
        let top = self.level_of(y);
        let (path, _) = self.descend(y, false, false)?;
        let present = path
            .at_level(top)
            .is_some_and(|s| s.nodes.get(s.index + 1) == Some(&y));
        if !present {
            return Ok(false);
        }
        let mut writes: Vec<(PartitionLabel, Vec<ElementKey>)> = Vec::new();
        for step in path.steps.iter().filter(|s| s.level <= top) {
            if step.level == top {
                self.alloc.delete(&step.label)?;
                let mut rest = step.nodes.clone();
                rest.remove(step.index + 1);
                writes.push((step.label, rest));
            } else {
                if step.level == 1 && self.fault == Some(Fault::SkipMerge) {
                    continue;
                }
                let right_label = PartitionLabel::new(y, step.level);
                self.alloc.delete(&step.label)?;
                let right = self.alloc.delete(&right_label)?;
                let mut merged = step.nodes.clone();
                merged.extend_from_slice(&right[1..]);
                writes.push((step.label, merged));
            }
        }
        for (label, payload) in writes {
            self.alloc.insert(label, &payload)?;
        }
        self.elements -= 1;
        self.nodes -= top as u64;
        Ok(true)
    }

    /// Elements in `[lo, hi]`, in increasing order.
    pub fn range_query(&mut self, lo: ElementKey, hi: ElementKey) -> Result<RangeResult> {
        check_key(lo)?;
        if lo > hi {
            return Err(Error::InvalidRange { lo: lo.0, hi: hi.0 });
        }
        let (elements, io) = self.measured(|s| s.range_inner(lo, hi))?;
        Ok(RangeResult { elements, io })
    }

    fn range_inner(&mut self, lo: ElementKey, hi: ElementKey) -> Result<Vec<ElementKey>> {
        let (path, _) = self.descend(lo, true, false)?;
        // cursors[k - 1] is the level-k partition and the position in it.
        let mut cursors: Vec<(Vec<ElementKey>, usize)> = path
            .steps
            .into_iter()
            .rev()
            .map(|s| (s.nodes, s.index))
            .collect();
        let mut out = Vec::new();
        loop {
            let (nodes, start) = &cursors[0];
            for &e in &nodes[*start..] {
                if e > hi {
                    return Ok(out);
                }
                if e >= lo {
                    out.push(e);
                }
            }
            match self.advance(&mut cursors, 1, hi)? {
                Some(head) => {
                    let nodes = self.fetch(PartitionLabel::new(head, 1))?;
                    cursors[0] = (nodes, 0);
                }
                None => return Ok(out),
            }
        }
    }

    /// Moves the cursor at `level + 1` one node forward and returns that
    /// node, the head of the next level-`level` partition. `None` at the end
    /// of the list or once past `hi`.
    fn advance(
        &mut self,
        cursors: &mut [(Vec<ElementKey>, usize)],
        level: usize,
        hi: ElementKey,
    ) -> Result<Option<ElementKey>> {
        if level >= cursors.len() {
            return Ok(None);
        }
        let (nodes, idx) = &mut cursors[level];
        if *idx + 1 < nodes.len() {
            *idx += 1;
            let next = nodes[*idx];
            return Ok((next <= hi).then_some(next));
        }
        match self.advance(cursors, level + 1, hi)? {
            Some(head) => {
                let nodes = self.fetch(PartitionLabel::new(head, (level + 1) as Level))?;
                cursors[level] = (nodes, 0);
                Ok(Some(head))
            }
            None => Ok(None),
        }
    }

    /// Every stored partition, read without I/O accounting.
    pub fn partitions(&self) -> Result<BTreeMap<PartitionLabel, Vec<ElementKey>>> {
        Ok(self
            .alloc
            .strings()?
            .into_iter()
            .map(|(_, s)| (s.label, s.payload))
            .collect())
    }

    /// Stored elements in order, read without I/O accounting.
    pub fn elements(&self) -> Result<Vec<ElementKey>> {
        Ok(self
            .partitions()?
            .into_iter()
            .filter(|(l, _)| l.level == 1)
            .flat_map(|(_, v)| v)
            .filter(|e| !e.is_front())
            .collect())
    }

    /// Highest level among stored elements (0 when empty).
    pub fn max_level(&self) -> Result<Level> {
        Ok(self
            .partitions()?
            .iter()
            .filter(|(_, v)| v.iter().any(|e| !e.is_front()))
            .map(|(l, _)| l.level)
            .max()
            .unwrap_or(0))
    }

    pub fn check_invariants(&self) -> Result<InvariantReport> {
        let mut report = InvariantReport::default();
        let v = &mut report.violations;
        let beta = self.params.beta;

        v.extend(self.alloc.verify_layout()?.into_iter().map(Violation::Layout));
        let image = self.alloc.store().snapshot()?;
        let (strings, _) = crate::allocator::scan_strings(&image);

        let mut by_level: Vec<BTreeMap<ElementKey, Vec<ElementKey>>> =
            vec![BTreeMap::new(); beta as usize + 1];
        for (_, s) in &strings {
            let k = s.label.level;
            if k == 0 || k > beta {
                v.push(Violation::BadLabelLevel { label: s.label });
                continue;
            }
            for (i, &e) in s.payload.iter().enumerate() {
                let lvl = self.level_of(e);
                if lvl < k || (i > 0 && lvl != k) {
                    v.push(Violation::NodeLevel {
                        label: s.label,
                        element: e,
                    });
                }
            }
            let head = s.payload[0];
            if !(head.is_front() || k == beta || self.level_of(head) > k) {
                v.push(Violation::HeadLevel { label: s.label });
            }
            by_level[k as usize].insert(head, s.payload.clone());
        }

        // Level lists and the levels each element shows up on.
        let mut lists: Vec<BTreeSet<ElementKey>> = vec![BTreeSet::new(); beta as usize + 2];
        let mut seen: BTreeMap<ElementKey, Vec<Level>> = BTreeMap::new();
        for k in 1..=beta {
            if !by_level[k as usize].contains_key(&ElementKey::FRONT) {
                v.push(Violation::MissingFront { level: k });
            }
            for nodes in by_level[k as usize].values() {
                for &e in nodes {
                    lists[k as usize].insert(e);
                    if !e.is_front() {
                        seen.entry(e).or_default().push(k);
                    }
                }
            }
        }
        for (&e, levels) in &seen {
            let expected: Vec<Level> = (1..=self.level_of(e)).collect();
            let mut got = levels.clone();
            got.sort_unstable();
            if got != expected {
                v.push(Violation::Membership {
                    element: e,
                    levels: got,
                });
            }
        }
        for k in 1..=beta {
            let heads: BTreeSet<ElementKey> = by_level[k as usize].keys().copied().collect();
            let mut expected = lists[k as usize + 1].clone();
            expected.insert(ElementKey::FRONT);
            if k < beta && heads != expected {
                v.push(Violation::Boundary { level: k });
            }
            if k > 1 {
                let finer: BTreeSet<ElementKey> = by_level[k as usize - 1].keys().copied().collect();
                if !heads.is_subset(&finer) {
                    v.push(Violation::Refinement { level: k });
                }
            }
        }

        let nodes: u64 = strings.iter().map(|(_, s)| s.payload.len() as u64).sum();
        if nodes != self.nodes {
            v.push(Violation::Count {
                what: "nodes",
                tracked: self.nodes,
                found: nodes,
            });
        }
        let elements = lists[1].len().saturating_sub(1) as u64;
        if elements != self.elements {
            v.push(Violation::Count {
                what: "elements",
                tracked: self.elements,
                found: elements,
            });
        }
        Ok(report)
    }
}

impl BSkipList<FileStore> {
    /// Creates a fresh file-backed structure.
    pub fn create_file(path: impl AsRef<std::path::Path>, params: Params, master_seed: u64) -> Result<Self> {
        let store = FileStore::create(path, &params, master_seed)?;
        Self::new(params, HashSeeds::from_master(master_seed), store)
    }

    /// Reopens a file; the seed must match the one recorded in its header.
    pub fn open_file(path: impl AsRef<std::path::Path>, master_seed: u64) -> Result<Self> {
        let store = FileStore::open(path)?;
        let h = *store.header();
        if h.master_seed != master_seed {
            return Err(Error::SeedMismatch {
                stored: h.master_seed,
                given: master_seed,
            });
        }
        let params = Params::with_load(h.capacity, h.gamma, h.block_size, LoadFactor::DEFAULT)?
            .with_slots(h.slots)?;
        if params.beta as u64 != h.beta {
            return Err(Error::BadHeader(format!(
                "beta {} does not match capacity and gamma",
                h.beta
            )));
        }
        Self::attach(params, HashSeeds::from_master(master_seed), store)
    }
}

fn check_key(y: ElementKey) -> Result<()> {
    if y.is_front() {
        Err(Error::ReservedKey)
    } else {
        Ok(())
    }
}

fn check_geometry<S: BlockStore>(params: &Params, store: &S) -> Result<()> {
    if store.slots() != params.slots || store.block_size() != params.block_size {
        return Err(Error::InvalidParams(format!(
            "store is {} slots / blocks of {}, params want {} / {}",
            store.slots(),
            store.block_size(),
            params.slots,
            params.block_size
        )));
    }
    Ok(())
}
