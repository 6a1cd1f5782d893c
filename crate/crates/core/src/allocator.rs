//! Uniquely represented allocation of variable-length strings.
//!
//! Each string (one partition) occupies a contiguous, cyclic run of slots:
//! one NODE slot per payload element followed by an END slot. Strings are
//! kept in ordered linear-probing layout: inside every cluster (a maximal
//! run of non-EMPTY slots) they appear sorted by the cyclic offset of their
//! home slot from the cluster start, ties broken by [`Priority`], and packed
//! from the cluster start. That layout depends only on the stored set, so
//! any insert/delete history yields the same image.
//!
//! Insertion pushes the tail of the cluster forward; deletion shifts it
//! back (no string ever moves before its home slot). [`rebuild_canonical`]
//! builds the same image from scratch by a different route and is the
//! oracle for both.

use std::collections::BTreeMap;

use crate::blockstore::{BlockStore, SlotRecord};
use crate::error::{Error, Result};
use crate::hashing::{LabelHasher, LabelPlacement, LoadFactor};
use crate::key::{ElementKey, PartitionLabel, SlotIndex};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StoredString {
    pub label: PartitionLabel,
    pub payload: Vec<ElementKey>,
}

impl StoredString {
    pub fn new(label: PartitionLabel, payload: Vec<ElementKey>) -> Result<Self> {
        validate_payload(&label, &payload)?;
        Ok(StoredString { label, payload })
    }

    /// Slots used, counting the END marker.
    pub fn len(&self) -> u64 {
        self.payload.len() as u64 + 1
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    fn write_into(&self, out: &mut Vec<SlotRecord>) {
        out.extend(
            self.payload
                .iter()
                .map(|&e| SlotRecord::node(e, self.label.level)),
        );
        out.push(SlotRecord::End);
    }
}

fn validate_payload(label: &PartitionLabel, payload: &[ElementKey]) -> Result<()> {
    match payload.first() {
        None => return Err(Error::BadPayload("empty payload".into())),
        Some(&first) if first != label.min_element => {
            return Err(Error::BadPayload(format!(
                "payload starts at {first}, label is {label}"
            )))
        }
        _ => {}
    }
    if payload.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::BadPayload("payload not strictly increasing".into()));
    }
    Ok(())
}

/// Tie-break order between strings; smaller is higher priority. Depends
/// only on the label, never on the payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Priority {
    pub hash: SlotIndex,
    pub label: [u8; PartitionLabel::ENCODED_LEN],
}

impl Priority {
    pub fn of(label: &PartitionLabel, hasher: &impl LabelPlacement) -> Self {
        Priority {
            hash: hasher.home_slot(label),
            label: label.encode(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lookup {
    pub payload: Option<Vec<ElementKey>>,
    /// Slots between the home slot and the string start (or, for a miss,
    /// the slot where the probe stopped).
    pub displacement: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DisplacementStats {
    pub strings: u64,
    pub mean: f64,
    pub max: u64,
    pub histogram: BTreeMap<u64, u64>,
}

/// A layout fault found by [`Allocator::verify_layout`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayoutViolation {
    Malformed { slot: SlotIndex, reason: String },
    DuplicateLabel(PartitionLabel),
    /// An EMPTY slot lies between the string's home slot and its start.
    Unreachable { label: PartitionLabel, start: SlotIndex },
    NotCanonical { first_diff: SlotIndex },
    CountMismatch { counted: u64, tracked: u64 },
}

enum Probe {
    Found { start: SlotIndex, string: StoredString },
    Vacant { at: SlotIndex },
}

pub struct Allocator<S, H = LabelHasher> {
    store: S,
    hasher: H,
    max_load: LoadFactor,
    limit: u64,
    occupied: u64,
    strings: u64,
}

impl<S: BlockStore, H: LabelPlacement> Allocator<S, H> {
    /// Wraps a store; existing contents are taken as-is and counted.
    pub fn new(store: S, hasher: H, max_load: LoadFactor) -> Result<Self> {
        if hasher.slots() != store.slots() {
            return Err(Error::InvalidParams(format!(
                "hasher covers {} slots, store has {}",
                hasher.slots(),
                store.slots()
            )));
        }
        let limit = max_load.limit(store.slots());
        let mut a = Allocator {
            store,
            hasher,
            max_load,
            limit,
            occupied: 0,
            strings: 0,
        };
        let all = a.strings()?;
        a.strings = all.len() as u64;
        a.occupied = all.iter().map(|(_, s)| s.len()).sum();
        Ok(a)
    }

    pub fn store(&self) -> &S {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut S {
        &mut self.store
    }

    pub fn into_store(self) -> S {
        self.store
    }

    pub fn hasher(&self) -> &H {
        &self.hasher
    }

    pub fn slots(&self) -> u64 {
        self.store.slots()
    }

    pub fn occupied(&self) -> u64 {
        self.occupied
    }

    pub fn string_count(&self) -> u64 {
        self.strings
    }

    pub fn occupancy_limit(&self) -> u64 {
        self.limit
    }

    pub fn max_load(&self) -> LoadFactor {
        self.max_load
    }

    pub fn load(&self) -> f64 {
        self.occupied as f64 / self.slots() as f64
    }

    #[inline]
    fn at(&self, start: SlotIndex, offset: u64) -> SlotIndex {
        (start + offset) % self.slots()
    }

    #[inline]
    fn dist(&self, from: SlotIndex, to: SlotIndex) -> u64 {
        (to + self.slots() - from) % self.slots()
    }

    /// Reads the string starting at `start` (charged).
    fn read_string(&mut self, start: SlotIndex) -> Result<StoredString> {
        let p = self.slots();
        let label = match self.store.read_slot(start)? {
            SlotRecord::Node { element, level } => PartitionLabel::new(element, level),
            other => {
                return Err(Error::Corrupt(format!(
                    "slot {start} should start a string, found {other:?}"
                )))
            }
        };
        let mut payload = vec![label.min_element];
        for off in 1..p {
            match self.store.read_slot(self.at(start, off))? {
                SlotRecord::End => return Ok(StoredString { label, payload }),
                SlotRecord::Node { element, .. } => payload.push(element),
                SlotRecord::Empty => break,
            }
        }
        Err(Error::Corrupt(format!("unterminated string at slot {start}")))
    }

    /// Walks from the home slot of `label` over strings that precede it in
    /// cluster order. Never passes the first EMPTY slot.
    fn probe(&mut self, label: &PartitionLabel) -> Result<Probe> {
        let p = self.slots();
        let home = self.hasher.home_slot(label);
        let prio = Priority::of(label, &self.hasher);

        let mut pos = home;
        match self.store.read_slot(home)? {
            SlotRecord::Empty => return Ok(Probe::Vacant { at: home }),
            first => {
                let pred = self.store.read_slot(self.at(home, p - 1))?;
                let is_start =
                    matches!(first, SlotRecord::Node { .. }) && !matches!(pred, SlotRecord::Node { .. });
                if !is_start {
                    // Inside a string that started before the home slot;
                    // it precedes us. Skip to the slot after its END.
                    let mut rec = first;
                    let mut steps = 0;
                    while rec != SlotRecord::End {
                        if rec.is_empty() || steps >= p {
                            return Err(Error::Corrupt(format!(
                                "unterminated string around slot {home}"
                            )));
                        }
                        pos = self.at(pos, 1);
                        rec = self.store.read_slot(pos)?;
                        steps += 1;
                    }
                    pos = self.at(pos, 1);
                }
            }
        }

        loop {
            let travelled = self.dist(home, pos);
            if self.store.read_slot(pos)?.is_empty() {
                return Ok(Probe::Vacant { at: pos });
            }
            let string = self.read_string(pos)?;
            if string.label == *label {
                return Ok(Probe::Found { start: pos, string });
            }
            let other_home = self.hasher.home_slot(&string.label);
            let other_disp = self.dist(other_home, pos);
            let precedes = other_disp > travelled
                || (other_disp == travelled && Priority::of(&string.label, &self.hasher) < prio);
            if !precedes {
                return Ok(Probe::Vacant { at: pos });
            }
            let next = self.dist(home, pos) + string.len();
            if next >= p {
                return Err(Error::Corrupt("probe wrapped the whole table".into()));
            }
            pos = self.at(home, next);
        }
    }

    pub fn lookup(&mut self, label: &PartitionLabel) -> Result<Lookup> {
        let home = self.hasher.home_slot(label);
        Ok(match self.probe(label)? {
            Probe::Found { start, string } => Lookup {
                payload: Some(string.payload),
                displacement: self.dist(home, start),
            },
            Probe::Vacant { at } => Lookup {
                payload: None,
                displacement: self.dist(home, at),
            },
        })
    }

    pub fn insert(&mut self, label: PartitionLabel, payload: &[ElementKey]) -> Result<()> {
        validate_payload(&label, payload)?;
        let new = StoredString {
            label,
            payload: payload.to_vec(),
        };
        let needed = self.occupied + new.len();
        if needed > self.limit {
            return Err(Error::Overload {
                needed,
                limit: self.limit,
            });
        }
        let y = match self.probe(&label)? {
            Probe::Found { .. } => return Err(Error::DuplicateLabel(label)),
            Probe::Vacant { at } => at,
        };

        // Push the following strings forward until EMPTY slots absorb the
        // shift. Offsets are relative to `y`.
        let mut moved = Vec::new();
        let mut end = new.len();
        let mut cur = 0u64;
        loop {
            while cur < end && self.store.read_slot(self.at(y, cur))?.is_empty() {
                cur += 1;
            }
            if cur >= end {
                break;
            }
            let t = self.read_string(self.at(y, cur))?;
            cur += t.len();
            end += t.len();
            moved.push(t);
        }

        let mut region = Vec::with_capacity(end as usize);
        new.write_into(&mut region);
        for t in &moved {
            t.write_into(&mut region);
        }
        for (off, rec) in region.into_iter().enumerate() {
            self.store.write_slot(self.at(y, off as u64), rec)?;
        }
        self.occupied = needed;
        self.strings += 1;
        Ok(())
    }

    /// Removes a string and returns its payload.
    pub fn delete(&mut self, label: &PartitionLabel) -> Result<Vec<ElementKey>> {
        let (a, removed) = match self.probe(label)? {
            Probe::Found { start, string } => (start, string),
            Probe::Vacant { .. } => return Err(Error::LabelNotFound(*label)),
        };

        // Shift the rest of the cluster back, never before a home slot.
        // Offsets are relative to `a`.
        let mut placed: Vec<(u64, StoredString)> = Vec::new();
        let mut write = 0u64;
        let mut cur = removed.len();
        loop {
            if self.store.read_slot(self.at(a, cur))?.is_empty() {
                break;
            }
            let t = self.read_string(self.at(a, cur))?;
            let home = self.dist(a, self.hasher.home_slot(&t.label));
            let target = if (write..=cur).contains(&home) { home } else { write };
            if target == cur {
                break;
            }
            write = target + t.len();
            cur += t.len();
            placed.push((target, t));
        }

        let mut region = vec![SlotRecord::Empty; cur as usize];
        for (off, t) in &placed {
            let mut recs = Vec::with_capacity(t.len() as usize);
            t.write_into(&mut recs);
            for (i, r) in recs.into_iter().enumerate() {
                region[*off as usize + i] = r;
            }
        }
        for (off, rec) in region.into_iter().enumerate() {
            self.store.write_slot(self.at(a, off as u64), rec)?;
        }
        self.occupied -= removed.len();
        self.strings -= 1;
        Ok(removed.payload)
    }

    /// All stored strings with their start slots, in slot order (uncharged).
    pub fn strings(&self) -> Result<Vec<(SlotIndex, StoredString)>> {
        let (strings, violations) = scan_strings(&self.store.snapshot()?);
        if let Some(v) = violations.first() {
            return Err(Error::Corrupt(format!("{v:?}")));
        }
        Ok(strings)
    }

    pub fn displacement_stats(&self) -> Result<DisplacementStats> {
        let mut stats = DisplacementStats::default();
        let mut total = 0u64;
        for (start, s) in self.strings()? {
            let d = self.dist(self.hasher.home_slot(&s.label), start);
            total += d;
            stats.max = stats.max.max(d);
            *stats.histogram.entry(d).or_default() += 1;
            stats.strings += 1;
        }
        if stats.strings > 0 {
            stats.mean = total as f64 / stats.strings as f64;
        }
        Ok(stats)
    }

    /// Full-table check of the layout invariants and canonical form.
    pub fn verify_layout(&self) -> Result<Vec<LayoutViolation>> {
        let image = self.store.snapshot()?;
        let (strings, mut violations) = scan_strings(&image);
        let p = self.slots();

        let mut seen = std::collections::HashSet::new();
        for (start, s) in &strings {
            if !seen.insert(s.label) {
                violations.push(LayoutViolation::DuplicateLabel(s.label));
            }
            let home = self.hasher.home_slot(&s.label);
            let gap = (0..self.dist(home, *start))
                .any(|off| image[((home + off) % p) as usize].is_empty());
            if gap {
                violations.push(LayoutViolation::Unreachable {
                    label: s.label,
                    start: *start,
                });
            }
        }
        let counted: u64 = strings.iter().map(|(_, s)| s.len()).sum();
        if counted != self.occupied {
            violations.push(LayoutViolation::CountMismatch {
                counted,
                tracked: self.occupied,
            });
        }
        if violations.is_empty() {
            let set: Vec<StoredString> = strings.into_iter().map(|(_, s)| s).collect();
            let canonical = rebuild_canonical(&set, &self.hasher, u64::MAX)?;
            if let Some(i) = image.iter().zip(&canonical).position(|(a, b)| a != b) {
                violations.push(LayoutViolation::NotCanonical {
                    first_diff: i as SlotIndex,
                });
            }
        }
        Ok(violations)
    }
}

/// Parses every string in an image. A string starts at a NODE slot whose
/// cyclic predecessor is EMPTY or END.
pub fn scan_strings(image: &[SlotRecord]) -> (Vec<(SlotIndex, StoredString)>, Vec<LayoutViolation>) {
    let p = image.len();
    let mut strings = Vec::new();
    let mut violations = Vec::new();
    if p == 0 {
        return (strings, violations);
    }
    let origin = match image.iter().position(|r| r.is_empty()) {
        Some(i) => i,
        None => {
            violations.push(LayoutViolation::Malformed {
                slot: 0,
                reason: "no EMPTY slot in table".into(),
            });
            return (strings, violations);
        }
    };

    let mut current: Option<(usize, StoredString, bool)> = None;
    for off in 1..=p {
        let i = (origin + off) % p;
        match image[i] {
            SlotRecord::Empty => {
                if let Some((start, _, _)) = current.take() {
                    violations.push(LayoutViolation::Malformed {
                        slot: start as SlotIndex,
                        reason: "string not terminated by END".into(),
                    });
                }
            }
            SlotRecord::Node { element, level } => match current.as_mut() {
                None => {
                    let label = PartitionLabel::new(element, level);
                    current = Some((
                        i,
                        StoredString {
                            label,
                            payload: vec![element],
                        },
                        true,
                    ));
                }
                Some((_, s, ok)) => {
                    if level != s.label.level {
                        *ok = false;
                    }
                    s.payload.push(element);
                }
            },
            SlotRecord::End => match current.take() {
                None => violations.push(LayoutViolation::Malformed {
                    slot: i as SlotIndex,
                    reason: "END without a string".into(),
                }),
                Some((start, s, ok)) => {
                    if !ok {
                        violations.push(LayoutViolation::Malformed {
                            slot: start as SlotIndex,
                            reason: "mixed levels inside one string".into(),
                        });
                    }
                    if s.payload.windows(2).any(|w| w[0] >= w[1]) {
                        violations.push(LayoutViolation::Malformed {
                            slot: start as SlotIndex,
                            reason: "payload not strictly increasing".into(),
                        });
                    }
                    strings.push((start as SlotIndex, s));
                }
            },
        }
    }
    strings.sort_by_key(|(start, _)| *start);
    (strings, violations)
}

/// Canonical image of a string set, built without probing: compute the
/// occupied slots by a carry sweep over per-slot demand, then fill each
/// cluster with its strings sorted by (home offset, priority).
pub fn rebuild_canonical(
    strings: &[StoredString],
    hasher: &impl LabelPlacement,
    limit: u64,
) -> Result<Vec<SlotRecord>> {
    let p = hasher.slots() as usize;
    let total: u64 = strings.iter().map(|s| s.len()).sum();
    if total > limit || total >= p as u64 {
        return Err(Error::Overload {
            needed: total,
            limit: limit.min(p as u64 - 1),
        });
    }
    let mut by_home: Vec<Vec<&StoredString>> = vec![Vec::new(); p];
    let mut demand = vec![0u64; p];
    let mut labels = std::collections::HashSet::new();
    for s in strings {
        validate_payload(&s.label, &s.payload)?;
        if !labels.insert(s.label) {
            return Err(Error::DuplicateLabel(s.label));
        }
        let h = hasher.home_slot(&s.label) as usize;
        demand[h] += s.len();
        by_home[h].push(s);
    }

    // Two laps: the first settles the carry entering slot 0.
    let mut occupied = vec![false; p];
    let mut carry = 0u64;
    for lap in 0..2 {
        for i in 0..p {
            let here = carry + demand[i];
            if lap == 1 {
                occupied[i] = here > 0;
            }
            carry = here.saturating_sub(1);
        }
    }

    let mut image = vec![SlotRecord::Empty; p];
    for c in 0..p {
        if !occupied[c] || occupied[(c + p - 1) % p] {
            continue;
        }
        let mut len = 0;
        while occupied[(c + len) % p] {
            len += 1;
        }
        let mut members: Vec<(usize, Priority, &StoredString)> = (0..len)
            .flat_map(|off| by_home[(c + off) % p].iter().map(move |s| (off, s)))
            .map(|(off, s)| (off, Priority::of(&s.label, hasher), *s))
            .collect();
        members.sort_by_key(|(off, prio, _)| (*off, *prio));
        let mut recs = Vec::with_capacity(len);
        for (_, _, s) in members {
            s.write_into(&mut recs);
        }
        debug_assert_eq!(recs.len(), len);
        for (off, r) in recs.into_iter().enumerate() {
            image[(c + off) % p] = r;
        }
    }
    Ok(image)
}
