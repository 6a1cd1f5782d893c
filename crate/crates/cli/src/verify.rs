//! Unique-representation and oracle-equivalence checks.

use std::collections::BTreeSet;

use bskiplist::hashing::{derive, mix64};
use bskiplist::skiplist::Fault;
use bskiplist::{rebuild_canonical, BlockStore, Digest, ElementKey, Params, StoredString};
use rand::prelude::*;
use rayon::prelude::*;

use crate::backend::{Backend, List};
use crate::error::CliResult;
use crate::oracle::partition_from_scratch;
use crate::workload::{random_key, rng_for};

const STREAM_TARGET: u64 = 0x7461;
const STREAM_TRIAL: u64 = 0x1_0000;
const STREAM_ORACLE: u64 = 0x6f72;

#[derive(Clone, Debug)]
pub struct UrOutcome {
    pub pass: bool,
    pub digests: Vec<Digest>,
}

impl UrOutcome {
    pub fn distinct(&self) -> usize {
        self.digests.iter().collect::<BTreeSet<_>>().len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Insert(u64),
    Delete(u64),
}

/// One random history ending at `target`: every target key is inserted
/// (some deleted and re-inserted on the way) and decoys come and go.
fn history(target: &[u64], trial: usize, rng: &mut impl Rng) -> Vec<Step> {
    if trial == 0 {
        return target.iter().map(|&x| Step::Insert(x)).collect();
    }
    let taken: BTreeSet<u64> = target.iter().copied().collect();
    let mut scripts: Vec<Vec<Step>> = target
        .iter()
        .map(|&x| {
            if rng.gen_bool(0.25) {
                vec![Step::Insert(x), Step::Delete(x), Step::Insert(x)]
            } else {
                vec![Step::Insert(x)]
            }
        })
        .collect();
    let decoys = (target.len() / 2).max(1);
    while scripts.len() < target.len() + decoys {
        let d = random_key(rng);
        if !taken.contains(&d) {
            scripts.push(vec![Step::Insert(d), Step::Delete(d)]);
        }
    }
    for s in &mut scripts {
        s.reverse();
    }
    let mut out = Vec::new();
    while !scripts.is_empty() {
        let i = rng.gen_range(0..scripts.len());
        out.push(scripts[i].pop().unwrap());
        if scripts[i].is_empty() {
            scripts.swap_remove(i);
        }
    }
    out
}

fn replay(list: &mut List, steps: &[Step]) -> CliResult<()> {
    for &s in steps {
        match s {
            Step::Insert(x) => list.insert(ElementKey(x))?,
            Step::Delete(x) => list.delete(ElementKey(x))?,
        };
    }
    Ok(())
}

/// Replays `trials` different histories of the same `n`-element set and
/// compares the final images. With `vary_seeds` every trial hashes with its
/// own seed, which must make the check fail.
pub fn verify_ur(
    n: u64,
    params: Params,
    seed: u64,
    trials: usize,
    backend: &Backend,
    vary_seeds: bool,
) -> CliResult<UrOutcome> {
    let mut rng = rng_for(seed, STREAM_TARGET);
    let mut target = BTreeSet::new();
    while (target.len() as u64) < n {
        target.insert(random_key(&mut rng));
    }
    let mut target: Vec<u64> = target.into_iter().collect();
    target.shuffle(&mut rng);

    let digests = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, STREAM_TRIAL + t as u64);
            let steps = history(&target, t, &mut rng);
            let hash_seed = if vary_seeds { mix64(derive(seed, t as u64)) } else { seed };
            let backend = backend.tagged(&format!("trial{t}"));
            let mut list = backend.create(params, hash_seed)?;
            replay(&mut list, &steps)?;
            let digest = list.image_digest()?;
            drop(list);
            backend.remove();
            Ok(digest)
        })
        .collect::<CliResult<Vec<Digest>>>()?;
    let pass = trials >= 2 && digests.windows(2).all(|w| w[0] == w[1]);
    Ok(UrOutcome { pass, digests })
}

#[derive(Clone, Debug, Default)]
pub struct OracleOutcome {
    pub pass: bool,
    pub ops: u64,
    pub checks: u64,
    pub mismatches: u64,
    /// The first few mismatches, for the log.
    pub notes: Vec<String>,
}

impl OracleOutcome {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.mismatches += 1;
            if self.notes.len() < 8 {
                self.notes.push(what());
            }
        }
    }
}

/// Random trace of `ops` operations on at most `n_max` elements, checked
/// after every op against a sorted set, the from-scratch partitioner and
/// the canonical allocator rebuild.
pub fn verify_oracle(
    n_max: u64,
    ops: u64,
    params: Params,
    seed: u64,
    fault: Option<Fault>,
) -> CliResult<OracleOutcome> {
    let mut out = OracleOutcome::default();
    if n_max == 0 {
        out.pass = true;
        return Ok(out);
    }
    let mut rng = rng_for(seed, STREAM_ORACLE);
    let pool: Vec<u64> = (0..2 * n_max).map(|_| random_key(&mut rng)).collect();
    let mut list = Backend::Mem.create(params, seed)?;
    list.set_fault(fault);
    let mut set = BTreeSet::new();
    for op in 0..ops {
        if let Err(e) = oracle_step(&mut list, &mut set, &pool, n_max, op, &mut rng, &mut out) {
            // A library error mid-trace is a failed check, not an abort.
            out.check(false, || format!("op {op}: {e}"));
            break;
        }
        out.ops += 1;
    }
    out.pass = out.mismatches == 0;
    Ok(out)
}

fn oracle_step(
    list: &mut List,
    set: &mut BTreeSet<u64>,
    pool: &[u64],
    n_max: u64,
    op: u64,
    rng: &mut impl Rng,
    out: &mut OracleOutcome,
) -> CliResult<()> {
    let x = pool[rng.gen_range(0..pool.len())];
    match rng.gen_range(0..10) {
        0..=3 if (set.len() as u64) < n_max => {
            let (changed, _) = list.insert(ElementKey(x))?;
            let expected = set.insert(x);
            out.check(changed == expected, || format!("op {op}: insert({x}) returned {changed}"));
        }
        0..=6 => {
            let (changed, _) = list.delete(ElementKey(x))?;
            let expected = set.remove(&x);
            out.check(changed == expected, || format!("op {op}: delete({x}) returned {changed}"));
        }
        7..=8 => {
            let found = list.lookup(ElementKey(x))?.found;
            out.check(found == set.contains(&x), || format!("op {op}: lookup({x}) returned {found}"));
        }
        _ => {
            let y = pool[rng.gen_range(0..pool.len())];
            let (lo, hi) = (x.min(y), x.max(y));
            let got: Vec<u64> = list
                .range_query(ElementKey(lo), ElementKey(hi))?
                .elements
                .into_iter()
                .map(ElementKey::get)
                .collect();
            let want: Vec<u64> = set.range(lo..=hi).copied().collect();
            out.check(got == want, || format!("op {op}: range({lo}, {hi}) has {} of {}", got.len(), want.len()));
        }
    }
    compare_structure(list, set, op, out)
}

fn compare_structure(list: &List, set: &BTreeSet<u64>, op: u64, out: &mut OracleOutcome) -> CliResult<()> {
    let stored = match list.partitions() {
        Ok(p) => p,
        Err(e) => {
            out.check(false, || format!("op {op}: unreadable image: {e}"));
            return Ok(());
        }
    };
    let expected = partition_from_scratch(set, &list.hashes().levels);
    out.check(stored == expected, || format!("op {op}: partitions differ from the partitioner"));

    let alloc = list.allocator();
    let strings: Vec<StoredString> = alloc.strings()?.into_iter().map(|(_, s)| s).collect();
    let rebuilt = rebuild_canonical(&strings, alloc.hasher(), alloc.occupancy_limit())?;
    let image = list.store().snapshot()?;
    out.check(image == rebuilt, || format!("op {op}: image differs from the canonical rebuild"));
    Ok(())
}
