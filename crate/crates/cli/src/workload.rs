//! Reproducible random workloads.

use std::time::Instant;

use bskiplist::hashing::derive;
use bskiplist::{ElementKey, IoStats, Params};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::backend::{Backend, List};
use crate::error::{CliError, CliResult};
use crate::report::{mean, percentile, CsvRow};

/// Keys are drawn uniformly from `[1, 2^63)`.
pub const KEY_LIMIT: u64 = 1 << 63;

pub fn random_key(rng: &mut impl Rng) -> u64 {
    rng.gen_range(1..KEY_LIMIT)
}

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Preload,
    Insert,
    Delete,
    Lookup,
    Range,
}

impl OpKind {
    pub const ALL: [OpKind; 5] = [
        OpKind::Preload,
        OpKind::Insert,
        OpKind::Delete,
        OpKind::Lookup,
        OpKind::Range,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Preload => "preload",
            OpKind::Insert => "insert",
            OpKind::Delete => "delete",
            OpKind::Lookup => "lookup",
            OpKind::Range => "range",
        }
    }
}

/// Relative op weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpMix {
    pub insert: u32,
    pub delete: u32,
    pub lookup: u32,
    pub range: u32,
}

impl OpMix {
    pub const INSERT_ONLY: OpMix = OpMix {
        insert: 1,
        delete: 0,
        lookup: 0,
        range: 0,
    };
    pub const LOOKUP_ONLY: OpMix = OpMix {
        insert: 0,
        delete: 0,
        lookup: 1,
        range: 0,
    };

    /// Parses `insert=2,lookup=1`; missing ops get weight 0.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut mix = OpMix {
            insert: 0,
            delete: 0,
            lookup: 0,
            range: 0,
        };
        for part in text.split(',').filter(|p| !p.trim().is_empty()) {
            let (name, weight) = part
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("bad mix entry `{part}`")))?;
            let weight: u32 = weight
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad weight in `{part}`")))?;
            match name.trim() {
                "insert" => mix.insert = weight,
                "delete" => mix.delete = weight,
                "lookup" => mix.lookup = weight,
                "range" => mix.range = weight,
                other => return Err(CliError::Usage(format!("unknown op `{other}`"))),
            }
        }
        if mix.weights().iter().all(|&w| w == 0) {
            return Err(CliError::Usage("op mix has no positive weight".into()));
        }
        Ok(mix)
    }

    fn weights(&self) -> [u32; 4] {
        [self.insert, self.delete, self.lookup, self.range]
    }
}

impl Default for OpMix {
    fn default() -> Self {
        OpMix {
            insert: 1,
            delete: 1,
            lookup: 2,
            range: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WorkloadSpec {
    pub mix: OpMix,
    /// Elements inserted before the measured ops.
    pub preload: u64,
    pub ops: u64,
    /// Output size of each range query.
    pub range_len: u64,
    pub seed: u64,
    pub params: Params,
    pub backend: Backend,
    pub timing: bool,
}

const STREAM_WORKLOAD: u64 = 0x5753;

/// Present keys in sorted order, for uniform picks by rank.
#[derive(Default)]
pub struct Shadow {
    keys: Vec<u64>,
}

impl Shadow {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn insert(&mut self, x: u64) -> bool {
        match self.keys.binary_search(&x) {
            Ok(_) => false,
            Err(i) => {
                self.keys.insert(i, x);
                true
            }
        }
    }

    pub fn remove(&mut self, x: u64) -> bool {
        match self.keys.binary_search(&x) {
            Ok(i) => {
                self.keys.remove(i);
                true
            }
            Err(_) => false,
        }
    }

    pub fn get(&self, rank: usize) -> u64 {
        self.keys[rank]
    }

    /// `[lo, hi]` covering `k` consecutive present keys from a random rank.
    pub fn random_window(&self, k: u64, rng: &mut impl Rng) -> Option<(u64, u64)> {
        if self.keys.is_empty() {
            return None;
        }
        let k = (k.max(1) as usize).min(self.keys.len());
        let start = rng.gen_range(0..=self.keys.len() - k);
        Some((self.keys[start], self.keys[start + k - 1]))
    }
}

/// Inserts fresh random keys until the list holds `n` elements.
pub fn fill(list: &mut List, shadow: &mut Shadow, n: u64, rng: &mut impl Rng) -> CliResult<Vec<IoStats>> {
    let mut io = Vec::new();
    while (shadow.len() as u64) < n {
        let x = random_key(rng);
        if shadow.insert(x) {
            let (added, stats) = list.insert(ElementKey(x))?;
            debug_assert!(added);
            io.push(stats);
        }
    }
    Ok(io)
}

/// Runs the workload and returns one row per op kind that was executed.
pub fn run(spec: &WorkloadSpec) -> CliResult<Vec<CsvRow>> {
    let mut list = spec.backend.create(spec.params, spec.seed)?;
    let mut rng = rng_for(spec.seed, STREAM_WORKLOAD);
    let mut shadow = Shadow::default();
    let mut samples: Vec<Vec<u64>> = vec![Vec::new(); OpKind::ALL.len()];
    let mut elapsed = [0f64; 5];

    let started = Instant::now();
    let preload = fill(&mut list, &mut shadow, spec.preload, &mut rng)?;
    elapsed[0] = started.elapsed().as_secs_f64() * 1e3;
    samples[0] = preload.iter().map(IoStats::total).collect();

    if spec.ops > 0 {
        let choice = WeightedIndex::new(spec.mix.weights())
            .map_err(|e| CliError::Usage(format!("op mix: {e}")))?;
        for _ in 0..spec.ops {
            let kind = [OpKind::Insert, OpKind::Delete, OpKind::Lookup, OpKind::Range][choice.sample(&mut rng)];
            let started = Instant::now();
            let io = match kind {
                OpKind::Insert => {
                    let x = random_key(&mut rng);
                    shadow.insert(x);
                    list.insert(ElementKey(x))?.1
                }
                OpKind::Delete => {
                    let x = if shadow.is_empty() {
                        random_key(&mut rng)
                    } else {
                        shadow.get(rng.gen_range(0..shadow.len()))
                    };
                    shadow.remove(x);
                    list.delete(ElementKey(x))?.1
                }
                OpKind::Lookup => list.lookup(ElementKey(random_key(&mut rng)))?.io,
                OpKind::Range => {
                    let (lo, hi) = shadow.random_window(spec.range_len, &mut rng).unwrap_or_else(|| {
                        let lo = random_key(&mut rng);
                        (lo, lo)
                    });
                    list.range_query(ElementKey(lo), ElementKey(hi))?.io
                }
                OpKind::Preload => unreachable!(),
            };
            elapsed[kind as usize] += started.elapsed().as_secs_f64() * 1e3;
            samples[kind as usize].push(io.total());
        }
    }

    let max_level = list.max_level()?;
    let mut rows = Vec::new();
    for kind in OpKind::ALL {
        let xs = &samples[kind as usize];
        if xs.is_empty() {
            continue;
        }
        rows.push(CsvRow {
            experiment: "run".into(),
            n: list.element_count(),
            gamma: spec.params.gamma,
            block_size: spec.params.block_size,
            op: kind.name().into(),
            mean_io: Some(mean(xs)),
            p95_io: Some(percentile(xs, 95.0)),
            node_count: Some(list.node_count()),
            load: Some(list.load()),
            max_level: Some(max_level),
            wall_time_ms: spec.timing.then_some(elapsed[kind as usize]),
            metric: "io_blocks".into(),
            ..Default::default()
        });
    }
    list.into_store().flush()?;
    Ok(rows)
}
