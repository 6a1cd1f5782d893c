//! Monte Carlo experiments, each reported next to its analytic bound.

use std::collections::BTreeMap;

use bskiplist::hashing::derive;
use bskiplist::{
    Allocator, BlockStore, ElementKey, HashSeeds, LabelHasher, LoadFactor, MemStore, Params,
    PartitionLabel,
};
use rand::prelude::*;
use rand_distr::Geometric;
use rayon::prelude::*;

use crate::backend::{Backend, List};
use crate::error::CliResult;
use crate::report::{mean, percentile, CsvRow};
use crate::workload::{fill, rng_for, Shadow};

const STREAM_TRIALS: u64 = 0x7472_0000;
const STREAM_KEYS: u64 = 0x6b65;
const STREAM_QUERIES: u64 = 0x7175;
const STREAM_ALLOC: u64 = 0x616c;

pub fn trial_seed(master: u64, trial: usize) -> u64 {
    derive(master, STREAM_TRIALS + trial as u64)
}

/// Expected blocks per lookup: `e^(B/g) / (1 - e^(-B/g))` per level, over
/// all levels. Equals `e^2/(e-1)` per level when `g = B`.
pub fn lookup_bound(params: &Params) -> f64 {
    let r = params.block_size as f64 / params.gamma as f64;
    r.exp() / (1.0 - (-r).exp()) * params.beta as f64
}

/// Lookup bound plus the scan of `k` further elements.
pub fn range_bound(params: &Params, k: u64) -> f64 {
    lookup_bound(params) + k as f64 / params.block_size as f64 + 2.0
}

/// `Pr[|S| >= lambda] <= exp(-lambda / gamma)`.
pub fn partition_tail_bound(gamma: u64, lambda: u64) -> f64 {
    (-(lambda as f64) / gamma as f64).exp()
}

/// Lower bound on `Pr[depth <= threshold]` from
/// `Pr[depth >= (c+1) log_g n] <= n^-c`.
pub fn depth_bound(n: u64, gamma: u64, threshold: f64) -> f64 {
    let log_n = (n as f64).ln() / (gamma as f64).ln();
    let c = threshold / log_n - 1.0;
    1.0 - (n as f64).powf(-c)
}

/// `2 log_g(n) + 1`.
pub fn depth_threshold(n: u64, gamma: u64) -> f64 {
    2.0 * (n as f64).ln() / (gamma as f64).ln() + 1.0
}

/// What one random build of `n` elements looks like.
#[derive(Clone, Debug)]
pub struct TrialSummary {
    pub seed: u64,
    pub elements: u64,
    pub node_count: u64,
    pub max_level: u8,
    /// Highest allocator load seen after any insert.
    pub max_load: f64,
    /// Partition size -> number of partitions, over all levels.
    pub sizes: BTreeMap<usize, u64>,
}

pub fn build_random(n: u64, params: Params, seed: u64) -> CliResult<(List, Shadow, f64)> {
    let mut list = Backend::Mem.create(params, seed)?;
    let mut shadow = Shadow::default();
    let mut rng = rng_for(seed, STREAM_KEYS);
    let mut max_load = list.load();
    while (shadow.len() as u64) < n {
        let next = shadow.len() as u64 + 1;
        fill(&mut list, &mut shadow, next, &mut rng)?;
        max_load = max_load.max(list.load());
    }
    Ok((list, shadow, max_load))
}

pub fn summarize_trial(n: u64, params: Params, seed: u64) -> CliResult<TrialSummary> {
    let (list, _, max_load) = build_random(n, params, seed)?;
    let mut sizes = BTreeMap::new();
    for nodes in list.partitions()?.values() {
        *sizes.entry(nodes.len()).or_insert(0) += 1;
    }
    Ok(TrialSummary {
        seed,
        elements: list.element_count(),
        node_count: list.node_count(),
        max_level: list.max_level()?,
        max_load,
        sizes,
    })
}

pub fn summarize_trials(n: u64, params: Params, master: u64, trials: usize) -> CliResult<Vec<TrialSummary>> {
    (0..trials)
        .into_par_iter()
        .map(|t| summarize_trial(n, params, trial_seed(master, t)))
        .collect()
}

fn base_row(experiment: &str, n: u64, params: &Params) -> CsvRow {
    CsvRow {
        experiment: experiment.into(),
        n,
        gamma: params.gamma,
        block_size: params.block_size,
        ..Default::default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailPoint {
    pub lambda: u64,
    pub empirical: f64,
    pub bound: f64,
    /// Binomial standard error at the bound.
    pub stderr: f64,
    pub partitions: u64,
}

/// Pooled tail frequency over every partition of every trial.
pub fn partition_tail(summaries: &[TrialSummary], gamma: u64, lambda: u64) -> TailPoint {
    let mut total = 0u64;
    let mut hits = 0u64;
    for s in summaries {
        for (&size, &count) in &s.sizes {
            total += count;
            if size as u64 >= lambda {
                hits += count;
            }
        }
    }
    let bound = partition_tail_bound(gamma, lambda);
    TailPoint {
        lambda,
        empirical: hits as f64 / total.max(1) as f64,
        bound,
        stderr: (bound * (1.0 - bound) / total.max(1) as f64).sqrt(),
        partitions: total,
    }
}

pub fn partition_rows(summaries: &[TrialSummary], n: u64, params: &Params, lambdas: &[u64]) -> Vec<CsvRow> {
    lambdas
        .iter()
        .map(|&lambda| {
            let t = partition_tail(summaries, params.gamma, lambda);
            CsvRow {
                op: "partition".into(),
                metric: format!("tail_ge_{lambda}"),
                empirical: Some(t.empirical),
                bound: Some(t.bound),
                stderr: Some(t.stderr),
                ..base_row("partitions", n, params)
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthSummary {
    pub threshold: f64,
    pub within: usize,
    pub trials: usize,
    pub max_level: u8,
    pub beta: u8,
}

pub fn depth_summary(summaries: &[TrialSummary], n: u64, params: &Params) -> DepthSummary {
    let threshold = depth_threshold(n, params.gamma);
    DepthSummary {
        threshold,
        within: summaries.iter().filter(|s| s.max_level as f64 <= threshold).count(),
        trials: summaries.len(),
        max_level: summaries.iter().map(|s| s.max_level).max().unwrap_or(0),
        beta: params.beta,
    }
}

pub fn depth_rows(summaries: &[TrialSummary], n: u64, params: &Params) -> Vec<CsvRow> {
    let d = depth_summary(summaries, n, params);
    vec![
        CsvRow {
            op: "depth".into(),
            max_level: Some(d.max_level),
            metric: "fraction_within_2log+1".into(),
            empirical: Some(d.within as f64 / d.trials.max(1) as f64),
            bound: Some(depth_bound(n, params.gamma, d.threshold)),
            ..base_row("depth", n, params)
        },
        CsvRow {
            op: "depth".into(),
            max_level: Some(d.max_level),
            metric: "max_level".into(),
            empirical: Some(d.max_level as f64),
            bound: Some(d.beta as f64),
            ..base_row("depth", n, params)
        },
    ]
}

#[derive(Clone, Debug, Default)]
pub struct IoSamples {
    pub lookups: Vec<u64>,
    /// Output size -> blocks per query.
    pub ranges: BTreeMap<u64, Vec<u64>>,
    pub node_count: u64,
    pub load: f64,
    pub max_level: u8,
}

/// Builds `n` random elements, then measures `lookups` uniform random
/// lookups and `range_queries` range queries per output size.
pub fn measure_io(
    n: u64,
    params: Params,
    seed: u64,
    lookups: u64,
    range_lens: &[u64],
    range_queries: u64,
) -> CliResult<IoSamples> {
    let (mut list, shadow, _) = build_random(n, params, seed)?;
    let mut rng = rng_for(seed, STREAM_QUERIES);
    let mut out = IoSamples {
        node_count: list.node_count(),
        load: list.load(),
        max_level: list.max_level()?,
        ..Default::default()
    };
    for _ in 0..lookups {
        let x = crate::workload::random_key(&mut rng);
        out.lookups.push(list.lookup(ElementKey(x))?.io.total());
    }
    for &k in range_lens {
        let samples = out.ranges.entry(k).or_default();
        for _ in 0..range_queries {
            let Some((lo, hi)) = shadow.random_window(k, &mut rng) else { break };
            let r = list.range_query(ElementKey(lo), ElementKey(hi))?;
            samples.push(r.io.total());
        }
    }
    Ok(out)
}

pub fn io_rows(samples: &IoSamples, n: u64, params: &Params) -> Vec<CsvRow> {
    let with_state = |op: &str, xs: &[u64], metric: String, bound: f64| CsvRow {
        op: op.into(),
        mean_io: Some(mean(xs)),
        p95_io: Some(percentile(xs, 95.0)),
        node_count: Some(samples.node_count),
        load: Some(samples.load),
        max_level: Some(samples.max_level),
        metric,
        empirical: Some(mean(xs)),
        bound: Some(bound),
        ..base_row("io", n, params)
    };
    let mut rows = Vec::new();
    if !samples.lookups.is_empty() {
        rows.push(with_state("lookup", &samples.lookups, "mean_blocks".into(), lookup_bound(params)));
    }
    for (&k, xs) in &samples.ranges {
        if !xs.is_empty() {
            rows.push(with_state("range", xs, format!("mean_blocks_k{k}"), range_bound(params, k)));
        }
    }
    rows
}

/// Allocator cost under churn at a fixed load.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AllocatorIo {
    pub block_size: u64,
    /// Strings stored at the end.
    pub strings: u64,
    pub ops: u64,
    pub mean_io: f64,
    /// Mean string length in slots over the strings touched.
    pub mean_len: f64,
    /// `mean_io / (mean_len / B + 1)`.
    pub ratio: f64,
    pub load: f64,
    pub mean_displacement: f64,
    pub max_displacement: u64,
}

/// Fills a `slots`-slot table to `target_load` with strings whose payload
/// length is geometric with mean `gamma`, then runs `ops` rounds of
/// lookup, delete and refill.
pub fn allocator_io(
    block_size: u64,
    gamma: u64,
    slots: u64,
    target_load: f64,
    ops: u64,
    seed: u64,
) -> CliResult<AllocatorIo> {
    let seeds = HashSeeds::from_master(seed);
    let store = MemStore::new(slots, block_size)?;
    let mut alloc = Allocator::new(store, LabelHasher::new(&seeds, slots), LoadFactor::DEFAULT)?;
    let mut rng = rng_for(seed, STREAM_ALLOC);
    let lengths = Geometric::new(1.0 / gamma as f64).expect("valid probability");
    let mut labels: Vec<PartitionLabel> = Vec::new();

    let fresh = |rng: &mut rand_chacha::ChaCha8Rng| {
        let len = 1 + rng.sample(lengths);
        let head = rng.gen_range(1..1u64 << 62);
        let payload: Vec<ElementKey> = (0..len).map(|i| ElementKey(head + i)).collect();
        (PartitionLabel::new(ElementKey(head), 1), payload)
    };

    while (alloc.occupied() as f64) < target_load * slots as f64 {
        let (label, payload) = fresh(&mut rng);
        if alloc.occupied() + payload.len() as u64 + 1 > alloc.occupancy_limit() {
            break;
        }
        alloc.insert(label, &payload)?;
        labels.push(label);
    }

    let mut io = Vec::new();
    let mut lens = Vec::new();
    let mut measured = |alloc: &mut Allocator<MemStore>, f: &mut dyn FnMut(&mut Allocator<MemStore>) -> CliResult<u64>| -> CliResult<()> {
        alloc.store_mut().begin_op()?;
        let len = f(alloc);
        let stats = alloc.store_mut().end_op()?;
        lens.push(len?);
        io.push(stats.total());
        Ok(())
    };
    for _ in 0..ops {
        let i = rng.gen_range(0..labels.len());
        let label = labels[i];
        measured(&mut alloc, &mut |a| {
            let found = a.lookup(&label)?;
            Ok(found.payload.map_or(0, |p| p.len() as u64 + 1))
        })?;
        measured(&mut alloc, &mut |a| Ok(a.delete(&label)?.len() as u64 + 1))?;
        labels.swap_remove(i);
        while (alloc.occupied() as f64) < target_load * slots as f64 {
            let (label, payload) = fresh(&mut rng);
            let len = payload.len() as u64 + 1;
            if alloc.occupied() + len > alloc.occupancy_limit() {
                break;
            }
            measured(&mut alloc, &mut |a| {
                a.insert(label, &payload)?;
                Ok(len)
            })?;
            labels.push(label);
        }
    }
    let disp = alloc.displacement_stats()?;
    let mean_io = mean(&io);
    let mean_len = mean(&lens);
    Ok(AllocatorIo {
        block_size,
        strings: alloc.string_count(),
        ops: io.len() as u64,
        mean_io,
        mean_len,
        ratio: mean_io / (mean_len / block_size as f64 + 1.0),
        load: alloc.load(),
        mean_displacement: disp.mean,
        max_displacement: disp.max,
    })
}

pub fn allocator_rows(r: &AllocatorIo, gamma: u64) -> Vec<CsvRow> {
    let base = CsvRow {
        experiment: "displacement".into(),
        n: r.strings,
        gamma,
        block_size: r.block_size,
        op: "allocator".into(),
        mean_io: Some(r.mean_io),
        load: Some(r.load),
        ..Default::default()
    };
    vec![
        CsvRow {
            metric: "io_per_len_over_B_plus_1".into(),
            empirical: Some(r.ratio),
            ..base.clone()
        },
        CsvRow {
            metric: "mean_string_len".into(),
            empirical: Some(r.mean_len),
            ..base.clone()
        },
        CsvRow {
            metric: "mean_displacement".into(),
            empirical: Some(r.mean_displacement),
            ..base.clone()
        },
        CsvRow {
            metric: "max_displacement".into(),
            empirical: Some(r.max_displacement as f64),
            ..base
        },
    ]
}
