//! Argument parsing and command dispatch.

use std::io::Write;
use std::path::PathBuf;

use bskiplist::blockstore::digest_hex;
use bskiplist::hashing::{is_prime, next_prime};
use bskiplist::skiplist::Fault;
use bskiplist::Params;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::backend::Backend;
use crate::error::{CliError, CliResult, EXIT_FAIL, EXIT_PASS, EXIT_USAGE};
use crate::report::{write_csv, write_csv_file, CsvRow};
use crate::stats;
use crate::verify::{verify_oracle, verify_ur};
use crate::workload::{run, OpMix, WorkloadSpec};

#[derive(Parser, Debug)]
#[command(name = "bsl", version, about = "Uniquely represented B-skip-list harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Element count (upper bound for verify-oracle).
    #[arg(long)]
    pub n: Option<u64>,
    /// Capacity N; defaults depend on the command.
    #[arg(long)]
    pub capacity: Option<u64>,
    #[arg(long, default_value_t = 16)]
    pub gamma: u64,
    #[arg(long = "block-size", default_value_t = 16)]
    pub block_size: u64,
    /// Table size; must be prime and at least the computed minimum.
    #[arg(long = "slots-per-table")]
    pub slots: Option<u64>,
    #[arg(long, env = "BSL_SEED", default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = BackendKind::Mem)]
    pub backend: BackendKind,
    #[arg(long)]
    pub file: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackendKind {
    Mem,
    File,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatsKind {
    Partitions,
    Depth,
    Displacement,
    Io,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a random workload and report I/O per op kind.
    Run {
        #[command(flatten)]
        common: Common,
        /// Measured ops after the preload of `--n` elements.
        #[arg(long, default_value_t = 0)]
        ops: u64,
        /// Op weights, e.g. `insert=1,delete=1,lookup=2,range=1`.
        #[arg(long, default_value = "insert=1,delete=1,lookup=2")]
        mix: String,
        #[arg(long = "range-len", default_value_t = 100)]
        range_len: u64,
        /// Fill the wall_time_ms column.
        #[arg(long)]
        timing: bool,
    },
    /// Replay different histories of one set and compare the images.
    VerifyUr {
        #[command(flatten)]
        common: Common,
        /// Negative control: hash every trial with a different seed.
        #[arg(long, hide = true)]
        vary_seeds: bool,
    },
    /// Cross-check a random trace against brute-force oracles.
    VerifyOracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10_000)]
        ops: u64,
        /// Negative control: skip the level-1 merge on delete.
        #[arg(long, hide = true)]
        fault_skip_merge: bool,
    },
    /// Monte Carlo statistics next to their analytic bounds.
    Stats {
        #[arg(value_enum)]
        kind: StatsKind,
        #[command(flatten)]
        common: Common,
        /// Tail thresholds for `partitions`; default gamma, 2 gamma, 3 gamma.
        #[arg(long, value_delimiter = ',')]
        lambdas: Vec<u64>,
        /// Random lookups per trial for `io`, or rounds for `displacement`.
        #[arg(long, default_value_t = 10_000)]
        ops: u64,
        /// Range output sizes for `io`.
        #[arg(long = "range-lens", value_delimiter = ',')]
        range_lens: Vec<u64>,
        /// Range queries per output size for `io`.
        #[arg(long = "range-queries", default_value_t = 200)]
        range_queries: u64,
        /// Target load for `displacement`.
        #[arg(long, default_value_t = 0.5)]
        load: f64,
    },
}

impl Common {
    fn params(&self, default_capacity: u64) -> CliResult<Params> {
        let capacity = self.capacity.unwrap_or(default_capacity).max(1);
        let params = Params::new(capacity, self.gamma, self.block_size)?;
        match self.slots {
            Some(p) => Ok(params.with_slots(p)?),
            None => Ok(params),
        }
    }

    fn backend(&self) -> CliResult<Backend> {
        match (self.backend, &self.file) {
            (BackendKind::Mem, _) => Ok(Backend::Mem),
            (BackendKind::File, Some(p)) => Ok(Backend::File(p.clone())),
            (BackendKind::File, None) => Err(CliError::Usage("--backend file needs --file PATH".into())),
        }
    }

    fn memory_only(&self, command: &str) -> CliResult<()> {
        if self.backend == BackendKind::File {
            return Err(CliError::Usage(format!("{command} runs on the memory backend only")));
        }
        Ok(())
    }

    fn emit(&self, rows: &[CsvRow], out: &mut dyn Write) -> CliResult<()> {
        match &self.csv {
            Some(path) => write_csv_file(path, rows),
            None => write_csv(out, rows),
        }
    }
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn main_from<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{text}") } else { write!(out, "{text}") };
            return code;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "bsl: {e}");
            e.exit_code()
        }
    }
}

fn verdict(out: &mut dyn Write, pass: bool, detail: &str) -> CliResult<i32> {
    writeln!(out, "{} {detail}", if pass { "PASS" } else { "FAIL" })?;
    Ok(if pass { EXIT_PASS } else { EXIT_FAIL })
}

fn execute(command: Command, out: &mut dyn Write) -> CliResult<i32> {
    match command {
        Command::Run {
            common,
            ops,
            mix,
            range_len,
            timing,
        } => {
            let n = common.n.unwrap_or(0);
            let spec = WorkloadSpec {
                mix: OpMix::parse(&mix)?,
                preload: n,
                ops,
                range_len,
                seed: common.seed,
                params: common.params((n + ops).max(1024))?,
                backend: common.backend()?,
                timing,
            };
            let rows = run(&spec)?;
            common.emit(&rows, out)?;
            Ok(EXIT_PASS)
        }
        Command::VerifyUr { common, vary_seeds } => {
            let n = common.n.unwrap_or(1000);
            let trials = common.trials.unwrap_or(10);
            if trials < 2 {
                return Err(CliError::Usage("verify-ur needs --trials >= 2".into()));
            }
            let params = common.params((2 * n).max(1024))?;
            let outcome = verify_ur(n, params, common.seed, trials, &common.backend()?, vary_seeds)?;
            if common.csv.is_some() {
                let row = CsvRow {
                    experiment: "verify-ur".into(),
                    n,
                    gamma: params.gamma,
                    block_size: params.block_size,
                    metric: "distinct_digests".into(),
                    empirical: Some(outcome.distinct() as f64),
                    bound: Some(1.0),
                    ..Default::default()
                };
                common.emit(&[row], out)?;
            }
            let detail = format!(
                "verify-ur: {trials} trials, n={n}, {} distinct image(s), digest {}",
                outcome.distinct(),
                digest_hex(&outcome.digests[0])
            );
            verdict(out, outcome.pass, &detail)
        }
        Command::VerifyOracle {
            common,
            ops,
            fault_skip_merge,
        } => {
            common.memory_only("verify-oracle")?;
            let n_max = common.n.unwrap_or(512);
            let params = common.params(n_max.max(1))?;
            let fault = fault_skip_merge.then_some(Fault::SkipMerge);
            let outcome = verify_oracle(n_max, ops, params, common.seed, fault)?;
            for note in &outcome.notes {
                writeln!(out, "mismatch: {note}")?;
            }
            let detail = format!(
                "verify-oracle: {} ops, {} checks, {} mismatches",
                outcome.ops, outcome.checks, outcome.mismatches
            );
            verdict(out, outcome.pass, &detail)
        }
        Command::Stats {
            kind,
            common,
            lambdas,
            ops,
            range_lens,
            range_queries,
            load,
        } => {
            common.memory_only("stats")?;
            let n = common.n.unwrap_or(10_000);
            let trials = common.trials.unwrap_or(1).max(1);
            let params = if kind == StatsKind::Displacement {
                Params::new(n.max(1), common.gamma, common.block_size)?
            } else {
                common.params(n)?
            };
            let rows = match kind {
                StatsKind::Partitions => {
                    let lambdas = if lambdas.is_empty() {
                        (1..=3).map(|i| i * params.gamma).collect()
                    } else {
                        lambdas
                    };
                    let s = stats::summarize_trials(n, params, common.seed, trials)?;
                    stats::partition_rows(&s, n, &params, &lambdas)
                }
                StatsKind::Depth => {
                    let s = stats::summarize_trials(n, params, common.seed, trials)?;
                    stats::depth_rows(&s, n, &params)
                }
                StatsKind::Io => {
                    let mut merged = stats::IoSamples::default();
                    for t in 0..trials {
                        let s = stats::measure_io(
                            n,
                            params,
                            stats::trial_seed(common.seed, t),
                            ops,
                            &range_lens,
                            range_queries,
                        )?;
                        merged.lookups.extend(s.lookups);
                        for (k, xs) in s.ranges {
                            merged.ranges.entry(k).or_default().extend(xs);
                        }
                        merged.node_count = s.node_count;
                        merged.load = s.load;
                        merged.max_level = merged.max_level.max(s.max_level);
                    }
                    stats::io_rows(&merged, n, &params)
                }
                StatsKind::Displacement => {
                    if !(load > 0.0 && load < params.max_load.as_f64()) {
                        return Err(CliError::Usage(format!("--load must be in (0, {})", params.max_load.as_f64())));
                    }
                    let slots = match common.slots {
                        Some(p) if is_prime(p) => p,
                        Some(p) => return Err(CliError::Usage(format!("table size {p} is not prime"))),
                        None => next_prime((1 << 16).max(1024 * params.block_size))
                            .ok_or_else(|| CliError::Usage("table size overflows".into()))?,
                    };
                    let mut rows = Vec::new();
                    for t in 0..trials {
                        let r = stats::allocator_io(
                            params.block_size,
                            params.gamma,
                            slots,
                            load,
                            ops,
                            stats::trial_seed(common.seed, t),
                        )?;
                        rows.extend(stats::allocator_rows(&r, params.gamma));
                    }
                    rows
                }
            };
            common.emit(&rows, out)?;
            Ok(EXIT_PASS)
        }
    }
}
