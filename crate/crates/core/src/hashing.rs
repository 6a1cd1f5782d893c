//! Seeded hash families and level assignment.
//!
//! Every random choice the structure makes comes from here, so the whole
//! memory image is a pure function of (element set, seeds, params). All
//! arithmetic is integer-only; outputs are identical on every platform.

use crate::error::{Error, Result};
use crate::key::{ElementKey, Level, PartitionLabel, SlotIndex};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed number `index` of `master`.
#[inline]
pub fn derive(master: u64, index: u64) -> u64 {
    mix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Seed material for every hash function in the structure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HashSeeds {
    pub master: u64,
    pub seed_level: u64,
    pub seed_h1: u64,
    pub seed_h2: u64,
}

impl HashSeeds {
    /// Derives all sub-seeds from one master seed by fixed-index mixing.
    pub fn from_master(master: u64) -> Self {
        HashSeeds {
            master,
            seed_level: derive(master, 0),
            seed_h1: derive(master, 1),
            seed_h2: derive(master, 2),
        }
    }
}

/// Maximum table load, in thousandths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LoadFactor(u32);

impl LoadFactor {
    pub const DEFAULT: LoadFactor = LoadFactor(900);

    pub fn from_permille(permille: u32) -> Result<Self> {
        if permille == 0 || permille > 900 {
            return Err(Error::InvalidParams(format!(
                "max load must be in (0, 0.9], got {permille}/1000"
            )));
        }
        Ok(LoadFactor(permille))
    }

    pub fn permille(self) -> u32 {
        self.0
    }

    /// Largest occupied-slot count allowed in a table of `slots` slots.
    pub fn limit(self, slots: u64) -> u64 {
        ((slots as u128 * self.0 as u128) / 1000) as u64
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl Default for LoadFactor {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Structure parameters. Field names follow their roles: `capacity` is N,
/// `block_size` is B and `slots` is the table size p.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Params {
    pub capacity: u64,
    pub gamma: u64,
    pub beta: Level,
    pub block_size: u64,
    pub slots: u64,
    pub max_load: LoadFactor,
}

impl Params {
    /// Builds parameters with the smallest admissible prime table size.
    pub fn new(capacity: u64, gamma: u64, block_size: u64) -> Result<Self> {
        Self::with_load(capacity, gamma, block_size, LoadFactor::DEFAULT)
    }

    pub fn with_load(
        capacity: u64,
        gamma: u64,
        block_size: u64,
        max_load: LoadFactor,
    ) -> Result<Self> {
        if capacity < 1 {
            return Err(Error::InvalidParams("capacity must be at least 1".into()));
        }
        if gamma < 2 {
            return Err(Error::InvalidParams("gamma must be at least 2".into()));
        }
        if block_size < 2 {
            return Err(Error::InvalidParams("block size must be at least 2".into()));
        }
        let beta = level_cap(capacity, gamma);
        let slots = next_prime(min_slots(capacity, gamma, beta, max_load))
            .ok_or_else(|| Error::InvalidParams("table size overflows".into()))?;
        Ok(Params {
            capacity,
            gamma,
            beta,
            block_size,
            slots,
            max_load,
        })
    }

    /// Replaces the table size; it must be prime and no smaller than the
    /// computed minimum.
    pub fn with_slots(mut self, slots: u64) -> Result<Self> {
        let min = min_slots(self.capacity, self.gamma, self.beta, self.max_load);
        if slots < min {
            return Err(Error::InvalidParams(format!(
                "table size {slots} is below the minimum {min}"
            )));
        }
        if !is_prime(slots) {
            return Err(Error::InvalidParams(format!("table size {slots} is not prime")));
        }
        self.slots = slots;
        Ok(self)
    }

    pub fn block_count(&self) -> u64 {
        self.slots.div_ceil(self.block_size)
    }

    pub fn max_occupied(&self) -> u64 {
        self.max_load.limit(self.slots)
    }
}

/// `ceil(log_gamma(capacity)) + 2`, in integers.
pub fn level_cap(capacity: u64, gamma: u64) -> Level {
    let mut exp: u32 = 0;
    let mut pow: u128 = 1;
    while pow < capacity as u128 {
        pow *= gamma as u128;
        exp += 1;
    }
    (exp + 2) as Level
}

/// Smallest table size that holds the expected nodes, one end marker per
/// string and the `beta` front partitions at the given load.
pub fn min_slots(capacity: u64, gamma: u64, beta: Level, max_load: LoadFactor) -> u64 {
    let g = gamma as u128;
    let numer = (2 * capacity as u128 * g + 2 * beta as u128 * (g - 1)) * 1000;
    let denom = (g - 1) * max_load.permille() as u128;
    numer.div_ceil(denom).min(u64::MAX as u128) as u64
}

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    // Deterministic Miller-Rabin for 64-bit inputs.
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

pub fn next_prime(mut n: u64) -> Option<u64> {
    n = n.max(2);
    loop {
        if is_prime(n) {
            return Some(n);
        }
        n = n.checked_add(1)?;
    }
}

#[inline]
fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Level assignment: `Pr[level = k] = q^(k-1) (1-q)` for `k < beta` and
/// `q^(beta-1)` at the cap, with `q = 1/gamma`.
///
/// Each element owns an unbounded stream of 32-bit chunks. A chunk below
/// `floor(2^32 / gamma)` is a tail; the level is one plus the number of
/// leading tails, capped at `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelHasher {
    seed: u64,
    tail_threshold: u64,
    beta: Level,
}

impl LevelHasher {
    pub fn new(seed: u64, gamma: u64, beta: Level) -> Self {
        LevelHasher {
            seed,
            tail_threshold: (1u64 << 32) / gamma,
            beta,
        }
    }

    pub fn beta(&self) -> Level {
        self.beta
    }

    #[inline]
    fn chunk(&self, base: u64, index: u64) -> u64 {
        mix64(base.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN))) >> 32
    }

    pub fn level_of(&self, x: ElementKey) -> Level {
        if x.is_front() {
            return self.beta;
        }
        let base = mix64(self.seed ^ mix64(x.0));
        let mut level: Level = 1;
        while level < self.beta && self.chunk(base, (level - 1) as u64) < self.tail_threshold {
            level += 1;
        }
        level
    }
}

/// Where a label lives in a table: the allocator only needs this.
pub trait LabelPlacement {
    fn slots(&self) -> u64;
    fn home_slot(&self, label: &PartitionLabel) -> SlotIndex;
}

/// `h2 ∘ h1`: a seeded mixing hash of the label bytes into `[p]`, followed
/// by a degree-4 polynomial over the prime field of size `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelHasher {
    seed_h1: u64,
    coeffs: [u64; 5],
    slots: u64,
}

impl LabelHasher {
    pub fn new(seeds: &HashSeeds, slots: u64) -> Self {
        let mut coeffs = [0u64; 5];
        for (i, c) in coeffs.iter_mut().enumerate() {
            *c = derive(seeds.seed_h2, i as u64) % slots;
        }
        LabelHasher {
            seed_h1: seeds.seed_h1,
            coeffs,
            slots,
        }
    }

    /// Explicit polynomial coefficients, lowest degree first.
    pub fn with_coefficients(seed_h1: u64, coeffs: [u64; 5], slots: u64) -> Self {
        LabelHasher {
            seed_h1,
            coeffs: coeffs.map(|c| c % slots),
            slots,
        }
    }

    pub fn h1(&self, label: &PartitionLabel) -> SlotIndex {
        let bytes = label.encode();
        let mut word = [0u8; 8];
        word.copy_from_slice(&bytes[..8]);
        let mut h = mix64(self.seed_h1 ^ u64::from_be_bytes(word));
        h = mix64(h ^ (bytes[8] as u64 + 1).wrapping_mul(GOLDEN));
        ((h as u128 * self.slots as u128) >> 64) as u64
    }

    pub fn h2(&self, slot: SlotIndex) -> Result<SlotIndex> {
        if slot >= self.slots {
            return Err(Error::SlotOutOfRange {
                index: slot,
                slots: self.slots,
            });
        }
        Ok(self.poly(slot))
    }

    #[inline]
    fn poly(&self, x: u64) -> u64 {
        let p = self.slots;
        self.coeffs
            .iter()
            .rev()
            .fold(0u64, |acc, &c| (mul_mod(acc, x, p) + c) % p)
    }

    pub fn label_hash(&self, label: &PartitionLabel) -> SlotIndex {
        self.poly(self.h1(label))
    }
}

impl LabelPlacement for LabelHasher {
    fn slots(&self) -> u64 {
        self.slots
    }

    fn home_slot(&self, label: &PartitionLabel) -> SlotIndex {
        self.label_hash(label)
    }
}

/// All hash functions of one structure instance.
#[derive(Clone, Debug)]
pub struct HashFamily {
    pub seeds: HashSeeds,
    pub levels: LevelHasher,
    pub labels: LabelHasher,
}

impl HashFamily {
    pub fn new(seeds: HashSeeds, params: &Params) -> Self {
        HashFamily {
            seeds,
            levels: LevelHasher::new(seeds.seed_level, params.gamma, params.beta),
            labels: LabelHasher::new(&seeds, params.slots),
        }
    }

    pub fn level_of(&self, x: ElementKey) -> Level {
        self.levels.level_of(x)
    }

    pub fn label_hash(&self, label: &PartitionLabel) -> SlotIndex {
        self.labels.label_hash(label)
    }
}

pub fn level_of(x: ElementKey, seeds: &HashSeeds, params: &Params) -> Level {
    LevelHasher::new(seeds.seed_level, params.gamma, params.beta).level_of(x)
}

pub fn label_hash(label: &PartitionLabel, seeds: &HashSeeds, params: &Params) -> SlotIndex {
    LabelHasher::new(seeds, params.slots).label_hash(label)
}
