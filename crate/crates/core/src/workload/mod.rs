//! Deterministic key and request streams.
//!
//! A [`WorkloadConfig`] plus its seed fully determines the population keys, the request stream
//! and the warm-up stream. Each stream draws from its own generator derived from the seed, so
//! changing the request count never perturbs the population.

mod dump;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{Key, Request, RequestKind, Value};

pub use dump::{read_requests, write_requests, RECORD_LEN};

pub const DEFAULT_WARMUP_READS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("mix percentages sum to {0}, expected 100")]
    MixSum(u32),
    #[error("empty key range [{0}, {1})")]
    EmptyBounds(Key, Key),
    #[error("cannot draw {count} distinct keys from a range of width {width}")]
    RangeTooSmall { count: u64, width: u64 },
    #[error("consecutive keys would overflow the key domain")]
    Overflow,
    #[error("unknown mix '{0}'")]
    UnknownMix(String),
    #[error("unknown pattern '{0}'")]
    UnknownPattern(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pattern {
    Consecutive,
    Random,
}

impl FromStr for Pattern {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "consecutive" | "seq" | "sequential" => Ok(Pattern::Consecutive),
            "random" | "rand" => Ok(Pattern::Random),
            _ => Err(WorkloadError::UnknownPattern(s.to_string())),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::Consecutive => "consecutive",
            Pattern::Random => "random",
        })
    }
}

/// Percentages of reads, updates, inserts and deletes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MixSpec {
    pub read_pct: u8,
    pub update_pct: u8,
    pub insert_pct: u8,
    pub delete_pct: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BuiltinMix {
    ReadOnly,
    ReadHeavy,
    WriteHeavy,
    InsertOnly,
}

impl BuiltinMix {
    pub const ALL: [BuiltinMix; 4] = [
        BuiltinMix::ReadOnly,
        BuiltinMix::ReadHeavy,
        BuiltinMix::WriteHeavy,
        BuiltinMix::InsertOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinMix::ReadOnly => "read-only",
            BuiltinMix::ReadHeavy => "read-heavy",
            BuiltinMix::WriteHeavy => "write-heavy",
            BuiltinMix::InsertOnly => "insert-only",
        }
    }
}

impl FromStr for BuiltinMix {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match norm.to_ascii_lowercase().as_str() {
            "readonly" => Ok(BuiltinMix::ReadOnly),
            "readheavy" => Ok(BuiltinMix::ReadHeavy),
            "writeheavy" => Ok(BuiltinMix::WriteHeavy),
            "insertonly" => Ok(BuiltinMix::InsertOnly),
            _ => Err(WorkloadError::UnknownMix(s.to_string())),
        }
    }
}

impl fmt::Display for BuiltinMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn builtin_mix(mix: BuiltinMix) -> MixSpec {
    match mix {
        BuiltinMix::ReadOnly => MixSpec::new(100, 0, 0, 0),
        BuiltinMix::ReadHeavy => MixSpec::new(80, 10, 10, 0),
        BuiltinMix::WriteHeavy => MixSpec::new(40, 30, 20, 10),
        BuiltinMix::InsertOnly => MixSpec::new(0, 0, 100, 0),
    }
}

impl MixSpec {
    pub const fn new(read_pct: u8, update_pct: u8, insert_pct: u8, delete_pct: u8) -> Self {
        Self {
            read_pct,
            update_pct,
            insert_pct,
            delete_pct,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let sum = self.read_pct as u32 + self.update_pct as u32 + self.insert_pct as u32 + self.delete_pct as u32;
        if sum == 100 {
            Ok(())
        } else {
            Err(WorkloadError::MixSum(sum))
        }
    }

    pub fn percent(&self, kind: RequestKind) -> u8 {
        match kind {
            RequestKind::Read => self.read_pct,
            RequestKind::Update => self.update_pct,
            RequestKind::Insert => self.insert_pct,
            RequestKind::Delete => self.delete_pct,
        }
    }

    /// Maps a uniform draw in `0..100` to a request kind.
    #[inline]
    fn kind_for(&self, roll: u8) -> RequestKind {
        let mut acc = self.read_pct;
        if roll < acc {
            return RequestKind::Read;
        }
        acc += self.update_pct;
        if roll < acc {
            return RequestKind::Update;
        }
        acc += self.insert_pct;
        if roll < acc {
            return RequestKind::Insert;
        }
        RequestKind::Delete
    }
}

impl fmt::Display for MixSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.read_pct, self.update_pct, self.insert_pct, self.delete_pct
        )
    }
}

/// Accepts a builtin name or four percentages separated by `/` or `,`.
impl FromStr for MixSpec {
    type Err = WorkloadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(b) = s.parse::<BuiltinMix>() {
            return Ok(builtin_mix(b));
        }
        let parts: Vec<u8> = s
            .split(['/', ','])
            .map(|p| p.trim().parse::<u8>())
            .collect::<Result<_, _>>()
            .map_err(|_| WorkloadError::UnknownMix(s.to_string()))?;
        let [r, u, i, d] = parts[..] else {
            return Err(WorkloadError::UnknownMix(s.to_string()));
        };
        let mix = MixSpec::new(r, u, i, d);
        mix.validate()?;
        Ok(mix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RngKind {
    #[default]
    SplitMix64,
    Xoshiro256PlusPlus,
}

/// The seedable generator behind every stream.
#[derive(Debug, Clone)]
pub enum WorkloadRng {
    SplitMix(SplitMix64),
    Xoshiro(Xoshiro256PlusPlus),
}

impl WorkloadRng {
    pub fn new(kind: RngKind, seed: u64) -> Self {
        match kind {
            RngKind::SplitMix64 => WorkloadRng::SplitMix(SplitMix64::seed_from_u64(seed)),
            RngKind::Xoshiro256PlusPlus => WorkloadRng::Xoshiro(Xoshiro256PlusPlus::seed_from_u64(seed)),
        }
    }

    /// Independent generator for stream number `stream` of `seed`.
    pub fn for_stream(kind: RngKind, seed: u64, stream: u64) -> Self {
        let mut mixer = SplitMix64::seed_from_u64(seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Self::new(kind, mixer.next_u64())
    }
}

impl RngCore for WorkloadRng {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        match self {
            WorkloadRng::SplitMix(r) => r.next_u64(),
            WorkloadRng::Xoshiro(r) => r.next_u64(),
        }
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}

const POPULATION_STREAM: u64 = 1;
const REQUEST_STREAM: u64 = 2;
const WARMUP_STREAM: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub population_count: u64,
    pub request_count: u64,
    pub mix: MixSpec,
    /// Half-open range read, update and delete keys are drawn from.
    pub read_bounds: (Key, Key),
    /// Half-open range for population keys under `Random`, and for inserted keys under `Random`.
    /// Under `Consecutive` only the lower bound is used.
    pub insert_bounds: (Key, Key),
    pub pattern: Pattern,
    pub seed: u64,
    #[serde(default)]
    pub rng: RngKind,
}

impl WorkloadConfig {
    /// Consecutive keys `0..population` with reads over the same range.
    pub fn consecutive(population: u64, requests: u64, mix: MixSpec, seed: u64) -> Self {
        Self {
            population_count: population,
            request_count: requests,
            mix,
            read_bounds: (0, population),
            insert_bounds: (0, population),
            pattern: Pattern::Consecutive,
            seed,
            rng: RngKind::default(),
        }
    }

    /// `population` random keys from `[0, range)` with reads and inserts over that range.
    pub fn random(population: u64, range: u64, requests: u64, mix: MixSpec, seed: u64) -> Self {
        Self {
            population_count: population,
            request_count: requests,
            mix,
            read_bounds: (0, range),
            insert_bounds: (0, range),
            pattern: Pattern::Random,
            seed,
            rng: RngKind::default(),
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        self.mix.validate()?;
        for &(lo, hi) in [&self.read_bounds, &self.insert_bounds] {
            if lo >= hi {
                return Err(WorkloadError::EmptyBounds(lo, hi));
            }
        }
        let (lo, hi) = self.insert_bounds;
        match self.pattern {
            Pattern::Consecutive => {
                let inserts = if self.mix.insert_pct > 0 { self.request_count } else { 0 };
                lo.checked_add(self.population_count)
                    .and_then(|k| k.checked_add(inserts))
                    .ok_or(WorkloadError::Overflow)?;
            }
            Pattern::Random => {
                let width = hi - lo;
                let needed = self.population_count
                    + if self.mix.insert_pct > 0 { self.request_count } else { 0 };
                // inserts are fresh keys, so the range must hold every key that may exist
                if needed > width {
                    return Err(WorkloadError::RangeTooSmall { count: needed, width });
                }
            }
        }
        Ok(())
    }
}

/// Population keys in ascending order.
pub fn generate_population(config: &WorkloadConfig) -> Result<Vec<Key>, WorkloadError> {
    config.validate()?;
    let n = config.population_count;
    let (lo, hi) = config.insert_bounds;
    match config.pattern {
        Pattern::Consecutive => Ok((lo..lo + n).collect()),
        Pattern::Random => {
            let mut rng = WorkloadRng::for_stream(config.rng, config.seed, POPULATION_STREAM);
            Ok(sample_distinct_sorted(&mut rng, n, lo, hi))
        }
    }
}

/// `(key, value)` pairs ready for bulk loading. Values are derived from the keys.
pub fn population_pairs(keys: &[Key]) -> Vec<(Key, Value)> {
    keys.iter().map(|&k| (k, population_value(k))).collect()
}

#[inline]
pub fn population_value(key: Key) -> Value {
    key.wrapping_mul(0x2545_f491_4f6c_dd1d)
}

/// `count` distinct uniform keys from `[lo, hi)`, sorted.
fn sample_distinct_sorted(rng: &mut WorkloadRng, count: u64, lo: Key, hi: Key) -> Vec<Key> {
    let width = hi - lo;
    assert!(count <= width);
    if width <= count.saturating_mul(8) {
        // Knuth's sequential selection: one pass over the range, output already sorted
        let mut out = Vec::with_capacity(count as usize);
        let mut needed = count;
        for t in 0..width {
            if needed == 0 {
                break;
            }
            if rng.random_range(0..width - t) < needed {
                out.push(lo + t);
                needed -= 1;
            }
        }
        out
    } else {
        let mut seen = HashSet::with_capacity(count as usize);
        let mut out = Vec::with_capacity(count as usize);
        while (out.len() as u64) < count {
            let k = rng.random_range(lo..hi);
            if seen.insert(k) {
                out.push(k);
            }
        }
        out.sort_unstable();
        out
    }
}

/// Lazy request stream. `population` must be the sorted output of [`generate_population`].
pub struct RequestStream<'a> {
    config: &'a WorkloadConfig,
    population: &'a [Key],
    rng: WorkloadRng,
    remaining: u64,
    next_consecutive: Key,
    fresh: FreshKeys,
}

/// Source of never-seen insert keys for `Random`, uniform over the keys not yet present.
enum FreshKeys {
    /// Redraw until the key is new; cheap while most of the range is free.
    Rejection(HashSet<Key>),
    /// Every free key, drawn by swap-remove; used when redraws would pile up near exhaustion.
    Pool(Vec<Key>),
}

/// Free keys at most this many times the insert budget switch the stream to a pool.
const POOL_RATIO: u64 = 4;

fn fresh_keys(config: &WorkloadConfig, population: &[Key]) -> FreshKeys {
    let (lo, hi) = config.insert_bounds;
    let inserts = if config.mix.insert_pct > 0 { config.request_count } else { 0 };
    let free = (hi - lo).saturating_sub(population.len() as u64);
    if config.pattern != Pattern::Random || inserts == 0 || free > inserts.saturating_mul(POOL_RATIO) {
        return FreshKeys::Rejection(HashSet::new());
    }
    let mut pool = Vec::with_capacity(free as usize);
    let mut taken = population.iter().copied().peekable();
    for k in lo..hi {
        if taken.next_if_eq(&k).is_none() {
            pool.push(k);
        }
    }
    FreshKeys::Pool(pool)
}

pub fn generate_requests<'a>(config: &'a WorkloadConfig, population: &'a [Key]) -> RequestStream<'a> {
    let next_consecutive = population
        .last()
        .map_or(config.insert_bounds.0, |&max| max + 1);
    RequestStream {
        config,
        population,
        rng: WorkloadRng::for_stream(config.rng, config.seed, REQUEST_STREAM),
        remaining: config.request_count,
        next_consecutive,
        fresh: fresh_keys(config, population),
    }
}

impl RequestStream<'_> {
    fn fresh_random_key(&mut self) -> Key {
        match &mut self.fresh {
            FreshKeys::Rejection(issued) => {
                let (lo, hi) = self.config.insert_bounds;
                loop {
                    let k = self.rng.random_range(lo..hi);
                    if self.population.binary_search(&k).is_err() && issued.insert(k) {
                        return k;
                    }
                }
            }
            FreshKeys::Pool(pool) => {
                // validate() guarantees the pool outlasts the insert budget
                let i = self.rng.random_range(0..pool.len());
                pool.swap_remove(i)
            }
        }
    }
}

impl Iterator for RequestStream<'_> {
    type Item = Request;

    fn next(&mut self) -> Option<Request> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let roll = self.rng.random_range(0..100u8);
        let (rlo, rhi) = self.config.read_bounds;
        Some(match self.config.mix.kind_for(roll) {
            RequestKind::Read => Request::Read(self.rng.random_range(rlo..rhi)),
            RequestKind::Update => {
                let k = self.rng.random_range(rlo..rhi);
                Request::Update(k, self.rng.next_u64())
            }
            RequestKind::Delete => Request::Delete(self.rng.random_range(rlo..rhi)),
            RequestKind::Insert => {
                let k = match self.config.pattern {
                    Pattern::Consecutive => {
                        let k = self.next_consecutive;
                        self.next_consecutive += 1;
                        k
                    }
                    Pattern::Random => self.fresh_random_key(),
                };
                Request::Insert(k, self.rng.next_u64())
            }
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.remaining as usize;
        (n, Some(n))
    }
}

/// `count` uniform reads over `read_bounds`.
pub fn warmup_stream(
    count: usize,
    read_bounds: (Key, Key),
    rng: RngKind,
    seed: u64,
) -> impl Iterator<Item = Request> {
    let mut rng = WorkloadRng::for_stream(rng, seed, WARMUP_STREAM);
    let (lo, hi) = read_bounds;
    (0..count).map(move |_| Request::Read(rng.random_range(lo..hi)))
}
