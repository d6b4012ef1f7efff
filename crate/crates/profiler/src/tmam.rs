//! Top-down slot accounting.
//!
//! Every cycle offers `issue_width` pipeline slots. Level 1 splits them into retiring, bad
//! speculation, front-end bound and back-end bound; level 3 splits the back end into core and
//! memory stalls; level 4 spreads memory stalls across the hierarchy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventmap::TmamInput;

/// Counter values for one measured region. Missing inputs were not collected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CounterSample {
    pub counts: BTreeMap<TmamInput, u64>,
    pub issue_width: u32,
    /// Smallest running/enabled ratio over all counters, 1.0 when nothing was multiplexed.
    pub multiplex_ratio: f64,
}

impl CounterSample {
    pub fn new(issue_width: u32) -> Self {
        Self {
            counts: BTreeMap::new(),
            issue_width,
            multiplex_ratio: 1.0,
        }
    }

    pub fn with(mut self, input: TmamInput, value: u64) -> Self {
        self.counts.insert(input, value);
        self
    }

    pub fn get(&self, input: TmamInput) -> Result<u64, TmamError> {
        self.counts.get(&input).copied().ok_or(TmamError::Missing(input))
    }

    pub fn cycles(&self) -> Option<u64> {
        self.counts.get(&TmamInput::Cycles).copied()
    }

    pub fn instructions(&self) -> Option<u64> {
        self.counts.get(&TmamInput::Instructions).copied()
    }

    pub fn slots(&self) -> Option<u64> {
        self.cycles().map(|c| c * self.issue_width as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TmamError {
    #[error("counter '{0}' was not collected")]
    Missing(TmamInput),
    #[error("zero {0}")]
    Zero(&'static str),
    #[error("memory stalls reported but every memory level counted zero")]
    InconsistentMemory,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Level1 {
    pub retiring: f64,
    pub bad_speculation: f64,
    pub frontend_bound: f64,
    pub backend_bound: f64,
}

impl Level1 {
    pub fn sum(&self) -> f64 {
        self.retiring + self.bad_speculation + self.frontend_bound + self.backend_bound
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BackendSplit {
    pub core_bound: f64,
    pub memory_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MemoryComponents {
    pub l1_bound: f64,
    pub l2_bound: f64,
    pub l3_bound: f64,
    pub dram_bound: f64,
    pub store_bound: f64,
}

impl MemoryComponents {
    pub fn as_array(&self) -> [f64; 5] {
        [self.l1_bound, self.l2_bound, self.l3_bound, self.dram_bound, self.store_bound]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            l1_bound: a[0],
            l2_bound: a[1],
            l3_bound: a[2],
            dram_bound: a[3],
            store_bound: a[4],
        }
    }

    pub fn sum(&self) -> f64 {
        self.as_array().iter().sum()
    }

    /// Name of the largest component.
    pub fn dominant(&self) -> &'static str {
        const NAMES: [&str; 5] = ["l1_bound", "l2_bound", "l3_bound", "dram_bound", "store_bound"];
        let a = self.as_array();
        let i = (0..5).fold(0, |best, i| if a[i] > a[best] { i } else { best });
        NAMES[i]
    }
}

/// Complete breakdown. A `None` level could not be computed; the reason is in `unavailable`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TmamBreakdown {
    pub level1: Option<Level1>,
    pub level3_backend: Option<BackendSplit>,
    /// Normalized so the components sum to `memory_bound`.
    pub level4_memory: Option<MemoryComponents>,
    /// Pre-normalization fractions of cycles, which may overlap.
    pub level4_raw: Option<MemoryComponents>,
    pub unavailable: Vec<String>,
}

impl TmamBreakdown {
    pub fn unavailable(reason: impl Into<String>) -> Self {
        Self {
            unavailable: vec![reason.into()],
            ..Self::default()
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

pub fn compute_cpi(sample: &CounterSample) -> Result<f64, TmamError> {
    let cycles = sample.get(TmamInput::Cycles)?;
    let instructions = sample.get(TmamInput::Instructions)?;
    if instructions == 0 {
        return Err(TmamError::Zero("instructions"));
    }
    Ok(cycles as f64 / instructions as f64)
}

/// Slot split. Back-end bound is the remainder, so slots stalled on both ends count as back end.
pub fn compute_level1(sample: &CounterSample) -> Result<Level1, TmamError> {
    let slots = sample.slots().ok_or(TmamError::Missing(TmamInput::Cycles))? as f64;
    if slots == 0.0 {
        return Err(TmamError::Zero("cycles"));
    }
    let width = sample.issue_width as f64;
    let issued = sample.get(TmamInput::UopsIssued)? as f64;
    let retired = sample.get(TmamInput::RetireSlots)? as f64;
    let recovery = sample.get(TmamInput::RecoveryCycles)? as f64;
    let not_delivered = sample.get(TmamInput::UopsNotDelivered)? as f64;

    let frontend = (not_delivered / slots).clamp(0.0, 1.0);
    let bad_spec = ((issued - retired + width * recovery) / slots).clamp(0.0, 1.0);
    let retiring = (retired / slots).clamp(0.0, 1.0);
    let used = frontend + bad_spec + retiring;
    if used > 1.0 {
        // counter skew can overshoot; shrink proportionally and leave no back-end share
        return Ok(Level1 {
            retiring: retiring / used,
            bad_speculation: bad_spec / used,
            frontend_bound: frontend / used,
            backend_bound: 0.0,
        });
    }
    Ok(Level1 {
        retiring,
        bad_speculation: bad_spec,
        frontend_bound: frontend,
        backend_bound: 1.0 - used,
    })
}

/// Share of back-end stall cycles caused by memory, in `[0, 1]`.
pub fn memory_bound_fraction(sample: &CounterSample, retiring: f64) -> Result<f64, TmamError> {
    let stalls_total = sample.get(TmamInput::StallsTotal)? as f64;
    let mem_any = sample.get(TmamInput::StallsMemAny)? as f64;
    let one_port = sample.get(TmamInput::OnePortUtil)? as f64;
    let two_ports = sample.get(TmamInput::TwoPortsUtil)? as f64;
    let stores = sample.get(TmamInput::BoundOnStores)? as f64;
    let backend_cycles =
        stalls_total + one_port + if retiring > 0.1 { two_ports } else { 0.0 } + stores;
    Ok(ratio(mem_any + stores, backend_cycles).clamp(0.0, 1.0))
}

pub fn compute_backend_split(sample: &CounterSample, level1: &Level1) -> Result<BackendSplit, TmamError> {
    let fraction = memory_bound_fraction(sample, level1.retiring)?;
    let memory_bound = fraction * level1.backend_bound;
    Ok(BackendSplit {
        core_bound: level1.backend_bound - memory_bound,
        memory_bound,
    })
}

/// Per-level memory stall cycles as fractions of all cycles, before normalization.
pub fn compute_memory_raw(sample: &CounterSample) -> Result<MemoryComponents, TmamError> {
    let cycles = sample.get(TmamInput::Cycles)? as f64;
    if cycles == 0.0 {
        return Err(TmamError::Zero("cycles"));
    }
    let mem_any = sample.get(TmamInput::StallsMemAny)?;
    let l1_miss = sample.get(TmamInput::StallsL1dMiss)?;
    let l2_miss = sample.get(TmamInput::StallsL2Miss)?;
    let l3_miss = sample.get(TmamInput::StallsL3Miss)?;
    let stores = sample.get(TmamInput::BoundOnStores)?;
    let c = |v: u64| v as f64 / cycles;
    Ok(MemoryComponents {
        l1_bound: c(mem_any.saturating_sub(l1_miss)),
        l2_bound: c(l1_miss.saturating_sub(l2_miss)),
        l3_bound: c(l2_miss.saturating_sub(l3_miss)),
        dram_bound: c(l3_miss),
        store_bound: c(stores),
    })
}

/// Rescales each raw component by `memory_bound / total` so the five sum to `memory_bound`.
pub fn normalize_memory_breakdown(
    raw: &MemoryComponents,
    memory_bound: f64,
) -> Result<MemoryComponents, TmamError> {
    let total = raw.sum();
    if total == 0.0 {
        return if memory_bound == 0.0 {
            Ok(MemoryComponents::default())
        } else {
            Err(TmamError::InconsistentMemory)
        };
    }
    Ok(MemoryComponents::from_array(
        raw.as_array().map(|m| m * memory_bound / total),
    ))
}

/// Everything computable from `sample`, with reasons for whatever is not.
pub fn compute_breakdown(sample: &CounterSample) -> TmamBreakdown {
    let mut out = TmamBreakdown::default();
    let level1 = match compute_level1(sample) {
        Ok(l) => l,
        Err(e) => {
            out.unavailable.push(format!("level 1: {e}"));
            out.unavailable.push("level 3: needs level 1".into());
            out.unavailable.push("level 4: needs level 3".into());
            return out;
        }
    };
    out.level1 = Some(level1);
    let split = match compute_backend_split(sample, &level1) {
        Ok(s) => s,
        Err(e) => {
            out.unavailable.push(format!("level 3: {e}"));
            out.unavailable.push("level 4: needs level 3".into());
            return out;
        }
    };
    out.level3_backend = Some(split);
    match compute_memory_raw(sample) {
        Ok(raw) => {
            out.level4_raw = Some(raw);
            match normalize_memory_breakdown(&raw, split.memory_bound) {
                Ok(n) => out.level4_memory = Some(n),
                Err(e) => out.unavailable.push(format!("level 4: {e}")),
            }
        }
        Err(e) => out.unavailable.push(format!("level 4: {e}")),
    }
    out
}
