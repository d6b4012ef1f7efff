//! Profiler facade used around a measured region. Never fails: anything that cannot be counted
//! is reported as unavailable with a reason.

use serde::{Deserialize, Serialize};

use crate::eventmap::{CpuId, EventMap, EventMapSection};
use crate::perf::{open_counters, CounterGroup, MissingCounter, ProfilerError};
use crate::tmam::{compute_breakdown, compute_cpi, CounterSample, TmamBreakdown};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileResult {
    pub sample: Option<CounterSample>,
    pub cycles: Option<u64>,
    pub instructions: Option<u64>,
    pub cpi: Option<f64>,
    pub breakdown: TmamBreakdown,
    pub multiplex_ratio: Option<f64>,
    pub event_map_section: Option<String>,
    pub missing: Vec<MissingCounter>,
    pub notes: Vec<String>,
}

impl ProfileResult {
    pub fn disabled(reason: &str) -> Self {
        Self {
            sample: None,
            cycles: None,
            instructions: None,
            cpi: None,
            breakdown: TmamBreakdown::unavailable(reason),
            multiplex_ratio: None,
            event_map_section: None,
            missing: Vec::new(),
            notes: vec![reason.to_string()],
        }
    }
}

pub struct Profiler {
    section: Option<EventMapSection>,
    group: Option<CounterGroup>,
    notes: Vec<String>,
}

impl Profiler {
    /// Profiler that counts nothing.
    pub fn disabled() -> Self {
        Self {
            section: None,
            group: None,
            notes: vec!["counters disabled".into()],
        }
    }

    pub fn open(map: &EventMap, cpu: &CpuId, level: u8) -> Self {
        let Some(section) = map.resolve(cpu).cloned() else {
            return Self {
                section: None,
                group: None,
                notes: vec![format!("no event map section matches {} family {} model {}", cpu.vendor, cpu.family, cpu.model)],
            };
        };
        let (group, notes) = match open_counters(&section, level) {
            Ok(g) if g.opened() > 0 => (Some(g), Vec::new()),
            Ok(_) => (None, vec!["no counter could be opened on this host".to_string()]),
            Err(e @ ProfilerError::PermissionDenied(_)) => (None, vec![e.to_string()]),
            Err(e) => (None, vec![e.to_string()]),
        };
        Self {
            section: Some(section),
            group,
            notes,
        }
    }

    pub fn is_active(&self) -> bool {
        self.group.is_some()
    }

    /// True when every counter of the requested level is live.
    pub fn is_complete(&self) -> bool {
        self.group.as_ref().is_some_and(|g| g.is_complete())
    }

    pub fn missing(&self) -> Vec<MissingCounter> {
        self.group.as_ref().map(|g| g.missing().to_vec()).unwrap_or_default()
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn start(&mut self) {
        if let Some(g) = &self.group {
            if let Err(e) = g.start() {
                self.notes.push(format!("start failed: {e}"));
                self.group = None;
            }
        }
    }

    pub fn stop(&mut self) -> ProfileResult {
        let Some(g) = &self.group else {
            let reason = self.notes.first().cloned().unwrap_or_else(|| "counters unavailable".into());
            let mut r = ProfileResult::disabled(&reason);
            r.notes = self.notes.clone();
            r.event_map_section = self.section.as_ref().map(|s| s.id.clone());
            return r;
        };
        let sample = g.stop().and_then(|_| g.sample());
        let sample = match sample {
            Ok(s) => s,
            Err(e) => {
                let mut r = ProfileResult::disabled(&e.to_string());
                r.missing = g.missing().to_vec();
                return r;
            }
        };
        let mut breakdown = compute_breakdown(&sample);
        for m in g.missing() {
            breakdown.unavailable.push(format!("{}: {}", m.input, m.reason));
        }
        ProfileResult {
            cycles: sample.cycles(),
            instructions: sample.instructions(),
            cpi: compute_cpi(&sample).ok(),
            multiplex_ratio: Some(sample.multiplex_ratio),
            breakdown,
            event_map_section: self.section.as_ref().map(|s| s.id.clone()),
            missing: g.missing().to_vec(),
            notes: self.notes.clone(),
            sample: Some(sample),
        }
    }
}
