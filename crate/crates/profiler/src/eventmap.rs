//! Mapping from abstract top-down inputs to host-specific event encodings.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_EVENT_MAP: &str = include_str!("../eventmaps/default.map");

/// Every counter the breakdown can consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TmamInput {
    Cycles,
    Instructions,
    UopsIssued,
    RetireSlots,
    RecoveryCycles,
    UopsNotDelivered,
    StallsTotal,
    StallsMemAny,
    StallsL1dMiss,
    StallsL2Miss,
    StallsL3Miss,
    OnePortUtil,
    TwoPortsUtil,
    BoundOnStores,
}

impl TmamInput {
    pub const ALL: [TmamInput; 14] = [
        TmamInput::Cycles,
        TmamInput::Instructions,
        TmamInput::UopsIssued,
        TmamInput::RetireSlots,
        TmamInput::RecoveryCycles,
        TmamInput::UopsNotDelivered,
        TmamInput::StallsTotal,
        TmamInput::StallsMemAny,
        TmamInput::StallsL1dMiss,
        TmamInput::StallsL2Miss,
        TmamInput::StallsL3Miss,
        TmamInput::OnePortUtil,
        TmamInput::TwoPortsUtil,
        TmamInput::BoundOnStores,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TmamInput::Cycles => "cycles",
            TmamInput::Instructions => "instructions",
            TmamInput::UopsIssued => "uops_issued.any",
            TmamInput::RetireSlots => "uops_retired.retire_slots",
            TmamInput::RecoveryCycles => "int_misc.recovery_cycles",
            TmamInput::UopsNotDelivered => "idq_uops_not_delivered.core",
            TmamInput::StallsTotal => "cycle_activity.stalls_total",
            TmamInput::StallsMemAny => "cycle_activity.stalls_mem_any",
            TmamInput::StallsL1dMiss => "cycle_activity.stalls_l1d_miss",
            TmamInput::StallsL2Miss => "cycle_activity.stalls_l2_miss",
            TmamInput::StallsL3Miss => "cycle_activity.stalls_l3_miss",
            TmamInput::OnePortUtil => "exe_activity.1_ports_util",
            TmamInput::TwoPortsUtil => "exe_activity.2_ports_util",
            TmamInput::BoundOnStores => "exe_activity.bound_on_stores",
        }
    }

    /// Lowest breakdown level that needs this input.
    ///
    /// Level 1 is the slot split plus cycles and instructions, level 2 adds nothing, level 3 the
    /// core/memory split of the back end and level 4 the memory hierarchy.
    pub fn level(self) -> u8 {
        match self {
            TmamInput::Cycles
            | TmamInput::Instructions
            | TmamInput::UopsIssued
            | TmamInput::RetireSlots
            | TmamInput::RecoveryCycles
            | TmamInput::UopsNotDelivered => 1,
            TmamInput::StallsTotal
            | TmamInput::StallsMemAny
            | TmamInput::OnePortUtil
            | TmamInput::TwoPortsUtil
            | TmamInput::BoundOnStores => 3,
            TmamInput::StallsL1dMiss | TmamInput::StallsL2Miss | TmamInput::StallsL3Miss => 4,
        }
    }

    pub fn for_level(level: u8) -> impl Iterator<Item = TmamInput> {
        Self::ALL.into_iter().filter(move |i| i.level() <= level)
    }
}

impl fmt::Display for TmamInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TmamInput {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Self::ALL.into_iter().find(|i| i.name() == s).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenericEvent {
    Cycles,
    Instructions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SoftwareEvent {
    TaskClock,
    PageFaults,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventDescriptor {
    Hardware(GenericEvent),
    Software(SoftwareEvent),
    Raw {
        event: u8,
        umask: u8,
        cmask: u8,
        inv: bool,
        edge: bool,
    },
    Unavailable,
}

impl EventDescriptor {
    /// Raw `config` word in the layout used by Intel core PMUs.
    pub fn raw_config(&self) -> Option<u64> {
        match *self {
            EventDescriptor::Raw {
                event,
                umask,
                cmask,
                inv,
                edge,
            } => Some(
                event as u64
                    | (umask as u64) << 8
                    | (edge as u64) << 18
                    | (inv as u64) << 23
                    | (cmask as u64) << 24,
            ),
            _ => None,
        }
    }
}

impl fmt::Display for EventDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            EventDescriptor::Hardware(GenericEvent::Cycles) => f.write_str("hw:cycles"),
            EventDescriptor::Hardware(GenericEvent::Instructions) => f.write_str("hw:instructions"),
            EventDescriptor::Software(SoftwareEvent::TaskClock) => f.write_str("sw:task-clock"),
            EventDescriptor::Software(SoftwareEvent::PageFaults) => f.write_str("sw:page-faults"),
            EventDescriptor::Raw {
                event,
                umask,
                cmask,
                inv,
                edge,
            } => {
                write!(f, "raw:event={event:#04x},umask={umask:#04x}")?;
                if cmask != 0 {
                    write!(f, ",cmask={cmask}")?;
                }
                if inv {
                    f.write_str(",inv")?;
                }
                if edge {
                    f.write_str(",edge")?;
                }
                Ok(())
            }
            EventDescriptor::Unavailable => f.write_str("unavailable"),
        }
    }
}

fn parse_u8(s: &str) -> Option<u8> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u8::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

impl FromStr for EventDescriptor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        match s {
            "hw:cycles" => return Ok(EventDescriptor::Hardware(GenericEvent::Cycles)),
            "hw:instructions" => return Ok(EventDescriptor::Hardware(GenericEvent::Instructions)),
            "sw:task-clock" => return Ok(EventDescriptor::Software(SoftwareEvent::TaskClock)),
            "sw:page-faults" => return Ok(EventDescriptor::Software(SoftwareEvent::PageFaults)),
            "unavailable" => return Ok(EventDescriptor::Unavailable),
            _ => {}
        }
        let body = s.strip_prefix("raw:").ok_or_else(|| format!("unknown descriptor '{s}'"))?;
        let (mut event, mut umask, mut cmask, mut inv, mut edge) = (None, 0u8, 0u8, false, false);
        for field in body.split(',').map(str::trim) {
            let bad = || format!("bad field '{field}' in '{s}'");
            match field.split_once('=') {
                Some(("event", v)) => event = Some(parse_u8(v).ok_or_else(bad)?),
                Some(("umask", v)) => umask = parse_u8(v).ok_or_else(bad)?,
                Some(("cmask", v)) => cmask = parse_u8(v).ok_or_else(bad)?,
                None if field == "inv" => inv = true,
                None if field == "edge" => edge = true,
                _ => return Err(bad()),
            }
        }
        Ok(EventDescriptor::Raw {
            event: event.ok_or_else(|| format!("missing event code in '{s}'"))?,
            umask,
            cmask,
            inv,
            edge,
        })
    }
}

/// Host identity as reported by the OS.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CpuId {
    pub vendor: String,
    pub family: u32,
    pub model: u32,
    pub model_name: String,
}

impl CpuId {
    pub fn from_cpuinfo(text: &str) -> Self {
        let mut id = CpuId::default();
        for line in text.lines() {
            let Some((k, v)) = line.split_once(':') else {
                // first blank line ends the first processor block
                if line.trim().is_empty() && !id.vendor.is_empty() {
                    break;
                }
                continue;
            };
            let v = v.trim();
            match k.trim() {
                "vendor_id" => id.vendor = v.to_string(),
                "cpu family" => id.family = v.parse().unwrap_or(0),
                "model" => id.model = v.parse().unwrap_or(0),
                "model name" => id.model_name = v.to_string(),
                _ => {}
            }
        }
        id
    }

    pub fn detect() -> Self {
        std::fs::read_to_string("/proc/cpuinfo")
            .map(|t| Self::from_cpuinfo(&t))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchRule {
    pub vendor: Option<String>,
    pub family: Option<u32>,
    pub model: Option<u32>,
}

impl MatchRule {
    pub fn matches(&self, cpu: &CpuId) -> bool {
        self.vendor.as_ref().is_none_or(|v| *v == cpu.vendor)
            && self.family.is_none_or(|f| f == cpu.family)
            && self.model.is_none_or(|m| m == cpu.model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMapSection {
    pub id: String,
    pub rules: Vec<MatchRule>,
    pub issue_width: u32,
    pub events: BTreeMap<TmamInput, EventDescriptor>,
}

impl EventMapSection {
    pub fn descriptor(&self, input: TmamInput) -> EventDescriptor {
        self.events.get(&input).copied().unwrap_or(EventDescriptor::Unavailable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMap {
    pub sections: Vec<EventMapSection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("event map line {line}: {message}")]
pub struct EventMapError {
    pub line: usize,
    pub message: String,
}

impl EventMap {
    pub fn parse(text: &str) -> Result<Self, EventMapError> {
        let mut sections: Vec<EventMapSection> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let err = |message: String| EventMapError { line: i + 1, message };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(id) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push(EventMapSection {
                    id: id.trim().to_string(),
                    rules: Vec::new(),
                    issue_width: 4,
                    events: BTreeMap::new(),
                });
                continue;
            }
            let section = sections
                .last_mut()
                .ok_or_else(|| err("entry before the first [section]".into()))?;
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            match key {
                "match" => section.rules.push(parse_rule(value).map_err(err)?),
                "issue_width" => {
                    section.issue_width = value
                        .parse()
                        .ok()
                        .filter(|&w| w > 0)
                        .ok_or_else(|| err(format!("bad issue width '{value}'")))?
                }
                _ => {
                    let input: TmamInput = key
                        .parse()
                        .map_err(|_| err(format!("unknown input '{key}'")))?;
                    let desc: EventDescriptor = value.parse().map_err(err)?;
                    if section.events.insert(input, desc).is_some() {
                        return Err(err(format!("'{key}' mapped twice")));
                    }
                }
            }
        }
        for s in &sections {
            if s.rules.is_empty() {
                return Err(EventMapError {
                    line: 0,
                    message: format!("section [{}] has no match rule", s.id),
                });
            }
            if let Some(missing) = TmamInput::ALL.iter().find(|i| !s.events.contains_key(i)) {
                return Err(EventMapError {
                    line: 0,
                    message: format!("section [{}] neither maps nor disables '{missing}'", s.id),
                });
            }
        }
        Ok(Self { sections })
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_EVENT_MAP).expect("bundled event map parses")
    }

    pub fn resolve(&self, cpu: &CpuId) -> Option<&EventMapSection> {
        self.sections.iter().find(|s| s.rules.iter().any(|r| r.matches(cpu)))
    }
}

fn parse_rule(value: &str) -> Result<MatchRule, String> {
    let mut rule = MatchRule::default();
    if value == "any" {
        return Ok(rule);
    }
    for term in value.split_whitespace() {
        match term.split_once(':') {
            Some(("vendor", v)) => rule.vendor = Some(v.to_string()),
            Some(("family", v)) => rule.family = Some(v.parse().map_err(|_| format!("bad family '{v}'"))?),
            Some(("model", v)) => rule.model = Some(v.parse().map_err(|_| format!("bad model '{v}'"))?),
            _ => return Err(format!("bad match term '{term}'")),
        }
    }
    Ok(rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn skx() -> CpuId {
        CpuId {
            vendor: "GenuineIntel".into(),
            family: 6,
            model: 85,
            model_name: String::new(),
        }
    }

    #[test]
    fn builtin_map_resolves() {
        let map = EventMap::builtin();
        let s = map.resolve(&skx()).unwrap();
        assert_eq!(s.id, "skylake-sp");
        assert_eq!(s.issue_width, 4);
        assert_eq!(
            s.descriptor(TmamInput::StallsMemAny).raw_config(),
            Some(0x14a3 | 20 << 24)
        );
        let amd = CpuId {
            vendor: "AuthenticAMD".into(),
            family: 25,
            model: 1,
            model_name: String::new(),
        };
        let g = map.resolve(&amd).unwrap();
        assert_eq!(g.id, "generic");
        assert_eq!(g.descriptor(TmamInput::StallsMemAny), EventDescriptor::Unavailable);
        assert_eq!(g.descriptor(TmamInput::Cycles), EventDescriptor::Hardware(GenericEvent::Cycles));
    }

    #[test]
    fn descriptor_round_trip() {
        for s in [
            "hw:cycles",
            "sw:task-clock",
            "unavailable",
            "raw:event=0xa3,umask=0x06,cmask=6",
            "raw:event=0x0e,umask=0x01,cmask=1,inv,edge",
        ] {
            let d: EventDescriptor = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
        let d: EventDescriptor = "raw:event=0x0e,umask=0x01,cmask=1,inv,edge".parse().unwrap();
        assert_eq!(d.raw_config(), Some(0x010e | 1 << 18 | 1 << 23 | 1 << 24));
        assert!("raw:umask=1".parse::<EventDescriptor>().is_err());
        assert!("raw:event=0x1ff".parse::<EventDescriptor>().is_err());
        assert!("perf:foo".parse::<EventDescriptor>().is_err());
    }

    #[test]
    fn parse_errors() {
        assert!(EventMap::parse("cycles = hw:cycles").is_err());
        let partial = "[x]\nmatch = any\ncycles = hw:cycles\n";
        let e = EventMap::parse(partial).unwrap_err();
        assert!(e.message.contains("neither maps nor disables"), "{e}");
        let dup = "[x]\nmatch = any\ncycles = hw:cycles\ncycles = hw:cycles\n";
        assert!(EventMap::parse(dup).unwrap_err().message.contains("twice"));
        assert!(EventMap::parse("[x]\nmatch = cpu:7\n").is_err());
    }

    #[test]
    fn cpuinfo_parsing() {
        let text = "processor\t: 0\nvendor_id\t: GenuineIntel\ncpu family\t: 6\nmodel\t\t: 85\nmodel name\t: Intel(R) Xeon(R) Platinum 8256 CPU\n\nprocessor\t: 1\nvendor_id\t: Other\n";
        let id = CpuId::from_cpuinfo(text);
        assert_eq!((id.vendor.as_str(), id.family, id.model), ("GenuineIntel", 6, 85));
        assert!(id.model_name.contains("8256"));
    }

    #[test]
    fn levels_partition_inputs() {
        assert_eq!(TmamInput::for_level(1).count(), 6);
        assert_eq!(TmamInput::for_level(2).count(), 6);
        assert_eq!(TmamInput::for_level(3).count(), 11);
        assert_eq!(TmamInput::for_level(4).count(), 14);
    }
}
