//! Thin `perf_event_open` wrapper: one fd per event, counting user space only, read with enabled
//! and running times so multiplexed counts can be scaled.

use std::io;
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventmap::{EventDescriptor, EventMapSection, GenericEvent, SoftwareEvent, TmamInput};
use crate::tmam::CounterSample;

const PERF_TYPE_HARDWARE: u32 = 0;
const PERF_TYPE_SOFTWARE: u32 = 1;
const PERF_TYPE_RAW: u32 = 4;

const PERF_COUNT_HW_CPU_CYCLES: u64 = 0;
const PERF_COUNT_HW_INSTRUCTIONS: u64 = 1;
const PERF_COUNT_SW_TASK_CLOCK: u64 = 1;
const PERF_COUNT_SW_PAGE_FAULTS: u64 = 2;

const PERF_FORMAT_TOTAL_TIME_ENABLED: u64 = 1;
const PERF_FORMAT_TOTAL_TIME_RUNNING: u64 = 2;

const FLAG_DISABLED: u64 = 1;
const FLAG_EXCLUDE_KERNEL: u64 = 1 << 5;
const FLAG_EXCLUDE_HV: u64 = 1 << 6;

const PERF_FLAG_FD_CLOEXEC: libc::c_ulong = 8;

const IOC_ENABLE: libc::c_ulong = 0x2400;
const IOC_DISABLE: libc::c_ulong = 0x2401;
const IOC_RESET: libc::c_ulong = 0x2403;

/// `struct perf_event_attr` up to `aux_sample_size` (120 bytes).
#[repr(C)]
#[derive(Default)]
struct PerfEventAttr {
    type_: u32,
    size: u32,
    config: u64,
    sample_period: u64,
    sample_type: u64,
    read_format: u64,
    flags: u64,
    wakeup_events: u32,
    bp_type: u32,
    config1: u64,
    config2: u64,
    branch_sample_type: u64,
    sample_regs_user: u64,
    sample_stack_user: u32,
    clockid: i32,
    sample_regs_intr: u64,
    aux_watermark: u32,
    sample_max_stack: u16,
    reserved_2: u16,
    aux_sample_size: u32,
    reserved_3: u32,
}

const _: () = assert!(std::mem::size_of::<PerfEventAttr>() == 120);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfilerError {
    #[error("counter access denied ({0}); check /proc/sys/kernel/perf_event_paranoid")]
    PermissionDenied(String),
    #[error("event {event} not supported on this host: {reason}")]
    UnsupportedEvent { event: String, reason: String },
    #[error("counter I/O failed: {0}")]
    Io(String),
}

fn classify(err: io::Error, event: &str) -> ProfilerError {
    match err.raw_os_error() {
        Some(libc::EACCES) | Some(libc::EPERM) => ProfilerError::PermissionDenied(err.to_string()),
        _ => ProfilerError::UnsupportedEvent {
            event: event.to_string(),
            reason: err.to_string(),
        },
    }
}

/// One open counter.
#[derive(Debug)]
pub struct PerfCounter {
    fd: OwnedFd,
}

/// Count and the time the counter was enabled and actually scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CounterReading {
    pub value: u64,
    pub time_enabled: u64,
    pub time_running: u64,
}

impl CounterReading {
    /// Value extrapolated to the full enabled time.
    pub fn scaled(&self) -> u64 {
        if self.time_running == 0 || self.time_running >= self.time_enabled {
            self.value
        } else {
            (self.value as u128 * self.time_enabled as u128 / self.time_running as u128) as u64
        }
    }

    pub fn running_ratio(&self) -> f64 {
        if self.time_enabled == 0 {
            1.0
        } else {
            self.time_running as f64 / self.time_enabled as f64
        }
    }
}

impl PerfCounter {
    /// Opens a disabled counter for the calling thread.
    pub fn open(desc: EventDescriptor) -> Result<Self, ProfilerError> {
        let (type_, config) = match desc {
            EventDescriptor::Hardware(GenericEvent::Cycles) => (PERF_TYPE_HARDWARE, PERF_COUNT_HW_CPU_CYCLES),
            EventDescriptor::Hardware(GenericEvent::Instructions) => {
                (PERF_TYPE_HARDWARE, PERF_COUNT_HW_INSTRUCTIONS)
            }
            EventDescriptor::Software(SoftwareEvent::TaskClock) => (PERF_TYPE_SOFTWARE, PERF_COUNT_SW_TASK_CLOCK),
            EventDescriptor::Software(SoftwareEvent::PageFaults) => (PERF_TYPE_SOFTWARE, PERF_COUNT_SW_PAGE_FAULTS),
            EventDescriptor::Raw { .. } => (PERF_TYPE_RAW, desc.raw_config().expect("raw")),
            EventDescriptor::Unavailable => {
                return Err(ProfilerError::UnsupportedEvent {
                    event: desc.to_string(),
                    reason: "declared unavailable in the event map".into(),
                })
            }
        };
        let attr = PerfEventAttr {
            type_,
            size: std::mem::size_of::<PerfEventAttr>() as u32,
            config,
            read_format: PERF_FORMAT_TOTAL_TIME_ENABLED | PERF_FORMAT_TOTAL_TIME_RUNNING,
            flags: FLAG_DISABLED | FLAG_EXCLUDE_KERNEL | FLAG_EXCLUDE_HV,
            ..Default::default()
        };
        // SAFETY: attr is a valid, fully initialised perf_event_attr that outlives the call.
        let fd = unsafe {
            libc::syscall(
                libc::SYS_perf_event_open,
                &attr as *const PerfEventAttr,
                0 as libc::pid_t,
                -1 as libc::c_int,
                -1 as libc::c_int,
                PERF_FLAG_FD_CLOEXEC,
            )
        };
        if fd < 0 {
            return Err(classify(io::Error::last_os_error(), &desc.to_string()));
        }
        // SAFETY: the kernel returned a fresh descriptor that nothing else owns.
        Ok(Self {
            fd: unsafe { OwnedFd::from_raw_fd(fd as i32) },
        })
    }

    fn ioctl(&self, request: libc::c_ulong) -> Result<(), ProfilerError> {
        // SAFETY: perf ioctls without an argument on an fd we own.
        let r = unsafe { libc::ioctl(self.fd.as_raw_fd(), request as _, 0) };
        if r < 0 {
            return Err(ProfilerError::Io(io::Error::last_os_error().to_string()));
        }
        Ok(())
    }

    pub fn reset(&self) -> Result<(), ProfilerError> {
        self.ioctl(IOC_RESET)
    }

    pub fn enable(&self) -> Result<(), ProfilerError> {
        self.ioctl(IOC_ENABLE)
    }

    pub fn disable(&self) -> Result<(), ProfilerError> {
        self.ioctl(IOC_DISABLE)
    }

    pub fn read(&self) -> Result<CounterReading, ProfilerError> {
        let mut buf = [0u64; 3];
        // SAFETY: buf is 24 writable bytes, the size of the configured read format.
        let n = unsafe { libc::read(self.fd.as_raw_fd(), buf.as_mut_ptr().cast(), std::mem::size_of_val(&buf)) };
        if n != std::mem::size_of_val(&buf) as isize {
            return Err(ProfilerError::Io(io::Error::last_os_error().to_string()));
        }
        Ok(CounterReading {
            value: buf[0],
            time_enabled: buf[1],
            time_running: buf[2],
        })
    }
}

/// Counters that could not be opened, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingCounter {
    pub input: TmamInput,
    pub descriptor: String,
    pub reason: String,
}

/// Every counter needed for a breakdown level, armed but not running.
#[derive(Debug)]
pub struct CounterGroup {
    level: u8,
    issue_width: u32,
    counters: Vec<(TmamInput, PerfCounter)>,
    missing: Vec<MissingCounter>,
}

/// Opens the counters for breakdown `level` (1 to 4) as described by `section`.
///
/// Unsupported events are recorded as missing rather than failing the whole group, so a host
/// without the deeper events still yields cycles and instructions. Only a permission failure on
/// every requested event is an error.
pub fn open_counters(section: &EventMapSection, level: u8) -> Result<CounterGroup, ProfilerError> {
    let level = level.clamp(1, 4);
    let mut counters = Vec::new();
    let mut missing = Vec::new();
    let mut denied = None;
    for input in TmamInput::for_level(level) {
        let desc = section.descriptor(input);
        match PerfCounter::open(desc) {
            Ok(c) => counters.push((input, c)),
            Err(e) => {
                if let ProfilerError::PermissionDenied(msg) = &e {
                    denied.get_or_insert_with(|| msg.clone());
                }
                missing.push(MissingCounter {
                    input,
                    descriptor: desc.to_string(),
                    reason: e.to_string(),
                });
            }
        }
    }
    if counters.is_empty() {
        if let Some(msg) = denied {
            return Err(ProfilerError::PermissionDenied(msg));
        }
    }
    Ok(CounterGroup {
        level,
        issue_width: section.issue_width,
        counters,
        missing,
    })
}

impl CounterGroup {
    pub fn level(&self) -> u8 {
        self.level
    }

    pub fn missing(&self) -> &[MissingCounter] {
        &self.missing
    }

    pub fn opened(&self) -> usize {
        self.counters.len()
    }

    /// True when every input of the requested level is being counted.
    pub fn is_complete(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn start(&self) -> Result<(), ProfilerError> {
        for (_, c) in &self.counters {
            c.reset()?;
        }
        for (_, c) in &self.counters {
            c.enable()?;
        }
        Ok(())
    }

    pub fn stop(&self) -> Result<(), ProfilerError> {
        for (_, c) in self.counters.iter().rev() {
            c.disable()?;
        }
        Ok(())
    }

    pub fn sample(&self) -> Result<CounterSample, ProfilerError> {
        let mut s = CounterSample::new(self.issue_width);
        for (input, c) in &self.counters {
            let r = c.read()?;
            s.counts.insert(*input, r.scaled());
            s.multiplex_ratio = s.multiplex_ratio.min(r.running_ratio());
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling() {
        let r = CounterReading {
            value: 100,
            time_enabled: 1000,
            time_running: 250,
        };
        assert_eq!(r.scaled(), 400);
        assert_eq!(r.running_ratio(), 0.25);
        let full = CounterReading {
            value: 7,
            time_enabled: 10,
            time_running: 10,
        };
        assert_eq!(full.scaled(), 7);
        assert_eq!(CounterReading::default().scaled(), 0);
    }

    #[test]
    fn unavailable_descriptor_is_unsupported() {
        assert!(matches!(
            PerfCounter::open(EventDescriptor::Unavailable),
            Err(ProfilerError::UnsupportedEvent { .. })
        ));
    }
}
