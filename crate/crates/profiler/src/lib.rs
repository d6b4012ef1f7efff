//! Hardware counter collection and top-down cycle attribution.

pub mod calibration;
pub mod callgrind;
pub mod eventmap;
pub mod perf;
pub mod profiler;
pub mod tmam;

pub use eventmap::{CpuId, EventDescriptor, EventMap, EventMapSection, TmamInput};
pub use perf::{open_counters, CounterGroup, PerfCounter, ProfilerError};
pub use profiler::{ProfileResult, Profiler};
pub use tmam::{
    compute_backend_split, compute_breakdown, compute_cpi, compute_level1, compute_memory_raw,
    normalize_memory_breakdown, BackendSplit, CounterSample, Level1, MemoryComponents, TmamBreakdown,
    TmamError,
};
