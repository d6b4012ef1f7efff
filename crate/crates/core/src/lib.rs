//! Ordered key-value indexes and workload generation for the index benchmark.
//!
//! Three indexes share the [`KvIndex`] contract:
//!
//! - [`alex::AlexIndex`]: an updatable learned index built from linear models over gapped arrays.
//! - [`art::ArtIndex`]: an adaptive radix tree with path compression and lazy expansion.
//! - [`btree::BPlusTree`]: a classic B+Tree with a linked leaf chain.
//!
//! [`OracleIndex`] wraps a `BTreeMap` and is the ground truth used by the test suites.

pub mod alex;
pub mod art;
pub mod btree;
pub mod index;
pub mod workload;

pub use index::{
    execute, IndexError, Key, KvIndex, NoopIndex, OracleIndex, Outcome, Request, RequestKind, Value,
};
