//! The contract shared by every index, the request type, and the reference oracle.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index key. Keys are plain 64-bit unsigned integers ordered numerically.
pub type Key = u64;
/// Payload stored against a key.
pub type Value = u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IndexError {
    #[error("key {0} already exists")]
    AlreadyExists(Key),
    #[error("key {0} not found")]
    NotFound(Key),
    #[error("bulk load input not strictly ascending at position {position}")]
    UnsortedInput { position: usize },
    #[error("bulk load requires an empty index (holds {0} keys)")]
    NotEmpty(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RequestKind {
    Read,
    Update,
    Insert,
    Delete,
}

impl RequestKind {
    pub const ALL: [RequestKind; 4] = [
        RequestKind::Read,
        RequestKind::Update,
        RequestKind::Insert,
        RequestKind::Delete,
    ];

    /// Tag byte used by the binary stream dump.
    pub fn tag(self) -> u8 {
        match self {
            RequestKind::Read => 0,
            RequestKind::Update => 1,
            RequestKind::Insert => 2,
            RequestKind::Delete => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }
}

/// One workload request. Update and Insert carry a value, Read and Delete do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Request {
    Read(Key),
    Update(Key, Value),
    Insert(Key, Value),
    Delete(Key),
}

impl Request {
    pub fn kind(&self) -> RequestKind {
        match self {
            Request::Read(_) => RequestKind::Read,
            Request::Update(..) => RequestKind::Update,
            Request::Insert(..) => RequestKind::Insert,
            Request::Delete(_) => RequestKind::Delete,
        }
    }

    pub fn key(&self) -> Key {
        match *self {
            Request::Read(k) | Request::Delete(k) | Request::Update(k, _) | Request::Insert(k, _) => k,
        }
    }

    pub fn value(&self) -> Option<Value> {
        match *self {
            Request::Update(_, v) | Request::Insert(_, v) => Some(v),
            Request::Read(_) | Request::Delete(_) => None,
        }
    }

    /// Rebuilds a request from its parts, rejecting a value on Read/Delete or a missing one on
    /// Update/Insert.
    pub fn from_parts(kind: RequestKind, key: Key, value: Option<Value>) -> Option<Self> {
        match (kind, value) {
            (RequestKind::Read, None) => Some(Request::Read(key)),
            (RequestKind::Delete, None) => Some(Request::Delete(key)),
            (RequestKind::Update, Some(v)) => Some(Request::Update(key, v)),
            (RequestKind::Insert, Some(v)) => Some(Request::Insert(key, v)),
            _ => None,
        }
    }
}

/// Observable result of executing one request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Found(Value),
    Missing,
    Ok,
    AlreadyExists,
    NotFound,
}

/// Ordered key-value index with unique keys.
///
/// `insert` never overwrites: an existing key yields [`IndexError::AlreadyExists`] and leaves the
/// index untouched. A missing key on `read` is a normal `None`.
pub trait KvIndex {
    fn name(&self) -> &'static str;

    fn insert(&mut self, key: Key, value: Value) -> Result<(), IndexError>;

    fn read(&self, key: Key) -> Option<Value>;

    fn update(&mut self, key: Key, value: Value) -> Result<(), IndexError>;

    fn delete(&mut self, key: Key) -> Result<(), IndexError>;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Loads strictly ascending pairs into an empty index.
    fn bulk_load(&mut self, pairs: &[(Key, Value)]) -> Result<(), IndexError>;

    /// All pairs in ascending key order.
    fn entries(&self) -> Vec<(Key, Value)>;

    /// Checks the structural invariants of the concrete index.
    fn check_invariants(&self) -> Result<(), String>;
}

/// Validates bulk-load input and returns the offending position on failure.
pub fn check_sorted(pairs: &[(Key, Value)]) -> Result<(), IndexError> {
    match pairs.windows(2).position(|w| w[0].0 >= w[1].0) {
        Some(i) => Err(IndexError::UnsortedInput { position: i + 1 }),
        None => Ok(()),
    }
}

/// Runs one request against an index and reports what the caller can observe.
#[inline]
pub fn execute<I: KvIndex + ?Sized>(index: &mut I, request: &Request) -> Outcome {
    let status = |r: Result<(), IndexError>| match r {
        Ok(()) => Outcome::Ok,
        Err(IndexError::AlreadyExists(_)) => Outcome::AlreadyExists,
        Err(_) => Outcome::NotFound,
    };
    match *request {
        Request::Read(k) => index.read(k).map_or(Outcome::Missing, Outcome::Found),
        Request::Update(k, v) => status(index.update(k, v)),
        Request::Insert(k, v) => status(index.insert(k, v)),
        Request::Delete(k) => status(index.delete(k)),
    }
}

/// Ground-truth index backed by `BTreeMap`.
#[derive(Debug, Clone, Default)]
pub struct OracleIndex {
    entries: BTreeMap<Key, Value>,
}

impl OracleIndex {
    pub fn new() -> Self {
        Self::default()
    }
}

impl KvIndex for OracleIndex {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn insert(&mut self, key: Key, value: Value) -> Result<(), IndexError> {
        match self.entries.entry(key) {
            std::collections::btree_map::Entry::Occupied(_) => Err(IndexError::AlreadyExists(key)),
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(value);
                Ok(())
            }
        }
    }

    fn read(&self, key: Key) -> Option<Value> {
        self.entries.get(&key).copied()
    }

    fn update(&mut self, key: Key, value: Value) -> Result<(), IndexError> {
        match self.entries.get_mut(&key) {
            Some(v) => {
                *v = value;
                Ok(())
            }
            None => Err(IndexError::NotFound(key)),
        }
    }

    fn delete(&mut self, key: Key) -> Result<(), IndexError> {
        self.entries.remove(&key).map(|_| ()).ok_or(IndexError::NotFound(key))
    }

    fn len(&self) -> usize {
        self.entries.len()
    }

    fn bulk_load(&mut self, pairs: &[(Key, Value)]) -> Result<(), IndexError> {
        check_sorted(pairs)?;
        if !self.entries.is_empty() {
            return Err(IndexError::NotEmpty(self.entries.len()));
        }
        self.entries = pairs.iter().copied().collect();
        Ok(())
    }

    fn entries(&self) -> Vec<(Key, Value)> {
        self.entries.iter().map(|(k, v)| (*k, *v)).collect()
    }

    fn check_invariants(&self) -> Result<(), String> {
        Ok(())
    }
}

/// Index that stores nothing. Used to calibrate the request-dispatch overhead of the harness.
#[derive(Debug, Clone, Default)]
pub struct NoopIndex {
    len: usize,
}

impl KvIndex for NoopIndex {
    fn name(&self) -> &'static str {
        "noop"
    }

    #[inline(never)]
    fn insert(&mut self, _key: Key, _value: Value) -> Result<(), IndexError> {
        Ok(())
    }

    #[inline(never)]
    fn read(&self, key: Key) -> Option<Value> {
        std::hint::black_box(Some(key))
    }

    #[inline(never)]
    fn update(&mut self, _key: Key, _value: Value) -> Result<(), IndexError> {
        Ok(())
    }

    #[inline(never)]
    fn delete(&mut self, _key: Key) -> Result<(), IndexError> {
        Ok(())
    }

    fn len(&self) -> usize {
        self.len
    }

    fn bulk_load(&mut self, pairs: &[(Key, Value)]) -> Result<(), IndexError> {
        check_sorted(pairs)?;
        self.len = pairs.len();
        Ok(())
    }

    fn entries(&self) -> Vec<(Key, Value)> {
        Vec::new()
    }

    fn check_invariants(&self) -> Result<(), String> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_contract() {
        let mut o = OracleIndex::new();
        assert_eq!(o.read(7), None);
        assert_eq!(o.insert(5, 50), Ok(()));
        assert_eq!(o.read(5), Some(50));
        assert_eq!(o.insert(5, 99), Err(IndexError::AlreadyExists(5)));
        assert_eq!(o.read(5), Some(50));
        assert_eq!(o.update(1, 2), Err(IndexError::NotFound(1)));
        assert_eq!(o.update(5, 51), Ok(()));
        assert_eq!(o.delete(9), Err(IndexError::NotFound(9)));
        assert_eq!(o.delete(5), Ok(()));
        assert!(o.is_empty());
    }

    #[test]
    fn bulk_load_rejects_bad_input() {
        let mut o = OracleIndex::new();
        assert_eq!(
            o.bulk_load(&[(1, 1), (3, 3), (2, 2)]),
            Err(IndexError::UnsortedInput { position: 2 })
        );
        assert_eq!(
            o.bulk_load(&[(1, 1), (1, 2)]),
            Err(IndexError::UnsortedInput { position: 1 })
        );
        assert_eq!(o.bulk_load(&[]), Ok(()));
        assert!(o.is_empty());
    }

    #[test]
    fn request_parts_round_trip() {
        for kind in RequestKind::ALL {
            assert_eq!(RequestKind::from_tag(kind.tag()), Some(kind));
        }
        assert_eq!(Request::from_parts(RequestKind::Read, 3, Some(1)), None);
        assert_eq!(Request::from_parts(RequestKind::Insert, 3, None), None);
        let r = Request::from_parts(RequestKind::Update, 3, Some(4)).unwrap();
        assert_eq!((r.kind(), r.key(), r.value()), (RequestKind::Update, 3, Some(4)));
    }
}
