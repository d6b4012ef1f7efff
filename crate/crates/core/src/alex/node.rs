//! Gapped-array data nodes.
//!
//! A data node keeps its pairs in a fixed-capacity slot array with free slots (gaps) spread
//! between them, so an insert usually lands in a gap next to its predicted position instead of
//! shifting the whole array. Occupancy lives in a bitmap. Every gap slot of the key array holds
//! a copy of the next occupied key to its right (`Key::MAX` after the last one), which keeps the
//! key array non-decreasing so searches never have to consult the bitmap.

use crate::index::{Key, Value};

use super::model::LinearModel;

/// Capacity used for fresh empty nodes.
pub const MIN_CAPACITY: usize = 16;

/// Result of a search inside a data node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchResult {
    pub found: bool,
    /// Slot holding the key when `found`, otherwise the leftmost slot that keeps order on insert.
    pub slot: usize,
    /// Probe doublings plus binary-search steps.
    pub steps: u32,
}

/// What an insert did, for the caller's statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InsertEffect {
    pub slot: usize,
    pub shifted: usize,
    pub steps: u32,
}

#[derive(Debug, Clone)]
pub struct DataNode {
    keys: Vec<Key>,
    values: Vec<Value>,
    occupied: Vec<u64>,
    num_keys: usize,
    pub(crate) model: LinearModel,
    max_key: Option<Key>,
    append_run: usize,
    append_only: bool,
}

impl DataNode {
    pub fn empty(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            keys: vec![Key::MAX; capacity],
            values: vec![0; capacity],
            occupied: vec![0; capacity.div_ceil(64)],
            num_keys: 0,
            model: LinearModel::new(0.0, 0.0),
            max_key: None,
            append_run: 0,
            append_only: false,
        }
    }

    /// Builds a node holding `pairs` (strictly ascending) in `capacity` slots: the model is
    /// trained to spread the keys evenly and each pair goes to its predicted slot, pushed right
    /// only as far as needed to keep order and leave room for the pairs after it.
    pub fn build(pairs: &[(Key, Value)], capacity: usize) -> Self {
        let capacity = capacity.max(pairs.len()).max(1);
        let mut node = Self::empty(capacity);
        if pairs.is_empty() {
            return node;
        }
        let model = LinearModel::fit(
            pairs
                .iter()
                .enumerate()
                .map(|(i, p)| (p.0, i as f64 * capacity as f64 / pairs.len() as f64)),
        )
        .expect("non-empty");
        node.model = model;
        node.place_by_model(pairs.iter().copied(), pairs.len());
        node
    }

    /// Lays out `count` ascending pairs at model-predicted slots into an all-gap node.
    fn place_by_model(&mut self, pairs: impl Iterator<Item = (Key, Value)>, count: usize) {
        let cap = self.capacity();
        let mut next_free = 0usize;
        for (i, (k, v)) in pairs.enumerate() {
            let remaining = count - i;
            let slot = self
                .model
                .predict_slot(k, cap)
                .max(next_free)
                .min(cap - remaining);
            self.keys[slot] = k;
            self.values[slot] = v;
            self.set_bit(slot);
            next_free = slot + 1;
        }
        self.num_keys = count;
        self.refill_all_gaps();
        self.max_key = self.last_key();
    }

    fn refill_all_gaps(&mut self) {
        let mut fill = Key::MAX;
        for slot in (0..self.capacity()).rev() {
            if self.is_occupied(slot) {
                fill = self.keys[slot];
            } else {
                self.keys[slot] = fill;
            }
        }
    }

    #[inline]
    pub fn capacity(&self) -> usize {
        self.keys.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.num_keys
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.num_keys == 0
    }

    pub fn density(&self) -> f64 {
        self.num_keys as f64 / self.capacity() as f64
    }

    pub fn model(&self) -> LinearModel {
        self.model
    }

    pub fn max_key(&self) -> Option<Key> {
        self.max_key
    }

    pub fn is_append_only(&self) -> bool {
        self.append_only
    }

    /// Bytes owned by the node's slot arrays.
    pub fn heap_bytes(&self) -> usize {
        self.keys.capacity() * 8 + self.values.capacity() * 8 + self.occupied.capacity() * 8
    }

    #[inline]
    pub fn is_occupied(&self, slot: usize) -> bool {
        self.occupied[slot >> 6] & (1u64 << (slot & 63)) != 0
    }

    #[inline]
    fn set_bit(&mut self, slot: usize) {
        self.occupied[slot >> 6] |= 1u64 << (slot & 63);
    }

    #[inline]
    fn clear_bit(&mut self, slot: usize) {
        self.occupied[slot >> 6] &= !(1u64 << (slot & 63));
    }

    /// First occupied slot at or after `slot`.
    fn next_occupied(&self, slot: usize) -> Option<usize> {
        let mut word = slot >> 6;
        if word >= self.occupied.len() {
            return None;
        }
        let mut bits = self.occupied[word] & (!0u64 << (slot & 63));
        loop {
            if bits != 0 {
                let s = (word << 6) + bits.trailing_zeros() as usize;
                return (s < self.capacity()).then_some(s);
            }
            word += 1;
            if word == self.occupied.len() {
                return None;
            }
            bits = self.occupied[word];
        }
    }

    /// Last occupied slot strictly before `slot`.
    fn prev_occupied(&self, slot: usize) -> Option<usize> {
        if slot == 0 {
            return None;
        }
        let s = slot - 1;
        let mut word = s >> 6;
        let shift = 63 - (s & 63);
        let mut bits = (self.occupied[word] << shift) >> shift;
        loop {
            if bits != 0 {
                return Some((word << 6) + 63 - bits.leading_zeros() as usize);
            }
            if word == 0 {
                return None;
            }
            word -= 1;
            bits = self.occupied[word];
        }
    }

    /// First gap at or after `slot`.
    fn next_gap(&self, slot: usize) -> Option<usize> {
        let mut word = slot >> 6;
        if word >= self.occupied.len() {
            return None;
        }
        let mut bits = !self.occupied[word] & (!0u64 << (slot & 63));
        loop {
            if bits != 0 {
                let s = (word << 6) + bits.trailing_zeros() as usize;
                return (s < self.capacity()).then_some(s);
            }
            word += 1;
            if word == self.occupied.len() {
                return None;
            }
            bits = !self.occupied[word];
        }
    }

    /// Last gap strictly before `slot`.
    fn prev_gap(&self, slot: usize) -> Option<usize> {
        if slot == 0 {
            return None;
        }
        let s = slot - 1;
        let mut word = s >> 6;
        let shift = 63 - (s & 63);
        let mut bits = (!self.occupied[word] << shift) >> shift;
        loop {
            if bits != 0 {
                return Some((word << 6) + 63 - bits.leading_zeros() as usize);
            }
            if word == 0 {
                return None;
            }
            word -= 1;
            bits = !self.occupied[word];
        }
    }

    fn last_key(&self) -> Option<Key> {
        self.prev_occupied(self.capacity()).map(|s| self.keys[s])
    }

    /// First slot whose key is `>= key`, probing outward from `start` with doubling radius and
    /// finishing with a binary search inside the bracket.
    #[inline]
    fn lower_bound_from(&self, start: usize, key: Key) -> (usize, u32) {
        let keys = &self.keys;
        let n = keys.len();
        let mut steps = 0u32;
        // invariant for the final binary search: keys[lo - 1] < key (or lo == 0), keys[hi] >= key (or hi == n)
        let (mut lo, mut hi);
        if keys[start] < key {
            let mut bound = 1usize;
            while start + bound < n && keys[start + bound] < key {
                bound <<= 1;
                steps += 1;
            }
            lo = start + (bound >> 1) + 1;
            hi = (start + bound).min(n);
        } else {
            let mut bound = 1usize;
            while bound <= start && keys[start - bound] >= key {
                bound <<= 1;
                steps += 1;
            }
            hi = start - (bound >> 1);
            lo = if bound <= start { start - bound + 1 } else { 0 };
        }
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            steps += 1;
            if keys[mid] < key {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        (lo, steps)
    }

    /// Exponential search from `start`.
    pub fn search_from(&self, start: usize, key: Key) -> SearchResult {
        let (pos, steps) = self.lower_bound_from(start.min(self.capacity() - 1), key);
        if pos < self.capacity() && self.keys[pos] == key {
            if let Some(slot) = self.next_occupied(pos) {
                if self.keys[slot] == key {
                    return SearchResult {
                        found: true,
                        slot,
                        steps,
                    };
                }
            }
        }
        SearchResult {
            found: false,
            slot: pos,
            steps,
        }
    }

    /// Model-predicted search.
    #[inline]
    pub fn find(&self, key: Key) -> SearchResult {
        self.search_from(self.model.predict_slot(key, self.capacity()), key)
    }

    #[inline]
    pub(crate) fn value_at(&self, slot: usize) -> Value {
        self.values[slot]
    }

    pub fn get(&self, key: Key) -> Option<Value> {
        let r = self.find(key);
        r.found.then(|| self.values[r.slot])
    }

    pub fn update(&mut self, key: Key, value: Value) -> bool {
        let r = self.find(key);
        if r.found {
            self.values[r.slot] = value;
        }
        r.found
    }

    /// Tracks the run of consecutive inserts above the node's maximum key and latches append-only
    /// mode once the run reaches `window`. Any other insert clears the mode.
    pub fn detect_append_only(&mut self, key: Key, window: usize) -> bool {
        let appends = self.max_key.is_none_or(|m| key > m);
        if appends {
            self.append_run += 1;
            if self.append_run >= window {
                self.append_only = true;
            }
        } else {
            self.append_run = 0;
            self.append_only = false;
        }
        self.append_only
    }

    /// Whether one more key would push density above `upper`.
    pub fn needs_room(&self, upper: f64) -> bool {
        (self.num_keys + 1) as f64 > upper * self.capacity() as f64
    }

    /// Inserts a pair. The node must have at least one gap. Returns `Err(slot)` if the key exists.
    pub fn insert(&mut self, key: Key, value: Value) -> Result<InsertEffect, usize> {
        debug_assert!(self.num_keys < self.capacity());
        let predicted = self.model.predict_slot(key, self.capacity());
        let r = self.search_from(predicted, key);
        if r.found {
            return Err(r.slot);
        }
        let p = r.slot;
        let run_end = self.next_occupied(p).unwrap_or(self.capacity());
        let (slot, shifted) = if run_end > p {
            // gap run [p, run_end): place at the prediction if it falls inside. Appends take the
            // first gap after the maximum, since the unscaled model clamps them to the last slot.
            let appending = self.append_only && run_end == self.capacity();
            let slot = if appending { p } else { predicted.clamp(p, run_end - 1) };
            self.put(slot, key, value);
            (slot, 0)
        } else {
            let right = self.next_gap(p);
            let left = self.prev_gap(p);
            match (left, right) {
                (Some(l), Some(r)) if p - l <= r - p => (self.shift_left_into(l, p, key, value), p - 1 - l),
                (_, Some(r)) => (self.shift_right_into(r, p, key, value), r - p),
                (Some(l), None) => (self.shift_left_into(l, p, key, value), p - 1 - l),
                (None, None) => unreachable!("insert into a full data node"),
            }
        };
        self.num_keys += 1;
        if self.max_key.is_none_or(|m| key > m) {
            self.max_key = Some(key);
        }
        Ok(InsertEffect {
            slot,
            shifted,
            steps: r.steps,
        })
    }

    /// Writes into gap `slot` and refreshes the copies held by the gaps immediately to its left.
    fn put(&mut self, slot: usize, key: Key, value: Value) {
        self.keys[slot] = key;
        self.values[slot] = value;
        self.set_bit(slot);
        self.refill_left_of(slot, key);
    }

    fn refill_left_of(&mut self, slot: usize, fill: Key) {
        let mut s = slot;
        while s > 0 && !self.is_occupied(s - 1) {
            s -= 1;
            self.keys[s] = fill;
        }
    }

    /// Moves `[p, gap)` one slot right and writes the new pair at `p`.
    fn shift_right_into(&mut self, gap: usize, p: usize, key: Key, value: Value) -> usize {
        self.keys.copy_within(p..gap, p + 1);
        self.values.copy_within(p..gap, p + 1);
        self.set_bit(gap);
        self.keys[p] = key;
        self.values[p] = value;
        p
    }

    /// Moves `(gap, p)` one slot left and writes the new pair at `p - 1`.
    fn shift_left_into(&mut self, gap: usize, p: usize, key: Key, value: Value) -> usize {
        self.keys.copy_within(gap + 1..p, gap);
        self.values.copy_within(gap + 1..p, gap);
        self.set_bit(gap);
        self.keys[p - 1] = key;
        self.values[p - 1] = value;
        p - 1
    }

    pub fn remove(&mut self, key: Key) -> Option<Value> {
        let r = self.find(key);
        if !r.found {
            return None;
        }
        let slot = r.slot;
        let value = self.values[slot];
        self.clear_bit(slot);
        let fill = if slot + 1 < self.capacity() {
            self.keys[slot + 1]
        } else {
            Key::MAX
        };
        self.keys[slot] = fill;
        self.refill_left_of(slot, fill);
        self.num_keys -= 1;
        if self.max_key == Some(key) {
            self.max_key = self.last_key();
        }
        Some(value)
    }

    /// Occupied pairs in slot order.
    pub fn iter(&self) -> impl Iterator<Item = (Key, Value)> + '_ {
        let mut next = self.next_occupied(0);
        std::iter::from_fn(move || {
            let s = next?;
            next = self.next_occupied(s + 1);
            Some((self.keys[s], self.values[s]))
        })
    }

    /// Occupied `(slot, key)` pairs.
    pub fn occupied_slots(&self) -> impl Iterator<Item = (usize, Key)> + '_ {
        let mut next = self.next_occupied(0);
        std::iter::from_fn(move || {
            let s = next?;
            next = self.next_occupied(s + 1);
            Some((s, self.keys[s]))
        })
    }

    pub fn pairs(&self) -> Vec<(Key, Value)> {
        self.iter().collect()
    }

    /// Grows capacity to `new_capacity`.
    ///
    /// In append-only mode the occupied slots stay where they are, the new space is appended on
    /// the right as gaps, and the model is left untouched. Otherwise the model is retrained for the
    /// new capacity and every pair is re-inserted at its predicted slot. Returns whether a retrain
    /// happened.
    pub fn expand(&mut self, new_capacity: usize) -> bool {
        debug_assert!(new_capacity >= self.capacity());
        if self.append_only {
            let words = new_capacity.div_ceil(64);
            self.keys.resize(new_capacity, Key::MAX);
            self.values.resize(new_capacity, 0);
            self.occupied.resize(words, 0);
            false
        } else {
            let pairs = self.pairs();
            let mut fresh = Self::build(&pairs, new_capacity);
            fresh.append_run = self.append_run;
            fresh.append_only = self.append_only;
            *self = fresh;
            true
        }
    }

    /// Rebuilds the node at `capacity` with a freshly trained model.
    pub fn rebuild(&mut self, capacity: usize) {
        let pairs = self.pairs();
        *self = Self::build(&pairs, capacity);
    }

    /// Largest distance between a key's predicted and actual slot.
    pub fn max_prediction_error(&self) -> usize {
        let cap = self.capacity();
        self.occupied_slots()
            .map(|(s, k)| self.model.predict_slot(k, cap).abs_diff(s))
            .max()
            .unwrap_or(0)
    }

    pub fn check_invariants(&self, upper_density: f64) -> Result<(), String> {
        let cap = self.capacity();
        if self.values.len() != cap || self.occupied.len() != cap.div_ceil(64) {
            return Err("slot arrays disagree on capacity".into());
        }
        let mut count = 0usize;
        let mut prev: Option<Key> = None;
        let mut fill = Key::MAX;
        for slot in (0..cap).rev() {
            if self.is_occupied(slot) {
                fill = self.keys[slot];
            } else if self.keys[slot] != fill {
                return Err(format!("gap {slot} holds {} instead of {fill}", self.keys[slot]));
            }
        }
        for (_, k) in self.occupied_slots() {
            if prev.is_some_and(|p| p >= k) {
                return Err(format!("keys out of order at {k}"));
            }
            prev = Some(k);
            count += 1;
        }
        if count != self.num_keys {
            return Err(format!("count {} but {} occupied slots", self.num_keys, count));
        }
        if self.num_keys as f64 > upper_density * cap as f64 + 1e-9 && cap >= MIN_CAPACITY {
            return Err(format!("density {} above bound {upper_density}", self.density()));
        }
        if self.max_key.is_some() && self.max_key < prev {
            return Err("max_key below the largest stored key".into());
        }
        Ok(())
    }
}

/// Exponential search over the node's slots starting at `start`: `(found, slot)` where `slot`
/// is the key's slot or, when absent, its insertion slot.
pub fn exponential_search(node: &DataNode, start: usize, key: Key) -> (bool, usize) {
    let r = node.search_from(start, key);
    (r.found, r.slot)
}

/// Splits a node's pairs at the median key into two freshly trained nodes laid out at
/// `density`.
pub fn split_node(node: &DataNode, density: f64) -> (DataNode, DataNode) {
    let pairs = node.pairs();
    let mid = pairs.len() / 2;
    let build = |p: &[(Key, Value)]| DataNode::build(p, capacity_for(p.len(), density));
    (build(&pairs[..mid]), build(&pairs[mid..]))
}

/// Slot count that lays `count` keys out at `density`.
pub fn capacity_for(count: usize, density: f64) -> usize {
    ((count as f64 / density).ceil() as usize).max(MIN_CAPACITY)
}
