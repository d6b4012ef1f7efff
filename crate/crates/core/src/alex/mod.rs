//! Updatable learned index.
//!
//! Internal nodes hold a linear model that routes a key to one of their child slots; several
//! adjacent slots may point at the same child. Leaves are gapped-array [`DataNode`]s whose own
//! model predicts a slot, corrected by exponential search.
//!
//! Structural changes:
//! - a data node that would exceed the upper density bound is expanded (capacity × factor);
//! - once expansion would pass the maximum data-node capacity the node is split, sideways inside
//!   its parent when it owns several slots, otherwise after doubling the parent's slot array, or
//!   downwards into a new two-way internal node when the parent is already at its slot limit;
//! - a key beyond the root's trained domain grows the root to the right, pushing a new root on
//!   top once the root slot limit is reached.

mod model;
mod node;

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::index::{check_sorted, IndexError, Key, KvIndex, Value};

pub use model::{predict_slot, train_linear_model, LinearModel, ModelError};
pub use node::{capacity_for, exponential_search, split_node, DataNode, SearchResult, MIN_CAPACITY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlexConfig {
    /// Below `density_lower / expansion_factor` a data node is contracted after a delete.
    pub density_lower: f64,
    pub density_upper: f64,
    /// Density used when a data node is built from scratch (bulk load, split, contraction).
    pub initial_density: f64,
    pub expansion_factor: usize,
    /// Consecutive above-maximum inserts that switch a data node into append-only mode.
    pub append_window: usize,
    pub max_data_capacity: usize,
    /// Slot count of internal nodes created by bulk loading.
    pub fanout: usize,
    /// Upper bound on the slot array of any internal node.
    pub max_internal_slots: usize,
}

impl Default for AlexConfig {
    fn default() -> Self {
        Self {
            density_lower: 0.6,
            density_upper: 0.8,
            initial_density: 0.7,
            expansion_factor: 2,
            append_window: 32,
            max_data_capacity: 1 << 14,
            fanout: 16,
            max_internal_slots: 1 << 12,
        }
    }
}

impl AlexConfig {
    pub fn validate(&self) -> Result<(), String> {
        let d = (self.density_lower, self.initial_density, self.density_upper);
        if !(0.0 < d.0 && d.0 <= d.1 && d.1 <= d.2 && d.2 <= 1.0) {
            return Err(format!(
                "densities must satisfy 0 < lower <= initial <= upper <= 1, got {d:?}"
            ));
        }
        if self.expansion_factor < 2 {
            return Err("expansion factor must be at least 2".into());
        }
        if self.fanout < 2 || self.max_internal_slots < self.fanout {
            return Err("fanout must be >= 2 and <= max_internal_slots".into());
        }
        if self.max_data_capacity < 4 * MIN_CAPACITY {
            return Err(format!("max data capacity must be >= {}", 4 * MIN_CAPACITY));
        }
        if self.append_window == 0 {
            return Err("append window must be >= 1".into());
        }
        Ok(())
    }

    /// Most keys a bulk-loaded data node may hold.
    fn max_build_keys(&self) -> usize {
        (self.max_data_capacity as f64 * self.initial_density) as usize
    }
}

/// Counters describing the structural work done by the index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlexStats {
    pub model_retrains: u64,
    pub node_expansions: u64,
    pub node_splits: u64,
    pub appends_without_remodel: u64,
    pub exponential_search_steps: u64,
    pub root_expansions: u64,
    pub node_contractions: u64,
    pub shifted_slots: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct NodeId(u32);

#[derive(Debug, Clone)]
struct InternalNode {
    model: LinearModel,
    children: Vec<NodeId>,
}

impl InternalNode {
    #[inline]
    fn route(&self, key: Key) -> usize {
        self.model.route(key, self.children.len())
    }

    /// Contiguous slot range `[a, b)` owned by the child at `slot`.
    fn run_of(&self, slot: usize) -> (usize, usize) {
        let id = self.children[slot];
        let mut a = slot;
        while a > 0 && self.children[a - 1] == id {
            a -= 1;
        }
        let mut b = slot + 1;
        while b < self.children.len() && self.children[b] == id {
            b += 1;
        }
        (a, b)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Internal(InternalNode),
    Data(DataNode),
}

enum Room {
    Ready,
    Expanded,
    Split,
}

#[derive(Debug)]
pub struct AlexIndex {
    nodes: Vec<Node>,
    root: NodeId,
    len: usize,
    config: AlexConfig,
    stats: AlexStats,
    search_steps: Cell<u64>,
}

impl Default for AlexIndex {
    fn default() -> Self {
        Self::new(AlexConfig::default())
    }
}

impl AlexIndex {
    pub fn new(config: AlexConfig) -> Self {
        assert!(config.validate().is_ok(), "invalid ALEX config: {:?}", config.validate());
        let mut index = Self {
            nodes: Vec::new(),
            root: NodeId(0),
            len: 0,
            config,
            stats: AlexStats::default(),
            search_steps: Cell::new(0),
        };
        index.reset_empty();
        index
    }

    /// An empty root spanning the whole key space.
    fn reset_empty(&mut self) {
        self.nodes.clear();
        let fanout = self.config.fanout;
        let leaf = self.alloc(Node::Data(DataNode::empty(MIN_CAPACITY)));
        let model = LinearModel::new(fanout as f64 / 2f64.powi(64) * (1.0 - 1e-12), 0.0);
        self.root = self.alloc(Node::Internal(InternalNode {
            model,
            children: vec![leaf; fanout],
        }));
    }

    pub fn config(&self) -> &AlexConfig {
        &self.config
    }

    pub fn stats(&self) -> AlexStats {
        let mut s = self.stats.clone();
        s.exponential_search_steps += self.search_steps.get();
        s
    }

    fn alloc(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId((self.nodes.len() - 1) as u32)
    }

    #[inline]
    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0 as usize]
    }

    fn internal_mut(&mut self, id: NodeId) -> &mut InternalNode {
        match &mut self.nodes[id.0 as usize] {
            Node::Internal(n) => n,
            _ => unreachable!("expected internal node"),
        }
    }

    fn internal(&self, id: NodeId) -> &InternalNode {
        match self.node(id) {
            Node::Internal(n) => n,
            _ => unreachable!("expected internal node"),
        }
    }

    fn data_mut(&mut self, id: NodeId) -> &mut DataNode {
        match &mut self.nodes[id.0 as usize] {
            Node::Data(n) => n,
            _ => unreachable!("expected data node"),
        }
    }

    fn data(&self, id: NodeId) -> &DataNode {
        match self.node(id) {
            Node::Data(n) => n,
            _ => unreachable!("expected data node"),
        }
    }

    /// Walks to the data node for `key`, returning it with its parent and the routed slot.
    #[inline]
    fn descend(&self, key: Key) -> (NodeId, NodeId, usize) {
        let mut parent = self.root;
        let mut inner = self.internal(parent);
        loop {
            let slot = inner.route(key);
            let child = inner.children[slot];
            match self.node(child) {
                Node::Internal(n) => {
                    parent = child;
                    inner = n;
                }
                Node::Data(_) => return (child, parent, slot),
            }
        }
    }

    /// Model-based lookup.
    pub fn lookup(&self, key: Key) -> Option<Value> {
        let (leaf, _, _) = self.descend(key);
        let node = self.data(leaf);
        let r = node.find(key);
        self.search_steps.set(self.search_steps.get() + r.steps as u64);
        r.found.then(|| node.value_at(r.slot))
    }

    /// Number of nodes by kind: `(internal, data)`.
    pub fn node_counts(&self) -> (usize, usize) {
        self.nodes.iter().fold((0, 0), |(i, d), n| match n {
            Node::Internal(_) => (i + 1, d),
            Node::Data(_) => (i, d + 1),
        })
    }

    pub fn depth(&self) -> usize {
        fn go(idx: &AlexIndex, id: NodeId) -> usize {
            match idx.node(id) {
                Node::Internal(n) => {
                    1 + n.children.iter().map(|&c| go(idx, c)).max().unwrap_or(0)
                }
                _ => 1,
            }
        }
        go(self, self.root)
    }

    /// Heap bytes held by the index structure.
    pub fn heap_bytes(&self) -> usize {
        let mut total = self.nodes.capacity() * std::mem::size_of::<Node>();
        for n in &self.nodes {
            total += match n {
                Node::Internal(i) => i.children.capacity() * std::mem::size_of::<NodeId>(),
                Node::Data(d) => d.heap_bytes(),
            };
        }
        total
    }

    fn build_subtree(&mut self, pairs: &[(Key, Value)]) -> NodeId {
        let cfg = &self.config;
        if pairs.len() <= cfg.max_build_keys() {
            let cap = capacity_for(pairs.len(), cfg.initial_density).min(cfg.max_data_capacity);
            self.stats.model_retrains += u64::from(!pairs.is_empty());
            return self.alloc(Node::Data(DataNode::build(pairs, cap)));
        }
        self.build_internal(pairs)
    }

    /// Internal node partitioning `pairs` (non-empty) by equal key width over `fanout` slots.
    fn build_internal(&mut self, pairs: &[(Key, Value)]) -> NodeId {
        let fanout = self.config.fanout;
        let model = equal_width_model(pairs[0].0, pairs[pairs.len() - 1].0, fanout);
        let mut children = Vec::with_capacity(fanout);
        let mut start = 0;
        for slot in 0..fanout {
            let end = start + pairs[start..].partition_point(|p| model.route(p.0, fanout) <= slot);
            children.push(self.build_subtree(&pairs[start..end]));
            start = end;
        }
        debug_assert_eq!(start, pairs.len());
        self.alloc(Node::Internal(InternalNode { model, children }))
    }

    /// Grows the root until `key` falls inside its trained domain.
    fn extend_root_for(&mut self, key: Key) {
        loop {
            let root = self.internal(self.root);
            let slots = root.children.len();
            let root_model = root.model;
            if root_model.raw(key) < slots as f64 {
                return;
            }
            self.stats.root_expansions += 1;
            if slots * 2 <= self.config.max_internal_slots {
                let fresh = self.alloc(Node::Data(DataNode::empty(MIN_CAPACITY)));
                let root = self.internal_mut(self.root);
                root.children.extend(std::iter::repeat_n(fresh, slots));
            } else {
                // new root whose first slot covers the whole old domain
                let fanout = self.config.fanout;
                let mut model = root_model;
                model.scale(1.0 / slots as f64);
                let max_stored = self.max_key();
                if let Some(m) = max_stored {
                    let mut step = f64::EPSILON * model.raw(m).abs().max(1.0);
                    while model.route(m, fanout) != 0 {
                        model.intercept -= step;
                        step *= 2.0;
                    }
                }
                let fresh = self.alloc(Node::Data(DataNode::empty(MIN_CAPACITY)));
                let mut children = vec![fresh; fanout];
                children[0] = self.root;
                self.root = self.alloc(Node::Internal(InternalNode { model, children }));
            }
        }
    }

    fn max_key(&self) -> Option<Key> {
        let mut id = self.root;
        loop {
            match self.node(id) {
                Node::Internal(n) => {
                    // rightmost child holding keys
                    let mut best = None;
                    let mut last = None;
                    for &c in n.children.iter().rev() {
                        if last == Some(c) {
                            continue;
                        }
                        last = Some(c);
                        if self.subtree_nonempty(c) {
                            best = Some(c);
                            break;
                        }
                    }
                    id = best?;
                }
                Node::Data(d) => return d.max_key(),
            }
        }
    }

    fn subtree_nonempty(&self, id: NodeId) -> bool {
        match self.node(id) {
            Node::Data(d) => !d.is_empty(),
            Node::Internal(n) => n.children.iter().any(|&c| self.subtree_nonempty(c)),
        }
    }

    /// Makes room in the data node `leaf` for one more key.
    fn ensure_room(&mut self, leaf: NodeId, parent: NodeId, slot: usize) -> Room {
        let cfg = self.config.clone();
        let node = self.data(leaf);
        if !node.needs_room(cfg.density_upper) {
            // an append with no gap after the last slot would shift every earlier append, so
            // grow on the right while the size limit allows
            let cap = node.capacity();
            if node.is_append_only() && node.is_occupied(cap - 1) && cap < cfg.max_data_capacity {
                self.expand_data(leaf, (cap * cfg.expansion_factor).min(cfg.max_data_capacity));
                return Room::Expanded;
            }
            return Room::Ready;
        }
        let target = node.capacity() * cfg.expansion_factor;
        if target <= cfg.max_data_capacity || node.capacity() < MIN_CAPACITY * 4 {
            self.expand_data(leaf, target);
            return Room::Expanded;
        }
        if self.split_data(leaf, parent, slot) {
            Room::Split
        } else {
            // keys the models cannot separate: grow past the size limit instead
            self.expand_data(leaf, target);
            Room::Expanded
        }
    }

    fn expand_data(&mut self, leaf: NodeId, capacity: usize) {
        let retrained = self.data_mut(leaf).expand(capacity);
        self.stats.node_expansions += 1;
        self.stats.model_retrains += u64::from(retrained);
    }

    /// Splits a full data node. Returns false when the keys cannot be separated.
    fn split_data(&mut self, leaf: NodeId, parent: NodeId, slot: usize) -> bool {
        let (mut a, mut b) = self.internal(parent).run_of(slot);
        if b - a < 2 && self.internal(parent).children.len() * 2 <= self.config.max_internal_slots
        {
            let p = self.internal_mut(parent);
            p.model.scale(2.0);
            p.children = p.children.iter().flat_map(|&c| [c, c]).collect();
            (a, b) = (2 * a, 2 * b);
        }
        if b - a >= 2 {
            self.split_sideways(leaf, parent, a, b)
        } else {
            self.split_downwards(leaf, parent, a)
        }
    }

    fn split_sideways(&mut self, leaf: NodeId, parent: NodeId, a: usize, b: usize) -> bool {
        let pairs = self.data(leaf).pairs();
        let p = self.internal(parent);
        let median = pairs[pairs.len() / 2].0;
        let boundary = p.route(median).clamp(a + 1, b - 1);
        let cut = pairs.partition_point(|kv| p.route(kv.0) < boundary);
        let density = self.config.initial_density;
        let upper = self.config.density_upper;
        let max_cap = self.config.max_data_capacity;
        // a lopsided cut may leave one side too dense for the size limit; it then grows past it
        let build = |part: &[(Key, Value)]| {
            let floor = (part.len() as f64 / upper).ceil() as usize;
            DataNode::build(part, capacity_for(part.len(), density).min(max_cap).max(floor))
        };
        let left = build(&pairs[..cut]);
        let right = build(&pairs[cut..]);
        *self.data_mut(leaf) = left;
        let right_id = self.alloc(Node::Data(right));
        let p = self.internal_mut(parent);
        for c in &mut p.children[boundary..b] {
            *c = right_id;
        }
        self.stats.node_splits += 1;
        self.stats.model_retrains += 2;
        true
    }

    fn split_downwards(&mut self, leaf: NodeId, parent: NodeId, slot: usize) -> bool {
        let pairs = self.data(leaf).pairs();
        let Some(model) = median_router(&pairs) else {
            return false;
        };
        let mid = pairs.len() / 2;
        let density = self.config.initial_density;
        let left = DataNode::build(&pairs[..mid], capacity_for(mid, density));
        let right = DataNode::build(&pairs[mid..], capacity_for(pairs.len() - mid, density));
        *self.data_mut(leaf) = left;
        let right_id = self.alloc(Node::Data(right));
        let inner = self.alloc(Node::Internal(InternalNode {
            model,
            children: vec![leaf, right_id],
        }));
        self.internal_mut(parent).children[slot] = inner;
        self.stats.node_splits += 1;
        self.stats.model_retrains += 2;
        true
    }

    fn collect(&self, id: NodeId, out: &mut Vec<(Key, Value)>) {
        match self.node(id) {
            Node::Internal(n) => {
                let mut last = None;
                for &c in &n.children {
                    if last != Some(c) {
                        self.collect(c, out);
                        last = Some(c);
                    }
                }
            }
            Node::Data(d) => out.extend(d.iter()),
        }
    }
}

/// Routes `[lo, hi]` evenly over `fanout` slots.
fn equal_width_model(lo: Key, hi: Key, fanout: usize) -> LinearModel {
    let width = (hi - lo) as f64 + 1.0;
    let slope = fanout as f64 / width;
    LinearModel::new(slope, -(lo as f64) * slope)
}

/// Two-slot router sending keys below the median pair to slot 0 and the rest to slot 1.
fn median_router(pairs: &[(Key, Value)]) -> Option<LinearModel> {
    let mid = pairs.len() / 2;
    if mid == 0 {
        return None;
    }
    let (lo, below, median) = (pairs[0].0, pairs[mid - 1].0, pairs[mid].0);
    let slope = 1.0 / (median - lo) as f64;
    let mut model = LinearModel::new(slope, -(lo as f64) * slope);
    let step = f64::EPSILON * (slope * median as f64).abs().max(1.0);
    for _ in 0..64 {
        match (model.route(below, 2), model.route(median, 2)) {
            (0, 1) => return Some(model),
            (_, 0) => model.intercept += step,
            _ => model.intercept -= step,
        }
    }
    None
}

impl KvIndex for AlexIndex {
    fn name(&self) -> &'static str {
        "alex"
    }

    fn insert(&mut self, key: Key, value: Value) -> Result<(), IndexError> {
        self.extend_root_for(key);
        loop {
            let (leaf, parent, slot) = self.descend(key);
            if self.data(leaf).find(key).found {
                return Err(IndexError::AlreadyExists(key));
            }
            let window = self.config.append_window;
            self.data_mut(leaf).detect_append_only(key, window);
            match self.ensure_room(leaf, parent, slot) {
                Room::Split => continue,
                Room::Ready | Room::Expanded => {}
            }
            let node = self.data_mut(leaf);
            let append_only = node.is_append_only();
            let effect = node.insert(key, value).expect("checked absent");
            self.stats.exponential_search_steps += effect.steps as u64;
            self.stats.shifted_slots += effect.shifted as u64;
            self.stats.appends_without_remodel += u64::from(append_only);
            self.len += 1;
            return Ok(());
        }
    }

    fn read(&self, key: Key) -> Option<Value> {
        self.lookup(key)
    }

    fn update(&mut self, key: Key, value: Value) -> Result<(), IndexError> {
        let (leaf, _, _) = self.descend(key);
        if self.data_mut(leaf).update(key, value) {
            Ok(())
        } else {
            Err(IndexError::NotFound(key))
        }
    }

    fn delete(&mut self, key: Key) -> Result<(), IndexError> {
        let (leaf, _, _) = self.descend(key);
        let node = self.data_mut(leaf);
        node.remove(key).ok_or(IndexError::NotFound(key))?;
        self.len -= 1;
        let cfg = &self.config;
        let floor = cfg.density_lower / cfg.expansion_factor as f64;
        let node = self.data(leaf);
        if node.capacity() > MIN_CAPACITY * 2 && node.density() < floor {
            let cap = capacity_for(node.len(), cfg.initial_density);
            self.data_mut(leaf).rebuild(cap);
            self.stats.node_contractions += 1;
            self.stats.model_retrains += 1;
        }
        Ok(())
    }

    fn len(&self) -> usize {
        self.len
    }

    fn bulk_load(&mut self, pairs: &[(Key, Value)]) -> Result<(), IndexError> {
        check_sorted(pairs)?;
        if self.len != 0 {
            return Err(IndexError::NotEmpty(self.len));
        }
        if pairs.is_empty() {
            self.reset_empty();
            return Ok(());
        }
        self.nodes.clear();
        self.root = self.build_internal(pairs);
        self.len = pairs.len();
        Ok(())
    }

    fn entries(&self) -> Vec<(Key, Value)> {
        let mut out = Vec::with_capacity(self.len);
        self.collect(self.root, &mut out);
        out
    }

    fn check_invariants(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.root];
        let mut total = 0usize;
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                return Err(format!("node {id:?} reachable twice"));
            }
            match self.node(id) {
                Node::Internal(n) => {
                    if n.children.is_empty() || n.children.len() > self.config.max_internal_slots {
                        return Err(format!("internal node with {} slots", n.children.len()));
                    }
                    let mut runs = Vec::new();
                    for (i, &c) in n.children.iter().enumerate() {
                        if i == 0 || n.children[i - 1] != c {
                            if runs.contains(&c) {
                                return Err("child owns non-contiguous slots".into());
                            }
                            runs.push(c);
                        }
                    }
                    stack.extend(runs);
                }
                Node::Data(d) => {
                    d.check_invariants(self.config.density_upper)?;
                    total += d.len();
                    for (k, _) in d.iter() {
                        if self.descend(k).0 != id {
                            return Err(format!("key {k} not reachable by routing"));
                        }
                    }
                }
            }
        }
        if total != self.len {
            return Err(format!("len {} but data nodes hold {total}", self.len));
        }
        let entries = self.entries();
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err("in-order traversal not strictly increasing".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::OracleIndex;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    fn small_config() -> AlexConfig {
        AlexConfig {
            max_data_capacity: 256,
            max_internal_slots: 64,
            append_window: 8,
            ..AlexConfig::default()
        }
    }

    #[test]
    fn empty_and_single() {
        let mut a = AlexIndex::default();
        assert_eq!(a.read(7), None);
        a.insert(5, 50).unwrap();
        assert_eq!(a.read(5), Some(50));
        assert_eq!(a.insert(5, 99), Err(IndexError::AlreadyExists(5)));
        assert_eq!(a.read(5), Some(50));
        a.check_invariants().unwrap();
    }

    #[test]
    fn bulk_load_dense_identity() {
        let pairs: Vec<_> = (0..10_000u64).map(|k| (k, k)).collect();
        let mut a = AlexIndex::default();
        a.bulk_load(&pairs).unwrap();
        assert_eq!(a.read(5000), Some(5000));
        assert!(pairs.iter().all(|&(k, v)| a.read(k) == Some(v)));
        assert_eq!(a.read(10_000), None);
        a.check_invariants().unwrap();
        assert_eq!(a.entries(), pairs);
    }

    #[test]
    fn bulk_load_large_builds_deeper_levels() {
        let pairs: Vec<_> = (0..400_000u64).map(|k| (k * 3, k)).collect();
        let mut a = AlexIndex::default();
        a.bulk_load(&pairs).unwrap();
        assert!(a.depth() >= 3);
        for &(k, v) in pairs.iter().step_by(97) {
            assert_eq!(a.read(k), Some(v));
            assert_eq!(a.read(k + 1), None);
        }
        a.check_invariants().unwrap();
    }

    #[test]
    fn random_inserts_match_oracle() {
        let mut rng = SplitMix64::seed_from_u64(3);
        let mut a = AlexIndex::new(small_config());
        let mut o = OracleIndex::new();
        for _ in 0..10_000 {
            let k = rng.random_range(0..50_000u64);
            assert_eq!(a.insert(k, k ^ 7).is_ok(), o.insert(k, k ^ 7).is_ok());
        }
        a.check_invariants().unwrap();
        assert_eq!(a.entries(), o.entries());
        let s = a.stats();
        assert!(s.node_splits > 0 && s.node_expansions > 0, "{s:?}");
    }

    #[test]
    fn consecutive_appends_use_append_mode_and_root_growth() {
        let pairs: Vec<_> = (0..5_000u64).map(|k| (k, k)).collect();
        let mut a = AlexIndex::new(small_config());
        a.bulk_load(&pairs).unwrap();
        let warm = a.stats();
        for k in 5_000..60_000u64 {
            a.insert(k, k).unwrap();
        }
        a.check_invariants().unwrap();
        let s = a.stats();
        assert!(s.root_expansions > warm.root_expansions);
        let retrains = s.model_retrains - warm.model_retrains;
        let appends = s.appends_without_remodel - warm.appends_without_remodel;
        assert!(appends > 10 * retrains, "appends {appends} retrains {retrains}");
        assert!((0..60_000u64).all(|k| a.read(k) == Some(k)));
    }

    #[test]
    fn expansion_counter_tracks_density() {
        let mut a = AlexIndex::default();
        a.bulk_load(&[(0, 0), (1000, 0)]).unwrap();
        let before = a.stats().node_expansions;
        // keys stay inside one data node of the two-key tree
        for k in 1..40u64 {
            a.insert(k, k).unwrap();
        }
        assert!(a.stats().node_expansions > before);
        a.check_invariants().unwrap();
    }

    #[test]
    fn deletes_and_contraction() {
        let pairs: Vec<_> = (0..20_000u64).map(|k| (k * 2, k)).collect();
        let mut a = AlexIndex::new(small_config());
        a.bulk_load(&pairs).unwrap();
        for k in (0..20_000u64).filter(|k| k % 10 != 0) {
            a.delete(k * 2).unwrap();
        }
        assert_eq!(a.delete(2), Err(IndexError::NotFound(2)));
        assert_eq!(a.len(), 2_000);
        assert!(a.stats().node_contractions > 0);
        a.check_invariants().unwrap();
    }

    #[test]
    fn out_of_range_and_extreme_keys() {
        let mut a = AlexIndex::new(small_config());
        a.bulk_load(&(1000..2000u64).map(|k| (k, k)).collect::<Vec<_>>()).unwrap();
        for k in [0, 1, 999, u64::MAX, u64::MAX - 1, 1 << 63, 5_000_000] {
            a.insert(k, 1).unwrap();
        }
        a.check_invariants().unwrap();
        assert_eq!(a.read(u64::MAX), Some(1));
        assert_eq!(a.len(), 1007);
    }
}
