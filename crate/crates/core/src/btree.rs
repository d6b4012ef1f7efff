//! In-memory B+Tree with linked leaves.
//!
//! Nodes live in an arena and are addressed by index. Leaves hold up to `order` keys and inner
//! nodes up to `order` children; every node except the root keeps at least `order / 2`.

use crate::index::{check_sorted, IndexError, Key, KvIndex, Value};

pub const DEFAULT_ORDER: usize = 16;

type NodeId = usize;

#[derive(Debug)]
enum BNode {
    Leaf {
        keys: Vec<Key>,
        vals: Vec<Value>,
        next: Option<NodeId>,
    },
    /// `keys[i]` separates `children[i]` (keys below) from `children[i + 1]` (keys at or above).
    Inner { keys: Vec<Key>, children: Vec<NodeId> },
    Free,
}

impl BNode {
    fn size(&self) -> usize {
        match self {
            BNode::Leaf { keys, .. } => keys.len(),
            BNode::Inner { children, .. } => children.len(),
            BNode::Free => 0,
        }
    }
}

#[derive(Debug)]
pub struct BPlusTree {
    order: usize,
    nodes: Vec<BNode>,
    free: Vec<NodeId>,
    root: NodeId,
    len: usize,
    height: usize,
}

impl Default for BPlusTree {
    fn default() -> Self {
        Self::new()
    }
}

impl BPlusTree {
    pub fn new() -> Self {
        Self::with_order(DEFAULT_ORDER)
    }

    /// # Panics
    /// If `order` is odd or below 4.
    pub fn with_order(order: usize) -> Self {
        assert!(order >= 4 && order.is_multiple_of(2), "order must be even and at least 4");
        let mut t = Self {
            order,
            nodes: Vec::new(),
            free: Vec::new(),
            root: 0,
            len: 0,
            height: 1,
        };
        t.root = t.alloc(t.new_leaf());
        t
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of levels, 1 for a lone leaf.
    pub fn height(&self) -> usize {
        self.height
    }

    fn min_size(&self) -> usize {
        self.order / 2
    }

    fn new_leaf(&self) -> BNode {
        BNode::Leaf {
            keys: Vec::with_capacity(self.order + 1),
            vals: Vec::with_capacity(self.order + 1),
            next: None,
        }
    }

    fn alloc(&mut self, node: BNode) -> NodeId {
        match self.free.pop() {
            Some(id) => {
                self.nodes[id] = node;
                id
            }
            None => {
                self.nodes.push(node);
                self.nodes.len() - 1
            }
        }
    }

    fn release(&mut self, id: NodeId) {
        self.nodes[id] = BNode::Free;
        self.free.push(id);
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len() - self.free.len()
    }

    pub fn heap_bytes(&self) -> usize {
        let mut total = self.nodes.capacity() * std::mem::size_of::<BNode>()
            + self.free.capacity() * std::mem::size_of::<NodeId>();
        for n in &self.nodes {
            total += match n {
                BNode::Leaf { keys, vals, .. } => {
                    keys.capacity() * std::mem::size_of::<Key>()
                        + vals.capacity() * std::mem::size_of::<Value>()
                }
                BNode::Inner { keys, children } => {
                    keys.capacity() * std::mem::size_of::<Key>()
                        + children.capacity() * std::mem::size_of::<NodeId>()
                }
                BNode::Free => 0,
            };
        }
        total
    }

    fn find_leaf(&self, key: Key) -> NodeId {
        let mut id = self.root;
        loop {
            match &self.nodes[id] {
                BNode::Inner { keys, children } => {
                    id = children[keys.partition_point(|&s| s <= key)];
                }
                _ => return id,
            }
        }
    }

    /// Returns the separator and new right sibling when `id` split.
    fn insert_rec(
        &mut self,
        id: NodeId,
        key: Key,
        value: Value,
    ) -> Result<Option<(Key, NodeId)>, IndexError> {
        let order = self.order;
        let child = match &mut self.nodes[id] {
            BNode::Leaf { keys, vals, .. } => {
                let pos = match keys.binary_search(&key) {
                    Ok(_) => return Err(IndexError::AlreadyExists(key)),
                    Err(p) => p,
                };
                keys.insert(pos, key);
                vals.insert(pos, value);
                if keys.len() <= order {
                    return Ok(None);
                }
                return Ok(Some(self.split_leaf(id)));
            }
            BNode::Inner { keys, children } => children[keys.partition_point(|&s| s <= key)],
            BNode::Free => unreachable!("free node reachable"),
        };
        let Some((sep, right)) = self.insert_rec(child, key, value)? else {
            return Ok(None);
        };
        let BNode::Inner { keys, children } = &mut self.nodes[id] else { unreachable!() };
        let pos = keys.partition_point(|&s| s <= sep);
        keys.insert(pos, sep);
        children.insert(pos + 1, right);
        if children.len() <= order {
            return Ok(None);
        }
        Ok(Some(self.split_inner(id)))
    }

    fn split_leaf(&mut self, id: NodeId) -> (Key, NodeId) {
        let new_id = self.alloc(BNode::Free);
        let order = self.order;
        let BNode::Leaf { keys, vals, next } = &mut self.nodes[id] else { unreachable!() };
        let at = keys.len() / 2;
        let mut rk = Vec::with_capacity(order + 1);
        let mut rv = Vec::with_capacity(order + 1);
        rk.extend(keys.drain(at..));
        rv.extend(vals.drain(at..));
        let sep = rk[0];
        let right = BNode::Leaf {
            keys: rk,
            vals: rv,
            next: next.replace(new_id),
        };
        self.nodes[new_id] = right;
        (sep, new_id)
    }

    fn split_inner(&mut self, id: NodeId) -> (Key, NodeId) {
        let new_id = self.alloc(BNode::Free);
        let BNode::Inner { keys, children } = &mut self.nodes[id] else { unreachable!() };
        let left_children = children.len() / 2;
        let rc: Vec<NodeId> = children.drain(left_children..).collect();
        let mut rk: Vec<Key> = keys.drain(left_children - 1..).collect();
        let sep = rk.remove(0);
        self.nodes[new_id] = BNode::Inner { keys: rk, children: rc };
        (sep, new_id)
    }

    fn delete_rec(&mut self, id: NodeId, key: Key) -> Result<Value, IndexError> {
        let (idx, child) = match &mut self.nodes[id] {
            BNode::Leaf { keys, vals, .. } => {
                let pos = keys.binary_search(&key).map_err(|_| IndexError::NotFound(key))?;
                keys.remove(pos);
                return Ok(vals.remove(pos));
            }
            BNode::Inner { keys, children } => {
                let i = keys.partition_point(|&s| s <= key);
                (i, children[i])
            }
            BNode::Free => unreachable!("free node reachable"),
        };
        let value = self.delete_rec(child, key)?;
        if self.nodes[child].size() < self.min_size() {
            self.rebalance(id, idx);
        }
        Ok(value)
    }

    /// Restores the minimum size of child `idx` of `parent` by borrowing from or merging with a
    /// sibling.
    fn rebalance(&mut self, parent: NodeId, idx: usize) {
        let min = self.min_size();
        let (left, right, child) = {
            let BNode::Inner { children, .. } = &self.nodes[parent] else { unreachable!() };
            (
                idx.checked_sub(1).map(|i| children[i]),
                children.get(idx + 1).copied(),
                children[idx],
            )
        };
        if let Some(l) = left.filter(|&l| self.nodes[l].size() > min) {
            self.borrow_from_left(parent, idx, l, child);
        } else if let Some(r) = right.filter(|&r| self.nodes[r].size() > min) {
            self.borrow_from_right(parent, idx, child, r);
        } else if let Some(l) = left {
            self.merge(parent, idx - 1, l, child);
        } else if let Some(r) = right {
            self.merge(parent, idx, child, r);
        }
    }

    fn take(&mut self, id: NodeId) -> BNode {
        std::mem::replace(&mut self.nodes[id], BNode::Free)
    }

    fn borrow_from_left(&mut self, parent: NodeId, idx: usize, l: NodeId, c: NodeId) {
        let mut left = self.take(l);
        let mut child = self.take(c);
        let BNode::Inner { keys: pkeys, .. } = &mut self.nodes[parent] else { unreachable!() };
        match (&mut left, &mut child) {
            (BNode::Leaf { keys: lk, vals: lv, .. }, BNode::Leaf { keys: ck, vals: cv, .. }) => {
                ck.insert(0, lk.pop().expect("left above minimum"));
                cv.insert(0, lv.pop().expect("left above minimum"));
                pkeys[idx - 1] = ck[0];
            }
            (
                BNode::Inner { keys: lk, children: lc },
                BNode::Inner { keys: ck, children: cc },
            ) => {
                ck.insert(0, pkeys[idx - 1]);
                cc.insert(0, lc.pop().expect("left above minimum"));
                pkeys[idx - 1] = lk.pop().expect("left above minimum");
            }
            _ => unreachable!("siblings at different levels"),
        }
        self.nodes[l] = left;
        self.nodes[c] = child;
    }

    fn borrow_from_right(&mut self, parent: NodeId, idx: usize, c: NodeId, r: NodeId) {
        let mut right = self.take(r);
        let mut child = self.take(c);
        let BNode::Inner { keys: pkeys, .. } = &mut self.nodes[parent] else { unreachable!() };
        match (&mut child, &mut right) {
            (BNode::Leaf { keys: ck, vals: cv, .. }, BNode::Leaf { keys: rk, vals: rv, .. }) => {
                ck.push(rk.remove(0));
                cv.push(rv.remove(0));
                pkeys[idx] = rk[0];
            }
            (
                BNode::Inner { keys: ck, children: cc },
                BNode::Inner { keys: rk, children: rc },
            ) => {
                ck.push(pkeys[idx]);
                cc.push(rc.remove(0));
                pkeys[idx] = rk.remove(0);
            }
            _ => unreachable!("siblings at different levels"),
        }
        self.nodes[r] = right;
        self.nodes[c] = child;
    }

    /// Folds `children[sep + 1]` (`r`) into `children[sep]` (`l`).
    fn merge(&mut self, parent: NodeId, sep: usize, l: NodeId, r: NodeId) {
        let right = self.take(r);
        let BNode::Inner { keys: pkeys, children: pchildren } = &mut self.nodes[parent] else {
            unreachable!()
        };
        let sep_key = pkeys.remove(sep);
        pchildren.remove(sep + 1);
        match (&mut self.nodes[l], right) {
            (
                BNode::Leaf { keys: lk, vals: lv, next },
                BNode::Leaf { keys: rk, vals: rv, next: rnext },
            ) => {
                lk.extend(rk);
                lv.extend(rv);
                *next = rnext;
            }
            (
                BNode::Inner { keys: lk, children: lc },
                BNode::Inner { keys: rk, children: rc },
            ) => {
                lk.push(sep_key);
                lk.extend(rk);
                lc.extend(rc);
            }
            _ => unreachable!("siblings at different levels"),
        }
        self.nodes[r] = BNode::Free;
        self.free.push(r);
    }

}

impl KvIndex for BPlusTree {
    fn name(&self) -> &'static str {
        "btree"
    }

    fn insert(&mut self, key: Key, value: Value) -> Result<(), IndexError> {
        if let Some((sep, right)) = self.insert_rec(self.root, key, value)? {
            let mut keys = Vec::with_capacity(self.order);
            keys.push(sep);
            let mut children = Vec::with_capacity(self.order + 1);
            children.extend([self.root, right]);
            self.root = self.alloc(BNode::Inner { keys, children });
            self.height += 1;
        }
        self.len += 1;
        Ok(())
    }

    fn read(&self, key: Key) -> Option<Value> {
        let BNode::Leaf { keys, vals, .. } = &self.nodes[self.find_leaf(key)] else {
            unreachable!()
        };
        keys.binary_search(&key).ok().map(|i| vals[i])
    }

    fn update(&mut self, key: Key, value: Value) -> Result<(), IndexError> {
        let id = self.find_leaf(key);
        let BNode::Leaf { keys, vals, .. } = &mut self.nodes[id] else { unreachable!() };
        let i = keys.binary_search(&key).map_err(|_| IndexError::NotFound(key))?;
        vals[i] = value;
        Ok(())
    }

    fn delete(&mut self, key: Key) -> Result<(), IndexError> {
        self.delete_rec(self.root, key)?;
        self.len -= 1;
        if let BNode::Inner { children, .. } = &self.nodes[self.root] {
            if children.len() == 1 {
                let only = children[0];
                self.release(self.root);
                self.root = only;
                self.height -= 1;
            }
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
            return Ok(());
        }
        self.nodes.clear();
        self.free.clear();
        let order = self.order;
        // spreading evenly keeps every node at or above half full
        let even_chunks = |n: usize| -> Vec<usize> {
            let parts = n.div_ceil(order);
            (0..parts).map(|i| n / parts + usize::from(i < n % parts)).collect()
        };
        let mut level: Vec<(Key, NodeId)> = Vec::new();
        let mut start = 0;
        for size in even_chunks(pairs.len()) {
            let chunk = &pairs[start..start + size];
            start += size;
            let mut keys = Vec::with_capacity(order + 1);
            let mut vals = Vec::with_capacity(order + 1);
            keys.extend(chunk.iter().map(|p| p.0));
            vals.extend(chunk.iter().map(|p| p.1));
            let id = self.alloc(BNode::Leaf { keys, vals, next: None });
            if let Some(&(_, prev)) = level.last() {
                if let BNode::Leaf { next, .. } = &mut self.nodes[prev] {
                    *next = Some(id);
                }
            }
            level.push((chunk[0].0, id));
        }
        let mut height = 1;
        while level.len() > 1 {
            let mut upper = Vec::new();
            let mut start = 0;
            for size in even_chunks(level.len()) {
                let group = &level[start..start + size];
                start += size;
                let mut keys = Vec::with_capacity(order);
                let mut children = Vec::with_capacity(order + 1);
                keys.extend(group[1..].iter().map(|g| g.0));
                children.extend(group.iter().map(|g| g.1));
                let id = self.alloc(BNode::Inner { keys, children });
                upper.push((group[0].0, id));
            }
            level = upper;
            height += 1;
        }
        self.root = level[0].1;
        self.height = height;
        self.len = pairs.len();
        Ok(())
    }

    fn entries(&self) -> Vec<(Key, Value)> {
        let mut id = self.root;
        while let BNode::Inner { children, .. } = &self.nodes[id] {
            id = children[0];
        }
        let mut out = Vec::with_capacity(self.len);
        let mut cur = Some(id);
        while let Some(id) = cur {
            let BNode::Leaf { keys, vals, next } = &self.nodes[id] else { unreachable!() };
            out.extend(keys.iter().copied().zip(vals.iter().copied()));
            cur = *next;
        }
        out
    }

    fn check_invariants(&self) -> Result<(), String> {
        struct Walk<'a> {
            t: &'a BPlusTree,
            leaves: Vec<NodeId>,
            keys: usize,
            seen: Vec<bool>,
        }
        impl Walk<'_> {
            fn go(&mut self, id: NodeId, depth: usize, lo: Option<Key>, hi: Option<Key>) -> Result<(), String> {
                if std::mem::replace(&mut self.seen[id], true) {
                    return Err(format!("node {id} reachable twice"));
                }
                let t = self.t;
                let is_root = id == t.root;
                let n = &t.nodes[id];
                let size = n.size();
                if size > t.order || (!is_root && size < t.min_size()) {
                    return Err(format!("node {id} has size {size}"));
                }
                let in_range = |k: Key| lo.is_none_or(|l| k >= l) && hi.is_none_or(|h| k < h);
                match n {
                    BNode::Leaf { keys, vals, .. } => {
                        if depth != t.height {
                            return Err(format!("leaf {id} at depth {depth}, height {}", t.height));
                        }
                        if keys.len() != vals.len() {
                            return Err("leaf keys and values differ in length".into());
                        }
                        if keys.windows(2).any(|w| w[0] >= w[1]) || !keys.iter().all(|&k| in_range(k)) {
                            return Err(format!("leaf {id} keys unsorted or out of range"));
                        }
                        self.keys += keys.len();
                        self.leaves.push(id);
                    }
                    BNode::Inner { keys, children } => {
                        if is_root && children.len() < 2 {
                            return Err("inner root with one child".into());
                        }
                        if keys.len() + 1 != children.len() {
                            return Err(format!("inner {id} key/child count mismatch"));
                        }
                        if keys.windows(2).any(|w| w[0] >= w[1]) || !keys.iter().all(|&k| in_range(k)) {
                            return Err(format!("inner {id} separators unsorted or out of range"));
                        }
                        for (i, &c) in children.iter().enumerate() {
                            let clo = if i == 0 { lo } else { Some(keys[i - 1]) };
                            let chi = keys.get(i).copied().or(hi);
                            self.go(c, depth + 1, clo, chi)?;
                        }
                    }
                    BNode::Free => return Err(format!("free node {id} reachable")),
                }
                Ok(())
            }
        }
        let mut w = Walk {
            t: self,
            leaves: Vec::new(),
            keys: 0,
            seen: vec![false; self.nodes.len()],
        };
        w.go(self.root, 1, None, None)?;
        if w.keys != self.len {
            return Err(format!("len {} but {} keys in leaves", self.len, w.keys));
        }
        for pair in w.leaves.windows(2) {
            let BNode::Leaf { next, .. } = &self.nodes[pair[0]] else { unreachable!() };
            if *next != Some(pair[1]) {
                return Err(format!("leaf chain broken after {}", pair[0]));
            }
        }
        if let Some(&last) = w.leaves.last() {
            if let BNode::Leaf { next: Some(_), .. } = &self.nodes[last] {
                return Err("last leaf has a successor".into());
            }
        }
        if self.node_count() != w.seen.iter().filter(|&&s| s).count() {
            return Err("unreachable live nodes".into());
        }
        Ok(())
    }
}
