//! Adaptive radix tree over 8-byte big-endian keys.
//!
//! Inner nodes come in four sizes (4, 16, 48 and 256 children) and are swapped for the next size
//! up when full, or the next size down once deletes leave them sparse. A subtree with a single
//! key is just a leaf (lazy expansion), and bytes shared by every key below a node are stored as
//! that node's prefix (path compression) instead of as a chain of one-child nodes.

use crate::index::{check_sorted, IndexError, Key, KvIndex, Value};

const KEY_LEN: usize = 8;

/// Order-preserving byte encoding of a key.
#[inline]
pub fn key_to_radix_bytes(key: Key) -> [u8; KEY_LEN] {
    key.to_be_bytes()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Node4,
    Node16,
    Node48,
    Node256,
    Leaf,
}

#[derive(Debug, Clone, Copy, Default)]
struct Header {
    prefix: [u8; KEY_LEN],
    prefix_len: u8,
    count: u16,
}

impl Header {
    fn with_prefix(bytes: &[u8]) -> Self {
        let mut prefix = [0u8; KEY_LEN];
        prefix[..bytes.len()].copy_from_slice(bytes);
        Self {
            prefix,
            prefix_len: bytes.len() as u8,
            count: 0,
        }
    }

    #[inline]
    fn prefix(&self) -> &[u8] {
        &self.prefix[..self.prefix_len as usize]
    }

    /// Number of prefix bytes matching `key` from `depth`.
    #[inline]
    fn matched(&self, key: &[u8; KEY_LEN], depth: usize) -> usize {
        self.prefix()
            .iter()
            .zip(&key[depth..])
            .take_while(|(a, b)| a == b)
            .count()
    }
}

#[derive(Debug)]
struct Leaf {
    key: Key,
    value: Value,
}

#[derive(Debug)]
struct Node4 {
    header: Header,
    keys: [u8; 4],
    children: [Option<Node>; 4],
}

#[derive(Debug)]
struct Node16 {
    header: Header,
    keys: [u8; 16],
    children: [Option<Node>; 16],
}

const EMPTY48: u8 = u8::MAX;

#[derive(Debug)]
struct Node48 {
    header: Header,
    /// Byte to child slot, `EMPTY48` when absent.
    index: [u8; 256],
    children: [Option<Node>; 48],
}

#[derive(Debug)]
struct Node256 {
    header: Header,
    children: [Option<Node>; 256],
}

#[derive(Debug)]
enum Node {
    Leaf(Box<Leaf>),
    N4(Box<Node4>),
    N16(Box<Node16>),
    N48(Box<Node48>),
    N256(Box<Node256>),
}

fn empty_children<const N: usize>() -> [Option<Node>; N] {
    std::array::from_fn(|_| None)
}

impl Node4 {
    fn new(header: Header) -> Self {
        Self {
            header,
            keys: [0; 4],
            children: empty_children(),
        }
    }
}

impl Node {
    fn leaf(key: Key, value: Value) -> Self {
        Node::Leaf(Box::new(Leaf { key, value }))
    }

    fn kind(&self) -> NodeKind {
        match self {
            Node::Leaf(_) => NodeKind::Leaf,
            Node::N4(_) => NodeKind::Node4,
            Node::N16(_) => NodeKind::Node16,
            Node::N48(_) => NodeKind::Node48,
            Node::N256(_) => NodeKind::Node256,
        }
    }

    fn header(&self) -> &Header {
        match self {
            Node::N4(n) => &n.header,
            Node::N16(n) => &n.header,
            Node::N48(n) => &n.header,
            Node::N256(n) => &n.header,
            Node::Leaf(_) => unreachable!("leaves have no header"),
        }
    }

    fn header_mut(&mut self) -> &mut Header {
        match self {
            Node::N4(n) => &mut n.header,
            Node::N16(n) => &mut n.header,
            Node::N48(n) => &mut n.header,
            Node::N256(n) => &mut n.header,
            Node::Leaf(_) => unreachable!("leaves have no header"),
        }
    }

    #[inline]
    fn find_child(&self, byte: u8) -> Option<&Node> {
        match self {
            Node::N4(n) => {
                let c = n.header.count as usize;
                n.keys[..c]
                    .iter()
                    .position(|&k| k == byte)
                    .and_then(|i| n.children[i].as_ref())
            }
            Node::N16(n) => {
                let c = n.header.count as usize;
                n.keys[..c]
                    .binary_search(&byte)
                    .ok()
                    .and_then(|i| n.children[i].as_ref())
            }
            Node::N48(n) => match n.index[byte as usize] {
                EMPTY48 => None,
                slot => n.children[slot as usize].as_ref(),
            },
            Node::N256(n) => n.children[byte as usize].as_ref(),
            Node::Leaf(_) => None,
        }
    }

    fn find_child_mut(&mut self, byte: u8) -> Option<&mut Node> {
        match self {
            Node::N4(n) => {
                let c = n.header.count as usize;
                let i = n.keys[..c].iter().position(|&k| k == byte)?;
                n.children[i].as_mut()
            }
            Node::N16(n) => {
                let c = n.header.count as usize;
                let i = n.keys[..c].binary_search(&byte).ok()?;
                n.children[i].as_mut()
            }
            Node::N48(n) => match n.index[byte as usize] {
                EMPTY48 => None,
                slot => n.children[slot as usize].as_mut(),
            },
            Node::N256(n) => n.children[byte as usize].as_mut(),
            Node::Leaf(_) => None,
        }
    }

    fn is_full(&self) -> bool {
        match self {
            Node::N4(n) => n.header.count == 4,
            Node::N16(n) => n.header.count == 16,
            Node::N48(n) => n.header.count == 48,
            Node::N256(_) | Node::Leaf(_) => false,
        }
    }

    /// Replaces a full node by the next larger kind holding the same children.
    fn grow(&mut self) {
        let old = std::mem::replace(self, Node::leaf(0, 0));
        *self = match old {
            Node::N4(mut n) => {
                let mut big = Box::new(Node16 {
                    header: n.header,
                    keys: [0; 16],
                    children: empty_children(),
                });
                let c = n.header.count as usize;
                big.keys[..c].copy_from_slice(&n.keys[..c]);
                for i in 0..c {
                    big.children[i] = n.children[i].take();
                }
                Node::N16(big)
            }
            Node::N16(mut n) => {
                let mut big = Box::new(Node48 {
                    header: n.header,
                    index: [EMPTY48; 256],
                    children: empty_children(),
                });
                for i in 0..n.header.count as usize {
                    big.index[n.keys[i] as usize] = i as u8;
                    big.children[i] = n.children[i].take();
                }
                Node::N48(big)
            }
            Node::N48(mut n) => {
                let mut big = Box::new(Node256 {
                    header: n.header,
                    children: empty_children(),
                });
                for b in 0..256 {
                    let slot = n.index[b];
                    if slot != EMPTY48 {
                        big.children[b] = n.children[slot as usize].take();
                    }
                }
                Node::N256(big)
            }
            other => other,
        };
    }

    /// Replaces a sparse node by the next smaller kind.
    fn shrink(&mut self) {
        let old = std::mem::replace(self, Node::leaf(0, 0));
        *self = match old {
            Node::N16(mut n) => {
                let mut small = Box::new(Node4::new(n.header));
                let c = n.header.count as usize;
                small.keys[..c].copy_from_slice(&n.keys[..c]);
                for i in 0..c {
                    small.children[i] = n.children[i].take();
                }
                Node::N4(small)
            }
            Node::N48(mut n) => {
                let mut small = Box::new(Node16 {
                    header: n.header,
                    keys: [0; 16],
                    children: empty_children(),
                });
                let mut c = 0;
                for b in 0..256 {
                    let slot = n.index[b];
                    if slot != EMPTY48 {
                        small.keys[c] = b as u8;
                        small.children[c] = n.children[slot as usize].take();
                        c += 1;
                    }
                }
                Node::N16(small)
            }
            Node::N256(mut n) => {
                let mut small = Box::new(Node48 {
                    header: n.header,
                    index: [EMPTY48; 256],
                    children: empty_children(),
                });
                let mut c = 0;
                for b in 0..256 {
                    if let Some(child) = n.children[b].take() {
                        small.index[b] = c as u8;
                        small.children[c] = Some(child);
                        c += 1;
                    }
                }
                Node::N48(small)
            }
            other => other,
        };
    }

    /// Adds a child under a byte that is not present yet, growing the node first if needed.
    fn add_child(&mut self, byte: u8, child: Node) {
        if self.is_full() {
            self.grow();
        }
        match self {
            Node::N4(n) => {
                let c = n.header.count as usize;
                let pos = n.keys[..c].iter().position(|&k| k > byte).unwrap_or(c);
                n.keys.copy_within(pos..c, pos + 1);
                for i in (pos..c).rev() {
                    n.children[i + 1] = n.children[i].take();
                }
                n.keys[pos] = byte;
                n.children[pos] = Some(child);
                n.header.count += 1;
            }
            Node::N16(n) => {
                let c = n.header.count as usize;
                let pos = n.keys[..c].partition_point(|&k| k < byte);
                n.keys.copy_within(pos..c, pos + 1);
                for i in (pos..c).rev() {
                    n.children[i + 1] = n.children[i].take();
                }
                n.keys[pos] = byte;
                n.children[pos] = Some(child);
                n.header.count += 1;
            }
            Node::N48(n) => {
                let slot = n.children.iter().position(Option::is_none).expect("not full");
                n.children[slot] = Some(child);
                n.index[byte as usize] = slot as u8;
                n.header.count += 1;
            }
            Node::N256(n) => {
                n.children[byte as usize] = Some(child);
                n.header.count += 1;
            }
            Node::Leaf(_) => unreachable!("cannot add a child to a leaf"),
        }
    }

    /// Removes the child under `byte`, returning it.
    fn remove_child(&mut self, byte: u8) -> Option<Node> {
        let removed = match self {
            Node::N4(n) => {
                let c = n.header.count as usize;
                let pos = n.keys[..c].iter().position(|&k| k == byte)?;
                let child = n.children[pos].take();
                n.keys.copy_within(pos + 1..c, pos);
                for i in pos + 1..c {
                    n.children[i - 1] = n.children[i].take();
                }
                n.header.count -= 1;
                child
            }
            Node::N16(n) => {
                let c = n.header.count as usize;
                let pos = n.keys[..c].binary_search(&byte).ok()?;
                let child = n.children[pos].take();
                n.keys.copy_within(pos + 1..c, pos);
                for i in pos + 1..c {
                    n.children[i - 1] = n.children[i].take();
                }
                n.header.count -= 1;
                child
            }
            Node::N48(n) => {
                let slot = n.index[byte as usize];
                if slot == EMPTY48 {
                    return None;
                }
                n.index[byte as usize] = EMPTY48;
                n.header.count -= 1;
                n.children[slot as usize].take()
            }
            Node::N256(n) => {
                let child = n.children[byte as usize].take();
                if child.is_some() {
                    n.header.count -= 1;
                }
                child
            }
            Node::Leaf(_) => None,
        };
        let count = self.header().count;
        match self.kind() {
            NodeKind::Node16 if count <= 3 => self.shrink(),
            NodeKind::Node48 if count <= 12 => self.shrink(),
            NodeKind::Node256 if count <= 37 => self.shrink(),
            _ => {}
        }
        removed
    }

    /// Collapses a one-child Node4 into its child, folding the prefix bytes into it.
    fn collapse_if_single(&mut self) {
        let Node::N4(n) = self else { return };
        if n.header.count != 1 {
            return;
        }
        let byte = n.keys[0];
        let parent_prefix = n.header;
        let mut child = n.children[0].take().expect("one child");
        if !matches!(child, Node::Leaf(_)) {
            let h = child.header_mut();
            let mut merged = Vec::with_capacity(KEY_LEN);
            merged.extend_from_slice(parent_prefix.prefix());
            merged.push(byte);
            merged.extend_from_slice(h.prefix());
            let count = h.count;
            *h = Header::with_prefix(&merged);
            h.count = count;
        }
        *self = child;
    }

    /// Children in byte order.
    fn for_each_child(&self, mut f: impl FnMut(u8, &Node)) {
        match self {
            Node::N4(n) => {
                for i in 0..n.header.count as usize {
                    f(n.keys[i], n.children[i].as_ref().expect("dense"));
                }
            }
            Node::N16(n) => {
                for i in 0..n.header.count as usize {
                    f(n.keys[i], n.children[i].as_ref().expect("dense"));
                }
            }
            Node::N48(n) => {
                for b in 0..256 {
                    let slot = n.index[b];
                    if slot != EMPTY48 {
                        if let Some(c) = n.children[slot as usize].as_ref() {
                            f(b as u8, c);
                        }
                    }
                }
            }
            Node::N256(n) => {
                for (b, c) in n.children.iter().enumerate() {
                    if let Some(c) = c {
                        f(b as u8, c);
                    }
                }
            }
            Node::Leaf(_) => {}
        }
    }

    fn heap_bytes(&self) -> usize {
        let own = match self {
            Node::Leaf(_) => std::mem::size_of::<Leaf>(),
            Node::N4(_) => std::mem::size_of::<Node4>(),
            Node::N16(_) => std::mem::size_of::<Node16>(),
            Node::N48(_) => std::mem::size_of::<Node48>(),
            Node::N256(_) => std::mem::size_of::<Node256>(),
        };
        let mut total = own;
        self.for_each_child(|_, c| total += c.heap_bytes());
        total
    }
}

fn insert_into(node: &mut Node, kb: &[u8; KEY_LEN], key: Key, value: Value, depth: usize) -> bool {
    if let Node::Leaf(leaf) = node {
        if leaf.key == key {
            return false;
        }
        let lb = key_to_radix_bytes(leaf.key);
        let common = lb[depth..].iter().zip(&kb[depth..]).take_while(|(a, b)| a == b).count();
        let split = depth + common;
        let old = std::mem::replace(
            node,
            Node::N4(Box::new(Node4::new(Header::with_prefix(&kb[depth..split])))),
        );
        node.add_child(lb[split], old);
        node.add_child(kb[split], Node::leaf(key, value));
        return true;
    }
    let header = *node.header();
    let plen = header.prefix_len as usize;
    let matched = header.matched(kb, depth);
    if matched < plen {
        // the new key leaves the compressed path part-way: split the prefix
        let mut fresh = Node4::new(Header::with_prefix(&header.prefix[..matched]));
        fresh.header.count = 0;
        let old_byte = header.prefix[matched];
        {
            let h = node.header_mut();
            let count = h.count;
            *h = Header::with_prefix(&header.prefix[matched + 1..plen]);
            h.count = count;
        }
        let old = std::mem::replace(node, Node::N4(Box::new(fresh)));
        node.add_child(old_byte, old);
        node.add_child(kb[depth + matched], Node::leaf(key, value));
        return true;
    }
    let depth = depth + plen;
    let byte = kb[depth];
    if let Some(child) = node.find_child_mut(byte) {
        return insert_into(child, kb, key, value, depth + 1);
    }
    node.add_child(byte, Node::leaf(key, value));
    true
}

/// Removes `key` below the inner node `node`. Returns the removed value.
fn delete_from(node: &mut Node, kb: &[u8; KEY_LEN], key: Key, depth: usize) -> Option<Value> {
    let header = node.header();
    let plen = header.prefix_len as usize;
    if header.matched(kb, depth) < plen {
        return None;
    }
    let depth = depth + plen;
    let byte = kb[depth];
    let child = node.find_child_mut(byte)?;
    let value = match child {
        Node::Leaf(leaf) => {
            if leaf.key != key {
                return None;
            }
            let value = leaf.value;
            node.remove_child(byte);
            value
        }
        inner => delete_from(inner, kb, key, depth + 1)?,
    };
    node.collapse_if_single();
    Some(value)
}

#[derive(Debug, Default)]
pub struct ArtIndex {
    root: Option<Node>,
    len: usize,
}

/// Node census for introspection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ArtCensus {
    pub node4: usize,
    pub node16: usize,
    pub node48: usize,
    pub node256: usize,
    pub leaves: usize,
}

impl ArtIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn search(&self, key: Key) -> Option<Value> {
        let kb = key_to_radix_bytes(key);
        let mut node = self.root.as_ref()?;
        let mut depth = 0;
        loop {
            match node {
                Node::Leaf(leaf) => return (leaf.key == key).then_some(leaf.value),
                inner => {
                    let h = inner.header();
                    let plen = h.prefix_len as usize;
                    if h.prefix() != &kb[depth..depth + plen] {
                        return None;
                    }
                    depth += plen;
                    node = inner.find_child(kb[depth])?;
                    depth += 1;
                }
            }
        }
    }

    fn search_mut(&mut self, key: Key) -> Option<&mut Leaf> {
        let kb = key_to_radix_bytes(key);
        let mut node = self.root.as_mut()?;
        let mut depth = 0;
        loop {
            match node {
                Node::Leaf(leaf) => return (leaf.key == key).then_some(leaf),
                inner => {
                    let h = inner.header();
                    let plen = h.prefix_len as usize;
                    if h.prefix() != &kb[depth..depth + plen] {
                        return None;
                    }
                    depth += plen;
                    node = inner.find_child_mut(kb[depth])?;
                    depth += 1;
                }
            }
        }
    }

    pub fn root_kind(&self) -> Option<NodeKind> {
        self.root.as_ref().map(Node::kind)
    }

    /// Prefix bytes stored in the root, if it is an inner node.
    pub fn root_prefix(&self) -> Option<Vec<u8>> {
        match &self.root {
            Some(n @ (Node::N4(_) | Node::N16(_) | Node::N48(_) | Node::N256(_))) => {
                Some(n.header().prefix().to_vec())
            }
            _ => None,
        }
    }

    pub fn census(&self) -> ArtCensus {
        fn walk(n: &Node, c: &mut ArtCensus) {
            match n.kind() {
                NodeKind::Leaf => c.leaves += 1,
                NodeKind::Node4 => c.node4 += 1,
                NodeKind::Node16 => c.node16 += 1,
                NodeKind::Node48 => c.node48 += 1,
                NodeKind::Node256 => c.node256 += 1,
            }
            n.for_each_child(|_, child| walk(child, c));
        }
        let mut c = ArtCensus::default();
        if let Some(r) = &self.root {
            walk(r, &mut c);
        }
        c
    }

    pub fn heap_bytes(&self) -> usize {
        self.root.as_ref().map_or(0, Node::heap_bytes)
    }
}

impl KvIndex for ArtIndex {
    fn name(&self) -> &'static str {
        "art"
    }

    fn insert(&mut self, key: Key, value: Value) -> Result<(), IndexError> {
        let kb = key_to_radix_bytes(key);
        let inserted = match &mut self.root {
            None => {
                self.root = Some(Node::leaf(key, value));
                true
            }
            Some(root) => insert_into(root, &kb, key, value, 0),
        };
        if inserted {
            self.len += 1;
            Ok(())
        } else {
            Err(IndexError::AlreadyExists(key))
        }
    }

    fn read(&self, key: Key) -> Option<Value> {
        self.search(key)
    }

    fn update(&mut self, key: Key, value: Value) -> Result<(), IndexError> {
        let leaf = self.search_mut(key).ok_or(IndexError::NotFound(key))?;
        leaf.value = value;
        Ok(())
    }

    fn delete(&mut self, key: Key) -> Result<(), IndexError> {
        let kb = key_to_radix_bytes(key);
        let removed = match &mut self.root {
            None => None,
            Some(Node::Leaf(leaf)) => {
                if leaf.key == key {
                    self.root = None;
                    Some(())
                } else {
                    None
                }
            }
            Some(root) => delete_from(root, &kb, key, 0).map(|_| ()),
        };
        removed.ok_or(IndexError::NotFound(key))?;
        self.len -= 1;
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
        for &(k, v) in pairs {
            self.insert(k, v)?;
        }
        Ok(())
    }

    fn entries(&self) -> Vec<(Key, Value)> {
        fn walk(n: &Node, out: &mut Vec<(Key, Value)>) {
            match n {
                Node::Leaf(l) => out.push((l.key, l.value)),
                inner => inner.for_each_child(|_, c| walk(c, out)),
            }
        }
        let mut out = Vec::with_capacity(self.len);
        if let Some(r) = &self.root {
            walk(r, &mut out);
        }
        out
    }

    fn check_invariants(&self) -> Result<(), String> {
        fn walk(n: &Node, path: &mut Vec<u8>, leaves: &mut usize) -> Result<(), String> {
            match n {
                Node::Leaf(l) => {
                    let kb = key_to_radix_bytes(l.key);
                    if kb[..path.len()] != path[..] {
                        return Err(format!("leaf {} under path {:?}", l.key, path));
                    }
                    *leaves += 1;
                    Ok(())
                }
                inner => {
                    let h = inner.header();
                    let (cap, min) = match inner.kind() {
                        NodeKind::Node4 => (4, 2),
                        NodeKind::Node16 => (16, 4),
                        NodeKind::Node48 => (48, 13),
                        _ => (256, 38),
                    };
                    let count = h.count as usize;
                    if count > cap || count < min {
                        return Err(format!("{:?} holds {count} children", inner.kind()));
                    }
                    let saved = path.len();
                    path.extend_from_slice(h.prefix());
                    if path.len() >= KEY_LEN {
                        return Err("prefix runs past the key length".into());
                    }
                    let mut seen = 0;
                    let mut last: Option<u8> = None;
                    let mut result = Ok(());
                    inner.for_each_child(|b, c| {
                        seen += 1;
                        if last.is_some_and(|l| l >= b) {
                            result = Err("child bytes out of order".to_string());
                        }
                        last = Some(b);
                        if result.is_ok() {
                            path.push(b);
                            result = walk(c, path, leaves);
                            path.pop();
                        }
                    });
                    result?;
                    if seen != count {
                        return Err(format!("header count {count} but {seen} children"));
                    }
                    if let Node::N48(n) = inner {
                        let used = n.index.iter().filter(|&&s| s != EMPTY48).count();
                        let filled = n.children.iter().filter(|c| c.is_some()).count();
                        if used != count || filled != count {
                            return Err("Node48 index and slots disagree".into());
                        }
                    }
                    path.truncate(saved);
                    Ok(())
                }
            }
        }
        let mut leaves = 0;
        if let Some(r) = &self.root {
            walk(r, &mut Vec::new(), &mut leaves)?;
        }
        if leaves != self.len {
            return Err(format!("len {} but {leaves} leaves", self.len));
        }
        let e = self.entries();
        if e.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err("traversal not sorted".into());
        }
        Ok(())
    }
}
