//! Token-exact radix-tree KV cache.
//!
//! Nodes are stored in an arena indexed by creation order, so a [`NodeId`] is
//! stable for the lifetime of the node and doubles as the final tie-breaker in
//! eviction order. Active requests pin their root-to-leaf path through a
//! reference count; pinned nodes and system-prefix nodes are never evicted.
//!
//! Eviction pops a min-heap keyed by [`EvictKey`]. Keys go stale when a node is
//! touched after being pushed; stale entries are re-keyed at pop time and
//! pushed back before anything is reclaimed. Any change that can *lower* a key
//! (new dispatch priorities, a new protection set, new counter snapshots)
//! rebuilds the heap.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workload::{SegmentId, Token};

/// Arena index of a radix node; creation order.
pub type NodeId = usize;
pub const ROOT: NodeId = 0;

#[derive(Debug, Error, PartialEq)]
pub enum CacheError {
    #[error("insufficient KV capacity: need {needed} tokens, {available} reclaimable")]
    Capacity { needed: usize, available: usize },
    #[error("pin {0} is not live (double release?)")]
    NotPinned(u64),
    #[error("invalid anchors: {0}")]
    InvalidAnchors(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EvictionPolicy {
    #[serde(rename = "DART")]
    Dart,
    #[serde(rename = "LRU")]
    Lru,
    #[serde(rename = "LRU_ACTIVE")]
    LruActive,
    #[serde(rename = "LFU")]
    Lfu,
}

impl EvictionPolicy {
    pub const ALL: [EvictionPolicy; 4] =
        [EvictionPolicy::Dart, EvictionPolicy::Lru, EvictionPolicy::LruActive, EvictionPolicy::Lfu];

    pub fn name(self) -> &'static str {
        match self {
            EvictionPolicy::Dart => "DART",
            EvictionPolicy::Lru => "LRU",
            EvictionPolicy::LruActive => "LRU_ACTIVE",
            EvictionPolicy::Lfu => "LFU",
        }
    }
}

impl fmt::Display for EvictionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvictionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "DART" => Ok(EvictionPolicy::Dart),
            "LRU" => Ok(EvictionPolicy::Lru),
            "LRU_ACTIVE" => Ok(EvictionPolicy::LruActive),
            "LFU" => Ok(EvictionPolicy::Lfu),
            other => Err(format!("unknown policy '{other}' (expected DART, LRU, LRU_ACTIVE or LFU)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CacheConfig {
    /// KV budget in tokens.
    pub capacity_tokens: usize,
    pub policy: EvictionPolicy,
    /// Number of reusable anchors protected per round (DART only).
    pub protect_budget: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self { capacity_tokens: 200_000, policy: EvictionPolicy::Dart, protect_budget: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorKind {
    System,
    Reusable,
    Private,
}

/// Per-segment counters as of the latest scheduling round.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub global: u32,
    pub active: u32,
    pub next: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorMeta {
    pub kind: AnchorKind,
    pub segment_id: Option<SegmentId>,
    /// Offset of the anchor boundary in the serialized prompt.
    pub prompt_offset: usize,
    pub counter_snapshot: CounterSnapshot,
}

/// A boundary requested by the caller of [`KvCache::insert_path`]. The region
/// ending at `offset` (and starting at the previous anchor) belongs to `kind`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnchorSpec {
    pub offset: usize,
    pub kind: AnchorKind,
    pub segment_id: Option<SegmentId>,
}

impl AnchorSpec {
    pub fn system(offset: usize) -> Self {
        Self { offset, kind: AnchorKind::System, segment_id: None }
    }

    pub fn reusable(offset: usize, segment: SegmentId) -> Self {
        Self { offset, kind: AnchorKind::Reusable, segment_id: Some(segment) }
    }

    pub fn private(offset: usize) -> Self {
        Self { offset, kind: AnchorKind::Private, segment_id: None }
    }
}

/// Which prompt region a node's tokens belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Owner {
    System,
    Reusable(SegmentId),
    Private,
}

impl Owner {
    fn from_spec(spec: &AnchorSpec) -> Self {
        match (spec.kind, spec.segment_id) {
            (AnchorKind::System, _) => Owner::System,
            (AnchorKind::Reusable, Some(seg)) => Owner::Reusable(seg),
            // insert_path rejects reusable anchors without a segment
            (AnchorKind::Reusable, None) | (AnchorKind::Private, _) => Owner::Private,
        }
    }
}

/// Lexicographic eviction key; smaller keys are evicted first.
///
/// Under DART `class` is 0 for private nodes, 1 for unprotected reusable nodes
/// and 2 for protected anchors, and `priority` is the dispatch-batch score of
/// the owning segment (class 1 only, 0 otherwise). The baselines reuse the same
/// shape: LRU is `(0, 0, last)`, LFU is `(0, hits, last)` and LRU_ACTIVE is
/// `(active, 0, last)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvictKey {
    pub class: u8,
    pub priority: f64,
    pub last_access: u64,
}

impl EvictKey {
    pub fn new(class: u8, priority: f64, last_access: u64) -> Self {
        Self { class, priority, last_access }
    }

    /// The DART key for a node with the given ownership.
    pub fn dart(
        owner: Owner,
        protected: bool,
        last_access: u64,
        priorities: &HashMap<SegmentId, f64>,
    ) -> Self {
        match owner {
            Owner::Reusable(_) if protected => Self::new(2, 0.0, last_access),
            Owner::Reusable(seg) => Self::new(1, priorities.get(&seg).copied().unwrap_or(0.0), last_access),
            Owner::Private | Owner::System => Self::new(0, 0.0, last_access),
        }
    }
}

impl PartialEq for EvictKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for EvictKey {}

impl PartialOrd for EvictKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EvictKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.class
            .cmp(&other.class)
            .then(self.priority.total_cmp(&other.priority))
            .then(self.last_access.cmp(&other.last_access))
    }
}

#[derive(Debug, Clone)]
struct Node {
    edge: Vec<Token>,
    parent: Option<NodeId>,
    children: BTreeMap<Token, NodeId>,
    ref_count: u32,
    last_access: u64,
    access_count: u64,
    owner: Owner,
    anchor: Option<AnchorMeta>,
    protected: bool,
}

impl Node {
    fn root() -> Self {
        Self {
            edge: Vec::new(),
            parent: None,
            children: BTreeMap::new(),
            ref_count: 0,
            last_access: 0,
            access_count: 0,
            owner: Owner::System,
            anchor: None,
            protected: false,
        }
    }
}

/// Read-only view of a resident node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeView {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub edge_len: usize,
    pub num_children: usize,
    pub ref_count: u32,
    pub last_access: u64,
    pub access_count: u64,
    pub owner: Owner,
    pub anchor: Option<AnchorMeta>,
    pub protected: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixMatch {
    pub hit_length: usize,
    /// Nodes touched by the match, root excluded; the last one may be partial.
    pub nodes: Vec<NodeId>,
}

/// Handle for a pinned root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PinnedPath {
    pub pin_id: u64,
    pub leaf: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertOutcome {
    pub pin: PinnedPath,
    /// Tokens newly materialized by this insert.
    pub new_tokens: usize,
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvictOutcome {
    pub freed: usize,
    /// Detached nodes in detachment order.
    pub detached: Vec<NodeId>,
}

/// A detached node, recorded when eviction logging is enabled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evicted {
    pub node_id: NodeId,
    pub edge_len: usize,
    /// Full root-to-node token path of the detached node.
    pub path: Vec<Token>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct HeapEntry {
    key: EvictKey,
    node: NodeId,
}

#[derive(Debug, Clone)]
pub struct KvCache {
    config: CacheConfig,
    nodes: Vec<Option<Node>>,
    resident: usize,
    clock: u64,
    priorities: HashMap<SegmentId, f64>,
    protected: Vec<NodeId>,
    heap: BinaryHeap<Reverse<HeapEntry>>,
    pins: HashMap<u64, NodeId>,
    next_pin: u64,
    eviction_log: Option<Vec<Evicted>>,
}

impl KvCache {
    pub fn new(config: CacheConfig) -> Self {
        Self {
            config,
            nodes: vec![Some(Node::root())],
            resident: 0,
            clock: 0,
            priorities: HashMap::new(),
            protected: Vec::new(),
            heap: BinaryHeap::new(),
            pins: HashMap::new(),
            next_pin: 0,
            eviction_log: None,
        }
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn resident_tokens(&self) -> usize {
        self.resident
    }

    pub fn capacity_tokens(&self) -> usize {
        self.config.capacity_tokens
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn live_pins(&self) -> usize {
        self.pins.len()
    }

    pub fn dispatch_priorities(&self) -> &HashMap<SegmentId, f64> {
        &self.priorities
    }

    /// Current protection set, ordered by descending priority.
    pub fn protected_set(&self) -> &[NodeId] {
        &self.protected
    }

    /// Starts recording detached nodes (with their full token paths).
    pub fn enable_eviction_log(&mut self) {
        self.eviction_log.get_or_insert_with(Vec::new);
    }

    pub fn drain_eviction_log(&mut self) -> Vec<Evicted> {
        self.eviction_log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn node(&self, id: NodeId) -> &Node {
        self.nodes[id].as_ref().expect("attached node")
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.nodes[id].as_mut().expect("attached node")
    }

    fn is_attached(&self, id: NodeId) -> bool {
        self.nodes.get(id).is_some_and(Option::is_some)
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    pub fn view(&self, id: NodeId) -> Option<NodeView> {
        let n = self.nodes.get(id)?.as_ref()?;
        Some(NodeView {
            id,
            parent: n.parent,
            edge_len: n.edge.len(),
            num_children: n.children.len(),
            ref_count: n.ref_count,
            last_access: n.last_access,
            access_count: n.access_count,
            owner: n.owner,
            anchor: n.anchor.clone(),
            protected: n.protected,
        })
    }

    /// Views of all resident nodes (root excluded), by node ID.
    pub fn views(&self) -> Vec<NodeView> {
        (1..self.nodes.len()).filter_map(|id| self.view(id)).collect()
    }

    pub fn edge(&self, id: NodeId) -> Option<&[Token]> {
        self.nodes.get(id)?.as_ref().map(|n| n.edge.as_slice())
    }

    /// Tokens from the root through the end of node `id`.
    pub fn path_tokens(&self, id: NodeId) -> Vec<Token> {
        let mut chain = Vec::new();
        let mut cur = Some(id);
        while let Some(c) = cur {
            chain.push(c);
            cur = self.node(c).parent;
        }
        chain.iter().rev().flat_map(|&c| self.node(c).edge.iter().copied()).collect()
    }

    /// A node can be reclaimed iff it is an unpinned, childless, non-system leaf.
    pub fn is_evictable(&self, id: NodeId) -> bool {
        if id == ROOT {
            return false;
        }
        match self.nodes.get(id).and_then(Option::as_ref) {
            Some(n) => n.ref_count == 0 && n.children.is_empty() && n.owner != Owner::System,
            None => false,
        }
    }

    /// The eviction key of node `id` under the configured policy.
    pub fn evict_key(&self, id: NodeId) -> EvictKey {
        let n = self.node(id);
        match self.config.policy {
            EvictionPolicy::Dart => EvictKey::dart(n.owner, n.protected, n.last_access, &self.priorities),
            EvictionPolicy::Lru => EvictKey::new(0, 0.0, n.last_access),
            EvictionPolicy::Lfu => EvictKey::new(0, n.access_count as f64, n.last_access),
            EvictionPolicy::LruActive => {
                let active = n
                    .anchor
                    .as_ref()
                    .is_some_and(|a| a.kind == AnchorKind::Reusable && a.counter_snapshot.active > 0);
                EvictKey::new(active as u8, 0.0, n.last_access)
            }
        }
    }

    /// Read-only longest exact-prefix match length.
    pub fn longest_prefix(&self, path: &[Token]) -> usize {
        let (len, _) = self.walk(path);
        len
    }

    fn walk(&self, path: &[Token]) -> (usize, Vec<NodeId>) {
        let mut pos = 0;
        let mut cur = ROOT;
        let mut touched = Vec::new();
        while pos < path.len() {
            let Some(&child) = self.node(cur).children.get(&path[pos]) else { break };
            let edge = &self.node(child).edge;
            let common = common_prefix(edge, &path[pos..]);
            touched.push(child);
            pos += common;
            if common < edge.len() {
                break;
            }
            cur = child;
        }
        (pos, touched)
    }

    /// Longest exact-prefix hit; refreshes recency and hit counts on the
    /// matched nodes without changing the tree shape.
    pub fn match_prefix(&mut self, path: &[Token]) -> PrefixMatch {
        let (hit_length, nodes) = self.walk(path);
        let now = self.tick();
        for &id in &nodes {
            let n = self.node_mut(id);
            n.last_access = now;
            n.access_count += 1;
        }
        PrefixMatch { hit_length, nodes }
    }

    fn effective_anchors(path_len: usize, anchors: &[AnchorSpec]) -> Result<Vec<AnchorSpec>, CacheError> {
        let mut prev = 0;
        let mut out = Vec::new();
        for a in anchors {
            if a.offset < prev {
                return Err(CacheError::InvalidAnchors("offsets must be nondecreasing".into()));
            }
            if a.offset > path_len {
                return Err(CacheError::InvalidAnchors(format!(
                    "offset {} beyond path length {path_len}",
                    a.offset
                )));
            }
            if a.kind == AnchorKind::Reusable && a.segment_id.is_none() {
                return Err(CacheError::InvalidAnchors("reusable anchor without segment".into()));
            }
            // zero-length regions carry no tokens and get no boundary
            if a.offset > prev {
                out.push(*a);
                prev = a.offset;
            }
        }
        Ok(out)
    }

    fn pin_chain(&mut self, leaf: NodeId) {
        let mut cur = leaf;
        while cur != ROOT {
            let n = self.node_mut(cur);
            n.ref_count += 1;
            cur = n.parent.expect("non-root has parent");
        }
    }

    fn unpin_chain(&mut self, leaf: NodeId) {
        let mut cur = leaf;
        while cur != ROOT {
            let n = self.node_mut(cur);
            n.ref_count -= 1;
            cur = n.parent.expect("non-root has parent");
        }
        if self.is_evictable(leaf) {
            self.push(leaf);
        }
    }

    fn push(&mut self, id: NodeId) {
        let key = self.evict_key(id);
        self.heap.push(Reverse(HeapEntry { key, node: id }));
    }

    /// Tokens that could be freed right now if every unpinned, non-system node
    /// were reclaimed.
    fn reclaimable_tokens(&self) -> usize {
        // a node is reclaimable iff its subtree holds no pins and it is not system-owned
        self.nodes
            .iter()
            .skip(1)
            .flatten()
            .filter(|n| n.ref_count == 0 && n.owner != Owner::System && !self.subtree_has_system(n))
            .map(|n| n.edge.len())
            .sum()
    }

    fn subtree_has_system(&self, n: &Node) -> bool {
        n.children.values().any(|&c| {
            let child = self.node(c);
            child.owner == Owner::System || self.subtree_has_system(child)
        })
    }

    /// Inserts `path`, splitting nodes so every effective anchor offset is a
    /// node boundary, and pins the full path. Evicts first when the new tokens
    /// do not fit; on failure the tree is left as it was apart from evictions.
    pub fn insert_path(&mut self, path: &[Token], anchors: &[AnchorSpec]) -> Result<InsertOutcome, CacheError> {
        let anchors = Self::effective_anchors(path.len(), anchors)?;
        let (matched, touched) = self.walk(path);
        let needed = path.len() - matched;
        if self.resident + needed > self.config.capacity_tokens {
            let guard = touched.last().copied();
            if let Some(g) = guard {
                self.pin_chain(g);
            }
            let shortfall = self.resident + needed - self.config.capacity_tokens;
            self.evict(shortfall);
            if let Some(g) = guard {
                self.unpin_chain(g);
            }
            if self.resident + needed > self.config.capacity_tokens {
                return Err(CacheError::Capacity {
                    needed,
                    available: self.config.capacity_tokens - self.resident + self.reclaimable_tokens(),
                });
            }
        }

        let now = self.tick();
        let before = self.resident;
        let mut pos = 0;
        let mut cur = ROOT;
        let mut nodes = Vec::new();
        let mut created = Vec::new();
        let next_cut = |from: usize| anchors.iter().map(|a| a.offset).find(|&o| o > from);
        while pos < path.len() {
            match self.node(cur).children.get(&path[pos]).copied() {
                Some(child) => {
                    let common = common_prefix(&self.node(child).edge, &path[pos..]);
                    let mut take = common;
                    if let Some(cut) = next_cut(pos) {
                        take = take.min(cut - pos);
                    }
                    let next = if take < self.node(child).edge.len() {
                        let upper = self.split(child, take);
                        created.push(upper);
                        upper
                    } else {
                        child
                    };
                    nodes.push(next);
                    pos += take;
                    cur = next;
                }
                None => {
                    let end = next_cut(pos).unwrap_or(path.len()).min(path.len());
                    let id = self.nodes.len();
                    self.nodes.push(Some(Node {
                        edge: path[pos..end].to_vec(),
                        parent: Some(cur),
                        children: BTreeMap::new(),
                        ref_count: 0,
                        last_access: now,
                        access_count: 1,
                        owner: Owner::Private,
                        anchor: None,
                        protected: false,
                    }));
                    self.node_mut(cur).children.insert(path[pos], id);
                    self.resident += end - pos;
                    created.push(id);
                    nodes.push(id);
                    pos = end;
                    cur = id;
                }
            }
        }

        let mut end = 0;
        for &id in &nodes {
            end += self.node(id).edge.len();
            let region = anchors.iter().find(|a| a.offset >= end);
            let boundary = anchors.iter().find(|a| a.offset == end).copied();
            let is_new = created.contains(&id);
            let n = self.node_mut(id);
            n.last_access = now;
            if is_new {
                n.owner = region.map(Owner::from_spec).unwrap_or(Owner::Private);
            }
            if n.anchor.is_none() {
                if let Some(a) = boundary {
                    n.anchor = Some(AnchorMeta {
                        kind: a.kind,
                        segment_id: a.segment_id,
                        prompt_offset: a.offset,
                        counter_snapshot: CounterSnapshot::default(),
                    });
                }
            }
        }
        debug_assert_eq!(self.resident - before, needed);

        let leaf = nodes.last().copied().unwrap_or(ROOT);
        self.pin_chain(leaf);
        let pin_id = self.next_pin;
        self.next_pin += 1;
        self.pins.insert(pin_id, leaf);
        Ok(InsertOutcome { pin: PinnedPath { pin_id, leaf }, new_tokens: needed, nodes })
    }

    /// Splits `child` after `at` tokens; returns the new upper node.
    fn split(&mut self, child: NodeId, at: usize) -> NodeId {
        let upper_id = self.nodes.len();
        let (parent, head, tail_first, ref_count, last_access, access_count, owner) = {
            let c = self.node(child);
            (
                c.parent.expect("split below root"),
                c.edge[..at].to_vec(),
                c.edge[at],
                c.ref_count,
                c.last_access,
                c.access_count,
                c.owner,
            )
        };
        let first = head[0];
        let mut children = BTreeMap::new();
        children.insert(tail_first, child);
        self.nodes.push(Some(Node {
            edge: head,
            parent: Some(parent),
            children,
            ref_count,
            last_access,
            access_count,
            owner,
            anchor: None,
            protected: false,
        }));
        self.node_mut(parent).children.insert(first, upper_id);
        let c = self.node_mut(child);
        c.edge.drain(..at);
        c.parent = Some(upper_id);
        upper_id
    }

    /// Releases a pin taken by [`KvCache::insert_path`].
    pub fn release_path(&mut self, pin: &PinnedPath) -> Result<(), CacheError> {
        let leaf = self.pins.remove(&pin.pin_id).ok_or(CacheError::NotPinned(pin.pin_id))?;
        self.unpin_chain(leaf);
        Ok(())
    }

    /// Installs the dispatch-batch priorities and recomputes the protection
    /// set: the `protect_budget` resident reusable anchors with the highest
    /// priority (ties by lower segment ID, then lower node ID).
    pub fn set_protection(&mut self, priorities: HashMap<SegmentId, f64>) -> Vec<NodeId> {
        self.priorities = priorities;
        for &id in &self.protected {
            if let Some(n) = self.nodes[id].as_mut() {
                n.protected = false;
            }
        }
        let mut anchors: Vec<(f64, SegmentId, NodeId)> = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(id, n)| {
                let n = n.as_ref()?;
                let a = n.anchor.as_ref()?;
                match (a.kind, a.segment_id) {
                    (AnchorKind::Reusable, Some(seg)) => {
                        Some((self.priorities.get(&seg).copied().unwrap_or(0.0), seg, id))
                    }
                    _ => None,
                }
            })
            .collect();
        anchors.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        anchors.truncate(self.config.protect_budget);
        self.protected = anchors.into_iter().map(|(_, _, id)| id).collect();
        for i in 0..self.protected.len() {
            let id = self.protected[i];
            self.node_mut(id).protected = true;
        }
        self.rebuild_heap();
        self.protected.clone()
    }

    /// Copies the round's counters onto every reusable anchor.
    pub fn refresh_snapshots(&mut self, counters: &HashMap<SegmentId, CounterSnapshot>) {
        for n in self.nodes.iter_mut().flatten() {
            if let Some(a) = n.anchor.as_mut() {
                if let (AnchorKind::Reusable, Some(seg)) = (a.kind, a.segment_id) {
                    a.counter_snapshot = counters.get(&seg).copied().unwrap_or_default();
                }
            }
        }
        if self.config.policy == EvictionPolicy::LruActive {
            self.rebuild_heap();
        }
    }

    fn rebuild_heap(&mut self) {
        let entries: Vec<_> = (1..self.nodes.len())
            .filter(|&id| self.is_evictable(id))
            .map(|id| Reverse(HeapEntry { key: self.evict_key(id), node: id }))
            .collect();
        self.heap = BinaryHeap::from(entries);
    }

    /// Reclaims at least `k_free` tokens, or everything reclaimable.
    pub fn evict(&mut self, k_free: usize) -> EvictOutcome {
        let mut freed = 0;
        let mut detached = Vec::new();
        while freed < k_free {
            if self.heap.is_empty() {
                self.rebuild_heap();
            }
            let Some(Reverse(HeapEntry { key: stored, node })) = self.heap.pop() else { break };
            if !self.is_evictable(node) {
                continue;
            }
            let current = self.evict_key(node);
            if stored != current {
                self.heap.push(Reverse(HeapEntry { key: current, node }));
                continue;
            }
            let parent = self.node(node).parent.expect("evictable node has parent");
            freed += self.detach(node);
            detached.push(node);
            if self.is_evictable(parent) {
                self.push(parent);
            }
        }
        EvictOutcome { freed, detached }
    }

    fn detach(&mut self, id: NodeId) -> usize {
        if self.eviction_log.is_some() {
            let path = self.path_tokens(id);
            let edge_len = self.node(id).edge.len();
            if let Some(log) = self.eviction_log.as_mut() {
                log.push(Evicted { node_id: id, edge_len, path });
            }
        }
        let node = self.nodes[id].take().expect("attached node");
        let parent = node.parent.expect("detach below root");
        self.node_mut(parent).children.remove(&node.edge[0]);
        if node.protected {
            self.protected.retain(|&p| p != id);
        }
        self.resident -= node.edge.len();
        node.edge.len()
    }

    /// Structural self-check used by tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut total = 0;
        for (id, n) in self.nodes.iter().enumerate() {
            let Some(n) = n else { continue };
            if id != ROOT {
                if n.edge.is_empty() {
                    return Err(format!("node {id} has an empty edge"));
                }
                let p = n.parent.ok_or(format!("node {id} has no parent"))?;
                if !self.is_attached(p) || self.node(p).children.get(&n.edge[0]) != Some(&id) {
                    return Err(format!("node {id} not linked from parent {p}"));
                }
                if self.node(p).ref_count < n.ref_count && p != ROOT {
                    return Err(format!("node {id} pinned more than its parent"));
                }
                total += n.edge.len();
            }
            for (&tok, &c) in &n.children {
                if !self.is_attached(c) {
                    return Err(format!("node {id} links detached child {c}"));
                }
                if self.node(c).edge[0] != tok {
                    return Err(format!("child {c} of {id} keyed by wrong token"));
                }
            }
        }
        if total != self.resident {
            return Err(format!("resident counter {} != recomputed {total}", self.resident));
        }
        Ok(())
    }

    /// Deterministic depth-first listing of the tree.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![(ROOT, 0usize)];
        while let Some((id, depth)) = stack.pop() {
            let n = self.node(id);
            if id == ROOT {
                out.push_str(&format!("root resident={}\n", self.resident));
            } else {
                let key = self.evict_key(id);
                let owner = match n.owner {
                    Owner::System => "sys".to_string(),
                    Owner::Private => "priv".to_string(),
                    Owner::Reusable(s) => format!("seg{s}"),
                };
                out.push_str(&format!(
                    "{}#{} len={} ref={} owner={}{} key=({},{},{})\n",
                    "  ".repeat(depth),
                    id,
                    n.edge.len(),
                    n.ref_count,
                    owner,
                    if n.protected { " protected" } else { "" },
                    key.class,
                    key.priority,
                    key.last_access
                ));
            }
            for &c in n.children.values().rev() {
                stack.push((c, depth + 1));
            }
        }
        out
    }
}

fn common_prefix(a: &[Token], b: &[Token]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}
