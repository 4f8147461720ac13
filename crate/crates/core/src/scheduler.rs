//! Queue-aware scheduling (QAS).
//!
//! Once per window the engine freezes the waiting set and calls
//! [`schedule_round`]. The round counts how often each reusable segment is
//! queued, active and about to be dispatched, front-aligns reorderable
//! skeletons around the hottest segments, groups requests into buckets by an
//! order-sensitive signature, and fills the dispatch budget from the
//! best-scoring buckets. A small cold lane always admits the oldest leftovers.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::kvcache::CounterSnapshot;
use crate::workload::{Request, RequestId, SegmentCatalog, SegmentId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorityWeights {
    pub w_g: f64,
    pub w_a: f64,
    pub w_n: f64,
}

impl Default for PriorityWeights {
    fn default() -> Self {
        Self { w_g: 1.0, w_a: 1e6, w_n: 1e5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    /// Window length in seconds.
    pub window_s: f64,
    /// Dispatch budget M per round.
    pub dispatch_budget: usize,
    /// Cold-lane quota.
    pub cold_quota: usize,
    pub front_width: usize,
    pub signature_size: usize,
    pub alpha_size: f64,
    pub beta_util: f64,
    pub weights: PriorityWeights,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            window_s: 0.05,
            dispatch_budget: 64,
            cold_quota: 2,
            front_width: 3,
            signature_size: 1,
            alpha_size: 1.0,
            beta_util: 0.5,
            weights: PriorityWeights::default(),
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.window_s > 0.0) {
            return Err(format!("window must be positive, got {}", self.window_s));
        }
        if self.dispatch_budget == 0 {
            return Err("dispatch budget must be at least 1".into());
        }
        if self.cold_quota > self.dispatch_budget {
            return Err(format!(
                "cold quota {} exceeds dispatch budget {}",
                self.cold_quota, self.dispatch_budget
            ));
        }
        if self.signature_size == 0 {
            return Err("signature size must be at least 1".into());
        }
        if self.front_width < self.signature_size {
            return Err(format!(
                "front width {} is smaller than signature size {}",
                self.front_width, self.signature_size
            ));
        }
        let w = &self.weights;
        if [w.w_g, w.w_a, w.w_n].iter().any(|x| !(*x >= 0.0)) {
            return Err("priority weights must be nonnegative".into());
        }
        Ok(())
    }

    pub fn hot_slots(&self) -> usize {
        self.dispatch_budget - self.cold_quota
    }
}

/// The scheduler's view of a waiting request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuedRequest {
    pub id: RequestId,
    pub arrival_time: f64,
    pub skeleton: Vec<SegmentId>,
    pub reorderable: bool,
    pub sys_len: usize,
    pub segment_len: usize,
    pub suffix_len: usize,
}

impl QueuedRequest {
    pub fn from_request(request: &Request, catalog: &SegmentCatalog) -> Self {
        Self {
            id: request.id,
            arrival_time: request.arrival_time,
            skeleton: request.skeleton.clone(),
            reorderable: request.reorderable,
            sys_len: request.sys_len,
            segment_len: catalog.chunk_tokens as usize,
            suffix_len: request.suffix_len,
        }
    }
}

/// Skeletons of requests admitted and not yet completed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActiveSet {
    members: BTreeMap<RequestId, Vec<SegmentId>>,
    counts: HashMap<SegmentId, u32>,
}

impl ActiveSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: RequestId, skeleton: &[SegmentId]) {
        if self.members.insert(id, skeleton.to_vec()).is_none() {
            for &s in skeleton {
                *self.counts.entry(s).or_default() += 1;
            }
        }
    }

    pub fn remove(&mut self, id: RequestId) -> bool {
        let Some(skeleton) = self.members.remove(&id) else { return false };
        for s in skeleton {
            if let Some(c) = self.counts.get_mut(&s) {
                *c -= 1;
                if *c == 0 {
                    self.counts.remove(&s);
                }
            }
        }
        true
    }

    pub fn active_count(&self, segment: SegmentId) -> u32 {
        self.counts.get(&segment).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: RequestId) -> bool {
        self.members.contains_key(&id)
    }
}

/// Queued and active counts per segment for one round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentCounters {
    pub g: HashMap<SegmentId, u32>,
    pub a: HashMap<SegmentId, u32>,
}

impl SegmentCounters {
    pub fn compute(pending: &[QueuedRequest], active: &ActiveSet) -> Self {
        let mut g: HashMap<SegmentId, u32> = HashMap::new();
        for q in pending {
            for &s in &q.skeleton {
                *g.entry(s).or_default() += 1;
            }
        }
        Self { g, a: active.counts.clone() }
    }

    pub fn global(&self, s: SegmentId) -> u32 {
        self.g.get(&s).copied().unwrap_or(0)
    }

    pub fn active(&self, s: SegmentId) -> u32 {
        self.a.get(&s).copied().unwrap_or(0)
    }

    /// Priority against an empty reference batch.
    pub fn base_priority(&self, weights: &PriorityWeights, s: SegmentId) -> f64 {
        segment_priority(weights, self.global(s), self.active(s), 0)
    }
}

/// Counts how many requests of a reference batch reference each segment.
pub fn batch_counts<'a, I>(batch: I) -> HashMap<SegmentId, u32>
where
    I: IntoIterator<Item = &'a [SegmentId]>,
{
    let mut n: HashMap<SegmentId, u32> = HashMap::new();
    for skeleton in batch {
        for &s in skeleton {
            *n.entry(s).or_default() += 1;
        }
    }
    n
}

pub fn segment_priority(weights: &PriorityWeights, g: u32, a: u32, n: u32) -> f64 {
    weights.w_g * g as f64 + weights.w_a * a as f64 + weights.w_n * n as f64
}

/// Orders segments by descending priority, lower ID first on ties.
fn by_priority<F: Fn(SegmentId) -> f64>(priority: &F) -> impl Fn(&SegmentId, &SegmentId) -> std::cmp::Ordering + '_ {
    move |x, y| priority(*y).total_cmp(&priority(*x)).then(x.cmp(y))
}

/// Moves the `front_width` highest-priority segments to the front in
/// descending priority; the rest keep their relative order.
pub fn front_align<F: Fn(SegmentId) -> f64>(
    skeleton: &[SegmentId],
    priority: F,
    front_width: usize,
    reorderable: bool,
) -> Vec<SegmentId> {
    if !reorderable {
        return skeleton.to_vec();
    }
    let mut ranked = skeleton.to_vec();
    ranked.sort_by(by_priority(&priority));
    ranked.truncate(front_width);
    let rest = skeleton.iter().filter(|s| !ranked.contains(s)).copied().collect::<Vec<_>>();
    ranked.extend(rest);
    ranked
}

/// Selects the `size` highest-priority segments of an aligned skeleton and
/// emits them in skeleton order.
pub fn make_signature<F: Fn(SegmentId) -> f64>(aligned: &[SegmentId], priority: F, size: usize) -> Vec<SegmentId> {
    let mut chosen = aligned.to_vec();
    chosen.sort_by(by_priority(&priority));
    chosen.truncate(size);
    aligned.iter().filter(|s| chosen.contains(s)).copied().collect()
}

/// Boundary offsets of a serialized prompt: end of the system prefix, end of
/// each reusable segment, end of the suffix.
pub fn export_anchor_offsets(sys_len: usize, segment_len: usize, num_segments: usize, suffix_len: usize) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(num_segments + 2);
    offsets.push(sys_len);
    for i in 1..=num_segments {
        offsets.push(sys_len + i * segment_len);
    }
    offsets.push(sys_len + num_segments * segment_len + suffix_len);
    offsets
}

/// Score of a bucket given its size and utility.
pub fn bucket_score(size: usize, utility: f64, alpha_size: f64, beta_util: f64) -> f64 {
    alpha_size * size as f64 + beta_util * utility
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Lane {
    Hot,
    Cold,
}

/// One admitted request with its exported hints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatched {
    pub id: RequestId,
    pub lane: Lane,
    pub signature: Vec<SegmentId>,
    /// Position within its bucket.
    pub rank: usize,
    /// Front-aligned skeleton used to serialize the prompt.
    pub aligned_skeleton: Vec<SegmentId>,
    pub anchor_offsets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    pub signature: Vec<SegmentId>,
    pub creation_order: usize,
    pub size: usize,
    pub utility: f64,
    pub score: f64,
}

/// Optional per-round trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round_index: u64,
    pub buckets: Vec<BucketReport>,
    pub hot: Vec<RequestId>,
    pub cold: Vec<RequestId>,
    pub priorities: BTreeMap<SegmentId, f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DispatchBatch {
    pub hot: Vec<Dispatched>,
    pub cold: Vec<Dispatched>,
    /// Priority of every segment with a nonzero counter, against the dispatched batch.
    pub dispatch_priorities: HashMap<SegmentId, f64>,
    /// Queued, active and dispatched counts per segment.
    pub counters: HashMap<SegmentId, CounterSnapshot>,
    /// Buckets in scan order.
    pub buckets: Vec<BucketReport>,
}

impl DispatchBatch {
    pub fn len(&self) -> usize {
        self.hot.len() + self.cold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hot.is_empty() && self.cold.is_empty()
    }

    /// Hot members first, then cold.
    pub fn members(&self) -> impl Iterator<Item = &Dispatched> {
        self.hot.iter().chain(self.cold.iter())
    }

    pub fn log(&self, round_index: u64) -> RoundLog {
        RoundLog {
            round_index,
            buckets: self.buckets.clone(),
            hot: self.hot.iter().map(|d| d.id).collect(),
            cold: self.cold.iter().map(|d| d.id).collect(),
            priorities: self.dispatch_priorities.iter().map(|(&k, &v)| (k, v)).collect(),
        }
    }
}

struct Bucket {
    signature: Vec<SegmentId>,
    /// Indices into `pending`, in pending order.
    members: Vec<usize>,
}

/// Runs one scheduling round over the frozen waiting set. Pure: the caller
/// moves admitted requests from pending into the active set.
pub fn schedule_round(pending: &[QueuedRequest], active: &ActiveSet, config: &SchedulerConfig) -> DispatchBatch {
    if pending.is_empty() {
        return DispatchBatch::default();
    }
    let w = &config.weights;
    let counters = SegmentCounters::compute(pending, active);
    let base = |s: SegmentId| counters.base_priority(w, s);

    let aligned: Vec<Vec<SegmentId>> = pending
        .iter()
        .map(|q| front_align(&q.skeleton, base, config.front_width, q.reorderable))
        .collect();

    let mut buckets: Vec<Bucket> = Vec::new();
    let mut index: HashMap<Vec<SegmentId>, usize> = HashMap::new();
    for (i, skel) in aligned.iter().enumerate() {
        let sig = make_signature(skel, base, config.signature_size);
        let b = *index.entry(sig.clone()).or_insert_with(|| {
            buckets.push(Bucket { signature: sig, members: Vec::new() });
            buckets.len() - 1
        });
        buckets[b].members.push(i);
    }

    let hot_slots = config.hot_slots();
    let mut reports: Vec<BucketReport> = buckets
        .iter()
        .enumerate()
        .map(|(order, b)| {
            let provisional = &b.members[..b.members.len().min(hot_slots)];
            let n_b = batch_counts(provisional.iter().map(|&i| pending[i].skeleton.as_slice()));
            let mut segs: Vec<SegmentId> =
                b.members.iter().flat_map(|&i| pending[i].skeleton.iter().copied()).collect();
            segs.sort_unstable();
            segs.dedup();
            let utility = if segs.is_empty() {
                0.0
            } else {
                segs.iter()
                    .map(|&s| {
                        segment_priority(w, counters.global(s), counters.active(s), n_b.get(&s).copied().unwrap_or(0))
                    })
                    .sum::<f64>()
                    / segs.len() as f64
            };
            BucketReport {
                signature: b.signature.clone(),
                creation_order: order,
                size: b.members.len(),
                utility,
                score: bucket_score(b.members.len(), utility, config.alpha_size, config.beta_util),
            }
        })
        .collect();
    reports.sort_by(|x, y| y.score.total_cmp(&x.score).then(x.creation_order.cmp(&y.creation_order)));

    let dispatch = |i: usize, rank: usize, lane: Lane, sig: &[SegmentId]| {
        let q = &pending[i];
        Dispatched {
            id: q.id,
            lane,
            signature: sig.to_vec(),
            rank,
            aligned_skeleton: aligned[i].clone(),
            anchor_offsets: export_anchor_offsets(q.sys_len, q.segment_len, q.skeleton.len(), q.suffix_len),
        }
    };

    let mut selected = vec![false; pending.len()];
    let mut hot = Vec::new();
    'scan: for r in &reports {
        for (rank, &i) in buckets[r.creation_order].members.iter().enumerate() {
            if hot.len() == hot_slots {
                break 'scan;
            }
            selected[i] = true;
            hot.push(dispatch(i, rank, Lane::Hot, &r.signature));
        }
    }

    let mut leftovers: Vec<usize> = (0..pending.len()).filter(|&i| !selected[i]).collect();
    leftovers.sort_by(|&x, &y| {
        pending[x].arrival_time.total_cmp(&pending[y].arrival_time).then(pending[x].id.cmp(&pending[y].id))
    });
    let sig_of = |i: usize| make_signature(&aligned[i], base, config.signature_size);
    let rank_of = |i: usize| {
        let sig = sig_of(i);
        buckets[index[&sig]].members.iter().position(|&m| m == i).unwrap_or(0)
    };
    let cold: Vec<Dispatched> = leftovers
        .into_iter()
        .take(config.cold_quota)
        .map(|i| dispatch(i, rank_of(i), Lane::Cold, &sig_of(i)))
        .collect();

    let by_id: HashMap<RequestId, usize> = pending.iter().enumerate().map(|(i, q)| (q.id, i)).collect();
    let n_dispatch = batch_counts(hot.iter().chain(cold.iter()).map(|d| pending[by_id[&d.id]].skeleton.as_slice()));

    let mut segments: Vec<SegmentId> =
        counters.g.keys().chain(counters.a.keys()).chain(n_dispatch.keys()).copied().collect();
    segments.sort_unstable();
    segments.dedup();
    let mut dispatch_priorities = HashMap::new();
    let mut snapshot = HashMap::new();
    for s in segments {
        let (g, a, n) = (counters.global(s), counters.active(s), n_dispatch.get(&s).copied().unwrap_or(0));
        dispatch_priorities.insert(s, segment_priority(w, g, a, n));
        snapshot.insert(s, CounterSnapshot { global: g, active: a, next: n });
    }

    DispatchBatch { hot, cold, dispatch_priorities, counters: snapshot, buckets: reports }
}
