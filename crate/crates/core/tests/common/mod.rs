//! Independent reference models used by integration and acceptance tests.
//! Nothing here calls into the code under test except to read its state.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use prefixsim::engine::SimObserver;
use prefixsim::kvcache::{
    AnchorKind, AnchorSpec, CacheConfig, CounterSnapshot, EvictionPolicy, Evicted, KvCache, NodeView, Owner,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use prefixsim::scheduler::{ActiveSet, PriorityWeights, QueuedRequest, SchedulerConfig};
use prefixsim::workload::{RequestId, SegmentId, Token};

pub fn lcp(a: &[Token], b: &[Token]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Longest common prefix against any stored path.
pub fn brute_max_lcp(query: &[Token], stored: &[Vec<Token>]) -> usize {
    stored.iter().map(|s| lcp(query, s)).max().unwrap_or(0)
}

/// Distinct prefixes of a set of paths, counted by materializing them.
pub fn brute_trie_size(paths: &[Vec<Token>]) -> usize {
    let mut prefixes: BTreeSet<&[Token]> = BTreeSet::new();
    for p in paths {
        for end in 1..=p.len() {
            prefixes.insert(&p[..end]);
        }
    }
    prefixes.len()
}

/// Eviction ordering key written out per policy from node fields.
pub fn oracle_key(
    view: &NodeView,
    policy: EvictionPolicy,
    priorities: &HashMap<SegmentId, f64>,
) -> (u8, f64, u64, usize) {
    match policy {
        EvictionPolicy::Lru => (0, 0.0, view.last_access, view.id),
        EvictionPolicy::Lfu => (0, view.access_count as f64, view.last_access, view.id),
        EvictionPolicy::LruActive => {
            let active = matches!(
                &view.anchor,
                Some(a) if a.kind == AnchorKind::Reusable && a.counter_snapshot.active > 0
            );
            (u8::from(active), 0.0, view.last_access, view.id)
        }
        EvictionPolicy::Dart => match view.owner {
            Owner::Reusable(_) if view.protected => (2, 0.0, view.last_access, view.id),
            Owner::Reusable(seg) => (1, *priorities.get(&seg).unwrap_or(&0.0), view.last_access, view.id),
            _ => (0, 0.0, view.last_access, view.id),
        },
    }
}

fn key_lt(a: &(u8, f64, u64, usize), b: &(u8, f64, u64, usize)) -> bool {
    a.0.cmp(&b.0)
        .then(a.1.total_cmp(&b.1))
        .then(a.2.cmp(&b.2))
        .then(a.3.cmp(&b.3))
        .is_lt()
}

/// Brute-force eviction: repeatedly rescan every leaf and detach the one with
/// the smallest key until `k_free` tokens are freed. Returns detached IDs.
pub fn rescan_evict(cache: &KvCache, k_free: usize) -> Vec<usize> {
    let policy = cache.config().policy;
    let priorities = cache.dispatch_priorities().clone();
    let mut nodes: HashMap<usize, NodeView> = cache.views().into_iter().map(|v| (v.id, v)).collect();
    let mut freed = 0;
    let mut order = Vec::new();
    while freed < k_free {
        let mut best: Option<((u8, f64, u64, usize), usize)> = None;
        for v in nodes.values() {
            if v.ref_count > 0 || v.num_children > 0 || v.owner == Owner::System {
                continue;
            }
            let k = oracle_key(v, policy, &priorities);
            if best.as_ref().is_none_or(|(bk, _)| key_lt(&k, bk)) {
                best = Some((k, v.id));
            }
        }
        let Some((_, id)) = best else { break };
        let v = nodes.remove(&id).unwrap();
        freed += v.edge_len;
        if let Some(p) = v.parent.and_then(|p| nodes.get_mut(&p)) {
            p.num_children -= 1;
        }
        order.push(id);
    }
    order
}

/// Random anchors: sorted offsets with mixed kinds over segments 0..6.
pub fn random_anchors(rng: &mut ChaCha8Rng, len: usize) -> Vec<AnchorSpec> {
    let mut offsets: Vec<usize> = (0..rng.random_range(0..4)).map(|_| rng.random_range(0..=len)).collect();
    offsets.sort_unstable();
    offsets
        .into_iter()
        .map(|o| match rng.random_range(0..3) {
            0 => AnchorSpec::private(o),
            _ => AnchorSpec::reusable(o, rng.random_range(0..6)),
        })
        .collect()
}

/// A small cache (at most 50 paths, 512 tokens) after random inserts,
/// lookups and releases, with random protection and counters. Returns the
/// cache and an eviction request size.
pub fn random_eviction_instance(rng: &mut ChaCha8Rng, policy: EvictionPolicy) -> (KvCache, usize) {
    let config = CacheConfig { capacity_tokens: 512, policy, protect_budget: rng.random_range(0..5) };
    let mut c = KvCache::new(config);
    let mut live = Vec::new();
    for _ in 0..rng.random_range(5..50) {
        let len = rng.random_range(1..40);
        let p: Vec<Token> = (0..len).map(|_| rng.random_range(0..3)).collect();
        let anchors = random_anchors(rng, len);
        if let Ok(out) = c.insert_path(&p, &anchors) {
            live.push(out.pin);
        }
        if rng.random_bool(0.3) {
            let q: Vec<Token> = (0..rng.random_range(1..20)).map(|_| rng.random_range(0..3)).collect();
            c.match_prefix(&q);
        }
        if !live.is_empty() && rng.random_bool(0.6) {
            let pin = live.swap_remove(rng.random_range(0..live.len()));
            c.release_path(&pin).unwrap();
        }
    }
    let priorities: HashMap<SegmentId, f64> = (0..6).map(|s| (s, rng.random_range(0..4) as f64)).collect();
    c.set_protection(priorities);
    c.refresh_snapshots(
        &(0..6).map(|s| (s, CounterSnapshot { global: 1, active: rng.random_range(0..2), next: 0 })).collect(),
    );
    let k = rng.random_range(0..=c.resident_tokens());
    (c, k)
}

/// Random round: at most 40 pending requests over at most 10 segments,
/// a few active requests and a random small config.
pub fn random_round(rng: &mut ChaCha8Rng) -> (Vec<QueuedRequest>, Vec<Vec<SegmentId>>, SchedulerConfig) {
    let segments = rng.random_range(1..=10u32);
    let make_skeleton = |rng: &mut ChaCha8Rng| {
        let mut pool: Vec<SegmentId> = (0..segments).collect();
        let k = rng.random_range(0..=pool.len().min(4));
        (0..k).map(|_| pool.swap_remove(rng.random_range(0..pool.len()))).collect::<Vec<_>>()
    };
    let n = rng.random_range(0..=40);
    let pending = (0..n)
        .map(|i| QueuedRequest {
            id: 1000 - i as u64,
            // coarse times so arrival ties happen
            arrival_time: rng.random_range(0..10) as f64 * 0.1,
            skeleton: make_skeleton(rng),
            reorderable: rng.random_bool(0.8),
            sys_len: 8,
            segment_len: 16,
            suffix_len: 4,
        })
        .collect();
    let active = (0..rng.random_range(0..6)).map(|_| make_skeleton(rng)).collect();
    let budget = rng.random_range(1..=12);
    let kappa = rng.random_range(1..=3);
    let cfg = SchedulerConfig {
        dispatch_budget: budget,
        cold_quota: rng.random_range(0..=budget.min(3)),
        signature_size: kappa,
        front_width: rng.random_range(kappa..=4),
        ..Default::default()
    };
    (pending, active, cfg)
}

/// Active set holding the given skeletons under IDs disjoint from any pending ID.
pub fn active_set(skeletons: &[Vec<SegmentId>]) -> ActiveSet {
    let mut active = ActiveSet::new();
    for (i, s) in skeletons.iter().enumerate() {
        active.insert(10_000 + i as RequestId, s);
    }
    active
}

/// Straight-line reference of one scheduling round. Returns (hot IDs, cold IDs).
pub fn reference_round(
    pending: &[QueuedRequest],
    active: &[Vec<SegmentId>],
    cfg: &SchedulerConfig,
) -> (Vec<RequestId>, Vec<RequestId>) {
    let PriorityWeights { w_g, w_a, w_n } = cfg.weights;
    let count_in = |reqs: &mut dyn Iterator<Item = &Vec<SegmentId>>, r: SegmentId| {
        reqs.filter(|s| s.contains(&r)).count() as f64
    };
    let g = |r: SegmentId| count_in(&mut pending.iter().map(|q| &q.skeleton), r);
    let a = |r: SegmentId| count_in(&mut active.iter(), r);
    let p0 = |r: SegmentId| w_g * g(r) + w_a * a(r);

    // rank segments: higher priority first, lower ID on ties
    let ranked = |segs: &[SegmentId]| {
        let mut v = segs.to_vec();
        v.sort_by(|x, y| p0(*y).partial_cmp(&p0(*x)).unwrap().then(x.cmp(y)));
        v
    };

    let mut aligned = Vec::new();
    for q in pending {
        if !q.reorderable {
            aligned.push(q.skeleton.clone());
            continue;
        }
        let front: Vec<SegmentId> = ranked(&q.skeleton).into_iter().take(cfg.front_width).collect();
        let mut out = front.clone();
        for &s in &q.skeleton {
            if !front.contains(&s) {
                out.push(s);
            }
        }
        aligned.push(out);
    }

    let mut signatures = Vec::new();
    for skel in &aligned {
        let top: Vec<SegmentId> = ranked(skel).into_iter().take(cfg.signature_size).collect();
        signatures.push(skel.iter().copied().filter(|s| top.contains(s)).collect::<Vec<_>>());
    }

    let mut buckets: Vec<(Vec<SegmentId>, Vec<usize>)> = Vec::new();
    for (i, sig) in signatures.iter().enumerate() {
        match buckets.iter_mut().find(|(s, _)| s == sig) {
            Some((_, members)) => members.push(i),
            None => buckets.push((sig.clone(), vec![i])),
        }
    }

    let slots = cfg.dispatch_budget - cfg.cold_quota;
    let mut scored = Vec::new();
    for (order, (_, members)) in buckets.iter().enumerate() {
        let provisional: Vec<&Vec<SegmentId>> =
            members.iter().take(slots).map(|&i| &pending[i].skeleton).collect();
        let mut segs: Vec<SegmentId> = members.iter().flat_map(|&i| pending[i].skeleton.clone()).collect();
        segs.sort();
        segs.dedup();
        let mut total = 0.0;
        for &r in &segs {
            let n = provisional.iter().filter(|s| s.contains(&r)).count() as f64;
            total += w_g * g(r) + w_a * a(r) + w_n * n;
        }
        let utility = if segs.is_empty() { 0.0 } else { total / segs.len() as f64 };
        scored.push((cfg.alpha_size * members.len() as f64 + cfg.beta_util * utility, order));
    }
    scored.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));

    let mut hot = Vec::new();
    let mut taken = vec![false; pending.len()];
    for (_, order) in scored {
        for &i in &buckets[order].1 {
            if hot.len() < slots {
                hot.push(pending[i].id);
                taken[i] = true;
            }
        }
    }
    let mut rest: Vec<&QueuedRequest> = pending.iter().enumerate().filter(|(i, _)| !taken[*i]).map(|(_, q)| q).collect();
    rest.sort_by(|x, y| x.arrival_time.partial_cmp(&y.arrival_time).unwrap().then(x.id.cmp(&y.id)));
    let cold = rest.iter().take(cfg.cold_quota).map(|q| q.id).collect();
    (hot, cold)
}

/// Shadow model of resident token prefixes. Every inserted path keeps a
/// resident length; detaching a node truncates every path running through it.
#[derive(Default)]
pub struct ShadowPaths {
    paths: Vec<(Vec<Token>, usize)>,
    pub checked: usize,
    pub evicted_nodes: usize,
    pub mismatches: Vec<(RequestId, usize, usize)>,
}

impl ShadowPaths {
    pub fn hit(&self, query: &[Token]) -> usize {
        self.paths.iter().map(|(p, resident)| lcp(query, p).min(*resident)).max().unwrap_or(0)
    }
}

impl SimObserver for ShadowPaths {
    fn on_admission(&mut self, request: RequestId, path: &[Token], hit_tokens: usize) {
        let expected = self.hit(path);
        self.checked += 1;
        if expected != hit_tokens {
            self.mismatches.push((request, hit_tokens, expected));
        }
    }

    fn on_evictions(&mut self, evicted: &[Evicted]) {
        self.evicted_nodes += evicted.len();
        for e in evicted {
            let start = e.path.len() - e.edge_len;
            for (p, resident) in &mut self.paths {
                if p.len() >= e.path.len() && p[..e.path.len()] == e.path[..] {
                    *resident = (*resident).min(start);
                }
            }
        }
        self.paths.retain(|(_, r)| *r > 0);
    }

    fn on_inserted(&mut self, _request: RequestId, path: &[Token]) {
        self.paths.push((path.to_vec(), path.len()));
    }
}
