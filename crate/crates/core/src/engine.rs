//! Wave-based discrete-event simulator.
//!
//! Time advances in scheduling windows. At each boundary the engine retires
//! finished decodes, freezes the waiting set and, if the prefill server is
//! idle, runs one scheduling round and launches the dispatched requests as a
//! single prefill wave. A wave costs its uncached tokens divided by the
//! effective prefill rate; tokens shared by wave members are charged once
//! because each member is inserted into the cache before the next is matched.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kvcache::{AnchorSpec, CacheConfig, CacheError, EvictionPolicy, Evicted, KvCache, PinnedPath};
use crate::scheduler::{schedule_round, ActiveSet, Lane, QueuedRequest, RoundLog, SchedulerConfig};
use crate::workload::{serialize_with_skeleton, Request, RequestId, Token, Trace};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("request {request} needs {path_len} tokens but the cache holds {capacity}")]
    RequestTooLarge { request: RequestId, path_len: usize, capacity: usize },
    #[error("no progress possible at t={time}: {pending} requests wait and nothing is in flight")]
    Stalled { time: f64, pending: usize },
    #[error("percentile of an empty sample")]
    EmptySample,
    #[error("cache error: {0}")]
    Cache(#[from] CacheError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Aggregate prefill throughput in tokens/s.
    pub prefill_rate: f64,
    /// Aggregate decode throughput in tokens/s.
    pub decode_rate: f64,
    pub output_tokens: u32,
    pub decode_attenuation: bool,
    pub cache: CacheConfig,
    pub scheduler: SchedulerConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            prefill_rate: 32_000.0,
            decode_rate: 2_000.0,
            output_tokens: 32,
            decode_attenuation: false,
            cache: CacheConfig::default(),
            scheduler: SchedulerConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.prefill_rate > 0.0) {
            return Err(SimError::Config(format!("prefill_rate must be positive, got {}", self.prefill_rate)));
        }
        if !(self.decode_rate > 0.0) {
            return Err(SimError::Config(format!("decode_rate must be positive, got {}", self.decode_rate)));
        }
        if self.output_tokens == 0 {
            return Err(SimError::Config("output_tokens must be at least 1".into()));
        }
        self.scheduler.validate().map_err(SimError::Config)
    }
}

/// Prefill rate after decode interference. `completion_rate` is the recent
/// completed-request throughput in requests/s.
pub fn effective_prefill_rate(config: &SimConfig, completion_rate: f64) -> f64 {
    if !config.decode_attenuation {
        return config.prefill_rate;
    }
    let load = (completion_rate * config.output_tokens as f64 / config.decode_rate).clamp(0.0, 0.95);
    config.prefill_rate * (1.0 - load)
}

/// Nearest-rank percentile: the element at 1-based rank ceil(p/100 * n).
pub fn percentile(samples: &[f64], p: f64) -> Result<f64, SimError> {
    if samples.is_empty() {
        return Err(SimError::EmptySample);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Number of distinct tokens in a trie built from `paths`.
pub fn trie_size<P: AsRef<[Token]>>(paths: &[P]) -> usize {
    let mut sorted: Vec<&[Token]> = paths.iter().map(AsRef::as_ref).collect();
    sorted.sort_unstable();
    let mut total = 0;
    let mut prev: &[Token] = &[];
    for p in sorted {
        let shared = p.iter().zip(prev).take_while(|(a, b)| a == b).count();
        total += p.len() - shared;
        prev = p;
    }
    total
}

/// Distinct-token footprint of a trace's prompts in their original order.
pub fn working_set_tokens(trace: &Trace) -> usize {
    let paths: Vec<&[Token]> = trace.requests.iter().map(|r| r.token_path.as_slice()).collect();
    trie_size(&paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveRecord {
    pub wave_index: u64,
    pub members: Vec<RequestId>,
    pub launch_time: f64,
    pub duration: f64,
    pub uncached_tokens: usize,
    pub cached_tokens: usize,
    pub prefill_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestMetrics {
    pub id: RequestId,
    pub lane: Lane,
    pub wave_index: u64,
    pub arrival: f64,
    pub admit: f64,
    pub prefill_end: f64,
    pub first_token: f64,
    pub completion: f64,
    pub hit_tokens: usize,
    pub effective_tokens: usize,
    pub path_len: usize,
    pub reuse_len: usize,
    pub reuse_hit_tokens: usize,
}

impl RequestMetrics {
    pub fn ttft(&self) -> f64 {
        self.first_token - self.arrival
    }

    pub fn admission_wait(&self) -> f64 {
        self.admit - self.arrival
    }

    pub fn prefill_time(&self) -> f64 {
        self.prefill_end - self.admit
    }

    pub fn first_token_time(&self) -> f64 {
        self.first_token - self.prefill_end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub requests: usize,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    /// Completed requests per second from first arrival to last completion.
    pub throughput: f64,
    pub hit_rate: f64,
    pub reuse_hit_rate: f64,
    pub mean_wave_size: f64,
    pub extend_tokens_per_wave: f64,
    pub mean_prompt_tokens: f64,
    pub mean_reuse_tokens: f64,
    pub mean_admit_to_first_token: f64,
    pub waves: usize,
}

impl RunMetrics {
    pub fn from_requests(requests: &[RequestMetrics], waves: usize) -> Result<Self, SimError> {
        let ttft: Vec<f64> = requests.iter().map(RequestMetrics::ttft).collect();
        let n = requests.len() as f64;
        let sum = |f: fn(&RequestMetrics) -> usize| requests.iter().map(f).sum::<usize>() as f64;
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
        let first_arrival = requests.iter().map(|r| r.arrival).fold(f64::INFINITY, f64::min);
        let last_completion = requests.iter().map(|r| r.completion).fold(f64::NEG_INFINITY, f64::max);
        Ok(Self {
            requests: requests.len(),
            p50: percentile(&ttft, 50.0)?,
            p90: percentile(&ttft, 90.0)?,
            p95: percentile(&ttft, 95.0)?,
            p99: percentile(&ttft, 99.0)?,
            throughput: ratio(n, last_completion - first_arrival),
            hit_rate: ratio(sum(|r| r.hit_tokens), sum(|r| r.path_len)),
            reuse_hit_rate: ratio(sum(|r| r.reuse_hit_tokens), sum(|r| r.reuse_len)),
            mean_wave_size: ratio(n, waves as f64),
            extend_tokens_per_wave: ratio(sum(|r| r.effective_tokens), waves as f64),
            mean_prompt_tokens: ratio(sum(|r| r.path_len), n),
            mean_reuse_tokens: ratio(sum(|r| r.reuse_len), n),
            mean_admit_to_first_token: ratio(requests.iter().map(|r| r.first_token - r.admit).sum(), n),
            waves,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub metrics: RunMetrics,
    /// Per-request metrics ordered by request ID.
    pub requests: Vec<RequestMetrics>,
    pub waves: Vec<WaveRecord>,
    pub rounds: Vec<RoundLog>,
}

/// Hooks for replay oracles. Called in event order.
pub trait SimObserver {
    /// A member was matched against the cache just before its insertion.
    fn on_admission(&mut self, _request: RequestId, _path: &[Token], _hit_tokens: usize) {}
    /// Nodes detached while making room for the next insertion.
    fn on_evictions(&mut self, _evicted: &[Evicted]) {}
    /// A member's path is now resident and pinned.
    fn on_inserted(&mut self, _request: RequestId, _path: &[Token]) {}
}

struct NoopObserver;
impl SimObserver for NoopObserver {}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Completion {
    time: f64,
    id: RequestId,
}

impl Eq for Completion {}

impl Ord for Completion {
    // reversed so BinaryHeap pops the earliest completion
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.id.cmp(&self.id))
    }
}

impl PartialOrd for Completion {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Options beyond the config that do not change simulated behavior.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub record_rounds: bool,
    /// Report detached nodes with full paths to the observer. Slow.
    pub log_evictions: bool,
}

pub fn run_simulation(trace: &Trace, config: &SimConfig) -> Result<SimResult, SimError> {
    run_simulation_with(trace, config, RunOptions::default(), &mut NoopObserver)
}

pub fn run_simulation_with(
    trace: &Trace,
    config: &SimConfig,
    options: RunOptions,
    observer: &mut dyn SimObserver,
) -> Result<SimResult, SimError> {
    config.validate()?;
    let capacity = config.cache.capacity_tokens;
    if let Some(r) = trace.requests.iter().find(|r| r.path_len() > capacity) {
        return Err(SimError::RequestTooLarge { request: r.id, path_len: r.path_len(), capacity });
    }
    let mut sim = Simulator::new(trace, config, options);
    if options.log_evictions {
        sim.cache.enable_eviction_log();
    }
    sim.run(observer)
}

struct Simulator<'a> {
    trace: &'a Trace,
    config: &'a SimConfig,
    options: RunOptions,
    cache: KvCache,
    active: ActiveSet,
    pending: Vec<QueuedRequest>,
    by_id: HashMap<RequestId, &'a Request>,
    in_flight: BinaryHeap<Completion>,
    pins: HashMap<RequestId, PinnedPath>,
    recent_completions: VecDeque<f64>,
    server_free_at: f64,
    metrics: Vec<RequestMetrics>,
    waves: Vec<WaveRecord>,
    rounds: Vec<RoundLog>,
}

impl<'a> Simulator<'a> {
    fn new(trace: &'a Trace, config: &'a SimConfig, options: RunOptions) -> Self {
        Self {
            trace,
            config,
            options,
            cache: KvCache::new(config.cache.clone()),
            active: ActiveSet::new(),
            pending: Vec::new(),
            by_id: trace.requests.iter().map(|r| (r.id, r)).collect(),
            in_flight: BinaryHeap::new(),
            pins: HashMap::new(),
            recent_completions: VecDeque::new(),
            server_free_at: 0.0,
            metrics: Vec::with_capacity(trace.requests.len()),
            waves: Vec::new(),
            rounds: Vec::new(),
        }
    }

    fn run(mut self, observer: &mut dyn SimObserver) -> Result<SimResult, SimError> {
        let dt = self.config.scheduler.window_s;
        let requests = &self.trace.requests;
        let mut next_arrival = 0;
        let mut k: u64 = 1;
        let mut round_index = 0;
        loop {
            let now = k as f64 * dt;
            self.retire(now)?;
            while next_arrival < requests.len() && requests[next_arrival].arrival_time <= now {
                self.pending.push(QueuedRequest::from_request(&requests[next_arrival], &self.trace.catalog));
                next_arrival += 1;
            }

            if self.server_free_at <= now && !self.pending.is_empty() {
                let launched = self.launch_wave(now, round_index, observer)?;
                round_index += 1;
                if !launched && self.in_flight.is_empty() {
                    return Err(SimError::Stalled { time: now, pending: self.pending.len() });
                }
            }

            if next_arrival == requests.len() && self.pending.is_empty() && self.in_flight.is_empty() {
                break;
            }

            // skip boundaries where nothing can happen
            let mut wake = f64::INFINITY;
            if !self.pending.is_empty() {
                wake = self.server_free_at;
            } else if next_arrival < requests.len() {
                wake = requests[next_arrival].arrival_time.max(self.server_free_at);
            } else if let Some(c) = self.in_flight.peek() {
                wake = c.time;
            }
            let mut next = (wake / dt).ceil() as u64;
            if (next as f64) * dt < wake {
                next += 1;
            }
            k = next.max(k + 1);
        }

        self.metrics.sort_by_key(|m| m.id);
        let metrics = RunMetrics::from_requests(&self.metrics, self.waves.len())?;
        Ok(SimResult { metrics, requests: self.metrics, waves: self.waves, rounds: self.rounds })
    }

    /// Applies every completion due by `now`.
    fn retire(&mut self, now: f64) -> Result<(), SimError> {
        while let Some(c) = self.in_flight.peek().copied() {
            if c.time > now {
                break;
            }
            self.in_flight.pop();
            if let Some(pin) = self.pins.remove(&c.id) {
                self.cache.release_path(&pin)?;
            }
            self.active.remove(c.id);
            self.recent_completions.push_back(c.time);
        }
        Ok(())
    }

    fn completion_rate(&mut self, now: f64) -> f64 {
        while self.recent_completions.front().is_some_and(|&t| t <= now - 1.0) {
            self.recent_completions.pop_front();
        }
        self.recent_completions.len() as f64
    }

    /// Runs a scheduling round and launches its wave. Returns whether any
    /// request was admitted.
    fn launch_wave(&mut self, now: f64, round_index: u64, observer: &mut dyn SimObserver) -> Result<bool, SimError> {
        let batch = schedule_round(&self.pending, &self.active, &self.config.scheduler);
        if self.options.record_rounds {
            self.rounds.push(batch.log(round_index));
        }
        if self.config.cache.policy == EvictionPolicy::Dart {
            self.cache.set_protection(batch.dispatch_priorities.clone());
        }
        self.cache.refresh_snapshots(&batch.counters);

        let catalog = &self.trace.catalog;
        let mut admitted = Vec::new();
        for d in batch.members() {
            let req = self.by_id[&d.id];
            let path = serialize_with_skeleton(req.id, &d.aligned_skeleton, req.suffix_len, catalog);
            let offsets = &d.anchor_offsets;
            let mut anchors = Vec::with_capacity(offsets.len());
            anchors.push(AnchorSpec::system(offsets[0]));
            for (i, &seg) in d.aligned_skeleton.iter().enumerate() {
                anchors.push(AnchorSpec::reusable(offsets[i + 1], seg));
            }
            anchors.push(AnchorSpec::private(offsets[offsets.len() - 1]));

            let hit = self.cache.match_prefix(&path).hit_length;
            observer.on_admission(req.id, &path, hit);
            let inserted = self.cache.insert_path(&path, &anchors);
            let evicted = self.cache.drain_eviction_log();
            if !evicted.is_empty() {
                observer.on_evictions(&evicted);
            }
            match inserted {
                Ok(out) => {
                    observer.on_inserted(req.id, &path);
                    self.pins.insert(req.id, out.pin);
                    self.active.insert(req.id, &req.skeleton);
                    admitted.push((d.id, d.lane, hit, path.len()));
                }
                Err(CacheError::Capacity { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        if admitted.is_empty() {
            return Ok(false);
        }

        let ids: Vec<RequestId> = admitted.iter().map(|a| a.0).collect();
        self.pending.retain(|q| !ids.contains(&q.id));

        let uncached: usize = admitted.iter().map(|&(_, _, hit, len)| len - hit).sum();
        let cached: usize = admitted.iter().map(|&(_, _, hit, _)| hit).sum();
        let rate = effective_prefill_rate(self.config, self.completion_rate(now));
        let duration = uncached as f64 / rate;
        let prefill_end = now + duration;
        self.server_free_at = prefill_end;
        let step = admitted.len() as f64 / self.config.decode_rate;
        let first_token = prefill_end + step;
        let completion = first_token + (self.config.output_tokens - 1) as f64 * step;
        let wave_index = self.waves.len() as u64;

        for &(id, lane, hit, len) in &admitted {
            let req = self.by_id[&id];
            self.in_flight.push(Completion { time: completion, id });
            self.metrics.push(RequestMetrics {
                id,
                lane,
                wave_index,
                arrival: req.arrival_time,
                admit: now,
                prefill_end,
                first_token,
                completion,
                hit_tokens: hit,
                effective_tokens: len - hit,
                path_len: len,
                reuse_len: req.reuse_len,
                reuse_hit_tokens: hit.saturating_sub(req.sys_len).min(req.reuse_len),
            });
        }
        self.waves.push(WaveRecord {
            wave_index,
            members: ids,
            launch_time: now,
            duration,
            uncached_tokens: uncached,
            cached_tokens: cached,
            prefill_rate: rate,
        });
        Ok(true)
    }
}
