//! Segmented-prompt workload generation and trace I/O.
//!
//! A request prompt is serialized as
//! `[system prefix] ++ [segment r1] ++ ... ++ [segment rm] ++ [private suffix]`.
//! Token IDs are synthesized so that a segment always serializes to the same
//! token run and private suffixes never collide across requests, which gives
//! exact-prefix reuse semantics without a tokenizer.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Token identifier in a serialized prompt path.
pub type Token = u64;
/// Reusable segment identity.
pub type SegmentId = u32;
/// Request sequence number.
pub type RequestId = u64;

const SYSTEM_TOKEN_BASE: Token = 1;
const SEGMENT_TOKEN_BASE: Token = 1 << 32;
const SUFFIX_TOKEN_BASE: Token = 1 << 62;
const SUFFIX_ID_SHIFT: u32 = 24;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("zipf domain error: need n >= 1 and alpha > 0 (n={n}, alpha={alpha})")]
    ZipfDomain { n: usize, alpha: f64 },
    #[error("invalid workload configuration: {0}")]
    Config(String),
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The universe of reusable segments a workload draws from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentCatalog {
    pub num_segments: u32,
    /// Tokens per reusable segment.
    pub chunk_tokens: u32,
    /// Hot segment IDs ordered by popularity rank (rank 0 first).
    pub hot_set: Vec<SegmentId>,
    /// Length of the shared system prefix.
    pub sys_prefix_tokens: u32,
}

impl SegmentCatalog {
    /// 981 passages, 20 hot, 128-token chunks and a 28-token system prefix
    /// (mean prompt of 768 tokens with k=5 and a 100-token suffix).
    pub fn standard() -> Self {
        let num_segments = 981;
        let stride = num_segments / 20;
        Self {
            num_segments,
            chunk_tokens: 128,
            hot_set: (0..20).map(|i| i * stride).collect(),
            sys_prefix_tokens: 28,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.chunk_tokens == 0 {
            return Err(WorkloadError::Config("chunk_tokens must be >= 1".into()));
        }
        let mut seen = HashSet::new();
        for &id in &self.hot_set {
            if id >= self.num_segments {
                return Err(WorkloadError::Config(format!(
                    "hot segment {id} outside catalog of {}",
                    self.num_segments
                )));
            }
            if !seen.insert(id) {
                return Err(WorkloadError::Config(format!("duplicate hot segment {id}")));
            }
        }
        Ok(())
    }

    pub fn is_hot(&self, id: SegmentId) -> bool {
        self.hot_set.contains(&id)
    }

    /// Segment IDs outside the hot set, ascending.
    pub fn cold_pool(&self) -> Vec<SegmentId> {
        let hot: HashSet<_> = self.hot_set.iter().copied().collect();
        (0..self.num_segments).filter(|id| !hot.contains(id)).collect()
    }

    /// The fixed token run a segment serializes to.
    pub fn segment_tokens(&self, id: SegmentId) -> impl Iterator<Item = Token> + '_ {
        let base = SEGMENT_TOKEN_BASE + id as Token * self.chunk_tokens as Token;
        (0..self.chunk_tokens as Token).map(move |j| base + j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    /// Poisson arrival rate in requests/s.
    pub qps: f64,
    pub num_requests: usize,
    /// Reusable segments per request.
    pub k: usize,
    /// Probability that a request is hot.
    pub r_hot: f64,
    pub zipf_alpha: f64,
    pub suffix_tokens: u32,
    pub reorderable: bool,
    pub seed: u64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            qps: 50.0,
            num_requests: 2048,
            k: 5,
            r_hot: 0.7,
            zipf_alpha: 1.2,
            suffix_tokens: 100,
            reorderable: true,
            seed: 0,
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self, catalog: &SegmentCatalog) -> Result<(), WorkloadError> {
        catalog.validate()?;
        if !(self.qps > 0.0) || !self.qps.is_finite() {
            return Err(WorkloadError::Config(format!("qps must be > 0, got {}", self.qps)));
        }
        if !(0.0..=1.0).contains(&self.r_hot) {
            return Err(WorkloadError::Config(format!("r_hot must be in [0,1], got {}", self.r_hot)));
        }
        if self.k == 0 {
            return Err(WorkloadError::Config("k must be >= 1".into()));
        }
        if self.k > catalog.num_segments as usize {
            return Err(WorkloadError::Config(format!(
                "k={} exceeds catalog of {} segments",
                self.k, catalog.num_segments
            )));
        }
        if !(self.zipf_alpha > 0.0) {
            return Err(WorkloadError::Config("zipf_alpha must be > 0".into()));
        }
        if self.suffix_tokens as u64 >= 1 << SUFFIX_ID_SHIFT {
            return Err(WorkloadError::Config("suffix_tokens too large".into()));
        }
        if self.r_hot > 0.0 && catalog.hot_set.is_empty() {
            return Err(WorkloadError::Config("r_hot > 0 requires a nonempty hot set".into()));
        }
        if self.r_hot < 1.0 && self.k > catalog.cold_pool().len() {
            return Err(WorkloadError::Config(format!(
                "k={} exceeds the {} non-hot segments available to cold requests",
                self.k,
                catalog.cold_pool().len()
            )));
        }
        Ok(())
    }
}

/// One serving request.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: RequestId,
    pub arrival_time: f64,
    /// Ordered reusable-segment skeleton.
    pub skeleton: Vec<SegmentId>,
    pub reorderable: bool,
    pub token_path: Vec<Token>,
    pub sys_len: usize,
    pub reuse_len: usize,
    pub suffix_len: usize,
}

impl Request {
    /// Builds a request and derives its token path from the catalog.
    pub fn new(
        catalog: &SegmentCatalog,
        id: RequestId,
        arrival_time: f64,
        skeleton: Vec<SegmentId>,
        suffix_len: usize,
        reorderable: bool,
    ) -> Self {
        let mut req = Self {
            id,
            arrival_time,
            skeleton,
            reorderable,
            token_path: Vec::new(),
            sys_len: catalog.sys_prefix_tokens as usize,
            reuse_len: 0,
            suffix_len,
        };
        req.reuse_len = req.skeleton.len() * catalog.chunk_tokens as usize;
        req.token_path = serialize_tokens(&req, catalog);
        req
    }

    pub fn path_len(&self) -> usize {
        self.sys_len + self.reuse_len + self.suffix_len
    }

    pub fn is_hot(&self, catalog: &SegmentCatalog) -> bool {
        self.skeleton.iter().any(|&s| catalog.is_hot(s))
    }
}

/// Serializes the request in its current skeleton order.
pub fn serialize_tokens(request: &Request, catalog: &SegmentCatalog) -> Vec<Token> {
    serialize_with_skeleton(request.id, &request.skeleton, request.suffix_len, catalog)
}

/// Serializes an arbitrary skeleton order for request `id`. Used when the
/// scheduler front-aligns a reorderable skeleton before dispatch.
pub fn serialize_with_skeleton(
    id: RequestId,
    skeleton: &[SegmentId],
    suffix_len: usize,
    catalog: &SegmentCatalog,
) -> Vec<Token> {
    let sys = catalog.sys_prefix_tokens as usize;
    let mut path =
        Vec::with_capacity(sys + skeleton.len() * catalog.chunk_tokens as usize + suffix_len);
    path.extend((0..sys as Token).map(|j| SYSTEM_TOKEN_BASE + j));
    for &seg in skeleton {
        path.extend(catalog.segment_tokens(seg));
    }
    let suffix_base = SUFFIX_TOKEN_BASE + (id << SUFFIX_ID_SHIFT);
    path.extend((0..suffix_len as Token).map(|j| suffix_base + j));
    path
}

/// Precomputed inverse-CDF table for a Zipf law over ranks `0..n`.
#[derive(Debug, Clone)]
pub struct ZipfTable {
    cdf: Vec<f64>,
}

impl ZipfTable {
    pub fn new(n: usize, alpha: f64) -> Result<Self, WorkloadError> {
        if n == 0 || !(alpha > 0.0) || !alpha.is_finite() {
            return Err(WorkloadError::ZipfDomain { n, alpha });
        }
        let weights: Vec<f64> = (1..=n).map(|j| (j as f64).powf(-alpha)).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        *cdf.last_mut().unwrap() = 1.0;
        Ok(Self { cdf })
    }

    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    /// Probability mass of `rank`.
    pub fn probability(&self, rank: usize) -> f64 {
        match rank {
            0 => self.cdf[0],
            r => self.cdf[r] - self.cdf[r - 1],
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

/// Draws a Zipf rank in `[0, n)`.
pub fn zipf_sample<R: Rng + ?Sized>(rng: &mut R, n: usize, alpha: f64) -> Result<usize, WorkloadError> {
    Ok(ZipfTable::new(n, alpha)?.sample(rng))
}

/// Reusable sampling state for one catalog/config pair.
#[derive(Debug, Clone)]
pub struct RequestSampler<'a> {
    catalog: &'a SegmentCatalog,
    config: &'a WorkloadConfig,
    zipf: Option<ZipfTable>,
    cold_pool: Vec<SegmentId>,
}

impl<'a> RequestSampler<'a> {
    pub fn new(catalog: &'a SegmentCatalog, config: &'a WorkloadConfig) -> Result<Self, WorkloadError> {
        config.validate(catalog)?;
        let zipf = if catalog.hot_set.is_empty() {
            None
        } else {
            Some(ZipfTable::new(catalog.hot_set.len(), config.zipf_alpha)?)
        };
        Ok(Self { catalog, config, zipf, cold_pool: catalog.cold_pool() })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, id: RequestId, arrival_time: f64) -> Request {
        let k = self.config.k;
        let mut skeleton = Vec::with_capacity(k);
        let mut seen = HashSet::with_capacity(k);
        let hot = self.config.r_hot > 0.0 && rng.random::<f64>() < self.config.r_hot;
        if hot {
            // validate() guarantees a hot set whenever r_hot > 0
            let zipf = self.zipf.as_ref().expect("hot set present");
            let first = self.catalog.hot_set[zipf.sample(rng)];
            skeleton.push(first);
            seen.insert(first);
            while skeleton.len() < k {
                let s = rng.random_range(0..self.catalog.num_segments);
                if seen.insert(s) {
                    skeleton.push(s);
                }
            }
        } else {
            while skeleton.len() < k {
                let s = self.cold_pool[rng.random_range(0..self.cold_pool.len())];
                if seen.insert(s) {
                    skeleton.push(s);
                }
            }
        }
        Request::new(
            self.catalog,
            id,
            arrival_time,
            skeleton,
            self.config.suffix_tokens as usize,
            self.config.reorderable,
        )
    }
}

/// Samples a single request. Prefer [`RequestSampler`] in loops.
pub fn sample_request<R: Rng + ?Sized>(
    rng: &mut R,
    catalog: &SegmentCatalog,
    config: &WorkloadConfig,
    id: RequestId,
    arrival_time: f64,
) -> Result<Request, WorkloadError> {
    Ok(RequestSampler::new(catalog, config)?.sample(rng, id, arrival_time))
}

/// A replayable request stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub catalog: SegmentCatalog,
    pub requests: Vec<Request>,
    pub config: Option<WorkloadConfig>,
}

/// Generates a Poisson-arrival trace; a pure function of `(config, catalog)`.
pub fn generate_trace(config: &WorkloadConfig, catalog: &SegmentCatalog) -> Result<Trace, WorkloadError> {
    let sampler = RequestSampler::new(catalog, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gaps = Exp::new(config.qps).map_err(|e| WorkloadError::Config(e.to_string()))?;
    let mut now = 0.0;
    let requests = (0..config.num_requests as RequestId)
        .map(|id| {
            now += gaps.sample(&mut rng);
            sampler.sample(&mut rng, id, now)
        })
        .collect();
    Ok(Trace { catalog: catalog.clone(), requests, config: Some(config.clone()) })
}

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    catalog: SegmentCatalog,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<WorkloadConfig>,
}

#[derive(Serialize, Deserialize)]
struct RequestRecord {
    id: RequestId,
    arrival_time: f64,
    skeleton: Vec<SegmentId>,
    suffix_tokens: usize,
    reorderable: bool,
}

impl Trace {
    /// Checks ordering, ID uniqueness and skeleton membership.
    pub fn validate(&self) -> Result<(), WorkloadError> {
        self.catalog.validate()?;
        let mut ids = HashSet::new();
        let mut last = f64::NEG_INFINITY;
        for r in &self.requests {
            if !r.arrival_time.is_finite() || r.arrival_time < last {
                return Err(WorkloadError::Validation(format!(
                    "request {} arrives at {} before its predecessor at {}",
                    r.id, r.arrival_time, last
                )));
            }
            last = r.arrival_time;
            if !ids.insert(r.id) {
                return Err(WorkloadError::Validation(format!("duplicate request id {}", r.id)));
            }
            if let Some(bad) = r.skeleton.iter().find(|&&s| s >= self.catalog.num_segments) {
                return Err(WorkloadError::Validation(format!(
                    "request {} references segment {bad} outside the catalog",
                    r.id
                )));
            }
        }
        Ok(())
    }

    pub fn save<W: Write>(&self, mut out: W) -> Result<(), WorkloadError> {
        let header = TraceHeader { catalog: self.catalog.clone(), config: self.config.clone() };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
        for r in &self.requests {
            let rec = RequestRecord {
                id: r.id,
                arrival_time: r.arrival_time,
                skeleton: r.skeleton.clone(),
                suffix_tokens: r.suffix_len,
                reorderable: r.reorderable,
            };
            serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self, WorkloadError> {
        let mut header: Option<TraceHeader> = None;
        let mut records = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |e: serde_json::Error| WorkloadError::Parse { line: lineno, message: e.to_string() };
            if header.is_none() {
                header = Some(serde_json::from_str(&line).map_err(parse_err)?);
            } else {
                records.push(serde_json::from_str::<RequestRecord>(&line).map_err(parse_err)?);
            }
        }
        let header = header.ok_or(WorkloadError::Parse { line: 1, message: "missing header line".into() })?;
        let catalog = header.catalog;
        catalog.validate()?;
        if let Some(bad) = records
            .iter()
            .find(|r| r.suffix_tokens as u64 >= 1 << SUFFIX_ID_SHIFT || r.id >= 1 << (62 - SUFFIX_ID_SHIFT))
        {
            return Err(WorkloadError::Validation(format!("request {} exceeds token-ID ranges", bad.id)));
        }
        if let Some(bad) = records
            .iter()
            .find(|r| r.skeleton.iter().any(|&s| s >= catalog.num_segments))
        {
            return Err(WorkloadError::Validation(format!(
                "request {} references a segment outside the catalog",
                bad.id
            )));
        }
        let requests = records
            .into_iter()
            .map(|r| Request::new(&catalog, r.id, r.arrival_time, r.skeleton, r.suffix_tokens, r.reorderable))
            .collect();
        let trace = Trace { catalog, requests, config: header.config };
        trace.validate()?;
        Ok(trace)
    }

    /// Fraction of requests holding at least one hot segment.
    pub fn hot_fraction(&self) -> f64 {
        if self.requests.is_empty() {
            return 0.0;
        }
        let hot = self.requests.iter().filter(|r| r.is_hot(&self.catalog)).count();
        hot as f64 / self.requests.len() as f64
    }
}
