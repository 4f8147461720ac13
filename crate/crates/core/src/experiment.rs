//! Policy × load × cold-quota × seed sweeps and their result files.
//!
//! Each (qps, seed) pair gets one trace, shared by every policy and cold
//! quota so that comparisons only differ in the retention and dispatch rules.
//! Runs execute in parallel; results are merged by sorted key, so output
//! files do not depend on thread scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{knee_report, KneePoint, KneeReport};
use crate::engine::{run_simulation, working_set_tokens, RunMetrics, SimConfig};
use crate::kvcache::EvictionPolicy;
use crate::workload::{generate_trace, SegmentCatalog, Trace, WorkloadConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub catalog: SegmentCatalog,
    /// Base workload; `qps` and `seed` are replaced per run.
    pub workload: WorkloadConfig,
    pub sim: SimConfig,
    pub policies: Vec<EvictionPolicy>,
    pub qps: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Cold-lane quotas to sweep; empty means the scheduler default only.
    pub cold_quotas: Vec<usize>,
    /// Cache budget as a fraction of the trace's distinct-token footprint.
    /// Overrides `sim.cache.capacity_tokens` when set.
    pub capacity_fraction: Option<f64>,
    /// Write one JSON-lines file of per-request metrics per run.
    pub write_requests: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            catalog: SegmentCatalog::standard(),
            workload: WorkloadConfig::default(),
            sim: SimConfig::default(),
            policies: EvictionPolicy::ALL.to_vec(),
            qps: vec![50.0],
            seeds: vec![0],
            cold_quotas: Vec::new(),
            capacity_fraction: Some(0.25),
            write_requests: true,
            output_dir: None,
        }
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.policies.is_empty(), "policy list is empty");
        ensure!(!self.qps.is_empty(), "qps list is empty");
        ensure!(!self.seeds.is_empty(), "seed list is empty");
        for &q in &self.qps {
            ensure!(q > 0.0 && q.is_finite(), "qps must be positive, got {q}");
        }
        if let Some(f) = self.capacity_fraction {
            ensure!(f > 0.0 && f.is_finite(), "capacity_fraction must be positive, got {f}");
        }
        self.catalog.validate()?;
        self.workload.validate(&self.catalog)?;
        self.sim.validate()?;
        for &c in &self.cold_quotas {
            ensure!(
                c <= self.sim.scheduler.dispatch_budget,
                "cold quota {c} exceeds dispatch budget {}",
                self.sim.scheduler.dispatch_budget
            );
        }
        Ok(())
    }

    fn quotas(&self) -> Vec<usize> {
        if self.cold_quotas.is_empty() {
            vec![self.sim.scheduler.cold_quota]
        } else {
            self.cold_quotas.clone()
        }
    }

    /// All run keys in output order.
    pub fn keys(&self) -> Vec<RunKey> {
        let mut keys = Vec::new();
        for &policy in &self.policies {
            for &qps in &self.qps {
                for q_cold in self.quotas() {
                    for &seed in &self.seeds {
                        keys.push(RunKey { policy, qps, q_cold, seed });
                    }
                }
            }
        }
        keys.sort_by(RunKey::cmp);
        keys.dedup_by(|a, b| RunKey::cmp(a, b).is_eq());
        keys
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub policy: EvictionPolicy,
    pub qps: f64,
    pub q_cold: usize,
    pub seed: u64,
}

impl RunKey {
    fn cmp(a: &Self, b: &Self) -> std::cmp::Ordering {
        a.policy
            .cmp(&b.policy)
            .then(a.qps.total_cmp(&b.qps))
            .then(a.q_cold.cmp(&b.q_cold))
            .then(a.seed.cmp(&b.seed))
    }

    pub fn file_stem(&self) -> String {
        format!("{}_qps{}_cold{}_seed{}", self.policy.name(), self.qps, self.q_cold, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub key: RunKey,
    pub metrics: RunMetrics,
    pub prefill_rate: f64,
    pub capacity_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub key: RunKey,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub rows: Vec<RunRow>,
    pub failures: Vec<RunFailure>,
    pub knee_reports: BTreeMap<EvictionPolicy, KneeReport>,
}

/// Trace for one (qps, seed) pair of a spec.
pub fn trace_for(spec: &ExperimentSpec, qps: f64, seed: u64) -> Result<Trace> {
    let workload = WorkloadConfig { qps, seed, ..spec.workload.clone() };
    Ok(generate_trace(&workload, &spec.catalog)?)
}

/// Simulation config for one run, with capacity resolved against its trace.
pub fn sim_config_for(spec: &ExperimentSpec, key: &RunKey, trace: &Trace) -> SimConfig {
    let mut sim = spec.sim.clone();
    sim.cache.policy = key.policy;
    sim.scheduler.cold_quota = key.q_cold;
    if let Some(f) = spec.capacity_fraction {
        sim.cache.capacity_tokens = ((working_set_tokens(trace) as f64 * f).round() as usize).max(1);
    }
    sim
}

/// Runs every key of the spec. Writes result files when `out` is given.
pub fn run_experiment(spec: &ExperimentSpec, out: Option<&Path>) -> Result<ExperimentResult> {
    spec.validate()?;
    let keys = spec.keys();

    let mut pairs: Vec<(u64, f64)> = keys.iter().map(|k| (k.seed, k.qps)).collect();
    pairs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pairs.dedup();
    let traces: Vec<((u64, f64), Result<Trace, String>)> = pairs
        .par_iter()
        .map(|&(seed, qps)| ((seed, qps), trace_for(spec, qps, seed).map_err(|e| format!("{e:#}"))))
        .collect();
    let trace_of = |k: &RunKey| {
        traces
            .iter()
            .find(|((s, q), _)| *s == k.seed && q.total_cmp(&k.qps).is_eq())
            .map(|(_, t)| t)
            .expect("trace generated for every key")
    };

    let outcomes: Vec<(RunKey, Result<(RunRow, Vec<String>), String>)> = keys
        .par_iter()
        .map(|key| {
            let result = trace_of(key).clone().and_then(|trace| {
                let sim = sim_config_for(spec, key, &trace);
                let res = run_simulation(&trace, &sim).map_err(|e| e.to_string())?;
                let lines = if spec.write_requests {
                    res.requests.iter().map(|r| serde_json::to_string(r).expect("serializable")).collect()
                } else {
                    Vec::new()
                };
                Ok((
                    RunRow {
                        key: *key,
                        metrics: res.metrics,
                        prefill_rate: sim.prefill_rate,
                        capacity_tokens: sim.cache.capacity_tokens,
                    },
                    lines,
                ))
            });
            (*key, result)
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut request_logs = Vec::new();
    for (key, outcome) in outcomes {
        match outcome {
            Ok((row, lines)) => {
                request_logs.push((key, lines));
                rows.push(row);
            }
            Err(error) => failures.push(RunFailure { key, error }),
        }
    }

    let mut knee_reports = BTreeMap::new();
    for &policy in &spec.policies {
        let q_cold = spec.quotas()[0];
        let points = knee_points(&rows, policy, q_cold);
        if points.len() >= 3 {
            knee_reports.insert(policy, knee_report(&points)?);
        }
    }

    let result = ExperimentResult { rows, failures, knee_reports };
    if let Some(dir) = out {
        write_outputs(spec, &result, &request_logs, dir)?;
    }
    Ok(result)
}

/// Seed-averaged sweep points for one policy and cold quota.
pub fn knee_points(rows: &[RunRow], policy: EvictionPolicy, q_cold: usize) -> Vec<KneePoint> {
    let mut by_qps: BTreeMap<u64, Vec<&RunRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.key.policy == policy && r.key.q_cold == q_cold) {
        by_qps.entry(r.key.qps.to_bits()).or_default().push(r);
    }
    let mut points: Vec<KneePoint> = by_qps
        .values()
        .map(|group| {
            let n = group.len() as f64;
            let mean = |f: &dyn Fn(&RunRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
            KneePoint {
                offered: group[0].key.qps,
                throughput: mean(&|r| r.metrics.throughput),
                p99: mean(&|r| r.metrics.p99),
                hit_rate: mean(&|r| r.metrics.hit_rate),
                mean_wave_size: mean(&|r| r.metrics.mean_wave_size),
                prompt_tokens: mean(&|r| r.metrics.mean_prompt_tokens),
                prefill_rate: mean(&|r| r.prefill_rate),
            }
        })
        .collect();
    points.sort_by(|a, b| a.offered.total_cmp(&b.offered));
    points
}

pub const RUNS_HEADER: [&str; 20] = [
    "policy",
    "qps",
    "q_cold",
    "seed",
    "p50",
    "p90",
    "p95",
    "p99",
    "throughput",
    "hit_rate",
    "reuse_hit_rate",
    "mean_wave_size",
    "mean_prompt_tokens",
    "mean_reuse_tokens",
    "extend_tokens_per_wave",
    "mean_admit_to_first_token",
    "prefill_rate",
    "capacity_tokens",
    "waves",
    "requests",
];

fn run_record(r: &RunRow) -> Vec<String> {
    let m = &r.metrics;
    vec![
        r.key.policy.name().to_string(),
        format!("{}", r.key.qps),
        r.key.q_cold.to_string(),
        r.key.seed.to_string(),
        format!("{:.6}", m.p50),
        format!("{:.6}", m.p90),
        format!("{:.6}", m.p95),
        format!("{:.6}", m.p99),
        format!("{:.6}", m.throughput),
        format!("{:.6}", m.hit_rate),
        format!("{:.6}", m.reuse_hit_rate),
        format!("{:.6}", m.mean_wave_size),
        format!("{:.6}", m.mean_prompt_tokens),
        format!("{:.6}", m.mean_reuse_tokens),
        format!("{:.6}", m.extend_tokens_per_wave),
        format!("{:.6}", m.mean_admit_to_first_token),
        format!("{}", r.prefill_rate),
        r.capacity_tokens.to_string(),
        m.waves.to_string(),
        m.requests.to_string(),
    ]
}

pub fn write_runs_csv(rows: &[RunRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(RUNS_HEADER)?;
    for r in rows {
        w.write_record(run_record(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_runs_csv(path: &Path) -> Result<Vec<RunRow>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).with_context(|| format!("missing column {name}"));
    let idx: Vec<usize> = RUNS_HEADER.iter().map(|h| col(h)).collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| rec.get(idx[i]).unwrap_or("");
        let f = |i: usize| -> Result<f64> {
            get(i).parse().with_context(|| format!("row {}: bad {} '{}'", line + 2, RUNS_HEADER[i], get(i)))
        };
        let u = |i: usize| -> Result<u64> {
            get(i).parse().with_context(|| format!("row {}: bad {} '{}'", line + 2, RUNS_HEADER[i], get(i)))
        };
        let policy = get(0).parse::<EvictionPolicy>().map_err(anyhow::Error::msg)?;
        rows.push(RunRow {
            key: RunKey { policy, qps: f(1)?, q_cold: u(2)? as usize, seed: u(3)? },
            metrics: RunMetrics {
                p50: f(4)?,
                p90: f(5)?,
                p95: f(6)?,
                p99: f(7)?,
                throughput: f(8)?,
                hit_rate: f(9)?,
                reuse_hit_rate: f(10)?,
                mean_wave_size: f(11)?,
                mean_prompt_tokens: f(12)?,
                mean_reuse_tokens: f(13)?,
                extend_tokens_per_wave: f(14)?,
                mean_admit_to_first_token: f(15)?,
                waves: u(18)? as usize,
                requests: u(19)? as usize,
            },
            prefill_rate: f(16)?,
            capacity_tokens: u(17)? as usize,
        });
    }
    Ok(rows)
}

/// Seed-averaged metrics per (policy, q_cold, qps).
pub fn summary_csv(rows: &[RunRow]) -> String {
    let mut groups: BTreeMap<(EvictionPolicy, usize, u64), Vec<&RunMetrics>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.key.policy, r.key.q_cold, ordered_bits(r.key.qps))).or_default().push(&r.metrics);
    }
    let mut out = String::from("policy,q_cold,qps,seeds,p50,p90,p95,p99,throughput,hit_rate,reuse_hit_rate\n");
    for ((policy, q_cold, bits), ms) in groups {
        let n = ms.len() as f64;
        let mean = |f: fn(&RunMetrics) -> f64| ms.iter().map(|m| f(m)).sum::<f64>() / n;
        let _ = writeln!(
            out,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            policy.name(),
            q_cold,
            from_ordered_bits(bits),
            ms.len(),
            mean(|m| m.p50),
            mean(|m| m.p90),
            mean(|m| m.p95),
            mean(|m| m.p99),
            mean(|m| m.throughput),
            mean(|m| m.hit_rate),
            mean(|m| m.reuse_hit_rate),
        );
    }
    out
}

/// Human-readable per-policy tables of seed-averaged metrics.
pub fn summary_table(rows: &[RunRow]) -> String {
    let mut out = String::new();
    let mut policies: Vec<EvictionPolicy> = rows.iter().map(|r| r.key.policy).collect();
    policies.sort();
    policies.dedup();
    let summary = summary_csv(rows);
    for policy in policies {
        let _ = writeln!(out, "== {policy} ==");
        let _ = writeln!(
            out,
            "{:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "q_cold", "qps", "P50", "P90", "P95", "P99", "hit%", "reuse%"
        );
        for line in summary.lines().skip(1) {
            let c: Vec<&str> = line.split(',').collect();
            if c[0] != policy.name() {
                continue;
            }
            let p = |i: usize| c[i].parse::<f64>().unwrap_or(f64::NAN);
            let _ = writeln!(
                out,
                "{:>6} {:>8} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.2} {:>8.2}",
                c[1],
                c[2],
                p(4),
                p(5),
                p(6),
                p(7),
                p(9) * 100.0,
                p(10) * 100.0
            );
        }
        out.push('\n');
    }
    out
}

// total order on f64 keys that survives BTreeMap
fn ordered_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

fn from_ordered_bits(b: u64) -> f64 {
    if b >> 63 == 1 {
        f64::from_bits(b & !(1 << 63))
    } else {
        f64::from_bits(!b)
    }
}

fn write_outputs(
    spec: &ExperimentSpec,
    result: &ExperimentResult,
    request_logs: &[(RunKey, Vec<String>)],
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("spec.json"), serde_json::to_string_pretty(spec)? + "\n")?;
    write_runs_csv(&result.rows, &dir.join("runs.csv"))?;
    fs::write(dir.join("summary.csv"), summary_csv(&result.rows))?;
    fs::write(dir.join("summary.txt"), summary_table(&result.rows))?;
    for (policy, report) in &result.knee_reports {
        fs::write(dir.join(format!("knee_{}.csv", policy.name())), report.to_csv())?;
        fs::write(dir.join(format!("knee_{}.txt", policy.name())), report.to_table())?;
    }
    if !result.failures.is_empty() {
        let mut text = String::from("policy,qps,q_cold,seed,error\n");
        for f in &result.failures {
            let _ = writeln!(
                text,
                "{},{},{},{},\"{}\"",
                f.key.policy.name(),
                f.key.qps,
                f.key.q_cold,
                f.key.seed,
                f.error.replace('"', "'")
            );
        }
        fs::write(dir.join("failures.csv"), text)?;
    }
    if spec.write_requests {
        let req_dir = dir.join("requests");
        fs::create_dir_all(&req_dir)?;
        for (key, lines) in request_logs {
            use std::io::Write;
            let file = fs::File::create(req_dir.join(format!("{}.jsonl", key.file_stem())))?;
            let mut w = BufWriter::new(file);
            for l in lines {
                writeln!(w, "{l}")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

/// Seed-averaged difference of policy A against policy B at one load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub qps: f64,
    pub q_cold: usize,
    pub seeds: usize,
    /// Mean over seeds of (p99_a − p99_b) / p99_b × 100.
    pub p99_change_pct: f64,
    /// Mean over seeds of (h_a − h_b) × 100.
    pub hit_gap_pp: f64,
    pub reuse_hit_gap_pp: f64,
}

/// Compares two result sets matched on (qps, q_cold, seed).
pub fn compare(a: &[RunRow], b: &[RunRow]) -> Result<Vec<CompareRow>> {
    type Key = (u64, usize, u64);
    let key = |r: &RunRow| (ordered_bits(r.key.qps), r.key.q_cold, r.key.seed);
    let index = |rows: &[RunRow]| -> Result<BTreeMap<Key, RunMetrics>> {
        let mut m = BTreeMap::new();
        for r in rows {
            if m.insert(key(r), r.metrics.clone()).is_some() {
                bail!("duplicate result for qps={} q_cold={} seed={}", r.key.qps, r.key.q_cold, r.key.seed);
            }
        }
        Ok(m)
    };
    let (ma, mb) = (index(a)?, index(b)?);
    let unmatched: Vec<String> = ma
        .keys()
        .filter(|k| !mb.contains_key(k))
        .map(|k| format!("A(qps={}, q_cold={}, seed={})", from_ordered_bits(k.0), k.1, k.2))
        .chain(
            mb.keys()
                .filter(|k| !ma.contains_key(k))
                .map(|k| format!("B(qps={}, q_cold={}, seed={})", from_ordered_bits(k.0), k.1, k.2)),
        )
        .collect();
    if !unmatched.is_empty() {
        bail!("unmatched result keys: {}", unmatched.join(", "));
    }

    let mut groups: BTreeMap<(u64, usize), Vec<(f64, f64, f64)>> = BTreeMap::new();
    for (k, x) in &ma {
        let y = &mb[k];
        groups.entry((k.0, k.1)).or_default().push((
            (x.p99 - y.p99) / y.p99 * 100.0,
            (x.hit_rate - y.hit_rate) * 100.0,
            (x.reuse_hit_rate - y.reuse_hit_rate) * 100.0,
        ));
    }
    Ok(groups
        .into_iter()
        .map(|((bits, q_cold), d)| {
            let n = d.len() as f64;
            CompareRow {
                qps: from_ordered_bits(bits),
                q_cold,
                seeds: d.len(),
                p99_change_pct: d.iter().map(|t| t.0).sum::<f64>() / n,
                hit_gap_pp: d.iter().map(|t| t.1).sum::<f64>() / n,
                reuse_hit_gap_pp: d.iter().map(|t| t.2).sum::<f64>() / n,
            }
        })
        .collect())
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut out = format!(
        "{:>8} {:>6} {:>5} {:>12} {:>10} {:>12}\n",
        "qps", "q_cold", "seeds", "P99 change%", "hit gap pp", "reuse gap pp"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>8} {:>6} {:>5} {:>12.2} {:>10.3} {:>12.3}",
            r.qps, r.q_cold, r.seeds, r.p99_change_pct, r.hit_gap_pp, r.reuse_hit_gap_pp
        );
    }
    out
}

/// Picks one policy's rows out of a result set.
pub fn rows_for_policy(rows: &[RunRow], policy: EvictionPolicy) -> Vec<RunRow> {
    rows.iter().filter(|r| r.key.policy == policy).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(policy: EvictionPolicy, qps: f64, seed: u64, p99: f64, h: f64) -> RunRow {
        RunRow {
            key: RunKey { policy, qps, q_cold: 2, seed },
            metrics: RunMetrics {
                requests: 10,
                p50: 0.1,
                p90: 0.2,
                p95: 0.3,
                p99,
                throughput: qps,
                hit_rate: h,
                reuse_hit_rate: h,
                mean_wave_size: 3.0,
                extend_tokens_per_wave: 100.0,
                mean_prompt_tokens: 768.0,
                mean_reuse_tokens: 640.0,
                mean_admit_to_first_token: 0.05,
                waves: 4,
            },
            prefill_rate: 1000.0,
            capacity_tokens: 5000,
        }
    }

    #[test]
    fn identical_inputs_compare_to_zero() {
        let a = vec![row(EvictionPolicy::Dart, 10.0, 0, 1.0, 0.5), row(EvictionPolicy::Dart, 10.0, 1, 2.0, 0.4)];
        let out = compare(&a, &a).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].p99_change_pct, 0.0);
        assert_eq!(out[0].hit_gap_pp, 0.0);
    }

    #[test]
    fn doubled_baseline_p99_is_minus_fifty() {
        let a = vec![row(EvictionPolicy::Dart, 10.0, 0, 1.0, 0.5)];
        let b = vec![row(EvictionPolicy::Lru, 10.0, 0, 2.0, 0.45)];
        let out = compare(&a, &b).unwrap();
        assert!((out[0].p99_change_pct + 50.0).abs() < 1e-12);
        assert!((out[0].hit_gap_pp - 5.0).abs() < 1e-9);
    }

    #[test]
    fn unmatched_keys_are_listed() {
        let a = vec![row(EvictionPolicy::Dart, 10.0, 0, 1.0, 0.5)];
        let b = vec![row(EvictionPolicy::Lru, 20.0, 0, 1.0, 0.5)];
        let err = compare(&a, &b).unwrap_err().to_string();
        assert!(err.contains("qps=10") && err.contains("qps=20"), "{err}");
    }

    #[test]
    fn runs_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.csv");
        let rows = vec![row(EvictionPolicy::LruActive, 12.5, 3, 1.25, 0.125)];
        write_runs_csv(&rows, &path).unwrap();
        assert_eq!(read_runs_csv(&path).unwrap(), rows);
    }

    #[test]
    fn ordered_bits_round_trip_and_order() {
        let xs = [-3.5, -0.0, 0.0, 1.0, 60.0];
        for w in xs.windows(2) {
            assert!(ordered_bits(w[0]) <= ordered_bits(w[1]));
        }
        for x in xs {
            assert_eq!(from_ordered_bits(ordered_bits(x)).to_bits(), x.to_bits());
        }
    }

    #[test]
    fn empty_lists_are_rejected() {
        let spec = ExperimentSpec { policies: vec![], ..Default::default() };
        assert!(spec.validate().is_err());
        let spec = ExperimentSpec { qps: vec![], ..Default::default() };
        assert!(spec.validate().is_err());
    }
}
