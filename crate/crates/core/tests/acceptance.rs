//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use prefixsim::analytics::{
    calibrate_prefill_rate, crossover, crossover_range, mean_service, service_gap, stability_expansion,
    PolicyParams,
};
use prefixsim::engine::{run_simulation, run_simulation_with, working_set_tokens, RunOptions, SimConfig};
use prefixsim::experiment::{rows_for_policy, run_experiment, ExperimentSpec, RunRow};
use prefixsim::kvcache::EvictionPolicy;
use prefixsim::scheduler::schedule_round;
use prefixsim::workload::{generate_trace, SegmentCatalog, WorkloadConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{active_set, random_eviction_instance, random_round, reference_round, rescan_evict, ShadowPaths};

type Outcome = Result<String, String>;

const SEEDS: [u64; 3] = [0, 1, 2];
const CAPACITY_FRACTION: f64 = 0.25;
/// Post-knee load as a multiple of the analytic service rate.
const POST_KNEE: f64 = 1.4;
const SWEEP: [f64; 5] = [0.6, 0.8, 1.0, 1.2, 1.4];

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn crossover_reproduction() -> Outcome {
    let a = crossover(50.1, 33.1, 1.0).lambda_star;
    let b = crossover(14.5, 9.75, 1.0).lambda_star;
    let unbatched = crossover(1.0, 1.0, 1.0).rho_star;
    let (lo, hi) = crossover_range(50.1, 33.1);
    check(
        (a - 48.6).abs() <= 0.1 && (b - 13.1).abs() <= 0.1 && unbatched == 0.5,
        format!("lambda*={a:.3} and {b:.3}, rho*(M=1)={unbatched}, c_s2 range {lo:.2}..{hi:.2}"),
    )
}

fn calibration_consistency() -> Outcome {
    let r = calibrate_prefill_rate(49.8, 33.1, 768.0, 0.474).map_err(|e| e.to_string())?;
    check((r - 610.0).abs() <= 0.05 * 610.0, format!("R_pf_eff={r:.1} tokens/s/request"))
}

fn gap_formula_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let p0 = PolicyParams {
            prompt_tokens: rng.random_range(64.0..8192.0),
            reuse_tokens: 0.0,
            mean_wave_size: rng.random_range(1.0..128.0),
            prefill_rate: rng.random_range(50.0..50_000.0),
            hit_rate: rng.random_range(0.0..0.95),
        };
        // every tenth draw has no gap
        let dh = if i % 10 == 0 { 0.0 } else { rng.random_range(0.0..(0.99 - p0.hit_rate)) };
        let p1 = PolicyParams { hit_rate: p0.hit_rate + dh, ..p0 };
        let mu0 = mean_service(&p0).map_err(|e| e.to_string())?.mu;
        let mu1 = mean_service(&p1).map_err(|e| e.to_string())?.mu;
        let gap = service_gap(mu0, p0.hit_rate, dh).map_err(|e| e.to_string())?;
        let expansion = stability_expansion(p0.mean_wave_size, p0.prefill_rate, p0.prompt_tokens, p0.hit_rate, dh)
            .map_err(|e| e.to_string())?;
        // relative to mu1, the scale at which the subtraction is exact to rounding
        let err = (gap - (mu1 - mu0)).abs().max((expansion - gap).abs()) / mu1;
        worst = worst.max(err);
        if err > 1e-12 || gap < 0.0 || ((gap == 0.0) != (dh == 0.0)) {
            return Err(format!("draw {i}: gap={gap} direct={} expansion={expansion} dh={dh}", mu1 - mu0));
        }
    }
    Ok(format!("10000 draws, worst relative error {worst:.2e}"))
}

fn eviction_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tokens = 0;
    for i in 0..500 {
        for policy in EvictionPolicy::ALL {
            let (mut cache, k) = random_eviction_instance(&mut rng, policy);
            let expected = rescan_evict(&cache, k);
            let got = cache.evict(k).detached;
            if got != expected {
                return Err(format!("instance {i} {policy}: heap {got:?} vs rescan {expected:?}"));
            }
            tokens += k;
        }
    }
    Ok(format!("500 instances x 4 policies, {tokens} tokens requested"))
}

fn scheduler_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut admitted = 0;
    for i in 0..500 {
        let (pending, active, cfg) = random_round(&mut rng);
        let batch = schedule_round(&pending, &active_set(&active), &cfg);
        let hot: Vec<u64> = batch.hot.iter().map(|d| d.id).collect();
        let cold: Vec<u64> = batch.cold.iter().map(|d| d.id).collect();
        let (ref_hot, ref_cold) = reference_round(&pending, &active, &cfg);
        if hot != ref_hot || cold != ref_cold {
            return Err(format!("round {i}: hot {hot:?} cold {cold:?} vs {ref_hot:?} {ref_cold:?}"));
        }
        admitted += hot.len() + cold.len();
    }
    Ok(format!("500 rounds, {admitted} dispatches matched"))
}

fn hit_length_oracle() -> Outcome {
    let cfg = WorkloadConfig { num_requests: 512, qps: 50.0, ..Default::default() };
    let trace = generate_trace(&cfg, &SegmentCatalog::standard()).map_err(|e| e.to_string())?;
    let mut summary = Vec::new();
    for policy in EvictionPolicy::ALL {
        let mut sim = SimConfig::default();
        sim.cache.policy = policy;
        sim.cache.capacity_tokens = (working_set_tokens(&trace) as f64 * CAPACITY_FRACTION) as usize;
        let mut shadow = ShadowPaths::default();
        let opts = RunOptions { record_rounds: false, log_evictions: true };
        run_simulation_with(&trace, &sim, opts, &mut shadow).map_err(|e| e.to_string())?;
        if shadow.evicted_nodes == 0 {
            return Err(format!("{policy}: capacity never forced eviction"));
        }
        if let Some((id, got, want)) = shadow.mismatches.first() {
            return Err(format!("{policy}: request {id} hit {got}, shadow {want}"));
        }
        summary.push(format!("{policy} {} checks/{} evictions", shadow.checked, shadow.evicted_nodes));
    }
    Ok(summary.join(", "))
}

/// Analytic service rate of the standard workload from a light-load DART pilot.
fn pilot_mu() -> Result<f64, String> {
    let cfg = WorkloadConfig { qps: 30.0, ..Default::default() };
    let trace = generate_trace(&cfg, &SegmentCatalog::standard()).map_err(|e| e.to_string())?;
    let mut sim = SimConfig::default();
    sim.cache.capacity_tokens = (working_set_tokens(&trace) as f64 * CAPACITY_FRACTION) as usize;
    let m = run_simulation(&trace, &sim).map_err(|e| e.to_string())?.metrics;
    Ok(sim.prefill_rate / (m.mean_prompt_tokens * (1.0 - m.hit_rate)))
}

fn load_point(mu: f64, factor: f64) -> f64 {
    (mu * factor * 100.0).round() / 100.0
}

fn standard_spec(policies: Vec<EvictionPolicy>, qps: Vec<f64>, seeds: Vec<u64>) -> ExperimentSpec {
    ExperimentSpec {
        policies,
        qps,
        seeds,
        capacity_fraction: Some(CAPACITY_FRACTION),
        write_requests: false,
        ..Default::default()
    }
}

fn mean(rows: &[RunRow], f: impl Fn(&RunRow) -> f64) -> f64 {
    rows.iter().map(&f).sum::<f64>() / rows.len() as f64
}

fn directional_policy_result(rows: &[RunRow], qps: f64) -> Outcome {
    let per_policy: Vec<(EvictionPolicy, Vec<RunRow>)> =
        EvictionPolicy::ALL.iter().map(|&p| (p, rows_for_policy(rows, p))).collect();
    let get = |p: EvictionPolicy| &per_policy.iter().find(|(q, _)| *q == p).unwrap().1;
    let dart = get(EvictionPolicy::Dart);

    let mut reuse_wins = true;
    for d in dart {
        for other in [EvictionPolicy::Lru, EvictionPolicy::Lfu] {
            let o = get(other).iter().find(|r| r.key.seed == d.key.seed).ok_or("missing seed")?;
            reuse_wins &= d.metrics.reuse_hit_rate > o.metrics.reuse_hit_rate;
        }
    }
    // P99 compared on the mean over seeds; single seeds are noisy at this scale
    let p99: Vec<(EvictionPolicy, f64)> = per_policy.iter().map(|(p, r)| (*p, mean(r, |x| x.metrics.p99))).collect();
    let dart_p99 = mean(dart, |x| x.metrics.p99);
    let p99_lowest = p99.iter().filter(|(p, _)| *p != EvictionPolicy::Dart).all(|(_, v)| dart_p99 < *v);
    let reuse: Vec<String> = per_policy
        .iter()
        .map(|(p, r)| format!("{p} {:.4}", mean(r, |x| x.metrics.reuse_hit_rate)))
        .collect();
    let p99_text: Vec<String> = p99.iter().map(|(p, v)| format!("{p} {v:.3}s")).collect();
    let dart_seeds: Vec<String> = dart.iter().map(|r| format!("{:.3}", r.metrics.p99)).collect();
    check(
        reuse_wins && p99_lowest,
        format!(
            "qps {qps}: reuse hit [{}] every seed={reuse_wins}; mean P99 [{}] (DART per seed {}) lowest={p99_lowest}",
            reuse.join(", "),
            p99_text.join(", "),
            dart_seeds.join("/"),
        ),
    )
}

fn service_knee_shape(mu: f64) -> Outcome {
    let qps: Vec<f64> = SWEEP.iter().map(|f| load_point(mu, *f)).collect();
    let spec = standard_spec(vec![EvictionPolicy::Dart], qps, vec![0]);
    let result = run_experiment(&spec, None).map_err(|e| e.to_string())?;
    let report = result.knee_reports.get(&EvictionPolicy::Dart).ok_or("no knee report")?;
    let rows = &report.rows;
    let plateau_ok = rows[3..].iter().all(|r| r.relative_gap <= 0.10);
    let monotone = rows.windows(2).all(|w| w[1].point.p99 >= w[0].point.p99);
    let text: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "{:.1}->{:.1} (mu {:.1}, P99 {:.2}s)",
                r.point.offered, r.point.throughput, r.analytic_mu, r.point.p99
            )
        })
        .collect();
    check(plateau_ok && monotone, format!("{}; plateau={plateau_ok} monotone={monotone}", text.join(", ")))
}

fn cold_lane_direction(qps: f64) -> Outcome {
    let mut spec = standard_spec(vec![EvictionPolicy::Dart], vec![qps], SEEDS.to_vec());
    spec.cold_quotas = vec![0, 2];
    let result = run_experiment(&spec, None).map_err(|e| e.to_string())?;
    let (mut hit_votes, mut p99_votes) = (0, 0);
    let mut text = Vec::new();
    for seed in SEEDS {
        let find = |q: usize| result.rows.iter().find(|r| r.key.seed == seed && r.key.q_cold == q);
        let (Some(none), Some(two)) = (find(0), find(2)) else {
            return Err(format!("missing runs for seed {seed}"));
        };
        hit_votes += usize::from(none.metrics.hit_rate >= two.metrics.hit_rate);
        p99_votes += usize::from(none.metrics.p99 >= two.metrics.p99);
        text.push(format!(
            "seed {seed}: h {:.4}/{:.4} P99 {:.2}/{:.2}",
            none.metrics.hit_rate, two.metrics.hit_rate, none.metrics.p99, two.metrics.p99
        ));
    }
    check(
        hit_votes >= 2 && p99_votes >= 2,
        format!("qps {qps}, q_cold 0 vs 2: {}; votes h {hit_votes}/3 P99 {p99_votes}/3", text.join("; ")),
    )
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let name = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((name, fs::read(&path).map_err(|e| e.to_string())?));
            }
        }
    }
    files.sort();
    Ok(files)
}

fn determinism(spec: &ExperimentSpec, first_dir: &Path) -> Outcome {
    let second = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_experiment(spec, Some(second.path())).map_err(|e| e.to_string())?;
    let (a, b) = (dir_bytes(first_dir)?, dir_bytes(second.path())?);
    let bytes: usize = a.iter().map(|(_, d)| d.len()).sum();
    check(!a.is_empty() && a == b, format!("{} files, {bytes} bytes compared", a.len()))
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |n: u32, name: &str, start: Instant, outcome: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name} [{secs:.2}s]: {detail}"),
            Err(detail) => {
                failures += 1;
                println!("FAIL {n:>2} {name} [{secs:.2}s]: {detail}");
            }
        }
    };

    let t = Instant::now();
    report(1, "crossover reproduction", t, crossover_reproduction());
    let t = Instant::now();
    report(2, "calibration consistency", t, calibration_consistency());
    let t = Instant::now();
    report(3, "service gap properties", t, gap_formula_properties());
    let t = Instant::now();
    report(4, "eviction oracle equivalence", t, eviction_oracle());
    let t = Instant::now();
    report(5, "scheduler oracle equivalence", t, scheduler_oracle());
    let t = Instant::now();
    report(6, "hit length oracle", t, hit_length_oracle());

    let t = Instant::now();
    let mu = match pilot_mu() {
        Ok(mu) => mu,
        Err(e) => {
            for (n, name) in [(7, "directional policy result"), (8, "service knee shape"), (9, "cold lane"), (10, "determinism")] {
                report(n, name, t, Err(format!("pilot failed: {e}")));
            }
            return ExitCode::FAILURE;
        }
    };
    let post_knee = load_point(mu, POST_KNEE);
    println!("     analytic mu from pilot {mu:.2} req/s, post-knee load {post_knee} QPS");

    let spec = ExperimentSpec { write_requests: true, ..standard_spec(EvictionPolicy::ALL.to_vec(), vec![post_knee], SEEDS.to_vec()) };
    let dir = tempfile::tempdir().expect("temp dir");
    let t = Instant::now();
    let outcome = run_experiment(&spec, Some(dir.path()))
        .map_err(|e| e.to_string())
        .and_then(|r| directional_policy_result(&r.rows, post_knee));
    report(7, "directional policy result", t, outcome);
    let t = Instant::now();
    report(8, "service knee shape", t, service_knee_shape(mu));
    let t = Instant::now();
    report(9, "cold lane tradeoff direction", t, cold_lane_direction(post_knee));
    let t = Instant::now();
    report(10, "determinism", t, determinism(&spec, dir.path()));

    println!("{} of 10 criteria passed", 10 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
