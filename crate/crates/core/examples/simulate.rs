//! Simulates one policy on the standard trace and prints the TTFT
//! breakdown and cache statistics.
//!
//! Usage: cargo run --release --example simulate [POLICY] [QPS] [SEED]

use prefixsim::engine::{run_simulation, working_set_tokens, SimConfig};
use prefixsim::kvcache::EvictionPolicy;
use prefixsim::workload::{generate_trace, SegmentCatalog, WorkloadConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let policy = args.next().map(|s| s.parse().map_err(anyhow::Error::msg)).transpose()?.unwrap_or(EvictionPolicy::Dart);
    let qps: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(45.0);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let trace = generate_trace(&WorkloadConfig { qps, seed, ..Default::default() }, &SegmentCatalog::standard())?;
    let mut config = SimConfig::default();
    config.cache.policy = policy;
    config.cache.capacity_tokens = working_set_tokens(&trace) / 4;
    let out = run_simulation(&trace, &config)?;
    let m = &out.metrics;

    let n = out.requests.len() as f64;
    let avg = |f: fn(&prefixsim::engine::RequestMetrics) -> f64| out.requests.iter().map(f).sum::<f64>() / n;
    println!("{policy} at {qps} QPS, capacity {} tokens", config.cache.capacity_tokens);
    println!("TTFT p50 {:.3}s p90 {:.3}s p99 {:.3}s", m.p50, m.p90, m.p99);
    println!(
        "mean TTFT {:.3}s = wait {:.3}s + prefill {:.3}s + first token {:.3}s",
        avg(|r| r.ttft()),
        avg(|r| r.admission_wait()),
        avg(|r| r.prefill_time()),
        avg(|r| r.first_token_time())
    );
    println!("throughput {:.2} req/s over {} waves of {:.1} requests", m.throughput, m.waves, m.mean_wave_size);
    println!("hit rate {:.4}, reusable-token hit rate {:.4}", m.hit_rate, m.reuse_hit_rate);
    println!("uncached tokens per wave {:.0}", m.extend_tokens_per_wave);
    Ok(())
}
