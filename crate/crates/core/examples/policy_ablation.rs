//! Replays one trace under each eviction policy with the scheduler held fixed.
//!
//! Usage: cargo run --release --example policy_ablation [QPS] [CAPACITY_FRACTION] [SEED] [PREFILL_RATE]

use prefixsim::engine::{run_simulation, working_set_tokens, SimConfig};
use prefixsim::kvcache::EvictionPolicy;
use prefixsim::workload::{generate_trace, SegmentCatalog, WorkloadConfig};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let qps: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50.0);
    let fraction: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0.25);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let prefill_rate: Option<f64> = args.next().map(|s| s.parse()).transpose()?;

    let catalog = SegmentCatalog::standard();
    let workload = WorkloadConfig { qps, seed, ..Default::default() };
    let trace = generate_trace(&workload, &catalog)?;
    let capacity = (working_set_tokens(&trace) as f64 * fraction) as usize;
    println!("qps={qps} requests={} capacity={capacity} tokens", trace.requests.len());
    println!("{:<11} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7}", "policy", "h", "h_reuse", "p50", "p99", "tput", "M");
    for policy in EvictionPolicy::ALL {
        let mut config = SimConfig::default();
        if let Some(r) = prefill_rate {
            config.prefill_rate = r;
        }
        config.cache.capacity_tokens = capacity;
        config.cache.policy = policy;
        let m = run_simulation(&trace, &config)?.metrics;
        println!(
            "{:<11} {:>8.4} {:>8.4} {:>8.3} {:>8.3} {:>8.2} {:>7.2}",
            policy.name(),
            m.hit_rate,
            m.reuse_hit_rate,
            m.p50,
            m.p99,
            m.throughput,
            m.mean_wave_size
        );
    }
    Ok(())
}
