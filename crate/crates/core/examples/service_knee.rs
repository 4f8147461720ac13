//! Sweeps offered load around the analytic service rate under one policy
//! and prints the knee report.
//!
//! Usage: cargo run --release --example service_knee [POLICY] [SEED]

use prefixsim::analytics::knee_report;
use prefixsim::experiment::{knee_points, run_experiment, ExperimentSpec};
use prefixsim::kvcache::EvictionPolicy;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let policy = args.next().map(|s| s.parse().map_err(anyhow::Error::msg)).transpose()?.unwrap_or(EvictionPolicy::Dart);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    // about 50 req/s: 32000 tokens/s over 768-token prompts with ~17% hits
    let mu = 50.0;
    let spec = ExperimentSpec {
        policies: vec![policy],
        qps: [0.6, 0.8, 1.0, 1.2, 1.4].iter().map(|f| f * mu).collect(),
        seeds: vec![seed],
        write_requests: false,
        ..Default::default()
    };
    let result = run_experiment(&spec, None)?;
    let report = knee_report(&knee_points(&result.rows, policy, spec.sim.scheduler.cold_quota))?;
    print!("{}", report.to_table());
    if let Some(r) = report.calibrated_rate {
        println!("per-request prefill rate implied by the plateau: {r:.1} tokens/s");
    }
    Ok(())
}
