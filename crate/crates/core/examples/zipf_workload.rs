//! Generates a standard trace and prints its composition: hot-segment
//! popularity against the power law, hot fraction and arrival rate.
//!
//! Usage: cargo run --example zipf_workload [QPS] [N] [SEED]

use std::collections::HashMap;

use prefixsim::engine::working_set_tokens;
use prefixsim::workload::{generate_trace, SegmentCatalog, WorkloadConfig, ZipfTable};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let qps: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50.0);
    let num_requests: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2048);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let catalog = SegmentCatalog::standard();
    let config = WorkloadConfig { qps, num_requests, seed, ..Default::default() };
    let trace = generate_trace(&config, &catalog)?;
    let span = trace.requests.last().map_or(0.0, |r| r.arrival_time);
    println!(
        "{} requests over {span:.1}s ({:.1} req/s), hot fraction {:.3}, working set {} tokens",
        trace.requests.len(),
        trace.requests.len() as f64 / span,
        trace.hot_fraction(),
        working_set_tokens(&trace)
    );

    let mut first_hot: HashMap<u32, usize> = HashMap::new();
    for r in trace.requests.iter().filter(|r| r.is_hot(&catalog)) {
        *first_hot.entry(r.skeleton[0]).or_default() += 1;
    }
    let hot = first_hot.values().sum::<usize>() as f64;
    let table = ZipfTable::new(catalog.hot_set.len(), config.zipf_alpha)?;
    println!("{:>5} {:>8} {:>9} {:>9}", "rank", "segment", "observed", "expected");
    for (rank, &seg) in catalog.hot_set.iter().enumerate().take(8) {
        let observed = first_hot.get(&seg).copied().unwrap_or(0) as f64 / hot;
        println!("{rank:>5} {seg:>8} {observed:>9.4} {:>9.4}", table.probability(rank));
    }

    let r = &trace.requests[0];
    println!(
        "request 0: skeleton {:?}, {} tokens = {} system + {} reusable + {} suffix",
        r.skeleton,
        r.path_len(),
        r.sys_len,
        r.reuse_len,
        r.suffix_len
    );
    Ok(())
}
