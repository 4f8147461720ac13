//! Runs one scheduling round on a hand-built queue and prints the buckets,
//! lanes and aligned prompts.
//!
//! Usage: cargo run --example qas_round [COLD_QUOTA]

use prefixsim::scheduler::{schedule_round, ActiveSet, QueuedRequest, SchedulerConfig};

fn main() -> anyhow::Result<()> {
    let cold_quota: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    let skeletons: [&[u32]; 8] = [&[4, 2, 9], &[2, 4], &[7, 2, 4], &[3], &[2, 8], &[4, 7], &[5, 6], &[2, 4, 7]];
    let pending: Vec<QueuedRequest> = skeletons
        .iter()
        .enumerate()
        .map(|(i, s)| QueuedRequest {
            id: i as u64,
            arrival_time: i as f64 * 0.01,
            skeleton: s.to_vec(),
            reorderable: true,
            sys_len: 28,
            segment_len: 128,
            suffix_len: 100,
        })
        .collect();
    let mut active = ActiveSet::new();
    active.insert(100, &[7]);

    let config = SchedulerConfig { dispatch_budget: 5, cold_quota, ..Default::default() };
    config.validate().map_err(anyhow::Error::msg)?;
    let batch = schedule_round(&pending, &active, &config);

    println!("{:<12} {:>5} {:>14} {:>10}", "signature", "size", "utility", "score");
    for b in &batch.buckets {
        println!("{:<12} {:>5} {:>14.1} {:>10.1}", format!("{:?}", b.signature), b.size, b.utility, b.score);
    }
    for d in batch.members() {
        println!(
            "{:?} request {} {:?} -> {:?}, anchors at {:?}",
            d.lane, d.id, skeletons[d.id as usize], d.aligned_skeleton, d.anchor_offsets
        );
    }
    let mut priorities: Vec<_> = batch.dispatch_priorities.iter().collect();
    priorities.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
    println!("dispatch priorities: {priorities:?}");
    Ok(())
}
