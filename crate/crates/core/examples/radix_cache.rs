//! Builds a small radix cache by hand, shows prefix matching and node
//! splits, then evicts under DART and LRU to show how the keys differ.
//!
//! Usage: cargo run --example radix_cache

use std::collections::HashMap;

use prefixsim::kvcache::{AnchorSpec, CacheConfig, EvictionPolicy, KvCache};

fn anchors(seg: u32) -> [AnchorSpec; 3] {
    [AnchorSpec::system(2), AnchorSpec::reusable(5, seg), AnchorSpec::private(7)]
}

fn build(policy: EvictionPolicy) -> anyhow::Result<KvCache> {
    let mut cache = KvCache::new(CacheConfig { capacity_tokens: 64, policy, protect_budget: 1 });
    // two prompts share the system prefix and segment 7, one uses segment 9
    let paths: [(&[u64], u32); 3] =
        [(&[1, 2, 10, 11, 12, 50, 51], 7), (&[1, 2, 10, 11, 12, 60, 61], 7), (&[1, 2, 20, 21, 22, 70, 71], 9)];
    for (path, seg) in paths {
        let out = cache.insert_path(path, &anchors(seg))?;
        println!("insert {path:?}: {} new tokens, hit {}", out.new_tokens, path.len() - out.new_tokens);
        cache.release_path(&out.pin)?;
    }
    Ok(cache)
}

fn main() -> anyhow::Result<()> {
    for policy in [EvictionPolicy::Dart, EvictionPolicy::Lru] {
        println!("== {policy}");
        let mut cache = build(policy)?;
        let m = cache.match_prefix(&[1, 2, 10, 11, 12, 99]);
        println!("match [1, 2, 10, 11, 12, 99] -> {} tokens", m.hit_length);
        // segment 9 is about to be dispatched; under DART it becomes protected
        cache.set_protection(HashMap::from([(9, 3.0), (7, 1.0)]));
        print!("{}", cache.debug_dump());
        // private leaves go first under both; then DART keeps the protected segment
        let out = cache.evict(9);
        println!("evict 9 tokens -> freed {} from nodes {:?}", out.freed, out.detached);
        print!("{}", cache.debug_dump());
        cache.check_invariants().map_err(anyhow::Error::msg)?;
    }
    Ok(())
}
