//! Deterministic discrete-event simulator and queueing toolkit for
//! prefix-cached LLM serving.
//!
//! - [`workload`]: segmented-prompt traces with Zipf hotspots and Poisson arrivals.
//! - [`kvcache`]: token-exact radix cache with DART, LRU, LRU_ACTIVE and LFU eviction.
//! - [`scheduler`]: queue-aware dispatch rounds (QAS).
//! - [`engine`]: wave-based prefill/decode simulator and run metrics.
//! - [`analytics`]: closed-form service-rate and admission-wait model.
//! - [`experiment`]: sweeps, result files and comparisons behind the CLI.

pub mod analytics;
pub mod engine;
pub mod experiment;
pub mod kvcache;
pub mod scheduler;
pub mod workload;
