use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use prefixsim::analytics::{self, knee_report, PolicyParams, QueueParams};
use prefixsim::experiment::{
    compare, compare_table, knee_points, read_runs_csv, rows_for_policy, run_experiment, summary_table,
    ExperimentSpec,
};
use prefixsim::kvcache::EvictionPolicy;
use prefixsim::workload::{generate_trace, SegmentCatalog, Trace, WorkloadConfig};

#[derive(Parser)]
#[command(name = "prefixsim", version, about = "Prefix-cache serving simulator and queueing calculator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a trace from a workload config.
    Generate {
        /// Workload config JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trace file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        qps: Option<f64>,
    },
    /// Run an experiment spec and write its result files.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the seed list with one seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace the policy list (comma separated).
        #[arg(long, value_delimiter = ',')]
        policy: Vec<EvictionPolicy>,
        /// Replace the load list (comma separated).
        #[arg(long, value_delimiter = ',')]
        qps: Vec<f64>,
    },
    /// Compare two policies' results matched on (qps, q_cold, seed).
    Compare {
        /// runs.csv holding policy A.
        runs: PathBuf,
        /// runs.csv holding policy B; defaults to the first file.
        baseline_runs: Option<PathBuf>,
        #[arg(long, default_value = "DART")]
        policy: EvictionPolicy,
        #[arg(long, default_value = "LRU")]
        baseline: EvictionPolicy,
        /// Also write the table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Service-knee report for one policy of a result set.
    Knee {
        runs: PathBuf,
        #[arg(long, default_value = "DART")]
        policy: EvictionPolicy,
        #[arg(long, default_value_t = 2)]
        q_cold: usize,
        /// Directory for knee CSV and text table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Closed-form calculator.
    Analyze {
        #[command(subcommand)]
        op: AnalyzeOp,
    },
}

#[derive(Subcommand)]
enum AnalyzeOp {
    /// Wave time and request service rate.
    MeanService {
        #[arg(long)]
        prompt_tokens: f64,
        #[arg(long)]
        hit_rate: f64,
        /// Effective prefill tokens/s per request.
        #[arg(long)]
        prefill_rate: f64,
        #[arg(long)]
        wave_size: f64,
    },
    /// Service-rate gap from a hit-rate gap.
    Gap {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        hit_rate: f64,
        #[arg(long)]
        delta_h: f64,
    },
    /// Growth of the stable load region.
    Expansion {
        #[arg(long)]
        wave_size: f64,
        #[arg(long)]
        prefill_rate: f64,
        #[arg(long)]
        prompt_tokens: f64,
        #[arg(long)]
        hit_rate: f64,
        #[arg(long)]
        delta_h: f64,
    },
    /// Reusable-only hit gap to full-prompt gap.
    ReuseGap {
        #[arg(long)]
        delta_h_reuse: f64,
        #[arg(long)]
        reuse_tokens: f64,
        #[arg(long)]
        prompt_tokens: f64,
    },
    /// Mean admission wait.
    Wait {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        cs2: f64,
        #[arg(long, default_value_t = 0.05)]
        window: f64,
        #[arg(long, default_value_t = 0.0)]
        wait_floor: f64,
    },
    /// Crossover utilization and load.
    Crossover {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        wave_size: f64,
        #[arg(long, default_value_t = 1.0)]
        cs2: f64,
    },
    /// Per-request prefill rate implied by a measured service rate.
    Calibrate {
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        wave_size: f64,
        #[arg(long)]
        prompt_tokens: f64,
        #[arg(long)]
        hit_rate: f64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { config, out, seed, qps } => generate(config.as_deref(), out.as_deref(), seed, qps),
        Command::Run { config, out, seed, policy, qps } => run(config.as_deref(), out, seed, policy, qps),
        Command::Compare { runs, baseline_runs, policy, baseline, out } => {
            let a = rows_for_policy(&read_runs_csv(&runs)?, policy);
            let b = rows_for_policy(&read_runs_csv(baseline_runs.as_deref().unwrap_or(&runs))?, baseline);
            if a.is_empty() || b.is_empty() {
                bail!("no rows for {policy} or {baseline}");
            }
            let rows = compare(&a, &b)?;
            println!("{policy} vs {baseline}");
            print!("{}", compare_table(&rows));
            if let Some(path) = out {
                let mut w = csv::Writer::from_path(&path)?;
                for r in &rows {
                    w.serialize(r)?;
                }
                w.flush()?;
            }
            Ok(())
        }
        Command::Knee { runs, policy, q_cold, out } => {
            let rows = read_runs_csv(&runs)?;
            let report = knee_report(&knee_points(&rows, policy, q_cold))?;
            print!("{}", report.to_table());
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join(format!("knee_{}.csv", policy.name())), report.to_csv())?;
                fs::write(dir.join(format!("knee_{}.txt", policy.name())), report.to_table())?;
            }
            Ok(())
        }
        Command::Analyze { op } => analyze(op),
    }
}

fn generate(config: Option<&Path>, out: Option<&Path>, seed: Option<u64>, qps: Option<f64>) -> Result<()> {
    let mut workload: WorkloadConfig = match config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => WorkloadConfig::default(),
    };
    if let Some(s) = seed {
        workload.seed = s;
    }
    if let Some(q) = qps {
        workload.qps = q;
    }
    let trace = generate_trace(&workload, &SegmentCatalog::standard())?;
    match out {
        Some(p) => trace.save(BufWriter::new(fs::File::create(p)?))?,
        None => trace.save(BufWriter::new(io::stdout().lock()))?,
    }
    if let Some(p) = out {
        // round-trip check keeps generated files loadable
        Trace::load(BufReader::new(fs::File::open(p)?))?;
        eprintln!("wrote {} requests to {}", trace.requests.len(), p.display());
    }
    Ok(())
}

fn run(
    config: Option<&Path>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    policy: Vec<EvictionPolicy>,
    qps: Vec<f64>,
) -> Result<()> {
    let mut spec = match config {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(s) = seed {
        spec.seeds = vec![s];
    }
    if !policy.is_empty() {
        spec.policies = policy;
    }
    if !qps.is_empty() {
        spec.qps = qps;
    }
    let dir = out.or_else(|| spec.output_dir.clone()).unwrap_or_else(|| PathBuf::from("results"));
    let result = run_experiment(&spec, Some(&dir))?;
    print!("{}", summary_table(&result.rows));
    for (policy, report) in &result.knee_reports {
        println!("knee {policy}:\n{}", report.to_table());
    }
    for f in &result.failures {
        eprintln!("run {} failed: {}", f.key.file_stem(), f.error);
    }
    println!("{} runs, {} failed, results in {}", result.rows.len() + result.failures.len(), result.failures.len(), dir.display());
    io::stdout().flush()?;
    Ok(())
}

fn analyze(op: AnalyzeOp) -> Result<()> {
    match op {
        AnalyzeOp::MeanService { prompt_tokens, hit_rate, prefill_rate, wave_size } => {
            let s = analytics::mean_service(&PolicyParams {
                prompt_tokens,
                reuse_tokens: 0.0,
                mean_wave_size: wave_size,
                prefill_rate,
                hit_rate,
            })?;
            println!("wave_time_s={:.6}", s.wave_time);
            println!("mu_req_per_s={:.6}", s.mu);
            println!("waves_per_s={:.6}", s.waves_per_second(wave_size));
        }
        AnalyzeOp::Gap { mu, hit_rate, delta_h } => {
            println!("gap_req_per_s={:.6}", analytics::service_gap(mu, hit_rate, delta_h)?);
        }
        AnalyzeOp::Expansion { wave_size, prefill_rate, prompt_tokens, hit_rate, delta_h } => {
            let d = analytics::stability_expansion(wave_size, prefill_rate, prompt_tokens, hit_rate, delta_h)?;
            println!("expansion_req_per_s={d:.6}");
        }
        AnalyzeOp::ReuseGap { delta_h_reuse, reuse_tokens, prompt_tokens } => {
            println!("delta_h={:.6}", analytics::reuse_gap_to_full(delta_h_reuse, reuse_tokens, prompt_tokens));
        }
        AnalyzeOp::Wait { mu, lambda, cs2, window, wait_floor } => {
            let q = QueueParams { lambda, c_s2: cs2, window_s: window, wait_floor };
            println!("admission_wait_s={:.6}", analytics::admission_wait(mu, &q)?);
        }
        AnalyzeOp::Crossover { mu, wave_size, cs2 } => {
            let c = analytics::crossover(mu, wave_size, cs2);
            let (lo, hi) = analytics::crossover_range(mu, wave_size);
            println!("rho_star={:.6}", c.rho_star);
            println!("lambda_star={:.6}", c.lambda_star);
            println!("lambda_star_cs2_0.5_to_4={lo:.3}..{hi:.3}");
        }
        AnalyzeOp::Calibrate { mu, wave_size, prompt_tokens, hit_rate } => {
            let r = analytics::calibrate_prefill_rate(mu, wave_size, prompt_tokens, hit_rate)?;
            println!("prefill_rate_per_request={r:.6}");
        }
    }
    Ok(())
}
