//! Closed-form service and queueing calculations: service rate, the effect
//! of a hit-rate gain, admission wait against load and the crossover point.
//!
//! Usage: cargo run --example queueing_model [MU] [WAVE_SIZE]

use prefixsim::analytics::{
    admission_wait, crossover, crossover_range, service_gap, stability_expansion, QueueParams,
};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let mu: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50.1);
    let m_bar: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(33.1);

    let c = crossover(mu, m_bar, 1.0);
    let (lo, hi) = crossover_range(mu, m_bar);
    println!("mu {mu} req/s, mean wave {m_bar}: rho* {:.4}, lambda* {:.2} QPS ({lo:.2}..{hi:.2})", c.rho_star, c.lambda_star);

    println!("{:>8} {:>10} {:>10}", "lambda", "rho", "wait(s)");
    for i in 1..=9 {
        let lambda = mu * i as f64 / 10.0;
        let w = admission_wait(mu, &QueueParams::new(lambda, 1.0, 0.05))?;
        println!("{lambda:>8.2} {:>10.2} {w:>10.4}", lambda / mu);
    }

    // a 10-point full-prompt hit-rate gain over a baseline at h = 0.4
    let (h, dh) = (0.4, 0.1);
    println!("gain from h {h} to {}: {:.2} req/s", h + dh, service_gap(mu, h, dh)?);
    println!(
        "stable region grows by {:.2} req/s at M=32, R=600, L=768",
        stability_expansion(32.0, 600.0, 768.0, h, dh)?
    );
    Ok(())
}
