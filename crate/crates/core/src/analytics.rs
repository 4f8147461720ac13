//! Closed-form queueing model for wave-batched prefill.
//!
//! A wave of mean size `M̄` prefills `L(1-h)` uncached tokens per request at
//! an effective per-request rate `R`, so it lasts `L(1-h)/R` seconds and
//! serves `μ = M̄·R / (L(1-h))` requests per second. Every rate returned here
//! is in requests/s; wave rates only appear through [`ServiceRate::waves_per_second`].

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unstable queue: utilization {rho} >= 1")]
    Unstable { rho: f64 },
    #[error("knee report needs at least 3 load points, got {0}")]
    InsufficientPoints(usize),
}

/// Per-policy service parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Mean prompt tokens L.
    pub prompt_tokens: f64,
    /// Mean reusable-region tokens.
    pub reuse_tokens: f64,
    pub mean_wave_size: f64,
    /// Effective prefill tokens/s per request.
    pub prefill_rate: f64,
    /// Full-prompt token hit rate.
    pub hit_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceRate {
    /// Mean wave duration in seconds.
    pub wave_time: f64,
    /// Requests per second.
    pub mu: f64,
}

impl ServiceRate {
    pub fn waves_per_second(&self, mean_wave_size: f64) -> f64 {
        self.mu / mean_wave_size
    }
}

fn check_hit(h: f64) -> Result<(), AnalyticsError> {
    if !(0.0..1.0).contains(&h) {
        return Err(AnalyticsError::Domain(format!("hit rate must lie in [0, 1), got {h}")));
    }
    Ok(())
}

pub fn mean_service(p: &PolicyParams) -> Result<ServiceRate, AnalyticsError> {
    check_hit(p.hit_rate)?;
    let uncached = p.prompt_tokens * (1.0 - p.hit_rate);
    Ok(ServiceRate { wave_time: uncached / p.prefill_rate, mu: p.mean_wave_size * p.prefill_rate / uncached })
}

/// Ratio μ₁/μ₀ in factored form: batching × hardware × prompt length × miss rate.
pub fn service_ratio(p1: &PolicyParams, p0: &PolicyParams) -> f64 {
    (p1.mean_wave_size / p0.mean_wave_size)
        * (p1.prefill_rate / p0.prefill_rate)
        * (p0.prompt_tokens / p1.prompt_tokens)
        * ((1.0 - p0.hit_rate) / (1.0 - p1.hit_rate))
}

fn check_gap(h_lru: f64, delta_h: f64) -> Result<(), AnalyticsError> {
    check_hit(h_lru)?;
    if delta_h < 0.0 {
        return Err(AnalyticsError::Domain(format!("hit-rate gap must be nonnegative, got {delta_h}")));
    }
    if h_lru + delta_h >= 1.0 {
        return Err(AnalyticsError::Domain(format!("h + gap = {} must stay below 1", h_lru + delta_h)));
    }
    Ok(())
}

/// Service-rate gain from a hit-rate gain `delta_h` over a baseline with
/// hit rate `h_lru` and service rate `mu_lru`, all else fixed.
pub fn service_gap(mu_lru: f64, h_lru: f64, delta_h: f64) -> Result<f64, AnalyticsError> {
    check_gap(h_lru, delta_h)?;
    Ok(mu_lru * delta_h / (1.0 - h_lru - delta_h))
}

/// Growth of the stable arrival region from the same hit-rate gain.
pub fn stability_expansion(
    mean_wave_size: f64,
    prefill_rate: f64,
    prompt_tokens: f64,
    h_lru: f64,
    delta_h: f64,
) -> Result<f64, AnalyticsError> {
    check_gap(h_lru, delta_h)?;
    Ok((mean_wave_size * prefill_rate / prompt_tokens) * delta_h / ((1.0 - h_lru - delta_h) * (1.0 - h_lru)))
}

/// Converts a reusable-token hit-rate gap into a full-prompt gap.
pub fn reuse_gap_to_full(delta_h_reuse: f64, reuse_tokens: f64, prompt_tokens: f64) -> f64 {
    delta_h_reuse * reuse_tokens / prompt_tokens
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueParams {
    pub lambda: f64,
    /// Squared coefficient of variation of service time.
    pub c_s2: f64,
    pub window_s: f64,
    /// Low-load overhead on top of the half-window alignment wait.
    pub wait_floor: f64,
}

impl QueueParams {
    pub fn new(lambda: f64, c_s2: f64, window_s: f64) -> Self {
        Self { lambda, c_s2, window_s, wait_floor: 0.0 }
    }

    /// Total low-load wait: half a window plus any extra overhead.
    pub fn floor(&self) -> f64 {
        self.window_s / 2.0 + self.wait_floor
    }
}

/// Mean admission wait: the low-load floor plus an M/G/1 congestion term.
pub fn admission_wait(mu: f64, q: &QueueParams) -> Result<f64, AnalyticsError> {
    let rho = q.lambda / mu;
    if rho >= 1.0 {
        return Err(AnalyticsError::Unstable { rho });
    }
    Ok(q.floor() + (rho / (1.0 - rho)) * ((1.0 + q.c_s2) / 2.0) / mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossover {
    pub rho_star: f64,
    pub lambda_star: f64,
}

/// Load at which the congestion term equals one wave's worth of service time.
pub fn crossover(mu: f64, mean_wave_size: f64, c_s2: f64) -> Crossover {
    let rho_star = 2.0 * mean_wave_size / (1.0 + c_s2 + 2.0 * mean_wave_size);
    Crossover { rho_star, lambda_star: rho_star * mu }
}

/// Crossover load over the c_s² sensitivity interval [0.5, 4].
pub fn crossover_range(mu: f64, mean_wave_size: f64) -> (f64, f64) {
    (crossover(mu, mean_wave_size, 4.0).lambda_star, crossover(mu, mean_wave_size, 0.5).lambda_star)
}

/// Per-request effective prefill rate that reproduces a measured μ.
pub fn calibrate_prefill_rate(mu: f64, mean_wave_size: f64, prompt_tokens: f64, hit_rate: f64) -> Result<f64, AnalyticsError> {
    check_hit(hit_rate)?;
    Ok(mu * prompt_tokens * (1.0 - hit_rate) / mean_wave_size)
}

/// One load point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KneePoint {
    pub offered: f64,
    pub throughput: f64,
    pub p99: f64,
    pub hit_rate: f64,
    pub mean_wave_size: f64,
    pub prompt_tokens: f64,
    /// Aggregate prefill tokens/s.
    pub prefill_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KneeRow {
    pub point: KneePoint,
    /// Per-request effective rate, aggregate / M̄.
    pub effective_rate: f64,
    pub analytic_mu: f64,
    pub relative_gap: f64,
    pub knee: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KneeReport {
    pub rows: Vec<KneeRow>,
    pub knee_index: Option<usize>,
    /// Mean throughput from the knee on.
    pub plateau_throughput: Option<f64>,
    /// Mean analytic μ over the same rows.
    pub plateau_mu: Option<f64>,
    /// |μ − plateau| / μ.
    pub plateau_gap: Option<f64>,
    /// Per-request rate implied by the plateau.
    pub calibrated_rate: Option<f64>,
}

/// Throughput below this fraction of the offered load marks the knee.
pub const KNEE_FRACTION: f64 = 0.95;

pub fn knee_report(points: &[KneePoint]) -> Result<KneeReport, AnalyticsError> {
    if points.len() < 3 {
        return Err(AnalyticsError::InsufficientPoints(points.len()));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.offered.total_cmp(&b.offered));
    let knee_index = sorted.iter().position(|p| p.throughput < KNEE_FRACTION * p.offered);
    let rows = sorted
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let effective_rate = p.prefill_rate / p.mean_wave_size;
            let mu = mean_service(&PolicyParams {
                prompt_tokens: p.prompt_tokens,
                reuse_tokens: 0.0,
                mean_wave_size: p.mean_wave_size,
                prefill_rate: effective_rate,
                hit_rate: p.hit_rate,
            })?
            .mu;
            Ok(KneeRow {
                point: *p,
                effective_rate,
                analytic_mu: mu,
                relative_gap: (mu - p.throughput).abs() / mu,
                knee: Some(i) == knee_index,
            })
        })
        .collect::<Result<Vec<_>, AnalyticsError>>()?;

    let (mut plateau_throughput, mut plateau_mu, mut plateau_gap, mut calibrated_rate) = (None, None, None, None);
    if let Some(k) = knee_index {
        let tail = &rows[k..];
        let n = tail.len() as f64;
        let tput = tail.iter().map(|r| r.point.throughput).sum::<f64>() / n;
        let mu = tail.iter().map(|r| r.analytic_mu).sum::<f64>() / n;
        let m_bar = tail.iter().map(|r| r.point.mean_wave_size).sum::<f64>() / n;
        let l = tail.iter().map(|r| r.point.prompt_tokens).sum::<f64>() / n;
        let h = tail.iter().map(|r| r.point.hit_rate).sum::<f64>() / n;
        plateau_throughput = Some(tput);
        plateau_mu = Some(mu);
        plateau_gap = Some((mu - tput).abs() / mu);
        calibrated_rate = Some(calibrate_prefill_rate(tput, m_bar, l, h)?);
    }
    Ok(KneeReport { rows, knee_index, plateau_throughput, plateau_mu, plateau_gap, calibrated_rate })
}

impl KneeReport {
    pub const CSV_HEADER: &'static str =
        "offered_qps,throughput,p99_ttft,hit_rate,mean_wave_size,effective_rate,analytic_mu,relative_gap,knee";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let p = &r.point;
            let _ = writeln!(
                out,
                "{:.4},{:.4},{:.6},{:.6},{:.4},{:.4},{:.4},{:.6},{}",
                p.offered, p.throughput, p.p99, p.hit_rate, p.mean_wave_size, r.effective_rate, r.analytic_mu,
                r.relative_gap, r.knee as u8
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>9} {:>10} {:>9} {:>7} {:>7} {:>9} {:>9}  knee",
            "offered", "achieved", "P99(s)", "h", "M", "R_eff", "mu"
        );
        for r in &self.rows {
            let p = &r.point;
            let _ = writeln!(
                out,
                "{:>9.2} {:>10.2} {:>9.3} {:>7.3} {:>7.2} {:>9.1} {:>9.2}  {}",
                p.offered,
                p.throughput,
                p.p99,
                p.hit_rate,
                p.mean_wave_size,
                r.effective_rate,
                r.analytic_mu,
                if r.knee { "<-" } else { "" }
            );
        }
        match (self.plateau_throughput, self.plateau_mu, self.plateau_gap) {
            (Some(t), Some(mu), Some(gap)) => {
                let _ = writeln!(out, "plateau {t:.2} req/s vs analytic mu {mu:.2} req/s (gap {:.1}%)", gap * 100.0);
            }
            _ => {
                let _ = writeln!(out, "no knee within the sweep");
            }
        }
        out
    }
}
