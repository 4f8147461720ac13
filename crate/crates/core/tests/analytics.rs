use prefixsim::analytics::{
    admission_wait, calibrate_prefill_rate, crossover, crossover_range, knee_report, mean_service, reuse_gap_to_full,
    service_gap, service_ratio, stability_expansion, AnalyticsError, KneePoint, PolicyParams, QueueParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-12)
}

fn params(rng: &mut ChaCha8Rng) -> PolicyParams {
    PolicyParams {
        prompt_tokens: rng.random_range(64.0..8192.0),
        reuse_tokens: 0.0,
        mean_wave_size: rng.random_range(1.0..128.0),
        prefill_rate: rng.random_range(50.0..50_000.0),
        hit_rate: rng.random_range(0.0..0.9),
    }
}

#[test]
fn gap_formulas_agree_with_direct_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10_000 {
        let p0 = params(&mut rng);
        let dh = rng.random_range(0.0..(0.99 - p0.hit_rate));
        let p1 = PolicyParams { hit_rate: p0.hit_rate + dh, ..p0 };
        let mu0 = mean_service(&p0).unwrap().mu;
        let mu1 = mean_service(&p1).unwrap().mu;

        let gap = service_gap(mu0, p0.hit_rate, dh).unwrap();
        assert!(close(gap, mu1 - mu0, 1e-9) || (mu1 - mu0).abs() < 1e-9 * mu1);
        let expansion =
            stability_expansion(p0.mean_wave_size, p0.prefill_rate, p0.prompt_tokens, p0.hit_rate, dh).unwrap();
        assert!(close(expansion, mu1 - mu0, 1e-9) || (mu1 - mu0).abs() < 1e-9 * mu1);
        assert!(close(service_ratio(&p1, &p0), mu1 / mu0, 1e-12));
        assert!(gap >= 0.0);
    }
}

#[test]
fn service_ratio_factors_multiply() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let (p0, p1) = (params(&mut rng), params(&mut rng));
        let direct = mean_service(&p1).unwrap().mu / mean_service(&p0).unwrap().mu;
        assert!(close(service_ratio(&p1, &p0), direct, 1e-12));
    }
}

#[test]
fn reuse_gap_scales_by_region_share() {
    assert!((reuse_gap_to_full(0.3, 640.0, 768.0) - 0.25).abs() < 1e-12);
    assert_eq!(reuse_gap_to_full(0.0, 640.0, 768.0), 0.0);
}

#[test]
fn crossover_is_a_fixed_point_of_the_queue_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..2000 {
        let mu = rng.random_range(1.0..500.0);
        let m = rng.random_range(1.0..100.0);
        let cs2 = rng.random_range(0.1..5.0);
        let c = crossover(mu, m, cs2);
        assert!(c.rho_star > 0.0 && c.rho_star < 1.0);
        // congestion term with no floor equals one wave time M/mu
        let q = QueueParams { lambda: c.lambda_star, c_s2: cs2, window_s: 0.0, wait_floor: 0.0 };
        let congestion = admission_wait(mu, &q).unwrap();
        assert!(close(congestion, m / mu, 1e-9));
    }
}

#[test]
fn crossover_monotonicity_and_limits() {
    let base = crossover(50.0, 10.0, 1.0).lambda_star;
    assert!(crossover(60.0, 10.0, 1.0).lambda_star > base);
    assert!(crossover(50.0, 20.0, 1.0).lambda_star > base);
    assert!(crossover(50.0, 10.0, 2.0).lambda_star < base);
    assert_eq!(crossover(50.0, 1.0, 1.0).lambda_star, 25.0);
    let big = crossover(50.0, 1e6, 1.0).lambda_star;
    assert!((50.0 - big).abs() <= 1e-5 * 50.0 && big < 50.0);
}

#[test]
fn admission_wait_grows_with_load_and_variance() {
    let mu = 40.0;
    let mut prev = 0.0;
    for i in 1..40 {
        let w = admission_wait(mu, &QueueParams::new(i as f64, 1.0, 0.05)).unwrap();
        assert!(w > prev);
        prev = w;
    }
    let lo = admission_wait(mu, &QueueParams::new(30.0, 0.5, 0.05)).unwrap();
    let hi = admission_wait(mu, &QueueParams::new(30.0, 4.0, 0.05)).unwrap();
    assert!(hi > lo);
    assert!(matches!(admission_wait(mu, &QueueParams::new(41.0, 1.0, 0.05)), Err(AnalyticsError::Unstable { .. })));
}

#[test]
fn reported_operating_points() {
    let c = crossover(50.1, 33.1, 1.0);
    assert!((c.lambda_star - 48.6).abs() <= 0.1, "{}", c.lambda_star);
    let (lo, hi) = crossover_range(50.1, 33.1);
    assert!((lo - 46.6).abs() <= 0.1 && (hi - 49.0).abs() <= 0.1, "{lo}..{hi}");

    let c = crossover(14.5, 9.75, 1.0);
    assert!((c.lambda_star - 13.1).abs() <= 0.1, "{}", c.lambda_star);
    let (lo, hi) = crossover_range(14.5, 9.75);
    assert!((lo - 11.5).abs() <= 0.1 && (hi - 13.5).abs() <= 0.1, "{lo}..{hi}");

    let r = calibrate_prefill_rate(49.8, 33.1, 768.0, 0.474).unwrap();
    assert!((r - 607.8).abs() <= 0.05 * 607.8, "{r}");
    // waves/s reading is off by the wave size
    let s = mean_service(&PolicyParams {
        prompt_tokens: 768.0,
        reuse_tokens: 0.0,
        mean_wave_size: 33.1,
        prefill_rate: r,
        hit_rate: 0.474,
    })
    .unwrap();
    assert!((s.waves_per_second(33.1) - 1.5).abs() < 0.05);
}

#[test]
fn default_simulator_rate_sits_near_fifty() {
    // aggregate prefill 32000 tokens/s, 768-token prompts, about 17% hits
    let mu: f64 = 32_000.0 / (768.0 * (1.0 - 0.17));
    assert!((mu - 50.0).abs() <= 1.0, "{mu}");
}

#[test]
fn domain_errors() {
    assert!(service_gap(10.0, 0.5, 0.5).is_err());
    assert!(service_gap(10.0, 0.5, -0.1).is_err());
    assert!(calibrate_prefill_rate(10.0, 1.0, 100.0, 1.0).is_err());
    assert!(matches!(knee_report(&[point(1.0, 1.0, 0.1)]), Err(AnalyticsError::InsufficientPoints(1))));
}

fn point(offered: f64, throughput: f64, p99: f64) -> KneePoint {
    KneePoint {
        offered,
        throughput,
        p99,
        hit_rate: 0.17,
        mean_wave_size: 30.0,
        prompt_tokens: 768.0,
        prefill_rate: 32_000.0,
    }
}

#[test]
fn knee_report_finds_first_saturated_point() {
    let pts = [point(30.0, 29.9, 0.3), point(40.0, 39.8, 0.5), point(50.0, 47.0, 2.0), point(60.0, 48.5, 6.0)];
    let report = knee_report(&pts).unwrap();
    assert_eq!(report.knee_index, Some(2));
    let mu: f64 = 32_000.0 / (768.0 * 0.83);
    assert!(close(report.rows[0].analytic_mu, mu, 1e-9));
    let plateau = (47.0 + 48.5) / 2.0;
    assert!(close(report.plateau_throughput.unwrap(), plateau, 1e-9));
    assert!(close(report.plateau_gap.unwrap(), (plateau - mu).abs() / mu, 1e-9));
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), pts.len() + 1);
    assert!(report.to_table().contains("knee"));

    let below = knee_report(&[point(10.0, 10.0, 0.1), point(20.0, 19.9, 0.2), point(30.0, 29.5, 0.3)]).unwrap();
    assert_eq!(below.knee_index, None);
    assert_eq!(below.plateau_throughput, None);
}
