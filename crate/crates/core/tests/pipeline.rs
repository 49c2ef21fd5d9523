use std::f64::consts::{FRAC_PI_4, SQRT_2};

use dlcz::analysis::{chsh_from_log, compute_g_si, gate_and_count, GateConfig};
use dlcz::predictor::{correlation_E, ChshAngles, CountQuartet};
use dlcz::simulator::{
    chsh_settings, click_probabilities, expected_g_si, run_trials, run_trials_with_tally,
    tally_trials, AnalyzerSetting, ExperimentConfig,
};
use rand::SeedableRng;
use rand_distr::{Distribution, Poisson};
use rand_pcg::Pcg64Mcg;

fn lossy() -> ExperimentConfig {
    ExperimentConfig {
        excitation_prob: 0.2,
        det_eff_s: 0.4,
        det_eff_i: 0.6,
        bg_prob_s: 0.01,
        bg_prob_i: 0.02,
        visibility: 0.95,
        ..ExperimentConfig::default()
    }
}

fn within(x: f64, mean: f64, sigma: f64, k: f64) -> bool {
    (x - mean).abs() <= k * sigma
}

#[test]
fn click_rates_match_closed_form() {
    let config = lossy();
    let settings = vec![
        AnalyzerSetting::degrees(-22.5, 0.0),
        AnalyzerSetting::degrees(67.5, -45.0),
        AnalyzerSetting::open(),
    ];
    let n = 1_000_000;
    let tallies = tally_trials(&config, &settings, n, 31).unwrap();
    for (s, t) in settings.iter().zip(&tallies) {
        let p = click_probabilities(&config, s).unwrap();
        for (count, prob) in [
            (t.signal, p.signal),
            (t.idler, p.idler),
            (t.coincidences, p.coincidence),
        ] {
            let sigma = (n as f64 * prob * (1.0 - prob)).sqrt();
            assert!(
                within(count as f64, n as f64 * prob, sigma, 4.0),
                "{s:?}: {count} vs {}",
                n as f64 * prob
            );
        }
    }
}

#[test]
fn gating_reproduces_generator_counts() {
    let config = lossy();
    let settings = chsh_settings(-22.5, 22.5, 0.0, -45.0);
    let (log, tallies) = run_trials_with_tally(&config, &settings, 20_000, 5).unwrap();
    let table = gate_and_count(&log, &GateConfig::from_config(&config)).unwrap();
    for (c, t) in table.counts.iter().zip(&tallies) {
        assert_eq!(
            (c.n_trials, c.n_s, c.n_i, c.n_si),
            (t.trials, t.signal, t.idler, t.coincidences)
        );
    }
}

#[test]
fn narrow_gates_drop_events() {
    let config = lossy();
    let log = run_trials(&config, &[AnalyzerSetting::open()], 50_000, 6).unwrap();
    let full = GateConfig::from_config(&config);
    let narrow = GateConfig {
        d2_width_ns: full.d2_width_ns / 2.0,
        ..full
    };
    let a = gate_and_count(&log, &full).unwrap().counts[0];
    let b = gate_and_count(&log, &narrow).unwrap().counts[0];
    assert_eq!(a.n_s, b.n_s);
    assert!(b.n_i < a.n_i && b.n_si <= a.n_si);
    let frac = b.n_i as f64 / a.n_i as f64;
    assert!((frac - 0.5).abs() < 0.05, "{frac}");
}

#[test]
fn g_si_matches_closed_form() {
    let configs = [
        ExperimentConfig::default(),
        lossy(),
        ExperimentConfig {
            delta_t_ns: 900.0,
            cycle_ns: 2000.0,
            dark_ns: 1500.0,
            ..lossy()
        },
        ExperimentConfig {
            excitation_prob: 0.02,
            bg_prob_i: 0.05,
            ..lossy()
        },
        ExperimentConfig {
            excitation_prob: 0.6,
            det_eff_s: 0.9,
            det_eff_i: 0.9,
            ..lossy()
        },
    ];
    for (k, config) in configs.iter().enumerate() {
        let log = run_trials(config, &[AnalyzerSetting::open()], 2_000_000, 40 + k as u64).unwrap();
        let counts = gate_and_count(&log, &GateConfig::from_config(config))
            .unwrap()
            .counts[0];
        let g = compute_g_si(&counts).unwrap();
        let want = expected_g_si(config, config.delta_t_ns).unwrap();
        assert!(
            within(g.g_si, want, g.sigma, 4.0),
            "config {k}: {} ± {} vs {want}",
            g.g_si,
            g.sigma
        );
    }
}

#[test]
fn independent_channels_have_unit_g_si() {
    let config = ExperimentConfig {
        excitation_prob: 0.0,
        bg_prob_s: 0.05,
        bg_prob_i: 0.05,
        ..ExperimentConfig::default()
    };
    assert!((expected_g_si(&config, 200.0).unwrap() - 1.0).abs() < 1e-12);
    let log = run_trials(&config, &[AnalyzerSetting::open()], 1_000_000, 8).unwrap();
    let g = compute_g_si(
        &gate_and_count(&log, &GateConfig::from_config(&config))
            .unwrap()
            .counts[0],
    )
    .unwrap();
    assert!(
        within(g.g_si, 1.0, g.sigma, 3.0),
        "{} ± {}",
        g.g_si,
        g.sigma
    );
}

#[test]
fn maximal_mixing_reaches_tsirelson() {
    let config = ExperimentConfig {
        eta: FRAC_PI_4,
        excitation_prob: 0.5,
        retrieval_eff: 1.0,
        det_eff_s: 1.0,
        det_eff_i: 1.0,
        bg_prob_s: 0.0,
        bg_prob_i: 0.0,
        memory_tau_ns: f64::INFINITY,
        retrieval_tau_ns: f64::INFINITY,
        ..ExperimentConfig::default()
    };
    let angles = ChshAngles::canonical();
    let log = run_trials(&config, &chsh_settings(-22.5, 22.5, 0.0, -45.0), 200_000, 9).unwrap();
    let r = chsh_from_log(&log, &GateConfig::from_config(&config), &angles).unwrap();
    assert!(
        within(r.s, 2.0 * SQRT_2, r.sigma_s, 3.0),
        "{} ± {}",
        r.s,
        r.sigma_s
    );
}

#[test]
fn chsh_error_shrinks_with_statistics() {
    let config = lossy();
    let angles = ChshAngles::canonical();
    let settings = chsh_settings(-22.5, 22.5, 0.0, -45.0);
    let gates = GateConfig::from_config(&config);
    let small = chsh_from_log(
        &run_trials(&config, &settings, 50_000, 1).unwrap(),
        &gates,
        &angles,
    )
    .unwrap();
    let large = chsh_from_log(
        &run_trials(&config, &settings, 200_000, 2).unwrap(),
        &gates,
        &angles,
    )
    .unwrap();
    let ratio = large.sigma_s / small.sigma_s;
    assert!((ratio - 0.5).abs() < 0.03, "{ratio}");
    let combined = (small.sigma_s.powi(2) + large.sigma_s.powi(2)).sqrt();
    assert!(within(small.s, large.s, combined, 4.0));
}

#[test]
fn quoted_sigma_matches_seed_scatter() {
    let config = lossy();
    let angles = ChshAngles::canonical();
    let settings = chsh_settings(-22.5, 22.5, 0.0, -45.0);
    let gates = GateConfig::from_config(&config);
    let runs: Vec<(f64, f64)> = (0..50)
        .map(|seed| {
            let r = chsh_from_log(
                &run_trials(&config, &settings, 10_000, 1000 + seed).unwrap(),
                &gates,
                &angles,
            )
            .unwrap();
            (r.s, r.sigma_s)
        })
        .collect();
    let mean = runs.iter().map(|r| r.0).sum::<f64>() / runs.len() as f64;
    let scatter =
        (runs.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / (runs.len() - 1) as f64).sqrt();
    let quoted = runs.iter().map(|r| r.1).sum::<f64>() / runs.len() as f64;
    // 50 samples pin the scatter to about 10%.
    assert!(
        (scatter / quoted - 1.0).abs() < 0.3,
        "scatter {scatter} vs quoted {quoted}"
    );
}

/// Parametric bootstrap: resample each count as Poisson around its observed
/// value and compare the spread of E with the propagated σ_E.
#[test]
fn sigma_e_matches_bootstrap() {
    let mut rng = Pcg64Mcg::seed_from_u64(77);
    for q in [
        [419.0, 420.0, 92.0, 92.0],
        [93.0, 89.0, 353.0, 354.0],
        [2500.0, 1800.0, 900.0, 1200.0],
    ] {
        let quoted = correlation_E(&CountQuartet::new(q[0], q[1], q[2], q[3]).unwrap()).unwrap();
        let dists: Vec<Poisson<f64>> = q.iter().map(|&c| Poisson::new(c).unwrap()).collect();
        let samples: Vec<f64> = (0..100_000)
            .map(|_| {
                let r: Vec<f64> = dists.iter().map(|d| d.sample(&mut rng)).collect();
                correlation_E(&CountQuartet::new(r[0], r[1], r[2], r[3]).unwrap())
                    .unwrap()
                    .value
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let sd = (samples.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
            / (samples.len() - 1) as f64)
            .sqrt();
        assert!(
            (sd / quoted.sigma - 1.0).abs() < 0.05,
            "{q:?}: bootstrap {sd} vs {}",
            quoted.sigma
        );
    }
}

#[test]
fn doubling_trials_keeps_e() {
    let config = lossy();
    let angles = ChshAngles::canonical();
    let settings = chsh_settings(-22.5, 22.5, 0.0, -45.0);
    let gates = GateConfig::from_config(&config);
    let a = chsh_from_log(
        &run_trials(&config, &settings, 100_000, 3).unwrap(),
        &gates,
        &angles,
    )
    .unwrap();
    let b = chsh_from_log(
        &run_trials(&config, &settings, 200_000, 4).unwrap(),
        &gates,
        &angles,
    )
    .unwrap();
    for (x, y) in a.e_values.iter().zip(&b.e_values) {
        let s = (x.sigma.powi(2) + y.sigma.powi(2)).sqrt();
        assert!(within(x.value, y.value, s, 4.0), "{x:?} vs {y:?}");
    }
}
