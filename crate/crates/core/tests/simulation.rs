use std::f64::consts::PI;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use pathbell::counting::{
    coincidences, heralded_probabilities, two_detector_counts, two_detector_probabilities, EstimatedProbabilities,
    Mode, HERALD_CHANNEL,
};
use pathbell::optics::bell_input_state;
use pathbell::sim::{
    run_experiment, sample_outcomes, simulate_tags, sub_seed, DetectorModel, Role, RunPlan, SettingSpec,
    SimulatedStream, SourceConfig,
};
use pathbell::DensityMatrix;

fn ideal() -> DensityMatrix {
    DensityMatrix::from_pure(&bell_input_state(None))
}

fn detectors(mode: Mode, f: impl Fn(u8) -> DetectorModel) -> Vec<DetectorModel> {
    let n = match mode {
        Mode::Heralded => 5,
        Mode::TwoDetector => 2,
    };
    (1..=n).map(f).collect()
}

fn plan(mode: Mode, settings: &[(f64, f64)], seed: u64) -> RunPlan {
    RunPlan {
        mode,
        settings: settings
            .iter()
            .enumerate()
            .map(|(i, &(theta, delta))| SettingSpec {
                id: format!("s{i}"),
                theta,
                delta,
            })
            .collect(),
        trials: 1,
        seed,
    }
}

fn quiet_source(rate: f64, duration: f64) -> SourceConfig {
    let mut s = SourceConfig::new(rate, duration);
    s.jitter_ps = 0.0;
    s
}

fn primary<'a>(streams: &'a [SimulatedStream], id: &str) -> &'a SimulatedStream {
    streams.iter().find(|s| s.setting_id == id && s.role == Role::Primary).unwrap()
}

fn orthogonal<'a>(streams: &'a [SimulatedStream], id: &str) -> &'a SimulatedStream {
    streams.iter().find(|s| s.setting_id == id && s.role == Role::Orthogonal).unwrap()
}

/// Standard error of `E = P00 + P11 − P01 − P10` from `n` multinomial draws.
fn correlation_stderr(est: &EstimatedProbabilities) -> f64 {
    let e = est.correlation();
    ((1.0 - e * e) / est.total as f64).sqrt()
}

#[test]
fn outcome_sampling_examples() {
    let rho = ideal();
    assert_eq!(sample_outcomes(&rho, 0.3, 0.2, 0, 1).unwrap(), [0, 0, 0, 0]);

    let n = 1_000_000;
    let c = sample_outcomes(&rho, 0.0, 0.0, n, 7).unwrap();
    assert_eq!(c[1], 0);
    assert_eq!(c[2], 0);
    assert_eq!(c[0] + c[3], n);
    assert!((c[0] as f64 - 5e5).abs() < 4.0 * 500.0);

    let c = sample_outcomes(&rho, PI / 8.0, 0.0, n, 8).unwrap();
    let p = (PI / 8.0).cos().powi(2) / 2.0;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    assert!((c[0] as f64 / n as f64 - p).abs() < 4.0 * sigma);
}

#[test]
fn signal_rate_matches_pair_rate() {
    let src = SourceConfig::new(4600.0, 1.0);
    let dets = detectors(Mode::Heralded, DetectorModel::ideal);
    let streams = simulate_tags(&src, &dets, &plan(Mode::Heralded, &[(0.0, 0.0)], 3), 0).unwrap();
    let s = &streams[0].stream;
    let signal: u64 = (1..=4).map(|c| s.count_channel(c)).sum();
    assert!((signal as f64 - 4600.0).abs() < 4.0 * 4600f64.sqrt(), "{signal}");
}

#[test]
fn blind_detectors_produce_nothing() {
    let src = SourceConfig::new(4600.0, 1.0);
    let dets = detectors(Mode::Heralded, |c| DetectorModel {
        efficiency: 0.0,
        dark_rate: 0.0,
        ..DetectorModel::new(c)
    });
    let streams = simulate_tags(&src, &dets, &plan(Mode::Heralded, &[(0.0, 0.0)], 3), 0).unwrap();
    assert!(streams[0].stream.is_empty());
}

#[test]
fn dead_time_saturates_dark_counts() {
    let src = SourceConfig::new(1.0, 1.0);
    let dets = detectors(Mode::TwoDetector, |c| DetectorModel {
        channel: c,
        efficiency: 0.0,
        dark_rate: 1e6,
        dead_time_s: 1.0,
    });
    let streams = simulate_tags(&src, &dets, &plan(Mode::TwoDetector, &[(0.0, 0.0)], 5), 0).unwrap();
    for s in &streams {
        assert!(s.stream.count_channel(1) <= 1 && s.stream.count_channel(2) <= 1);
    }
}

#[test]
fn accepted_tags_respect_dead_time() {
    let src = SourceConfig::new(2e6, 0.05);
    let dead_s = 1e-6;
    let dets = detectors(Mode::Heralded, |c| DetectorModel {
        channel: c,
        efficiency: 0.9,
        dark_rate: 2e5,
        dead_time_s: dead_s,
    });
    let streams = simulate_tags(&src, &dets, &plan(Mode::Heralded, &[(0.4, 0.1)], 11), 0).unwrap();
    let dead_ps = (dead_s * 1e12) as u64;
    for ch in 1..=5u8 {
        let times: Vec<u64> = streams[0].stream.tags().iter().filter(|t| t.channel == ch).map(|t| t.t).collect();
        assert!(times.len() > 1000);
        assert!(times.windows(2).all(|w| w[1] - w[0] >= dead_ps), "channel {ch}");
    }
}

#[test]
fn channel_counts_are_poisson() {
    // Unit efficiency, no dead time: each channel's count is Poisson with
    // mean rate·T·p_j, so Σ (n − μ)²/μ over the runs is χ² with one degree
    // of freedom per run.
    let rate = 4600.0;
    let src = quiet_source(rate, 1.0);
    let dets = detectors(Mode::Heralded, DetectorModel::ideal);
    let (theta, delta) = (PI / 8.0, 0.0);
    let c2 = (PI / 8.0).cos().powi(2) / 2.0;
    let s2 = 0.5 - c2;
    let means = [rate * c2, rate * s2, rate * s2, rate * c2, rate];
    let runs = 50;
    let mut stat = [0.0f64; 5];
    for run in 0..runs {
        let mut p = plan(Mode::Heralded, &[(theta, delta)], 1000 + run);
        p.trials = 1;
        let s = &simulate_tags(&src, &dets, &p, 0).unwrap()[0].stream;
        for (ch, mu) in means.iter().enumerate() {
            let n = s.count_channel(ch as u8 + 1) as f64;
            stat[ch] += (n - mu).powi(2) / mu;
        }
    }
    let chi2 = ChiSquared::new(runs as f64).unwrap();
    for (ch, x) in stat.iter().enumerate() {
        let p_value = chi2.sf(*x);
        assert!(p_value > 1e-3, "channel {}: χ² = {x}, p = {p_value}", ch + 1);
    }
}

#[test]
fn estimates_do_not_depend_on_common_efficiency() {
    let src = quiet_source(1e6, 1.0);
    let setting = [(0.3, 0.2)];
    let est = |eff: f64| {
        let dets = detectors(Mode::Heralded, |c| DetectorModel {
            efficiency: eff,
            ..DetectorModel::ideal(c)
        });
        let s = &simulate_tags(&src, &dets, &plan(Mode::Heralded, &setting, 21), 0).unwrap()[0];
        heralded_probabilities(&coincidences("s0", &s.stream, HERALD_CHANNEL, 1000)).unwrap()
    };
    let full = est(1.0);
    let half = est(0.5);
    assert!(full.total > 900_000);
    assert!(half.total < full.total / 3);
    for k in 0..4 {
        let sigma = (full.stderr[k].powi(2) + half.stderr[k].powi(2)).sqrt();
        let d = (full.probs.as_array()[k] - half.probs.as_array()[k]).abs();
        assert!(d < 3.0 * sigma, "outcome {k}: {d} vs σ {sigma}");
    }
}

#[test]
fn two_detector_correlation_tracks_ideal_curve() {
    let src = quiet_source(2e5, 0.1);
    let dets = detectors(Mode::TwoDetector, DetectorModel::ideal);
    let settings: Vec<(f64, f64)> = (0..32).map(|k| (k as f64 * PI / 32.0, 0.1)).collect();
    let p = plan(Mode::TwoDetector, &settings, 99);
    let streams = simulate_tags(&src, &dets, &p, 0).unwrap();
    for (i, &(theta, delta)) in settings.iter().enumerate() {
        let id = format!("s{i}");
        let a = two_detector_counts(&id, &primary(&streams, &id).stream);
        let b = two_detector_counts(&id, &orthogonal(&streams, &id).stream);
        let est = two_detector_probabilities(&a, &b).unwrap();
        let want = (2.0 * (theta + delta)).cos();
        let sigma = correlation_stderr(&est).max(1e-4);
        assert!((est.correlation() - want).abs() < 3.0 * sigma, "setting {i}: {} vs {want}", est.correlation());
    }
}

#[test]
fn heralded_and_two_detector_probabilities_agree() {
    let src = quiet_source(2e5, 0.2);
    let settings = [(PI / 8.0, 0.0), (PI / 8.0, PI / 4.0), (0.7, 0.4)];
    let h = simulate_tags(&src, &detectors(Mode::Heralded, DetectorModel::ideal), &plan(Mode::Heralded, &settings, 5), 0)
        .unwrap();
    let t = simulate_tags(
        &src,
        &detectors(Mode::TwoDetector, DetectorModel::ideal),
        &plan(Mode::TwoDetector, &settings, 6),
        0,
    )
    .unwrap();
    for i in 0..settings.len() {
        let id = format!("s{i}");
        let eh = heralded_probabilities(&coincidences(&id, &primary(&h, &id).stream, HERALD_CHANNEL, 1000)).unwrap();
        let a = two_detector_counts(&id, &primary(&t, &id).stream);
        let b = two_detector_counts(&id, &orthogonal(&t, &id).stream);
        let et = two_detector_probabilities(&a, &b).unwrap();
        for k in 0..4 {
            let sigma = (eh.stderr[k].powi(2) + et.stderr[k].powi(2)).sqrt().max(1e-6);
            let d = (eh.probs.as_array()[k] - et.probs.as_array()[k]).abs();
            assert!(d < 3.0 * sigma, "setting {i}, outcome {k}: {d} vs σ {sigma}");
        }
    }
}

#[test]
fn streams_are_reproducible_and_independent_of_order() {
    let src = SourceConfig::new(4600.0, 0.5);
    let dets = detectors(Mode::Heralded, DetectorModel::new);
    let mut p = plan(Mode::Heralded, &[(0.1, 0.2), (0.5, 0.3)], 42);
    p.trials = 4;
    let a = simulate_tags(&src, &dets, &p, 3).unwrap();
    let b = simulate_tags(&src, &dets, &p, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[1].seed, sub_seed(42, 3, 1));
    assert_ne!(a[0].stream, simulate_tags(&src, &dets, &p, 2).unwrap()[0].stream);

    // reduced records of the full run equal those of the trial on its own
    let records = run_experiment(&src, &dets, &p, 1000).unwrap();
    let r = records.iter().find(|r| r.trial == 3 && r.setting_id == "s1").unwrap();
    let direct = coincidences("s1", &a[1].stream, HERALD_CHANNEL, 1000);
    assert_eq!(r.primary, direct);
}
