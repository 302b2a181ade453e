//! Estimator round trips on synthetic data.

use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use pnrcal::background::add_background;
use pnrcal::detector::{ConvolutionMatrix, MultiplexConfig, DEFAULT_TRUNCATION};
use pnrcal::error::{Error, Parameter};
use pnrcal::estimation::{
    biased_klyshko, estimate_efficiencies, fit_diagonal_state, klyshko_efficiency, objective,
    reconstruct_joint_statistics, scan_residual_landscape, EfficiencyGrid, EstimatorOptions,
    KlyshkoRates,
};
use pnrcal::forward::{predict_joint, CorrelatedState, JointOutcomeStatistics};
use pnrcal::simulation::{
    make_source_state, simulate_clicks_mc, ExperimentConfig, SourceConfig, SourceKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N: usize = DEFAULT_TRUNCATION;

fn tmd() -> ConvolutionMatrix {
    ConvolutionMatrix::new(&MultiplexConfig::uniform(8).unwrap(), N).unwrap()
}

fn clicks(state: &CorrelatedState, eta1: f64, eta2: f64) -> JointOutcomeStatistics {
    predict_joint(&tmd(), eta1, &state.to_joint(), eta2, &tmd()).unwrap()
}

fn tmsv(lambda: f64) -> CorrelatedState {
    make_source_state(&SourceConfig::tmsv(lambda, N)).unwrap()
}

#[test]
fn inner_fit_recovers_state() {
    let truth =
        CorrelatedState::normalized(vec![0.5, 0.2, 0.15, 0.1, 0.05, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let r = clicks(&truth, 0.6, 0.7);
    let fit = fit_diagonal_state(&r, 0.6, 0.7, &tmd(), &tmd()).unwrap();
    assert!(fit.converged);
    for (a, b) in fit.state().unwrap().diagonal().iter().zip(truth.diagonal()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-8);
    }
    let wrong = fit_diagonal_state(&r, 0.5, 0.7, &tmd(), &tmd()).unwrap();
    assert!(wrong.residual > fit.residual);
}

#[test]
fn paper_regime_recovery() {
    let r = clicks(&tmsv(0.3), 0.094, 0.080);
    let est = estimate_efficiencies(&r, &tmd(), &tmd(), &EstimatorOptions::default()).unwrap();
    assert!((est.eta1 - 0.094).abs() < 1e-3, "eta1 = {}", est.eta1);
    assert!((est.eta2 - 0.080).abs() < 1e-3, "eta2 = {}", est.eta2);
}

#[test]
fn residual_is_reproducible() {
    let r = clicks(&tmsv(0.4), 0.35, 0.55);
    let est = estimate_efficiencies(&r, &tmd(), &tmd(), &EstimatorOptions::default()).unwrap();
    let again = objective(&r, est.eta1, est.eta2, &est.weights, &tmd(), &tmd()).unwrap();
    assert_abs_diff_eq!(again, est.residual, epsilon = 1e-9);
}

#[test]
fn single_pair_data_reduces_to_klyshko() {
    let state = CorrelatedState::normalized(vec![0.7, 0.3]).unwrap();
    let mut weights = state.diagonal().to_vec();
    weights.resize(N, 0.0);
    let state = CorrelatedState::new(weights).unwrap();
    for (eta1, eta2) in [(0.08, 0.1), (0.45, 0.62), (0.9, 0.3)] {
        let r = clicks(&state, eta1, eta2);
        let (ks, ki) = klyshko_efficiency(&KlyshkoRates::from_histogram(&r)).unwrap();
        let est = estimate_efficiencies(&r, &tmd(), &tmd(), &EstimatorOptions::default()).unwrap();
        assert!((est.eta1 - ks).abs() < 1e-6, "{} vs {ks}", est.eta1);
        assert!((est.eta2 - ki).abs() < 1e-6, "{} vs {ki}", est.eta2);
    }
}

#[test]
fn klyshko_quotients_match_single_pair_simulation() {
    let mut cfg = ExperimentConfig::simple(
        SourceKind::CustomDiagonal {
            weights: vec![0.0, 1.0],
        },
        0.08,
        0.1,
        1_000_000,
        11,
    )
    .unwrap();
    cfg.source.truncation = 2;
    let r = simulate_clicks_mc(&cfg).unwrap().statistics;
    let (s, i) = klyshko_efficiency(&KlyshkoRates::from_histogram(&r)).unwrap();
    // eta_s = Rc / Ri estimates detector 1 from about 1e5 idler clicks
    let sd = |eta: f64, singles: f64| (eta * (1.0 - eta) / singles).sqrt();
    assert!((s - 0.08).abs() < 4.0 * sd(0.08, 1e5), "{s}");
    assert!((i - 0.1).abs() < 4.0 * sd(0.1, 8e4), "{i}");
}

#[test]
fn biased_klyshko_enumeration_oracle() {
    // binary detectors on {1 pair w.p. s11, 2 pairs w.p. s22}: enumerate
    // independent detection of each photon
    let (s11, s22, es, ei) = (0.9, 0.1, 0.5, 0.5);
    let click = |n: i32, eta: f64| 1.0 - (1.0 - eta).powi(n);
    let idler = s11 * click(1, ei) + s22 * click(2, ei);
    let coinc = s11 * click(1, es) * click(1, ei) + s22 * click(2, es) * click(2, ei);
    let enumerated = coinc / idler;
    let formula = biased_klyshko(s11, s22, es, ei).unwrap();
    assert_abs_diff_eq!(formula, enumerated, epsilon = 1e-15);
    assert_abs_diff_eq!(formula, 0.5357142857142857, epsilon = 1e-15);
}

#[test]
fn biased_klyshko_overestimates() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let s22 = rng.random_range(1e-3..1.0);
        let es = rng.random_range(0.01..0.99);
        let ei = rng.random_range(0.01..0.99);
        assert!(biased_klyshko(1.0 - s22, s22, es, ei).unwrap() > es);
    }
}

#[test]
fn monte_carlo_recovery() {
    let cfg = ExperimentConfig::simple(
        SourceKind::TwoModeSqueezedVacuum { lambda: 0.4 },
        0.3,
        0.2,
        1_000_000,
        3,
    )
    .unwrap();
    let r = simulate_clicks_mc(&cfg).unwrap().statistics;
    let est = estimate_efficiencies(&r, &tmd(), &tmd(), &EstimatorOptions::default()).unwrap();
    assert!((est.eta1 - 0.3).abs() < 0.01, "eta1 = {}", est.eta1);
    assert!((est.eta2 - 0.2).abs() < 0.01, "eta2 = {}", est.eta2);
}

#[test]
fn random_noiseless_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let eta1 = rng.random_range(0.05..0.95);
        let eta2 = rng.random_range(0.05..0.95);
        let state = if rng.random_bool(0.5) {
            tmsv(rng.random_range(0.05..0.5))
        } else {
            let w: Vec<f64> = (0..N)
                .map(|i| {
                    if i < 5 {
                        rng.random_range(0.0..1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            CorrelatedState::normalized(w).unwrap()
        };
        let r = clicks(&state, eta1, eta2);
        let est = estimate_efficiencies(&r, &tmd(), &tmd(), &EstimatorOptions::default()).unwrap();
        assert!(
            (est.eta1 - eta1).abs() < 1e-3 && (est.eta2 - eta2).abs() < 1e-3,
            "truth ({eta1}, {eta2}) estimate ({}, {})",
            est.eta1,
            est.eta2
        );
    }
}

#[test]
fn scaling_counts_keeps_argmin() {
    let p = clicks(&tmsv(0.35), 0.4, 0.6).probabilities();
    let counts = p.map(|v| (v * 1e6).round() as u64);
    let scaled = counts.map(|c| c * 7);
    let a = estimate_efficiencies(
        &JointOutcomeStatistics::from_counts(counts).unwrap(),
        &tmd(),
        &tmd(),
        &EstimatorOptions::default(),
    )
    .unwrap();
    let b = estimate_efficiencies(
        &JointOutcomeStatistics::from_counts(scaled).unwrap(),
        &tmd(),
        &tmd(),
        &EstimatorOptions::default(),
    )
    .unwrap();
    assert_eq!((a.eta1, a.eta2), (b.eta1, b.eta2));
}

#[test]
fn result_is_independent_of_thread_count() {
    let r = clicks(&tmsv(0.3), 0.25, 0.45);
    let run = || estimate_efficiencies(&r, &tmd(), &tmd(), &EstimatorOptions::default()).unwrap();
    let parallel = run();
    let serial = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(run);
    assert_eq!(parallel, serial);
}

#[test]
fn vacuum_is_ambiguous() {
    let mut p = DMatrix::zeros(9, 9);
    p[(0, 0)] = 1.0;
    let r = JointOutcomeStatistics::Probabilities(p);
    match estimate_efficiencies(&r, &tmd(), &tmd(), &EstimatorOptions::default()) {
        Err(Error::Ambiguous {
            unidentifiable,
            best,
        }) => {
            assert_eq!(unidentifiable, vec![Parameter::Eta1, Parameter::Eta2]);
            assert_eq!((best.eta1, best.eta2), (0.0, 0.0));
        }
        other => panic!("expected ambiguity, got {other:?}"),
    }
}

#[test]
fn landscape_properties() {
    let c1 = ConvolutionMatrix::new(&MultiplexConfig::uniform(8).unwrap(), N).unwrap();
    let c2 = ConvolutionMatrix::new(
        &MultiplexConfig::time_multiplexed(0.5, &[0.5, 0.48]).unwrap(),
        N,
    )
    .unwrap();
    let state = tmsv(0.4);
    let r = predict_joint(&c1, 0.3, &state.to_joint(), 0.7, &c2).unwrap();
    let grid = EfficiencyGrid::parse("0.1:0.9:17").unwrap();
    let landscape = scan_residual_landscape(&r, &c1, &c2, &grid).unwrap();
    // 0.3 and 0.7 are grid points
    assert!(landscape.values[(4, 12)] < 1e-8);
    assert_eq!(landscape.basins().len(), 1);

    let swapped = scan_residual_landscape(&r.transpose(), &c2, &c1, &grid).unwrap();
    assert!((landscape.values.transpose() - swapped.values).amax() < 1e-12);
}

#[test]
fn reconstruction_of_diagonal_state() {
    let state = tmsv(0.4);
    let r = clicks(&state, 0.6, 0.65);
    let rec = reconstruct_joint_statistics(&r, 0.6, 0.65, &tmd(), &tmd()).unwrap();
    assert!(
        rec.sigma.off_diagonal_mass() < 1e-6,
        "{}",
        rec.sigma.off_diagonal_mass()
    );
    assert!(rec.unpaired_fraction < 1e-6);
}

#[test]
fn reconstruction_sees_background() {
    let sigma = add_background(&tmsv(0.3).to_joint(), 0.2, 0.2).unwrap();
    let r = predict_joint(&tmd(), 0.6, &sigma, 0.65, &tmd()).unwrap();
    let rec = reconstruct_joint_statistics(&r, 0.6, 0.65, &tmd(), &tmd()).unwrap();
    assert!(rec.sigma.off_diagonal_mass() > 0.05);
    assert!(rec.unpaired_fraction > 0.1, "{}", rec.unpaired_fraction);
}
