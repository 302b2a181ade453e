//! Background model, equivalence solver and subtraction pipeline.

use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use pnrcal::background::{
    add_background, background_matrix, convolve_outcomes, equivalence_mismatch,
    solve_loss_background_equivalence, subtract_background, BackgroundModel, EquivalenceOptions,
};
use pnrcal::detector::{ConvolutionMatrix, MultiplexConfig};
use pnrcal::estimation::reconstruct_joint_statistics;
use pnrcal::forward::JointOutcomeStatistics;
use pnrcal::simulation::{
    make_source_state, simulate_clicks_exact, simulate_clicks_mc, DetectorSetup, ExperimentConfig,
    SourceConfig, SourceKind,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson};

#[test]
fn poisson_backgrounds_add() {
    let n = 30;
    let d = |a| background_matrix(&BackgroundModel::new(a, n).unwrap());
    let product = d(0.2) * d(0.3);
    let direct = d(0.5);
    // columns far from the truncation edge are unaffected by renormalization
    for col in 0..15 {
        for row in 0..n {
            assert_abs_diff_eq!(product[(row, col)], direct[(row, col)], epsilon = 1e-10);
        }
    }
}

#[test]
fn add_background_matches_sampling() {
    let lambda: f64 = 0.4;
    let (a1, a2) = (0.3, 0.1);
    let n = 25;
    let sigma = make_source_state(&SourceConfig::tmsv(lambda, n))
        .unwrap()
        .to_joint();
    let exact = add_background(&sigma, a1, a2).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pairs = Geometric::new(1.0 - lambda * lambda).unwrap();
    let (b1, b2) = (Poisson::new(a1).unwrap(), Poisson::new(a2).unwrap());
    let samples = 1_000_000;
    let mut hist = DMatrix::<f64>::zeros(n, n);
    for _ in 0..samples {
        let k = pairs.sample(&mut rng) as usize;
        let m = k + b1.sample(&mut rng) as usize;
        let l = k + b2.sample(&mut rng) as usize;
        if m < n && l < n {
            hist[(m, l)] += 1.0;
        }
    }
    hist /= samples as f64;
    let mut cells = 0;
    let mut outside = 0;
    for (p, q) in exact.matrix().iter().zip(hist.iter()) {
        if *p < 1e-12 {
            continue;
        }
        cells += 1;
        if (p - q).abs() > 3.0 * (p * (1.0 - p) / samples as f64).sqrt() {
            outside += 1;
        }
    }
    assert!(
        outside as f64 <= 0.01 * cells as f64 + 1.0,
        "{outside} of {cells} cells outside 3 sigma"
    );
}

fn experiment(lambda: f64, alpha: f64, eta: f64) -> ExperimentConfig {
    let tmd = MultiplexConfig::uniform(8).unwrap();
    ExperimentConfig {
        source: SourceConfig::tmsv(lambda, 20),
        detector1: DetectorSetup::new(tmd.clone(), eta, alpha),
        detector2: DetectorSetup::new(tmd, eta, alpha),
        trials: 1,
        seed: 0,
    }
}

fn subtraction_case(
    lambda: f64,
    alpha: f64,
    eta: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let clean = simulate_clicks_exact(&experiment(lambda, 0.0, eta))
        .unwrap()
        .probabilities();
    let measured = simulate_clicks_exact(&experiment(lambda, alpha, eta))
        .unwrap()
        .probabilities();
    let background = simulate_clicks_exact(&experiment(0.0, alpha, eta))
        .unwrap()
        .probabilities();
    let c = ConvolutionMatrix::new(&MultiplexConfig::uniform(8).unwrap(), 9).unwrap();
    let out = subtract_background(
        &JointOutcomeStatistics::Probabilities(measured.clone()),
        &JointOutcomeStatistics::Probabilities(background.clone()),
        &c,
        &c,
    )
    .unwrap();
    (clean, measured, background, out.statistics.probabilities())
}

#[test]
fn subtraction_recovers_clean_clicks() {
    for (lambda, alpha, eta) in [(0.2, 0.3, 0.6), (0.3, 0.1, 0.8), (0.1, 0.5, 0.5)] {
        let (clean, _, _, recovered) = subtraction_case(lambda, alpha, eta);
        let err = (recovered - clean).amax();
        assert!(err < 1e-6, "max error {err} for {lambda}, {alpha}, {eta}");
    }
}

#[test]
fn click_level_convolution_is_wrong() {
    let (clean, measured, background, _) = subtraction_case(0.5, 0.8, 0.9);
    let naive = convolve_outcomes(&clean, &background);
    let gap = (naive - measured).amax();
    assert!(gap > 1e-3, "gap {gap}");
}

#[test]
fn subtraction_reduces_unpaired_fraction() {
    let c9 = ConvolutionMatrix::new(&MultiplexConfig::uniform(8).unwrap(), 9).unwrap();
    for (lambda, alpha) in [(0.2, 0.3), (0.3, 0.1)] {
        let (_, measured, _, recovered) = subtraction_case(lambda, alpha, 0.7);
        let before = reconstruct_joint_statistics(
            &JointOutcomeStatistics::Probabilities(measured),
            0.7,
            0.7,
            &c9,
            &c9,
        )
        .unwrap();
        let after = reconstruct_joint_statistics(
            &JointOutcomeStatistics::Probabilities(recovered),
            0.7,
            0.7,
            &c9,
            &c9,
        )
        .unwrap();
        assert!(after.unpaired_fraction < before.unpaired_fraction);
    }
}

#[test]
fn noisy_subtraction_reports_clipping() {
    let mut cfg = experiment(0.3, 0.3, 0.6);
    cfg.trials = 20_000;
    let measured = simulate_clicks_mc(&cfg).unwrap().statistics;
    cfg.source = SourceConfig::new(SourceKind::TwoModeSqueezedVacuum { lambda: 0.0 }, 20);
    cfg.seed = 1;
    let background = simulate_clicks_mc(&cfg).unwrap().statistics;
    let c = ConvolutionMatrix::new(&MultiplexConfig::uniform(8).unwrap(), 9).unwrap();
    let out = subtract_background(&measured, &background, &c, &c).unwrap();
    let p = out.statistics.probabilities();
    assert!(p.iter().all(|&v| v >= 0.0));
    assert_abs_diff_eq!(p.sum(), 1.0, epsilon = 1e-12);
    assert!(out.clipped_mass > 0.0);
}

#[test]
fn equivalence_points_satisfy_the_system() {
    let alphas = [0.0, 0.05, 0.2, 0.6, 1.0];
    for m in [1, 3, 6] {
        let points =
            solve_loss_background_equivalence(m, &alphas, &EquivalenceOptions::default()).unwrap();
        for p in &points {
            let mismatch =
                equivalence_mismatch(p.alpha, p.loss, &p.state_background, &p.state_lossy).unwrap();
            assert_abs_diff_eq!(mismatch, p.residual, epsilon = 1e-9);
            if p.solved {
                assert!(mismatch < 1e-8);
                assert_abs_diff_eq!(p.state_background.iter().sum::<f64>(), 1.0, epsilon = 1e-8);
                assert_abs_diff_eq!(p.state_lossy.iter().sum::<f64>(), 1.0, epsilon = 1e-8);
            }
        }
    }
}
