//! Normalization, marginals and loss monotonicity of the forward model.

use nalgebra::DMatrix;
use pnrcal::detector::{ConvolutionMatrix, LossMatrix, MultiplexConfig};
use pnrcal::forward::{predict_joint, predict_single, CorrelatedState, JointPhotonStatistics};
use proptest::prelude::*;

const N: usize = 7;

fn joint_state(entries: &[f64]) -> JointPhotonStatistics {
    let mut m = DMatrix::from_column_slice(N, N, entries);
    m /= m.sum();
    JointPhotonStatistics::new(m).unwrap()
}

fn detectors() -> (ConvolutionMatrix, ConvolutionMatrix) {
    (
        ConvolutionMatrix::new(&MultiplexConfig::uniform(4).unwrap(), N).unwrap(),
        ConvolutionMatrix::new(&MultiplexConfig::new(vec![0.2, 0.3, 0.5]).unwrap(), N).unwrap(),
    )
}

proptest! {
    #[test]
    fn joint_prediction_is_normalized_and_consistent(
        entries in prop::collection::vec(0.0f64..1.0, N * N),
        eta1 in 0.0f64..=1.0,
        eta2 in 0.0f64..=1.0,
    ) {
        prop_assume!(entries.iter().sum::<f64>() > 0.1);
        let sigma = joint_state(&entries);
        let (c1, c2) = detectors();
        let p = predict_joint(&c1, eta1, &sigma, eta2, &c2).unwrap().probabilities();
        prop_assert!((p.sum() - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| v >= -1e-15));

        let rows = predict_single(&c1, &LossMatrix::new(eta1, N).unwrap(), &sigma.row_marginal()).unwrap();
        let cols = predict_single(&c2, &LossMatrix::new(eta2, N).unwrap(), &sigma.column_marginal()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            prop_assert!((p.row(i).sum() - r).abs() < 1e-12);
        }
        for (j, c) in cols.iter().enumerate() {
            prop_assert!((p.column(j).sum() - c).abs() < 1e-12);
        }
    }

    #[test]
    fn no_click_probability_grows_with_loss(
        weights in prop::collection::vec(0.0f64..1.0, N),
        eta_hi in 0.0f64..=1.0,
        shrink in 0.0f64..=1.0,
        other in 0.0f64..=1.0,
    ) {
        prop_assume!(weights.iter().sum::<f64>() > 0.1);
        let sigma = CorrelatedState::normalized(weights).unwrap().to_joint();
        let (c1, c2) = detectors();
        let eta_lo = eta_hi * shrink;
        let p00 = |e1, e2| predict_joint(&c1, e1, &sigma, e2, &c2).unwrap().probabilities()[(0, 0)];
        prop_assert!(p00(eta_lo, other) >= p00(eta_hi, other) - 1e-15);
        prop_assert!(p00(other, eta_lo) >= p00(other, eta_hi) - 1e-15);
    }
}

#[test]
fn single_photon_lossy_any_detector() {
    for bins in [1, 2, 8] {
        let c = ConvolutionMatrix::new(&MultiplexConfig::uniform(bins).unwrap(), 4).unwrap();
        let p =
            predict_single(&c, &LossMatrix::new(0.3, 4).unwrap(), &[0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((p[0] - 0.7).abs() < 1e-15 && (p[1] - 0.3).abs() < 1e-15);
        assert!(p[2..].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn transposition_swaps_detectors() {
    let sigma = joint_state(
        &(0..N * N)
            .map(|i| ((i * 7) % 11) as f64)
            .collect::<Vec<_>>(),
    );
    let (c1, c2) = detectors();
    let p = predict_joint(&c1, 0.4, &sigma, 0.7, &c2)
        .unwrap()
        .probabilities();
    let swapped = JointPhotonStatistics::new(sigma.matrix().transpose()).unwrap();
    let q = predict_joint(&c2, 0.7, &swapped, 0.4, &c1)
        .unwrap()
        .probabilities();
    assert!((p.transpose() - q).amax() < 1e-15);
}
