//! Forward model: predicted click statistics of one or two detectors.

use nalgebra::{DMatrix, DVector};

use crate::detector::{check_efficiency, compose_povm_diagonals, ConvolutionMatrix, LossMatrix};
use crate::error::{invalid, Error, Result};

/// Tolerance on the total probability of states and outcome distributions.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Joint photon-number distribution of two beams: entry `(m, n)` is the
/// probability of `m` photons in beam 1 and `n` in beam 2.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPhotonStatistics {
    matrix: DMatrix<f64>,
}

impl JointPhotonStatistics {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "joint photon statistics must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        check_distribution(matrix.iter().copied(), "joint photon statistics")?;
        Ok(JointPhotonStatistics { matrix })
    }

    /// Skips validation; for internal results that are normalized by construction.
    pub(crate) fn from_raw(matrix: DMatrix<f64>) -> Self {
        JointPhotonStatistics { matrix }
    }

    /// Both beams in vacuum.
    pub fn vacuum(dim: usize) -> Self {
        let mut matrix = DMatrix::zeros(dim, dim);
        matrix[(0, 0)] = 1.0;
        JointPhotonStatistics { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn row_marginal(&self) -> Vec<f64> {
        self.matrix.row_iter().map(|r| r.sum()).collect()
    }

    pub fn column_marginal(&self) -> Vec<f64> {
        self.matrix.column_iter().map(|c| c.sum()).collect()
    }

    /// Mean photon number per beam, averaged over the two beams.
    pub fn mean_photon_number(&self) -> f64 {
        let mut total = 0.0;
        for ((m, n), p) in indexed(&self.matrix) {
            total += p * (m + n) as f64;
        }
        0.5 * total
    }

    /// Fraction of photons that arrive without a partner in the other beam.
    ///
    /// A cell with `m` and `n` photons contributes `|m - n|` unpaired photons
    /// out of `m + n`; the ratio of the photon-weighted sums is returned
    /// (0 for the vacuum).
    pub fn unpaired_fraction(&self) -> f64 {
        let mut unpaired = 0.0;
        let mut photons = 0.0;
        for ((m, n), p) in indexed(&self.matrix) {
            unpaired += p * m.abs_diff(n) as f64;
            photons += p * (m + n) as f64;
        }
        if photons > 0.0 {
            unpaired / photons
        } else {
            0.0
        }
    }

    /// Total probability off the diagonal.
    pub fn off_diagonal_mass(&self) -> f64 {
        indexed(&self.matrix)
            .filter(|((m, n), _)| m != n)
            .map(|(_, p)| p)
            .sum()
    }
}

fn indexed(matrix: &DMatrix<f64>) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
    let rows = matrix.nrows();
    matrix
        .iter()
        .enumerate()
        .map(move |(idx, &p)| ((idx % rows, idx / rows), p))
}

/// Twin-beam state with perfectly correlated photon numbers: `sigma(m, n) =
/// c_m` if `m == n`, else 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedState {
    diagonal: Vec<f64>,
}

impl CorrelatedState {
    pub fn new(diagonal: Vec<f64>) -> Result<Self> {
        if diagonal.is_empty() {
            return Err(invalid("correlated state needs at least one element"));
        }
        check_distribution(diagonal.iter().copied(), "correlated state")?;
        Ok(CorrelatedState { diagonal })
    }

    /// Normalizes a nonnegative vector before wrapping it.
    pub fn normalized(mut diagonal: Vec<f64>) -> Result<Self> {
        if diagonal.iter().any(|&c| c < 0.0 || !c.is_finite()) {
            return Err(invalid("state weights must be finite and nonnegative"));
        }
        let total: f64 = diagonal.iter().sum();
        if total <= 0.0 {
            return Err(invalid("state weights sum to zero"));
        }
        diagonal.iter_mut().for_each(|c| *c /= total);
        Self::new(diagonal)
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn mean_photon_number(&self) -> f64 {
        self.diagonal
            .iter()
            .enumerate()
            .map(|(n, c)| n as f64 * c)
            .sum()
    }

    pub fn to_joint(&self) -> JointPhotonStatistics {
        JointPhotonStatistics {
            matrix: DMatrix::from_diagonal(&DVector::from_column_slice(&self.diagonal)),
        }
    }
}

/// Joint click statistics of two detectors, either model probabilities or
/// measured counts.
#[derive(Debug, Clone, PartialEq)]
pub enum JointOutcomeStatistics {
    Probabilities(DMatrix<f64>),
    Counts { counts: DMatrix<u64>, trials: u64 },
}

impl JointOutcomeStatistics {
    pub fn from_probabilities(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.is_empty() {
            return Err(invalid("outcome statistics are empty"));
        }
        check_distribution(matrix.iter().copied(), "outcome probabilities")?;
        Ok(JointOutcomeStatistics::Probabilities(matrix))
    }

    pub fn from_counts(counts: DMatrix<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(invalid("outcome statistics are empty"));
        }
        let trials: u64 = counts.iter().sum();
        if trials == 0 {
            return Err(invalid("histogram contains no trials"));
        }
        Ok(JointOutcomeStatistics::Counts { counts, trials })
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            JointOutcomeStatistics::Probabilities(m) => m.shape(),
            JointOutcomeStatistics::Counts { counts, .. } => counts.shape(),
        }
    }

    pub fn trials(&self) -> Option<u64> {
        match self {
            JointOutcomeStatistics::Probabilities(_) => None,
            JointOutcomeStatistics::Counts { trials, .. } => Some(*trials),
        }
    }

    /// Normalized probabilities. Counts are divided by the number of trials.
    pub fn probabilities(&self) -> DMatrix<f64> {
        match self {
            JointOutcomeStatistics::Probabilities(m) => m.clone(),
            JointOutcomeStatistics::Counts { counts, trials } => {
                let t = *trials as f64;
                counts.map(|c| c as f64 / t)
            }
        }
    }

    pub fn transpose(&self) -> Self {
        match self {
            JointOutcomeStatistics::Probabilities(m) => {
                JointOutcomeStatistics::Probabilities(m.transpose())
            }
            JointOutcomeStatistics::Counts { counts, trials } => JointOutcomeStatistics::Counts {
                counts: counts.transpose(),
                trials: *trials,
            },
        }
    }
}

pub(crate) fn check_distribution(values: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut total = 0.0;
    for v in values {
        if v < 0.0 || !v.is_finite() {
            return Err(invalid(format!("{what} contains invalid entry {v}")));
        }
        total += v;
    }
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(invalid(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

/// Click-count distribution of a single detector: `C * L(eta) * sigma`.
pub fn predict_single(c: &ConvolutionMatrix, l: &LossMatrix, sigma: &[f64]) -> Result<Vec<f64>> {
    if sigma.len() != l.dim() {
        return Err(Error::DimensionMismatch(format!(
            "photon distribution has {} entries, loss matrix is {}x{}",
            sigma.len(),
            l.dim(),
            l.dim()
        )));
    }
    check_distribution(sigma.iter().copied(), "photon-number distribution")?;
    let povm = compose_povm_diagonals(c, l)?;
    Ok((povm * DVector::from_column_slice(sigma))
        .iter()
        .copied()
        .collect())
}

/// Joint click statistics of two detectors viewing `sigma`:
/// `C1 L(eta1) sigma L(eta2)^T C2^T`.
pub fn predict_joint(
    c1: &ConvolutionMatrix,
    eta1: f64,
    sigma: &JointPhotonStatistics,
    eta2: f64,
    c2: &ConvolutionMatrix,
) -> Result<JointOutcomeStatistics> {
    let (a1, a2) = response_pair(c1, eta1, c2, eta2, sigma.dim())?;
    Ok(JointOutcomeStatistics::Probabilities(
        &a1 * sigma.matrix() * a2.transpose(),
    ))
}

/// POVM-diagonal matrices `C_i L(eta_i)` for both detectors at truncation `dim`.
pub(crate) fn response_pair(
    c1: &ConvolutionMatrix,
    eta1: f64,
    c2: &ConvolutionMatrix,
    eta2: f64,
    dim: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_efficiency(eta1, "eta1")?;
    check_efficiency(eta2, "eta2")?;
    for (i, c) in [c1, c2].into_iter().enumerate() {
        if c.truncation() != dim {
            return Err(Error::DimensionMismatch(format!(
                "detector {} convolution matrix covers {} photon numbers, state has {}",
                i + 1,
                c.truncation(),
                dim
            )));
        }
    }
    let a1 = compose_povm_diagonals(c1, &LossMatrix::new(eta1, dim)?)?;
    let a2 = compose_povm_diagonals(c2, &LossMatrix::new(eta2, dim)?)?;
    Ok((a1, a2))
}
