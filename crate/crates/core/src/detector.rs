//! Detector response: binomial loss and mode-multiplexing saturation.
//!
//! A mode-multiplexed photon-number-resolving detector is modelled as a loss
//! channel `L(eta)` followed by a "convolution" matrix `C` that maps incident
//! photon number to the number of occupied bins (clicks). Row `k` of `C * L`
//! holds the photon-number diagonal of the POVM element for `k` clicks.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Absolute tolerance for the probability invariants of constructed matrices.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// Default photon-number truncation: vacuum plus up to eight photons.
pub const DEFAULT_TRUNCATION: usize = 9;

pub(crate) fn check_efficiency(eta: f64, name: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) || eta.is_nan() {
        return Err(invalid(format!("{name} = {eta} is outside [0, 1]")));
    }
    Ok(())
}

/// `n choose k` as a float.
pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Binomial loss channel acting on photon-number distributions.
///
/// Entry `(i, j)` is the probability that `j` incident photons leave `i`
/// survivors when each survives independently with probability `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMatrix {
    eta: f64,
    matrix: DMatrix<f64>,
}

impl LossMatrix {
    pub fn new(eta: f64, dim: usize) -> Result<Self> {
        check_efficiency(eta, "eta")?;
        if dim == 0 {
            return Err(invalid("loss matrix dimension must be at least 1"));
        }
        let matrix = DMatrix::from_fn(dim, dim, |i, j| {
            if j >= i {
                binomial(j, i) * eta.powi(i as i32) * (1.0 - eta).powi((j - i) as i32)
            } else {
                0.0
            }
        });
        check_column_stochastic(&matrix, "loss matrix")?;
        Ok(LossMatrix { eta, matrix })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Shorthand for [`LossMatrix::new`].
pub fn build_loss_matrix(eta: f64, dim: usize) -> Result<LossMatrix> {
    LossMatrix::new(eta, dim)
}

/// Geometry of a mode-multiplexed detector: the probability that a photon is
/// routed into each bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplexConfig {
    bin_probabilities: Vec<f64>,
}

impl MultiplexConfig {
    pub fn new(bin_probabilities: Vec<f64>) -> Result<Self> {
        if bin_probabilities.is_empty() {
            return Err(invalid("a multiplexed detector needs at least one bin"));
        }
        if let Some(p) = bin_probabilities
            .iter()
            .find(|p| !(0.0..=1.0).contains(*p) || p.is_nan())
        {
            return Err(invalid(format!("bin probability {p} is outside [0, 1]")));
        }
        let total: f64 = bin_probabilities.iter().sum();
        if (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(invalid(format!(
                "bin probabilities sum to {total}, expected 1"
            )));
        }
        Ok(MultiplexConfig { bin_probabilities })
    }

    /// `bins` equally likely bins.
    pub fn uniform(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(invalid("a multiplexed detector needs at least one bin"));
        }
        Self::new(vec![1.0 / bins as f64; bins])
    }

    /// Fiber time-multiplexed detector: a spatial splitter with `spatial`
    /// transmission into the first output, followed by a chain of time-delay
    /// splitters in each arm. Each entry of `time_splits` doubles the number
    /// of time bins, sending fraction `t` into the undelayed path.
    pub fn time_multiplexed(spatial: f64, time_splits: &[f64]) -> Result<Self> {
        let mut bins = vec![spatial, 1.0 - spatial];
        for &t in time_splits {
            bins = bins.iter().flat_map(|&p| [p * t, p * (1.0 - t)]).collect();
        }
        // renormalize away the rounding of repeated products
        let total: f64 = bins.iter().sum();
        bins.iter_mut().for_each(|p| *p /= total);
        Self::new(bins)
    }

    pub fn bins(&self) -> usize {
        self.bin_probabilities.len()
    }

    pub fn bin_probabilities(&self) -> &[f64] {
        &self.bin_probabilities
    }
}

/// Click-count response of a multiplexed detector with unit efficiency.
///
/// Rows are indexed by click count `0..=B`, columns by incident photon number
/// `0..N`. Entry `(k, m)` is the probability that `m` independently routed
/// photons occupy exactly `k` distinct bins.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionMatrix {
    matrix: DMatrix<f64>,
}

impl ConvolutionMatrix {
    /// Builds the response for photon numbers `0..truncation`.
    pub fn new(config: &MultiplexConfig, truncation: usize) -> Result<Self> {
        if truncation == 0 {
            return Err(invalid("truncation must be at least 1"));
        }
        let probs = config.bin_probabilities();
        let bins = probs.len();

        // Conditional routing probability for bin b given the photon did not
        // land in bins 0..b.
        let mut suffix = vec![0.0; bins + 1];
        for b in (0..bins).rev() {
            suffix[b] = probs[b] + suffix[b + 1];
        }
        let conditional: Vec<f64> = (0..bins)
            .map(|b| {
                if suffix[b + 1] == 0.0 {
                    1.0
                } else if suffix[b] == 0.0 {
                    0.0
                } else {
                    (probs[b] / suffix[b]).clamp(0.0, 1.0)
                }
            })
            .collect();

        let mut matrix = DMatrix::zeros(bins + 1, truncation);
        for m in 0..truncation {
            let column = occupancy_distribution(m, bins, &conditional);
            for (k, p) in column.into_iter().enumerate() {
                matrix[(k, m)] = p;
            }
        }
        check_column_stochastic(&matrix, "convolution matrix")?;
        Ok(ConvolutionMatrix { matrix })
    }

    /// Wraps an externally supplied response (e.g. from detector tomography).
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix
            .iter()
            .any(|&v| !(0.0..=1.0 + PROBABILITY_TOLERANCE).contains(&v))
        {
            return Err(invalid("convolution matrix entries must lie in [0, 1]"));
        }
        check_column_stochastic(&matrix, "convolution matrix")?;
        Ok(ConvolutionMatrix { matrix })
    }

    /// Number of click outcomes, `B + 1`.
    pub fn outcomes(&self) -> usize {
        self.matrix.nrows()
    }

    /// Photon-number truncation `N`.
    pub fn truncation(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// The square block over photon numbers `0..=B`, used to undo
    /// multiplexing. Fails if the truncation is below `B + 1`.
    pub fn square_block(&self) -> Result<DMatrix<f64>> {
        let k = self.outcomes();
        if self.truncation() < k {
            return Err(Error::DimensionMismatch(format!(
                "truncation {} is smaller than the {} click outcomes",
                self.truncation(),
                k
            )));
        }
        Ok(self.matrix.columns(0, k).into_owned())
    }
}

/// Shorthand for [`ConvolutionMatrix::new`].
pub fn build_convolution_matrix(
    config: &MultiplexConfig,
    truncation: usize,
) -> Result<ConvolutionMatrix> {
    ConvolutionMatrix::new(config, truncation)
}

/// Distribution of occupied-bin count for `photons` photons, by sweeping the
/// bins and splitting the remaining photons binomially at each one.
fn occupancy_distribution(photons: usize, bins: usize, conditional: &[f64]) -> Vec<f64> {
    // state[r][k]: probability that r photons are still unassigned and k bins
    // are occupied so far
    let mut state = vec![vec![0.0; bins + 1]; photons + 1];
    state[photons][0] = 1.0;
    for &q in conditional.iter().take(bins) {
        let mut next = vec![vec![0.0; bins + 1]; photons + 1];
        for r in 0..=photons {
            for (k, &p) in state[r].iter().enumerate().take(bins) {
                if p == 0.0 {
                    continue;
                }
                // n photons go into this bin, r - n stay unassigned
                for n in 0..=r {
                    let split = binomial(r, n) * q.powi(n as i32) * (1.0 - q).powi((r - n) as i32);
                    if split == 0.0 {
                        continue;
                    }
                    let occupied = if n > 0 { k + 1 } else { k };
                    next[r - n][occupied] += p * split;
                }
            }
            // k == bins only if every bin is already occupied, nothing left to add
            let p = state[r][bins];
            if p != 0.0 {
                next[r][bins] += p;
            }
        }
        state = next;
    }
    state[0].clone()
}

/// Row `i` of the result is the photon-number diagonal of the POVM element
/// for outcome `i`: `C * L(eta)`.
pub fn compose_povm_diagonals(c: &ConvolutionMatrix, l: &LossMatrix) -> Result<DMatrix<f64>> {
    if c.truncation() != l.dim() {
        return Err(Error::DimensionMismatch(format!(
            "convolution matrix has {} photon columns, loss matrix is {}x{}",
            c.truncation(),
            l.dim(),
            l.dim()
        )));
    }
    Ok(c.matrix() * l.matrix())
}

pub(crate) fn check_column_stochastic(matrix: &DMatrix<f64>, what: &str) -> Result<()> {
    for (j, col) in matrix.column_iter().enumerate() {
        let sum: f64 = col.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::Numerical(format!("{what} column {j} sums to {sum}")));
        }
    }
    Ok(())
}
