//! Poissonian background light.
//!
//! Background photons are uncorrelated between the beams. They add to each
//! beam's photon number before detection, so at the photon level their effect
//! is a convolution with a Poisson distribution. At the click level the
//! detector saturation breaks this structure, which is why
//! [`subtract_background`] first undoes the multiplexing response, then
//! deconvolves, then re-applies the response.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::detector::{ConvolutionMatrix, LossMatrix};
use crate::error::{invalid, Error, Result};
use crate::forward::{JointOutcomeStatistics, JointPhotonStatistics};
use crate::nnls::nnls;

/// Poisson-distributed background photons with mean `mean_photons` per pulse,
/// truncated to photon numbers `0..dim`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundModel {
    mean_photons: f64,
    dim: usize,
}

impl BackgroundModel {
    pub fn new(mean_photons: f64, dim: usize) -> Result<Self> {
        if mean_photons < 0.0 || !mean_photons.is_finite() {
            return Err(invalid(format!(
                "mean background photon number {mean_photons} must be finite and nonnegative"
            )));
        }
        if dim == 0 {
            return Err(invalid("background truncation must be at least 1"));
        }
        Ok(BackgroundModel { mean_photons, dim })
    }

    pub fn mean_photons(&self) -> f64 {
        self.mean_photons
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Truncated Poisson distribution, renormalized to sum to one.
    pub fn distribution(&self) -> Vec<f64> {
        let mut d = poisson_pmf(self.mean_photons, self.dim);
        let total: f64 = d.iter().sum();
        d.iter_mut().for_each(|p| *p /= total);
        d
    }
}

/// Untruncated Poisson probabilities for `0..len`.
pub(crate) fn poisson_pmf(mean: f64, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let mut p = (-mean).exp();
    for n in 0..len {
        out.push(p);
        p *= mean / (n + 1) as f64;
    }
    out
}

/// Matrix adding background photons: entry `(m, n)` is the probability that
/// `n` photons become `m`. Each column is renormalized over the photon
/// numbers still inside the truncation.
pub fn background_matrix(model: &BackgroundModel) -> DMatrix<f64> {
    let dim = model.dim();
    let d = poisson_pmf(model.mean_photons(), dim);
    let mut matrix = DMatrix::zeros(dim, dim);
    for n in 0..dim {
        let norm: f64 = d[..dim - n].iter().sum();
        for m in n..dim {
            matrix[(m, n)] = d[m - n] / norm;
        }
    }
    matrix
}

/// Adds independent Poisson background to each beam: `D(alpha1) sigma D(alpha2)^T`.
pub fn add_background(
    sigma: &JointPhotonStatistics,
    alpha1: f64,
    alpha2: f64,
) -> Result<JointPhotonStatistics> {
    let dim = sigma.dim();
    let d1 = background_matrix(&BackgroundModel::new(alpha1, dim)?);
    let d2 = background_matrix(&BackgroundModel::new(alpha2, dim)?);
    let mut out = d1 * sigma.matrix() * d2.transpose();
    let total = out.sum();
    out /= total;
    Ok(JointPhotonStatistics::from_raw(out))
}

/// Settings of the loss/background equivalence sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceOptions {
    /// Residual below which two states count as equivalent.
    pub tolerance: f64,
    /// Evenly spaced loss values scanned in `[0, 1]` before bisection.
    pub scan_points: usize,
    pub bisection_steps: usize,
}

impl Default for EquivalenceOptions {
    fn default() -> Self {
        EquivalenceOptions {
            tolerance: 1e-8,
            scan_points: 101,
            bisection_steps: 40,
        }
    }
}

/// One point of the loss/background equivalence curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalencePoint {
    pub alpha: f64,
    /// Smallest loss for which an equivalent pair of correlated states
    /// exists (or the minimal-residual loss when none does).
    pub loss: f64,
    /// Largest such loss; equal to `loss` when unsolved.
    pub loss_upper: f64,
    /// Residual of the equivalence system at `loss`.
    pub residual: f64,
    pub solved: bool,
    /// Pair-number weights of the background-added state at `loss`.
    pub state_background: Vec<f64>,
    /// Pair-number weights of the lossy state at `loss`.
    pub state_lossy: Vec<f64>,
}

struct EquivalenceSolve {
    residual: f64,
    a: Vec<f64>,
    b: Vec<f64>,
}

/// Finds nonnegative normalized diagonal states `a`, `b` on photon numbers
/// `0..=M` minimizing the mismatch between `D(alpha) diag(a)` and
/// `diag(b) L(1 - loss)^T`.
fn equivalence_residual(d: &DMatrix<f64>, loss: f64) -> Result<EquivalenceSolve> {
    let dim = d.nrows();
    let l = LossMatrix::new(1.0 - loss, dim)?;
    let lm = l.matrix();
    let rows = dim * dim + 2;
    let mut system = DMatrix::zeros(rows, 2 * dim);
    let mut rhs = DVector::zeros(rows);
    for k in 0..dim {
        for j in 0..dim {
            let r = k * dim + j;
            system[(r, j)] = d[(k, j)];
            system[(r, dim + k)] = -lm[(j, k)];
        }
    }
    for i in 0..dim {
        system[(dim * dim, i)] = 1.0;
        system[(dim * dim + 1, dim + i)] = 1.0;
    }
    rhs[dim * dim] = 1.0;
    rhs[dim * dim + 1] = 1.0;
    let sol = nnls(&system, &rhs);
    Ok(EquivalenceSolve {
        residual: sol.residual,
        a: sol.x.rows(0, dim).iter().copied().collect(),
        b: sol.x.rows(dim, dim).iter().copied().collect(),
    })
}

/// For each background mean in `alphas`, the range of losses in one beam that
/// reproduce the effect of the background in the other beam for detectors
/// resolving up to `max_photons` photons.
///
/// Points without an equivalent pair within tolerance are reported with
/// `solved = false` and the minimal-residual loss; the sweep never aborts.
pub fn solve_loss_background_equivalence(
    max_photons: usize,
    alphas: &[f64],
    options: &EquivalenceOptions,
) -> Result<Vec<EquivalencePoint>> {
    if max_photons == 0 {
        return Err(invalid("photon range M must be at least 1"));
    }
    if options.scan_points < 2 {
        return Err(invalid("equivalence scan needs at least 2 points"));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(invalid(format!("background mean {a} is outside [0, 1]")));
    }
    alphas
        .par_iter()
        .map(|&alpha| equivalence_point(max_photons, alpha, options))
        .collect()
}

fn equivalence_point(
    max_photons: usize,
    alpha: f64,
    options: &EquivalenceOptions,
) -> Result<EquivalencePoint> {
    let d = background_matrix(&BackgroundModel::new(alpha, max_photons + 1)?);
    let losses: Vec<f64> = (0..options.scan_points)
        .map(|i| i as f64 / (options.scan_points - 1) as f64)
        .collect();
    let solves = losses
        .iter()
        .map(|&l| equivalence_residual(&d, l))
        .collect::<Result<Vec<_>>>()?;
    let feasible = |s: &EquivalenceSolve| s.residual <= options.tolerance;

    let first = solves.iter().position(feasible);
    let last = solves.iter().rposition(feasible);
    let (Some(first), Some(last)) = (first, last) else {
        let best = (0..solves.len())
            .min_by(|&a, &b| solves[a].residual.total_cmp(&solves[b].residual))
            .expect("scan is nonempty");
        return Ok(EquivalencePoint {
            alpha,
            loss: losses[best],
            loss_upper: losses[best],
            residual: solves[best].residual,
            solved: false,
            state_background: solves[best].a.clone(),
            state_lossy: solves[best].b.clone(),
        });
    };

    // bisect the feasibility boundaries between neighbouring scan points
    let boundary = |mut bad: f64, mut good: f64| -> Result<f64> {
        for _ in 0..options.bisection_steps {
            let mid = 0.5 * (bad + good);
            if feasible(&equivalence_residual(&d, mid)?) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        Ok(good)
    };
    let loss = if first == 0 {
        losses[0]
    } else {
        boundary(losses[first - 1], losses[first])?
    };
    let loss_upper = if last + 1 == losses.len() {
        losses[last]
    } else {
        boundary(losses[last + 1], losses[last])?
    };
    let at = equivalence_residual(&d, loss)?;
    Ok(EquivalencePoint {
        alpha,
        loss,
        loss_upper,
        residual: at.residual,
        solved: at.residual <= options.tolerance,
        state_background: at.a,
        state_lossy: at.b,
    })
}

/// Mismatch `||D(alpha) diag(a) - diag(b) L(1 - loss)^T||_F` for given states.
pub fn equivalence_mismatch(alpha: f64, loss: f64, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(
            "equivalence states must have equal nonzero length".into(),
        ));
    }
    let dim = a.len();
    let d = background_matrix(&BackgroundModel::new(alpha, dim)?);
    let l = LossMatrix::new(1.0 - loss, dim)?;
    let lhs = d * DMatrix::from_diagonal(&DVector::from_column_slice(a));
    let rhs = DMatrix::from_diagonal(&DVector::from_column_slice(b)) * l.matrix().transpose();
    Ok((lhs - rhs).norm())
}

/// Tidy CSV of an equivalence sweep.
pub fn equivalence_csv(max_photons: usize, points: &[EquivalencePoint]) -> String {
    let mut out = String::from("M,alpha,loss,loss_upper,residual,solved\n");
    for p in points {
        out.push_str(&format!(
            "{max_photons},{},{},{},{:e},{}\n",
            p.alpha, p.loss, p.loss_upper, p.residual, p.solved
        ));
    }
    out
}

/// Relative magnitude below which a background spectrum component is left
/// undivided.
pub const REGULARIZATION_FLOOR: f64 = 1e-10;

/// Background-subtracted click statistics and quality diagnostics.
#[derive(Debug, Clone)]
pub struct Subtraction {
    pub statistics: JointOutcomeStatistics,
    /// Total magnitude of negative entries removed by clipping.
    pub clipped_mass: f64,
    /// Spectral components passed through because the background spectrum
    /// fell below the regularization floor.
    pub regularized_frequencies: usize,
}

fn invert_response(c: &ConvolutionMatrix) -> Result<DMatrix<f64>> {
    let block = c.square_block()?;
    if (0..block.nrows()).any(|i| block[(i, i)] == 0.0) {
        return Err(Error::Numerical(
            "multiplexing response is singular on its square block".into(),
        ));
    }
    let identity = DMatrix::identity(block.nrows(), block.nrows());
    block.solve_upper_triangular(&identity).ok_or_else(|| {
        Error::Numerical("multiplexing response is singular on its square block".into())
    })
}

struct Fft2 {
    rows: usize,
    cols: usize,
    row_fft: Arc<dyn Fft<f64>>,
    col_fft: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(planner: &mut FftPlanner<f64>, rows: usize, cols: usize, inverse: bool) -> Self {
        let (row_fft, col_fft) = if inverse {
            (
                planner.plan_fft_inverse(cols),
                planner.plan_fft_inverse(rows),
            )
        } else {
            (
                planner.plan_fft_forward(cols),
                planner.plan_fft_forward(rows),
            )
        };
        Fft2 {
            rows,
            cols,
            row_fft,
            col_fft,
        }
    }

    /// In-place transform of a row-major `rows x cols` buffer.
    fn process(&self, data: &mut [Complex<f64>]) {
        for row in data.chunks_exact_mut(self.cols) {
            self.row_fft.process(row);
        }
        let mut column = vec![Complex::new(0.0, 0.0); self.rows];
        for j in 0..self.cols {
            for i in 0..self.rows {
                column[i] = data[i * self.cols + j];
            }
            self.col_fft.process(&mut column);
            for i in 0..self.rows {
                data[i * self.cols + j] = column[i];
            }
        }
    }
}

fn padded(m: &DMatrix<f64>, rows: usize, cols: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); rows * cols];
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[i * cols + j] = Complex::new(m[(i, j)], 0.0);
        }
    }
    out
}

/// Removes an independently measured background from measured click
/// statistics.
///
/// Both histograms are mapped back to photon-number statistics with the
/// inverse of each detector's square multiplexing block, the background is
/// removed by Fourier deconvolution, and the multiplexing is re-applied.
/// Arrays are zero-padded to four times their size so the circular
/// deconvolution matches the one-sided photon-number convolution. Photon
/// numbers above the detectors' click range are outside the validity of this
/// procedure.
pub fn subtract_background(
    measured: &JointOutcomeStatistics,
    background: &JointOutcomeStatistics,
    c1: &ConvolutionMatrix,
    c2: &ConvolutionMatrix,
) -> Result<Subtraction> {
    let rm = measured.probabilities();
    let rb = background.probabilities();
    crate::forward::check_distribution(rm.iter().copied(), "measured statistics")?;
    crate::forward::check_distribution(rb.iter().copied(), "background statistics")?;
    let shape = (c1.outcomes(), c2.outcomes());
    if rm.shape() != shape || rb.shape() != shape {
        return Err(Error::DimensionMismatch(format!(
            "histograms are {:?} and {:?}, detectors have {:?} outcomes",
            rm.shape(),
            rb.shape(),
            shape
        )));
    }
    let inv1 = invert_response(c1)?;
    let inv2 = invert_response(c2)?;
    let pm = &inv1 * &rm * inv2.transpose();
    let pb = &inv1 * &rb * inv2.transpose();

    let (k1, k2) = shape;
    let (rows, cols) = (4 * k1, 4 * k2);
    let mut planner = FftPlanner::new();
    let forward = Fft2::new(&mut planner, rows, cols, false);
    let inverse = Fft2::new(&mut planner, rows, cols, true);

    let mut spec_m = padded(&pm, rows, cols);
    let mut spec_b = padded(&pb, rows, cols);
    forward.process(&mut spec_m);
    forward.process(&mut spec_b);

    let peak = spec_b.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let floor = REGULARIZATION_FLOOR * peak;
    let mut regularized_frequencies = 0;
    for (m, b) in spec_m.iter_mut().zip(&spec_b) {
        if b.norm() < floor {
            regularized_frequencies += 1;
        } else {
            *m /= *b;
        }
    }
    inverse.process(&mut spec_m);
    let scale = (rows * cols) as f64;
    let signal = DMatrix::from_fn(k1, k2, |i, j| spec_m[i * cols + j].re / scale);

    let block1 = c1.square_block()?;
    let block2 = c2.square_block()?;
    let mut ps = block1 * signal * block2.transpose();

    let clipped_mass: f64 = ps.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
    ps.iter_mut().for_each(|v| *v = v.max(0.0));
    let total = ps.sum();
    if total <= 0.0 {
        return Err(Error::Numerical(
            "background subtraction removed all probability".into(),
        ));
    }
    ps /= total;
    Ok(Subtraction {
        statistics: JointOutcomeStatistics::Probabilities(ps),
        clipped_mass,
        regularized_frequencies,
    })
}

/// Truncated two-dimensional convolution of click distributions, the naive
/// model of two independent processes observed together.
pub fn convolve_outcomes(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    DMatrix::from_fn(rows, cols, |i, j| {
        let mut acc = 0.0;
        for p in 0..=i.min(b.nrows() - 1) {
            for q in 0..=j.min(b.ncols() - 1) {
                acc += a[(i - p, j - q)] * b[(p, q)];
            }
        }
        acc
    })
}
