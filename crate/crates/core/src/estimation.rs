//! Efficiency estimation from joint click statistics.
//!
//! The estimator fits `R ≈ C1 L(eta1) diag(c) L(eta2)^T C2^T` in the Frobenius
//! norm. For fixed efficiencies the problem is linear in the weights `c`, so it
//! is solved exactly by nonnegative least squares; the two efficiencies are
//! searched on a coarse grid and then refined with a bounded simplex.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::detector::{check_efficiency, ConvolutionMatrix};
use crate::error::{invalid, Error, Parameter, Result};
use crate::forward::{
    response_pair, CorrelatedState, JointOutcomeStatistics, JointPhotonStatistics,
};
use crate::nnls::nnls;
use crate::optimize::{nelder_mead, SimplexOptions};

/// Singles and coincidence rates of a pair source seen by two binary
/// (click / no-click) detectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlyshkoRates {
    /// Singles rate of the idler detector (detector 2).
    pub idler: f64,
    /// Singles rate of the signal detector (detector 1).
    pub signal: f64,
    pub coincidences: f64,
}

impl KlyshkoRates {
    pub fn new(signal: f64, idler: f64, coincidences: f64) -> Result<Self> {
        for (name, v) in [
            ("signal", signal),
            ("idler", idler),
            ("coincidence", coincidences),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(invalid(format!(
                    "{name} rate {v} must be finite and nonnegative"
                )));
            }
        }
        if coincidences > signal.min(idler) {
            return Err(invalid(format!(
                "coincidence rate {coincidences} exceeds a singles rate ({signal}, {idler})"
            )));
        }
        Ok(KlyshkoRates {
            idler,
            signal,
            coincidences,
        })
    }

    /// Collapses a photon-number-resolved histogram to binary detection:
    /// any nonzero click count on a detector is a "click".
    pub fn from_histogram(r: &JointOutcomeStatistics) -> Self {
        let p = match r {
            JointOutcomeStatistics::Probabilities(m) => m.clone(),
            JointOutcomeStatistics::Counts { counts, .. } => counts.map(|c| c as f64),
        };
        let (rows, cols) = p.shape();
        let signal = p.rows(1, rows - 1).sum();
        let idler = p.columns(1, cols - 1).sum();
        let coincidences = p.view((1, 1), (rows - 1, cols - 1)).sum();
        KlyshkoRates {
            idler,
            signal,
            coincidences,
        }
    }
}

/// Klyshko estimates `(eta_signal, eta_idler) = (Rc / Ri, Rc / Rs)`.
pub fn klyshko_efficiency(rates: &KlyshkoRates) -> Result<(f64, f64)> {
    if rates.idler <= 0.0 || rates.signal <= 0.0 {
        return Err(Error::UndefinedEstimate(
            "Klyshko estimate needs nonzero singles rates on both detectors".into(),
        ));
    }
    Ok((
        rates.coincidences / rates.idler,
        rates.coincidences / rates.signal,
    ))
}

/// Signal efficiency that the Klyshko ratio reports when the source also
/// emits two pairs with weight `sigma22` next to single pairs with `sigma11`.
pub fn biased_klyshko(sigma11: f64, sigma22: f64, eta_s: f64, eta_i: f64) -> Result<f64> {
    check_efficiency(eta_s, "eta_s")?;
    check_efficiency(eta_i, "eta_i")?;
    if sigma11 < 0.0 || sigma22 < 0.0 {
        return Err(invalid("pair weights must be nonnegative"));
    }
    if sigma11 + sigma22 == 0.0 {
        return Err(Error::UndefinedEstimate(
            "single- and two-pair weights are both zero".into(),
        ));
    }
    let numerator = sigma11 + (eta_s * eta_i - 2.0 * eta_s - 2.0 * eta_i + 4.0) * sigma22;
    let denominator = sigma11 + (2.0 - eta_i) * sigma22;
    Ok(numerator / denominator * eta_s)
}

/// Outcome of the inner (fixed-efficiency) fit.
#[derive(Debug, Clone)]
pub struct DiagonalFit {
    /// Nonnegative pair-number weights as returned by the solver. They are
    /// not constrained to sum to one.
    pub weights: Vec<f64>,
    /// Frobenius norm of `R - model(weights)`.
    pub residual: f64,
    pub converged: bool,
}

impl DiagonalFit {
    pub fn state(&self) -> Result<CorrelatedState> {
        CorrelatedState::normalized(self.weights.clone())
    }
}

fn check_shapes(r: &DMatrix<f64>, c1: &ConvolutionMatrix, c2: &ConvolutionMatrix) -> Result<()> {
    if r.shape() != (c1.outcomes(), c2.outcomes()) {
        return Err(Error::DimensionMismatch(format!(
            "histogram is {}x{}, detectors have {} and {} outcomes",
            r.nrows(),
            r.ncols(),
            c1.outcomes(),
            c2.outcomes()
        )));
    }
    if c1.truncation() != c2.truncation() {
        return Err(Error::DimensionMismatch(format!(
            "detectors use different photon truncations ({} and {})",
            c1.truncation(),
            c2.truncation()
        )));
    }
    Ok(())
}

fn normalized_data(r: &JointOutcomeStatistics) -> Result<DMatrix<f64>> {
    let p = r.probabilities();
    crate::forward::check_distribution(p.iter().copied(), "outcome statistics")?;
    Ok(p)
}

fn vectorize(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Design matrix whose column `i` is `vec(a1[:, i] a2[:, i]^T)`.
fn diagonal_design(a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a1.ncols();
    let mut design = DMatrix::zeros(a1.nrows() * a2.nrows(), n);
    for i in 0..n {
        let outer = a1.column(i) * a2.column(i).transpose();
        design.set_column(i, &vectorize(&outer));
    }
    design
}

fn fit_diagonal_normalized(
    r: &DMatrix<f64>,
    eta1: f64,
    eta2: f64,
    c1: &ConvolutionMatrix,
    c2: &ConvolutionMatrix,
) -> Result<DiagonalFit> {
    let (a1, a2) = response_pair(c1, eta1, c2, eta2, c1.truncation())?;
    let sol = nnls(&diagonal_design(&a1, &a2), &vectorize(r));
    Ok(DiagonalFit {
        weights: sol.x.iter().copied().collect(),
        residual: sol.residual,
        converged: sol.converged,
    })
}

/// Best nonnegative pair-number weights at fixed efficiencies.
pub fn fit_diagonal_state(
    r: &JointOutcomeStatistics,
    eta1: f64,
    eta2: f64,
    c1: &ConvolutionMatrix,
    c2: &ConvolutionMatrix,
) -> Result<DiagonalFit> {
    let p = normalized_data(r)?;
    check_shapes(&p, c1, c2)?;
    fit_diagonal_normalized(&p, eta1, eta2, c1, c2)
}

/// Frobenius norm of `R - C1 L(eta1) diag(weights) L(eta2)^T C2^T`.
pub fn objective(
    r: &JointOutcomeStatistics,
    eta1: f64,
    eta2: f64,
    weights: &[f64],
    c1: &ConvolutionMatrix,
    c2: &ConvolutionMatrix,
) -> Result<f64> {
    let p = normalized_data(r)?;
    check_shapes(&p, c1, c2)?;
    if weights.len() != c1.truncation() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for truncation {}",
            weights.len(),
            c1.truncation()
        )));
    }
    let (a1, a2) = response_pair(c1, eta1, c2, eta2, weights.len())?;
    let sigma = DMatrix::from_diagonal(&DVector::from_column_slice(weights));
    Ok((p - a1 * sigma * a2.transpose()).norm())
}

/// Settings of the nested efficiency search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    /// Points per axis of the coarse grid over `[0, 1]^2`.
    pub grid: usize,
    /// Simplex size at which the refinement stops.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Cells whose residual lies within this of the grid optimum count as tied.
    pub flatness: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            grid: 21,
            tolerance: 1e-9,
            max_iterations: 2000,
            flatness: 1e-9,
        }
    }
}

/// Estimated efficiencies with the fitted state and solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub eta1: f64,
    pub eta2: f64,
    /// Raw nonnegative weights from the inner fit (see [`DiagonalFit`]).
    pub weights: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Simplex refinement met its tolerance and the final inner fit converged.
    pub converged: bool,
}

impl CalibrationResult {
    /// Normalized pair-number distribution.
    pub fn state(&self) -> Result<CorrelatedState> {
        CorrelatedState::normalized(self.weights.clone())
    }
}

fn axis(points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![0.5];
    }
    (0..points)
        .map(|i| i as f64 / (points - 1) as f64)
        .collect()
}

/// Estimates both efficiencies and the pair-number distribution.
///
/// Returns [`Error::Ambiguous`] when the residual is flat (within
/// `options.flatness` of the grid optimum) over a region wider than one grid
/// cell; the error carries the minimizer with the smallest `eta1 + eta2`.
pub fn estimate_efficiencies(
    r: &JointOutcomeStatistics,
    c1: &ConvolutionMatrix,
    c2: &ConvolutionMatrix,
    options: &EstimatorOptions,
) -> Result<CalibrationResult> {
    if options.grid < 2 {
        return Err(invalid("the coarse grid needs at least 2 points per axis"));
    }
    let p = normalized_data(r)?;
    check_shapes(&p, c1, c2)?;

    let ticks = axis(options.grid);
    let cells: Vec<(usize, usize)> = (0..options.grid)
        .flat_map(|i| (0..options.grid).map(move |j| (i, j)))
        .collect();
    let values = cells
        .par_iter()
        .map(|&(i, j)| fit_diagonal_normalized(&p, ticks[i], ticks[j], c1, c2).map(|f| f.residual))
        .collect::<Result<Vec<f64>>>()?;
    let mut evaluations = cells.len();

    let best_value = values.iter().copied().fold(f64::INFINITY, f64::min);
    let tied: Vec<(usize, usize)> = cells
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v <= best_value + options.flatness)
        .map(|(&c, _)| c)
        .collect();
    let (start_i, start_j) = *tied
        .iter()
        .min_by_key(|&&(i, j)| (i + j, i))
        .expect("grid is nonempty");

    let span = |pick: fn(&(usize, usize)) -> usize| {
        let lo = tied.iter().map(pick).min().unwrap_or(0);
        let hi = tied.iter().map(pick).max().unwrap_or(0);
        hi - lo
    };
    let mut unidentifiable = Vec::new();
    if span(|c| c.0) > 1 {
        unidentifiable.push(Parameter::Eta1);
    }
    if span(|c| c.1) > 1 {
        unidentifiable.push(Parameter::Eta2);
    }
    if !unidentifiable.is_empty() {
        let (eta1, eta2) = (ticks[start_i], ticks[start_j]);
        let fit = fit_diagonal_normalized(&p, eta1, eta2, c1, c2)?;
        let best = CalibrationResult {
            eta1,
            eta2,
            weights: fit.weights,
            residual: fit.residual,
            iterations: 0,
            evaluations,
            converged: false,
        };
        return Err(Error::Ambiguous {
            unidentifiable,
            best: Box::new(best),
        });
    }

    let simplex = SimplexOptions {
        tolerance: options.tolerance,
        max_iterations: options.max_iterations,
        initial_step: 0.5 / (options.grid - 1) as f64,
        ..SimplexOptions::default()
    };
    let mut failure = None;
    let refined = nelder_mead(
        |q| match fit_diagonal_normalized(&p, q[0], q[1], c1, c2) {
            Ok(fit) => fit.residual,
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        },
        [ticks[start_i], ticks[start_j]],
        &simplex,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    evaluations += refined.evaluations;

    let [eta1, eta2] = refined.point;
    let fit = fit_diagonal_normalized(&p, eta1, eta2, c1, c2)?;
    Ok(CalibrationResult {
        eta1,
        eta2,
        weights: fit.weights,
        residual: fit.residual,
        iterations: refined.iterations,
        evaluations: evaluations + 1,
        converged: refined.converged && fit.converged,
    })
}

/// Rectangular grid of efficiency pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyGrid {
    pub eta1: Vec<f64>,
    pub eta2: Vec<f64>,
}

impl EfficiencyGrid {
    /// `n` evenly spaced values from `lo` to `hi` (inclusive) on both axes.
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Self> {
        check_efficiency(lo, "grid start")?;
        check_efficiency(hi, "grid end")?;
        if n == 0 || hi < lo || (n == 1 && hi != lo) {
            return Err(invalid(format!("bad grid {lo}:{hi}:{n}")));
        }
        let values: Vec<f64> = if n == 1 {
            vec![lo]
        } else {
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect()
        };
        Ok(EfficiencyGrid {
            eta1: values.clone(),
            eta2: values,
        })
    }

    /// Centers of an `n x n` partition of the unit square.
    pub fn cell_centered(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("grid needs at least one cell"));
        }
        let values: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        Ok(EfficiencyGrid {
            eta1: values.clone(),
            eta2: values,
        })
    }

    /// Parses `n` (cell-centred) or `lo:hi:n`.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let bad = || invalid(format!("grid spec `{spec}` is not `n` or `lo:hi:n`"));
        match parts.as_slice() {
            [n] => Self::cell_centered(n.trim().parse().map_err(|_| bad())?),
            [lo, hi, n] => Self::linspace(
                lo.trim().parse().map_err(|_| bad())?,
                hi.trim().parse().map_err(|_| bad())?,
                n.trim().parse().map_err(|_| bad())?,
            ),
            _ => Err(bad()),
        }
    }
}

/// Inner-optimal residual over a grid of efficiency pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualLandscape {
    pub eta1: Vec<f64>,
    pub eta2: Vec<f64>,
    /// `values[(i, j)]` is the residual at `(eta1[i], eta2[j])`.
    pub values: DMatrix<f64>,
}

/// Cells within this of each other belong to the same plateau.
pub const PLATEAU_TOLERANCE: f64 = 1e-12;

impl ResidualLandscape {
    /// Local-minimum basins: plateaus (8-connected cells whose values agree
    /// within [`PLATEAU_TOLERANCE`]) all of whose outside neighbours are
    /// strictly higher. Each basin is listed by its member cells.
    pub fn basins(&self) -> Vec<Vec<(usize, usize)>> {
        let (rows, cols) = self.values.shape();
        let v = &self.values;
        let mut label = DMatrix::<usize>::from_element(rows, cols, usize::MAX);
        let mut basins = Vec::new();
        let neighbours = |i: usize, j: usize| {
            let mut out = Vec::with_capacity(8);
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni >= 0 && nj >= 0 && (ni as usize) < rows && (nj as usize) < cols {
                        out.push((ni as usize, nj as usize));
                    }
                }
            }
            out
        };
        let mut next = 0;
        for j in 0..cols {
            for i in 0..rows {
                if label[(i, j)] != usize::MAX {
                    continue;
                }
                let mut members = vec![(i, j)];
                let mut queue = VecDeque::from([(i, j)]);
                label[(i, j)] = next;
                while let Some((a, b)) = queue.pop_front() {
                    for (x, y) in neighbours(a, b) {
                        if label[(x, y)] == usize::MAX
                            && (v[(x, y)] - v[(a, b)]).abs() <= PLATEAU_TOLERANCE
                        {
                            label[(x, y)] = next;
                            members.push((x, y));
                            queue.push_back((x, y));
                        }
                    }
                }
                let is_minimum = members.iter().all(|&(a, b)| {
                    neighbours(a, b)
                        .into_iter()
                        .all(|(x, y)| label[(x, y)] == next || v[(x, y)] > v[(a, b)])
                });
                if is_minimum {
                    basins.push(members);
                }
                next += 1;
            }
        }
        basins
    }

    /// Grid point with the smallest residual.
    pub fn argmin(&self) -> (f64, f64, f64) {
        let (mut best, mut at) = (f64::INFINITY, (0, 0));
        for j in 0..self.values.ncols() {
            for i in 0..self.values.nrows() {
                if self.values[(i, j)] < best {
                    best = self.values[(i, j)];
                    at = (i, j);
                }
            }
        }
        (self.eta1[at.0], self.eta2[at.1], best)
    }

    /// Tidy CSV with header `eta1,eta2,residual`, one row per grid point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eta1,eta2,residual\n");
        for (i, e1) in self.eta1.iter().enumerate() {
            for (j, e2) in self.eta2.iter().enumerate() {
                out.push_str(&format!("{e1},{e2},{:e}\n", self.values[(i, j)]));
            }
        }
        out
    }
}

/// Evaluates the inner-optimal residual at every grid point.
pub fn scan_residual_landscape(
    r: &JointOutcomeStatistics,
    c1: &ConvolutionMatrix,
    c2: &ConvolutionMatrix,
    grid: &EfficiencyGrid,
) -> Result<ResidualLandscape> {
    let p = normalized_data(r)?;
    check_shapes(&p, c1, c2)?;
    let (n1, n2) = (grid.eta1.len(), grid.eta2.len());
    let values = (0..n1 * n2)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx % n1, idx / n1);
            fit_diagonal_normalized(&p, grid.eta1[i], grid.eta2[j], c1, c2).map(|f| f.residual)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ResidualLandscape {
        eta1: grid.eta1.clone(),
        eta2: grid.eta2.clone(),
        values: DMatrix::from_vec(n1, n2, values),
    })
}

/// Full joint photon statistics reconstructed at fixed efficiencies.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// Normalized nonnegative joint distribution.
    pub sigma: JointPhotonStatistics,
    /// Frobenius residual of the unnormalized solver output.
    pub residual: f64,
    /// Photon-weighted fraction of unpaired photons in `sigma`.
    pub unpaired_fraction: f64,
    pub converged: bool,
}

/// Reconstructs every element of the joint photon-number distribution,
/// off-diagonals included, by nonnegative least squares.
pub fn reconstruct_joint_statistics(
    r: &JointOutcomeStatistics,
    eta1: f64,
    eta2: f64,
    c1: &ConvolutionMatrix,
    c2: &ConvolutionMatrix,
) -> Result<Reconstruction> {
    let p = normalized_data(r)?;
    check_shapes(&p, c1, c2)?;
    let n = c1.truncation();
    let (a1, a2) = response_pair(c1, eta1, c2, eta2, n)?;

    // column (m, n) of the design is vec(a1[:, m] a2[:, n]^T)
    let mut design = DMatrix::zeros(p.nrows() * p.ncols(), n * n);
    for col_n in 0..n {
        for row_m in 0..n {
            let outer = a1.column(row_m) * a2.column(col_n).transpose();
            design.set_column(row_m + n * col_n, &vectorize(&outer));
        }
    }
    let sol = nnls(&design, &vectorize(&p));
    let total: f64 = sol.x.sum();
    if total <= 0.0 {
        return Err(Error::Numerical(
            "reconstruction returned an all-zero distribution".into(),
        ));
    }
    let sigma = JointPhotonStatistics::from_raw(DMatrix::from_column_slice(
        n,
        n,
        (sol.x / total).as_slice(),
    ));
    Ok(Reconstruction {
        unpaired_fraction: sigma.unpaired_fraction(),
        sigma,
        residual: sol.residual,
        converged: sol.converged,
    })
}
