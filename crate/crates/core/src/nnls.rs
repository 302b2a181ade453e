//! Nonnegative least squares by the Lawson–Hanson active-set method.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    /// Euclidean norm of `A x - b`.
    pub residual: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit before the optimality test passed.
    pub converged: bool,
}

/// Minimizes `||A x - b||` subject to `x >= 0`.
///
/// Deterministic: ties in the dual vector are broken by the lowest index.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> NnlsSolution {
    let (m, n) = a.shape();
    assert_eq!(b.len(), m, "right-hand side length must match rows of A");

    let norm1 = a
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let tol = 10.0 * f64::EPSILON * norm1.max(1.0) * m.max(n) as f64;
    let max_iter = 3 * n.max(1);

    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let w = a.tr_mul(&(b - a * &x));
        let candidate = (0..n).filter(|&j| !passive[j]).fold(
            None,
            |best: Option<(usize, f64)>, j| match best {
                Some((_, wb)) if wb >= w[j] => best,
                _ => Some((j, w[j])),
            },
        );
        match candidate {
            Some((j, wj)) if wj > tol => passive[j] = true,
            _ => {
                converged = true;
                break;
            }
        }
        if iterations >= max_iter {
            break;
        }

        // inner loop: keep the passive-set solution feasible
        loop {
            iterations += 1;
            let z = solve_passive(a, b, &passive);
            let infeasible: Vec<usize> = (0..n).filter(|&i| passive[i] && z[i] <= 0.0).collect();
            if infeasible.is_empty() {
                x = z;
                break;
            }
            let alpha = infeasible
                .iter()
                .map(|&i| x[i] / (x[i] - z[i]))
                .fold(f64::INFINITY, f64::min);
            for i in 0..n {
                if passive[i] {
                    x[i] += alpha * (z[i] - x[i]);
                }
            }
            for i in 0..n {
                if passive[i] && x[i] <= tol {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            if iterations >= max_iter {
                break;
            }
        }
        if iterations >= max_iter {
            break;
        }
    }

    let residual = (a * &x - b).norm();
    NnlsSolution {
        x,
        residual,
        iterations,
        converged,
    }
}

/// Unconstrained least squares restricted to the passive columns; the other
/// components are zero.
fn solve_passive(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let cols: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let mut z = DVector::zeros(passive.len());
    if cols.is_empty() {
        return z;
    }
    let sub = a.select_columns(cols.iter());
    let svd = sub.svd(true, true);
    let eps = f64::EPSILON * svd.singular_values.max() * a.nrows().max(cols.len()) as f64;
    let sol = svd
        .solve(b, eps)
        .expect("SVD was computed with both singular-vector sets");
    for (k, &j) in cols.iter().enumerate() {
        z[j] = sol[k];
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn interior_solution_matches_least_squares() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let sol = nnls(&a, &b);
        assert!(sol.converged);
        assert_abs_diff_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.x[1], 2.0, epsilon = 1e-12);
        assert!(sol.residual < 1e-12);
    }

    #[test]
    fn clamps_negative_components() {
        // unconstrained optimum is (-1, 2)
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![-1.0, 2.0]);
        let sol = nnls(&a, &b);
        assert_eq!(sol.x[0], 0.0);
        assert_abs_diff_eq!(sol.x[1], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sol.residual, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let sol = nnls(&a, &DVector::zeros(2));
        assert!(sol.x.iter().all(|&v| v == 0.0));
        assert!(sol.converged);
    }

    #[test]
    fn satisfies_kkt_on_random_problem() {
        let a = DMatrix::from_fn(12, 6, |i, j| ((i * 7 + j * 13) % 11) as f64 / 11.0 - 0.3);
        let b = DVector::from_fn(12, |i, _| ((i * 5) % 7) as f64 / 7.0 - 0.4);
        let sol = nnls(&a, &b);
        assert!(sol.converged);
        let grad = a.tr_mul(&(&a * &sol.x - &b));
        for j in 0..6 {
            assert!(sol.x[j] >= 0.0);
            if sol.x[j] > 0.0 {
                assert!(grad[j].abs() < 1e-10, "stationarity at {j}: {}", grad[j]);
            } else {
                assert!(grad[j] > -1e-10, "dual feasibility at {j}: {}", grad[j]);
            }
        }
    }
}
