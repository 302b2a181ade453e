//! Box-constrained Nelder–Mead simplex search in two dimensions.

/// Result of a simplex search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexResult {
    pub point: [f64; 2],
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Stop once every vertex lies within this distance of the best one.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial_step: f64,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            tolerance: 1e-9,
            max_iterations: 2000,
            initial_step: 0.05,
            lower: [0.0, 0.0],
            upper: [1.0, 1.0],
        }
    }
}

fn project(p: [f64; 2], opts: &SimplexOptions) -> [f64; 2] {
    [
        p[0].clamp(opts.lower[0], opts.upper[0]),
        p[1].clamp(opts.lower[1], opts.upper[1]),
    ]
}

fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Minimizes `f` over the box, starting from `start`. Trial points are
/// projected onto the box, so the search never evaluates outside it.
pub fn nelder_mead<F>(mut f: F, start: [f64; 2], opts: &SimplexOptions) -> SimplexResult
where
    F: FnMut([f64; 2]) -> f64,
{
    let mut evaluations = 0;
    let mut eval = |p: [f64; 2]| {
        evaluations += 1;
        f(p)
    };

    let x0 = project(start, opts);
    let step = opts.initial_step;
    // step inward when the start sits on the upper bound
    let offset = |i: usize| {
        let s = if x0[i] + step <= opts.upper[i] {
            step
        } else {
            -step
        };
        let mut p = x0;
        p[i] += s;
        project(p, opts)
    };
    let mut simplex = [x0, offset(0), offset(1)];
    let mut values = [eval(simplex[0]), eval(simplex[1]), eval(simplex[2])];

    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iterations {
        // order by value, breaking ties by coordinates for determinism
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            values[a]
                .total_cmp(&values[b])
                .then(simplex[a][0].total_cmp(&simplex[b][0]))
                .then(simplex[a][1].total_cmp(&simplex[b][1]))
        });
        simplex = [simplex[order[0]], simplex[order[1]], simplex[order[2]]];
        values = [values[order[0]], values[order[1]], values[order[2]]];

        let size = dist(simplex[0], simplex[1]).max(dist(simplex[0], simplex[2]));
        if size < opts.tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid = lerp(simplex[0], simplex[1], 0.5);
        let reflected = project(lerp(centroid, simplex[2], -1.0), opts);
        let fr = eval(reflected);

        if fr < values[0] {
            let expanded = project(lerp(centroid, simplex[2], -2.0), opts);
            let fe = eval(expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let (contracted, fc) = if fr < values[2] {
                let p = project(lerp(centroid, reflected, 0.5), opts);
                (p, eval(p))
            } else {
                let p = lerp(centroid, simplex[2], 0.5);
                (p, eval(p))
            };
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = lerp(simplex[0], simplex[i], 0.5);
                    values[i] = eval(simplex[i]);
                }
            }
        }
    }

    let best = (0..3)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    SimplexResult {
        point: simplex[best],
        value: values[best],
        iterations,
        evaluations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_quadratic_minimum() {
        let f = |p: [f64; 2]| (p[0] - 0.3).powi(2) + 4.0 * (p[1] - 0.7).powi(2);
        let r = nelder_mead(f, [0.5, 0.5], &SimplexOptions::default());
        assert!(r.converged);
        assert!((r.point[0] - 0.3).abs() < 1e-8);
        assert!((r.point[1] - 0.7).abs() < 1e-8);
    }

    #[test]
    fn finds_cone_minimum() {
        let f = |p: [f64; 2]| ((p[0] - 0.094).powi(2) + (p[1] - 0.08).powi(2)).sqrt();
        let r = nelder_mead(f, [0.1, 0.1], &SimplexOptions::default());
        assert!((r.point[0] - 0.094).abs() < 1e-8);
        assert!((r.point[1] - 0.08).abs() < 1e-8);
    }

    #[test]
    fn respects_bounds() {
        let f = |p: [f64; 2]| (p[0] - 1.5).powi(2) + (p[1] + 0.5).powi(2);
        let r = nelder_mead(f, [0.5, 0.5], &SimplexOptions::default());
        assert!((r.point[0] - 1.0).abs() < 1e-8);
        assert!(r.point[1].abs() < 1e-8);
    }

    #[test]
    fn start_on_upper_corner() {
        let f = |p: [f64; 2]| (p[0] - 0.9).powi(2) + (p[1] - 0.95).powi(2);
        let r = nelder_mead(f, [1.0, 1.0], &SimplexOptions::default());
        assert!((r.point[0] - 0.9).abs() < 1e-7);
        assert!((r.point[1] - 0.95).abs() < 1e-7);
    }
}
