//! Derivative-free simplex (Nelder-Mead) minimizer.
//!
//! Deterministic: the initial simplex is the start point plus one fixed-step
//! perturbation per coordinate, and no randomness is used anywhere. Objective
//! values of `NaN` are treated as `+inf` so the simplex backs away from
//! regions where the objective cannot be evaluated.

#[derive(Debug, Clone)]
pub struct NelderMead {
    /// Relative spread of function values at which to stop.
    pub f_tol: f64,
    /// Coordinate spread of the simplex at which to stop.
    pub x_tol: f64,
    pub max_iter: usize,
    /// Per-coordinate displacement used to build the initial simplex.
    pub initial_step: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead { f_tol: 1e-10, x_tol: 1e-8, max_iter: 2000, initial_step: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

const ALPHA: f64 = 1.0; // reflection
const GAMMA: f64 = 2.0; // expansion
const RHO: f64 = 0.5; // contraction
const SIGMA: f64 = 0.5; // shrink

impl NelderMead {
    pub fn minimize<F: FnMut(&[f64]) -> f64>(&self, mut f: F, x0: &[f64]) -> OptimOutcome {
        let n = x0.len();
        let mut eval = |x: &[f64]| -> f64 {
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };

        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(x0.to_vec());
        for i in 0..n {
            let mut v = x0.to_vec();
            v[i] += self.initial_step;
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.max_iter {
            iterations += 1;

            // Order: best first.
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
            let reordered: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
            let reordered_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
            simplex = reordered;
            values = reordered_values;

            let f_best = values[0];
            let f_worst = values[n];
            let f_spread_ok =
                f_worst.is_finite() && (f_worst - f_best).abs() <= self.f_tol * (f_best.abs() + self.f_tol);
            let x_spread = (1..=n)
                .map(|i| {
                    (0..n)
                        .map(|j| (simplex[i][j] - simplex[0][j]).abs())
                        .fold(0.0_f64, f64::max)
                })
                .fold(0.0_f64, f64::max);
            if f_spread_ok && x_spread <= self.x_tol {
                converged = true;
                break;
            }

            // Centroid of all but the worst point.
            let mut centroid = vec![0.0; n];
            for point in simplex.iter().take(n) {
                for j in 0..n {
                    centroid[j] += point[j] / n as f64;
                }
            }

            let blend = |a: f64, from: &[f64], to: &[f64]| -> Vec<f64> {
                (0..n).map(|j| from[j] + a * (to[j] - from[j])).collect()
            };

            // Reflection.
            let reflected = blend(-ALPHA, &centroid, &simplex[n]);
            let f_reflected = eval(&reflected);
            if f_reflected < values[0] {
                // Expansion.
                let expanded = blend(-GAMMA, &centroid, &simplex[n]);
                let f_expanded = eval(&expanded);
                if f_expanded < f_reflected {
                    simplex[n] = expanded;
                    values[n] = f_expanded;
                } else {
                    simplex[n] = reflected;
                    values[n] = f_reflected;
                }
                continue;
            }
            if f_reflected < values[n - 1] {
                simplex[n] = reflected;
                values[n] = f_reflected;
                continue;
            }

            // Contraction, outside or inside of the worst point.
            let contracted = if f_reflected < values[n] {
                blend(-RHO, &centroid, &simplex[n])
            } else {
                blend(RHO, &centroid, &simplex[n])
            };
            let f_contracted = eval(&contracted);
            if f_contracted < values[n].min(f_reflected) {
                simplex[n] = contracted;
                values[n] = f_contracted;
                continue;
            }

            // Shrink toward the best point.
            for i in 1..=n {
                simplex[i] = blend(SIGMA, &simplex[0], &simplex[i].clone());
                values[i] = eval(&simplex[i]);
            }
        }

        OptimOutcome { x: simplex[0].clone(), fx: values[0], iterations, converged }
    }
}
