//! Bounded Levenberg–Marquardt with Marquardt diagonal scaling.
//!
//! Parameters have lower bounds only. A parameter sitting on its bound
//! whose descent direction points out of the box is frozen for that
//! iteration; every trial point is projected back onto the box.

use nalgebra::{DMatrix, DVector};

pub(crate) const MAX_ITERATIONS: usize = 500;
const STEP_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e15;
/// Relative cost decrease below which a trial is indistinguishable from rounding.
const COST_NOISE: f64 = 16.0 * f64::EPSILON;
/// Extra iterations spent tightening parameters once the cost has settled.
const POLISH_ITERATIONS: usize = 10;

/// A model `f(t; p)` with an analytic gradient with respect to `p`.
pub(crate) trait Model {
    fn dim(&self) -> usize;
    fn value(&self, p: &[f64], t: f64) -> f64;
    fn gradient(&self, p: &[f64], t: f64, out: &mut [f64]);
}

pub(crate) struct Problem<'a, M> {
    pub model: &'a M,
    pub t: &'a [f64],
    pub y: &'a [f64],
    /// Per-point residual weights.
    pub w: &'a [f64],
    pub lower: &'a [f64],
    /// Typical magnitude of each parameter, used to make the step test relative.
    pub scale: &'a [f64],
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub params: Vec<f64>,
    /// Weighted sum of squared residuals.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl<M: Model> Problem<'_, M> {
    fn project(&self, p: &mut [f64]) {
        for (v, lo) in p.iter_mut().zip(self.lower) {
            if !(*v >= *lo) {
                *v = *lo;
            }
        }
    }

    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.t.len(),
            self.t
                .iter()
                .zip(self.y)
                .zip(self.w)
                .map(|((&t, &y), &w)| w * (y - self.model.value(p, t))),
        )
    }

    fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
        let n = self.t.len();
        let k = self.model.dim();
        let mut jac = DMatrix::zeros(n, k);
        let mut g = vec![0.0; k];
        for (i, (&t, &w)) in self.t.iter().zip(self.w).enumerate() {
            self.model.gradient(p, t, &mut g);
            for (j, gj) in g.iter().enumerate() {
                jac[(i, j)] = w * gj;
            }
        }
        jac
    }

    pub fn solve(&self, start: &[f64]) -> Outcome {
        let k = self.model.dim();
        let mut p = start.to_vec();
        self.project(&mut p);
        let mut r = self.residuals(&p);
        let mut cost = r.norm_squared();
        let mut lambda = 1e-3;
        let mut settled_at: Option<usize> = None;
        if !cost.is_finite() {
            return Outcome {
                params: p,
                cost,
                iterations: 0,
                converged: false,
            };
        }
        for iter in 1..=MAX_ITERATIONS {
            if cost == 0.0 {
                return Outcome {
                    params: p,
                    cost,
                    iterations: iter - 1,
                    converged: true,
                };
            }
            let jac = self.jacobian(&p);
            let grad = jac.tr_mul(&r);
            let normal = jac.tr_mul(&jac);
            let free: Vec<usize> = (0..k)
                .filter(|&j| !(p[j] <= self.lower[j] && grad[j] <= 0.0))
                .collect();
            if free.is_empty() {
                return Outcome {
                    params: p,
                    cost,
                    iterations: iter,
                    converged: true,
                };
            }
            let diag_max = free.iter().map(|&j| normal[(j, j)]).fold(0.0, f64::max);
            let floor = (diag_max * 1e-12).max(f64::MIN_POSITIVE);
            loop {
                let m = free.len();
                let mut a = DMatrix::zeros(m, m);
                let mut g = DVector::zeros(m);
                for (fi, &i) in free.iter().enumerate() {
                    g[fi] = grad[i];
                    for (fj, &j) in free.iter().enumerate() {
                        a[(fi, fj)] = normal[(i, j)];
                    }
                    a[(fi, fi)] += lambda * normal[(i, i)].max(floor);
                }
                let step = a
                    .clone()
                    .cholesky()
                    .map(|c| c.solve(&g))
                    .or_else(|| a.lu().solve(&g));
                if let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) {
                    let mut trial = p.clone();
                    for (fi, &i) in free.iter().enumerate() {
                        trial[i] += step[fi];
                    }
                    self.project(&mut trial);
                    let r_trial = self.residuals(&trial);
                    let cost_trial = r_trial.norm_squared();
                    if cost_trial < cost * (1.0 - COST_NOISE) {
                        let rel_step = trial
                            .iter()
                            .zip(&p)
                            .zip(self.scale)
                            .map(|((a, b), s)| ((a - b) / (b.abs() + s)).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        let rel_cost = (cost - cost_trial) / cost;
                        p = trial;
                        r = r_trial;
                        cost = cost_trial;
                        lambda = (lambda / 10.0).max(1e-12);
                        if rel_step < STEP_TOL {
                            return Outcome {
                                params: p,
                                cost,
                                iterations: iter,
                                converged: true,
                            };
                        }
                        if rel_cost < COST_TOL {
                            let since = *settled_at.get_or_insert(iter);
                            if iter - since >= POLISH_ITERATIONS {
                                return Outcome {
                                    params: p,
                                    cost,
                                    iterations: iter,
                                    converged: true,
                                };
                            }
                        }
                        break;
                    }
                }
                lambda *= 10.0;
                if lambda > LAMBDA_MAX {
                    // No descent direction left at machine precision.
                    return Outcome {
                        params: p,
                        cost,
                        iterations: iter,
                        converged: true,
                    };
                }
            }
        }
        Outcome {
            params: p,
            cost,
            iterations: MAX_ITERATIONS,
            converged: settled_at.is_some(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Line;

    impl Model for Line {
        fn dim(&self) -> usize {
            2
        }
        fn value(&self, p: &[f64], t: f64) -> f64 {
            p[0] + p[1] * t
        }
        fn gradient(&self, _: &[f64], t: f64, out: &mut [f64]) {
            out[0] = 1.0;
            out[1] = t;
        }
    }

    #[test]
    fn linear_least_squares() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.1, 4.9, 7.0];
        let w = [1.0; 4];
        let prob = Problem {
            model: &Line,
            t: &t,
            y: &y,
            w: &w,
            lower: &[-1e9, -1e9],
            scale: &[1e-6, 1e-6],
        };
        let out = prob.solve(&[0.0, 0.0]);
        assert!(out.converged);
        assert!((out.params[0] - 1.03).abs() < 1e-8, "{:?}", out.params);
        assert!((out.params[1] - 1.98).abs() < 1e-8);
    }

    #[test]
    fn bound_is_respected() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let y = [3.0, 2.0, 1.0, 0.0];
        let w = [1.0; 4];
        let prob = Problem {
            model: &Line,
            t: &t,
            y: &y,
            w: &w,
            lower: &[-1e9, 0.0],
            scale: &[1e-6, 1e-6],
        };
        let out = prob.solve(&[1.0, 1.0]);
        assert!(out.converged);
        assert_eq!(out.params[1], 0.0);
        assert!((out.params[0] - 1.5).abs() < 1e-8);
    }
}
