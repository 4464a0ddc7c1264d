use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::project_simplex;
use crate::error::{Error, Result};
use crate::market::Universe;

pub const MVO_TOLERANCE: f64 = 1e-8;
pub const MVO_MAX_ITERATIONS: usize = 200_000;
pub const DEFAULT_ESTIMATION_WINDOW: usize = 60;
pub const DIAGONAL_LOADING: f64 = 1e-6;
pub const LAMBDA_MAX: f64 = 10.0;
pub const LAMBDA_MIN: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvoInputs {
    /// Expected per-step returns.
    pub mu: Vec<f64>,
    /// Row-major covariance.
    pub sigma: Vec<Vec<f64>>,
    pub lambda_risk: f64,
}

impl MvoInputs {
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    fn sigma_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.sigma[i][j])
    }

    /// `mu^T w - lambda w^T Sigma w`.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let n = self.n();
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += w[i] * self.sigma[i][j] * w[j];
            }
        }
        self.mu.iter().zip(w).map(|(m, x)| m * x).sum::<f64>() - self.lambda_risk * quad
    }

    /// Checks dimensions, finiteness, symmetry and positive semidefiniteness.
    /// Returns the largest eigenvalue of `Sigma`.
    pub fn validate(&self) -> Result<f64> {
        let n = self.n();
        if n == 0 {
            return Err(Error::Empty("MVO expected returns"));
        }
        if self.sigma.len() != n || self.sigma.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension {
                context: "MVO covariance",
                expected: n,
                actual: self.sigma.len(),
            });
        }
        if !(self.lambda_risk > 0.0 && self.lambda_risk.is_finite()) {
            return Err(Error::Input(format!("risk aversion {} must be positive", self.lambda_risk)));
        }
        if self.mu.iter().chain(self.sigma.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Input("MVO inputs must be finite".into()));
        }
        let s = self.sigma_matrix();
        let scale = s.amax().max(1e-300);
        for i in 0..n {
            for j in 0..i {
                if (s[(i, j)] - s[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Input(format!("covariance is not symmetric at ({i}, {j})")));
                }
            }
        }
        let eig = s.symmetric_eigen().eigenvalues;
        let min = eig.min();
        if min < -1e-10 * scale {
            return Err(Error::Input(format!("covariance is not positive semidefinite (eigenvalue {min:e})")));
        }
        Ok(eig.max().max(0.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvoSolution {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each iteration, starting with the equal-weight start.
    pub trace: Vec<f64>,
}

/// Long-only mean-variance allocation by projected gradient ascent from the
/// equal-weight start. The fixed step `1 / (2 lambda lambda_max(Sigma))` is
/// the inverse gradient Lipschitz constant, which makes every iteration a
/// non-decreasing step on the objective.
pub fn mvo_solve(inputs: &MvoInputs) -> Result<MvoSolution> {
    let top = inputs.validate()?;
    let n = inputs.n();
    let lipschitz = 2.0 * inputs.lambda_risk * top;
    let step = 1.0 / lipschitz.max(1e-8);
    let sigma = inputs.sigma_matrix();
    let mu = DVector::from_column_slice(&inputs.mu);
    let mut w = vec![1.0 / n as f64; n];
    let mut trace = vec![inputs.objective(&w)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MVO_MAX_ITERATIONS {
        let wv = DVector::from_column_slice(&w);
        let grad = &mu - (&sigma * &wv) * (2.0 * inputs.lambda_risk);
        let candidate: Vec<f64> = w.iter().zip(grad.iter()).map(|(x, g)| x + step * g).collect();
        let next = project_simplex(&candidate);
        let change = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        w = next;
        iterations += 1;
        trace.push(inputs.objective(&w));
        if change < MVO_TOLERANCE {
            converged = true;
            break;
        }
    }
    Ok(MvoSolution {
        objective: inputs.objective(&w),
        weights: w,
        iterations,
        converged,
        trace,
    })
}

pub fn mvo_allocate(inputs: &MvoInputs) -> Result<Vec<f64>> {
    Ok(mvo_solve(inputs)?.weights)
}

/// Linear map from risk appetite to risk aversion: appetite 0 gives
/// `LAMBDA_MAX`, appetite 1 gives `LAMBDA_MIN`.
pub fn lambda_for_appetite(appetite: f64) -> f64 {
    LAMBDA_MAX - appetite.clamp(0.0, 1.0) * (LAMBDA_MAX - LAMBDA_MIN)
}

/// Sample mean and covariance of the `window` one-step returns known before
/// the close at `t` (returns ending at closes `t - window ..= t - 1`), with
/// diagonal loading.
pub fn estimate_moments(universe: &Universe, t: usize, window: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if window < 2 {
        return Err(Error::Config(format!("estimation window {window} must be >= 2")));
    }
    if t < window + 1 || t > universe.len() {
        return Err(Error::Window { t, required: window + 1 });
    }
    let n = universe.n_assets();
    let rows: Vec<Vec<f64>> = (t - window..t).map(|s| universe.returns_at(s)).collect();
    let m = window as f64;
    let mu: Vec<f64> = (0..n).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / m).collect();
    let mut sigma = vec![vec![0.0; n]; n];
    for r in &rows {
        for i in 0..n {
            for j in 0..n {
                sigma[i][j] += (r[i] - mu[i]) * (r[j] - mu[j]);
            }
        }
    }
    for (i, row) in sigma.iter_mut().enumerate() {
        for v in row.iter_mut() {
            *v /= m - 1.0;
        }
        row[i] += DIAGONAL_LOADING;
    }
    Ok((mu, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_inputs_give_equal_weights() {
        let inputs = MvoInputs {
            mu: vec![0.01; 3],
            sigma: vec![vec![0.02, 0.0, 0.0], vec![0.0, 0.02, 0.0], vec![0.0, 0.0, 0.02]],
            lambda_risk: 3.0,
        };
        let w = mvo_allocate(&inputs).unwrap();
        for x in w {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn corner_solution() {
        let inputs = MvoInputs {
            mu: vec![0.2, 0.0],
            sigma: vec![vec![0.04, 0.0], vec![0.0, 0.04]],
            lambda_risk: 1.0,
        };
        let s = mvo_solve(&inputs).unwrap();
        assert!(s.converged);
        assert!((s.weights[0] - 1.0).abs() < 1e-9);
        assert!(s.trace.windows(2).all(|p| p[1] >= p[0] - 1e-15));
    }

    #[test]
    fn non_psd_is_rejected() {
        let inputs = MvoInputs {
            mu: vec![0.0, 0.0],
            sigma: vec![vec![1.0, 2.0], vec![2.0, 1.0]],
            lambda_risk: 1.0,
        };
        assert!(matches!(mvo_allocate(&inputs), Err(Error::Input(_))));
    }

    #[test]
    fn large_lambda_approaches_min_variance() {
        let var = [0.01, 0.04, 0.09];
        let inputs = MvoInputs {
            mu: vec![0.05, 0.0, 0.1],
            sigma: (0..3).map(|i| (0..3).map(|j| if i == j { var[i] } else { 0.0 }).collect()).collect(),
            lambda_risk: 1e6,
        };
        let w = mvo_allocate(&inputs).unwrap();
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / v).collect();
        let s: f64 = inv.iter().sum();
        for (x, i) in w.iter().zip(&inv) {
            assert!((x - i / s).abs() < 1e-4, "{w:?}");
        }
    }

    #[test]
    fn lambda_map_endpoints() {
        assert_eq!(lambda_for_appetite(0.0), 10.0);
        assert_eq!(lambda_for_appetite(1.0), 0.5);
        assert!(lambda_for_appetite(0.3) > lambda_for_appetite(0.7));
    }
}
