//! LASSO by cyclic coordinate descent on the Gram matrix.
//!
//! Solves `(1/2n)||y - Xb||^2 + lambda * sum_k w_k |b_k|` with columns
//! standardized to mean 0 and unit variance internally and coefficients
//! reported on the original scale. The intercept is never penalized (handled
//! by centering); individual columns can be exempted from the penalty, which
//! is how the variable of interest is forced into the outcome equation.

use super::RegressError;
use nalgebra::{DMatrix, DVector};

const SWEEP_TOL: f64 = 1e-7;
const MAX_SWEEPS: usize = 10_000;
const LAMBDA_FLOOR: f64 = 1e-10;
const CONSTANT_VAR_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct LassoFit {
    /// Per-column coefficients on the original scale.
    pub coefficients: DVector<f64>,
    /// Unpenalized intercept, reported separately.
    pub intercept: f64,
    pub lambda: f64,
    /// Indices of nonzero coefficients.
    pub active_set: Vec<usize>,
    /// Columns with zero observed variance: excluded from the penalized set,
    /// coefficient forced to 0.
    pub constant_columns: Vec<usize>,
    pub sweeps: usize,
}

/// Centered/standardized problem data shared by single fits and CV paths.
pub(super) struct StandardizedProblem {
    pub p: usize,
    pub means: Vec<f64>,
    /// Population-SD scales; 0.0 marks a constant column.
    pub scales: Vec<f64>,
    pub y_mean: f64,
    /// Xs'Xs / n with rows/cols of constant columns zeroed.
    pub gram: DMatrix<f64>,
    /// Xs'(y - ybar) / n.
    pub xty: DVector<f64>,
    pub yty_n: f64,
}

impl StandardizedProblem {
    pub fn build(design: &DMatrix<f64>, response: &DVector<f64>) -> Self {
        let n = design.nrows();
        let p = design.ncols();
        let nf = n as f64;
        let mut means = vec![0.0; p];
        let mut scales = vec![0.0; p];
        let mut xs = design.clone();
        for k in 0..p {
            let mut col = xs.column_mut(k);
            let mean = col.sum() / nf;
            col.add_scalar_mut(-mean);
            let var = col.norm_squared() / nf;
            means[k] = mean;
            if var > CONSTANT_VAR_TOL {
                let s = var.sqrt();
                scales[k] = s;
                col /= s;
            } else {
                scales[k] = 0.0;
                col.fill(0.0);
            }
        }
        let y_mean = response.sum() / nf;
        let yc = response.add_scalar(-y_mean);
        let gram = xs.transpose() * &xs / nf;
        let xty = xs.transpose() * &yc / nf;
        let yty_n = yc.norm_squared() / nf;
        Self {
            p,
            means,
            scales,
            y_mean,
            gram,
            xty,
            yty_n,
        }
    }

    /// Smallest penalty that zeroes every penalized coefficient, after
    /// profiling out penalty-exempt columns.
    pub fn lambda_max(&self, penalized: &[bool]) -> f64 {
        let free: Vec<usize> = (0..self.p)
            .filter(|&k| !penalized[k] && self.scales[k] > 0.0)
            .collect();
        let mut grad = self.xty.clone();
        if !free.is_empty() {
            let gff = DMatrix::from_fn(free.len(), free.len(), |a, b| {
                self.gram[(free[a], free[b])]
            });
            let cf = DVector::from_fn(free.len(), |a, _| self.xty[free[a]]);
            if let Some(chol) = gff.cholesky() {
                let bf = chol.solve(&cf);
                for k in 0..self.p {
                    let cross: f64 = free
                        .iter()
                        .enumerate()
                        .map(|(a, &f)| self.gram[(k, f)] * bf[a])
                        .sum();
                    grad[k] -= cross;
                }
            }
        }
        let raw = (0..self.p)
            .filter(|&k| penalized[k] && self.scales[k] > 0.0)
            .map(|k| grad[k].abs())
            .fold(0.0f64, f64::max);
        raw.max(LAMBDA_FLOOR)
    }

    /// Warm-started coordinate descent over a decreasing penalty grid.
    /// Returns standardized coefficients per grid point and sweep counts.
    /// `objective_trace`, when supplied, records the per-sweep objective of
    /// the final grid point.
    pub fn solve_path(
        &self,
        lambdas: &[f64],
        penalized: &[bool],
        mut objective_trace: Option<&mut Vec<f64>>,
    ) -> (Vec<DVector<f64>>, usize) {
        let p = self.p;
        let mut beta: DVector<f64> = DVector::zeros(p);
        let mut grad = self.xty.clone();
        let mut out = Vec::with_capacity(lambdas.len());
        let mut total_sweeps = 0;
        let last = lambdas.len().saturating_sub(1);
        for (li, &lam) in lambdas.iter().enumerate() {
            let tracing = li == last;
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                let mut max_delta = 0.0f64;
                for k in 0..p {
                    if self.scales[k] == 0.0 {
                        continue;
                    }
                    // gram diagonal is 1 for standardized columns
                    let z = grad[k] + beta[k];
                    let threshold = if penalized[k] { lam } else { 0.0 };
                    let new = soft_threshold(z, threshold);
                    let delta = new - beta[k];
                    if delta != 0.0 {
                        beta[k] = new;
                        grad.axpy(-delta, &self.gram.column(k).into_owned(), 1.0);
                        max_delta = max_delta.max(delta.abs());
                    }
                }
                if tracing {
                    if let Some(trace) = objective_trace.as_deref_mut() {
                        trace.push(self.objective(&beta, &grad, lam, penalized));
                    }
                }
                if max_delta < SWEEP_TOL || sweeps >= MAX_SWEEPS {
                    break;
                }
            }
            total_sweeps += sweeps;
            out.push(beta.clone());
        }
        (out, total_sweeps)
    }

    /// Objective value using the maintained gradient:
    /// b'Gb = b'(c - grad), so no O(p^2) product is needed.
    fn objective(&self, beta: &DVector<f64>, grad: &DVector<f64>, lam: f64, penalized: &[bool]) -> f64 {
        let quad = 0.5 * self.yty_n - 0.5 * beta.dot(&(&self.xty + grad));
        let l1: f64 = (0..self.p)
            .filter(|&k| penalized[k])
            .map(|k| beta[k].abs())
            .sum();
        quad + lam * l1
    }

    /// Maps standardized coefficients back to the original scale.
    pub fn to_original_scale(&self, beta_std: &DVector<f64>) -> (DVector<f64>, f64) {
        let mut coefs = DVector::zeros(self.p);
        let mut intercept = self.y_mean;
        for k in 0..self.p {
            if self.scales[k] > 0.0 && beta_std[k] != 0.0 {
                let b = beta_std[k] / self.scales[k];
                coefs[k] = b;
                intercept -= b * self.means[k];
            }
        }
        (coefs, intercept)
    }

    pub fn to_standardized(&self, coefs: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.p, |k, _| coefs[k] * self.scales[k])
    }
}

#[inline]
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn penalized_flags(p: usize, free: &[usize]) -> Vec<bool> {
    let mut flags = vec![true; p];
    for &k in free {
        flags[k] = false;
    }
    flags
}

fn fit_impl(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    lambda: f64,
    free: &[usize],
) -> Result<LassoFit, RegressError> {
    if design.nrows() != response.len() {
        return Err(RegressError::ShapeMismatch);
    }
    if !(lambda > 0.0) {
        return Err(RegressError::NonPositiveLambda(lambda));
    }
    let problem = StandardizedProblem::build(design, response);
    let penalized = penalized_flags(problem.p, free);
    let (path, sweeps) = problem.solve_path(&[lambda], &penalized, None);
    let (coefficients, intercept) = problem.to_original_scale(&path[0]);
    let active_set: Vec<usize> = (0..problem.p).filter(|&k| coefficients[k] != 0.0).collect();
    let constant_columns: Vec<usize> = (0..problem.p).filter(|&k| problem.scales[k] == 0.0).collect();
    Ok(LassoFit {
        coefficients,
        intercept,
        lambda,
        active_set,
        constant_columns,
        sweeps,
    })
}

/// LASSO with every column penalized.
pub fn lasso_fit(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    lambda: f64,
) -> Result<LassoFit, RegressError> {
    fit_impl(design, response, lambda, &[])
}

/// LASSO with the listed columns exempt from the penalty.
pub fn lasso_fit_with_free(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    lambda: f64,
    free: &[usize],
) -> Result<LassoFit, RegressError> {
    fit_impl(design, response, lambda, free)
}

/// Smallest penalty that produces the null model (all columns penalized).
pub fn lambda_max(design: &DMatrix<f64>, response: &DVector<f64>) -> f64 {
    let problem = StandardizedProblem::build(design, response);
    problem.lambda_max(&vec![true; problem.p])
}

/// Largest stationarity violation of a fit, measured on the standardized
/// design: for zero coefficients `| (1/n) x_k' r | - lambda`, for active ones
/// `| (1/n) x_k' r - lambda * sign |`, for penalty-exempt ones `|(1/n) x_k' r|`.
pub fn kkt_max_violation(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    fit: &LassoFit,
    free: &[usize],
) -> f64 {
    let problem = StandardizedProblem::build(design, response);
    let beta_std = problem.to_standardized(&fit.coefficients);
    let grad = &problem.xty - &problem.gram * &beta_std;
    let penalized = penalized_flags(problem.p, free);
    let mut worst = 0.0f64;
    for k in 0..problem.p {
        if problem.scales[k] == 0.0 {
            continue;
        }
        let v = if !penalized[k] {
            grad[k].abs()
        } else if beta_std[k] == 0.0 {
            (grad[k].abs() - fit.lambda).max(0.0)
        } else {
            (grad[k] - fit.lambda * beta_std[k].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Per-sweep objective values for a single fit; used to check that
/// coordinate descent is monotone.
pub fn lasso_sweep_objectives(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    lambda: f64,
) -> Vec<f64> {
    let problem = StandardizedProblem::build(design, response);
    let penalized = vec![true; problem.p];
    let mut trace = Vec::new();
    problem.solve_path(&[lambda], &penalized, Some(&mut trace));
    trace
}
