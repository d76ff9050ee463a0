//! Ordinary least squares with classical (homoscedastic) inference.

use super::RegressError;
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Result of an OLS fit. The intercept is coefficient 0; design columns
/// follow in order.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: DVector<f64>,
    pub standard_errors: DVector<f64>,
    pub t_statistics: DVector<f64>,
    /// Two-sided p-values from the t distribution with `df_resid` degrees of
    /// freedom.
    pub p_values: DVector<f64>,
    pub residual_variance: f64,
    pub n_obs: usize,
    pub df_resid: usize,
}

/// Greedy column-rank filter. Returns the indices of columns that are
/// linearly independent of all *earlier* kept columns, so duplicates keep
/// their lowest index. Uses modified Gram-Schmidt with re-orthogonalization.
pub fn independent_columns(matrix: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let mut kept = Vec::new();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..matrix.ncols() {
        let col = matrix.column(j).into_owned();
        let norm0 = col.norm();
        if norm0 == 0.0 {
            continue;
        }
        let mut v = col;
        for _ in 0..2 {
            for b in &basis {
                let proj = b.dot(&v);
                v.axpy(-proj, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > rel_tol * norm0 {
            kept.push(j);
            basis.push(v / norm);
        }
    }
    kept
}

/// Fits `response ~ intercept + design` by least squares with classical
/// standard errors.
pub fn ols_fit(design: &DMatrix<f64>, response: &DVector<f64>) -> Result<OlsFit, RegressError> {
    let n = design.nrows();
    let k = design.ncols();
    if response.len() != n {
        return Err(RegressError::ShapeMismatch);
    }
    if n <= k + 1 {
        return Err(RegressError::InsufficientObservations {
            n,
            k_plus_one: k + 1,
        });
    }
    let mut x = DMatrix::from_element(n, k + 1, 1.0);
    x.columns_mut(1, k).copy_from(design);

    let kept = independent_columns(&x, 1e-8);
    if kept.len() < k + 1 {
        // first augmented column not in `kept`; report its design index
        let missing = (0..k + 1).find(|j| !kept.contains(j)).unwrap();
        return Err(RegressError::Singular {
            column: missing.saturating_sub(1),
        });
    }

    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * response;
    let coefficients = r
        .solve_upper_triangular(&qty)
        .ok_or(RegressError::Singular { column: 0 })?;

    let residuals = response - &x * &coefficients;
    let rss = residuals.norm_squared().max(0.0);
    let df_resid = n - (k + 1);
    let residual_variance = rss / df_resid as f64;

    // (X'X)^-1 = R^-1 R^-T
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k + 1, k + 1))
        .ok_or(RegressError::Singular { column: 0 })?;
    let xtx_inv_diag: Vec<f64> = (0..k + 1)
        .map(|i| r_inv.row(i).norm_squared())
        .collect();

    let t_dist = StudentsT::new(0.0, 1.0, df_resid as f64).expect("df_resid >= 1");
    let mut standard_errors = DVector::zeros(k + 1);
    let mut t_statistics = DVector::zeros(k + 1);
    let mut p_values = DVector::zeros(k + 1);
    for i in 0..k + 1 {
        let se = (residual_variance * xtx_inv_diag[i]).max(0.0).sqrt();
        standard_errors[i] = se;
        if se > 0.0 {
            let t = coefficients[i] / se;
            t_statistics[i] = t;
            p_values[i] = 2.0 * (1.0 - t_dist.cdf(t.abs()));
        } else if coefficients[i] == 0.0 {
            t_statistics[i] = 0.0;
            p_values[i] = 1.0;
        } else {
            t_statistics[i] = f64::INFINITY * coefficients[i].signum();
            p_values[i] = 0.0;
        }
    }

    Ok(OlsFit {
        coefficients,
        standard_errors,
        t_statistics,
        p_values,
        residual_variance,
        n_obs: n,
        df_resid,
    })
}
