//! Penalty selection by K-fold cross-validation.

use super::lasso::StandardizedProblem;
use super::RegressError;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// How the LASSO penalty is chosen within each perturbation iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum LambdaRule {
    /// Fixed fraction of the data-dependent null-model penalty. Deterministic
    /// and stable across perturbation iterations; the pipeline default.
    FractionOfMax { fraction: f64 },
    /// Largest penalty whose mean CV error is within one standard error of
    /// the minimum.
    CvOneSe { folds: usize, grid_size: usize },
    /// Penalty minimizing mean CV error.
    CvMin { folds: usize, grid_size: usize },
    /// Fixed penalty, no data-driven selection.
    Fixed { lambda: f64 },
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::FractionOfMax { fraction: 0.18 }
    }
}

const GRID_DECADES: f64 = 3.0; // grid spans lambda_max down to 1e-3 * lambda_max
const DEGENERATE_VAR_TOL: f64 = 1e-12;

fn log_grid(lambda_max: f64, grid_size: usize) -> Vec<f64> {
    let g = grid_size.max(2);
    (0..g)
        .map(|i| lambda_max * 10f64.powf(-GRID_DECADES * i as f64 / (g - 1) as f64))
        .collect()
}

/// Cross-validated penalty under the one-SE rule. Fold assignment is a
/// deterministic function of the provided stream.
pub fn select_lambda_cv(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    folds: usize,
    grid_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, RegressError> {
    select_lambda(
        design,
        response,
        &LambdaRule::CvOneSe { folds, grid_size },
        &[],
        None,
        rng,
    )
}

/// Deterministic shuffled fold assignment. With `groups`, rows sharing a
/// group id land in the same fold; on bootstrap samples this keeps duplicated
/// source rows out of the held-out fold, which would otherwise reward
/// overfitting and push the selected penalty toward zero.
fn assign_folds(
    n: usize,
    folds: usize,
    groups: Option<&[usize]>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, RegressError> {
    match groups {
        None => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            let mut fold_of = vec![0usize; n];
            for (pos, &row) in order.iter().enumerate() {
                fold_of[row] = pos % folds;
            }
            Ok(fold_of)
        }
        Some(groups) => {
            debug_assert_eq!(groups.len(), n);
            let mut unique: Vec<usize> = groups.to_vec();
            unique.sort_unstable();
            unique.dedup();
            if unique.len() < 2 * folds {
                return Err(RegressError::BadFolds {
                    n: unique.len(),
                    folds,
                });
            }
            let mut order: Vec<usize> = (0..unique.len()).collect();
            order.shuffle(rng);
            let mut fold_of_group = vec![0usize; unique.len()];
            for (pos, &g) in order.iter().enumerate() {
                fold_of_group[g] = pos % folds;
            }
            Ok(groups
                .iter()
                .map(|g| fold_of_group[unique.binary_search(g).expect("group present")])
                .collect())
        }
    }
}

/// Penalty selection with optional penalty-exempt columns and optional
/// fold-grouping ids (one per row).
pub fn select_lambda(
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    rule: &LambdaRule,
    free: &[usize],
    groups: Option<&[usize]>,
    rng: &mut ChaCha8Rng,
) -> Result<f64, RegressError> {
    let mut penalized_probe = vec![true; design.ncols()];
    for &k in free {
        penalized_probe[k] = false;
    }
    let (folds, grid_size, one_se) = match rule {
        LambdaRule::Fixed { lambda } => {
            if !(*lambda > 0.0) {
                return Err(RegressError::NonPositiveLambda(*lambda));
            }
            return Ok(*lambda);
        }
        LambdaRule::FractionOfMax { fraction } => {
            if !(*fraction > 0.0 && *fraction <= 1.0) {
                return Err(RegressError::NonPositiveLambda(*fraction));
            }
            let problem = StandardizedProblem::build(design, response);
            return Ok(problem.lambda_max(&penalized_probe) * fraction);
        }
        LambdaRule::CvOneSe { folds, grid_size } => (*folds, *grid_size, true),
        LambdaRule::CvMin { folds, grid_size } => (*folds, *grid_size, false),
    };
    let n = design.nrows();
    if design.nrows() != response.len() {
        return Err(RegressError::ShapeMismatch);
    }
    if folds < 2 || n < 2 * folds {
        return Err(RegressError::BadFolds { n, folds });
    }
    let p = design.ncols();
    let mut penalized = vec![true; p];
    for &k in free {
        penalized[k] = false;
    }

    let full = StandardizedProblem::build(design, response);
    let lambda_max = full.lambda_max(&penalized);
    let y_var = full.yty_n;
    if y_var < DEGENERATE_VAR_TOL {
        // degenerate response: null model
        return Ok(lambda_max);
    }
    let grid = log_grid(lambda_max, grid_size);
    let fold_of = assign_folds(n, folds, groups, rng)?;

    let mut mse = vec![vec![0.0f64; grid.len()]; folds];
    for f in 0..folds {
        let train_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
        let test_rows: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
        let xt = design.select_rows(train_rows.iter());
        let yt = DVector::from_fn(train_rows.len(), |i, _| response[train_rows[i]]);
        let problem = StandardizedProblem::build(&xt, &yt);
        let (path, _) = problem.solve_path(&grid, &penalized, None);
        for (gi, beta_std) in path.iter().enumerate() {
            let (coefs, intercept) = problem.to_original_scale(beta_std);
            let mut err = 0.0;
            for &row in &test_rows {
                let mut pred = intercept;
                for k in 0..p {
                    if coefs[k] != 0.0 {
                        pred += coefs[k] * design[(row, k)];
                    }
                }
                let e = response[row] - pred;
                err += e * e;
            }
            mse[f][gi] = err / test_rows.len() as f64;
        }
    }

    let g = grid.len();
    let mut mean = vec![0.0f64; g];
    let mut se = vec![0.0f64; g];
    for gi in 0..g {
        let m: f64 = (0..folds).map(|f| mse[f][gi]).sum::<f64>() / folds as f64;
        let var: f64 =
            (0..folds).map(|f| (mse[f][gi] - m).powi(2)).sum::<f64>() / (folds - 1) as f64;
        mean[gi] = m;
        se[gi] = (var / folds as f64).sqrt();
    }
    let i_min = (0..g)
        .min_by(|&a, &b| mean[a].partial_cmp(&mean[b]).unwrap())
        .unwrap();
    if !one_se {
        return Ok(grid[i_min]);
    }
    let threshold = mean[i_min] + se[i_min];
    // grid is decreasing, so the first qualifying index is the largest lambda
    let pick = (0..g).find(|&gi| mean[gi] <= threshold).unwrap_or(i_min);
    Ok(grid[pick])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regress::lasso_fit;
    use rand::Rng;

    #[test]
    fn same_seed_gives_same_lambda() {
        let mut rng = crate::rng::derive_rng(5, &[1]);
        let x = DMatrix::from_fn(60, 6, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(60, |i, _| x[(i, 2)] + rng.gen_range(-0.5..0.5));
        let l1 = select_lambda_cv(&x, &y, 5, 30, &mut crate::rng::derive_rng(99, &[7])).unwrap();
        let l2 = select_lambda_cv(&x, &y, 5, 30, &mut crate::rng::derive_rng(99, &[7])).unwrap();
        assert_eq!(l1, l2);
    }

    #[test]
    fn pure_noise_mostly_selects_null_model() {
        let mut empty = 0;
        for trial in 0..100 {
            let mut rng = crate::rng::derive_rng(1234, &[trial]);
            let x = DMatrix::from_fn(80, 8, |_, _| rng.gen_range(-1.0f64..1.0));
            let y = DVector::from_fn(80, |_, _| rng.gen_range(-1.0f64..1.0));
            let lambda = select_lambda_cv(&x, &y, 5, 30, &mut rng).unwrap();
            let fit = lasso_fit(&x, &y, lambda).unwrap();
            if fit.active_set.is_empty() {
                empty += 1;
            }
        }
        assert!(empty >= 90, "only {empty}/100 null models on pure noise");
    }

    #[test]
    fn strong_signal_is_recovered() {
        let mut hits = 0;
        for trial in 0..100 {
            let mut rng = crate::rng::derive_rng(4321, &[trial]);
            let x = DMatrix::from_fn(100, 6, |_, _| rng.gen_range(-1.0f64..1.0));
            // R^2 about 0.9
            let y = DVector::from_fn(100, |i, _| 3.0 * x[(i, 1)] + rng.gen_range(-0.55f64..0.55));
            let lambda = select_lambda_cv(&x, &y, 5, 30, &mut rng).unwrap();
            let fit = lasso_fit(&x, &y, lambda).unwrap();
            if fit.active_set.contains(&1) {
                hits += 1;
            }
        }
        assert!(hits >= 95, "signal recovered in only {hits}/100 runs");
    }

    #[test]
    fn degenerate_response_returns_lambda_max() {
        let mut rng = crate::rng::derive_rng(5, &[5]);
        let x = DMatrix::from_fn(40, 4, |_, _| rng.gen_range(-1.0f64..1.0));
        let y = DVector::from_element(40, 2.5);
        let lambda = select_lambda_cv(&x, &y, 5, 20, &mut rng).unwrap();
        let fit = lasso_fit(&x, &y, lambda).unwrap();
        assert!(fit.active_set.is_empty());
    }

    #[test]
    fn bad_folds_rejected() {
        let x = DMatrix::from_element(6, 2, 1.0);
        let y = DVector::from_element(6, 1.0);
        let mut rng = crate::rng::derive_rng(0, &[0]);
        assert!(matches!(
            select_lambda_cv(&x, &y, 5, 10, &mut rng),
            Err(RegressError::BadFolds { .. })
        ));
    }
}
