//! Rubin's-rules pooling and final treatment-effect estimation.

use crate::dataset::{CompletedDataset, IncompleteDataset};
use crate::perturb::{impute_m, PerturbError};
use crate::regress::{independent_columns, ols_fit, RegressError};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PoolingError {
    #[error("pooling needs at least 2 imputations (got {0})")]
    InsufficientImputations(usize),
    #[error("estimate and variance vectors must have equal length")]
    LengthMismatch,
    #[error("variances must be nonnegative")]
    NegativeVariance,
    #[error("confidence level must lie in (0,1), got {0}")]
    BadLevel(f64),
    #[error("selected control index {0} out of range")]
    BadSelection(usize),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Regress(#[from] RegressError),
}

/// Pooled point estimate with within/between variance decomposition and a
/// normal-based confidence interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PooledEstimate {
    /// Pooled point estimate (mean of per-imputation estimates).
    pub q_bar: f64,
    /// Mean within-imputation variance.
    pub u_bar: f64,
    /// Between-imputation variance (divisor m-1).
    pub b: f64,
    /// Total variance `u_bar + (1 + 1/m) * b`.
    pub t_var: f64,
    pub m: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
}

/// Combines per-imputation estimates and their variances.
pub fn rubin_pool(
    estimates: &[f64],
    variances: &[f64],
    level: f64,
) -> Result<PooledEstimate, PoolingError> {
    let m = estimates.len();
    if m < 2 {
        return Err(PoolingError::InsufficientImputations(m));
    }
    if variances.len() != m {
        return Err(PoolingError::LengthMismatch);
    }
    if variances.iter().any(|&v| v < 0.0) {
        return Err(PoolingError::NegativeVariance);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(PoolingError::BadLevel(level));
    }
    let mf = m as f64;
    let q_bar = estimates.iter().sum::<f64>() / mf;
    let u_bar = variances.iter().sum::<f64>() / mf;
    let b = estimates.iter().map(|q| (q - q_bar).powi(2)).sum::<f64>() / (mf - 1.0);
    let t_var = u_bar + (1.0 + 1.0 / mf) * b;
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + level / 2.0);
    let half = z * t_var.max(0.0).sqrt();
    Ok(PooledEstimate {
        q_bar,
        u_bar,
        b,
        t_var,
        m,
        ci_low: q_bar - half,
        ci_high: q_bar + half,
        level,
    })
}

/// Coefficient of D and its squared standard error in
/// `Y ~ intercept + D + X_selected` on one completed dataset. Duplicated
/// columns are dropped (lowest index kept), matching the detection step.
pub fn treatment_fit(
    completed: &CompletedDataset,
    selected: &BTreeSet<usize>,
) -> Result<(f64, f64), PoolingError> {
    let n = completed.n();
    let p = completed.p();
    if let Some(&bad) = selected.iter().find(|&&j| j >= p) {
        return Err(PoolingError::BadSelection(bad));
    }
    let cols: Vec<usize> = selected.iter().copied().collect();
    let x = completed.x();
    let mut design = DMatrix::zeros(n, 1 + cols.len());
    design.column_mut(0).copy_from(&completed.d());
    for (pos, &j) in cols.iter().enumerate() {
        design.column_mut(pos + 1).copy_from(&x.column(j));
    }
    // prune duplicates the same way the detection regression does
    let mut augmented = DMatrix::from_element(n, design.ncols() + 1, 1.0);
    augmented.columns_mut(1, design.ncols()).copy_from(&design);
    let kept_aug = independent_columns(&augmented, 1e-8);
    let kept: Vec<usize> = kept_aug.iter().filter(|&&a| a >= 1).map(|&a| a - 1).collect();
    let pruned = design.select_columns(kept.iter());
    let y = DVector::from_column_slice(completed.y().as_slice());
    let fit = ols_fit(&pruned, &y)?;
    let d_pos = kept
        .iter()
        .position(|&c| c == 0)
        .map(|pos| pos + 1)
        .unwrap_or(0); // D dropped only if constant; report intercept slot then
    Ok((
        fit.coefficients[d_pos],
        fit.standard_errors[d_pos].powi(2),
    ))
}

/// Final pooled treatment-effect estimate: `m` imputations of the original
/// (non-resampled) dataset, the outcome regression on each, Rubin pooling of
/// the D coefficient.
pub fn final_estimate(
    dataset: &IncompleteDataset,
    selected: &BTreeSet<usize>,
    m: usize,
    level: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PooledEstimate, PoolingError> {
    let completions = impute_m(dataset, m, rng)?;
    pooled_from_completions(&completions, selected, level)
}

/// Pooling over already-materialized completions; lets one set of final
/// imputations serve several selection rules.
pub fn pooled_from_completions(
    completions: &[CompletedDataset],
    selected: &BTreeSet<usize>,
    level: f64,
) -> Result<PooledEstimate, PoolingError> {
    if completions.len() < 2 {
        return Err(PoolingError::InsufficientImputations(completions.len()));
    }
    let mut estimates = Vec::with_capacity(completions.len());
    let mut variances = Vec::with_capacity(completions.len());
    for completed in completions {
        let (est, var) = treatment_fit(completed, selected)?;
        estimates.push(est);
        variances.push(var);
    }
    rubin_pool(&estimates, &variances, level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    #[test]
    fn pooled_quantities_match_hand_arithmetic() {
        let pooled = rubin_pool(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5], 0.95).unwrap();
        assert!((pooled.q_bar - 2.0).abs() < 1e-12);
        assert!((pooled.u_bar - 0.5).abs() < 1e-12);
        assert!((pooled.b - 1.0).abs() < 1e-12);
        assert!((pooled.t_var - (0.5 + 4.0 / 3.0)).abs() < 1e-12);
        assert!((pooled.t_var - 1.8333).abs() < 1e-4);
    }

    #[test]
    fn equal_estimates_have_zero_between_variance() {
        let pooled = rubin_pool(&[1.5, 1.5, 1.5, 1.5], &[0.3, 0.4, 0.2, 0.3], 0.95).unwrap();
        assert_eq!(pooled.b, 0.0);
        assert!((pooled.t_var - pooled.u_bar).abs() < 1e-15);
    }

    #[test]
    fn total_variance_shrinks_toward_ubar_plus_b_in_m() {
        // hold B and U fixed, grow m
        let t_at = |m: usize| {
            let ests: Vec<f64> = (0..m).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
            let vars = vec![0.5; m];
            rubin_pool(&ests, &vars, 0.95).unwrap().t_var
        };
        assert!(t_at(4) > t_at(8));
        assert!(t_at(8) > t_at(64));
    }

    #[test]
    fn ci_width_identity() {
        let pooled = rubin_pool(&[0.2, 0.6, 0.1], &[0.05, 0.07, 0.06], 0.95).unwrap();
        let z = 1.959963984540054;
        let width = pooled.ci_high - pooled.ci_low;
        assert!((width - 2.0 * z * pooled.t_var.sqrt()).abs() < 1e-10);
        assert!(pooled.ci_low <= pooled.q_bar && pooled.q_bar <= pooled.ci_high);
    }

    #[test]
    fn pooling_is_permutation_invariant() {
        let e = [0.9, 1.4, 0.3, 1.1];
        let v = [0.2, 0.25, 0.22, 0.18];
        let a = rubin_pool(&e, &v, 0.9).unwrap();
        let e2 = [1.1, 0.3, 0.9, 1.4];
        let v2 = [0.18, 0.22, 0.2, 0.25];
        let b = rubin_pool(&e2, &v2, 0.9).unwrap();
        assert!((a.q_bar - b.q_bar).abs() < 1e-15);
        assert!((a.t_var - b.t_var).abs() < 1e-15);
    }

    #[test]
    fn single_imputation_rejected() {
        assert!(matches!(
            rubin_pool(&[1.0], &[0.5], 0.95),
            Err(PoolingError::InsufficientImputations(1))
        ));
    }

    fn synthetic(n: usize, missing: bool, seed: u64) -> IncompleteDataset {
        let mut rng = derive_rng(seed, &[99]);
        let alpha0 = 0.8;
        let mut values = DMatrix::zeros(n, 5);
        for i in 0..n {
            let x1: f64 = rng.gen_range(-1.0..1.0);
            let x2: f64 = rng.gen_range(-1.0..1.0);
            let x3: f64 = rng.gen_range(-1.0..1.0);
            let d = x1 + rng.gen_range(-0.5..0.5);
            let y = alpha0 * d + 0.9 * x1 + rng.gen_range(-0.5..0.5);
            values[(i, 0)] = y;
            values[(i, 1)] = d;
            values[(i, 2)] = x1;
            values[(i, 3)] = x2;
            values[(i, 4)] = x3;
        }
        let mut mask = DMatrix::from_element(n, 5, true);
        if missing {
            for i in 0..n {
                if rng.gen_bool(0.2) {
                    mask[(i, 3)] = false;
                }
                if rng.gen_bool(0.2) {
                    mask[(i, 4)] = false;
                }
            }
        }
        IncompleteDataset::new(
            values,
            mask,
            vec!["y".into(), "d".into(), "x1".into(), "x2".into(), "x3".into()],
        )
        .unwrap()
    }

    #[test]
    fn complete_data_pools_to_single_fit() {
        let ds = synthetic(150, false, 7);
        let mut rng = derive_rng(7, &[1]);
        let pooled = final_estimate(&ds, &BTreeSet::from([0]), 5, 0.95, &mut rng).unwrap();
        assert_eq!(pooled.b, 0.0, "identical imputations must agree");
        assert!((pooled.t_var - pooled.u_bar).abs() < 1e-18);
    }

    #[test]
    fn missing_data_gives_positive_between_variance() {
        let ds = synthetic(150, true, 8);
        let mut rng = derive_rng(8, &[1]);
        let pooled = final_estimate(&ds, &BTreeSet::from([0, 1, 2]), 10, 0.95, &mut rng).unwrap();
        assert!(pooled.b > 0.0);
        assert!(pooled.t_var > pooled.u_bar);
    }

    #[test]
    fn empty_selection_still_pools() {
        let ds = synthetic(100, true, 9);
        let mut rng = derive_rng(9, &[1]);
        let pooled = final_estimate(&ds, &BTreeSet::new(), 4, 0.95, &mut rng).unwrap();
        assert!(pooled.q_bar.is_finite());
    }

    #[test]
    fn estimate_lands_near_truth_with_correct_controls() {
        let mut covered = 0;
        for seed in 0..20 {
            let ds = synthetic(300, true, 100 + seed);
            let mut rng = derive_rng(200 + seed, &[1]);
            let pooled = final_estimate(&ds, &BTreeSet::from([0]), 10, 0.95, &mut rng).unwrap();
            if (pooled.q_bar - 0.8).abs() <= 4.0 * pooled.t_var.sqrt() {
                covered += 1;
            }
        }
        assert!(covered >= 19, "only {covered}/20 within 4 sd of truth");
    }
}
