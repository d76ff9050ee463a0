//! PDS candidate sets and the asymmetric detection rule.
//!
//! Each completed dataset yields two LASSO active sets: the outcome equation
//! `Y ~ D + X` (D forced in, unpenalized) and the auxiliary equation `D ~ X`.
//! Their union is the PDS candidate set. The detection rule keeps
//! auxiliary-selected variables unconditionally; variables selected only in
//! the outcome equation must also be significant at level `alpha` in the
//! post-selection regression `Y ~ intercept + D + X_union`.

use crate::dataset::CompletedDataset;
use crate::regress::{
    independent_columns, lasso_fit, lasso_fit_with_free, ols_fit, select_lambda, LambdaRule,
    RegressError,
};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error("significance level must lie in (0,1), got {0}")]
    BadAlpha(f64),
    #[error("detection row for iteration {got} pushed out of order (expected {expected})")]
    NonContiguousIteration { expected: u64, got: u64 },
    #[error("detection row width {got} does not match history width {expected}")]
    WidthMismatch { expected: usize, got: usize },
}

/// Active sets of the two selection equations, 0-based control indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PdsSelection {
    /// Controls selected in the outcome equation (D excluded).
    pub s_y: BTreeSet<usize>,
    /// Controls selected in the auxiliary equation for D.
    pub s_d: BTreeSet<usize>,
    /// `s_y ∪ s_d`.
    pub s_union: BTreeSet<usize>,
}

impl PdsSelection {
    pub fn new(s_y: BTreeSet<usize>, s_d: BTreeSet<usize>) -> Self {
        let s_union = s_y.union(&s_d).copied().collect();
        Self { s_y, s_d, s_union }
    }
}

/// Binary detections for one perturbation iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionRow {
    pub z: Vec<bool>,
    /// 1-based iteration index within its phase.
    pub iteration: u64,
    pub flags: DetectionFlags,
}

/// Degeneracies survived while forming a detection row.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DetectionFlags {
    /// Controls dropped from the confirmation regression as duplicates of
    /// earlier columns.
    pub rank_dropped: Vec<usize>,
    /// Confirmation regression skipped (too few rows); outcome-only
    /// candidates counted as undetected.
    pub confirmation_skipped: bool,
}

impl DetectionRow {
    pub fn detected(&self) -> BTreeSet<usize> {
        self.z
            .iter()
            .enumerate()
            .filter(|(_, &z)| z)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Ordered detection rows, contiguous from iteration 1.
#[derive(Debug, Clone, Default)]
pub struct DetectionHistory {
    rows: Vec<DetectionRow>,
    p: usize,
}

impl DetectionHistory {
    pub fn new(p: usize) -> Self {
        Self { rows: Vec::new(), p }
    }

    pub fn push(&mut self, row: DetectionRow) -> Result<(), DetectError> {
        let expected = self.rows.len() as u64 + 1;
        if row.iteration != expected {
            return Err(DetectError::NonContiguousIteration {
                expected,
                got: row.iteration,
            });
        }
        if row.z.len() != self.p {
            return Err(DetectError::WidthMismatch {
                expected: self.p,
                got: row.z.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[DetectionRow] {
        &self.rows
    }

    pub fn t(&self) -> usize {
        self.rows.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Detections of each variable over the recorded rows.
    pub fn detection_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.p];
        for row in &self.rows {
            for (j, &z) in row.z.iter().enumerate() {
                if z {
                    counts[j] += 1;
                }
            }
        }
        counts
    }
}

/// Builds the PDS candidate set for one completed dataset. Penalties follow
/// `lambda_rule` independently per equation; the fold stream comes from `rng`.
pub fn pds_candidate(
    completed: &CompletedDataset,
    lambda_rule: &LambdaRule,
    rng: &mut ChaCha8Rng,
) -> Result<PdsSelection, DetectError> {
    let y = completed.y();
    let d = completed.d();
    let x = completed.x();
    let p = completed.p();
    let groups = completed.row_origin.as_deref();

    // outcome equation: Y ~ D + X with D unpenalized
    let mut design_y = DMatrix::zeros(completed.n(), p + 1);
    design_y.column_mut(0).copy_from(&d);
    design_y.columns_mut(1, p).copy_from(&x);
    let lambda_y = select_lambda(&design_y, &y, lambda_rule, &[0], groups, rng)?;
    let fit_y = lasso_fit_with_free(&design_y, &y, lambda_y, &[0])?;
    let s_y: BTreeSet<usize> = fit_y
        .active_set
        .iter()
        .filter(|&&k| k >= 1)
        .map(|&k| k - 1)
        .collect();

    // auxiliary equation: D ~ X
    let lambda_d = select_lambda(&x, &d, lambda_rule, &[], groups, rng)?;
    let fit_d = lasso_fit(&x, &d, lambda_d)?;
    let s_d: BTreeSet<usize> = fit_d.active_set.iter().copied().collect();

    Ok(PdsSelection::new(s_y, s_d))
}

/// Applies the asymmetric detection rule for one iteration.
///
/// `z[j]` is true iff `j` is auxiliary-selected, or outcome-selected and the
/// coefficient of `X_j` in `Y ~ intercept + D + X_union` has p-value below
/// `alpha`. Variables outside the candidate set are never detected.
pub fn detect(
    completed: &CompletedDataset,
    selection: &PdsSelection,
    alpha: f64,
    iteration: u64,
) -> Result<DetectionRow, DetectError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DetectError::BadAlpha(alpha));
    }
    let p = completed.p();
    let n = completed.n();
    let mut z = vec![false; p];
    for &j in &selection.s_d {
        z[j] = true;
    }
    let mut flags = DetectionFlags::default();
    let only_y: Vec<usize> = selection.s_y.difference(&selection.s_d).copied().collect();
    if only_y.is_empty() {
        return Ok(DetectionRow {
            z,
            iteration,
            flags,
        });
    }
    if n <= selection.s_union.len() + 2 {
        flags.confirmation_skipped = true;
        return Ok(DetectionRow {
            z,
            iteration,
            flags,
        });
    }

    let union: Vec<usize> = selection.s_union.iter().copied().collect();
    let x = completed.x();
    let d = completed.d();
    let mut design = DMatrix::zeros(n, 1 + union.len());
    design.column_mut(0).copy_from(&d);
    for (pos, &j) in union.iter().enumerate() {
        design.column_mut(pos + 1).copy_from(&x.column(j));
    }

    // drop columns that duplicate earlier ones, keeping lowest index
    let mut augmented = DMatrix::from_element(n, design.ncols() + 1, 1.0);
    augmented.columns_mut(1, design.ncols()).copy_from(&design);
    let kept_aug = independent_columns(&augmented, 1e-8);
    let kept: Vec<usize> = kept_aug
        .iter()
        .filter(|&&a| a >= 1)
        .map(|&a| a - 1)
        .collect();
    if kept.len() < design.ncols() {
        for col in 0..design.ncols() {
            if !kept.contains(&col) && col >= 1 {
                flags.rank_dropped.push(union[col - 1]);
            }
        }
    }
    if n <= kept.len() + 1 {
        flags.confirmation_skipped = true;
        return Ok(DetectionRow {
            z,
            iteration,
            flags,
        });
    }
    let pruned = design.select_columns(kept.iter());
    let y = completed.y();
    let fit = ols_fit(&pruned, &DVector::from_column_slice(y.as_slice()))?;

    for &j in &only_y {
        let union_pos = union.iter().position(|&u| u == j).unwrap();
        let design_col = union_pos + 1;
        if let Some(kept_pos) = kept.iter().position(|&c| c == design_col) {
            // +1 for the intercept in the fit
            if fit.p_values[kept_pos + 1] < alpha {
                z[j] = true;
            }
        }
    }
    Ok(DetectionRow {
        z,
        iteration,
        flags,
    })
}
