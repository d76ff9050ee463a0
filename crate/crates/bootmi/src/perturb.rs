//! Perturbed completions of an incomplete dataset.
//!
//! One perturbation iteration draws a bootstrap sample of the rows and then
//! completes it with a single pass of chained stochastic regression
//! imputation: each control column with missing cells is regressed on all
//! other columns, coefficients are drawn from their approximate sampling
//! distribution, and missing cells are filled with prediction plus residual
//! noise. Observed cells never change. `impute_m` produces the independent
//! completions used for Rubin pooling after selection.

use crate::dataset::{CompletedDataset, ImputeWarning, IncompleteDataset, COL_X0};
use crate::rng::derive_rng;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Default chained-equations passes per imputation.
pub const DEFAULT_IMPUTE_SWEEPS: usize = 5;

/// Relative ridge applied to the imputation-model Gram matrix. Keeps the
/// chained update defined when a bootstrap draw is collinear or has fewer
/// observed rows than regressors.
const GRAM_RIDGE_REL: f64 = 1e-6;
const ZERO_VAR_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("control column {column} has no observed values in the input or its fallback pool")]
    EmptyColumn { column: usize },
    #[error("imputation model for column {column} is numerically degenerate")]
    NumericalFailure { column: usize },
    #[error("need at least 2 imputations (got {0})")]
    TooFewImputations(usize),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}

/// Knobs for one perturbation iteration.
#[derive(Debug, Clone)]
pub struct PerturbationConfig {
    /// Chained-equations passes over the columns.
    pub impute_sweeps: usize,
    /// Master seed of the run the iteration belongs to.
    pub seed: u64,
    /// Which perturbation iteration this is; part of the derived stream.
    pub iteration_index: u64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            impute_sweeps: DEFAULT_IMPUTE_SWEEPS,
            seed: 0,
            iteration_index: 0,
        }
    }
}

/// Draws `n` rows independently and uniformly with replacement, masks carried
/// along. Roles and dimensions are preserved. The `n >= 2` precondition is
/// already enforced by the dataset invariant.
pub fn bootstrap_rows(
    dataset: &IncompleteDataset,
    rng: &mut ChaCha8Rng,
) -> Result<IncompleteDataset, PerturbError> {
    bootstrap_rows_with_origin(dataset, rng).map(|(ds, _)| ds)
}

/// As [`bootstrap_rows`], additionally returning each drawn row's source
/// index for duplicate-aware cross-validation folds.
pub fn bootstrap_rows_with_origin(
    dataset: &IncompleteDataset,
    rng: &mut ChaCha8Rng,
) -> Result<(IncompleteDataset, Vec<usize>), PerturbError> {
    let n = dataset.n();
    let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
    let values = dataset.values().select_rows(rows.iter());
    // NaNs in masked cells would fail the finite check, so rebuild values
    // with zeros at masked positions and let the constructor re-poison them.
    let mask = dataset.mask().select_rows(rows.iter());
    let clean = DMatrix::from_fn(n, values.ncols(), |i, j| {
        if mask[(i, j)] {
            values[(i, j)]
        } else {
            0.0
        }
    });
    let ds = IncompleteDataset::new(clean, mask, dataset.column_names().to_vec())?;
    Ok((ds, rows))
}

/// One stochastic imputation of `dataset`. Observed-value pools come from the
/// dataset itself.
pub fn impute_once(
    dataset: &IncompleteDataset,
    config: &PerturbationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<CompletedDataset, PerturbError> {
    impute_with_fallback(dataset, None, config.impute_sweeps, config.iteration_index, rng)
}

/// `m` independent imputations with distinct sub-seeds drawn from `rng`.
pub fn impute_m(
    dataset: &IncompleteDataset,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CompletedDataset>, PerturbError> {
    if m < 2 {
        return Err(PerturbError::TooFewImputations(m));
    }
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let sub = rng.gen::<u64>();
        let mut sub_rng = derive_rng(sub, &[i as u64]);
        out.push(impute_with_fallback(
            dataset,
            None,
            DEFAULT_IMPUTE_SWEEPS,
            i as u64,
            &mut sub_rng,
        )?);
    }
    Ok(out)
}

/// Bootstrap + impute, the unit of work of the sequential procedure. The
/// source dataset supplies fallback pools for columns that end up fully
/// missing in the bootstrap draw.
pub fn perturbed_completion(
    source: &IncompleteDataset,
    sweeps: usize,
    provenance: u64,
    rng: &mut ChaCha8Rng,
) -> Result<CompletedDataset, PerturbError> {
    let (draw, origin) = bootstrap_rows_with_origin(source, rng)?;
    let completed = impute_with_fallback(&draw, Some(source), sweeps, provenance, rng)?;
    Ok(completed.with_row_origin(origin))
}

fn impute_with_fallback(
    dataset: &IncompleteDataset,
    fallback: Option<&IncompleteDataset>,
    sweeps: usize,
    provenance: u64,
    rng: &mut ChaCha8Rng,
) -> Result<CompletedDataset, PerturbError> {
    let n = dataset.n();
    let p = dataset.p();
    let k_cols = p + 2;
    let mut values = DMatrix::from_fn(n, k_cols, |i, j| {
        if dataset.is_observed(i, j) {
            dataset.values()[(i, j)]
        } else {
            0.0
        }
    });
    if dataset.is_complete() {
        return Ok(CompletedDataset::new(values, provenance, Vec::new()));
    }

    let mut warnings = Vec::new();
    // classify control columns and fill starting values
    let mut targets: Vec<(usize, Vec<usize>)> = Vec::new(); // (control j, missing rows)
    for j in 0..p {
        let col = COL_X0 + j;
        let missing: Vec<usize> = (0..n).filter(|&i| !dataset.is_observed(i, col)).collect();
        if missing.is_empty() {
            continue;
        }
        let pool = dataset.observed_pool(col);
        if pool.is_empty() {
            let fb_pool = fallback.map(|fb| fb.observed_pool(col)).unwrap_or_default();
            if fb_pool.is_empty() {
                return Err(PerturbError::EmptyColumn { column: j });
            }
            for &i in &missing {
                values[(i, col)] = fb_pool[rng.gen_range(0..fb_pool.len())];
            }
            warnings.push(ImputeWarning::FullyMissingColumn(j));
            continue;
        }
        let mean = pool.iter().sum::<f64>() / pool.len() as f64;
        let var = pool.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / pool.len() as f64;
        if var < ZERO_VAR_TOL {
            for &i in &missing {
                values[(i, col)] = mean;
            }
            warnings.push(ImputeWarning::ZeroVarianceColumn(j));
            continue;
        }
        for &i in &missing {
            values[(i, col)] = pool[rng.gen_range(0..pool.len())];
        }
        targets.push((j, missing));
    }

    if targets.is_empty() {
        return Ok(CompletedDataset::new(values, provenance, warnings));
    }

    // augmented rows [1 | V], stored contiguously per row; the full-row Gram
    // is rebuilt each sweep and patched incrementally within a sweep
    let ka = k_cols + 1;
    let mut aug = vec![0.0f64; n * ka];
    for i in 0..n {
        let row = &mut aug[i * ka..(i + 1) * ka];
        row[0] = 1.0;
        for c in 0..k_cols {
            row[c + 1] = values[(i, c)];
        }
    }

    let params = ka - 1; // regressors incl. intercept for any target
    let mut full_gram = vec![0.0f64; ka * ka];
    let mut corr = vec![0.0f64; ka * ka];
    let mut cross_delta = vec![0.0f64; ka];
    let mut g = DMatrix::zeros(params, params);
    let mut cvec = DVector::zeros(params);

    for _ in 0..sweeps {
        // fresh Gram per sweep; accumulated per-column patches would
        // otherwise collect rounding drift
        accumulate_outer(&mut full_gram, &aug, n, ka, None);

        for (j, missing) in &targets {
            let ti = COL_X0 + j + 1; // target's slot in an augmented row
            let n_obs = n - missing.len();

            // correction = sum of a_i a_i' over the target's missing rows
            accumulate_outer(&mut corr, &aug, n, ka, Some(missing));
            let obs_entry = |a: usize, b: usize| {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                full_gram[hi * ka + lo] - corr[hi * ka + lo]
            };

            // regression of slot ti on every other slot
            let reg: Vec<usize> = (0..ka).filter(|&a| a != ti).collect();
            for (ra, &a) in reg.iter().enumerate() {
                for (rb, &b) in reg.iter().enumerate().take(ra + 1) {
                    let v = obs_entry(a, b);
                    g[(ra, rb)] = v;
                    g[(rb, ra)] = v;
                }
                cvec[ra] = obs_entry(a, ti);
            }
            let yty = obs_entry(ti, ti);

            let diag_mean = (0..params).map(|a| g[(a, a)]).sum::<f64>() / params as f64;
            let mut ridge = GRAM_RIDGE_REL * diag_mean.max(1e-12);
            let chol = loop {
                let mut gr = g.clone();
                for a in 0..params {
                    gr[(a, a)] += ridge;
                }
                match gr.cholesky() {
                    Some(c) => break c,
                    None => {
                        ridge *= 100.0;
                        if ridge > 1e6 * diag_mean.max(1e-12) {
                            return Err(PerturbError::NumericalFailure { column: *j });
                        }
                    }
                }
            };
            let beta = chol.solve(&cvec);
            let quad = beta.dot(&(&g * &beta));
            let rss = (yty - 2.0 * beta.dot(&cvec) + quad).max(0.0);
            let df = (n_obs.saturating_sub(params)).max(1) as f64;
            let sigma2 = rss / df;
            let sigma = sigma2.sqrt();

            // approximate proper imputation: beta* ~ N(beta, sigma^2 G^-1)
            let z = DVector::from_fn(params, |_, _| rng.sample::<f64, _>(StandardNormal));
            let spread = chol
                .l()
                .transpose()
                .solve_upper_triangular(&z)
                .unwrap_or_else(|| DVector::zeros(params));
            let beta_star = &beta + spread * sigma;

            // fill the target's missing cells, patching the Gram in place
            let mut diag_delta = 0.0;
            cross_delta.iter_mut().for_each(|v| *v = 0.0);
            for &i in missing {
                let row = &mut aug[i * ka..(i + 1) * ka];
                let mut pred = 0.0;
                for (ra, &a) in reg.iter().enumerate() {
                    pred += row[a] * beta_star[ra];
                }
                let new = pred + sigma * rng.sample::<f64, _>(StandardNormal);
                let old = row[ti];
                diag_delta += new * new - old * old;
                let d = new - old;
                for (a, slot) in cross_delta.iter_mut().enumerate() {
                    *slot += d * row[a];
                }
                row[ti] = new;
                values[(i, ti - 1)] = new;
            }
            full_gram[ti * ka + ti] += diag_delta;
            for a in 0..ka {
                if a != ti {
                    full_gram[ti.max(a) * ka + ti.min(a)] += cross_delta[a];
                }
            }
        }
    }

    Ok(CompletedDataset::new(values, provenance, warnings))
}

/// Accumulates the lower-triangular outer-product sum of the selected
/// augmented rows into `out` (indexed `[hi * ka + lo]` for `lo <= hi`).
fn accumulate_outer(out: &mut [f64], aug: &[f64], n: usize, ka: usize, rows: Option<&[usize]>) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut body = |i: usize| {
        let row = &aug[i * ka..(i + 1) * ka];
        for b in 0..ka {
            let rb = row[b];
            let dst = &mut out[b * ka..b * ka + b + 1];
            for (a, slot) in dst.iter_mut().enumerate() {
                *slot += row[a] * rb;
            }
        }
    };
    match rows {
        Some(rows) => rows.iter().for_each(|&i| body(i)),
        None => (0..n).for_each(body),
    }
}
