//! Sparse partially linear data-generating process with Toeplitz-correlated
//! controls.
//!
//! `X ~ N(0, S)` with `S[j,l] = rho^|j-l|`; the auxiliary equation is
//! `D = X'g + v`, the outcome `Y = D*a0 + X'b + e`, with `b_j = g_j = k*j^-2`
//! on the first `k0` coordinates and 0 elsewhere. The signal scale `k` targets
//! the auxiliary equation's R^2, which has a closed form because `Var(v)=1`.

use super::SimError;
use crate::dataset::IncompleteDataset;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

fn default_p() -> usize {
    50
}
fn default_k0() -> usize {
    5
}
fn default_rho() -> f64 {
    0.5
}
fn default_alpha0() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    #[serde(default = "default_p")]
    pub p: usize,
    #[serde(default = "default_k0")]
    pub k0: usize,
    pub target_r2: f64,
    #[serde(default)]
    pub heteroscedastic: bool,
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n < 2 {
            return Err(SimError::BadSpec("n must be at least 2".into()));
        }
        if self.p < 1 {
            return Err(SimError::BadSpec("p must be at least 1".into()));
        }
        if self.k0 > self.p {
            return Err(SimError::BadSpec("k0 cannot exceed p".into()));
        }
        if !(self.target_r2 > 0.0 && self.target_r2 < 1.0) {
            return Err(SimError::BadSpec("target_r2 must lie in (0,1)".into()));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(SimError::BadSpec("rho must lie in (-1,1)".into()));
        }
        Ok(())
    }

    /// `b_j = j^-2` on the relevant block (1-based j).
    fn base_signal(&self) -> Vec<f64> {
        (0..self.p)
            .map(|j| {
                if j < self.k0 {
                    ((j + 1) as f64).powi(-2)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Ground truth of a generated draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    /// 0-based indices of the truly relevant controls.
    pub relevant_set: BTreeSet<usize>,
    pub alpha0: f64,
    pub kappa: f64,
}

/// Signal scale achieving the target auxiliary-equation R^2:
/// with `c = b'Sb`, `kappa = sqrt(R2 / ((1-R2) * c))`.
pub fn calibrate_kappa(spec: &DgpSpec) -> Result<f64, SimError> {
    spec.validate()?;
    let b = spec.base_signal();
    let mut c = 0.0;
    for j in 0..spec.k0 {
        for l in 0..spec.k0 {
            c += b[j] * b[l] * spec.rho.powi((j as i32 - l as i32).abs());
        }
    }
    if c <= 0.0 {
        return Err(SimError::BadSpec("signal quadratic form is not positive".into()));
    }
    Ok((spec.target_r2 / ((1.0 - spec.target_r2) * c)).sqrt())
}

/// Draws one complete dataset (no missingness yet) and its truth record.
pub fn gen_design1(
    spec: &DgpSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(IncompleteDataset, TruthRecord), SimError> {
    spec.validate()?;
    let n = spec.n;
    let p = spec.p;
    let kappa = calibrate_kappa(spec)?;
    let coef: Vec<f64> = spec.base_signal().iter().map(|b| kappa * b).collect();

    let sigma = DMatrix::from_fn(p, p, |j, l| spec.rho.powi((j as i32 - l as i32).abs()));
    let chol = sigma
        .cholesky()
        .ok_or_else(|| SimError::BadSpec("Toeplitz covariance is not positive definite".into()))?;
    let l_t = chol.l().transpose();

    let mut z = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let x = z * l_t; // rows are N(0, Sigma)

    let signal: Vec<f64> = (0..n)
        .map(|i| (0..spec.k0).map(|j| x[(i, j)] * coef[j]).sum())
        .collect();

    let mut values = DMatrix::zeros(n, p + 2);
    let mut d_col = vec![0.0; n];
    for i in 0..n {
        let nu: f64 = rng.sample(StandardNormal);
        d_col[i] = signal[i] + nu;
    }
    // heteroscedastic errors scale with the signal, normalized to unit
    // average variance
    let scale = if spec.heteroscedastic {
        let mean_sq = signal
            .iter()
            .map(|s| (1.0 + s.abs()).powi(2))
            .sum::<f64>()
            / n as f64;
        mean_sq.sqrt()
    } else {
        1.0
    };
    for i in 0..n {
        let e: f64 = rng.sample(StandardNormal);
        let eps = if spec.heteroscedastic {
            (1.0 + signal[i].abs()) / scale * e
        } else {
            e
        };
        values[(i, 0)] = d_col[i] * spec.alpha0 + signal[i] + eps;
        values[(i, 1)] = d_col[i];
        for j in 0..p {
            values[(i, j + 2)] = x[(i, j)];
        }
    }

    let mut names = Vec::with_capacity(p + 2);
    names.push("Y".to_string());
    names.push("D".to_string());
    for j in 1..=p {
        names.push(format!("X{j}"));
    }
    let dataset = IncompleteDataset::complete(values, names)?;
    Ok((
        dataset,
        TruthRecord {
            relevant_set: (0..spec.k0).collect(),
            alpha0: spec.alpha0,
            kappa,
        },
    ))
}
