//! MCAR, MAR, and MNAR missingness mechanisms with calibrated marginal rates.
//!
//! MAR drives cell deletion through the always-observed D via a logistic
//! link; MNAR through the cell's own value. The intercept of the link is
//! solved by bisection so the expected marginal rate matches the requested
//! one on the realized sample.

use super::SimError;
use crate::dataset::{IncompleteDataset, COL_X0};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mechanism::Mcar => "mcar",
            Mechanism::Mar => "mar",
            Mechanism::Mnar => "mnar",
        };
        f.write_str(s)
    }
}

fn default_slope() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissSpec {
    pub mechanism: Mechanism,
    /// Target marginal missingness rate over the control block.
    pub rate: f64,
    /// Logistic slope of the MAR/MNAR drivers.
    #[serde(default = "default_slope")]
    pub slope: f64,
}

impl MissSpec {
    pub fn new(mechanism: Mechanism, rate: f64) -> Self {
        Self {
            mechanism,
            rate,
            slope: default_slope(),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(SimError::BadSpec("missingness rate must lie in (0,1)".into()));
        }
        Ok(())
    }
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Solves `mean_k logistic(a + z_k) = rate` for the intercept `a`.
fn calibrate_intercept(drivers: &[f64], rate: f64) -> Result<f64, SimError> {
    let mean_rate = |a: f64| drivers.iter().map(|&z| logistic(a + z)).sum::<f64>() / drivers.len() as f64;
    let (mut lo, mut hi) = (-60.0, 60.0);
    if mean_rate(lo) > rate || mean_rate(hi) < rate {
        return Err(SimError::MissCalibration(format!(
            "target rate {rate} unreachable for the realized drivers"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_rate(mid) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Masks control cells of a complete dataset according to the mechanism.
/// Y and D are never masked.
pub fn apply_missingness(
    complete: &IncompleteDataset,
    spec: &MissSpec,
    rng: &mut ChaCha8Rng,
) -> Result<IncompleteDataset, SimError> {
    spec.validate()?;
    if !complete.is_complete() {
        return Err(SimError::BadSpec(
            "missingness can only be applied to a complete dataset".into(),
        ));
    }
    let n = complete.n();
    let p = complete.p();
    let values = complete.values().clone();
    let mut mask = DMatrix::from_element(n, p + 2, true);

    match spec.mechanism {
        Mechanism::Mcar => {
            for i in 0..n {
                for j in 0..p {
                    if rng.gen::<f64>() < spec.rate {
                        mask[(i, COL_X0 + j)] = false;
                    }
                }
            }
        }
        Mechanism::Mar => {
            let drivers: Vec<f64> = (0..n).map(|i| spec.slope * values[(i, 1)]).collect();
            let a = calibrate_intercept(&drivers, spec.rate)?;
            for i in 0..n {
                let prob = logistic(a + drivers[i]);
                for j in 0..p {
                    if rng.gen::<f64>() < prob {
                        mask[(i, COL_X0 + j)] = false;
                    }
                }
            }
        }
        Mechanism::Mnar => {
            let mut drivers = Vec::with_capacity(n * p);
            for i in 0..n {
                for j in 0..p {
                    drivers.push(spec.slope * values[(i, COL_X0 + j)]);
                }
            }
            let a = calibrate_intercept(&drivers, spec.rate)?;
            for i in 0..n {
                for j in 0..p {
                    let prob = logistic(a + spec.slope * values[(i, COL_X0 + j)]);
                    if rng.gen::<f64>() < prob {
                        mask[(i, COL_X0 + j)] = false;
                    }
                }
            }
        }
    }

    Ok(IncompleteDataset::new(
        values,
        mask,
        complete.column_names().to_vec(),
    )?)
}
