//! Monte Carlo simulation lab: data-generating processes, missingness
//! mechanisms, scenario execution, and metric aggregation.

mod dgp;
mod missing;
mod scenario;

pub use dgp::{calibrate_kappa, gen_design1, DgpSpec, TruthRecord};
pub use missing::{apply_missingness, Mechanism, MissSpec};
pub use scenario::{
    run_scenario, MethodId, MethodMetrics, ReplicationOutcome, ScenarioResult, ScenarioSpec,
    CONFIDENCE_LEVEL,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    BadSpec(String),
    #[error("missingness calibration failed: {0}")]
    MissCalibration(String),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Evidence(#[from] crate::evidence::EvidenceError),
    #[error(transparent)]
    Pooling(#[from] crate::pooling::PoolingError),
    #[error("{failed} of {total} replications failed; scenario aborted")]
    TooManyFailures { failed: usize, total: usize },
}
