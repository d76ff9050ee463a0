//! Sequential evidence aggregation for variable selection under missing data.
//!
//! Repeated perturbation (bootstrap resampling of the incomplete data followed
//! by one stochastic imputation), post-double-selection screening with an
//! asymmetric confirmation rule, and a calibrated log-evidence process that
//! classifies each candidate control as relevant or irrelevant with a built-in
//! stopping rule. Rubin's rules pool the final treatment-effect estimate across
//! multiple imputations. A simulation lab reproduces the benchmark experiments
//! at desk scale.
//!
//! Module map:
//! - [`dataset`]: incomplete data model and CSV ingestion
//! - [`regress`]: OLS with inference and LASSO coordinate descent with CV
//! - [`perturb`]: bootstrap + chained stochastic imputation
//! - [`detect`]: PDS candidate sets and the asymmetric detection rule
//! - [`evidence`]: calibration, log-evidence accumulation, stopping rule
//! - [`benchmarks`]: union and frequency-threshold aggregation rules
//! - [`pooling`]: Rubin's-rules pooling and final estimation
//! - [`simlab`]: data-generating processes, missingness mechanisms, scenarios
//! - [`report`]: run summaries and plot-ready exports

pub use nalgebra;

pub mod benchmarks;
pub mod dataset;
pub mod detect;
pub mod evidence;
pub mod perturb;
pub mod pooling;
pub mod regress;
pub mod report;
pub mod rng;
pub mod simlab;

pub use dataset::{load_csv, write_csv, CompletedDataset, CsvConfig, IncompleteDataset};
pub use evidence::{run_sequential, Calibration, RunConfig, SequentialResult};
