//! Scenario execution: shared perturbation stream per replication, the
//! sequential method plus benchmark rules on that stream, pooled estimation,
//! and metric aggregation.

use super::{apply_missingness, gen_design1, DgpSpec, MissSpec, SimError, TruthRecord};
use crate::benchmarks::{frequency_threshold, union_rule};
use crate::evidence::{generate_stream, replay_sequential, RunConfig};
use crate::perturb::impute_m;
use crate::pooling::pooled_from_completions;
use crate::rng::{derive_rng, derive_seed, stream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Confidence level used for coverage throughout the lab.
pub const CONFIDENCE_LEVEL: f64 = 0.95;

/// Frequency thresholds of the benchmark set.
const BENCHMARK_TAUS: [f64; 2] = [0.50, 0.75];

/// One scenario of the simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub dgp: DgpSpec,
    pub miss: MissSpec,
}

/// Selection rules compared within every replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodId {
    Proposed,
    UnionFixed,
    Freq50Fixed,
    Freq75Fixed,
    UnionMatched,
    Freq50Matched,
    Freq75Matched,
}

impl MethodId {
    pub const ALL: [MethodId; 7] = [
        MethodId::Proposed,
        MethodId::UnionFixed,
        MethodId::Freq50Fixed,
        MethodId::Freq75Fixed,
        MethodId::UnionMatched,
        MethodId::Freq50Matched,
        MethodId::Freq75Matched,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            MethodId::Proposed => "proposed",
            MethodId::UnionFixed => "union",
            MethodId::Freq50Fixed => "freq50",
            MethodId::Freq75Fixed => "freq75",
            MethodId::UnionMatched => "union_matched",
            MethodId::Freq50Matched => "freq50_matched",
            MethodId::Freq75Matched => "freq75_matched",
        }
    }
}

/// Per-method selection and estimation metrics averaged over replications.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub tpr: f64,
    pub fpr: f64,
    pub dist_ideal: f64,
    pub model_size: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: f64,
    pub iterations_mean: f64,
    pub iterations_sd: f64,
}

/// Everything measured in one replication.
#[derive(Debug, Clone)]
pub struct ReplicationOutcome {
    /// Per method: (tpr, fpr, dist, size, estimate, covered).
    pub per_method: Vec<(MethodId, RepMethod)>,
    pub stop_iteration: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct RepMethod {
    pub tpr: f64,
    pub fpr: f64,
    pub dist_ideal: f64,
    pub model_size: f64,
    pub estimate: f64,
    pub covered: bool,
}

/// Aggregated scenario output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: ScenarioSpec,
    pub methods: Vec<(MethodId, MethodMetrics)>,
    pub replications_requested: usize,
    pub replications_used: usize,
    pub failures: usize,
}

impl ScenarioResult {
    pub fn metrics(&self, id: MethodId) -> &MethodMetrics {
        &self.methods.iter().find(|(m, _)| *m == id).expect("method present").1
    }
}

fn selection_metrics(selected: &BTreeSet<usize>, truth: &TruthRecord, p: usize) -> (f64, f64, f64, f64) {
    let k0 = truth.relevant_set.len();
    let tp = selected.intersection(&truth.relevant_set).count();
    let fp = selected.difference(&truth.relevant_set).count();
    let tpr = if k0 > 0 { tp as f64 / k0 as f64 } else { 1.0 };
    let fpr = if p > k0 {
        fp as f64 / (p - k0) as f64
    } else {
        0.0
    };
    let dist = (fpr.powi(2) + (1.0 - tpr).powi(2)).sqrt();
    (tpr, fpr, dist, selected.len() as f64)
}

fn run_replication(
    dgp: &DgpSpec,
    miss: &MissSpec,
    run: &RunConfig,
    rep_seed: u64,
) -> Result<ReplicationOutcome, SimError> {
    let (complete, truth) = gen_design1(dgp, &mut derive_rng(rep_seed, &[stream::DATA_GEN]))?;
    let incomplete = apply_missingness(
        &complete,
        miss,
        &mut derive_rng(rep_seed, &[stream::MISSINGNESS]),
    )?;

    // one shared perturbation stream per replication feeds the sequential
    // method and every benchmark
    let cfg = RunConfig {
        seed: rep_seed,
        ..run.clone()
    };
    let stream_record = generate_stream(&incomplete, &cfg)?;
    let sequential = replay_sequential(&stream_record, &cfg)?;
    let fixed_budget = cfg.t_max as usize;
    let matched_budget = sequential.stop_iteration as usize;
    let unions = &stream_record.evidence_unions;

    let sets: Vec<(MethodId, BTreeSet<usize>)> = vec![
        (MethodId::Proposed, sequential.selected.clone()),
        (MethodId::UnionFixed, union_rule(unions, fixed_budget)),
        (
            MethodId::Freq50Fixed,
            frequency_threshold(unions, BENCHMARK_TAUS[0], fixed_budget),
        ),
        (
            MethodId::Freq75Fixed,
            frequency_threshold(unions, BENCHMARK_TAUS[1], fixed_budget),
        ),
        (MethodId::UnionMatched, union_rule(unions, matched_budget)),
        (
            MethodId::Freq50Matched,
            frequency_threshold(unions, BENCHMARK_TAUS[0], matched_budget),
        ),
        (
            MethodId::Freq75Matched,
            frequency_threshold(unions, BENCHMARK_TAUS[1], matched_budget),
        ),
    ];

    // final imputations of the original dataset are shared across methods
    let completions = impute_m(
        &incomplete,
        cfg.m_imputations,
        &mut derive_rng(rep_seed, &[stream::FINAL_IMPUTE]),
    )
    .map_err(crate::pooling::PoolingError::from)?;

    let mut per_method = Vec::with_capacity(sets.len());
    for (id, set) in sets {
        let pooled = pooled_from_completions(&completions, &set, CONFIDENCE_LEVEL)?;
        let (tpr, fpr, dist, size) = selection_metrics(&set, &truth, dgp.p);
        per_method.push((
            id,
            RepMethod {
                tpr,
                fpr,
                dist_ideal: dist,
                model_size: size,
                estimate: pooled.q_bar,
                covered: pooled.ci_low <= truth.alpha0 && truth.alpha0 <= pooled.ci_high,
            },
        ));
    }
    Ok(ReplicationOutcome {
        per_method,
        stop_iteration: sequential.stop_iteration,
    })
}

/// Runs all replications of one scenario (in parallel, merged in replication
/// order) and aggregates plain means over the successful ones. Fails when
/// more than 10% of replications fail.
pub fn run_scenario(
    dgp: &DgpSpec,
    miss: &MissSpec,
    run: &RunConfig,
    replications: usize,
    seed: u64,
) -> Result<ScenarioResult, SimError> {
    if replications < 1 {
        return Err(SimError::BadSpec("replications must be at least 1".into()));
    }
    dgp.validate()?;
    run.validate()?;

    let outcomes: Vec<Result<ReplicationOutcome, SimError>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = derive_seed(seed, &[stream::REPLICATION, rep as u64]);
            run_replication(dgp, miss, run, rep_seed)
        })
        .collect();

    let failures = outcomes.iter().filter(|o| o.is_err()).count();
    if failures * 10 > replications {
        return Err(SimError::TooManyFailures {
            failed: failures,
            total: replications,
        });
    }
    let used: Vec<&ReplicationOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let r = used.len() as f64;

    let alpha0 = dgp.alpha0;
    let mut methods = Vec::with_capacity(MethodId::ALL.len());
    let stop_times: Vec<f64> = used.iter().map(|o| o.stop_iteration as f64).collect();
    let stop_mean = stop_times.iter().sum::<f64>() / r;
    let stop_sd = if used.len() > 1 {
        (stop_times.iter().map(|s| (s - stop_mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
    } else {
        0.0
    };

    for id in MethodId::ALL {
        let rows: Vec<&RepMethod> = used
            .iter()
            .map(|o| {
                &o.per_method
                    .iter()
                    .find(|(m, _)| *m == id)
                    .expect("method recorded")
                    .1
            })
            .collect();
        let mean = |f: &dyn Fn(&RepMethod) -> f64| rows.iter().map(|m| f(m)).sum::<f64>() / r;
        let bias = mean(&|m| m.estimate - alpha0);
        let rmse = mean(&|m| (m.estimate - alpha0).powi(2)).sqrt();
        let (iterations_mean, iterations_sd) = match id {
            MethodId::Proposed | MethodId::UnionMatched | MethodId::Freq50Matched
            | MethodId::Freq75Matched => (stop_mean, stop_sd),
            _ => (run.t_max as f64, 0.0),
        };
        methods.push((
            id,
            MethodMetrics {
                tpr: mean(&|m| m.tpr),
                fpr: mean(&|m| m.fpr),
                dist_ideal: mean(&|m| m.dist_ideal),
                model_size: mean(&|m| m.model_size),
                bias,
                rmse,
                coverage: mean(&|m| if m.covered { 1.0 } else { 0.0 }),
                iterations_mean,
                iterations_sd,
            },
        ));
    }

    Ok(ScenarioResult {
        scenario: ScenarioSpec {
            name: String::new(),
            dgp: dgp.clone(),
            miss: miss.clone(),
        },
        methods,
        replications_requested: replications,
        replications_used: used.len(),
        failures,
    })
}
