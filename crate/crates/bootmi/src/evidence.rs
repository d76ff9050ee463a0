//! Calibrated sequential log-evidence accumulation with a stopping rule.
//!
//! Detections are modeled as Bernoulli draws with working probabilities
//! `pi0` (irrelevant) and `pi1` (relevant), calibrated from a short pilot
//! phase. Each evidence iteration adds `ln(pi1/pi0)` on detection and
//! `ln((1-pi1)/(1-pi0))` on non-detection to every undecided variable's
//! cumulative log-evidence. A variable is classified relevant at `+c`,
//! irrelevant at `-c`, checked only after a minimum delay; decisions are
//! absorbing and the run stops once every variable is classified or the
//! iteration cap is reached.

use crate::benchmarks::UnionHistory;
use crate::dataset::IncompleteDataset;
use crate::detect::{detect, pds_candidate, DetectError, DetectionHistory, DetectionRow};
use crate::perturb::{perturbed_completion, PerturbError, DEFAULT_IMPUTE_SWEEPS};
use crate::regress::LambdaRule;
use crate::rng::{derive_rng, stream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("working probabilities must satisfy 0 < pi0 < pi1 < 1 (pi0={pi0}, pi1={pi1})")]
    BadProbabilities { pi0: f64, pi1: f64 },
    #[error("detection rate must lie in [0,1], got {0}")]
    BadRate(f64),
    #[error("losses must be positive")]
    NonPositiveLoss,
    #[error("priors must be positive and sum to one")]
    BadPriors,
    #[error("log-threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("drift must be nonzero")]
    ZeroDrift,
    #[error("evidence update for iteration {got} applied out of order (expected {expected})")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("calibration is in fallback; evidence accumulation refused")]
    FallbackCalibration,
    #[error(
        "pilot calibration could not separate detection probabilities even after one pilot \
         extension; use the frequency-threshold benchmarks instead"
    )]
    CalibrationFallback(Box<FallbackInfo>),
    #[error("invalid run config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
}

/// Pilot data carried by a calibration-fallback error so callers can still
/// report frequency-threshold results.
#[derive(Debug)]
pub struct FallbackInfo {
    pub pilot_history: DetectionHistory,
    pub pilot_unions: UnionHistory,
    pub calibration: Calibration,
}

/// Knobs of the calibration step.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationParams {
    /// Nominal test level the null estimate is shrunk toward.
    pub alpha: f64,
    /// Shrinkage weight on `alpha`.
    pub lambda0: f64,
    /// Floor on the stabilized null probability.
    pub pi0_min: f64,
    /// Floor on the break-even detection rate.
    pub qstar_min: f64,
}

/// Working detection probabilities and derived quantities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    /// Mean pilot frequency of the low-quantile variables, before shrinkage.
    pub pi0_raw: f64,
    /// Stabilized null detection probability.
    pub pi0: f64,
    /// Alternative detection probability (clamped below 1).
    pub pi1: f64,
    /// Break-even detection frequency for the final `(pi0, pi1)`; 0 when the
    /// calibration is in fallback.
    pub q_star: f64,
    pub lambda0: f64,
    pub pi0_min: f64,
    pub qstar_min: f64,
    /// Set when the pilot could not separate `pi1` from `pi0`; the evidence
    /// engine refuses to run on such a calibration.
    pub fallback_triggered: bool,
}

const PI1_CEILING: f64 = 1.0 - 1e-4;
const QSTAR_BISECTION_TOL: f64 = 1e-6;
/// Meeting the q* floor must not collapse the (pi0, pi1) gap: near-contact
/// calibrations have vanishing increments and cannot classify anything
/// within any realistic iteration budget.
const MIN_SEPARATION: f64 = 0.05;

impl Calibration {
    /// Stabilizes raw pilot estimates: shrink the null toward `alpha`, floor
    /// it, clamp the alternative below 1, and enforce the break-even floor by
    /// minimally raising `pi0`.
    pub fn from_raw(pi0_raw: f64, pi1_raw: f64, params: &CalibrationParams) -> Self {
        let pi1 = pi1_raw.min(PI1_CEILING);
        let mut pi0 = (params.pi0_min).max((1.0 - params.lambda0) * pi0_raw + params.lambda0 * params.alpha);
        let mut fallback = !(pi1 > pi0 && pi1 < 1.0 && pi0 > 0.0);
        let mut q_star = 0.0;
        if !fallback {
            let q = break_even(pi0, pi1).expect("validated ordering");
            if q < params.qstar_min {
                // q* is increasing in pi0 with supremum pi1, so the floor is
                // reachable only when pi1 exceeds it
                if params.qstar_min >= pi1 {
                    fallback = true;
                } else {
                    let (mut lo, mut hi) = (pi0, pi1);
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if mid <= lo || mid >= hi {
                            break;
                        }
                        let meets = break_even(mid, pi1)
                            .map(|v| v >= params.qstar_min)
                            .unwrap_or(false);
                        if meets {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                        if hi < pi1 && hi - lo <= QSTAR_BISECTION_TOL {
                            break;
                        }
                    }
                    if hi >= pi1 - MIN_SEPARATION {
                        fallback = true;
                    } else {
                        pi0 = hi;
                    }
                }
            }
            if !fallback {
                q_star = break_even(pi0, pi1).expect("validated ordering");
            }
        }
        Calibration {
            pi0_raw,
            pi0,
            pi1,
            q_star,
            lambda0: params.lambda0,
            pi0_min: params.pi0_min,
            qstar_min: params.qstar_min,
            fallback_triggered: fallback,
        }
    }

    pub fn is_usable(&self) -> bool {
        !self.fallback_triggered && self.pi0 > 0.0 && self.pi0 < self.pi1 && self.pi1 < 1.0
    }

    /// `(detection increment, non-detection increment)`.
    pub fn log_increments(&self) -> (f64, f64) {
        (
            (self.pi1 / self.pi0).ln(),
            ((1.0 - self.pi1) / (1.0 - self.pi0)).ln(),
        )
    }
}

/// Per-variable detection frequencies over a pilot history.
///
/// Panics on an empty history (the pilot always has at least one row).
pub fn pilot_frequencies(history: &DetectionHistory) -> Vec<f64> {
    assert!(history.t() > 0, "pilot history must be nonempty");
    let t = history.t() as f64;
    history
        .detection_counts()
        .into_iter()
        .map(|c| c as f64 / t)
        .collect()
}

/// Empirical quantile: smallest value with at least `ceil(q*p)` observations
/// at or below it.
fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let p = sorted.len();
    let idx = ((q * p as f64).ceil() as usize).clamp(1, p);
    sorted[idx - 1]
}

/// Calibrates working detection probabilities from pilot frequencies:
/// the null estimate averages the variables at or below the 10th percentile,
/// the alternative averages those strictly above the median.
pub fn calibrate(history: &DetectionHistory, params: &CalibrationParams) -> Calibration {
    let rates = pilot_frequencies(history);
    let mut sorted = rates.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q10 = empirical_quantile(&sorted, 0.10);
    let median = empirical_quantile(&sorted, 0.50);
    let low: Vec<f64> = rates.iter().copied().filter(|&r| r <= q10).collect();
    let high: Vec<f64> = rates.iter().copied().filter(|&r| r > median).collect();
    let pi0_raw = low.iter().sum::<f64>() / low.len() as f64;
    if high.is_empty() {
        // degenerate pilot: no separation between low and high frequencies
        let mut cal = Calibration::from_raw(pi0_raw, 0.0, params);
        cal.fallback_triggered = true;
        return cal;
    }
    let pi1_raw = high.iter().sum::<f64>() / high.len() as f64;
    Calibration::from_raw(pi0_raw, pi1_raw, params)
}

/// Detection frequency at which the expected log-evidence increment is zero.
pub fn break_even(pi0: f64, pi1: f64) -> Result<f64, EvidenceError> {
    check_probs(pi0, pi1)?;
    let num = ((1.0 - pi0) / (1.0 - pi1)).ln();
    let den = (pi1 * (1.0 - pi0) / (pi0 * (1.0 - pi1))).ln();
    Ok(num / den)
}

/// Expected per-iteration log-evidence increment for a variable detected at
/// marginal rate `q`.
pub fn drift(q: f64, pi0: f64, pi1: f64) -> Result<f64, EvidenceError> {
    check_probs(pi0, pi1)?;
    if !(0.0..=1.0).contains(&q) {
        return Err(EvidenceError::BadRate(q));
    }
    Ok(q * (pi1 / pi0).ln() + (1.0 - q) * ((1.0 - pi1) / (1.0 - pi0)).ln())
}

fn check_probs(pi0: f64, pi1: f64) -> Result<(), EvidenceError> {
    if !(pi0 > 0.0 && pi0 < pi1 && pi1 < 1.0) {
        return Err(EvidenceError::BadProbabilities { pi0, pi1 });
    }
    Ok(())
}

/// Log-evidence cutoff above which deciding "relevant" is Bayes-optimal,
/// given losses for false inclusion/exclusion and prior hypothesis weights.
pub fn decision_threshold(
    loss_fi: f64,
    loss_fe: f64,
    prior_h0: f64,
    prior_h1: f64,
) -> Result<f64, EvidenceError> {
    if !(loss_fi > 0.0 && loss_fe > 0.0) {
        return Err(EvidenceError::NonPositiveLoss);
    }
    if !(prior_h0 > 0.0 && prior_h1 > 0.0 && (prior_h0 + prior_h1 - 1.0).abs() <= 1e-9) {
        return Err(EvidenceError::BadPriors);
    }
    Ok(((loss_fi * prior_h0) / (loss_fe * prior_h1)).ln())
}

/// First-passage approximation `c / |drift|` for the expected decision time.
pub fn expected_stopping_time(c: f64, mu: f64) -> Result<f64, EvidenceError> {
    if !(c > 0.0) {
        return Err(EvidenceError::BadThreshold(c));
    }
    if mu == 0.0 {
        return Err(EvidenceError::ZeroDrift);
    }
    Ok(c / mu.abs())
}

/// Classification state of one candidate control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariableStatus {
    Undecided,
    Relevant,
    Irrelevant,
}

/// Per-variable cumulative log-evidence and absorbing classification state.
#[derive(Debug, Clone)]
pub struct EvidenceState {
    log_e: Vec<f64>,
    status: Vec<VariableStatus>,
    decided_at: Vec<u64>,
    t: u64,
}

impl EvidenceState {
    /// Fresh state with all variables undecided at log-evidence 0.
    pub fn new(p: usize) -> Self {
        Self {
            log_e: vec![0.0; p],
            status: vec![VariableStatus::Undecided; p],
            decided_at: vec![0; p],
            t: 0,
        }
    }

    /// Adds one detection row. Decided variables stay frozen.
    pub fn update(&mut self, row: &DetectionRow, cal: &Calibration) -> Result<(), EvidenceError> {
        if !cal.is_usable() {
            return Err(EvidenceError::FallbackCalibration);
        }
        if row.iteration != self.t + 1 {
            return Err(EvidenceError::OutOfOrder {
                expected: self.t + 1,
                got: row.iteration,
            });
        }
        let (l_pos, l_neg) = cal.log_increments();
        for (j, &z) in row.z.iter().enumerate() {
            if self.status[j] == VariableStatus::Undecided {
                self.log_e[j] += if z { l_pos } else { l_neg };
            }
        }
        self.t += 1;
        Ok(())
    }

    /// Applies the symmetric thresholds once the minimum delay has passed.
    /// Boundaries are inclusive and decisions absorbing.
    pub fn classify(&mut self, c: f64, t_min: u64) {
        assert!(c > 0.0, "log-threshold must be positive");
        if self.t < t_min {
            return;
        }
        for j in 0..self.log_e.len() {
            if self.status[j] != VariableStatus::Undecided {
                continue;
            }
            if self.log_e[j] >= c {
                self.status[j] = VariableStatus::Relevant;
                self.decided_at[j] = self.t;
            } else if self.log_e[j] <= -c {
                self.status[j] = VariableStatus::Irrelevant;
                self.decided_at[j] = self.t;
            }
        }
    }

    pub fn log_evidence(&self) -> &[f64] {
        &self.log_e
    }

    pub fn statuses(&self) -> &[VariableStatus] {
        &self.status
    }

    pub fn decided_at(&self) -> &[u64] {
        &self.decided_at
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn all_decided(&self) -> bool {
        self.status.iter().all(|&s| s != VariableStatus::Undecided)
    }

    pub fn relevant_set(&self) -> BTreeSet<usize> {
        self.filtered(VariableStatus::Relevant)
    }

    pub fn undecided_set(&self) -> BTreeSet<usize> {
        self.filtered(VariableStatus::Undecided)
    }

    fn filtered(&self, want: VariableStatus) -> BTreeSet<usize> {
        self.status
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == want)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Full configuration of a sequential run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    pub t_pilot: u64,
    pub t_max: u64,
    pub t_min: u64,
    /// Symmetric classification threshold on the log scale.
    pub c_log_threshold: f64,
    /// Significance level of the confirmation test (also the shrinkage
    /// target of the null calibration).
    pub alpha: f64,
    pub lambda0: f64,
    pub pi0_min: f64,
    pub qstar_min: f64,
    pub m_imputations: usize,
    pub impute_sweeps: usize,
    pub seed: u64,
    pub lambda_rule: LambdaRule,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            t_pilot: 20,
            t_max: 200,
            t_min: 5,
            c_log_threshold: 10f64.ln(),
            alpha: 0.05,
            lambda0: 0.25,
            pi0_min: 0.01,
            qstar_min: 0.1,
            m_imputations: 10,
            impute_sweeps: DEFAULT_IMPUTE_SWEEPS,
            seed: 0,
            lambda_rule: LambdaRule::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), EvidenceError> {
        let fail = |msg: &str| Err(EvidenceError::BadConfig(msg.to_string()));
        if self.t_pilot < 2 {
            return fail("t_pilot must be at least 2");
        }
        if self.t_max < self.t_pilot {
            return fail("t_max must be at least t_pilot");
        }
        if self.t_min < 1 {
            return fail("t_min must be at least 1");
        }
        if !(self.c_log_threshold > 0.0) {
            return fail("c_log_threshold must be positive");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail("alpha must lie in (0,1)");
        }
        if !(0.0..=1.0).contains(&self.lambda0) {
            return fail("lambda0 must lie in [0,1]");
        }
        if !(self.pi0_min > 0.0 && self.pi0_min < 1.0) {
            return fail("pi0_min must lie in (0,1)");
        }
        if !(self.qstar_min > 0.0 && self.qstar_min < 1.0) {
            return fail("qstar_min must lie in (0,1)");
        }
        if self.m_imputations < 2 {
            return fail("m_imputations must be at least 2");
        }
        if self.impute_sweeps < 1 {
            return fail("impute_sweeps must be at least 1");
        }
        Ok(())
    }

    pub fn calibration_params(&self) -> CalibrationParams {
        CalibrationParams {
            alpha: self.alpha,
            lambda0: self.lambda0,
            pi0_min: self.pi0_min,
            qstar_min: self.qstar_min,
        }
    }
}

/// Why a sequential run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    AllClassified,
    TMax,
}

/// Outcome of a sequential evidence run.
#[derive(Debug, Clone)]
pub struct SequentialResult {
    /// Variables classified relevant.
    pub selected: BTreeSet<usize>,
    /// Variables still undecided at the stop (excluded from `selected`).
    pub undecided: BTreeSet<usize>,
    pub calibration: Calibration,
    pub pilot_history: DetectionHistory,
    /// Evidence-phase detections, one row per executed iteration.
    pub history: DetectionHistory,
    /// Raw PDS candidate sets of the evidence phase, for benchmark reuse.
    pub union_history: UnionHistory,
    /// `evidence_paths[j][t-1]` is variable j's log-evidence after iteration t.
    pub evidence_paths: Vec<Vec<f64>>,
    pub statuses: Vec<VariableStatus>,
    pub decided_at: Vec<u64>,
    pub stop_iteration: u64,
    pub stop_reason: StopReason,
}

/// One perturbation iteration: bootstrap, impute, select, detect.
fn run_iteration(
    dataset: &IncompleteDataset,
    config: &RunConfig,
    tag: u64,
    index: u64,
) -> Result<(DetectionRow, BTreeSet<usize>), EvidenceError> {
    let mut rng = derive_rng(config.seed, &[tag, index]);
    let completed = perturbed_completion(dataset, config.impute_sweeps, index, &mut rng)?;
    let selection = pds_candidate(&completed, &config.lambda_rule, &mut rng)?;
    let row = detect(&completed, &selection, config.alpha, index)?;
    Ok((row, selection.s_union))
}

/// Iterations `lo..=hi` of one phase, generated in parallel and merged in
/// iteration order (each iteration's stream is derived independently).
fn run_iteration_block(
    dataset: &IncompleteDataset,
    config: &RunConfig,
    tag: u64,
    lo: u64,
    hi: u64,
    history: &mut DetectionHistory,
    unions: &mut UnionHistory,
) -> Result<(), EvidenceError> {
    let outcomes: Vec<Result<(DetectionRow, BTreeSet<usize>), EvidenceError>> = (lo..=hi)
        .into_par_iter()
        .map(|t| run_iteration(dataset, config, tag, t))
        .collect();
    for outcome in outcomes {
        let (row, union) = outcome?;
        history.push(row)?;
        unions.push(union);
    }
    Ok(())
}

/// Pilot phase with one bounded extension on calibration fallback.
fn run_pilot(
    dataset: &IncompleteDataset,
    config: &RunConfig,
) -> Result<(DetectionHistory, UnionHistory, Calibration), EvidenceError> {
    let p = dataset.p();
    let params = config.calibration_params();
    let mut history = DetectionHistory::new(p);
    let mut unions = UnionHistory::new(p);
    run_iteration_block(dataset, config, stream::PILOT, 1, config.t_pilot, &mut history, &mut unions)?;
    let mut calibration = calibrate(&history, &params);
    if calibration.fallback_triggered {
        run_iteration_block(
            dataset,
            config,
            stream::PILOT,
            config.t_pilot + 1,
            2 * config.t_pilot,
            &mut history,
            &mut unions,
        )?;
        calibration = calibrate(&history, &params);
    }
    Ok((history, unions, calibration))
}

/// Precomputed perturbation stream: pilot plus a full evidence phase of
/// `t_max` iterations, independent of where the sequential rule would stop.
/// Lets benchmark rules and the sequential replay share identical draws.
#[derive(Debug, Clone)]
pub struct PerturbationStream {
    pub calibration: Calibration,
    pub pilot_history: DetectionHistory,
    pub pilot_unions: UnionHistory,
    pub evidence_history: DetectionHistory,
    pub evidence_unions: UnionHistory,
}

/// Generates the full stream for `config`. Fails with
/// [`EvidenceError::CalibrationFallback`] when the pilot (after one
/// extension) cannot separate the detection probabilities.
pub fn generate_stream(
    dataset: &IncompleteDataset,
    config: &RunConfig,
) -> Result<PerturbationStream, EvidenceError> {
    config.validate()?;
    let (pilot_history, pilot_unions, calibration) = run_pilot(dataset, config)?;
    if calibration.fallback_triggered {
        return Err(EvidenceError::CalibrationFallback(Box::new(FallbackInfo {
            pilot_history,
            pilot_unions,
            calibration,
        })));
    }
    let p = dataset.p();
    let mut evidence_history = DetectionHistory::new(p);
    let mut evidence_unions = UnionHistory::new(p);
    run_iteration_block(
        dataset,
        config,
        stream::EVIDENCE,
        1,
        config.t_max,
        &mut evidence_history,
        &mut evidence_unions,
    )?;
    Ok(PerturbationStream {
        calibration,
        pilot_history,
        pilot_unions,
        evidence_history,
        evidence_unions,
    })
}

/// Core evidence loop over a source of detection rows.
fn drive_evidence<F>(
    config: &RunConfig,
    calibration: Calibration,
    pilot_history: DetectionHistory,
    p: usize,
    mut next: F,
) -> Result<SequentialResult, EvidenceError>
where
    F: FnMut(u64) -> Result<(DetectionRow, BTreeSet<usize>), EvidenceError>,
{
    let mut state = EvidenceState::new(p);
    let mut history = DetectionHistory::new(p);
    let mut unions = UnionHistory::new(p);
    let mut paths: Vec<Vec<f64>> = vec![Vec::with_capacity(config.t_max as usize); p];
    let mut stop_iteration = config.t_max;
    let mut stop_reason = StopReason::TMax;
    for t in 1..=config.t_max {
        let (row, union) = next(t)?;
        state.update(&row, &calibration)?;
        state.classify(config.c_log_threshold, config.t_min);
        for (j, path) in paths.iter_mut().enumerate() {
            path.push(state.log_evidence()[j]);
        }
        history.push(row)?;
        unions.push(union);
        if state.all_decided() {
            stop_iteration = t;
            stop_reason = StopReason::AllClassified;
            break;
        }
    }
    Ok(SequentialResult {
        selected: state.relevant_set(),
        undecided: state.undecided_set(),
        calibration,
        pilot_history,
        history,
        union_history: unions,
        evidence_paths: paths,
        statuses: state.statuses().to_vec(),
        decided_at: state.decided_at().to_vec(),
        stop_iteration,
        stop_reason,
    })
}

/// Full sequential evidence procedure: pilot calibration (with one extension
/// on fallback), then fresh perturbation iterations with evidence updates and
/// absorbing classification until every variable is decided or `t_max` is
/// reached. Evidence iterations never reuse pilot draws.
pub fn run_sequential(
    dataset: &IncompleteDataset,
    config: &RunConfig,
) -> Result<SequentialResult, EvidenceError> {
    config.validate()?;
    let (pilot_history, pilot_unions, calibration) = run_pilot(dataset, config)?;
    if calibration.fallback_triggered {
        return Err(EvidenceError::CalibrationFallback(Box::new(FallbackInfo {
            pilot_history,
            pilot_unions,
            calibration,
        })));
    }
    drive_evidence(config, calibration, pilot_history, dataset.p(), |t| {
        run_iteration(dataset, config, stream::EVIDENCE, t)
    })
}

/// Applies the sequential rule to a precomputed stream. With the same config
/// this matches [`run_sequential`] exactly, just without regenerating draws.
pub fn replay_sequential(
    stream_record: &PerturbationStream,
    config: &RunConfig,
) -> Result<SequentialResult, EvidenceError> {
    config.validate()?;
    drive_evidence(
        config,
        stream_record.calibration.clone(),
        stream_record.pilot_history.clone(),
        stream_record.evidence_history.p(),
        |t| {
            let idx = (t - 1) as usize;
            Ok((
                stream_record.evidence_history.rows()[idx].clone(),
                stream_record.evidence_unions.sets()[idx].clone(),
            ))
        },
    )
}
