//! Run summaries and plot-ready exports.
//!
//! A `RunSummary` is the JSON artifact of one sequential analysis: resolved
//! config, calibration, classification outcome, full evidence paths, the
//! benchmark sets, and pooled estimates. The long-format evidence-path CSV
//! carries the data behind path plots.

use crate::evidence::{Calibration, RunConfig, SequentialResult, StopReason, VariableStatus};
use crate::pooling::PooledEstimate;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleSets {
    pub union: Vec<String>,
    pub freq50: Vec<String>,
    pub freq75: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// Iterations behind the fixed-budget sets.
    pub fixed_budget: u64,
    /// Iterations behind the matched sets (the stopping time).
    pub matched_budget: u64,
    pub fixed: RuleSets,
    pub matched: RuleSets,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodEstimate {
    pub method: String,
    pub model_size: usize,
    pub estimate: PooledEstimate,
}

/// Serializable record of one sequential run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    /// Control names, index-aligned with every per-variable vector here.
    pub variables: Vec<String>,
    pub calibration: Calibration,
    pub selected: Vec<String>,
    pub undecided: Vec<String>,
    pub statuses: Vec<VariableStatus>,
    pub decided_at: Vec<u64>,
    pub stop_iteration: u64,
    pub stop_reason: StopReason,
    /// `evidence_paths[j][t-1]` is variable j's log-evidence after iteration t.
    pub evidence_paths: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmarks: Option<BenchmarkReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimates: Vec<MethodEstimate>,
}

impl RunSummary {
    pub fn from_result(
        config: &RunConfig,
        variables: Vec<String>,
        result: &SequentialResult,
    ) -> Self {
        let name = |j: &usize| variables[*j].clone();
        RunSummary {
            config: config.clone(),
            selected: result.selected.iter().map(name).collect(),
            undecided: result.undecided.iter().map(name).collect(),
            variables,
            calibration: result.calibration.clone(),
            statuses: result.statuses.clone(),
            decided_at: result.decided_at.clone(),
            stop_iteration: result.stop_iteration,
            stop_reason: result.stop_reason,
            evidence_paths: result.evidence_paths.clone(),
            benchmarks: None,
            estimates: Vec::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("summary serializes");
        std::fs::write(path, json)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| format!("cannot read summary: {e}"))?;
        serde_json::from_str(&text).map_err(|e| format!("malformed run summary: {e}"))
    }

    /// Status of variable `j` as of iteration `t` (1-based).
    pub fn status_at(&self, j: usize, t: u64) -> VariableStatus {
        if self.decided_at[j] != 0 && t >= self.decided_at[j] {
            self.statuses[j]
        } else {
            VariableStatus::Undecided
        }
    }
}

fn status_str(s: VariableStatus) -> &'static str {
    match s {
        VariableStatus::Undecided => "undecided",
        VariableStatus::Relevant => "relevant",
        VariableStatus::Irrelevant => "irrelevant",
    }
}

/// Long-format evidence paths: one row per variable and iteration.
pub fn write_evidence_paths_csv(
    summary: &RunSummary,
    path: impl AsRef<Path>,
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "variable,iteration,log_evidence,status")?;
    for (j, var) in summary.variables.iter().enumerate() {
        for (ti, value) in summary.evidence_paths[j].iter().enumerate() {
            let t = ti as u64 + 1;
            writeln!(
                out,
                "{var},{t},{value},{}",
                status_str(summary.status_at(j, t))
            )?;
        }
    }
    out.flush()
}

/// Per-variable path statistics derived from a run summary.
#[derive(Debug, Clone, Serialize)]
pub struct PathStats {
    pub variable: String,
    pub final_log_evidence: f64,
    pub status: VariableStatus,
    /// 0 when the variable was still undecided at the stop.
    pub decision_iteration: u64,
    /// Strict sign changes along the path.
    pub zero_crossings: usize,
}

/// Summarizes each variable's evidence path. Fails when the path matrix is
/// inconsistent with the recorded stop iteration.
pub fn path_statistics(summary: &RunSummary) -> Result<Vec<PathStats>, String> {
    let t = summary.stop_iteration as usize;
    if summary.evidence_paths.len() != summary.variables.len() {
        return Err("path matrix and variable list disagree".to_string());
    }
    for (j, path) in summary.evidence_paths.iter().enumerate() {
        if path.len() != t {
            return Err(format!(
                "variable {} has {} path entries, expected {}",
                summary.variables[j],
                path.len(),
                t
            ));
        }
    }
    Ok(summary
        .variables
        .iter()
        .enumerate()
        .map(|(j, var)| {
            let path = &summary.evidence_paths[j];
            let mut crossings = 0;
            for w in path.windows(2) {
                if (w[0] > 0.0 && w[1] < 0.0) || (w[0] < 0.0 && w[1] > 0.0) {
                    crossings += 1;
                }
            }
            PathStats {
                variable: var.clone(),
                final_log_evidence: path.last().copied().unwrap_or(0.0),
                status: summary.statuses[j],
                decision_iteration: summary.decided_at[j],
                zero_crossings: crossings,
            }
        })
        .collect())
}

/// Writes path statistics as CSV.
pub fn write_path_statistics_csv<W: Write>(stats: &[PathStats], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "variable,final_log_evidence,status,decision_iteration,zero_crossings"
    )?;
    for s in stats {
        writeln!(
            out,
            "{},{},{},{},{}",
            s.variable,
            s.final_log_evidence,
            status_str(s.status),
            s.decision_iteration,
            s.zero_crossings
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary() -> RunSummary {
        RunSummary {
            config: RunConfig::default(),
            variables: vec!["X1".into(), "X2".into()],
            calibration: Calibration {
                pi0_raw: 0.05,
                pi0: 0.0625,
                pi1: 0.95,
                q_star: 0.55,
                lambda0: 0.25,
                pi0_min: 0.01,
                qstar_min: 0.5,
                fallback_triggered: false,
            },
            selected: vec!["X1".into()],
            undecided: vec![],
            statuses: vec![VariableStatus::Relevant, VariableStatus::Irrelevant],
            decided_at: vec![2, 3],
            stop_iteration: 3,
            stop_reason: StopReason::AllClassified,
            evidence_paths: vec![vec![1.0, 2.5, 2.5], vec![-0.5, 0.6, -2.0]],
            benchmarks: None,
            estimates: Vec::new(),
        }
    }

    #[test]
    fn csv_has_one_row_per_variable_iteration() {
        let s = summary();
        let tmp = tempfile::NamedTempFile::new().unwrap();
        write_evidence_paths_csv(&s, tmp.path()).unwrap();
        let text = std::fs::read_to_string(tmp.path()).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 1 + 2 * 3);
        assert_eq!(rows[0], "variable,iteration,log_evidence,status");
        assert!(rows[1].starts_with("X1,1,"));
        // status flips only at the decision iteration
        assert!(rows[1].ends_with("undecided"));
        assert!(rows[2].ends_with("relevant"));
    }

    #[test]
    fn path_statistics_count_crossings_and_respect_gate() {
        let s = summary();
        let stats = path_statistics(&s).unwrap();
        assert_eq!(stats.len(), 2);
        assert_eq!(stats[0].zero_crossings, 0);
        assert_eq!(stats[1].zero_crossings, 2);
        assert_eq!(stats[0].decision_iteration, 2);
        assert!((stats[1].final_log_evidence + 2.0).abs() < 1e-12);
        // all decided: no undecided rows
        assert!(stats.iter().all(|s| s.decision_iteration > 0));
    }

    #[test]
    fn path_statistics_reject_ragged_paths() {
        let mut s = summary();
        s.evidence_paths[1].pop();
        assert!(path_statistics(&s).is_err());
    }

    #[test]
    fn summary_round_trips_through_json() {
        let s = summary();
        let tmp = tempfile::NamedTempFile::new().unwrap();
        s.save(tmp.path()).unwrap();
        let back = RunSummary::load(tmp.path()).unwrap();
        assert_eq!(back.variables, s.variables);
        assert_eq!(back.stop_iteration, 3);
        assert_eq!(back.statuses, s.statuses);
        assert_eq!(back.evidence_paths, s.evidence_paths);
    }
}
