//! Simulation grid configuration: JSON schema and built-in presets.

use bootmi::evidence::RunConfig;
use bootmi::simlab::{DgpSpec, Mechanism, MissSpec, ScenarioSpec};
use serde::{Deserialize, Serialize};

/// A full simulation request. The manifest written next to the results is
/// exactly this structure, so a manifest can be fed back to `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridConfig {
    /// Master seed; per-scenario and per-replication streams derive from it.
    pub seed: u64,
    pub replications: usize,
    #[serde(default)]
    pub run: RunConfig,
    pub scenarios: Vec<ScenarioSpec>,
}

impl GridConfig {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn scenario(n: usize, r2: f64, hetero: bool, mech: Mechanism, rate: f64) -> ScenarioSpec {
    let tag = if hetero { "het" } else { "hom" };
    ScenarioSpec {
        name: format!("n{n}_r2{:02}_{tag}_{mech}_m{:02}", (r2 * 100.0) as u32, (rate * 100.0) as u32),
        dgp: DgpSpec {
            n,
            p: 50,
            k0: 5,
            target_r2: r2,
            heteroscedastic: hetero,
            alpha0: 0.5,
            rho: 0.5,
        },
        miss: MissSpec::new(mech, rate),
    }
}

/// Desk-scale grid: 24 scenarios at 100 replications.
pub fn desk_preset(seed: u64) -> GridConfig {
    let mut scenarios = Vec::new();
    for &n in &[100usize, 500] {
        for &r2 in &[0.2, 0.6] {
            for mech in [Mechanism::Mcar, Mechanism::Mar, Mechanism::Mnar] {
                for &rate in &[0.2, 0.6] {
                    scenarios.push(scenario(n, r2, false, mech, rate));
                }
            }
        }
    }
    GridConfig {
        seed,
        replications: 100,
        run: RunConfig::default(),
        scenarios,
    }
}

/// Full factorial grid: 108 scenarios at 500 replications. Days of compute.
pub fn full_preset(seed: u64) -> GridConfig {
    let mut scenarios = Vec::new();
    for &n in &[100usize, 500, 1000] {
        for &hetero in &[false, true] {
            for &r2 in &[0.2, 0.6] {
                for mech in [Mechanism::Mcar, Mechanism::Mar, Mechanism::Mnar] {
                    for &rate in &[0.2, 0.4, 0.6] {
                        scenarios.push(scenario(n, r2, hetero, mech, rate));
                    }
                }
            }
        }
    }
    GridConfig {
        seed,
        replications: 500,
        run: RunConfig::default(),
        scenarios,
    }
}
