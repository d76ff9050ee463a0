//! `simulate`: run a scenario grid and write tidy CSVs plus a manifest.

use crate::grid::{desk_preset, full_preset, GridConfig};
use anyhow::{bail, Context};
use bootmi::rng::{derive_seed, stream};
use bootmi::simlab::{run_scenario, MethodId, ScenarioResult};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(clap::Args)]
pub struct SimulateArgs {
    /// Grid config JSON (a previously written manifest.json also works).
    #[arg(long, short = 'c', conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in grid: `desk` (24 scenarios x 100 reps) or `full`
    /// (108 scenarios x 500 reps).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Master seed for presets (ignored with --config).
    #[arg(long, default_value_t = 20240501)]
    seed: u64,
    /// Output directory (created if absent).
    #[arg(long, short = 'o')]
    out: PathBuf,
    /// Worker threads for replications; defaults to BOOTMI_JOBS or all cores.
    #[arg(long)]
    jobs: Option<usize>,
}

pub fn run(args: &SimulateArgs) -> anyhow::Result<()> {
    let grid = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            GridConfig::from_json(&text).map_err(|e| {
                anyhow::anyhow!(
                    "invalid config {} at line {}, column {}: {e}",
                    path.display(),
                    e.line(),
                    e.column()
                )
            })?
        }
        (None, Some(preset)) => match preset.as_str() {
            "desk" => desk_preset(args.seed),
            "full" => {
                eprintln!(
                    "warning: the full preset runs 108 scenarios x 500 replications; \
                     expect very long runtimes"
                );
                full_preset(args.seed)
            }
            other => bail!("unknown preset '{other}' (expected 'desk' or 'full')"),
        },
        (None, None) => bail!("either --config or --preset is required"),
    };
    grid.run.validate().map_err(|e| anyhow::anyhow!("invalid run config: {e}"))?;
    if grid.scenarios.is_empty() {
        bail!("config has no scenarios");
    }

    let jobs = args
        .jobs
        .or_else(|| {
            std::env::var("BOOTMI_JOBS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0); // 0 = rayon default
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create output dir {}", args.out.display()))?;

    let mut results: Vec<ScenarioResult> = Vec::with_capacity(grid.scenarios.len());
    for (idx, spec) in grid.scenarios.iter().enumerate() {
        let scenario_seed = derive_seed(grid.seed, &[stream::SCENARIO, idx as u64]);
        eprintln!(
            "scenario {}/{}: {}",
            idx + 1,
            grid.scenarios.len(),
            spec.name
        );
        let mut result = pool.install(|| {
            run_scenario(
                &spec.dgp,
                &spec.miss,
                &grid.run,
                grid.replications,
                scenario_seed,
            )
        })?;
        result.scenario.name = spec.name.clone();
        results.push(result);
    }

    write_outputs(&args.out, &grid, &results)?;
    println!(
        "wrote selection_metrics.csv, treatment_metrics.csv, iterations.csv, manifest.json to {}",
        args.out.display()
    );
    Ok(())
}

fn scenario_key(r: &ScenarioResult) -> String {
    let s = &r.scenario;
    format!(
        "{},{},{},{},{},{},{}",
        s.name, s.dgp.n, s.dgp.p, s.dgp.target_r2, s.dgp.heteroscedastic, s.miss.mechanism, s.miss.rate
    )
}

const KEY_HEADER: &str = "scenario,n,p,r2,heteroscedastic,mechanism,rate";

fn tidy_csv(results: &[ScenarioResult], metrics: &[(&str, fn(&bootmi::simlab::MethodMetrics) -> f64)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{KEY_HEADER},method,metric,value");
    for r in results {
        let key = scenario_key(r);
        for id in MethodId::ALL {
            let m = r.metrics(id);
            for (name, get) in metrics {
                let _ = writeln!(out, "{key},{},{name},{}", id.label(), get(m));
            }
        }
    }
    out
}

/// Writes once, atomically, at the end of the run.
fn write_atomic(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn write_outputs(dir: &Path, grid: &GridConfig, results: &[ScenarioResult]) -> anyhow::Result<()> {
    let selection = tidy_csv(
        results,
        &[
            ("tpr", |m| m.tpr),
            ("fpr", |m| m.fpr),
            ("dist_ideal", |m| m.dist_ideal),
            ("model_size", |m| m.model_size),
        ],
    );
    let treatment = tidy_csv(
        results,
        &[
            ("bias", |m| m.bias),
            ("rmse", |m| m.rmse),
            ("coverage", |m| m.coverage),
        ],
    );
    let iterations = tidy_csv(
        results,
        &[
            ("iterations_mean", |m| m.iterations_mean),
            ("iterations_sd", |m| m.iterations_sd),
        ],
    );
    write_atomic(dir, "selection_metrics.csv", &selection)?;
    write_atomic(dir, "treatment_metrics.csv", &treatment)?;
    write_atomic(dir, "iterations.csv", &iterations)?;
    let manifest = serde_json::to_string_pretty(grid).expect("grid serializes");
    write_atomic(dir, "manifest.json", &manifest)?;
    Ok(())
}
