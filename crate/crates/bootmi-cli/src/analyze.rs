//! `analyze`: run the sequential evidence procedure on a CSV dataset.

use anyhow::{bail, Context};
use bootmi::benchmarks::{frequency_threshold, union_rule};
use bootmi::dataset::{load_csv, CsvConfig, IncompleteDataset};
use bootmi::evidence::{generate_stream, replay_sequential, EvidenceError, RunConfig};
use bootmi::perturb::impute_m;
use bootmi::pooling::pooled_from_completions;
use bootmi::regress::LambdaRule;
use bootmi::report::{
    write_evidence_paths_csv, BenchmarkReport, MethodEstimate, RuleSets, RunSummary,
};
use bootmi::rng::{derive_rng, stream};
use bootmi::simlab::CONFIDENCE_LEVEL;
use std::collections::BTreeSet;
use std::path::PathBuf;

/// Marker for exit code 2 (calibration fallback).
#[derive(Debug)]
pub struct CalibrationFallbackExit;

impl std::fmt::Display for CalibrationFallbackExit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "calibration fallback")
    }
}

impl std::error::Error for CalibrationFallbackExit {}

#[derive(clap::Args)]
pub struct AnalyzeArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    csv: PathBuf,
    /// Header name of the outcome column.
    #[arg(long)]
    y_col: String,
    /// Header name of the variable of interest.
    #[arg(long)]
    d_col: String,
    /// Missing-cell token (empty cells always count as missing).
    #[arg(long, default_value = "NA")]
    sentinel: String,
    /// Output directory for evidence_paths.csv and run_summary.json.
    #[arg(long, short = 'o')]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    t_pilot: u64,
    #[arg(long, default_value_t = 200)]
    t_max: u64,
    #[arg(long, default_value_t = 5)]
    t_min: u64,
    /// Classification threshold: log3, log10, log30, log1000, or a number.
    #[arg(long, default_value = "log10")]
    c_threshold: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.25)]
    lambda0: f64,
    #[arg(long, default_value_t = 0.01)]
    pi0_min: f64,
    #[arg(long, default_value_t = 0.1)]
    qstar_min: f64,
    /// Imputations pooled in the final estimate.
    #[arg(long, default_value_t = 10)]
    m_imputations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Penalty rule: frac:<f> (fraction of the null-model penalty), cv-1se,
    /// cv-min, or a fixed positive number.
    #[arg(long, default_value = "frac:0.18")]
    lambda_rule: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 50)]
    grid_size: usize,
    /// Worker threads; defaults to BOOTMI_JOBS or all cores.
    #[arg(long)]
    jobs: Option<usize>,
}

fn parse_threshold(text: &str) -> anyhow::Result<f64> {
    let c = match text {
        "log3" => 3f64.ln(),
        "log10" => 10f64.ln(),
        "log30" => 30f64.ln(),
        "log1000" => 1000f64.ln(),
        other => other
            .parse::<f64>()
            .with_context(|| format!("invalid threshold '{other}'"))?,
    };
    if !(c > 0.0) {
        bail!("threshold must be positive");
    }
    Ok(c)
}

fn parse_lambda_rule(text: &str, folds: usize, grid_size: usize) -> anyhow::Result<LambdaRule> {
    Ok(match text {
        "cv-1se" => LambdaRule::CvOneSe { folds, grid_size },
        "cv-min" => LambdaRule::CvMin { folds, grid_size },
        other => {
            if let Some(frac) = other.strip_prefix("frac:") {
                let fraction: f64 = frac
                    .parse()
                    .with_context(|| format!("invalid lambda rule '{other}'"))?;
                LambdaRule::FractionOfMax { fraction }
            } else {
                let lambda: f64 = other
                    .parse()
                    .with_context(|| format!("invalid lambda rule '{other}'"))?;
                LambdaRule::Fixed { lambda }
            }
        }
    })
}

fn set_names(set: &BTreeSet<usize>, dataset: &IncompleteDataset) -> Vec<String> {
    set.iter().map(|&j| dataset.x_name(j).to_string()).collect()
}

fn print_set(label: &str, set: &BTreeSet<usize>, dataset: &IncompleteDataset) {
    let names = set_names(set, dataset);
    println!("  {label:<22} [{}] ({} variables)", names.join(", "), names.len());
}

pub fn run(args: &AnalyzeArgs) -> anyhow::Result<()> {
    let config = RunConfig {
        t_pilot: args.t_pilot,
        t_max: args.t_max,
        t_min: args.t_min,
        c_log_threshold: parse_threshold(&args.c_threshold)?,
        alpha: args.alpha,
        lambda0: args.lambda0,
        pi0_min: args.pi0_min,
        qstar_min: args.qstar_min,
        m_imputations: args.m_imputations,
        seed: args.seed,
        lambda_rule: parse_lambda_rule(&args.lambda_rule, args.folds, args.grid_size)?,
        ..RunConfig::default()
    };
    config
        .validate()
        .map_err(|e| anyhow::anyhow!("invalid run config: {e}"))?;

    let csv_config = CsvConfig::new(&args.y_col, &args.d_col).with_sentinel(&args.sentinel);
    let dataset = load_csv(&args.csv, &csv_config)
        .with_context(|| format!("loading {}", args.csv.display()))?;
    println!(
        "loaded {} rows, {} candidate controls, {:.1}% of control cells missing",
        dataset.n(),
        dataset.p(),
        100.0 * dataset.missing_rate()
    );

    let jobs = args
        .jobs
        .or_else(|| std::env::var("BOOTMI_JOBS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")?;

    let stream_record = match pool.install(|| generate_stream(&dataset, &config)) {
        Ok(s) => s,
        Err(EvidenceError::CalibrationFallback(info)) => {
            eprintln!(
                "calibration fallback: the pilot phase (extended once) could not separate \
                 pi1 from pi0 (pi0_raw={:.4}, pi1={:.4});\nreporting frequency-threshold \
                 benchmarks over the {} pilot iterations instead.",
                info.calibration.pi0_raw,
                info.calibration.pi1,
                info.pilot_unions.len()
            );
            let budget = info.pilot_unions.len();
            print_set("union", &union_rule(&info.pilot_unions, budget), &dataset);
            print_set(
                "freq(50%)",
                &frequency_threshold(&info.pilot_unions, 0.50, budget),
                &dataset,
            );
            print_set(
                "freq(75%)",
                &frequency_threshold(&info.pilot_unions, 0.75, budget),
                &dataset,
            );
            return Err(anyhow::Error::new(CalibrationFallbackExit));
        }
        Err(e) => return Err(e.into()),
    };
    let result = replay_sequential(&stream_record, &config)?;

    let cal = &result.calibration;
    println!("\ncalibration (pilot of {} iterations):", stream_record.pilot_history.t());
    println!("  pi0_raw = {:.4}", cal.pi0_raw);
    println!("  pi0     = {:.4}", cal.pi0);
    println!("  pi1     = {:.4}", cal.pi1);
    println!("  q*      = {:.4}", cal.q_star);

    println!(
        "\nstopped after {} evidence iterations ({})",
        result.stop_iteration,
        match result.stop_reason {
            bootmi::evidence::StopReason::AllClassified => "all variables classified",
            bootmi::evidence::StopReason::TMax => "iteration cap reached",
        }
    );
    println!("\nselected as relevant (decision iteration):");
    if result.selected.is_empty() {
        println!("  (none)");
    }
    for &j in &result.selected {
        println!("  {:<24} t={}", dataset.x_name(j), result.decided_at[j]);
    }
    if !result.undecided.is_empty() {
        print_set("undecided at stop", &result.undecided, &dataset);
    }

    // benchmarks share the evidence-phase perturbation stream
    let unions = &stream_record.evidence_unions;
    let fixed_budget = config.t_max as usize;
    let matched_budget = result.stop_iteration as usize;
    let fixed = [
        ("union", union_rule(unions, fixed_budget)),
        ("freq(50%)", frequency_threshold(unions, 0.50, fixed_budget)),
        ("freq(75%)", frequency_threshold(unions, 0.75, fixed_budget)),
    ];
    let matched = [
        ("union", union_rule(unions, matched_budget)),
        ("freq(50%)", frequency_threshold(unions, 0.50, matched_budget)),
        ("freq(75%)", frequency_threshold(unions, 0.75, matched_budget)),
    ];
    println!("\nbenchmarks at fixed budget ({fixed_budget} iterations):");
    for (label, set) in &fixed {
        print_set(label, set, &dataset);
    }
    println!("\nbenchmarks at matched budget ({matched_budget} iterations):");
    for (label, set) in &matched {
        print_set(label, set, &dataset);
    }

    // pooled treatment estimates per method on shared final imputations
    let completions = pool.install(|| {
        impute_m(
            &dataset,
            config.m_imputations,
            &mut derive_rng(config.seed, &[stream::FINAL_IMPUTE]),
        )
    })?;
    let mut estimate_rows: Vec<(String, BTreeSet<usize>)> = vec![
        ("proposed".into(), result.selected.clone()),
        ("union".into(), fixed[0].1.clone()),
        ("freq50".into(), fixed[1].1.clone()),
        ("freq75".into(), fixed[2].1.clone()),
        ("union_matched".into(), matched[0].1.clone()),
        ("freq50_matched".into(), matched[1].1.clone()),
        ("freq75_matched".into(), matched[2].1.clone()),
    ];
    println!(
        "\npooled treatment estimates (m={}, {:.0}% CI):",
        config.m_imputations,
        CONFIDENCE_LEVEL * 100.0
    );
    let mut estimates = Vec::new();
    for (name, set) in estimate_rows.drain(..) {
        let pooled = pooled_from_completions(&completions, &set, CONFIDENCE_LEVEL)?;
        println!(
            "  {name:<16} {:+.4} (se {:.4})  [{:+.4}, {:+.4}]  size {}",
            pooled.q_bar,
            pooled.t_var.sqrt(),
            pooled.ci_low,
            pooled.ci_high,
            set.len()
        );
        estimates.push(MethodEstimate {
            method: name,
            model_size: set.len(),
            estimate: pooled,
        });
    }

    // artifacts
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create output dir {}", args.out.display()))?;
    let variables: Vec<String> = (0..dataset.p())
        .map(|j| dataset.x_name(j).to_string())
        .collect();
    let mut summary = RunSummary::from_result(&config, variables, &result);
    summary.benchmarks = Some(BenchmarkReport {
        fixed_budget: fixed_budget as u64,
        matched_budget: matched_budget as u64,
        fixed: RuleSets {
            union: set_names(&fixed[0].1, &dataset),
            freq50: set_names(&fixed[1].1, &dataset),
            freq75: set_names(&fixed[2].1, &dataset),
        },
        matched: RuleSets {
            union: set_names(&matched[0].1, &dataset),
            freq50: set_names(&matched[1].1, &dataset),
            freq75: set_names(&matched[2].1, &dataset),
        },
    });
    summary.estimates = estimates;
    summary.save(args.out.join("run_summary.json"))?;
    write_evidence_paths_csv(&summary, args.out.join("evidence_paths.csv"))?;
    println!(
        "\nwrote run_summary.json and evidence_paths.csv to {}",
        args.out.display()
    );
    Ok(())
}
