//! End-to-end tests of the sequential procedure on constructed and
//! simulated datasets.

use bootmi::dataset::IncompleteDataset;
use bootmi::detect::{detect, pds_candidate};
use bootmi::evidence::{
    generate_stream, replay_sequential, run_sequential, EvidenceError, RunConfig, StopReason,
};
use bootmi::perturb::perturbed_completion;
use bootmi::regress::LambdaRule;
use bootmi::rng::derive_rng;
use bootmi::simlab::{apply_missingness, gen_design1, DgpSpec, Mechanism, MissSpec};
use nalgebra::DMatrix;
use rand::Rng;

fn quick_rule() -> LambdaRule {
    LambdaRule::CvOneSe {
        folds: 5,
        grid_size: 20,
    }
}

/// A dataset where one control column duplicates D exactly: the auxiliary
/// LASSO picks it every iteration, so it must be classified relevant at the
/// earliest allowed time.
#[test]
fn duplicate_of_d_is_relevant_at_t_min() {
    let n = 120;
    let p = 8;
    let mut rng = derive_rng(42, &[1]);
    let mut values = DMatrix::zeros(n, p + 2);
    for i in 0..n {
        let d: f64 = rng.gen_range(-1.0..1.0);
        values[(i, 1)] = d;
        values[(i, 2)] = d; // X1 == D
        for j in 1..p {
            values[(i, 2 + j)] = rng.gen_range(-1.0..1.0);
        }
        values[(i, 0)] = 0.8 * d + rng.gen_range(-0.5..0.5);
    }
    let names: Vec<String> = ["Y", "D"]
        .iter()
        .map(|s| s.to_string())
        .chain((1..=p).map(|j| format!("X{j}")))
        .collect();
    let ds = IncompleteDataset::complete(values, names).unwrap();
    let cfg = RunConfig {
        t_pilot: 8,
        t_max: 60,
        t_min: 5,
        seed: 7,
        lambda_rule: quick_rule(),
        ..RunConfig::default()
    };
    let result = run_sequential(&ds, &cfg).unwrap();
    assert!(
        result.selected.contains(&0),
        "the duplicate of D must be selected (selected: {:?})",
        result.selected
    );
    assert_eq!(result.decided_at[0], cfg.t_min, "decision exactly at the gate");
    assert!(result.stop_iteration <= cfg.t_max);
}

/// Pure-noise controls under a sparse selector: every realization either
/// classifies at least 90% of variables irrelevant before the cap, or lands
/// in the documented calibration-fallback path (a non-separating pilot).
#[test]
fn pure_noise_is_mostly_classified_irrelevant() {
    let n = 200;
    let p = 20;
    let mut ok_runs = 0;
    for seed in 0..5u64 {
        let mut rng = derive_rng(43, &[seed]);
        let values = DMatrix::from_fn(n, p + 2, |_, _| rng.gen_range(-1.0f64..1.0));
        let names: Vec<String> = ["Y", "D"]
            .iter()
            .map(|s| s.to_string())
            .chain((1..=p).map(|j| format!("X{j}")))
            .collect();
        let ds = IncompleteDataset::complete(values, names).unwrap();
        let cfg = RunConfig {
            t_pilot: 10,
            t_max: 200,
            seed: 1000 + seed,
            lambda_rule: quick_rule(),
            ..RunConfig::default()
        };
        match run_sequential(&ds, &cfg) {
            Ok(result) => {
                let irrelevant = result
                    .statuses
                    .iter()
                    .filter(|s| **s == bootmi::evidence::VariableStatus::Irrelevant)
                    .count();
                assert!(
                    irrelevant * 10 >= p * 9,
                    "seed {seed}: only {irrelevant}/{p} classified irrelevant"
                );
                assert!(result.stop_iteration <= cfg.t_max);
                ok_runs += 1;
            }
            // a pure-noise pilot can legitimately fail to separate pi1/pi0
            Err(EvidenceError::CalibrationFallback(_)) => {}
            Err(other) => panic!("seed {seed}: unexpected error: {other}"),
        }
    }
    // not every realization may calibrate, but the loop must exercise both
    // paths deterministically; with these seeds at least one run calibrates
    assert!(ok_runs >= 1, "no pure-noise realization calibrated");
}

/// The lazy sequential run and the precomputed-stream replay must agree
/// exactly, draw for draw.
#[test]
fn replay_matches_lazy_run() {
    let dgp = DgpSpec {
        n: 150,
        p: 10,
        k0: 3,
        target_r2: 0.6,
        heteroscedastic: false,
        alpha0: 0.5,
        rho: 0.5,
    };
    let (complete, _) = gen_design1(&dgp, &mut derive_rng(5, &[1])).unwrap();
    let ds = apply_missingness(
        &complete,
        &MissSpec::new(Mechanism::Mcar, 0.2),
        &mut derive_rng(5, &[2]),
    )
    .unwrap();
    let cfg = RunConfig {
        t_pilot: 6,
        t_max: 40,
        t_min: 3,
        seed: 99,
        m_imputations: 3,
        lambda_rule: quick_rule(),
        ..RunConfig::default()
    };
    let lazy = run_sequential(&ds, &cfg).unwrap();
    let stream = generate_stream(&ds, &cfg).unwrap();
    let replayed = replay_sequential(&stream, &cfg).unwrap();
    assert_eq!(lazy.selected, replayed.selected);
    assert_eq!(lazy.stop_iteration, replayed.stop_iteration);
    assert_eq!(lazy.stop_reason, replayed.stop_reason);
    assert_eq!(lazy.decided_at, replayed.decided_at);
    assert_eq!(lazy.evidence_paths, replayed.evidence_paths);
    // lazy run stops generating at the stopping time; the stream holds t_max
    assert_eq!(lazy.history.t() as u64, lazy.stop_iteration);
    assert_eq!(stream.evidence_history.t() as u64, cfg.t_max);
    for (a, b) in lazy
        .history
        .rows()
        .iter()
        .zip(stream.evidence_history.rows())
    {
        assert_eq!(a, b);
    }
}

/// Selected variables always come from the union of candidate sets on the
/// same stream.
#[test]
fn selected_subset_of_union_history() {
    let dgp = DgpSpec {
        n: 150,
        p: 10,
        k0: 3,
        target_r2: 0.6,
        heteroscedastic: false,
        alpha0: 0.5,
        rho: 0.5,
    };
    let (complete, _) = gen_design1(&dgp, &mut derive_rng(6, &[1])).unwrap();
    let ds = apply_missingness(
        &complete,
        &MissSpec::new(Mechanism::Mcar, 0.3),
        &mut derive_rng(6, &[2]),
    )
    .unwrap();
    let cfg = RunConfig {
        t_pilot: 6,
        t_max: 40,
        t_min: 3,
        seed: 13,
        lambda_rule: quick_rule(),
        ..RunConfig::default()
    };
    let result = run_sequential(&ds, &cfg).unwrap();
    let union_all = bootmi::benchmarks::union_rule(&result.union_history, cfg.t_max as usize);
    assert!(result.selected.is_subset(&union_all));
    if result.undecided.is_empty() {
        assert_eq!(result.stop_reason, StopReason::AllClassified);
    }
}

/// Detection rows of a perturbation iteration respect the pruning invariant
/// against their own candidate set.
#[test]
fn detection_prunes_candidate_set() {
    let dgp = DgpSpec {
        n: 200,
        p: 12,
        k0: 3,
        target_r2: 0.6,
        heteroscedastic: false,
        alpha0: 0.5,
        rho: 0.5,
    };
    let (complete, _) = gen_design1(&dgp, &mut derive_rng(7, &[1])).unwrap();
    let ds = apply_missingness(
        &complete,
        &MissSpec::new(Mechanism::Mar, 0.3),
        &mut derive_rng(7, &[2]),
    )
    .unwrap();
    for it in 1..=10u64 {
        let mut rng = derive_rng(77, &[it]);
        let completed = perturbed_completion(&ds, 5, it, &mut rng).unwrap();
        let sel = pds_candidate(&completed, &quick_rule(), &mut rng).unwrap();
        let row = detect(&completed, &sel, 0.05, it).unwrap();
        assert!(row.detected().is_subset(&sel.s_union));
    }
}

/// Under MCAR the marginal mean of imputed cells tracks the column's true
/// mean across repeated imputations.
#[test]
fn mcar_imputed_cell_mean_is_unbiased() {
    let dgp = DgpSpec {
        n: 300,
        p: 6,
        k0: 2,
        target_r2: 0.5,
        heteroscedastic: false,
        alpha0: 0.5,
        rho: 0.5,
    };
    let (complete, _) = gen_design1(&dgp, &mut derive_rng(88, &[1])).unwrap();
    let ds = apply_missingness(
        &complete,
        &MissSpec::new(Mechanism::Mcar, 0.2),
        &mut derive_rng(88, &[2]),
    )
    .unwrap();
    // column 0 of the controls; its population mean is 0
    let col = bootmi::dataset::COL_X0;
    let missing_rows: Vec<usize> = (0..ds.n()).filter(|&i| !ds.is_observed(i, col)).collect();
    assert!(missing_rows.len() > 20);
    let iterations = 200;
    let mut means = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let mut rng = derive_rng(999, &[it as u64]);
        let done = bootmi::perturb::impute_once(
            &ds,
            &bootmi::perturb::PerturbationConfig::default(),
            &mut rng,
        )
        .unwrap();
        let m: f64 = missing_rows.iter().map(|&i| done.values()[(i, col)]).sum::<f64>()
            / missing_rows.len() as f64;
        means.push(m);
    }
    let grand = means.iter().sum::<f64>() / iterations as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (iterations - 1) as f64;
    let mc_se = (var / iterations as f64).sqrt();
    // the realized missing cells are one finite sample from a unit-variance
    // column, so their conditional mean sits about 1/sqrt(n_miss) from 0
    let sampling_se = 1.0 / (missing_rows.len() as f64).sqrt();
    let slack = 3.0 * (mc_se + sampling_se);
    assert!(
        grand.abs() <= slack,
        "imputed-cell grand mean {grand} too far from the true column mean (slack {slack})"
    );
}

/// Strongest control of the simulated design enters the candidate set in
/// almost every seeded replication.
#[test]
fn strongest_variable_enters_candidate_set() {
    let dgp = DgpSpec {
        n: 500,
        p: 50,
        k0: 5,
        target_r2: 0.6,
        heteroscedastic: false,
        alpha0: 0.5,
        rho: 0.5,
    };
    let rule = LambdaRule::default();
    let mut hits = 0;
    let reps = 100;
    for rep in 0..reps {
        let (complete, _) = gen_design1(&dgp, &mut derive_rng(3100 + rep, &[1])).unwrap();
        let ds = apply_missingness(
            &complete,
            &MissSpec::new(Mechanism::Mcar, 0.2),
            &mut derive_rng(3100 + rep, &[2]),
        )
        .unwrap();
        let mut rng = derive_rng(3100 + rep, &[3]);
        let completed = perturbed_completion(&ds, 5, 1, &mut rng).unwrap();
        let sel = pds_candidate(&completed, &rule, &mut rng).unwrap();
        if sel.s_union.contains(&0) {
            hits += 1;
        }
    }
    assert!(hits >= 95, "X1 entered the candidate set in only {hits}/{reps} runs");
}

/// Prints per-iteration candidate-set sizes and pilot calibration for the
/// desk-scale design; run with --nocapture for tuning.
#[test]
#[ignore]
fn diagnose_criterion5_iteration() {
    let dgp = DgpSpec {
        n: 500,
        p: 50,
        k0: 5,
        target_r2: 0.6,
        heteroscedastic: false,
        alpha0: 0.5,
        rho: 0.5,
    };
    let (complete, _) = gen_design1(&dgp, &mut derive_rng(1234, &[1])).unwrap();
    let ds = apply_missingness(
        &complete,
        &MissSpec::new(Mechanism::Mcar, 0.2),
        &mut derive_rng(1234, &[2]),
    )
    .unwrap();
    for rule in [
        LambdaRule::FractionOfMax { fraction: 0.2 },
        LambdaRule::FractionOfMax { fraction: 0.3 },
        LambdaRule::FractionOfMax { fraction: 0.4 },
        LambdaRule::FractionOfMax { fraction: 0.5 },
    ] {
        let mut z_counts = vec![0usize; 50];
        let mut union_sizes = Vec::new();
        let t_pilot = 20u64;
        for it in 1..=t_pilot {
            let mut rng = derive_rng(555, &[it]);
            let completed = perturbed_completion(&ds, 5, it, &mut rng).unwrap();
            let sel = pds_candidate(&completed, &rule, &mut rng).unwrap();
            let row = detect(&completed, &sel, 0.05, it).unwrap();
            union_sizes.push(sel.s_union.len());
            for j in row.detected() {
                z_counts[j] += 1;
            }
        }
        let mut rates: Vec<f64> = z_counts
            .iter()
            .map(|&c| c as f64 / t_pilot as f64)
            .collect();
        println!("rule {rule:?}");
        println!("  union sizes: {union_sizes:?}");
        println!("  true-var rates: {:?}", &rates[..5]);
        rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!("  sorted rates: {rates:?}");
    }
}
