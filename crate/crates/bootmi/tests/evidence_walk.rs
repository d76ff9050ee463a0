//! Random-walk behavior of the log-evidence process: drift separation,
//! incorrect-boundary-crossing bounds, classification consistency, and the
//! first-passage-time approximation. Exact Markov-chain values serve as
//! independent oracles where the walk lives on a lattice.

use bootmi::detect::{DetectionFlags, DetectionRow};
use bootmi::evidence::{break_even, drift, Calibration, EvidenceState, VariableStatus};
use bootmi::rng::derive_rng;
use rand::Rng;

fn walk_calibration(pi0: f64, pi1: f64) -> Calibration {
    Calibration {
        pi0_raw: pi0,
        pi0,
        pi1,
        q_star: break_even(pi0, pi1).unwrap(),
        lambda0: 0.0,
        pi0_min: pi0,
        qstar_min: 0.0,
        fallback_triggered: false,
    }
}

fn kl_bernoulli(a: f64, b: f64) -> f64 {
    a * (a / b).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln()
}

/// Empirical mean log-evidence increment under detection rate q matches the
/// signed KL divergences within 3 Monte Carlo standard errors.
#[test]
fn drift_separation_matches_kl() {
    let (pi0, pi1) = (0.1, 0.9);
    let cal = walk_calibration(pi0, pi1);
    let (l_pos, l_neg) = cal.log_increments();
    let draws = 100_000usize;
    for (q, expected) in [
        (pi1, kl_bernoulli(pi1, pi0)),
        (pi0, -kl_bernoulli(pi0, pi1)),
    ] {
        let mut rng = derive_rng(2001, &[(q * 1000.0) as u64]);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..draws {
            let inc = if rng.gen_bool(q) { l_pos } else { l_neg };
            sum += inc;
            sum_sq += inc * inc;
        }
        let mean = sum / draws as f64;
        let var = (sum_sq / draws as f64 - mean * mean).max(0.0);
        let se = (var / draws as f64).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * se,
            "q={q}: mean increment {mean} vs KL {expected} (3se={})",
            3.0 * se
        );
        // check against the closed-form drift as well
        let m = drift(q, pi0, pi1).unwrap();
        assert!((m - expected).abs() < 1e-12);
    }
}

/// Simulates the raw walk until it leaves (-c, c); returns (hit_lower, time).
fn first_passage(q: f64, l_pos: f64, l_neg: f64, c: f64, rng: &mut rand_chacha::ChaCha8Rng) -> (bool, u64) {
    let mut s = 0.0;
    for t in 1..=100_000u64 {
        s += if rng.gen_bool(q) { l_pos } else { l_neg };
        if s >= c {
            return (false, t);
        }
        if s <= -c {
            return (true, t);
        }
    }
    (false, 100_000)
}

/// Under the alternative rate, the probability of ever crossing the lower
/// boundary first stays below exp(-c) (plus Monte Carlo slack).
#[test]
fn wald_bound_on_incorrect_crossing() {
    let (pi0, pi1) = (0.1, 0.9);
    let cal = walk_calibration(pi0, pi1);
    let (l_pos, l_neg) = cal.log_increments();
    let streams = 100_000usize;
    for c in [3f64.ln(), 10f64.ln()] {
        let mut rng = derive_rng(2002, &[(c * 1e6) as u64]);
        let mut wrong = 0usize;
        for _ in 0..streams {
            if first_passage(pi1, l_pos, l_neg, c, &mut rng).0 {
                wrong += 1;
            }
        }
        let p_hat = wrong as f64 / streams as f64;
        let se = (p_hat * (1.0 - p_hat) / streams as f64).sqrt();
        let bound = (-c).exp();
        assert!(
            p_hat <= bound + 3.0 * se,
            "c={c}: wrong-crossing rate {p_hat} above bound {bound}"
        );
    }
}

/// Exact wrong-exit probability of the +-1 lattice walk with absorbing
/// barriers at +-m, starting at 0 (gambler's ruin).
fn exact_wrong_exit(p_up: f64, m: i64) -> f64 {
    let r = (1.0 - p_up) / p_up;
    (r.powi(m as i32) - r.powi(2 * m as i32)) / (1.0 - r.powi(2 * m as i32))
}

/// Exact expected absorption time of the same chain via the tridiagonal
/// system E_k = 1 + p E_{k+1} + (1-p) E_{k-1}, E_{+-m} = 0.
fn exact_absorption_time(p_up: f64, m: i64) -> f64 {
    let size = (2 * m - 1) as usize; // states -m+1..m-1
    let q = 1.0 - p_up;
    // Thomas algorithm on -q E_{k-1} + E_k - p E_{k+1} = 1
    let mut c_prime = vec![0.0; size];
    let mut d_prime = vec![0.0; size];
    c_prime[0] = -p_up;
    d_prime[0] = 1.0;
    for k in 1..size {
        let denom = 1.0 - (-q) * c_prime[k - 1];
        c_prime[k] = -p_up / denom;
        d_prime[k] = (1.0 + q * d_prime[k - 1]) / denom;
    }
    let mut e = vec![0.0; size];
    e[size - 1] = d_prime[size - 1];
    for k in (0..size - 1).rev() {
        e[k] = d_prime[k] - c_prime[k] * e[k + 1];
    }
    e[(m - 1) as usize] // state 0 sits at offset m-1
}

/// With (pi0,pi1)=(0.1,0.9) the increments are +-log 9, so thresholds map to
/// a lattice barrier: the engine's classification behavior must match the
/// exact chain. At the default delay t_min=5, accuracy clears 99%.
#[test]
fn classification_consistency_at_default_delay() {
    let (pi0, pi1) = (0.1, 0.9);
    let cal = walk_calibration(pi0, pi1);
    let c = 10f64.ln();
    let t_min = 5;
    let streams = 2000;
    for (q, want) in [(0.9, VariableStatus::Relevant), (0.1, VariableStatus::Irrelevant)] {
        let mut rng = derive_rng(2003, &[(q * 100.0) as u64]);
        let mut correct = 0usize;
        for _ in 0..streams {
            let mut state = EvidenceState::new(1);
            for t in 1..=200u64 {
                let row = DetectionRow {
                    z: vec![rng.gen_bool(q)],
                    iteration: t,
                    flags: DetectionFlags::default(),
                };
                state.update(&row, &cal).unwrap();
                state.classify(c, t_min);
                if state.all_decided() {
                    break;
                }
            }
            if state.statuses()[0] == want {
                correct += 1;
            }
        }
        let accuracy = correct as f64 / streams as f64;
        assert!(
            accuracy >= 0.99,
            "q={q}: accuracy {accuracy} below 0.99 at t_min={t_min}"
        );
    }
}

/// With no delay gate the engine is the raw absorbing walk; its accuracy must
/// match the exact gambler's-ruin value (98.78%, which is why the 99% check
/// above needs the delay gate).
#[test]
fn classification_without_delay_matches_exact_chain() {
    let (pi0, pi1) = (0.1, 0.9);
    let cal = walk_calibration(pi0, pi1);
    let (l_pos, _) = cal.log_increments();
    let c = 10f64.ln();
    let barrier = (c / l_pos).ceil() as i64; // = 2
    let exact = 1.0 - exact_wrong_exit(0.9, barrier);
    assert!((exact - 0.987805).abs() < 1e-6);

    let streams = 20_000usize;
    let mut rng = derive_rng(2004, &[9]);
    let mut correct = 0usize;
    for _ in 0..streams {
        let mut state = EvidenceState::new(1);
        for t in 1..=400u64 {
            let row = DetectionRow {
                z: vec![rng.gen_bool(0.9)],
                iteration: t,
                flags: DetectionFlags::default(),
            };
            state.update(&row, &cal).unwrap();
            state.classify(c, 1);
            if state.all_decided() {
                break;
            }
        }
        if state.statuses()[0] == VariableStatus::Relevant {
            correct += 1;
        }
    }
    let accuracy = correct as f64 / streams as f64;
    let se = (exact * (1.0 - exact) / streams as f64).sqrt();
    assert!(
        (accuracy - exact).abs() <= 3.0 * se,
        "engine accuracy {accuracy} vs exact chain {exact} (3se={})",
        3.0 * se
    );
}

/// First-passage time: c/|drift| approximates the simulated mean decision
/// time to within 25% (of the simulated mean; the lattice overshoot keeps the
/// gap near 22% at this threshold). The simulation itself is pinned to the
/// exact chain expectation.
#[test]
fn stopping_time_approximation() {
    let (pi0, pi1) = (0.1, 0.9);
    let cal = walk_calibration(pi0, pi1);
    let (l_pos, l_neg) = cal.log_increments();
    let c = 30f64.ln();
    let barrier = (c / l_pos).ceil() as i64;
    let streams = 40_000usize;
    for q in [0.95, 0.05] {
        let mu = drift(q, pi0, pi1).unwrap();
        let approx = bootmi::evidence::expected_stopping_time(c, mu).unwrap();
        let mut rng = derive_rng(2005, &[(q * 100.0) as u64]);
        let mut total = 0u64;
        let mut total_sq = 0.0f64;
        for _ in 0..streams {
            let (_, t) = first_passage(q, l_pos, l_neg, c, &mut rng);
            total += t;
            total_sq += (t * t) as f64;
        }
        let sim_mean = total as f64 / streams as f64;
        let var = (total_sq / streams as f64 - sim_mean * sim_mean).max(0.0);
        let se = (var / streams as f64).sqrt();

        // independent oracle: exact absorption time of the lattice chain
        let p_up = if q > 0.5 { q } else { 1.0 - q }; // symmetric lattice
        let exact = exact_absorption_time(p_up, barrier);
        assert!(
            (sim_mean - exact).abs() <= 4.0 * se,
            "q={q}: simulated mean {sim_mean} vs exact {exact}"
        );

        let rel_gap = (approx - sim_mean).abs() / sim_mean;
        assert!(
            rel_gap <= 0.25,
            "q={q}: approximation {approx} vs simulated {sim_mean} (gap {rel_gap})"
        );
    }
}

/// Doubling the separation cuts expected decision times; variables near the
/// break-even rate take longest.
#[test]
fn decision_time_grows_near_break_even() {
    let (pi0, pi1) = (0.1, 0.9);
    let cal = walk_calibration(pi0, pi1);
    let (l_pos, l_neg) = cal.log_increments();
    let c = 10f64.ln();
    let q_star = cal.q_star;
    let mut means = Vec::new();
    for q in [0.9, 0.7, q_star + 0.05] {
        let mut rng = derive_rng(2006, &[(q * 1000.0) as u64]);
        let total: u64 = (0..5000)
            .map(|_| first_passage(q, l_pos, l_neg, c, &mut rng).1)
            .sum();
        means.push(total as f64 / 5000.0);
    }
    assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
}
