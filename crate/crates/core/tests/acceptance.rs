//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so each criterion prints its
//! own summary; the process exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clan_sim::backward::{certify, run_backward_coupled, BackwardError, BackwardOptions};
use clan_sim::histogram::{tv_distance, tv_to_geometric};
use clan_sim::model::{alpha, big_lambda, check_conditions, delta_f, growth_constant, rho};
use clan_sim::model_file::parse_model;
use clan_sim::oracle::estimate_marginal;
use clan_sim::report::render_report;
use clan_sim::rng::RngStream;
use clan_sim::sampler::{proportion, run_batch, BatchOptions, BatchStatistics};
use clan_sim::verify::{run_verification, VerifyOptions};
use clan_sim::{ModelSpec, NeuronId};

const MILLION: u64 = 1_000_000;

fn fixture(name: &str) -> ModelSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.json"));
    parse_model(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn set(ids: &[u64]) -> BTreeSet<NeuronId> {
    ids.iter().copied().map(NeuronId).collect()
}

fn batch(model: &ModelSpec, i: u64, n: u64, seed: u64, opts: BatchOptions) -> BatchStatistics {
    run_batch(model, NeuronId(i), n, seed, &opts).expect("batch")
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// M1 stationary law is Geometric(1/2).
fn criterion_1() -> Outcome {
    let stats = batch(&fixture("m1"), 1, MILLION, 101, BatchOptions::default());
    let tv = tv_to_geometric(&stats.potential_histogram().unwrap(), 0.5);
    outcome(tv < 0.01, format!("TV to Geometric(1/2) = {tv:.5} (< 0.01)"))
}

/// M1 stopping time: P(N > n) = 0.75^n and E[N] = 4.
fn criterion_2() -> Outcome {
    let stats = batch(&fixture("m1"), 1, MILLION, 102, BatchOptions::default());
    let mut worst: f64 = 0.0;
    for n in 1..=20 {
        let (p, se) = stats.n_stop_tail(n);
        worst = worst.max((p - 0.75f64.powi(n as i32)).abs() / se);
    }
    let mean = stats.mean_n_stop();
    let pass = worst <= 3.0 && (mean - 4.0).abs() <= 0.05;
    outcome(pass, format!("max |tail - 0.75^n| = {worst:.2} se over n<=20; mean N = {mean:.4}"))
}

/// Tail and mean bounds on M2 and M3.
fn criterion_3() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, i, a) in [("m2", 2, 101.0f64 / 105.0), ("m3", 3, 19.0 / 22.0)] {
        let stats = batch(&fixture(name), i, MILLION, 103, BatchOptions::default());
        let mut min_slack = f64::INFINITY;
        for n in 1..=50 {
            let (p, se) = stats.n_stop_tail(n);
            min_slack = min_slack.min(a.powi(n as i32) + 3.0 * se - p);
        }
        let mean = stats.mean_n_stop();
        let mean_ok = mean <= 1.0 / (1.0 - a) + 3.0 * stats.n_stop_stderr();
        pass &= min_slack >= 0.0 && mean_ok;
        parts.push(format!(
            "{name}: min tail slack {min_slack:.2e}, mean N {mean:.3} <= {:.3}",
            1.0 / (1.0 - a)
        ));
    }
    outcome(pass, parts.join("; "))
}

/// Coupling bound on M3 with F = {2, 3}.
fn criterion_4() -> Outcome {
    let opts = BatchOptions { coupled: Some(set(&[2, 3])), ..Default::default() };
    let stats = batch(&fixture("m3"), 3, 100_000, 104, opts);
    let c = stats.coupled.as_ref().unwrap();
    let (rate, _) = proportion(c.disagreements, stats.n_samples);
    let pass = rate <= 2.0 / 3.0 && c.implication_violations == 0;
    outcome(
        pass,
        format!(
            "P(disagree) = {rate:.5} <= 2/3; implication violations = {}",
            c.implication_violations
        ),
    )
}

/// Restricted clan stays inside the full clan.
fn criterion_5() -> Outcome {
    let mut violations = 0u64;
    let mut runs = 0u64;
    for (name, i, f) in [("m2", 2, set(&[2])), ("m3", 3, set(&[2, 3])), ("m3", 3, set(&[3]))] {
        let model = fixture(name);
        for idx in 0..100_000 {
            let mut stream = RngStream::new(105, idx);
            match run_backward_coupled(&model, &f, NeuronId(i), &BackwardOptions::default(), &mut stream) {
                Ok(_) => {}
                Err(BackwardError::ContainmentViolation { .. }) => violations += 1,
                Err(e) => panic!("{name}: {e}"),
            }
            runs += 1;
        }
    }
    outcome(violations == 0, format!("{violations} violations in {runs} coupled runs"))
}

/// Expected clan size at backward time s.
fn criterion_6() -> Outcome {
    let grid = vec![0.5, 1.0, 2.0, 4.0];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, i, c, exact) in [("m1", 1, -0.5, true), ("m2", 2, -1.0 / 3.0, false), ("m3", 3, -0.1, false)] {
        let opts = BatchOptions { clan_size_grid: grid.clone(), ..Default::default() };
        let stats = batch(&fixture(name), i, MILLION, 106, opts);
        let mut worst = f64::NEG_INFINITY;
        for (idx, s) in grid.iter().enumerate() {
            let (mean, se) = stats.clan_size_mean(idx);
            let target = (c * s).exp();
            let z = if exact { (mean - target).abs() / se } else { (mean - target) / se };
            worst = worst.max(z);
        }
        pass &= worst <= 3.0;
        parts.push(format!("{name}: worst z = {worst:.2}"));
    }
    outcome(pass, parts.join("; "))
}

/// Perfect sampler agrees with the forward oracle.
fn criterion_7() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, i, scope) in [("m2", 2, vec![1, 2]), ("m3", 3, vec![1, 2, 3])] {
        let model = fixture(name);
        let stats = batch(&model, i, MILLION, 107, BatchOptions::default());
        let f: Vec<NeuronId> = scope.into_iter().map(NeuronId).collect();
        let reference =
            estimate_marginal(&model, f, NeuronId(i), 10_000, MILLION, &mut RngStream::new(107, u64::MAX)).unwrap();
        let tv = tv_distance(&stats.potential_histogram().unwrap(), &reference).unwrap();
        pass &= tv < 0.02;
        parts.push(format!("{name}: TV = {tv:.5}"));
    }
    outcome(pass, parts.join("; "))
}

/// Certification succeeds with probability ρ^k.
fn criterion_8() -> Outcome {
    let model = fixture("m1");
    let mut pass = true;
    let mut parts = Vec::new();
    let mut rng = RngStream::new(108, 0);
    for k in 1..=3u32 {
        let hits = (0..MILLION).filter(|_| certify(&model, NeuronId(1), k, &mut rng).unwrap()).count() as u64;
        let p = 0.5f64.powi(k as i32);
        let (freq, _) = proportion(hits, MILLION);
        let sigma = (p * (1.0 - p) / MILLION as f64).sqrt();
        let z = (freq - p).abs() / sigma;
        pass &= z <= 3.0;
        parts.push(format!("k={k}: {freq:.5} (z = {z:.2})"));
    }
    outcome(pass, parts.join("; "))
}

/// Reports and batches are reproducible.
fn criterion_9() -> Outcome {
    let model = fixture("m3");
    let opts = VerifyOptions {
        samples: 100_000,
        seed: 109,
        finite_set: Some(set(&[2, 3])),
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for (idx, workers) in [None, Some(1), Some(4)].into_iter().enumerate() {
        let report = run_verification(&model, NeuronId(3), &VerifyOptions { workers, ..opts.clone() }).unwrap();
        let path = dir.path().join(format!("r{idx}.json"));
        std::fs::write(&path, render_report(&report).unwrap()).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    let reports_equal = files.windows(2).all(|w| w[0] == w[1]);
    let one = batch(&model, 3, 50_000, 9, BatchOptions { workers: Some(1), ..Default::default() });
    let many = batch(&model, 3, 50_000, 9, BatchOptions { workers: Some(8), ..Default::default() });
    outcome(
        reports_equal && one == many,
        format!("reports byte-identical: {reports_equal}; batches equal across workers: {}", one == many),
    )
}

/// Derived quantities match the hand-computed values.
fn criterion_10() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1e-300);
    let ids = |v: &[u64]| v.iter().copied().map(NeuronId).collect::<Vec<_>>();
    let (m1, m2, m3) = (fixture("m1"), fixture("m2"), fixture("m3"));
    let mut failures = Vec::new();
    let mut check = |label: &str, got: f64, want: f64| {
        if !close(got, want) {
            failures.push(format!("{label}: {got} != {want}"));
        }
    };
    check("Λ_1(M1)", big_lambda(&m1, NeuronId(1)).unwrap(), 2.0);
    check("Λ_2(M2)", big_lambda(&m2, NeuronId(2)).unwrap(), 10.5);
    check("Λ_3(M3)", big_lambda(&m3, NeuronId(3)).unwrap(), 11.0);
    check("ρ_1(M1)", rho(&m1, NeuronId(1)).unwrap(), 0.5);
    check("ρ_2(M2)", rho(&m2, NeuronId(2)).unwrap(), 0.9);
    check("α(M1)", alpha(&m1, &ids(&[1])).unwrap().value, 0.75);
    check("α(M2)", alpha(&m2, &ids(&[1, 2])).unwrap().value, 101.0 / 105.0);
    check("α(M3)", alpha(&m3, &ids(&[1, 2, 3])).unwrap().value, 19.0 / 22.0);
    check("c(M1)", growth_constant(&m1, &ids(&[1])).unwrap(), -0.5);
    check("c(M2)", growth_constant(&m2, &ids(&[1, 2])).unwrap(), -1.0 / 3.0);
    check("c(M3)", growth_constant(&m3, &ids(&[1, 2, 3])).unwrap(), -0.1);
    let r2 = check_conditions(&m2, &ids(&[1, 2])).unwrap();
    check("β(M2)", r2.beta, 10.5);
    check("m_1(M2)", r2.margins[0].margin, 1.0 / 3.0);
    check("m_2(M2)", r2.margins[1].margin, 0.4);
    let r3 = check_conditions(&m3, &ids(&[1, 2, 3])).unwrap();
    check("β(M3)", r3.beta, 11.0);
    for (idx, want) in [0.1, 0.3, 1.5].into_iter().enumerate() {
        check(&format!("m_{}(M3)", idx + 1), r3.margins[idx].margin, want);
    }
    check("β(M1)", check_conditions(&m1, &ids(&[1])).unwrap().beta, 2.0);
    let d2 = delta_f(&m2, &set(&[2]), &ids(&[1, 2])).unwrap();
    check("δ({2})(M2)", d2.delta, 1.0 / 21.0);
    check("bound({2})(M2)", d2.bound().unwrap(), 1.25);
    let d3 = delta_f(&m3, &set(&[2, 3]), &ids(&[1, 2, 3])).unwrap();
    check("δ({2,3})(M3)", d3.delta, 1.0 / 11.0);
    check("bound({2,3})(M3)", d3.bound().unwrap(), 2.0 / 3.0);
    let passed = r2.passed && r3.passed;
    let detail = if failures.is_empty() {
        "Λ, ρ, α, c, β, margins, δ(F) and coupling bounds match to 1e-12".to_string()
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty() && passed, detail)
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("single-neuron stationary law", criterion_1),
        ("single-neuron stopping-time law", criterion_2),
        ("stopping-time bounds on M2, M3", criterion_3),
        ("coupling bound on M3", criterion_4),
        ("restricted clan containment", criterion_5),
        ("clan size growth", criterion_6),
        ("oracle equivalence", criterion_7),
        ("certification law", criterion_8),
        ("determinism", criterion_9),
        ("derived quantities", criterion_10),
    ];
    let mut failed = 0;
    for (idx, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {verdict}: {name}: {} [{:.1}s]",
            idx + 1,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
