//! Acceptance suite. Runs every criterion in sequence, prints one
//! PASS/FAIL line per criterion, then checks the outcome.
//!
//! A criterion listed in `KNOWN_RED` is expected to fail for the stated
//! reason; the suite checks that it still fails exactly that way, so a
//! change in either direction is noticed.
//!
//! `CONTOBS_ACCEPTANCE_QUICK=1` swaps the full-scale attack for its quick
//! tier only.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use contobs::audit::{
    binomial_acceptance_interval, dp_tv_bound, dp_tv_bounds, estimate_challenge_advantage,
    rr_privacy_exact, run_oblivious_trial, AttackSummary, AuditSettings, PrivacyParams, Verdict,
};
use contobs::mechanisms::{randomized_response, BuiltinMechanism};
use contobs::reconstruction::{run_lemma_check, LemmaCheckConfig};
use contobs::seed::rng_from_seed;
use contobs::signvec::random_sign_vector;
use contobs::ProblemParams;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

/// Prints past the test harness's output capture, so the lines show up in
/// a plain `cargo test` run.
fn report(line: String) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

/// Criteria expected to be red, with the grid points that break them.
const KNOWN_RED: &[(u32, &str)] = &[(
    1,
    "ln((1+a)/(1-a)) <= 3a holds only for a <= 0.8586; grid points 0.90 and 0.95 exceed it",
)];

fn budget() -> PrivacyParams {
    PrivacyParams::new(0.2, 0.05).unwrap()
}

fn settings(trials: u64, seed: u64) -> AuditSettings {
    AuditSettings {
        trials,
        confidence: 0.95,
        budget: budget(),
        master_seed: seed,
    }
}

/// Grid points where the 3α bound fails, as hundredths.
fn three_alpha_failures() -> Vec<u32> {
    (1..=19)
        .map(|i| i * 5)
        .filter(|&h| rr_privacy_exact(h as f64 / 100.0).unwrap() > 3.0 * h as f64 / 100.0)
        .collect()
}

fn criterion_1() -> (bool, String) {
    let bad = three_alpha_failures();
    let mut rng = rng_from_seed(20_001);
    let n = 100_000u64;
    let mut kept = 0u64;
    for _ in 0..n {
        let b = random_sign_vector(1, &mut rng).unwrap();
        let y = randomized_response(&b, 0.45, &mut rng).unwrap();
        kept += u64::from(y == b);
    }
    let (lo, hi) = binomial_acceptance_interval(n, 0.725, 0.99).unwrap();
    let rate_ok = (lo..=hi).contains(&kept);
    let detail = format!(
        "3a bound fails at a in {:?}/100; keep count {kept} in [{lo}, {hi}]: {rate_ok}",
        bad
    );
    (bad.is_empty() && rate_ok, detail)
}

fn criterion_2() -> (bool, String) {
    let p = ProblemParams::new(0.45, 10_000_000, 200).unwrap();
    let mut accurate = 0;
    for i in 0..20 {
        if run_oblivious_trial(&BuiltinMechanism::ObliviousRr, &p, 2, i)
            .unwrap()
            .accurate
        {
            accurate += 1;
        }
    }
    (
        accurate == 20,
        format!("{accurate}/20 transcripts accurate"),
    )
}

fn criterion_3() -> (bool, String) {
    let p = ProblemParams::new(0.45, 100_000, 495).unwrap();
    let run = estimate_challenge_advantage(&BuiltinMechanism::ObliviousRr, &p, &settings(100, 3))
        .unwrap();
    let second = run
        .records
        .iter()
        .filter(|r| r.second_step_failed == Some(true))
        .count();
    let hist = AttackSummary::from_records(&run.records).first_failure_histogram;
    let cap = dp_tv_bound(&PrivacyParams::new(3.0 * 0.45, 0.0).unwrap());
    let detail = format!(
        "loss violated at t=2 in {second}/100; first failure histogram {hist:?}; accuracy_rate {}; tv_lower {:.3} <= {cap:.3}",
        run.report.accuracy_rate, run.report.tv_lower
    );
    (second == 100 && run.report.accuracy_rate == 0.0, detail)
}

fn criterion_4(quick_only: bool) -> (bool, String) {
    let quick_start = Instant::now();
    let qp = ProblemParams::new(0.45, 100_000, 100).unwrap();
    let quick =
        estimate_challenge_advantage(&BuiltinMechanism::FreshRr, &qp, &settings(50, 4)).unwrap();
    let quick_time = quick_start.elapsed();
    let quick_ok = quick.report.p_hat >= 0.75 && quick_time < Duration::from_secs(60);
    let mut detail = format!(
        "quick tier p_hat {:.2} in {:.1}s (accuracy_rate {:.2})",
        quick.report.p_hat,
        quick_time.as_secs_f64(),
        quick.report.accuracy_rate
    );
    if quick_only {
        detail.push_str("; full tier skipped");
        return (quick_ok, detail);
    }

    let p = ProblemParams::new(0.45, 10_000_000, 495).unwrap();
    let run =
        estimate_challenge_advantage(&BuiltinMechanism::FreshRr, &p, &settings(50, 5)).unwrap();
    let r = &run.report;
    let s = AttackSummary::from_records(&run.records);
    let linear = dp_tv_bounds(&budget()).linear.unwrap();
    let a = r.accuracy_rate >= 0.9;
    let b = s.precondition_trials > 0 && s.reconstructed_rate.unwrap_or(0.0) >= 0.9;
    let c = r.p_hat >= 0.75 && r.tv_lower > linear && r.verdict == Verdict::Violates;
    detail.push_str(&format!(
        "; full: accurate {:.2}, reconstructed {}/{} precondition trials (mean corr {:.4}), p_hat {:.2}, tv_lower {:.4} vs {linear}, {:?}",
        r.accuracy_rate,
        s.reconstructed,
        s.precondition_trials,
        s.mean_correlation_preconditioned.unwrap_or(f64::NAN),
        r.p_hat,
        r.tv_lower,
        r.verdict
    ));
    (quick_ok && a && b && c, detail)
}

fn criterion_5() -> (bool, String) {
    let s = run_lemma_check(&LemmaCheckConfig {
        instances: 1000,
        max_d: 2000,
        max_k: 50,
        seed: 6,
    })
    .unwrap();
    let vacuous = s.instances_tried - s.applicable;
    let detail = format!(
        "{} checked, {} satisfied, {vacuous} vacuous (no positive correlation), {} violations, min margin {:.4}",
        s.applicable,
        s.satisfied,
        s.violations,
        s.min_margin.unwrap_or(f64::NAN)
    );
    (s.violations == 0 && s.satisfied == s.applicable, detail)
}

fn criterion_6() -> (bool, String) {
    let zero = dp_tv_bound(&PrivacyParams::new(0.0, 0.0).unwrap());
    let b = dp_tv_bounds(&budget());
    let linear = b.linear.unwrap();
    let pass = zero == 0.0 && (b.bound - 0.27140).abs() <= 1e-5 && (linear - 0.45).abs() < 1e-12;
    (
        pass,
        format!(
            "tv(0,0) = {zero}, tv(0.2,0.05) = {:.6}, 2e+d = {linear}",
            b.bound
        ),
    )
}

fn criterion_7() -> (bool, String) {
    let p = ProblemParams::new(0.45, 1000, 10).unwrap();
    let run = estimate_challenge_advantage(&BuiltinMechanism::FixedOutput, &p, &settings(200, 7))
        .unwrap();
    let r = &run.report;
    let covers = r.ci_low <= 0.5 && 0.5 <= r.ci_high;
    (
        covers && r.verdict == Verdict::Consistent,
        format!(
            "p_hat {:.3}, CI [{:.3}, {:.3}], {:?}",
            r.p_hat, r.ci_low, r.ci_high, r.verdict
        ),
    )
}

fn run_cli(dir: &Path, tag: &str, jobs: &str, args: &[&str]) -> Vec<Vec<u8>> {
    let out = dir.join(format!("{tag}.json"));
    let csv = dir.join(format!("{tag}.csv"));
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_contobs"));
    cmd.args(["--jobs", jobs]).args(args).arg("--out").arg(&out);
    if args[0] != "lemma-check" {
        cmd.arg("--csv").arg(&csv);
    }
    let status = cmd.env_remove("CONTOBS_SEED").output().unwrap().status;
    assert!(status.success(), "{args:?}");
    [out, csv]
        .iter()
        .filter(|p| p.exists())
        .map(|p| std::fs::read(p).unwrap())
        .collect()
}

fn criterion_8() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let commands: [&[&str]; 4] = [
        &[
            "oblivious-accuracy",
            "--d",
            "20000",
            "--T",
            "12",
            "--trials",
            "4",
            "--seed",
            "8",
        ],
        &[
            "adaptive-attack",
            "--d",
            "5000",
            "--T",
            "30",
            "--trials",
            "6",
            "--seed",
            "8",
        ],
        &[
            "audit",
            "--mechanism",
            "oblivious-rr",
            "--d",
            "3000",
            "--T",
            "10",
            "--trials",
            "8",
            "--seed",
            "8",
        ],
        &["lemma-check", "--instances", "50", "--seed", "8"],
    ];
    let mut identical = 0;
    for (i, args) in commands.iter().enumerate() {
        let a = run_cli(dir.path(), &format!("{i}a"), "1", args);
        let b = run_cli(dir.path(), &format!("{i}b"), "1", args);
        let c = run_cli(dir.path(), &format!("{i}c"), "3", args);
        if a == b && a == c {
            identical += 1;
        }
    }
    (
        identical == commands.len(),
        format!(
            "{identical}/{} subcommands byte-identical across repeat runs and job counts",
            commands.len()
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let quick_only = std::env::var("CONTOBS_ACCEPTANCE_QUICK").is_ok_and(|v| v == "1");
    type Check = Box<dyn Fn() -> (bool, String)>;
    let criteria: Vec<(u32, &'static str, Check)> = vec![
        (
            1,
            "randomized response privacy and keep rate",
            Box::new(criterion_1),
        ),
        (
            2,
            "oblivious accuracy at d=1e7, T=200",
            Box::new(criterion_2),
        ),
        (
            3,
            "oblivious mechanism fails under adaptivity",
            Box::new(criterion_3),
        ),
        (
            4,
            "end-to-end reconstruction attack",
            Box::new(move || criterion_4(quick_only)),
        ),
        (5, "majority reconstruction bound", Box::new(criterion_5)),
        (6, "TV bound values", Box::new(criterion_6)),
        (7, "fixed-output calibration", Box::new(criterion_7)),
        (8, "deterministic reports", Box::new(criterion_8)),
    ];

    let mut outcomes = Vec::new();
    for (id, name, check) in criteria {
        let start = Instant::now();
        let (pass, detail) = check();
        let o = Outcome {
            id,
            name,
            pass,
            detail,
            elapsed: start.elapsed(),
        };
        report(format!(
            "criterion {}: {} [{:.1}s] {}: {}",
            o.id,
            if o.pass { "PASS" } else { "FAIL" },
            o.elapsed.as_secs_f64(),
            o.name,
            o.detail
        ));
        outcomes.push(o);
    }

    for (id, reason) in KNOWN_RED {
        report(format!("criterion {id}: known red: {reason}"));
    }
    for o in &outcomes {
        match KNOWN_RED.iter().find(|(id, _)| *id == o.id) {
            Some(_) => assert!(!o.pass, "criterion {} is listed as red but passed", o.id),
            None => assert!(o.pass, "criterion {} failed: {}", o.id, o.detail),
        }
    }
    // Criterion 1 must fail only through the two grid points above 0.8586.
    assert_eq!(three_alpha_failures(), vec![90, 95]);
    assert!(
        outcomes[0].detail.ends_with(": true"),
        "{}",
        outcomes[0].detail
    );
}
