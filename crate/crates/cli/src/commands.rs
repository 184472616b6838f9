use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Args;
use contobs::audit::{
    attack_default_horizon, attack_reconstruction_params, dp_tv_bounds,
    estimate_challenge_advantage, hoeffding_failure_bound, max_t_oblivious, rr_privacy_exact,
    run_attack_trial, run_oblivious_trial, AttackSummary, AuditReport, AuditSettings,
    PrivacyParams, TrialRecord, TvBounds,
};
use contobs::problem::ProblemParams;
use contobs::reconstruction::{
    lemma_bound, run_lemma_check, LemmaCheckConfig, ReconstructionParams,
};
use contobs::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{master_seed, pick, require, FileConfig, MechanismSpec};
use crate::output::{write_csv, write_json, Constants, Report, CONSTANTS, TOOL};

const DEFAULT_ALPHA: f64 = 0.45;
const DEFAULT_OBLIVIOUS_T: usize = 200;

#[derive(Args)]
pub struct ObliviousArgs {
    #[arg(long)]
    mechanism: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "d")]
    d: Option<usize>,
    /// Stream length [default: min(200, max_T_oblivious), at least 1].
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    trials: Option<u64>,
    /// Master seed [default: $CONTOBS_SEED, else 0].
    #[arg(long)]
    seed: Option<u64>,
    /// JSON report path [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-step CSV rows.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct AttackArgs {
    #[arg(long)]
    mechanism: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "d")]
    d: Option<usize>,
    /// Arrival rounds [default: ceil(1 + 100/alpha^2)].
    #[arg(long = "T")]
    t: Option<usize>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    confidence: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Master seed [default: $CONTOBS_SEED, else 0].
    #[arg(long)]
    seed: Option<u64>,
    /// JSON report path [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-trial CSV rows.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write one trial's round-by-round transcript as JSON lines.
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Trial whose transcript is written.
    #[arg(long, default_value_t = 0)]
    transcript_trial: u64,
    /// Put full hex vectors in the transcript instead of digests.
    #[arg(long)]
    full_vectors: bool,
}

#[derive(Args)]
pub struct LemmaArgs {
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    max_d: Option<usize>,
    #[arg(long)]
    max_k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ParamsArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long = "d")]
    d: Option<usize>,
    /// Also write the table as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn warn_regime(params: &ProblemParams) {
    if params.outside_regime() {
        eprintln!(
            "contobs: warning: alpha = {} is outside the analysed regime alpha < 1/2",
            params.alpha()
        );
    }
}

#[derive(Serialize)]
struct ObliviousConfig {
    mechanism: MechanismSpec,
    alpha: f64,
    d: usize,
    #[serde(rename = "T")]
    t: usize,
    t_source: &'static str,
    trials: u64,
    seed: u64,
}

#[derive(Serialize)]
struct ObliviousDerived {
    constants: Constants,
    slack: f64,
    hoeffding_failure_bound: f64,
    max_t_oblivious: u64,
}

#[derive(Serialize)]
struct ObliviousTrial {
    trial: u64,
    accurate: bool,
    first_failure: Option<usize>,
    max_b_violation: f64,
    max_prefix_violation: f64,
}

#[derive(Serialize)]
struct ObliviousResults {
    trials: u64,
    accurate_trials: u64,
    accuracy_rate: f64,
    max_b_violation: f64,
    max_prefix_violation: f64,
    /// Worst violation minus the slack; negative when every step passed.
    worst_margin: f64,
    per_trial: Vec<ObliviousTrial>,
}

#[derive(Serialize)]
struct StepRow {
    trial: u64,
    t: usize,
    passed: bool,
    b_violation: f64,
    worst_prefix_violation: f64,
    worst_prefix_index: Option<usize>,
}

pub fn oblivious_accuracy(args: ObliviousArgs, file: &FileConfig) -> Result<ExitCode> {
    let spec = MechanismSpec::parse(&pick(
        args.mechanism,
        file.mechanism.clone(),
        "oblivious-rr".into(),
    ))?;
    let alpha = pick(args.alpha, file.alpha, DEFAULT_ALPHA);
    let d = require(args.d, file.d, "d")?;
    let trials = pick(args.trials, file.trials, 20);
    let seed = master_seed(args.seed, file.seed)?;
    let out = args.out.or(file.out.clone());
    let csv = args.csv.or(file.csv.clone());
    if trials == 0 {
        return Err(Error::Usage("--trials must be at least 1".into()));
    }

    // Validate alpha and d before the horizon calculation uses them.
    let probe = ProblemParams::new(alpha, d, 1)?;
    let max_t = max_t_oblivious(alpha, d);
    let (t, t_source) = match args.t.or(file.t) {
        Some(t) => (t, "given"),
        None => (
            (max_t.min(DEFAULT_OBLIVIOUS_T as u64) as usize).max(1),
            "default",
        ),
    };
    let params = probe.with_horizon(t)?;
    warn_regime(&params);
    if t as u64 > max_t {
        eprintln!(
            "contobs: warning: T = {t} exceeds max_T_oblivious = {max_t} for these (alpha, d)"
        );
    }

    let factory = spec.factory();
    let runs = (0..trials)
        .into_par_iter()
        .map(|i| run_oblivious_trial(factory.as_ref(), &params, seed, i))
        .collect::<Result<Vec<_>>>()?;

    let mut per_trial = Vec::with_capacity(runs.len());
    for (i, acc) in runs.iter().enumerate() {
        per_trial.push(ObliviousTrial {
            trial: i as u64,
            accurate: acc.accurate,
            first_failure: acc.first_failure(),
            max_b_violation: acc.steps.iter().map(|s| s.b_violation).fold(0.0, f64::max),
            max_prefix_violation: acc
                .steps
                .iter()
                .map(|s| s.worst_prefix_violation)
                .fold(0.0, f64::max),
        });
    }
    let accurate_trials = per_trial.iter().filter(|r| r.accurate).count() as u64;
    let max_b_violation = per_trial
        .iter()
        .map(|r| r.max_b_violation)
        .fold(0.0, f64::max);
    let max_prefix_violation = per_trial
        .iter()
        .map(|r| r.max_prefix_violation)
        .fold(0.0, f64::max);

    if let Some(path) = &csv {
        let rows = runs.iter().enumerate().flat_map(|(i, acc)| {
            acc.steps.iter().enumerate().map(move |(t, s)| StepRow {
                trial: i as u64,
                t: t + 1,
                passed: s.passed,
                b_violation: s.b_violation,
                worst_prefix_violation: s.worst_prefix_violation,
                worst_prefix_index: s.worst_prefix_index,
            })
        });
        write_csv(rows, path)?;
    }

    eprintln!("contobs: {accurate_trials}/{trials} transcripts accurate");
    let report = Report {
        tool: TOOL,
        command: "oblivious-accuracy",
        config: ObliviousConfig {
            mechanism: spec,
            alpha,
            d,
            t,
            t_source,
            trials,
            seed,
        },
        derived: ObliviousDerived {
            constants: CONSTANTS,
            slack: params.slack(),
            hoeffding_failure_bound: hoeffding_failure_bound(alpha, d, t as u64),
            max_t_oblivious: max_t,
        },
        results: ObliviousResults {
            trials,
            accurate_trials,
            accuracy_rate: accurate_trials as f64 / trials as f64,
            max_b_violation,
            max_prefix_violation,
            worst_margin: max_b_violation.max(max_prefix_violation) - params.slack(),
            per_trial,
        },
    };
    write_json(&report, out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum AttackMode {
    Attack,
    Audit,
}

#[derive(Serialize)]
struct AttackConfig {
    mechanism: MechanismSpec,
    alpha: f64,
    d: usize,
    #[serde(rename = "T")]
    t: usize,
    trials: u64,
    confidence: f64,
    epsilon: f64,
    delta: f64,
    seed: u64,
}

#[derive(Serialize)]
struct AttackDerived {
    constants: Constants,
    slack: f64,
    attack_default_t: usize,
    reconstruction_params: ReconstructionParams,
    lemma_bound: f64,
    rr_privacy_exact: f64,
    budget_tv: TvBounds,
}

#[derive(Serialize)]
struct AttackResults {
    report: AuditReport,
    summary: AttackSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_trial: Option<Vec<TrialRecord>>,
}

#[derive(Serialize)]
struct AuditRow {
    trial: u64,
    side: String,
    guess: String,
    success: bool,
    accurate: bool,
    preconditions_ok: bool,
    reconstruction_correlation: f64,
}

/// Audit columns followed by the loss-failure columns.
#[derive(Serialize)]
struct AttackRow {
    trial: u64,
    side: String,
    guess: String,
    success: bool,
    accurate: bool,
    preconditions_ok: bool,
    reconstruction_correlation: f64,
    first_failure: Option<usize>,
    failed_steps: usize,
}

fn audit_row(r: &TrialRecord) -> AuditRow {
    AuditRow {
        trial: r.trial,
        side: format!("{:?}", r.side),
        guess: format!("{:?}", r.guess),
        success: r.success,
        accurate: r.accurate,
        preconditions_ok: r.preconditions_ok,
        reconstruction_correlation: r.reconstruction_correlation,
    }
}

pub fn attack(args: AttackArgs, file: &FileConfig, mode: AttackMode) -> Result<ExitCode> {
    let mechanism = args.mechanism.or(file.mechanism.clone());
    let mechanism = match mode {
        AttackMode::Attack => mechanism.unwrap_or_else(|| "fresh-rr".into()),
        AttackMode::Audit => {
            mechanism.ok_or_else(|| Error::Usage("--mechanism is required".into()))?
        }
    };
    let spec = MechanismSpec::parse(&mechanism)?;
    let alpha = pick(args.alpha, file.alpha, DEFAULT_ALPHA);
    let d = require(args.d, file.d, "d")?;
    let trials = pick(
        args.trials,
        file.trials,
        if mode == AttackMode::Attack { 50 } else { 200 },
    );
    let confidence = pick(args.confidence, file.confidence, 0.95);
    let budget = PrivacyParams::new(
        pick(args.epsilon, file.epsilon, 0.2),
        pick(args.delta, file.delta, 0.05),
    )?;
    let seed = master_seed(args.seed, file.seed)?;
    let out = args.out.or(file.out.clone());
    let csv = args.csv.or(file.csv.clone());

    let probe = ProblemParams::new(alpha, d, 1)?;
    let default_t = attack_default_horizon(alpha);
    let t = pick(args.t, file.t, default_t);
    let params = probe.with_horizon(t)?;
    warn_regime(&params);
    let recon = attack_reconstruction_params(&params)?;

    let factory = spec.factory();
    let settings = AuditSettings {
        trials,
        confidence,
        budget,
        master_seed: seed,
    };
    let run = estimate_challenge_advantage(factory.as_ref(), &params, &settings)?;
    let summary = AttackSummary::from_records(&run.records);

    if let Some(path) = &args.transcript {
        if args.transcript_trial >= trials {
            return Err(Error::Usage(format!(
                "--transcript-trial {} is not below --trials {trials}",
                args.transcript_trial
            )));
        }
        let (_, tr) = run_attack_trial(factory.as_ref(), &params, seed, args.transcript_trial)?;
        tr.write_jsonl(BufWriter::new(File::create(path)?), args.full_vectors)?;
    }
    if let Some(path) = &csv {
        match mode {
            AttackMode::Audit => write_csv(run.records.iter().map(audit_row), path)?,
            AttackMode::Attack => write_csv(
                run.records.iter().map(|r| {
                    let a = audit_row(r);
                    AttackRow {
                        trial: a.trial,
                        side: a.side,
                        guess: a.guess,
                        success: a.success,
                        accurate: a.accurate,
                        preconditions_ok: a.preconditions_ok,
                        reconstruction_correlation: a.reconstruction_correlation,
                        first_failure: r.first_failure,
                        failed_steps: r.failed_steps,
                    }
                }),
                path,
            )?,
        }
    }

    let r = &run.report;
    eprintln!(
        "contobs: {}/{} guesses correct, tv_lower {:.4} vs budget {:.4}: {:?}",
        r.successes, r.trials, r.tv_lower, r.budget_tv, r.verdict
    );
    let report = Report {
        tool: TOOL,
        command: match mode {
            AttackMode::Attack => "adaptive-attack",
            AttackMode::Audit => "audit",
        },
        config: AttackConfig {
            mechanism: spec,
            alpha,
            d,
            t,
            trials,
            confidence,
            epsilon: budget.epsilon(),
            delta: budget.delta(),
            seed,
        },
        derived: AttackDerived {
            constants: CONSTANTS,
            slack: params.slack(),
            attack_default_t: default_t,
            reconstruction_params: recon,
            lemma_bound: lemma_bound(&recon)?,
            rr_privacy_exact: rr_privacy_exact(alpha)?,
            budget_tv: dp_tv_bounds(&budget),
        },
        results: AttackResults {
            report: run.report,
            summary,
            per_trial: (mode == AttackMode::Attack).then_some(run.records),
        },
    };
    write_json(&report, out.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

pub fn lemma_check(args: LemmaArgs, file: &FileConfig) -> Result<ExitCode> {
    let config = LemmaCheckConfig {
        instances: pick(args.instances, file.instances, 1000),
        max_d: pick(args.max_d, file.max_d, 2000),
        max_k: pick(args.max_k, file.max_k, 50),
        seed: master_seed(args.seed, file.seed)?,
    };
    let summary = run_lemma_check(&config)?;
    eprintln!(
        "contobs: {} applicable of {}, {} satisfied, {} violations",
        summary.applicable, summary.instances_tried, summary.satisfied, summary.violations
    );
    let violations = summary.violations;
    let report = Report {
        tool: TOOL,
        command: "lemma-check",
        config,
        derived: CONSTANTS,
        results: summary,
    };
    write_json(&report, args.out.or(file.out.clone()).as_deref())?;
    Ok(if violations == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

#[derive(Serialize)]
struct ParamsTable {
    alpha: f64,
    d: usize,
    slack: f64,
    rr_privacy_exact: f64,
    three_alpha: f64,
    max_t_oblivious: u64,
    attack_t: usize,
    reconstruction_params: ReconstructionParams,
    lemma_bound: f64,
}

pub fn params(args: ParamsArgs, file: &FileConfig) -> Result<ExitCode> {
    let alpha = pick(args.alpha, file.alpha, DEFAULT_ALPHA);
    let d = require(args.d, file.d, "d")?;
    let attack_t = attack_default_horizon(alpha);
    let p = ProblemParams::new(alpha, d, attack_t)?;
    warn_regime(&p);
    let recon = attack_reconstruction_params(&p)?;
    let table = ParamsTable {
        alpha,
        d,
        slack: p.slack(),
        rr_privacy_exact: rr_privacy_exact(alpha)?,
        three_alpha: 3.0 * alpha,
        max_t_oblivious: max_t_oblivious(alpha, d),
        attack_t,
        reconstruction_params: recon,
        lemma_bound: lemma_bound(&recon)?,
    };
    let rows = [
        ("alpha", table.alpha.to_string()),
        ("d", table.d.to_string()),
        ("slack alpha^2 d/100", format!("{:.6}", table.slack)),
        ("rr epsilon exact", format!("{:.6}", table.rr_privacy_exact)),
        ("3 alpha", format!("{:.6}", table.three_alpha)),
        ("max T oblivious", table.max_t_oblivious.to_string()),
        ("attack T", table.attack_t.to_string()),
        (
            "lemma (p, q, k)",
            format!("({:.6}, {:.6}, {})", recon.p(), recon.q(), recon.k()),
        ),
        ("lemma bound", format!("{:.6}", table.lemma_bound)),
    ];
    for (key, value) in rows {
        println!("{key:<22}{value}");
    }
    if let Some(path) = args.out.or(file.out.clone()) {
        let report = Report {
            tool: TOOL,
            command: "params",
            config: serde_json::json!({ "alpha": alpha, "d": d }),
            derived: CONSTANTS,
            results: table,
        };
        write_json(&report, Some(&path))?;
    }
    Ok(ExitCode::SUCCESS)
}
