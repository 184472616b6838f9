//! Statistical privacy auditing.
//!
//! The audit plays the reconstruction attack many times, with the hidden
//! side drawn uniformly per trial, and counts correct side guesses. A
//! guessing rate `p` lower-bounds the total variation distance between the
//! two view distributions by `2p − 1`; an `(ε, δ)` guarantee caps that
//! distance, so a confident lower bound above the cap refutes the budget.
//!
//! Also here: closed-form calculators for the randomized-response privacy
//! loss and the Hoeffding failure bound of the oblivious mechanism.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::function::beta::beta_reg;

use crate::adversary::ReconstructionAdversary;
use crate::error::{usage, Error, Result};
use crate::game::{run_game, run_oblivious, GameSeeds, GameTranscript, Side};
use crate::mechanisms::MechanismFactory;
use crate::problem::{transcript_accurate_cached, ProblemParams, TranscriptAccuracy};
use crate::reconstruction::{check_preconditions_cached, ReconstructionParams};
use crate::seed::{derive_seed, rng_from_seed};
use crate::signvec::{inner, random_sign_vector, InnerCache};

/// `c` in the per-event tail `2·exp(−c·α⁴·d)`: Hoeffding with deviation
/// `C·√d`, `C = α²√d/100`, gives `2·exp(−C²/2) = 2·exp(−α⁴d/20000)`.
pub const HOEFFDING_CONSTANT: f64 = 1.0 / 20000.0;

/// Reconstruction quality the attack is expected to reach.
pub const RECONSTRUCTION_TARGET: f64 = 0.89;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    epsilon: f64,
    delta: f64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64) -> Result<PrivacyParams> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::Domain(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::Domain(format!(
                "delta must lie in [0, 1], got {delta}"
            )));
        }
        Ok(PrivacyParams { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// The individual TV caps implied by `(ε, δ)`-indistinguishability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TvBounds {
    /// `(e^ε − 1) + δ`.
    pub exponential: f64,
    /// `2ε + δ`, only valid when `ε ≤ 1`.
    pub linear: Option<f64>,
    /// Smallest applicable cap, clipped to 1.
    pub bound: f64,
}

pub fn dp_tv_bounds(params: &PrivacyParams) -> TvBounds {
    let exponential = params.epsilon.exp_m1() + params.delta;
    let linear = (params.epsilon <= 1.0).then_some(2.0 * params.epsilon + params.delta);
    let bound = linear.map_or(exponential, |l| l.min(exponential)).min(1.0);
    TvBounds {
        exponential,
        linear,
        bound,
    }
}

/// Largest total variation distance an `(ε, δ)` pair permits.
pub fn dp_tv_bound(params: &PrivacyParams) -> f64 {
    dp_tv_bounds(params).bound
}

/// Exact privacy loss `ln((1+α)/(1−α))` of randomized response.
pub fn rr_privacy_exact(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(alpha.ln_1p() - (-alpha).ln_1p())
}

/// `α⁴·d/20000`.
pub fn hoeffding_exponent(alpha: f64, dim: usize) -> f64 {
    alpha.powi(4) * dim as f64 * HOEFFDING_CONSTANT
}

/// Union bound `2(T+1)·exp(−α⁴d/20000)` on the oblivious mechanism ever
/// violating the loss within `T` steps.
pub fn hoeffding_failure_bound(alpha: f64, dim: usize, horizon: u64) -> f64 {
    2.0 * (horizon as f64 + 1.0) * (-hoeffding_exponent(alpha, dim)).exp()
}

/// Largest `T` with `hoeffding_failure_bound(α, d, T) ≤ 1/T`, or 0 if even
/// `T = 1` fails. Evaluated in log space; saturates at `u64::MAX`.
pub fn max_t_oblivious(alpha: f64, dim: usize) -> u64 {
    let exponent = hoeffding_exponent(alpha, dim);
    let fits = |t: u64| {
        let t = t as f64;
        std::f64::consts::LN_2 + t.ln() + (t + 1.0).ln() <= exponent
    };
    if !fits(1) {
        return 0;
    }
    let mut lo = 1u64;
    let mut hi = 2u64;
    while fits(hi) {
        lo = hi;
        match hi.checked_mul(2) {
            Some(next) => hi = next,
            None => return u64::MAX,
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Default attack horizon `⌈1 + 100/α²⌉`.
pub fn attack_default_horizon(alpha: f64) -> usize {
    (1.0 + 100.0 / (alpha * alpha)).ceil() as usize
}

fn check_confidence(confidence: f64) -> Result<()> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Domain(format!(
            "confidence must lie in (0, 1), got {confidence}"
        )));
    }
    Ok(())
}

/// Inverse of the regularized incomplete beta function in `x`, by bisection.
fn beta_quantile(a: f64, b: f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact two-sided Clopper–Pearson interval for a binomial proportion.
pub fn clopper_pearson(successes: u64, trials: u64, confidence: f64) -> Result<(f64, f64)> {
    if trials == 0 || successes > trials {
        return Err(usage(format!("invalid counts {successes}/{trials}")));
    }
    check_confidence(confidence)?;
    let tail = (1.0 - confidence) / 2.0;
    let (x, n) = (successes as f64, trials as f64);
    let low = if successes == 0 {
        0.0
    } else {
        beta_quantile(x, n - x + 1.0, tail)
    };
    let high = if successes == trials {
        1.0
    } else {
        beta_quantile(x + 1.0, n - x, 1.0 - tail)
    };
    Ok((low, high))
}

/// Central acceptance region `[lo, hi]` for a `Binomial(n, p)` count:
/// each bound is the smallest `k` whose CDF reaches the tail level, so
/// `P[X < lo] ≤ (1−level)/2` and `P[X > hi] ≤ (1−level)/2`.
pub fn binomial_acceptance_interval(n: u64, p: f64, level: f64) -> Result<(u64, u64)> {
    check_confidence(level)?;
    let dist = Binomial::new(p, n).map_err(|e| Error::Domain(e.to_string()))?;
    let tail = (1.0 - level) / 2.0;
    let quantile = |q: f64| {
        let (mut lo, mut hi) = (0u64, n);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if dist.cdf(mid) >= q {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    };
    Ok((quantile(tail), quantile(1.0 - tail)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Violates,
    Consistent,
}

impl Verdict {
    pub fn decide(tv_lower: f64, budget_tv: f64) -> Verdict {
        if tv_lower > budget_tv {
            Verdict::Violates
        } else {
            Verdict::Consistent
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub mechanism: String,
    pub trials: u64,
    pub successes: u64,
    pub p_hat: f64,
    pub confidence: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `2·ci_low − 1` clipped to `[0, 1]`.
    pub tv_lower: f64,
    pub budget: PrivacyParams,
    pub budget_tv: f64,
    pub verdict: Verdict,
    /// Fraction of trials whose whole transcript met the loss.
    pub accuracy_rate: f64,
    /// Fraction of trials meeting the reconstruction preconditions at
    /// `p = 0.99α`, `q = 1.02α²`.
    pub precondition_rate: f64,
}

impl AuditReport {
    /// Recomputes the verdict from the serialized interval and budget.
    pub fn recompute_verdict(&self) -> Verdict {
        let tv_lower = (2.0 * self.ci_low - 1.0).clamp(0.0, 1.0);
        Verdict::decide(tv_lower, dp_tv_bound(&self.budget))
    }
}

/// One attack game, scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub side: Side,
    pub guess: Side,
    pub success: bool,
    pub accurate: bool,
    /// 1-based step of the first loss failure.
    pub first_failure: Option<usize>,
    pub failed_steps: usize,
    /// Whether step 2 violated the loss; `None` when `T < 2`.
    pub second_step_failed: Option<bool>,
    pub preconditions_ok: bool,
    /// `⟨x̃, b_side⟩ / d`.
    pub reconstruction_correlation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSettings {
    pub trials: u64,
    pub confidence: f64,
    pub budget: PrivacyParams,
    pub master_seed: u64,
}

pub struct AuditRun {
    pub report: AuditReport,
    pub records: Vec<TrialRecord>,
}

/// Lemma parameters the attack analysis guarantees for an accurate
/// mechanism: `p = 0.99α`, `q = 1.02α²`, `k = T`.
pub fn attack_reconstruction_params(params: &ProblemParams) -> Result<ReconstructionParams> {
    let alpha = params.alpha();
    ReconstructionParams::new(
        0.99 * alpha,
        (1.02 * alpha * alpha).min(1.0),
        params.horizon(),
    )
}

pub fn trial_side(master_seed: u64, trial: u64) -> Side {
    if rng_from_seed(derive_seed(master_seed, "side", trial)).random::<bool>() {
        Side::L
    } else {
        Side::R
    }
}

/// Plays and scores trial `trial`; also returns its transcript.
pub fn run_attack_trial(
    mechanisms: &dyn MechanismFactory,
    params: &ProblemParams,
    master_seed: u64,
    trial: u64,
) -> Result<(TrialRecord, GameTranscript)> {
    let side = trial_side(master_seed, trial);
    let seeds = GameSeeds::derive(master_seed, trial);
    let mut game = run_game(
        mechanisms,
        |s| ReconstructionAdversary::new(params, s),
        params,
        side,
        seeds,
    )?;
    let outcome = game.adversary.finish()?;
    let tr = game.transcript;
    drop(game.adversary);
    drop(game.view);

    let secret = &tr.setup_delivered;
    let mut cache = InnerCache::new();
    let mut all = Vec::with_capacity(2 * tr.outputs.len() + 1);
    all.push(secret.clone());
    all.extend(tr.arrivals_delivered.iter().cloned());
    all.extend(tr.outputs.iter().cloned());
    cache.fill_all_pairs(&all)?;
    drop(all);

    let accuracy = transcript_accurate_cached(
        params,
        secret,
        &tr.arrivals_delivered,
        &tr.outputs,
        &mut cache,
    )?;
    let pre = check_preconditions_cached(
        secret,
        &tr.outputs,
        &attack_reconstruction_params(params)?,
        &mut cache,
    )?;
    let correlation = inner(&outcome.reconstruction, secret)? as f64 / params.dim() as f64;

    let record = TrialRecord {
        trial,
        side,
        guess: outcome.guess,
        success: outcome.guess == side,
        accurate: accuracy.accurate,
        first_failure: accuracy.first_failure(),
        failed_steps: accuracy.steps.iter().filter(|s| !s.passed).count(),
        second_step_failed: accuracy.steps.get(1).map(|s| !s.passed),
        preconditions_ok: pre.holds,
        reconstruction_correlation: correlation,
    };
    Ok((record, tr))
}

/// Runs `trials` independent attack games and turns the guessing rate
/// into a TV lower bound and a verdict against `budget`.
///
/// Trials run on the current rayon pool; records come back in trial
/// order, so the report does not depend on scheduling.
pub fn estimate_challenge_advantage(
    mechanisms: &dyn MechanismFactory,
    params: &ProblemParams,
    settings: &AuditSettings,
) -> Result<AuditRun> {
    if settings.trials == 0 {
        return Err(usage("trials must be at least 1"));
    }
    check_confidence(settings.confidence)?;
    let records = (0..settings.trials)
        .into_par_iter()
        .map(|i| run_attack_trial(mechanisms, params, settings.master_seed, i).map(|(r, _)| r))
        .collect::<Result<Vec<_>>>()?;
    let report = summarize(mechanisms.name(), &records, settings)?;
    Ok(AuditRun { report, records })
}

pub fn summarize(
    mechanism: String,
    records: &[TrialRecord],
    settings: &AuditSettings,
) -> Result<AuditReport> {
    let trials = records.len() as u64;
    let successes = records.iter().filter(|r| r.success).count() as u64;
    let (ci_low, ci_high) = clopper_pearson(successes, trials, settings.confidence)?;
    let tv_lower = (2.0 * ci_low - 1.0).clamp(0.0, 1.0);
    let budget_tv = dp_tv_bound(&settings.budget);
    let rate = |pred: fn(&TrialRecord) -> bool| {
        records.iter().filter(|r| pred(r)).count() as f64 / trials as f64
    };
    Ok(AuditReport {
        mechanism,
        trials,
        successes,
        p_hat: successes as f64 / trials as f64,
        confidence: settings.confidence,
        ci_low,
        ci_high,
        tv_lower,
        budget: settings.budget,
        budget_tv,
        verdict: Verdict::decide(tv_lower, budget_tv),
        accuracy_rate: rate(|r| r.accurate),
        precondition_rate: rate(|r| r.preconditions_ok),
    })
}

/// One oblivious-accuracy trial: a random secret, `T` uniformly random
/// arrivals fixed in advance, and the loss checked at every step.
pub fn run_oblivious_trial(
    mechanisms: &dyn MechanismFactory,
    params: &ProblemParams,
    master_seed: u64,
    trial: u64,
) -> Result<TranscriptAccuracy> {
    let d = params.dim();
    let b = random_sign_vector(
        d,
        &mut rng_from_seed(derive_seed(master_seed, "secret", trial)),
    )?;
    let mut rng = rng_from_seed(derive_seed(master_seed, "arrivals", trial));
    let arrivals = (0..params.horizon())
        .map(|_| random_sign_vector(d, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mech_seed = derive_seed(master_seed, "mechanism", trial);
    let outputs = run_oblivious(mechanisms, &b, &arrivals, params, mech_seed)?;
    let mut cache = InnerCache::new();
    transcript_accurate_cached(params, &b, &arrivals, &outputs, &mut cache)
}

/// Attack-specific aggregates over trial records.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub trials: usize,
    pub precondition_trials: usize,
    /// Precondition-satisfying trials with correlation ≥ 0.89.
    pub reconstructed: usize,
    pub reconstructed_rate: Option<f64>,
    pub mean_correlation: f64,
    pub mean_correlation_preconditioned: Option<f64>,
    /// Count of trials by first failing step; key 0 means never failed.
    pub first_failure_histogram: BTreeMap<usize, usize>,
}

impl AttackSummary {
    pub fn from_records(records: &[TrialRecord]) -> AttackSummary {
        let pre: Vec<&TrialRecord> = records.iter().filter(|r| r.preconditions_ok).collect();
        let reconstructed = pre
            .iter()
            .filter(|r| r.reconstruction_correlation >= RECONSTRUCTION_TARGET)
            .count();
        let mean = |rs: &[&TrialRecord]| {
            (!rs.is_empty()).then(|| {
                rs.iter().map(|r| r.reconstruction_correlation).sum::<f64>() / rs.len() as f64
            })
        };
        let all: Vec<&TrialRecord> = records.iter().collect();
        let mut first_failure_histogram = BTreeMap::new();
        for r in records {
            *first_failure_histogram
                .entry(r.first_failure.unwrap_or(0))
                .or_insert(0) += 1;
        }
        AttackSummary {
            trials: records.len(),
            precondition_trials: pre.len(),
            reconstructed,
            reconstructed_rate: (!pre.is_empty()).then(|| reconstructed as f64 / pre.len() as f64),
            mean_correlation: mean(&all).unwrap_or(0.0),
            mean_correlation_preconditioned: mean(&pre),
            first_failure_histogram,
        }
    }
}
