//! Majority reconstruction as executable mathematics.
//!
//! If every `y^(j)` has correlation at least `p·d` with a hidden `x` and
//! the `y`'s are pairwise nearly orthogonal (|⟨y^(j), y^(j')⟩| ≤ q·d), the
//! coordinate-wise majority `x̃` satisfies
//!
//! ```text
//! ⟨x̃, x⟩ ≥ (1 − 2/(p²k) − 2(q − p²)/p²) · d
//! ```
//!
//! This module evaluates the bound, checks the preconditions on concrete
//! instances and runs a randomized verification harness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::mechanisms::randomized_response;
use crate::seed::{derive_seed, rng_from_seed};
use crate::signvec::{inner, random_sign_vector, sign_majority, InnerCache, SignVector};
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionParams {
    p: f64,
    q: f64,
    k: usize,
}

impl ReconstructionParams {
    pub fn new(p: f64, q: f64, k: usize) -> Result<ReconstructionParams> {
        if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
            return Err(Error::Domain(format!(
                "p and q must lie in [0, 1], got p={p}, q={q}"
            )));
        }
        if k == 0 {
            return Err(usage("k must be at least 1"));
        }
        Ok(ReconstructionParams { p, q, k })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// The factor `1 − 2/(p²k) − 2(q−p²)/p²`. Negative values mean the bound
/// is vacuous.
pub fn lemma_bound(params: &ReconstructionParams) -> Result<f64> {
    if params.p == 0.0 {
        return Err(Error::Domain("the bound is undefined at p = 0".into()));
    }
    let p2 = params.p * params.p;
    Ok(1.0 - 2.0 / (p2 * params.k as f64) - 2.0 * (params.q - p2) / p2)
}

/// First precondition that failed. Indices are 0-based positions in `ys`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "constraint", rename_all = "snake_case")]
pub enum Violation {
    /// ⟨y^(j), x⟩ < p·d.
    Correlation { j: usize, inner: i64 },
    /// |⟨y^(j), y^(j')⟩| > q·d.
    Orthogonality { j: usize, j2: usize, inner: i64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreconditionCheck {
    pub holds: bool,
    pub witness: Option<Violation>,
}

fn check_shapes(x: &SignVector, ys: &[SignVector], params: &ReconstructionParams) -> Result<()> {
    if ys.len() != params.k {
        return Err(usage(format!(
            "expected k = {} vectors, got {}",
            params.k,
            ys.len()
        )));
    }
    if let Some(y) = ys.iter().find(|y| y.dim() != x.dim()) {
        return Err(usage(format!(
            "dimension mismatch: {} vs {}",
            y.dim(),
            x.dim()
        )));
    }
    Ok(())
}

/// Both constraints are compared after dividing the integer inner product
/// by `d`, the same arithmetic [`infer_params`] uses.
pub fn check_preconditions(
    x: &SignVector,
    ys: &[SignVector],
    params: &ReconstructionParams,
) -> Result<PreconditionCheck> {
    check_preconditions_cached(x, ys, params, &mut InnerCache::new())
}

pub fn check_preconditions_cached(
    x: &SignVector,
    ys: &[SignVector],
    params: &ReconstructionParams,
    cache: &mut InnerCache,
) -> Result<PreconditionCheck> {
    check_shapes(x, ys, params)?;
    let d = x.dim() as f64;
    let fail = |v| PreconditionCheck {
        holds: false,
        witness: Some(v),
    };
    for (j, y) in ys.iter().enumerate() {
        let ip = cache.inner(y, x)?;
        if (ip as f64 / d) < params.p {
            return Ok(fail(Violation::Correlation { j, inner: ip }));
        }
    }
    for j in 0..ys.len() {
        for j2 in j + 1..ys.len() {
            let ip = cache.inner(&ys[j], &ys[j2])?;
            if ip.abs() as f64 / d > params.q {
                return Ok(fail(Violation::Orthogonality { j, j2, inner: ip }));
            }
        }
    }
    Ok(PreconditionCheck {
        holds: true,
        witness: None,
    })
}

/// Tightest `(p, q)` an instance satisfies: `p = min_j ⟨y^(j), x⟩/d` and
/// `q = max_{j<j'} |⟨y^(j), y^(j')⟩|/d`. `None` when `p ≤ 0`, where the
/// bound says nothing.
pub fn infer_params(x: &SignVector, ys: &[SignVector]) -> Result<Option<ReconstructionParams>> {
    if ys.is_empty() {
        return Err(usage("need at least one vector"));
    }
    let d = x.dim() as f64;
    let mut min_corr = i64::MAX;
    for y in ys {
        min_corr = min_corr.min(inner(y, x)?);
    }
    let mut max_cross = 0i64;
    for j in 0..ys.len() {
        for j2 in j + 1..ys.len() {
            max_cross = max_cross.max(inner(&ys[j], &ys[j2])?.abs());
        }
    }
    if min_corr <= 0 {
        return Ok(None);
    }
    ReconstructionParams::new(min_corr as f64 / d, max_cross as f64 / d, ys.len()).map(Some)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LemmaVerdict {
    NotApplicable {
        witness: Option<Violation>,
    },
    Checked {
        /// ⟨x̃, x⟩.
        lhs: i64,
        /// bound factor × d.
        rhs: f64,
        holds: bool,
    },
}

impl LemmaVerdict {
    pub fn violated(&self) -> bool {
        matches!(self, LemmaVerdict::Checked { holds: false, .. })
    }
}

pub fn verify_lemma(
    x: &SignVector,
    ys: &[SignVector],
    params: &ReconstructionParams,
) -> Result<LemmaVerdict> {
    let pre = check_preconditions(x, ys, params)?;
    if !pre.holds {
        return Ok(LemmaVerdict::NotApplicable {
            witness: pre.witness,
        });
    }
    if params.p == 0.0 {
        return Ok(LemmaVerdict::NotApplicable { witness: None });
    }
    let lhs = inner(&sign_majority(ys)?, x)?;
    let rhs = lemma_bound(params)? * x.dim() as f64;
    Ok(LemmaVerdict::Checked {
        lhs,
        rhs,
        holds: lhs as f64 >= rhs,
    })
}

/// Planted instance: uniform `x` and `k` independent randomized-response
/// copies of it with bias `alpha`.
pub fn planted_instance<R: Rng + ?Sized>(
    dim: usize,
    k: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<(SignVector, Vec<SignVector>)> {
    let x = random_sign_vector(dim, rng)?;
    let ys = (0..k)
        .map(|_| randomized_response(&x, alpha, rng))
        .collect::<Result<Vec<_>>>()?;
    Ok((x, ys))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaCheckConfig {
    pub instances: usize,
    pub max_d: usize,
    pub max_k: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginBin {
    /// Inclusive lower edge of `lhs/d − bound`; `None` is unbounded.
    pub from: Option<f64>,
    /// Exclusive upper edge; `None` is unbounded.
    pub to: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheckSummary {
    pub config: LemmaCheckConfig,
    pub instances_tried: usize,
    pub applicable: usize,
    pub satisfied: usize,
    pub violations: usize,
    /// Smallest `lhs/d − bound` over applicable instances.
    pub min_margin: Option<f64>,
    pub margin_histogram: Vec<MarginBin>,
}

const MARGIN_EDGES: [f64; 8] = [f64::NEG_INFINITY, 0.0, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0];

/// Outcome of one generated instance: `None` when the inferred `(p, q)`
/// make the bound inapplicable, else the normalized margin.
fn check_one(config: &LemmaCheckConfig, index: usize) -> Result<Option<f64>> {
    let mut rng = rng_from_seed(derive_seed(config.seed, "lemma-instance", index as u64));
    let d = rng.random_range(1..=config.max_d);
    let k = rng.random_range(1..=config.max_k);
    let alpha = rng.random_range(0.3..0.95);
    let (x, ys) = planted_instance(d, k, alpha, &mut rng)?;
    let Some(params) = infer_params(&x, &ys)? else {
        return Ok(None);
    };
    match verify_lemma(&x, &ys, &params)? {
        LemmaVerdict::Checked { lhs, rhs, .. } => Ok(Some((lhs as f64 - rhs) / d as f64)),
        LemmaVerdict::NotApplicable { .. } => Err(Error::Domain(format!(
            "instance {index}: inferred parameters failed their own preconditions"
        ))),
    }
}

/// Generates planted instances, infers `(p, q)` from each and checks the
/// bound. Instances are independent and derive their randomness from
/// `(seed, index)`, so the summary does not depend on scheduling.
pub fn run_lemma_check(config: &LemmaCheckConfig) -> Result<LemmaCheckSummary> {
    if config.instances == 0 || config.max_d == 0 || config.max_k == 0 {
        return Err(usage("instances, max_d and max_k must all be positive"));
    }
    let margins = (0..config.instances)
        .into_par_iter()
        .map(|i| check_one(config, i))
        .collect::<Result<Vec<_>>>()?;
    let applied: Vec<f64> = margins.into_iter().flatten().collect();
    let mut histogram: Vec<MarginBin> = MARGIN_EDGES
        .iter()
        .enumerate()
        .map(|(i, &from)| MarginBin {
            from: from.is_finite().then_some(from),
            to: MARGIN_EDGES.get(i + 1).copied(),
            count: 0,
        })
        .collect();
    for &m in &applied {
        let bin = MARGIN_EDGES.iter().rposition(|&e| m >= e).unwrap_or(0);
        histogram[bin].count += 1;
    }
    let violations = applied.iter().filter(|&&m| m < 0.0).count();
    Ok(LemmaCheckSummary {
        config: *config,
        instances_tried: config.instances,
        applicable: applied.len(),
        satisfied: applied.len() - violations,
        violations,
        min_margin: applied.iter().copied().reduce(f64::min),
        margin_histogram: histogram,
    })
}
