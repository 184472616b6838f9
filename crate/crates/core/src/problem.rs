//! The separation problem: parameters, the per-step loss predicate and
//! whole-transcript accuracy.
//!
//! Inner products are exact integers. The α-scaling and the comparison
//! against the slack `α²d/100` happen in `f64` with a plain `<=`.

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::signvec::{InnerCache, SignVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    alpha: f64,
    dim: usize,
    horizon: usize,
    slack: f64,
}

impl ProblemParams {
    /// Requires `0 < alpha < 1`, `dim >= 1`, `horizon >= 1`.
    pub fn new(alpha: f64, dim: usize, horizon: usize) -> Result<ProblemParams> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        if dim == 0 {
            return Err(usage("dim must be at least 1"));
        }
        if horizon == 0 {
            return Err(usage("horizon must be at least 1"));
        }
        Ok(ProblemParams {
            alpha,
            dim,
            horizon,
            slack: alpha * alpha * dim as f64 / 100.0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// α²·d/100.
    pub fn slack(&self) -> f64 {
        self.slack
    }

    /// Set when α ≥ 1/2, where neither the accuracy nor the attack
    /// guarantees are claimed.
    pub fn outside_regime(&self) -> bool {
        self.alpha >= 0.5
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<ProblemParams> {
        ProblemParams::new(self.alpha, self.dim, horizon)
    }
}

/// Outcome of the loss predicate at one time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossVerdict {
    pub passed: bool,
    /// |⟨y − αb, b⟩|.
    pub b_violation: f64,
    /// max over the prefix of |⟨y − αb, v⟩|; 0 for an empty prefix.
    pub worst_prefix_violation: f64,
    /// 1-based position of the worst prefix vector, present iff the prefix
    /// is nonempty.
    pub worst_prefix_index: Option<usize>,
}

/// Builds a verdict from precomputed inner products: `y_b = ⟨y, b⟩` and,
/// for every prefix vector `v`, the pair `(⟨y, v⟩, ⟨b, v⟩)`.
pub fn verdict_from_inners(
    params: &ProblemParams,
    y_b: i64,
    prefix: impl IntoIterator<Item = (i64, i64)>,
) -> LossVerdict {
    let alpha = params.alpha;
    let b_violation = (y_b as f64 - alpha * params.dim as f64).abs();
    let mut worst_prefix_violation = 0.0;
    let mut worst_prefix_index = None;
    for (idx, (y_v, b_v)) in prefix.into_iter().enumerate() {
        let violation = (y_v as f64 - alpha * b_v as f64).abs();
        if worst_prefix_index.is_none() || violation > worst_prefix_violation {
            worst_prefix_violation = violation;
            worst_prefix_index = Some(idx + 1);
        }
    }
    LossVerdict {
        passed: b_violation <= params.slack && worst_prefix_violation <= params.slack,
        b_violation,
        worst_prefix_violation,
        worst_prefix_index,
    }
}

fn check_dim(params: &ProblemParams, v: &SignVector, what: &str) -> Result<()> {
    if v.dim() != params.dim {
        return Err(usage(format!(
            "{what} has dim {}, problem has dim {}",
            v.dim(),
            params.dim
        )));
    }
    Ok(())
}

/// Evaluates the loss at one step for output `y` against secret `b` and
/// the arrivals seen so far.
pub fn loss_satisfied(
    params: &ProblemParams,
    b: &SignVector,
    prefix: &[SignVector],
    y: &SignVector,
) -> Result<LossVerdict> {
    let mut cache = InnerCache::new();
    loss_satisfied_cached(params, b, prefix, y, &mut cache)
}

/// [`loss_satisfied`] reading inner products through a shared cache.
pub fn loss_satisfied_cached(
    params: &ProblemParams,
    b: &SignVector,
    prefix: &[SignVector],
    y: &SignVector,
    cache: &mut InnerCache,
) -> Result<LossVerdict> {
    check_dim(params, b, "b")?;
    check_dim(params, y, "output")?;
    if prefix.len() > params.horizon {
        return Err(usage(format!(
            "prefix of length {} exceeds horizon {}",
            prefix.len(),
            params.horizon
        )));
    }
    let y_b = cache.inner(y, b)?;
    let mut pairs = Vec::with_capacity(prefix.len());
    for v in prefix {
        check_dim(params, v, "arrival")?;
        pairs.push((cache.inner(y, v)?, cache.inner(b, v)?));
    }
    Ok(verdict_from_inners(params, y_b, pairs))
}

/// Per-step verdicts for a full run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptAccuracy {
    pub accurate: bool,
    pub steps: Vec<LossVerdict>,
}

impl TranscriptAccuracy {
    /// 1-based step of the first loss failure.
    pub fn first_failure(&self) -> Option<usize> {
        self.steps.iter().position(|s| !s.passed).map(|i| i + 1)
    }
}

/// Checks the loss at every step `t` with prefix `arrivals[..t]` and
/// output `outputs[t-1]`.
pub fn transcript_accurate(
    params: &ProblemParams,
    b: &SignVector,
    arrivals: &[SignVector],
    outputs: &[SignVector],
) -> Result<TranscriptAccuracy> {
    let mut cache = InnerCache::new();
    transcript_accurate_cached(params, b, arrivals, outputs, &mut cache)
}

pub fn transcript_accurate_cached(
    params: &ProblemParams,
    b: &SignVector,
    arrivals: &[SignVector],
    outputs: &[SignVector],
    cache: &mut InnerCache,
) -> Result<TranscriptAccuracy> {
    if arrivals.len() != params.horizon || outputs.len() != params.horizon {
        return Err(usage(format!(
            "expected {} arrivals and outputs, got {} and {}",
            params.horizon,
            arrivals.len(),
            outputs.len()
        )));
    }
    let steps = outputs
        .iter()
        .enumerate()
        .map(|(t, y)| loss_satisfied_cached(params, b, &arrivals[..=t], y, cache))
        .collect::<Result<Vec<_>>>()?;
    Ok(TranscriptAccuracy {
        accurate: steps.iter().all(|s| s.passed),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signvec::random_sign_vector;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    const NEAR_ONE: f64 = 1.0 - 1e-9;

    fn sv(s: &str) -> SignVector {
        s.parse().unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(matches!(
            ProblemParams::new(0.0, 4, 1),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            ProblemParams::new(1.0, 4, 1),
            Err(Error::Domain(_))
        ));
        assert!(ProblemParams::new(f64::NAN, 4, 1).is_err());
        assert!(ProblemParams::new(0.3, 0, 1).is_err());
        assert!(ProblemParams::new(0.3, 4, 0).is_err());
        let p = ProblemParams::new(0.45, 10_000_000, 200).unwrap();
        assert_eq!(p.slack(), 0.45 * 0.45 * 1e7 / 100.0);
        assert!(!p.outside_regime());
        assert!(ProblemParams::new(0.5, 10, 1).unwrap().outside_regime());
    }

    #[test]
    fn slack_doubles_with_dim() {
        for &alpha in &[0.01, 0.1, 0.45, 0.7] {
            for &d in &[1usize, 3, 100, 12345] {
                let a = ProblemParams::new(alpha, d, 1).unwrap();
                let b = ProblemParams::new(alpha, 2 * d, 1).unwrap();
                assert_eq!(b.slack(), 2.0 * a.slack());
            }
        }
    }

    #[test]
    fn exact_output_passes() {
        let p = ProblemParams::new(NEAR_ONE, 4, 1).unwrap();
        let b = sv("++++");
        let v = loss_satisfied(&p, &b, std::slice::from_ref(&b), &b).unwrap();
        assert!(v.passed);
        assert!(v.b_violation <= p.slack());
        assert_eq!(v.worst_prefix_index, Some(1));
    }

    #[test]
    fn flipped_coordinate_fails() {
        let p = ProblemParams::new(NEAR_ONE, 4, 1).unwrap();
        let v = loss_satisfied(&p, &sv("++++"), &[], &sv("+++-")).unwrap();
        assert!(!v.passed);
        assert!((v.b_violation - 2.0).abs() < 1e-6);
        assert_eq!(v.worst_prefix_index, None);
        assert_eq!(v.worst_prefix_violation, 0.0);
    }

    #[test]
    fn errors() {
        let p = ProblemParams::new(0.4, 4, 1).unwrap();
        let b = sv("++++");
        assert!(loss_satisfied(&p, &sv("+++"), &[], &b).is_err());
        assert!(loss_satisfied(&p, &b, &[sv("++")], &b).is_err());
        assert!(loss_satisfied(&p, &b, &[b.clone(), b.clone()], &b).is_err());
        assert!(transcript_accurate(&p, &b, &[], std::slice::from_ref(&b)).is_err());
    }

    #[test]
    fn transcript_examples() {
        let p = ProblemParams::new(NEAR_ONE, 4, 2).unwrap();
        let b = sv("++++");
        let ok =
            transcript_accurate(&p, &b, &[b.clone(), b.clone()], &[b.clone(), b.clone()]).unwrap();
        assert!(ok.accurate);
        assert_eq!(ok.first_failure(), None);

        let bad = transcript_accurate(&p, &b, &[sv("++--"), b.clone()], &[sv("+++-"), b.clone()])
            .unwrap();
        assert!(!bad.accurate);
        assert_eq!(bad.first_failure(), Some(1));
        assert!((bad.steps[0].b_violation - 2.0).abs() < 1e-6);
    }

    #[test]
    fn empty_prefix_reduces_to_b_check() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        let p = ProblemParams::new(0.3, 500, 3).unwrap();
        for _ in 0..50 {
            let b = random_sign_vector(500, &mut rng).unwrap();
            let y = random_sign_vector(500, &mut rng).unwrap();
            let v = loss_satisfied(&p, &b, &[], &y).unwrap();
            let yb = crate::signvec::inner(&y, &b).unwrap() as f64;
            assert_eq!(v.passed, (yb - 0.3 * 500.0).abs() <= p.slack());
        }
    }

    proptest! {
        #[test]
        fn own_output_in_prefix_always_fails(
            alpha in 0.001f64..0.4999,
            d in 1usize..400,
            seed in any::<u64>(),
        ) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let p = ProblemParams::new(alpha, d, 1).unwrap();
            let b = random_sign_vector(d, &mut rng).unwrap();
            let y = random_sign_vector(d, &mut rng).unwrap();
            let v = loss_satisfied(&p, &b, std::slice::from_ref(&y), &y).unwrap();
            prop_assert!(!v.passed);
        }

        #[test]
        fn prefix_monotonicity(
            alpha in 0.05f64..0.95,
            d in 1usize..64,
            t in 1usize..6,
            seed in any::<u64>(),
        ) {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            let p = ProblemParams::new(alpha, d, t).unwrap();
            let b = random_sign_vector(d, &mut rng).unwrap();
            let y = random_sign_vector(d, &mut rng).unwrap();
            let arrivals: Vec<SignVector> =
                (0..t).map(|_| random_sign_vector(d, &mut rng).unwrap()).collect();
            let full = loss_satisfied(&p, &b, &arrivals, &y).unwrap();
            if full.passed {
                for shorter in 0..t {
                    prop_assert!(loss_satisfied(&p, &b, &arrivals[..shorter], &y).unwrap().passed);
                }
            }
        }
    }
}
