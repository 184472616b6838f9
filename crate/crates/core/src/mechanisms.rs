//! Continual-observation mechanisms behind one two-phase interface.
//!
//! A mechanism first absorbs the `d` setup bits in order, then answers up
//! to `T` arrival vectors with one output vector each.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{lifecycle, usage, Error, Result};
use crate::problem::ProblemParams;
use crate::seed::{rng_from_seed, SimRng};
use crate::signvec::{random_sign_vector, Sign, SignVector};

pub trait ContinualMechanism: Send {
    /// Records setup bit `index` (0-based). Bits must arrive in order.
    fn absorb_bit(&mut self, index: usize, bit: Sign) -> Result<()>;

    /// Consumes one arrival and releases one output.
    fn step(&mut self, arrival: &SignVector) -> Result<SignVector>;
}

/// Builds fresh mechanism instances, one per game.
pub trait MechanismFactory: Sync {
    fn name(&self) -> String;

    fn create(&self, params: &ProblemParams, seed: u64) -> Result<Box<dyn ContinualMechanism>>;
}

/// Randomized response: keeps each coordinate of `b` with probability
/// `(1+α)/2` and flips it otherwise. Accepts `α ∈ [0, 1]`.
///
/// Each coordinate costs one 64-bit uniform word compared against a fixed
/// threshold.
pub fn randomized_response<R: Rng + ?Sized>(
    b: &SignVector,
    alpha: f64,
    rng: &mut R,
) -> Result<SignVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    let threshold = flip_threshold((1.0 - alpha) / 2.0);
    let words = b
        .words()
        .iter()
        .map(|&w| w ^ bernoulli_mask(threshold, rng))
        .collect();
    Ok(SignVector::from_words_masked(b.dim(), words))
}

/// `⌊p·2^64⌋` for `p` in `[0, 1)`: a uniform `u64` falls below it with
/// probability `p` up to that rounding.
fn flip_threshold(p: f64) -> u64 {
    (p * 2f64.powi(64)) as u64
}

/// 64 independent bits, each set iff a uniform 64-bit lane is below
/// `threshold`.
///
/// The lanes are compared bit-sliced from the most significant bit, one
/// random word per bit position, stopping once every lane is decided
/// (about 8 words on average). Lanes still undecided after all 64 bits
/// equal the threshold and count as not below.
fn bernoulli_mask<R: Rng + ?Sized>(threshold: u64, rng: &mut R) -> u64 {
    let mut below = 0u64;
    let mut undecided = u64::MAX;
    for bit in (0..64).rev() {
        let r = rng.next_u64();
        if threshold >> bit & 1 == 1 {
            below |= undecided & !r;
            undecided &= r;
        } else {
            undecided &= !r;
        }
        if undecided == 0 {
            break;
        }
    }
    below
}

fn check_secret(params: &ProblemParams, b: &SignVector) -> Result<()> {
    if b.dim() != params.dim() {
        return Err(usage(format!(
            "secret has dim {}, problem has dim {}",
            b.dim(),
            params.dim()
        )));
    }
    Ok(())
}

/// Draws the single vector the oblivious mechanism releases forever.
pub fn oblivious_rr_setup<R: Rng + ?Sized>(
    params: &ProblemParams,
    b: &SignVector,
    rng: &mut R,
) -> Result<SignVector> {
    check_secret(params, b)?;
    randomized_response(b, params.alpha(), rng)
}

/// One freshly resampled randomized-response output. The arrival is
/// accepted and ignored.
pub fn fresh_rr_step<R: Rng + ?Sized>(
    params: &ProblemParams,
    b: &SignVector,
    arrival: &SignVector,
    rng: &mut R,
) -> Result<SignVector> {
    check_secret(params, b)?;
    if arrival.dim() != params.dim() {
        return Err(usage("arrival dimension does not match the problem"));
    }
    randomized_response(b, params.alpha(), rng)
}

/// Shared bookkeeping for the setup/arrival lifecycle. Setup bits are
/// packed as they arrive.
#[derive(Debug)]
pub struct Lifecycle {
    dim: usize,
    horizon: usize,
    words: Vec<u64>,
    absorbed: usize,
    steps: usize,
}

impl Lifecycle {
    pub fn new(params: &ProblemParams) -> Lifecycle {
        Lifecycle {
            dim: params.dim(),
            horizon: params.horizon(),
            words: vec![0; params.dim().div_ceil(64)],
            absorbed: 0,
            steps: 0,
        }
    }

    pub fn absorb(&mut self, index: usize, bit: Sign) -> Result<()> {
        if self.steps > 0 {
            return Err(lifecycle(
                "setup bit received after the arrival phase began",
            ));
        }
        if index >= self.dim {
            return Err(usage(format!(
                "setup index {index} out of range for dim {}",
                self.dim
            )));
        }
        if index != self.absorbed {
            return Err(lifecycle(format!(
                "setup bit {index} received out of order (expected {})",
                self.absorbed
            )));
        }
        if bit == Sign::Plus {
            self.words[index / 64] |= 1 << (index % 64);
        }
        self.absorbed += 1;
        Ok(())
    }

    /// Validates an arrival and advances the step counter. Returns the
    /// full secret on the first step.
    pub fn begin_step(&mut self, arrival: &SignVector) -> Result<Option<SignVector>> {
        if self.absorbed != self.dim {
            return Err(lifecycle(format!(
                "step called after {} of {} setup bits",
                self.absorbed, self.dim
            )));
        }
        if self.steps >= self.horizon {
            return Err(lifecycle(format!("more than {} steps", self.horizon)));
        }
        if arrival.dim() != self.dim {
            return Err(usage(format!(
                "arrival has dim {}, expected {}",
                arrival.dim(),
                self.dim
            )));
        }
        self.steps += 1;
        if self.steps == 1 {
            let words = std::mem::take(&mut self.words);
            Ok(Some(SignVector::from_words_masked(self.dim, words)))
        } else {
            Ok(None)
        }
    }
}

/// Releases one randomized-response vector at every step.
pub struct ObliviousRr {
    params: ProblemParams,
    life: Lifecycle,
    rng: SimRng,
    output: Option<SignVector>,
}

impl ObliviousRr {
    pub fn new(params: &ProblemParams, seed: u64) -> ObliviousRr {
        ObliviousRr {
            params: *params,
            life: Lifecycle::new(params),
            rng: rng_from_seed(seed),
            output: None,
        }
    }
}

impl ContinualMechanism for ObliviousRr {
    fn absorb_bit(&mut self, index: usize, bit: Sign) -> Result<()> {
        self.life.absorb(index, bit)
    }

    fn step(&mut self, arrival: &SignVector) -> Result<SignVector> {
        if let Some(b) = self.life.begin_step(arrival)? {
            self.output = Some(oblivious_rr_setup(&self.params, &b, &mut self.rng)?);
        }
        Ok(self.output.clone().expect("output drawn on first step"))
    }
}

/// Resamples randomized response independently at every step.
pub struct FreshRr {
    params: ProblemParams,
    life: Lifecycle,
    rng: SimRng,
    secret: Option<SignVector>,
}

impl FreshRr {
    pub fn new(params: &ProblemParams, seed: u64) -> FreshRr {
        FreshRr {
            params: *params,
            life: Lifecycle::new(params),
            rng: rng_from_seed(seed),
            secret: None,
        }
    }
}

impl ContinualMechanism for FreshRr {
    fn absorb_bit(&mut self, index: usize, bit: Sign) -> Result<()> {
        self.life.absorb(index, bit)
    }

    fn step(&mut self, arrival: &SignVector) -> Result<SignVector> {
        if let Some(b) = self.life.begin_step(arrival)? {
            self.secret = Some(b);
        }
        let b = self.secret.as_ref().expect("secret captured on first step");
        fresh_rr_step(&self.params, b, arrival, &mut self.rng)
    }
}

/// Ignores all input and releases one seed-determined vector. Used to
/// calibrate the audit.
pub struct FixedOutput {
    life: Lifecycle,
    output: SignVector,
}

impl FixedOutput {
    pub fn new(params: &ProblemParams, seed: u64) -> Result<FixedOutput> {
        Ok(FixedOutput {
            life: Lifecycle::new(params),
            output: random_sign_vector(params.dim(), &mut rng_from_seed(seed))?,
        })
    }
}

impl ContinualMechanism for FixedOutput {
    fn absorb_bit(&mut self, index: usize, bit: Sign) -> Result<()> {
        self.life.absorb(index, bit)
    }

    fn step(&mut self, arrival: &SignVector) -> Result<SignVector> {
        self.life.begin_step(arrival)?;
        Ok(self.output.clone())
    }
}

/// Mechanisms selectable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinMechanism {
    ObliviousRr,
    FreshRr,
    FixedOutput,
}

impl BuiltinMechanism {
    pub const ALL: [BuiltinMechanism; 3] = [
        BuiltinMechanism::ObliviousRr,
        BuiltinMechanism::FreshRr,
        BuiltinMechanism::FixedOutput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BuiltinMechanism::ObliviousRr => "oblivious-rr",
            BuiltinMechanism::FreshRr => "fresh-rr",
            BuiltinMechanism::FixedOutput => "fixed-output",
        }
    }
}

impl fmt::Display for BuiltinMechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BuiltinMechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<BuiltinMechanism> {
        BuiltinMechanism::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                usage(format!(
                    "unknown mechanism {s:?} (expected one of oblivious-rr, fresh-rr, fixed-output)"
                ))
            })
    }
}

impl MechanismFactory for BuiltinMechanism {
    fn name(&self) -> String {
        self.as_str().to_string()
    }

    fn create(&self, params: &ProblemParams, seed: u64) -> Result<Box<dyn ContinualMechanism>> {
        Ok(match self {
            BuiltinMechanism::ObliviousRr => Box::new(ObliviousRr::new(params, seed)),
            BuiltinMechanism::FreshRr => Box::new(FreshRr::new(params, seed)),
            BuiltinMechanism::FixedOutput => Box::new(FixedOutput::new(params, seed)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn bernoulli_mask_edges() {
        let mut rng = rng_from_seed(3);
        assert_eq!(bernoulli_mask(0, &mut rng), 0);
        // Threshold 2^63: the first word alone decides every lane.
        let mut a = rng_from_seed(4);
        let mut b = rng_from_seed(4);
        assert_eq!(bernoulli_mask(1 << 63, &mut a), !b.next_u64());
        assert_eq!(flip_threshold(0.5), 1 << 63);
        assert_eq!(flip_threshold(0.0), 0);
    }

    #[test]
    fn bernoulli_mask_rate() {
        // 64·20000 lanes; 99.9% binomial bounds for each p.
        let mut rng = rng_from_seed(5);
        for (p, lo, hi) in [
            (0.275, 350_338, 353_663),
            (0.01, 12_431, 13_172),
            (0.5, 638_139, 641_861),
        ] {
            let t = flip_threshold(p);
            let ones: u32 = (0..20_000)
                .map(|_| bernoulli_mask(t, &mut rng).count_ones())
                .sum();
            assert!((lo..=hi).contains(&ones), "p {p}: {ones}");
        }
    }
    use crate::signvec::inner;

    fn sv(s: &str) -> SignVector {
        s.parse().unwrap()
    }

    fn feed(m: &mut dyn ContinualMechanism, b: &SignVector) {
        for (i, s) in b.iter().enumerate() {
            m.absorb_bit(i, s).unwrap();
        }
    }

    #[test]
    fn lifecycle_contract() {
        let p = ProblemParams::new(0.45, 2, 2).unwrap();
        let mut m = ObliviousRr::new(&p, 1);
        assert!(matches!(m.step(&sv("++")), Err(Error::Lifecycle(_))));
        assert!(matches!(
            m.absorb_bit(1, Sign::Plus),
            Err(Error::Lifecycle(_))
        ));
        m.absorb_bit(0, Sign::Plus).unwrap();
        m.absorb_bit(1, Sign::Minus).unwrap();
        assert!(matches!(m.absorb_bit(2, Sign::Plus), Err(Error::Usage(_))));
        assert_eq!(m.life.words, vec![0b01]);
        assert!(matches!(m.step(&sv("+++")), Err(Error::Usage(_))));
        m.step(&sv("++")).unwrap();
        assert!(matches!(
            m.absorb_bit(0, Sign::Plus),
            Err(Error::Lifecycle(_))
        ));
        m.step(&sv("--")).unwrap();
        assert!(matches!(m.step(&sv("++")), Err(Error::Lifecycle(_))));
    }

    #[test]
    fn oblivious_outputs_are_identical_across_steps() {
        let p = ProblemParams::new(0.45, 1000, 5).unwrap();
        let mut rng = rng_from_seed(3);
        let b = random_sign_vector(1000, &mut rng).unwrap();
        let mut m = ObliviousRr::new(&p, 4);
        feed(&mut m, &b);
        let first = m.step(&b).unwrap();
        for _ in 1..5 {
            let v = random_sign_vector(1000, &mut rng).unwrap();
            assert_eq!(m.step(&v).unwrap(), first);
        }
    }

    #[test]
    fn zero_bias_is_independent_of_secret() {
        let mut rng = rng_from_seed(10);
        let b = SignVector::ones(100_000).unwrap();
        let y = randomized_response(&b, 0.0, &mut rng).unwrap();
        // Uniform output: ⟨y, b⟩ has sd √d ≈ 316.
        assert!(inner(&y, &b).unwrap().abs() < 2000);
    }

    #[test]
    fn near_one_bias_copies_secret() {
        let mut rng = rng_from_seed(11);
        let b = random_sign_vector(10_000, &mut rng).unwrap();
        let y = randomized_response(&b, 1.0 - 1e-9, &mut rng).unwrap();
        assert_eq!(y, b);
        assert!(randomized_response(&b, 1.5, &mut rng).is_err());
    }

    #[test]
    fn single_coordinate_keep_rate() {
        // Pr[y = b] = 0.725 at α = 0.45; ±0.005 is 3.5 standard errors at 10^5 draws.
        let p = ProblemParams::new(0.45, 1, 1).unwrap();
        let b = sv("+");
        let mut rng = rng_from_seed(12);
        let n = 100_000;
        let kept = (0..n)
            .filter(|_| oblivious_rr_setup(&p, &b, &mut rng).unwrap().get(0) == Sign::Plus)
            .count();
        let rate = kept as f64 / n as f64;
        assert!((rate - 0.725).abs() <= 0.005, "rate {rate}");
    }

    #[test]
    fn fresh_steps_differ_and_center_on_alpha_d() {
        let p = ProblemParams::new(0.45, 10_000, 2).unwrap();
        let mut rng = rng_from_seed(13);
        let b = random_sign_vector(10_000, &mut rng).unwrap();
        let v = random_sign_vector(10_000, &mut rng).unwrap();
        let y1 = fresh_rr_step(&p, &b, &v, &mut rng).unwrap();
        let y2 = fresh_rr_step(&p, &b, &v, &mut rng).unwrap();
        assert_ne!(y1, y2);

        let p = ProblemParams::new(0.45, 1000, 1).unwrap();
        let b = random_sign_vector(1000, &mut rng).unwrap();
        let arrival = SignVector::ones(1000).unwrap();
        let total: i64 = (0..10_000)
            .map(|_| inner(&fresh_rr_step(&p, &b, &arrival, &mut rng).unwrap(), &b).unwrap())
            .sum();
        let mean = total as f64 / 10_000.0;
        assert!((440.0..=460.0).contains(&mean), "mean {mean}");
    }

    #[test]
    fn empirical_mean_is_alpha_b() {
        // E[y_i] = α b_i with per-coordinate sd √(1−α²); check within 4 standard errors.
        let alpha = 0.3;
        let d = 64;
        let n = 20_000;
        let mut rng = rng_from_seed(14);
        let b = random_sign_vector(d, &mut rng).unwrap();
        let mut sums = vec![0i64; d];
        for _ in 0..n {
            let y = randomized_response(&b, alpha, &mut rng).unwrap();
            for (i, s) in y.iter().enumerate() {
                sums[i] += s.value();
            }
        }
        let se = ((1.0 - alpha * alpha) / n as f64).sqrt();
        for (i, s) in sums.iter().enumerate() {
            let mean = *s as f64 / n as f64;
            assert!((mean - alpha * b.get(i).value() as f64).abs() <= 4.0 * se);
        }
    }

    #[test]
    fn outputs_ignore_arrivals() {
        let p = ProblemParams::new(0.45, 300, 4).unwrap();
        let mut rng = rng_from_seed(15);
        let b = random_sign_vector(300, &mut rng).unwrap();
        let a: Vec<SignVector> = (0..4)
            .map(|_| random_sign_vector(300, &mut rng).unwrap())
            .collect();
        let c: Vec<SignVector> = (0..4)
            .map(|_| random_sign_vector(300, &mut rng).unwrap())
            .collect();
        for kind in BuiltinMechanism::ALL {
            let mut m1 = kind.create(&p, 99).unwrap();
            let mut m2 = kind.create(&p, 99).unwrap();
            feed(m1.as_mut(), &b);
            feed(m2.as_mut(), &b);
            for (x, z) in a.iter().zip(&c) {
                assert_eq!(m1.step(x).unwrap(), m2.step(z).unwrap(), "{kind}");
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for kind in BuiltinMechanism::ALL {
            assert_eq!(kind.as_str().parse::<BuiltinMechanism>().unwrap(), kind);
        }
        assert!(matches!(
            "laplace".parse::<BuiltinMechanism>(),
            Err(Error::Usage(_))
        ));
    }
}
