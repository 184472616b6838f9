//! The adaptive reconstruction adversary.
//!
//! It plants its own random secret `b` through the setup rounds, hides one
//! challenge bit at a random position, then feeds every mechanism output
//! straight back as the next arrival. An accurate mechanism must keep
//! producing fresh vectors correlated with `b`, and their coordinate-wise
//! majority recovers `b`, challenge bit included.

use rand::Rng;

use crate::error::{lifecycle, protocol, Result};
use crate::game::{Adversary, Element, Output, RoundType, Side};
use crate::problem::ProblemParams;
use crate::seed::{rng_from_seed, SimRng};
use crate::signvec::{random_sign_vector, sign_majority, Sign, SignVector};

#[derive(Clone, Debug)]
pub struct AttackState {
    /// The adversary's own secret.
    pub b: SignVector,
    /// Setup round carrying the challenge (0-based).
    pub chall_index: usize,
    /// `(x^(L), x^(R))`; the two entries always differ.
    pub pair: (Sign, Sign),
    pub collected_outputs: Vec<SignVector>,
    pub guess: Option<Side>,
}

impl AttackState {
    /// The dataset the mechanism actually received on `side`: `b` with the
    /// challenge position replaced by the delivered pair entry.
    pub fn secret_for(&self, side: Side) -> SignVector {
        let value = side.pick(self.pair.0, self.pair.1);
        self.b
            .with_entry(self.chall_index, value)
            .expect("challenge index is within dim")
    }
}

/// Final output of the attack.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttackOutcome {
    pub reconstruction: SignVector,
    pub guess: Side,
}

pub struct ReconstructionAdversary {
    dim: usize,
    horizon: usize,
    state: AttackState,
    rng: SimRng,
    next_round: usize,
    awaiting_output: bool,
}

impl ReconstructionAdversary {
    /// Draws `b`, the challenge position and the pair from `seed`.
    pub fn new(params: &ProblemParams, seed: u64) -> Result<ReconstructionAdversary> {
        let mut rng = rng_from_seed(seed);
        let b = random_sign_vector(params.dim(), &mut rng)?;
        let chall_index = rng.random_range(0..params.dim());
        let left = if rng.random::<bool>() {
            Sign::Plus
        } else {
            Sign::Minus
        };
        Ok(ReconstructionAdversary::from_parts(
            params,
            b,
            chall_index,
            left,
            rng,
        ))
    }

    /// Builds an adversary with a chosen layout; `left` is the pair's
    /// left entry and the right entry is its negation.
    pub fn from_parts(
        params: &ProblemParams,
        b: SignVector,
        chall_index: usize,
        left: Sign,
        rng: SimRng,
    ) -> ReconstructionAdversary {
        assert_eq!(b.dim(), params.dim());
        assert!(chall_index < params.dim());
        ReconstructionAdversary {
            dim: params.dim(),
            horizon: params.horizon(),
            state: AttackState {
                b,
                chall_index,
                pair: (left, -left),
                collected_outputs: Vec::with_capacity(params.horizon()),
                guess: None,
            },
            rng,
            next_round: 0,
            awaiting_output: false,
        }
    }

    pub fn state(&self) -> &AttackState {
        &self.state
    }

    /// Majority-reconstructs the secret and guesses the side from the
    /// reconstructed challenge coordinate.
    pub fn finish(&mut self) -> Result<AttackOutcome> {
        if self.state.collected_outputs.len() != self.horizon {
            return Err(lifecycle(format!(
                "finish after {} of {} outputs",
                self.state.collected_outputs.len(),
                self.horizon
            )));
        }
        let reconstruction = sign_majority(&self.state.collected_outputs)?;
        let guess = if reconstruction.get(self.state.chall_index) == self.state.pair.0 {
            Side::L
        } else {
            Side::R
        };
        self.state.guess = Some(guess);
        Ok(AttackOutcome {
            reconstruction,
            guess,
        })
    }
}

impl Adversary for ReconstructionAdversary {
    fn next_round(&mut self, round: usize) -> Result<RoundType> {
        if self.awaiting_output {
            return Err(lifecycle(format!(
                "round {round} requested before the output of round {} was consumed",
                self.next_round - 1
            )));
        }
        if round != self.next_round {
            return Err(lifecycle(format!(
                "round {round} requested, expected {}",
                self.next_round
            )));
        }
        if round >= self.dim + self.horizon {
            return Err(lifecycle("game is over"));
        }
        let st = &self.state;
        let rt = if round < self.dim {
            if round == st.chall_index {
                RoundType::Chall(Element::Bit(st.pair.0), Element::Bit(st.pair.1))
            } else {
                RoundType::Reg(Element::Bit(st.b.get(round)))
            }
        } else if let Some(prev) = st.collected_outputs.last() {
            RoundType::Reg(Element::Vector(prev.clone()))
        } else {
            RoundType::Reg(Element::Vector(random_sign_vector(
                self.dim,
                &mut self.rng,
            )?))
        };
        self.awaiting_output = true;
        self.next_round += 1;
        Ok(rt)
    }

    fn receive(&mut self, round: usize, output: &Output) -> Result<()> {
        if !self.awaiting_output || round + 1 != self.next_round {
            return Err(lifecycle(format!("unexpected output for round {round}")));
        }
        self.awaiting_output = false;
        match (round < self.dim, output) {
            (true, Output::Null) => Ok(()),
            (false, Output::Vector(y)) => {
                self.state.collected_outputs.push(y.clone());
                Ok(())
            }
            (true, Output::Vector(_)) => Err(protocol(format!(
                "setup round {round} produced a vector output"
            ))),
            (false, Output::Null) => Err(protocol(format!(
                "arrival round {round} produced no output"
            ))),
        }
    }
}
