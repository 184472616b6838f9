//! The adaptive privacy game as an explicit state machine, plus the
//! oblivious-mode runner.
//!
//! The two-phase problem stream is laid out as `d` setup rounds (one bit
//! each) followed by `T` arrival rounds (one vector each). The mechanism
//! answers setup rounds with the null token [`Output::Null`]. Exactly one
//! round is a challenge; the runner accepts it in either phase.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{protocol, usage, Result};
use crate::mechanisms::MechanismFactory;
use crate::problem::ProblemParams;
use crate::seed::derive_seed;
use crate::signvec::{Sign, SignVector};

/// Hidden input of the game selecting which challenge element is delivered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    L,
    R,
}

impl Side {
    pub fn pick<T>(self, left: T, right: T) -> T {
        match self {
            Side::L => left,
            Side::R => right,
        }
    }
}

/// One stream element: a setup bit or an arrival vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Element {
    Bit(Sign),
    Vector(SignVector),
}

impl Element {
    /// Short identifier for logs: the bit itself, or a hash prefix of a
    /// vector's packed bytes.
    pub fn digest(&self) -> String {
        match self {
            Element::Bit(s) => s.to_string(),
            Element::Vector(v) => vector_digest(v),
        }
    }

    fn full(&self) -> String {
        match self {
            Element::Bit(s) => s.to_string(),
            Element::Vector(v) => v.to_hex(),
        }
    }
}

pub fn vector_digest(v: &SignVector) -> String {
    let mut hasher = Sha256::new();
    hasher.update((v.dim() as u64).to_le_bytes());
    for w in v.words() {
        hasher.update(w.to_le_bytes());
    }
    hex::encode(&hasher.finalize()[..8])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundKind {
    Reg,
    Chall,
}

/// What the adversary emits at the start of a round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RoundType {
    Reg(Element),
    /// `(x^(L), x^(R))`.
    Chall(Element, Element),
}

impl RoundType {
    pub fn kind(&self) -> RoundKind {
        match self {
            RoundType::Reg(_) => RoundKind::Reg,
            RoundType::Chall(..) => RoundKind::Chall,
        }
    }
}

/// What the mechanism returns at the end of a round.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Output {
    /// Setup rounds release nothing.
    Null,
    Vector(SignVector),
}

impl Output {
    pub fn as_vector(&self) -> Option<&SignVector> {
        match self {
            Output::Null => None,
            Output::Vector(v) => Some(v),
        }
    }
}

/// The adversary side of the game. Rounds are numbered from 0 over all
/// `d + T` rounds.
pub trait Adversary {
    fn next_round(&mut self, round: usize) -> Result<RoundType>;

    fn receive(&mut self, round: usize, output: &Output) -> Result<()>;
}

/// Independent seeds for the two parties of one game.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameSeeds {
    pub mechanism: u64,
    pub adversary: u64,
}

impl GameSeeds {
    pub fn derive(master: u64, trial: u64) -> GameSeeds {
        GameSeeds {
            mechanism: derive_seed(master, "mechanism", trial),
            adversary: derive_seed(master, "adversary", trial),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Challenge {
    pub round: usize,
    pub left: Element,
    pub right: Element,
}

/// Everything that happened in one game, including the hidden side.
///
/// Setup rounds are stored packed: `setup_delivered` holds the bit the
/// mechanism received at each setup round, which is also the dataset the
/// mechanism actually holds.
#[derive(Clone, Debug)]
pub struct GameTranscript {
    pub side: Side,
    pub challenge: Challenge,
    pub setup_delivered: SignVector,
    pub arrivals_delivered: Vec<SignVector>,
    pub outputs: Vec<SignVector>,
    pub mechanism_seed: u64,
    pub adversary_seed: u64,
}

/// One row of a transcript.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundRecord {
    pub index: usize,
    pub kind: RoundKind,
    pub delivered: Element,
    pub output: Output,
}

impl GameTranscript {
    pub fn t_star(&self) -> usize {
        self.challenge.round
    }

    pub fn dim(&self) -> usize {
        self.setup_delivered.dim()
    }

    pub fn total_rounds(&self) -> usize {
        self.dim() + self.outputs.len()
    }

    pub fn round(&self, index: usize) -> RoundRecord {
        let d = self.dim();
        assert!(index < self.total_rounds(), "round {index} out of range");
        let kind = if index == self.challenge.round {
            RoundKind::Chall
        } else {
            RoundKind::Reg
        };
        if index < d {
            RoundRecord {
                index,
                kind,
                delivered: Element::Bit(self.setup_delivered.get(index)),
                output: Output::Null,
            }
        } else {
            RoundRecord {
                index,
                kind,
                delivered: Element::Vector(self.arrivals_delivered[index - d].clone()),
                output: Output::Vector(self.outputs[index - d].clone()),
            }
        }
    }

    pub fn rounds(&self) -> impl Iterator<Item = RoundRecord> + '_ {
        (0..self.total_rounds()).map(move |r| self.round(r))
    }

    /// JSON lines, one per round. Vectors appear as digests unless
    /// `full_vectors` is set.
    pub fn write_jsonl<W: Write>(&self, mut out: W, full_vectors: bool) -> Result<()> {
        for rec in self.rounds() {
            let output = match &rec.output {
                Output::Null => serde_json::Value::Null,
                Output::Vector(v) if full_vectors => v.to_hex().into(),
                Output::Vector(v) => vector_digest(v).into(),
            };
            let element = if full_vectors {
                rec.delivered.full()
            } else {
                rec.delivered.digest()
            };
            let line = json!({
                "round": rec.index,
                "kind": rec.kind,
                "element": element,
                "output": output,
            });
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// The adversary's randomness and every message it sent and received.
///
/// Sent messages are stored packed; at the challenge round the packed
/// slot holds the left element and [`AdversaryView::sent`] reports the
/// full pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdversaryView {
    pub adversary_seed: u64,
    pub challenge: Challenge,
    pub setup_sent: SignVector,
    pub arrivals_sent: Vec<SignVector>,
    pub received: Vec<SignVector>,
}

impl AdversaryView {
    pub fn dim(&self) -> usize {
        self.setup_sent.dim()
    }

    pub fn total_rounds(&self) -> usize {
        self.dim() + self.received.len()
    }

    pub fn sent(&self, index: usize) -> RoundType {
        if index == self.challenge.round {
            return RoundType::Chall(self.challenge.left.clone(), self.challenge.right.clone());
        }
        if index < self.dim() {
            RoundType::Reg(Element::Bit(self.setup_sent.get(index)))
        } else {
            RoundType::Reg(Element::Vector(
                self.arrivals_sent[index - self.dim()].clone(),
            ))
        }
    }

    pub fn received(&self, index: usize) -> Output {
        if index < self.dim() {
            Output::Null
        } else {
            Output::Vector(self.received[index - self.dim()].clone())
        }
    }

    pub fn null_count(&self) -> usize {
        self.dim()
    }
}

pub struct GameOutcome<A> {
    pub transcript: GameTranscript,
    pub view: AdversaryView,
    pub adversary: A,
}

fn set_bit(words: &mut [u64], i: usize, s: Sign) {
    if s == Sign::Plus {
        words[i / 64] |= 1 << (i % 64);
    }
}

/// Plays one game between a fresh mechanism and a fresh adversary.
pub fn run_game<A, F>(
    mechanisms: &dyn MechanismFactory,
    make_adversary: F,
    params: &ProblemParams,
    side: Side,
    seeds: GameSeeds,
) -> Result<GameOutcome<A>>
where
    A: Adversary,
    F: FnOnce(u64) -> Result<A>,
{
    let d = params.dim();
    let horizon = params.horizon();
    let mut mechanism = mechanisms.create(params, seeds.mechanism)?;
    let mut adversary = make_adversary(seeds.adversary)?;

    let nwords = d.div_ceil(64);
    let mut delivered_words = vec![0u64; nwords];
    let mut sent_words = vec![0u64; nwords];
    let mut challenge: Option<Challenge> = None;

    let mut record_challenge = |round: usize, left: &Element, right: &Element| -> Result<()> {
        if let Some(prev) = &challenge {
            return Err(protocol(format!(
                "second challenge at round {round} (first was round {})",
                prev.round
            )));
        }
        challenge = Some(Challenge {
            round,
            left: left.clone(),
            right: right.clone(),
        });
        Ok(())
    };

    for round in 0..d {
        let (sent, delivered) = match adversary.next_round(round)? {
            RoundType::Reg(Element::Bit(s)) => (s, s),
            RoundType::Chall(Element::Bit(l), Element::Bit(r)) => {
                record_challenge(round, &Element::Bit(l), &Element::Bit(r))?;
                (l, side.pick(l, r))
            }
            _ => {
                return Err(protocol(format!(
                    "setup round {round} must carry bit elements"
                )))
            }
        };
        set_bit(&mut sent_words, round, sent);
        set_bit(&mut delivered_words, round, delivered);
        mechanism.absorb_bit(round, delivered)?;
        adversary.receive(round, &Output::Null)?;
    }

    let check_vector = |round: usize, e: Element| -> Result<SignVector> {
        match e {
            Element::Vector(v) if v.dim() == d => Ok(v),
            Element::Vector(v) => Err(protocol(format!(
                "arrival round {round} carries a vector of dim {} (expected {d})",
                v.dim()
            ))),
            Element::Bit(_) => Err(protocol(format!(
                "arrival round {round} must carry vector elements"
            ))),
        }
    };

    let mut arrivals_sent = Vec::with_capacity(horizon);
    let mut arrivals_delivered = Vec::with_capacity(horizon);
    let mut outputs = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let round = d + t;
        let (sent, delivered) = match adversary.next_round(round)? {
            RoundType::Reg(e) => {
                let v = check_vector(round, e)?;
                (v.clone(), v)
            }
            RoundType::Chall(l, r) => {
                let l = check_vector(round, l)?;
                let r = check_vector(round, r)?;
                record_challenge(
                    round,
                    &Element::Vector(l.clone()),
                    &Element::Vector(r.clone()),
                )?;
                let delivered = side.pick(&l, &r).clone();
                (l, delivered)
            }
        };
        let y = mechanism.step(&delivered)?;
        if y.dim() != d {
            return Err(protocol(format!(
                "mechanism returned a vector of dim {} at round {round}",
                y.dim()
            )));
        }
        adversary.receive(round, &Output::Vector(y.clone()))?;
        arrivals_sent.push(sent);
        arrivals_delivered.push(delivered);
        outputs.push(y);
    }

    let challenge = challenge.ok_or_else(|| protocol("game ended without a challenge round"))?;
    let setup_delivered = SignVector::from_words(d, delivered_words)?;
    let setup_sent = SignVector::from_words(d, sent_words)?;

    let view = AdversaryView {
        adversary_seed: seeds.adversary,
        challenge: challenge.clone(),
        setup_sent,
        arrivals_sent,
        received: outputs.clone(),
    };
    let transcript = GameTranscript {
        side,
        challenge,
        setup_delivered,
        arrivals_delivered,
        outputs,
        mechanism_seed: seeds.mechanism,
        adversary_seed: seeds.adversary,
    };
    Ok(GameOutcome {
        transcript,
        view,
        adversary,
    })
}

/// Feeds a stream fixed in advance and collects the `T` outputs.
pub fn run_oblivious(
    mechanisms: &dyn MechanismFactory,
    b: &SignVector,
    arrivals: &[SignVector],
    params: &ProblemParams,
    seed: u64,
) -> Result<Vec<SignVector>> {
    if b.dim() != params.dim() {
        return Err(usage(format!(
            "secret has dim {}, problem has dim {}",
            b.dim(),
            params.dim()
        )));
    }
    if arrivals.len() != params.horizon() {
        return Err(usage(format!(
            "expected {} arrivals, got {}",
            params.horizon(),
            arrivals.len()
        )));
    }
    let mut mechanism = mechanisms.create(params, seed)?;
    for (i, s) in b.iter().enumerate() {
        mechanism.absorb_bit(i, s)?;
    }
    arrivals
        .iter()
        .map(|v| {
            let y = mechanism.step(v)?;
            if y.dim() != params.dim() {
                return Err(protocol("mechanism returned a vector of the wrong dim"));
            }
            Ok(y)
        })
        .collect()
}
