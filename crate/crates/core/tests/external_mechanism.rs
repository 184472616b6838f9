use contobs::audit::{estimate_challenge_advantage, AuditSettings, PrivacyParams};
use contobs::game::{run_game, run_oblivious, GameSeeds, Side};
use contobs::mechanisms::MechanismFactory;
use contobs::wire::ExternalMechanismFactory;
use contobs::{Error, ProblemParams, SignVector};

// Answers every arrival with the arrival itself.
const ECHO: &str = r#"while read -r tag a b; do
  case "$tag" in
    VEC) echo "OUT $a" ;;
  esac
done"#;

fn sv(s: &str) -> SignVector {
    s.parse().unwrap()
}

#[test]
fn echo_mechanism_round_trips_vectors() {
    let p = ProblemParams::new(0.45, 70, 3).unwrap();
    let f = ExternalMechanismFactory::new(ECHO);
    let b = SignVector::ones(70).unwrap();
    let arrivals: Vec<SignVector> = (0..3)
        .map(|i| {
            (0..70)
                .map(|j| if j % 3 == i { '-' } else { '+' })
                .collect::<String>()
        })
        .map(|s| sv(&s))
        .collect();
    let outputs = run_oblivious(&f, &b, &arrivals, &p, 1).unwrap();
    assert_eq!(outputs, arrivals);
}

#[test]
fn seed_reaches_the_process() {
    // Replies with the low bits of the seed as a one-byte vector.
    let cmd = r#"while read -r tag a b; do
  case "$tag" in
    VEC) printf 'OUT %02x\n' $(( CONTOBS_MECH_SEED % 16 )) ;;
  esac
done"#;
    let p = ProblemParams::new(0.45, 4, 1).unwrap();
    let f = ExternalMechanismFactory::new(cmd);
    let out = run_oblivious(&f, &sv("++++"), &[sv("----")], &p, 6).unwrap();
    assert_eq!(out, vec![sv("-++-")]);
}

#[test]
fn bad_replies_are_protocol_errors() {
    let p = ProblemParams::new(0.45, 4, 1).unwrap();
    for cmd in [
        "while read -r l; do case \"$l\" in VEC*) echo nonsense ;; esac; done",
        "while read -r l; do case \"$l\" in VEC*) echo 'OUT ff' ;; esac; done",
        "while read -r l; do case \"$l\" in VEC*) echo 'ERR refused' ;; esac; done",
        "exit 0",
    ] {
        let f = ExternalMechanismFactory::new(cmd);
        let r = run_oblivious(&f, &sv("++++"), &[sv("----")], &p, 0);
        assert!(matches!(r, Err(Error::Protocol(_))), "{cmd}: {r:?}");
    }
}

#[test]
fn external_mechanism_plays_the_game() {
    let p = ProblemParams::new(0.45, 64, 4).unwrap();
    let f = ExternalMechanismFactory::new(ECHO);
    assert!(f.name().starts_with("external:"));
    let game = run_game(
        &f,
        |s| contobs::adversary::ReconstructionAdversary::new(&p, s),
        &p,
        Side::R,
        GameSeeds::derive(3, 0),
    )
    .unwrap();
    let tr = game.transcript;
    // Echo: each output is the arrival that produced it.
    assert_eq!(tr.outputs, tr.arrivals_delivered);
}

#[test]
fn external_mechanism_can_be_audited() {
    let p = ProblemParams::new(0.45, 64, 3).unwrap();
    let settings = AuditSettings {
        trials: 4,
        confidence: 0.95,
        budget: PrivacyParams::new(0.2, 0.05).unwrap(),
        master_seed: 1,
    };
    let run =
        estimate_challenge_advantage(&ExternalMechanismFactory::new(ECHO), &p, &settings).unwrap();
    assert_eq!(run.report.trials, 4);
    assert_eq!(run.report.accuracy_rate, 0.0);
}
