//! Replays the documented repeated-question example: the chef material, its
//! correction loop, and the four student questions at θ = 0.5.

mod common;

use lbt_core::agent::{is_duplicate, FIRST_QUESTION};
use lbt_core::analytics::{avg_words_per_interaction, count_tokens, repeated_question_rate};
use lbt_core::domain::{Condition, DialogueTurn, Language, Role, Transcript};
use lbt_core::protocol::{CorrectionOutcome, CorrectionState, ProtocolError};

use common::fixture::{chef_study, swap, ANSWERS, QUESTIONS};
use common::t0;

/// Jaccard over lowercase alphanumeric runs, written out by hand.
fn oracle_jaccard(a: &str, b: &str) -> f64 {
    fn words(s: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut cur = String::new();
        for c in s.chars().flat_map(char::to_lowercase) {
            if c.is_alphanumeric() {
                cur.push(c);
            } else if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
        out.sort();
        out.dedup();
        out
    }
    let (a, b) = (words(a), words(b));
    let inter = a.iter().filter(|w| b.contains(w)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[test]
fn pairwise_similarities_are_pinned() {
    // Frozen from a brute-force pass over all pairs.
    let expected = [
        ((1, 2), 1.0 / 13.0),
        ((1, 3), 1.0 / 3.0),
        ((2, 3), 1.0 / 15.0),
    ];
    for ((i, j), want) in expected {
        let got = oracle_jaccard(QUESTIONS[i], QUESTIONS[j]);
        assert!((got - want).abs() < 1e-12, "Q{} vs Q{}: {got}", i + 1, j + 1);
    }
    for q in &QUESTIONS[1..] {
        assert_eq!(oracle_jaccard(FIRST_QUESTION, q), 0.0);
    }
    assert!((oracle_jaccard(FIRST_QUESTION, QUESTIONS[0]) - 0.4).abs() < 1e-12);
    let short = oracle_jaccard(
        "what other verbs can be used instead of overthrow",
        "which word should I use instead of overthrow",
    );
    assert!((short - 3.0 / 14.0).abs() < 1e-12);
}

#[test]
fn later_questions_are_not_flagged_at_half() {
    let history = [FIRST_QUESTION, QUESTIONS[1]];
    assert!(!is_duplicate(QUESTIONS[2], &history, 0.5));
    assert!(!is_duplicate(QUESTIONS[3], &[FIRST_QUESTION, QUESTIONS[1], QUESTIONS[2]], 0.5));
    assert!(!is_duplicate(
        "what other verbs can be used instead of overthrow",
        &["which word should I use instead of overthrow"],
        0.5
    ));
    // Q4 against Q2 is flagged once the threshold drops to its similarity.
    assert!(is_duplicate(QUESTIONS[3], &[QUESTIONS[1]], 1.0 / 3.0));
}

fn transcript() -> Transcript {
    let mut turns = Vec::new();
    for (i, q) in QUESTIONS.iter().enumerate() {
        turns.push(DialogueTurn {
            role: Role::Student,
            text: (*q).into(),
            at: t0() + chrono::Duration::seconds(20 * i as i64),
            elapsed_lbt_seconds: 20.0 * i as f64,
        });
        if let Some(a) = ANSWERS.get(i) {
            turns.push(DialogueTurn {
                role: Role::Teacher,
                text: (*a).into(),
                at: t0() + chrono::Duration::seconds(20 * i as i64 + 10),
                elapsed_lbt_seconds: 20.0 * i as f64 + 10.0,
            });
        }
    }
    Transcript { turns }
}

#[test]
fn transcript_measures() {
    let t = transcript();
    t.check().unwrap();
    assert_eq!(repeated_question_rate([&t], 0.5), Some(0.0));
    assert_eq!(repeated_question_rate([&t], 1.0 / 3.0), Some(0.25));
    assert_eq!(count_tokens(ANSWERS[1], Language::English), 9);
    let one = Transcript {
        turns: vec![t.turns[2].clone(), t.turns[3].clone()],
    };
    assert_eq!(avg_words_per_interaction([&one], Language::English).unwrap(), 9.0);
}

#[test]
fn correct_attempt_is_accepted() {
    let (state, config) = chef_study(Condition::Proposed, t0());
    let (outcome, _) = state
        .attempt_correction(0, "i00", swap("overthrow", "add"), &config, t0())
        .unwrap();
    assert_eq!(outcome, CorrectionOutcome::Correct);
}

#[test]
fn five_misses_reveal_then_refuse() {
    let (mut state, config) = chef_study(Condition::Proposed, t0());
    let mut outcomes = Vec::new();
    for _ in 0..5 {
        let (o, e) = state
            .attempt_correction(0, "i00", swap("overthrow", "destroy"), &config, t0())
            .unwrap();
        state.apply(&e);
        outcomes.push(o);
    }
    let remaining: Vec<_> = outcomes[..4]
        .iter()
        .map(|o| match o {
            CorrectionOutcome::IncorrectRetry { remaining } => *remaining,
            other => panic!("{other:?}"),
        })
        .collect();
    assert_eq!(remaining, [4, 3, 2, 1]);
    assert_eq!(
        outcomes[4],
        CorrectionOutcome::Revealed {
            corrections: vec!["throw".into(), "add".into(), "mix".into()]
        }
    );
    assert_eq!(state.sessions[0].study["i00"].correction, CorrectionState::Revealed);
    assert_eq!(
        state.attempt_correction(0, "i00", swap("overthrow", "add"), &config, t0()),
        Err(ProtocolError::AttemptsExceeded("i00".into()))
    );
    // The dialogue opens with the fixed question at the moment of reveal.
    let t = &state.sessions[0].transcript["i00"];
    assert_eq!(t.turns.len(), 1);
    assert_eq!(t.turns[0].text, FIRST_QUESTION);
}

#[test]
fn unknown_item_and_resolved_item() {
    let (mut state, config) = chef_study(Condition::Baseline, t0());
    assert_eq!(
        state.attempt_correction(0, "i01", swap("x", "y"), &config, t0()),
        Err(ProtocolError::UnknownItem("i01".into()))
    );
    let (_, e) = state
        .attempt_correction(0, "i00", swap("overthrow", "mix"), &config, t0())
        .unwrap();
    state.apply(&e);
    assert_eq!(
        state.attempt_correction(0, "i00", swap("overthrow", "mix"), &config, t0()),
        Err(ProtocolError::AlreadyResolved("i00".into()))
    );
    assert!(state.sessions[0].transcript.is_empty());
}
