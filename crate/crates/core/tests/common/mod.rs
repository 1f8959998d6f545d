#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};
use lbt_core::agent::AgentError;
use lbt_core::domain::{Condition, Conversion, Language, TestKind};
use lbt_core::llm::mock::SyntheticProvider;
use lbt_core::llm::{Backoff, LlmGateway};
use lbt_core::materials::QuestionBank;
use lbt_core::protocol::{CorrectionOutcome, Phase, SurveyStage};
use lbt_core::service::{Platform, PlatformConfig, ServiceError, TurnOutcome};
use lbt_core::store::{EventStore, MemoryStore};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn bank_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/sample_bank.json")
}

pub fn sample_bank() -> QuestionBank {
    QuestionBank::load(&bank_path()).expect("sample bank loads")
}

pub fn synthetic_gateway(seed: u64) -> LlmGateway {
    LlmGateway::single("default", Arc::new(SyntheticProvider::new(seed)), Backoff::NONE)
}

pub fn t0() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 6, 9, 0, 0).unwrap()
}

pub fn platform_with(store: Arc<dyn EventStore>, seed: u64) -> Platform {
    let config = PlatformConfig {
        seed,
        ..PlatformConfig::default()
    };
    Platform::new(config, sample_bank(), synthetic_gateway(seed), store).expect("platform builds")
}

pub fn platform(seed: u64) -> Platform {
    platform_with(Arc::new(MemoryStore::new()), seed)
}

#[derive(Debug, Default, Clone)]
pub struct RunReport {
    pub participants: Vec<String>,
    pub exchanges: usize,
    pub expiry_notices: usize,
    pub exhausted_turns: usize,
    pub reveals: usize,
    pub late_posttests: usize,
}

const TEACH_EN: [&str; 8] = [
    "The word {kw} means something else, so we use {w} here.",
    "We should say {w} because the sentence is about a simple action.",
    "{kw} is used for governments or leaders, not for cooking or chairs.",
    "Try to remember that {w} is the normal everyday word.",
    "In this sentence the meaning is easy, so {w} fits better than {kw}.",
    "People use {kw} in news articles about power.",
    "You can say {w} with your friends and it sounds natural.",
    "The opposite idea would be to keep something, so think about that.",
];

const TEACH_JA: [&str; 6] = [
    "{kw}は別の意味なので、ここでは{w}を使います。",
    "この文は簡単な動作なので{w}が自然です。",
    "{kw}はニュースなどで使われる言葉です。",
    "{w}は日常会話でよく使う単語です。",
    "意味を考えると{w}の方が合っています。",
    "{kw}の使い方に気をつけてください。",
];

fn teacher_text(rng: &mut ChaCha8Rng, language: Language, keyword: &str, word: &str) -> String {
    let pool: &[&str] = match language {
        Language::English => &TEACH_EN,
        Language::Japanese => &TEACH_JA,
    };
    pool[rng.gen_range(0..pool.len())]
        .replace("{kw}", keyword)
        .replace("{w}", word)
}

/// Answers the open test, picking the right option with probability `skill`.
fn answer_open_test(
    p: &Platform,
    id: &str,
    round: usize,
    skill: f64,
    rng: &mut ChaCha8Rng,
    now: DateTime<Utc>,
) -> Result<(), ServiceError> {
    let state = p.state(id)?;
    let s = &state.sessions[round];
    let kind = s.phase.open_test().expect("a test is open");
    let answers: Vec<usize> = s.tests[&kind]
        .test
        .questions
        .iter()
        .map(|q| {
            if rng.gen_bool(skill) {
                q.correct_index
            } else {
                (q.correct_index + rng.gen_range(1..q.options.len())) % q.options.len()
            }
        })
        .collect();
    p.submit_answers(id, Some(round), &answers, now)?;
    Ok(())
}

fn survey(p: &Platform, id: &str, stage: SurveyStage, now: DateTime<Utc>) -> Result<(), ServiceError> {
    let form = p.questionnaire(id, stage)?;
    let answers = form.questions.iter().map(|q| format!("answer to: {q}")).collect();
    p.submit_survey(id, stage, answers, now)
}

/// Study phase for one round: correction loop, then either dialogue turns
/// or notes until time runs out.
fn study(
    p: &Platform,
    id: &str,
    round: usize,
    language: Language,
    rng: &mut ChaCha8Rng,
    now: &mut DateTime<Utc>,
    report: &mut RunReport,
) -> Result<(), ServiceError> {
    let state = p.state(id)?;
    let s = &state.sessions[round];
    let condition = s.condition;
    for item_id in s.items.clone() {
        let item = &s.study[&item_id];
        let keyword = item.content.keyword.clone();
        let accepted = item.content.material.correct_words();
        let wrong_first = rng.gen_range(0..=5u32);
        let mut revealed = false;
        for _ in 0..wrong_first {
            *now += Duration::seconds(rng.gen_range(5..20));
            let outcome = p.attempt_correction(
                id,
                &item_id,
                vec![Conversion {
                    incorrect: keyword.clone(),
                    correct: "destroy".into(),
                }],
                *now,
            )?;
            if let CorrectionOutcome::Revealed { .. } = outcome {
                revealed = true;
                report.reveals += 1;
            }
        }
        if !revealed {
            *now += Duration::seconds(rng.gen_range(5..20));
            let word = accepted[rng.gen_range(0..accepted.len())].clone();
            let outcome = p.attempt_correction(
                id,
                &item_id,
                vec![Conversion {
                    incorrect: keyword.clone(),
                    correct: word,
                }],
                *now,
            )?;
            assert_eq!(outcome, CorrectionOutcome::Correct);
        }
        match condition {
            Condition::Proposed => {
                for _ in 0..10 {
                    *now += Duration::seconds(rng.gen_range(20..50));
                    let word = &accepted[rng.gen_range(0..accepted.len())];
                    let text = teacher_text(rng, language, &keyword, word);
                    match p.teacher_turn(id, &item_id, &text, *now) {
                        Ok(TurnOutcome::Question { .. }) => report.exchanges += 1,
                        Ok(TurnOutcome::Expired { .. }) => {
                            report.expiry_notices += 1;
                            break;
                        }
                        Err(ServiceError::Agent(AgentError::DuplicateExhausted { .. })) => {
                            report.exhausted_turns += 1;
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            Condition::Baseline => {
                for n in 0..rng.gen_range(1..3) {
                    *now += Duration::seconds(rng.gen_range(20..60));
                    p.add_note(id, &item_id, &format!("note {n}: {keyword} is not {word}", word = accepted[0]), *now)?;
                }
                *now += Duration::seconds(180);
            }
        }
    }
    Ok(())
}

/// Runs `n` participants through the whole protocol: enrollment, both
/// rounds in their group's order, Posttest-1 right after study, the
/// retention tests at +72 h and +168 h, and all four survey stages.
pub fn run_cohort(p: &Platform, n: usize, seed: u64) -> Result<RunReport, ServiceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = RunReport::default();
    let mut day0s = Vec::new();
    for i in 0..n {
        let mut now = t0() + Duration::minutes(10 * i as i64);
        let language = if i % 3 == 2 { Language::English } else { Language::Japanese };
        let enrollment = p.create_participant(&format!("Learner {}", i + 1), language, now)?;
        let id = enrollment.participant.id.clone();
        p.authenticate(&id, &enrollment.token)?;
        survey(p, &id, SurveyStage::PreExperiment, now)?;
        let skill = rng.gen_range(0.3..0.8);
        let mut day0 = None;
        for round in 0..2 {
            now += Duration::minutes(1);
            p.start_round(&id, now)?;
            now += Duration::minutes(5);
            answer_open_test(p, &id, round, skill, &mut rng, now)?;
            study(p, &id, round, language, &mut rng, &mut now, &mut report)?;
            now += Duration::minutes(1);
            p.finish_study(&id, now)?;
            now += Duration::minutes(3);
            answer_open_test(p, &id, round, skill, &mut rng, now)?;
            day0.get_or_insert(now);
            let stage = match p.state(&id)?.sessions[round].condition {
                Condition::Proposed => SurveyStage::AfterProposed,
                Condition::Baseline => SurveyStage::AfterBaseline,
            };
            survey(p, &id, stage, now)?;
        }
        day0s.push(day0.unwrap());
        report.participants.push(id);
    }
    for (offset, kind) in [(72, TestKind::Posttest2), (168, TestKind::Posttest3)] {
        for (i, id) in report.participants.clone().iter().enumerate() {
            let mut now = day0s[i] + Duration::hours(offset);
            for round in 0..2 {
                let due = p.due_posttests(id, now)?;
                let item = due
                    .iter()
                    .find(|d| d.round == round && d.due.kind == kind)
                    .expect("retention test is due");
                if item.due.is_late() {
                    report.late_posttests += 1;
                }
                p.start_posttest(id, round, kind, now)?;
                now += Duration::minutes(4);
                let skill = rng.gen_range(0.2..0.7);
                answer_open_test(p, id, round, skill, &mut rng, now)?;
            }
            survey(p, id, SurveyStage::AfterRetention, now)?;
            if kind == TestKind::Posttest3 {
                assert!(p.state(id)?.sessions.iter().all(|s| s.phase == Phase::Done));
            }
        }
    }
    Ok(report)
}

pub mod oracle;

pub mod fixture {
    use chrono::{DateTime, Utc};
    use lbt_core::domain::{Condition, Conversion, Group, Language, MCQuestion, Material, Participant, Test, TestKind};
    use lbt_core::protocol::{partition_posttests, ProtocolConfig, ProtocolState, StudyMaterial};

    /// The student questions and teacher answers of the overthrow dialogue.
    pub const QUESTIONS: [&str; 4] = [
        "Please explain the reasons for the corrections (even if you could not make corrections, please explain based on the answers).",
        "I see. Which word should I use instead of \"overthrow\"?",
        "Okay, why is \"overthrow\" wrong?",
        "I see, what other verbs can be used instead of \"overthrow\"?",
    ];

    pub const ANSWERS: [&str; 3] = [
        "The word \"overthrow\" means to turn something over, but the sentence on the left does not mean to turn something over, but rather to simply put ingredients into a pot.",
        "Words such as 'throw', 'add', and 'mix' are included.",
        "Because the word \"overthrow\" means to turn something over (to change the orientation of something that was previously in a different orientation).",
    ];

    pub fn chef_material() -> Material {
        Material {
            title: "Misuse of the \"overthrow\"".into(),
            content: "The chef decided to overthrow the ingredients into the pot, creating a delicious soup that everyone enjoyed at the dinner party.".into(),
            evidence: "\"Overthrow\" means to remove from power by force; putting ingredients into a pot needs a plain verb.".into(),
            conversions: ["throw", "add", "mix"]
                .iter()
                .map(|w| Conversion {
                    incorrect: "overthrow".into(),
                    correct: (*w).into(),
                })
                .collect(),
        }
    }

    fn question(id: &str, kind: TestKind) -> MCQuestion {
        MCQuestion {
            id: format!("{id}-{kind}"),
            keyword_id: id.into(),
            test_kind: kind,
            language: Language::English,
            stem: format!("stem for {id}"),
            options: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            correct_index: 0,
            explanation: format!("explanation for {id}"),
        }
    }

    pub fn test_of(kind: TestKind, ids: &[String]) -> Test {
        Test {
            kind,
            seed: 0,
            questions: ids.iter().map(|id| question(id, kind)).collect(),
        }
    }

    /// A participant in the study phase of round 0 with a single item,
    /// `i00` ("overthrow"), to study under `condition`.
    pub fn chef_study(condition: Condition, now: DateTime<Utc>) -> (ProtocolState, ProtocolConfig) {
        let config = ProtocolConfig::default();
        let group = match condition {
            Condition::Proposed => Group::A,
            Condition::Baseline => Group::B,
        };
        let ids: Vec<String> = (0..60).map(|i| format!("i{i:02}")).collect();
        let sets = vec![ids[..30].to_vec(), ids[30..].to_vec()];
        let mut state = ProtocolState::default();
        let participant = Participant {
            id: "p001".into(),
            display_name: "Test".into(),
            native_language: Language::English,
            group,
        };
        let e = state.enroll(participant, "digest".into(), sets.clone(), &config, now).unwrap();
        state.apply(&e);
        let partition = partition_posttests(&sets[0], 1, config.posttest_size).unwrap();
        let e = state
            .start_round(0, test_of(TestKind::Pretest, &sets[0]), partition, now)
            .unwrap();
        state.apply(&e);
        let mut answers = vec![0; 30];
        answers[0] = 1;
        let lookup = |id: &String| {
            (id == "i00").then(|| StudyMaterial {
                item_id: id.clone(),
                keyword: "overthrow".into(),
                meaning: "to remove from power by force".into(),
                material: chef_material(),
            })
        };
        let (_, events) = state.grade(0, &answers, &lookup, &config, now).unwrap();
        state.apply_all(&events);
        (state, config)
    }

    pub fn swap(from: &str, to: &str) -> Vec<Conversion> {
        vec![Conversion {
            incorrect: from.into(),
            correct: to.into(),
        }]
    }
}

pub mod dialogue {
    use std::sync::Arc;

    use lbt_core::agent::{AgentError, AgentSettings, InquiryHistory, StudentAgent};
    use lbt_core::domain::Language;
    use lbt_core::llm::mock::ScriptedProvider;
    use lbt_core::llm::{Backoff, LlmGateway};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::fixture::chef_material;
    use super::oracle;

    #[derive(Debug, Default)]
    pub struct DedupRun {
        pub accepted: usize,
        pub exhausted: usize,
        pub violations: Vec<String>,
    }

    /// One dialogue against a mock that often repeats earlier questions,
    /// verbatim or with case and punctuation changes.
    pub fn random_dedup_dialogue(seed: u64, settings: &AgentSettings) -> DedupRun {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let turns = rng.gen_range(1..8);
        let mut script: Vec<String> = Vec::new();
        let mut pool: Vec<String> = vec![lbt_core::agent::FIRST_QUESTION.to_owned()];
        for _ in 0..turns * (settings.max_regen as usize + 1) {
            let s = if rng.gen_bool(0.45) {
                let base = pool[rng.gen_range(0..pool.len())].clone();
                match rng.gen_range(0..3) {
                    0 => base,
                    1 => base.to_uppercase(),
                    _ => format!("{base}?!"),
                }
            } else {
                oracle::random_sentence(&mut rng, Language::English, 9)
            };
            pool.push(s.clone());
            script.push(s);
        }
        let provider = Arc::new(ScriptedProvider::new(script));
        let gw = LlmGateway::single(&settings.provider_id, provider, Backoff::NONE);
        let agent = StudentAgent::new(&gw, settings);
        let material = chef_material();
        let mut history = InquiryHistory::new();
        let mut run = DedupRun::default();
        for turn in 0..turns {
            let before: Vec<String> = history.as_slice().to_vec();
            match agent.next_question(&material, "overthrow", "because it means something else", &mut history, Language::English) {
                Ok(q) => {
                    run.accepted += 1;
                    if oracle::is_dup(&q.text, &before, settings.duplicate_threshold) {
                        run.violations.push(format!("seed {seed} turn {turn}: {:?} repeats history", q.text));
                    }
                    if history.as_slice().len() != before.len() + 1 {
                        run.violations.push(format!("seed {seed} turn {turn}: history not extended"));
                    }
                }
                Err(AgentError::DuplicateExhausted { .. }) => {
                    run.exhausted += 1;
                    if history.as_slice() != before.as_slice() {
                        run.violations.push(format!("seed {seed} turn {turn}: history changed on failure"));
                    }
                }
                Err(e) => run.violations.push(format!("seed {seed} turn {turn}: {e}")),
            }
        }
        run
    }
}
