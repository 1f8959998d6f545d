use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::ProtocolConfig;
use super::grading::{grade_answers, select_study_items, GradedTest, GradingError, PosttestPartition};
use super::schedule::{due_posttests, DuePosttest, Schedule};
use super::session::{
    is_correct_correction, seconds_between, AdministeredTest, CorrectionOutcome, CorrectionState, LbtGate, Note, Phase,
    StudyItem, StudyMaterial, StudySession,
};
use super::survey::{SurveyForm, SurveyStage};
use crate::agent::FIRST_QUESTION;
use crate::domain::{
    Condition, Conversion, DialogueTurn, ItemId, Participant, Role, Test, TestKind, TestResult, Transcript,
};

/// Each participant studies once per condition.
pub const ROUNDS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    BadRequest,
    NotFound,
    Conflict,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("participant is not enrolled")]
    NotEnrolled,
    #[error("participant is already enrolled")]
    AlreadyEnrolled,
    #[error("round {0} does not exist")]
    UnknownRound(usize),
    #[error("round {round} cannot start yet")]
    RoundOutOfOrder { round: usize },
    #[error("cannot {action} in phase {phase:?} of round {round}")]
    WrongPhase {
        round: usize,
        phase: Phase,
        action: &'static str,
    },
    #[error("{action} is not part of the {condition:?} condition")]
    WrongCondition {
        condition: Condition,
        action: &'static str,
    },
    #[error("item {0:?} is not being studied in this round")]
    UnknownItem(ItemId),
    #[error("no study material for item {0:?}")]
    MissingMaterial(ItemId),
    #[error("correction attempts for {0:?} are used up")]
    AttemptsExceeded(ItemId),
    #[error("item {0:?} is already corrected")]
    AlreadyResolved(ItemId),
    #[error("item {0:?} must be corrected first")]
    CorrectionPending(ItemId),
    #[error("the teaching time for {0:?} has run out")]
    LbtExpired(ItemId),
    #[error("{0} is not due yet")]
    NotDue(TestKind),
    #[error("survey stage {0:?} is not reached")]
    StageNotReached(SurveyStage),
    #[error("survey stage {0:?} was already submitted")]
    SurveyAlreadySubmitted(SurveyStage),
    #[error(transparent)]
    Grading(#[from] GradingError),
    #[error("invalid input: {0}")]
    Invalid(String),
}

impl ProtocolError {
    pub fn class(&self) -> ErrorClass {
        use ProtocolError::*;
        match self {
            UnknownRound(_) | UnknownItem(_) | MissingMaterial(_) => ErrorClass::NotFound,
            Grading(_) | Invalid(_) => ErrorClass::BadRequest,
            _ => ErrorClass::Conflict,
        }
    }
}

/// Everything that happens to a participant. State is a fold over these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolEvent {
    Enrolled {
        participant: Participant,
        token_digest: String,
        pretest_sets: Vec<Vec<ItemId>>,
        at: DateTime<Utc>,
    },
    RoundStarted {
        round: usize,
        condition: Condition,
        pretest: Test,
        partition: PosttestPartition,
        at: DateTime<Utc>,
    },
    TestGraded {
        round: usize,
        result: TestResult,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        schedule: Option<Schedule>,
        at: DateTime<Utc>,
    },
    StudyPrepared {
        round: usize,
        items: Vec<StudyMaterial>,
        at: DateTime<Utc>,
    },
    CorrectionAttempted {
        round: usize,
        item_id: ItemId,
        replacements: Vec<Conversion>,
        outcome: CorrectionOutcome,
        at: DateTime<Utc>,
    },
    LbtExchange {
        round: usize,
        item_id: ItemId,
        teacher: DialogueTurn,
        student: DialogueTurn,
    },
    NoteAdded {
        round: usize,
        item_id: ItemId,
        text: String,
        at: DateTime<Utc>,
    },
    StudyFinished {
        round: usize,
        posttest1: Test,
        at: DateTime<Utc>,
    },
    PosttestStarted {
        round: usize,
        test: Test,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        late_by_seconds: Option<i64>,
        at: DateTime<Utc>,
    },
    SurveySubmitted {
        form: SurveyForm,
        at: DateTime<Utc>,
    },
}

impl ProtocolEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolEvent::Enrolled { .. } => "enrolled",
            ProtocolEvent::RoundStarted { .. } => "round_started",
            ProtocolEvent::TestGraded { .. } => "test_graded",
            ProtocolEvent::StudyPrepared { .. } => "study_prepared",
            ProtocolEvent::CorrectionAttempted { .. } => "correction_attempted",
            ProtocolEvent::LbtExchange { .. } => "lbt_exchange",
            ProtocolEvent::NoteAdded { .. } => "note_added",
            ProtocolEvent::StudyFinished { .. } => "study_finished",
            ProtocolEvent::PosttestStarted { .. } => "posttest_started",
            ProtocolEvent::SurveySubmitted { .. } => "survey_submitted",
        }
    }

    pub fn at(&self) -> DateTime<Utc> {
        match self {
            ProtocolEvent::Enrolled { at, .. }
            | ProtocolEvent::RoundStarted { at, .. }
            | ProtocolEvent::TestGraded { at, .. }
            | ProtocolEvent::StudyPrepared { at, .. }
            | ProtocolEvent::CorrectionAttempted { at, .. }
            | ProtocolEvent::NoteAdded { at, .. }
            | ProtocolEvent::StudyFinished { at, .. }
            | ProtocolEvent::PosttestStarted { at, .. }
            | ProtocolEvent::SurveySubmitted { at, .. } => *at,
            ProtocolEvent::LbtExchange { student, .. } => student.at,
        }
    }

    pub fn round(&self) -> Option<usize> {
        match self {
            ProtocolEvent::RoundStarted { round, .. }
            | ProtocolEvent::TestGraded { round, .. }
            | ProtocolEvent::StudyPrepared { round, .. }
            | ProtocolEvent::CorrectionAttempted { round, .. }
            | ProtocolEvent::LbtExchange { round, .. }
            | ProtocolEvent::NoteAdded { round, .. }
            | ProtocolEvent::StudyFinished { round, .. }
            | ProtocolEvent::PosttestStarted { round, .. } => Some(*round),
            ProtocolEvent::Enrolled { .. } | ProtocolEvent::SurveySubmitted { .. } => None,
        }
    }
}

/// A teacher turn that passed the gate and awaits the student's answer.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTurnPermit {
    pub round: usize,
    pub item_id: ItemId,
    pub turn: DialogueTurn,
}

/// Per-participant aggregate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProtocolState {
    pub participant: Option<Participant>,
    pub token_digest: String,
    pub pretest_sets: Vec<Vec<ItemId>>,
    pub sessions: Vec<StudySession>,
    pub surveys: Vec<SurveyForm>,
    /// Number of events applied.
    pub version: u64,
}

/// Folds an event log into state. An empty log gives the fresh state.
pub fn replay<'a, I>(events: I) -> ProtocolState
where
    I: IntoIterator<Item = &'a ProtocolEvent>,
{
    let mut state = ProtocolState::default();
    for e in events {
        state.apply(e);
    }
    state
}

/// Replays `events` and reports any step that moves a round's phase backward.
pub fn monotonicity_violations(events: &[ProtocolEvent]) -> Vec<String> {
    let mut state = ProtocolState::default();
    let mut out = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let before: Vec<Phase> = state.sessions.iter().map(|s| s.phase).collect();
        state.apply(e);
        for (round, (old, new)) in before.iter().zip(state.sessions.iter().map(|s| s.phase)).enumerate() {
            if new < *old {
                out.push(format!("event {i} moved round {round} from {old:?} to {new:?}"));
            }
        }
    }
    out
}

impl ProtocolState {
    pub fn is_enrolled(&self) -> bool {
        self.participant.is_some()
    }

    pub fn participant(&self) -> Result<&Participant, ProtocolError> {
        self.participant.as_ref().ok_or(ProtocolError::NotEnrolled)
    }

    pub fn session(&self, round: usize) -> Result<&StudySession, ProtocolError> {
        self.participant()?;
        self.sessions.get(round).ok_or(ProtocolError::UnknownRound(round))
    }

    /// The round the participant is working on: the latest started one.
    pub fn current_round(&self) -> Option<usize> {
        self.sessions.len().checked_sub(1)
    }

    pub fn session_for(&self, condition: Condition) -> Option<&StudySession> {
        self.sessions.iter().find(|s| s.condition == condition)
    }

    pub fn survey(&self, stage: SurveyStage) -> Option<&SurveyForm> {
        self.surveys.iter().rev().find(|f| f.stage == stage)
    }

    /// Applies `events` in order.
    pub fn apply_all(&mut self, events: &[ProtocolEvent]) {
        for e in events {
            self.apply(e);
        }
    }

    pub fn apply(&mut self, event: &ProtocolEvent) {
        self.version += 1;
        match event {
            ProtocolEvent::Enrolled {
                participant,
                token_digest,
                pretest_sets,
                ..
            } => {
                self.participant = Some(participant.clone());
                self.token_digest = token_digest.clone();
                self.pretest_sets = pretest_sets.clone();
            }
            ProtocolEvent::RoundStarted {
                round,
                condition,
                pretest,
                partition,
                at,
            } => {
                let participant_id = self.participant.as_ref().map(|p| p.id.clone()).unwrap_or_default();
                let mut tests = BTreeMap::new();
                tests.insert(
                    TestKind::Pretest,
                    AdministeredTest {
                        test: pretest.clone(),
                        started_at: *at,
                        late_by_seconds: None,
                        result: None,
                        graded_at: None,
                    },
                );
                self.sessions.push(StudySession {
                    participant_id,
                    round: *round,
                    condition: *condition,
                    phase: Phase::Pretest,
                    pretest_items: pretest.item_ids(),
                    partition: partition.clone(),
                    items: Vec::new(),
                    study: BTreeMap::new(),
                    correction_attempts: BTreeMap::new(),
                    lbt_elapsed: BTreeMap::new(),
                    transcript: BTreeMap::new(),
                    schedule: None,
                    tests,
                });
            }
            ProtocolEvent::TestGraded {
                round,
                result,
                schedule,
                at,
            } => {
                let Some(s) = self.sessions.get_mut(*round) else { return };
                if let Some(t) = s.tests.get_mut(&result.test_kind) {
                    t.result = Some(result.clone());
                    t.graded_at = Some(*at);
                }
                s.phase = s.phase.max(Phase::after_grading(result.test_kind));
                if schedule.is_some() {
                    s.schedule = schedule.clone();
                }
            }
            ProtocolEvent::StudyPrepared { round, items, .. } => {
                let Some(s) = self.sessions.get_mut(*round) else { return };
                for m in items {
                    s.items.push(m.item_id.clone());
                    s.correction_attempts.insert(m.item_id.clone(), 0);
                    s.study.insert(
                        m.item_id.clone(),
                        StudyItem {
                            content: m.clone(),
                            correction: CorrectionState::Pending,
                            lbt_started_at: None,
                            notes: Vec::new(),
                        },
                    );
                }
            }
            ProtocolEvent::CorrectionAttempted {
                round,
                item_id,
                outcome,
                at,
                ..
            } => {
                let Some(s) = self.sessions.get_mut(*round) else { return };
                *s.correction_attempts.entry(item_id.clone()).or_insert(0) += 1;
                let resolved = match outcome {
                    CorrectionOutcome::Correct => Some(CorrectionState::Correct),
                    CorrectionOutcome::Revealed { .. } => Some(CorrectionState::Revealed),
                    CorrectionOutcome::IncorrectRetry { .. } => None,
                };
                let proposed = s.condition == Condition::Proposed;
                if let (Some(state), Some(item)) = (resolved, s.study.get_mut(item_id)) {
                    item.correction = state;
                    item.lbt_started_at = Some(*at);
                    s.lbt_elapsed.insert(item_id.clone(), 0.0);
                    if proposed {
                        s.transcript.insert(
                            item_id.clone(),
                            Transcript {
                                turns: vec![DialogueTurn {
                                    role: Role::Student,
                                    text: FIRST_QUESTION.to_owned(),
                                    at: *at,
                                    elapsed_lbt_seconds: 0.0,
                                }],
                            },
                        );
                    }
                }
            }
            ProtocolEvent::LbtExchange {
                round,
                item_id,
                teacher,
                student,
            } => {
                let Some(s) = self.sessions.get_mut(*round) else { return };
                s.lbt_elapsed.insert(item_id.clone(), student.elapsed_lbt_seconds);
                let t = s.transcript.entry(item_id.clone()).or_default();
                t.turns.push(teacher.clone());
                t.turns.push(student.clone());
            }
            ProtocolEvent::NoteAdded {
                round,
                item_id,
                text,
                at,
            } => {
                let Some(s) = self.sessions.get_mut(*round) else { return };
                if let Some(item) = s.study.get_mut(item_id) {
                    item.notes.push(Note {
                        text: text.clone(),
                        at: *at,
                    });
                }
            }
            ProtocolEvent::StudyFinished { round, posttest1, at } => {
                let Some(s) = self.sessions.get_mut(*round) else { return };
                s.tests.insert(
                    TestKind::Posttest1,
                    AdministeredTest {
                        test: posttest1.clone(),
                        started_at: *at,
                        late_by_seconds: None,
                        result: None,
                        graded_at: None,
                    },
                );
                s.phase = s.phase.max(Phase::Posttest1);
            }
            ProtocolEvent::PosttestStarted {
                round,
                test,
                late_by_seconds,
                at,
            } => {
                let Some(s) = self.sessions.get_mut(*round) else { return };
                s.tests.insert(
                    test.kind,
                    AdministeredTest {
                        test: test.clone(),
                        started_at: *at,
                        late_by_seconds: *late_by_seconds,
                        result: None,
                        graded_at: None,
                    },
                );
                let phase = match test.kind {
                    TestKind::Posttest2 => Phase::Posttest2,
                    _ => Phase::Posttest3,
                };
                s.phase = s.phase.max(phase);
            }
            ProtocolEvent::SurveySubmitted { form, .. } => {
                self.surveys.push(form.clone());
            }
        }
    }

    // ---- decisions ------------------------------------------------------

    pub fn enroll(
        &self,
        participant: Participant,
        token_digest: String,
        pretest_sets: Vec<Vec<ItemId>>,
        config: &ProtocolConfig,
        now: DateTime<Utc>,
    ) -> Result<ProtocolEvent, ProtocolError> {
        if self.is_enrolled() {
            return Err(ProtocolError::AlreadyEnrolled);
        }
        if pretest_sets.len() != ROUNDS {
            return Err(ProtocolError::Invalid(format!("expected {ROUNDS} pretest sets")));
        }
        let mut seen = BTreeSet::new();
        for set in &pretest_sets {
            if set.len() != config.pretest_size {
                return Err(ProtocolError::Invalid(format!(
                    "pretest set has {} items, expected {}",
                    set.len(),
                    config.pretest_size
                )));
            }
            for id in set {
                if !seen.insert(id) {
                    return Err(ProtocolError::Invalid(format!("item {id:?} appears in more than one pretest slot")));
                }
            }
        }
        Ok(ProtocolEvent::Enrolled {
            participant,
            token_digest,
            pretest_sets,
            at: now,
        })
    }

    /// The condition a round runs under, from the participant's group.
    pub fn condition_for(&self, round: usize) -> Result<Condition, ProtocolError> {
        let p = self.participant()?;
        p.group
            .condition_order()
            .get(round)
            .copied()
            .ok_or(ProtocolError::UnknownRound(round))
    }

    /// Round `round` may start once the previous round's Posttest-1 is graded.
    pub fn start_round(
        &self,
        round: usize,
        pretest: Test,
        partition: PosttestPartition,
        now: DateTime<Utc>,
    ) -> Result<ProtocolEvent, ProtocolError> {
        let condition = self.condition_for(round)?;
        if round != self.sessions.len() {
            return Err(ProtocolError::RoundOutOfOrder { round });
        }
        if let Some(prev) = round.checked_sub(1).and_then(|r| self.sessions.get(r)) {
            if prev.phase < Phase::AwaitPosttest2 {
                return Err(ProtocolError::RoundOutOfOrder { round });
            }
        }
        if pretest.kind != TestKind::Pretest {
            return Err(ProtocolError::Invalid("a round starts with a pretest".into()));
        }
        let expected: BTreeSet<&ItemId> = self.pretest_sets[round].iter().collect();
        let ids = pretest.item_ids();
        let given: BTreeSet<&ItemId> = ids.iter().collect();
        if given != expected || ids.len() != expected.len() {
            return Err(ProtocolError::Invalid("pretest does not cover the round's item set".into()));
        }
        let cells: Vec<&ItemId> = [&partition.posttest1, &partition.posttest2, &partition.posttest3]
            .into_iter()
            .flatten()
            .collect();
        if cells.len() != expected.len() || cells.iter().collect::<BTreeSet<_>>().len() != cells.len()
            || !cells.iter().all(|id| expected.contains(id))
        {
            return Err(ProtocolError::Invalid("partition does not split the pretest items".into()));
        }
        Ok(ProtocolEvent::RoundStarted {
            round,
            condition,
            pretest,
            partition,
            at: now,
        })
    }

    /// Grades the open test of `round`.
    ///
    /// A graded pretest is followed by the study preparation event, built
    /// from `study_material` for every missed item. Grading Posttest-1 fixes
    /// the retention schedule.
    pub fn grade(
        &self,
        round: usize,
        answers: &[usize],
        study_material: &dyn Fn(&ItemId) -> Option<StudyMaterial>,
        config: &ProtocolConfig,
        now: DateTime<Utc>,
    ) -> Result<(GradedTest, Vec<ProtocolEvent>), ProtocolError> {
        let s = self.session(round)?;
        let kind = s.phase.open_test().ok_or(ProtocolError::WrongPhase {
            round,
            phase: s.phase,
            action: "submit answers",
        })?;
        let administered = s.tests.get(&kind).ok_or(ProtocolError::WrongPhase {
            round,
            phase: s.phase,
            action: "submit answers",
        })?;
        let graded = grade_answers(&administered.test, answers)?;
        let schedule = (kind == TestKind::Posttest1).then(|| Schedule::starting(now, config));
        let mut events = vec![ProtocolEvent::TestGraded {
            round,
            result: graded.result.clone(),
            schedule,
            at: now,
        }];
        if kind == TestKind::Pretest {
            let items = select_study_items(&graded.result)
                .iter()
                .map(|id| study_material(id).ok_or_else(|| ProtocolError::MissingMaterial(id.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            events.push(ProtocolEvent::StudyPrepared { round, items, at: now });
        }
        Ok((graded, events))
    }

    fn study_session(&self, round: usize, action: &'static str) -> Result<&StudySession, ProtocolError> {
        let s = self.session(round)?;
        if s.phase != Phase::Study {
            return Err(ProtocolError::WrongPhase {
                round,
                phase: s.phase,
                action,
            });
        }
        Ok(s)
    }

    pub fn attempt_correction(
        &self,
        round: usize,
        item_id: &str,
        replacements: Vec<Conversion>,
        config: &ProtocolConfig,
        now: DateTime<Utc>,
    ) -> Result<(CorrectionOutcome, ProtocolEvent), ProtocolError> {
        let s = self.study_session(round, "correct a sentence")?;
        let item = s
            .study
            .get(item_id)
            .ok_or_else(|| ProtocolError::UnknownItem(item_id.to_owned()))?;
        match item.correction {
            CorrectionState::Correct => return Err(ProtocolError::AlreadyResolved(item_id.to_owned())),
            CorrectionState::Revealed => return Err(ProtocolError::AttemptsExceeded(item_id.to_owned())),
            CorrectionState::Pending => {}
        }
        let used = s.correction_attempts.get(item_id).copied().unwrap_or(0) + 1;
        let material = &item.content.material;
        let outcome = if is_correct_correction(material, &item.content.keyword, &replacements) {
            CorrectionOutcome::Correct
        } else if used >= config.max_corrections {
            CorrectionOutcome::Revealed {
                corrections: material.correct_words(),
            }
        } else {
            CorrectionOutcome::IncorrectRetry {
                remaining: config.max_corrections - used,
            }
        };
        let event = ProtocolEvent::CorrectionAttempted {
            round,
            item_id: item_id.to_owned(),
            replacements,
            outcome: outcome.clone(),
            at: now,
        };
        Ok((outcome, event))
    }

    fn resolved_item(
        &self,
        round: usize,
        item_id: &str,
        condition: Condition,
        action: &'static str,
    ) -> Result<&StudyItem, ProtocolError> {
        let s = self.study_session(round, action)?;
        if s.condition != condition {
            return Err(ProtocolError::WrongCondition {
                condition: s.condition,
                action,
            });
        }
        let item = s
            .study
            .get(item_id)
            .ok_or_else(|| ProtocolError::UnknownItem(item_id.to_owned()))?;
        if !item.is_resolved() {
            return Err(ProtocolError::CorrectionPending(item_id.to_owned()));
        }
        Ok(item)
    }

    pub fn lbt_gate(&self, round: usize, item_id: &str, config: &ProtocolConfig, now: DateTime<Utc>) -> Result<LbtGate, ProtocolError> {
        let s = self.session(round)?;
        if !s.study.contains_key(item_id) {
            return Err(ProtocolError::UnknownItem(item_id.to_owned()));
        }
        Ok(s.lbt_gate(item_id, now, config.lbt_seconds))
    }

    /// Admits a teacher turn if the item's teaching window is open at `now`.
    pub fn begin_teacher_turn(
        &self,
        round: usize,
        item_id: &str,
        text: &str,
        config: &ProtocolConfig,
        now: DateTime<Utc>,
    ) -> Result<TeacherTurnPermit, ProtocolError> {
        if text.trim().is_empty() {
            return Err(ProtocolError::Invalid("teacher turn is empty".into()));
        }
        let item = self.resolved_item(round, item_id, Condition::Proposed, "teach the student")?;
        let s = &self.sessions[round];
        if !s.lbt_gate(item_id, now, config.lbt_seconds).is_open() {
            return Err(ProtocolError::LbtExpired(item_id.to_owned()));
        }
        let at = strictly_after(now, s.transcript.get(item_id).and_then(Transcript::last_at));
        let start = item.lbt_started_at.unwrap_or(at);
        Ok(TeacherTurnPermit {
            round,
            item_id: item_id.to_owned(),
            turn: DialogueTurn {
                role: Role::Teacher,
                text: text.to_owned(),
                at,
                elapsed_lbt_seconds: elapsed_capped(start, at, config),
            },
        })
    }

    /// Records a permitted teacher turn with the student's reply. A turn
    /// admitted before expiry completes even if the reply arrives later.
    pub fn complete_teacher_turn(
        &self,
        permit: TeacherTurnPermit,
        student_text: String,
        config: &ProtocolConfig,
        now: DateTime<Utc>,
    ) -> Result<ProtocolEvent, ProtocolError> {
        let item = self.resolved_item(permit.round, &permit.item_id, Condition::Proposed, "teach the student")?;
        let at = strictly_after(now, Some(permit.turn.at));
        let start = item.lbt_started_at.unwrap_or(permit.turn.at);
        Ok(ProtocolEvent::LbtExchange {
            round: permit.round,
            item_id: permit.item_id,
            student: DialogueTurn {
                role: Role::Student,
                text: student_text,
                at,
                elapsed_lbt_seconds: elapsed_capped(start, at, config),
            },
            teacher: permit.turn,
        })
    }

    /// Free-text self-study notes, the baseline's stand-in for the dialogue.
    pub fn add_note(
        &self,
        round: usize,
        item_id: &str,
        text: &str,
        config: &ProtocolConfig,
        now: DateTime<Utc>,
    ) -> Result<ProtocolEvent, ProtocolError> {
        if text.trim().is_empty() {
            return Err(ProtocolError::Invalid("note is empty".into()));
        }
        self.resolved_item(round, item_id, Condition::Baseline, "take notes")?;
        if !self.sessions[round].lbt_gate(item_id, now, config.lbt_seconds).is_open() {
            return Err(ProtocolError::LbtExpired(item_id.to_owned()));
        }
        Ok(ProtocolEvent::NoteAdded {
            round,
            item_id: item_id.to_owned(),
            text: text.to_owned(),
            at: now,
        })
    }

    /// Ends study once every item's correction is resolved and opens
    /// Posttest-1.
    pub fn finish_study(&self, round: usize, posttest1: Test, now: DateTime<Utc>) -> Result<ProtocolEvent, ProtocolError> {
        let s = self.study_session(round, "finish studying")?;
        if let Some(pending) = s.items.iter().find(|id| !s.study[*id].is_resolved()) {
            return Err(ProtocolError::CorrectionPending(pending.clone()));
        }
        check_test_items(&posttest1, TestKind::Posttest1, s.partition.items_for(TestKind::Posttest1))?;
        Ok(ProtocolEvent::StudyFinished {
            round,
            posttest1,
            at: now,
        })
    }

    pub fn due_posttests(&self, round: usize, now: DateTime<Utc>) -> Result<Vec<DuePosttest>, ProtocolError> {
        let s = self.session(round)?;
        Ok(match &s.schedule {
            Some(schedule) => due_posttests(schedule, &s.completed_tests(), now),
            None => Vec::new(),
        })
    }

    /// Opens a retention test. Tests are taken in protocol order; a late test
    /// is still administered and its lateness recorded.
    pub fn start_posttest(&self, round: usize, test: Test, now: DateTime<Utc>) -> Result<ProtocolEvent, ProtocolError> {
        let s = self.session(round)?;
        let kind = test.kind;
        let awaiting = match kind {
            TestKind::Posttest2 => Phase::AwaitPosttest2,
            TestKind::Posttest3 => Phase::AwaitPosttest3,
            _ => return Err(ProtocolError::Invalid(format!("{kind} is not a retention test"))),
        };
        if s.phase != awaiting {
            return Err(ProtocolError::WrongPhase {
                round,
                phase: s.phase,
                action: "start a retention test",
            });
        }
        let due = self
            .due_posttests(round, now)?
            .into_iter()
            .find(|d| d.kind == kind)
            .ok_or(ProtocolError::NotDue(kind))?;
        check_test_items(&test, kind, s.partition.items_for(kind))?;
        Ok(ProtocolEvent::PosttestStarted {
            round,
            test,
            late_by_seconds: due.late_by_seconds,
            at: now,
        })
    }

    fn all_rounds_at(&self, phase: Phase) -> bool {
        self.sessions.len() == ROUNDS && self.sessions.iter().all(|s| s.phase >= phase)
    }

    /// The form for `stage`, once the protocol has reached it. The retention
    /// survey is given after Posttest-2 and again, with the extra question,
    /// after Posttest-3.
    pub fn questionnaire_for(&self, stage: SurveyStage) -> Result<SurveyForm, ProtocolError> {
        self.participant()?;
        let submitted = |final_retention: bool| {
            self.surveys
                .iter()
                .any(|f| f.stage == stage && f.final_retention == final_retention)
        };
        let reached_study = |c: Condition| self.session_for(c).is_some_and(|s| s.phase >= Phase::AwaitPosttest2);
        let final_retention = match stage {
            SurveyStage::PreExperiment => false,
            SurveyStage::AfterProposed if reached_study(Condition::Proposed) => false,
            SurveyStage::AfterBaseline if reached_study(Condition::Baseline) => false,
            SurveyStage::AfterRetention if self.all_rounds_at(Phase::Done) => true,
            SurveyStage::AfterRetention if self.all_rounds_at(Phase::AwaitPosttest3) => false,
            _ => return Err(ProtocolError::StageNotReached(stage)),
        };
        if submitted(final_retention) {
            return Err(ProtocolError::SurveyAlreadySubmitted(stage));
        }
        Ok(SurveyForm::blank(stage, final_retention))
    }

    pub fn submit_survey(&self, stage: SurveyStage, answers: Vec<String>, now: DateTime<Utc>) -> Result<ProtocolEvent, ProtocolError> {
        let mut form = self.questionnaire_for(stage)?;
        if answers.len() != form.questions.len() {
            return Err(ProtocolError::Invalid(format!(
                "expected {} answers, got {}",
                form.questions.len(),
                answers.len()
            )));
        }
        form.answers = answers;
        form.submitted_at = Some(now);
        Ok(ProtocolEvent::SurveySubmitted { form, at: now })
    }

    /// Structural checks that must hold in every reachable state.
    pub fn invariant_violations(&self, config: &ProtocolConfig) -> Vec<String> {
        let mut out = Vec::new();
        if let (Some(a), Some(b)) = (self.pretest_sets.first(), self.pretest_sets.get(1)) {
            let a: BTreeSet<_> = a.iter().collect();
            if b.iter().any(|id| a.contains(id)) {
                out.push("pretest sets overlap".to_owned());
            }
        }
        if let Some(p) = &self.participant {
            for (round, s) in self.sessions.iter().enumerate() {
                if p.group.condition_order().get(round) != Some(&s.condition) {
                    out.push(format!("round {round} runs the wrong condition"));
                }
            }
        }
        for s in &self.sessions {
            let r = s.round;
            let cells = [&s.partition.posttest1, &s.partition.posttest2, &s.partition.posttest3];
            let union: BTreeSet<&ItemId> = cells.iter().flat_map(|c| c.iter()).collect();
            let total: usize = cells.iter().map(|c| c.len()).sum();
            if total != union.len() {
                out.push(format!("round {r}: posttest partition cells intersect"));
            }
            if union != s.pretest_items.iter().collect() {
                out.push(format!("round {r}: posttest partition does not cover the pretest"));
            }
            for (id, &n) in &s.correction_attempts {
                if n > config.max_corrections {
                    out.push(format!("round {r}: {n} correction attempts on {id}"));
                }
                if let Some(item) = s.study.get(id) {
                    if item.correction == CorrectionState::Revealed && n != config.max_corrections {
                        out.push(format!("round {r}: {id} revealed after {n} attempts"));
                    }
                }
            }
            if let Some(pretest) = s.result(TestKind::Pretest) {
                let missed = select_study_items(pretest);
                if s.phase >= Phase::Study && s.items != missed {
                    out.push(format!("round {r}: study items differ from pretest misses"));
                }
            }
            for (id, t) in &s.transcript {
                if let Err(e) = t.check() {
                    out.push(format!("round {r}: transcript for {id}: {e}"));
                }
                if t.turns.iter().any(|turn| turn.elapsed_lbt_seconds > f64::from(config.lbt_seconds)) {
                    out.push(format!("round {r}: transcript for {id} exceeds the time limit"));
                }
            }
            if s.condition == Condition::Baseline && !s.transcript.is_empty() {
                out.push(format!("round {r}: baseline round has agent dialogue"));
            }
            for (kind, t) in &s.tests {
                if t.test.kind != *kind {
                    out.push(format!("round {r}: {kind} slot holds a {} test", t.test.kind));
                }
            }
        }
        if let [a, b] = self.sessions.as_slice() {
            let differs = a
                .study
                .values()
                .any(|i| b.study.get(&i.content.item_id).is_some_and(|j| i.content != j.content));
            if differs {
                out.push("an item is presented differently across conditions".to_owned());
            }
        }
        out
    }
}

fn check_test_items(test: &Test, kind: TestKind, expected: &[ItemId]) -> Result<(), ProtocolError> {
    if test.kind != kind {
        return Err(ProtocolError::Invalid(format!("expected a {kind}, got a {}", test.kind)));
    }
    let mut got = test.item_ids();
    got.sort();
    let mut want = expected.to_vec();
    want.sort();
    if got != want {
        return Err(ProtocolError::Invalid(format!("{kind} does not match its item set")));
    }
    Ok(())
}

/// Timestamps within one transcript are kept strictly increasing.
fn strictly_after(now: DateTime<Utc>, previous: Option<DateTime<Utc>>) -> DateTime<Utc> {
    match previous {
        Some(p) if now <= p => p + Duration::milliseconds(1),
        _ => now,
    }
}

fn elapsed_capped(start: DateTime<Utc>, at: DateTime<Utc>, config: &ProtocolConfig) -> f64 {
    seconds_between(start, at).min(f64::from(config.lbt_seconds))
}
