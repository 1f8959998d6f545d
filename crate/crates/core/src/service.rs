//! The platform: participants, persistence and LLM calls around the
//! protocol state machine. Transport-agnostic; the HTTP layer is a thin
//! wrapper over these methods.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{AgentError, AgentSettings, InquiryHistory, StudentAgent};
use crate::analytics::{export_report, AnalyticsError, ExportFormat};
use crate::domain::{
    Condition, Conversion, DialogueTurn, Group, ItemId, Language, Material, Participant, Test, TestKind,
};
use crate::llm::LlmGateway;
use crate::materials::{
    assemble_test, generate_material, generate_mcq, AssembleError, BankError, GenerationError, GenerationSettings,
    QuestionBank,
};
use crate::protocol::{
    assign_group, partition_posttests, replay, CorrectionOutcome, CorrectionState, DuePosttest, ErrorClass,
    GradedTest, LbtGate, Note, Phase, ProtocolConfig, ProtocolError, ProtocolEvent, ProtocolState, PublicTest,
    StudyMaterial, StudySession, SurveyForm, SurveyStage, ROUNDS,
};
use crate::store::{to_json_lines, EventRecord, EventStore, StoreError};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlatformConfig {
    pub protocol: ProtocolConfig,
    pub agent: AgentSettings,
    pub generation: GenerationSettings,
    /// Base seed for pretest sets, partitions and shuffles.
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("unknown participant {0:?}")]
    UnknownParticipant(String),
    #[error("invalid or missing participant token")]
    Unauthorized,
    #[error("no test is open")]
    NoOpenTest,
    #[error("no round is in the study phase")]
    NotStudying,
    #[error("several tests are open; give a round")]
    AmbiguousRound,
    #[error("the bank has {available} usable items, {needed} are needed")]
    BankTooSmall { available: usize, needed: usize },
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Bank(#[from] BankError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceErrorClass {
    BadRequest,
    Unauthorized,
    NotFound,
    Conflict,
    /// The language model failed.
    Upstream,
    Internal,
}

impl ServiceError {
    pub fn class(&self) -> ServiceErrorClass {
        use ServiceError::*;
        match self {
            Protocol(e) => match e.class() {
                ErrorClass::BadRequest => ServiceErrorClass::BadRequest,
                ErrorClass::NotFound => ServiceErrorClass::NotFound,
                ErrorClass::Conflict => ServiceErrorClass::Conflict,
            },
            UnknownParticipant(_) => ServiceErrorClass::NotFound,
            Unauthorized => ServiceErrorClass::Unauthorized,
            NoOpenTest | NotStudying => ServiceErrorClass::Conflict,
            AmbiguousRound | Invalid(_) => ServiceErrorClass::BadRequest,
            Analytics(AnalyticsError::IncompleteData(_)) => ServiceErrorClass::Conflict,
            Generation(_) | Agent(_) => ServiceErrorClass::Upstream,
            BankTooSmall { .. } | Assemble(_) | Store(_) | Bank(_) | Analytics(_) => ServiceErrorClass::Internal,
        }
    }
}

pub type ServiceResult<T> = Result<T, ServiceError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enrollment {
    pub participant: Participant,
    /// Shown once; only its digest is stored.
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TurnOutcome {
    Question {
        question: String,
        regenerations: u32,
        elapsed_seconds: f64,
        remaining_seconds: f64,
    },
    /// The teaching time ran out; no question is asked.
    Expired { elapsed_seconds: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTest {
    pub round: usize,
    pub test: PublicTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedRound {
    pub round: usize,
    #[serde(flatten)]
    pub graded: GradedTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DueItem {
    pub round: usize,
    pub condition: Condition,
    #[serde(flatten)]
    pub due: DuePosttest,
}

/// What the learner may see of a study item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyItemView {
    pub item_id: ItemId,
    pub keyword: String,
    pub meaning: String,
    pub title: String,
    pub sentence: String,
    pub correction: CorrectionState,
    pub attempts_used: u32,
    pub attempts_remaining: u32,
    /// Evidence and accepted words, once the correction is resolved.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evidence: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrections: Option<Vec<String>>,
    pub lbt: LbtGate,
    pub dialogue: Vec<DialogueTurn>,
    pub notes: Vec<Note>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundView {
    pub round: usize,
    pub condition: Condition,
    pub phase: Phase,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub open_test: Option<PublicTest>,
    pub study: Vec<StudyItemView>,
    pub scores: BTreeMap<TestKind, f64>,
    pub due: Vec<DuePosttest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantView {
    pub participant: Participant,
    pub rounds: Vec<RoundView>,
    /// Condition of the next round to start, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub next_round: Option<Condition>,
    pub available_surveys: Vec<SurveyStage>,
    pub submitted_surveys: Vec<SurveyStage>,
    pub lbt_seconds: u32,
}

type Slot = Arc<Mutex<ProtocolState>>;

pub struct Platform {
    config: PlatformConfig,
    bank: RwLock<QuestionBank>,
    bank_path: Option<PathBuf>,
    gateway: LlmGateway,
    store: Arc<dyn EventStore>,
    participants: RwLock<BTreeMap<String, Slot>>,
    enroll_lock: Mutex<()>,
}

impl std::fmt::Debug for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Platform")
            .field("config", &self.config)
            .field("bank_path", &self.bank_path)
            .finish_non_exhaustive()
    }
}

/// Stable seed for one use, from the base seed and a label path.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn token_digest(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

impl Platform {
    /// Builds the platform and rebuilds every participant from `store`.
    pub fn new(
        config: PlatformConfig,
        bank: QuestionBank,
        gateway: LlmGateway,
        store: Arc<dyn EventStore>,
    ) -> ServiceResult<Self> {
        config
            .protocol
            .validate()
            .map_err(|e| ServiceError::Invalid(e.to_string()))?;
        bank.validate()?;
        let mut participants = BTreeMap::new();
        for id in store.session_ids()? {
            let events = store
                .load(&id)?
                .iter()
                .map(EventRecord::event)
                .collect::<Result<Vec<_>, _>>()?;
            participants.insert(id, Arc::new(Mutex::new(replay(&events))));
        }
        Ok(Platform {
            config,
            bank: RwLock::new(bank),
            bank_path: None,
            gateway,
            store,
            participants: RwLock::new(participants),
            enroll_lock: Mutex::new(()),
        })
    }

    /// Newly generated materials and questions are saved back to `path`.
    pub fn with_bank_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.bank_path = Some(path.into());
        self
    }

    pub fn config(&self) -> &PlatformConfig {
        &self.config
    }

    pub fn bank_snapshot(&self) -> QuestionBank {
        self.bank.read().expect("bank lock poisoned").clone()
    }

    pub fn participant_ids(&self) -> Vec<String> {
        self.participants.read().expect("registry lock poisoned").keys().cloned().collect()
    }

    fn slot(&self, id: &str) -> ServiceResult<Slot> {
        self.participants
            .read()
            .expect("registry lock poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownParticipant(id.to_owned()))
    }

    /// Copy of a participant's current state.
    pub fn state(&self, id: &str) -> ServiceResult<ProtocolState> {
        Ok(self.slot(id)?.lock().expect("participant lock poisoned").clone())
    }

    pub fn authenticate(&self, id: &str, token: &str) -> ServiceResult<()> {
        let slot = self.slot(id).map_err(|_| ServiceError::Unauthorized)?;
        let state = slot.lock().expect("participant lock poisoned");
        if state.token_digest.is_empty() || state.token_digest != token_digest(token) {
            return Err(ServiceError::Unauthorized);
        }
        Ok(())
    }

    /// Persists then applies. Nothing changes if the write fails.
    fn commit(&self, id: &str, state: &mut ProtocolState, events: &[ProtocolEvent]) -> ServiceResult<()> {
        let records = events
            .iter()
            .enumerate()
            .map(|(i, e)| EventRecord::from_event(id, state.version + 1 + i as u64, e))
            .collect::<Result<Vec<_>, _>>()?;
        self.store.append(&records)?;
        state.apply_all(events);
        Ok(())
    }

    fn with_state<T>(&self, id: &str, f: impl FnOnce(&mut ProtocolState) -> ServiceResult<T>) -> ServiceResult<T> {
        let slot = self.slot(id)?;
        let mut state = slot.lock().expect("participant lock poisoned");
        f(&mut state)
    }

    // ---- participants ---------------------------------------------------

    pub fn create_participant(
        &self,
        display_name: &str,
        native_language: Language,
        now: DateTime<Utc>,
    ) -> ServiceResult<Enrollment> {
        let display_name = display_name.trim();
        if display_name.is_empty() {
            return Err(ServiceError::Invalid("display name is empty".into()));
        }
        let _guard = self.enroll_lock.lock().expect("enroll lock poisoned");
        let position = self.participants.read().expect("registry lock poisoned").len();
        let id = format!("p{:03}", position + 1);
        let participant = Participant {
            id: id.clone(),
            display_name: display_name.to_owned(),
            native_language,
            group: assign_group(position),
        };
        let pretest_sets = self.draw_pretest_sets(&id, native_language)?;
        let token = hex::encode(rand::random::<[u8; 32]>());
        let mut state = ProtocolState::default();
        let event = state.enroll(
            participant.clone(),
            token_digest(&token),
            pretest_sets,
            &self.config.protocol,
            now,
        )?;
        self.commit(&id, &mut state, &[event])?;
        self.participants
            .write()
            .expect("registry lock poisoned")
            .insert(id, Arc::new(Mutex::new(state)));
        Ok(Enrollment { participant, token })
    }

    /// Two disjoint item sets, drawn by a per-participant seeded shuffle of
    /// the items that have a pretest question in the learner's language.
    fn draw_pretest_sets(&self, id: &str, language: Language) -> ServiceResult<Vec<Vec<ItemId>>> {
        let bank = self.bank.read().expect("bank lock poisoned");
        let mut usable: Vec<ItemId> = bank
            .item_ids()
            .into_iter()
            .filter(|i| bank.mcq(i, TestKind::Pretest, language).is_some())
            .collect();
        let size = self.config.protocol.pretest_size;
        let needed = ROUNDS * size;
        if usable.len() < needed {
            return Err(ServiceError::BankTooSmall {
                available: usable.len(),
                needed,
            });
        }
        usable.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[id, "pretest-sets"])));
        Ok(usable.chunks(size).take(ROUNDS).map(|c| c.to_vec()).collect())
    }

    // ---- content --------------------------------------------------------

    fn save_bank(&self, bank: &QuestionBank) -> ServiceResult<()> {
        if let Some(path) = &self.bank_path {
            bank.save(path)?;
        }
        Ok(())
    }

    fn ensure_material(&self, item_id: &str) -> ServiceResult<Material> {
        if let Some(m) = self.bank.read().expect("bank lock poisoned").material(item_id) {
            return Ok(m.clone());
        }
        let keyword = {
            let bank = self.bank.read().expect("bank lock poisoned");
            bank.item(item_id)
                .ok_or_else(|| ServiceError::Invalid(format!("unknown item {item_id:?}")))?
                .keyword
                .clone()
        };
        let g = &self.config.generation;
        let generated = generate_material(&self.gateway, g, &keyword, g.max_attempts.max(1))?;
        let mut bank = self.bank.write().expect("bank lock poisoned");
        if let Some(m) = bank.material(item_id) {
            return Ok(m.clone());
        }
        bank.insert_material(item_id, generated.material.clone())?;
        self.save_bank(&bank)?;
        Ok(generated.material)
    }

    fn ensure_questions(&self, items: &[ItemId], kind: TestKind, language: Language) -> ServiceResult<()> {
        let missing: Vec<_> = {
            let bank = self.bank.read().expect("bank lock poisoned");
            items
                .iter()
                .filter(|id| bank.mcq(id, kind, language).is_none())
                .map(|id| bank.item(id).cloned().ok_or_else(|| ServiceError::Invalid(format!("unknown item {id:?}"))))
                .collect::<Result<_, _>>()?
        };
        if missing.is_empty() {
            return Ok(());
        }
        let g = &self.config.generation;
        let generated = missing
            .iter()
            .map(|item| generate_mcq(&self.gateway, g, item, kind, language, g.n_options))
            .collect::<Result<Vec<_>, _>>()?;
        let mut bank = self.bank.write().expect("bank lock poisoned");
        for q in generated {
            if bank.mcq(&q.keyword_id, kind, language).is_none() {
                bank.insert_mcq(q)?;
            }
        }
        self.save_bank(&bank)?;
        Ok(())
    }

    fn build_test(&self, id: &str, round: usize, kind: TestKind, items: &[ItemId], language: Language) -> ServiceResult<Test> {
        self.ensure_questions(items, kind, language)?;
        let seed = derive_seed(self.config.seed, &[id, &round.to_string(), kind.as_str()]);
        let bank = self.bank.read().expect("bank lock poisoned");
        Ok(assemble_test(&bank, kind, language, items, seed)?)
    }

    fn study_material(&self, item_id: &ItemId, language: Language) -> Option<StudyMaterial> {
        let material = self.ensure_material(item_id).ok()?;
        let bank = self.bank.read().expect("bank lock poisoned");
        let item = bank.item(item_id)?;
        Some(StudyMaterial {
            item_id: item_id.clone(),
            keyword: item.keyword.clone(),
            meaning: item.meaning(language).to_owned(),
            material,
        })
    }

    // ---- protocol -------------------------------------------------------

    /// Starts the next round and returns its pretest.
    pub fn start_round(&self, id: &str, now: DateTime<Utc>) -> ServiceResult<RoundTest> {
        self.with_state(id, |state| {
            let round = state.sessions.len();
            let language = state.participant()?.native_language;
            let items = state
                .pretest_sets
                .get(round)
                .cloned()
                .ok_or(ProtocolError::RoundOutOfOrder { round })?;
            state.condition_for(round)?;
            let pretest = self.build_test(id, round, TestKind::Pretest, &items, language)?;
            let seed = derive_seed(self.config.seed, &[id, &round.to_string(), "partition"]);
            let partition = partition_posttests(&items, seed, self.config.protocol.posttest_size)
                .map_err(|e| ServiceError::Invalid(e.to_string()))?;
            let event = state.start_round(round, pretest.clone(), partition, now)?;
            self.commit(id, state, &[event])?;
            Ok(RoundTest {
                round,
                test: PublicTest::from(&pretest),
            })
        })
    }

    fn open_round(state: &ProtocolState, round: Option<usize>) -> ServiceResult<usize> {
        if let Some(r) = round {
            state.session(r)?;
            return Ok(r);
        }
        let open: Vec<usize> = state
            .sessions
            .iter()
            .enumerate()
            .filter(|(_, s)| s.phase.open_test().is_some())
            .map(|(i, _)| i)
            .collect();
        match open.as_slice() {
            [r] => Ok(*r),
            [] => Err(ServiceError::NoOpenTest),
            _ => Err(ServiceError::AmbiguousRound),
        }
    }

    fn study_round(state: &ProtocolState) -> ServiceResult<usize> {
        state
            .sessions
            .iter()
            .position(|s| s.phase == Phase::Study)
            .ok_or(ServiceError::NotStudying)
    }

    pub fn current_test(&self, id: &str, round: Option<usize>) -> ServiceResult<RoundTest> {
        let state = self.state(id)?;
        let round = Self::open_round(&state, round)?;
        let s = &state.sessions[round];
        let kind = s.phase.open_test().ok_or(ServiceError::NoOpenTest)?;
        Ok(RoundTest {
            round,
            test: PublicTest::from(&s.tests[&kind].test),
        })
    }

    /// Grades the open test. A pretest also prepares the study items.
    pub fn submit_answers(
        &self,
        id: &str,
        round: Option<usize>,
        answers: &[usize],
        now: DateTime<Utc>,
    ) -> ServiceResult<GradedRound> {
        self.with_state(id, |state| {
            let round = Self::open_round(state, round)?;
            let language = state.participant()?.native_language;
            let lookup = |item: &ItemId| self.study_material(item, language);
            let (graded, events) = state.grade(round, answers, &lookup, &self.config.protocol, now)?;
            self.commit(id, state, &events)?;
            Ok(GradedRound { round, graded })
        })
    }

    pub fn attempt_correction(
        &self,
        id: &str,
        item_id: &str,
        replacements: Vec<Conversion>,
        now: DateTime<Utc>,
    ) -> ServiceResult<CorrectionOutcome> {
        self.with_state(id, |state| {
            let round = Self::study_round(state)?;
            let (outcome, event) =
                state.attempt_correction(round, item_id, replacements, &self.config.protocol, now)?;
            self.commit(id, state, &[event])?;
            Ok(outcome)
        })
    }

    /// Passes a teacher turn to the student agent. The reply is stamped at
    /// `now` plus the time the agent took.
    pub fn teacher_turn(&self, id: &str, item_id: &str, text: &str, now: DateTime<Utc>) -> ServiceResult<TurnOutcome> {
        self.with_state(id, |state| {
            let round = Self::study_round(state)?;
            let config = &self.config.protocol;
            let permit = match state.begin_teacher_turn(round, item_id, text, config, now) {
                Ok(p) => p,
                Err(ProtocolError::LbtExpired(_)) => {
                    let elapsed = state.sessions[round].lbt_elapsed.get(item_id).copied().unwrap_or(0.0);
                    return Ok(TurnOutcome::Expired {
                        elapsed_seconds: elapsed.max(f64::from(config.lbt_seconds)),
                    });
                }
                Err(e) => return Err(e.into()),
            };
            let s = &state.sessions[round];
            let item = &s.study[item_id];
            let mut history = InquiryHistory::from_recorded(
                s.transcript
                    .get(item_id)
                    .map(|t| t.student_questions().map(str::to_owned).collect::<Vec<_>>())
                    .unwrap_or_default(),
            );
            let language = state.participant()?.native_language;
            let started = Instant::now();
            let agent = StudentAgent::new(&self.gateway, &self.config.agent);
            let asked = agent.next_question(
                &item.content.material,
                &item.content.keyword,
                text,
                &mut history,
                language,
            )?;
            let took = Duration::from_std(started.elapsed()).unwrap_or_else(|_| Duration::zero());
            let event = state.complete_teacher_turn(permit, asked.text.clone(), config, now + took)?;
            let elapsed = match &event {
                ProtocolEvent::LbtExchange { student, .. } => student.elapsed_lbt_seconds,
                _ => 0.0,
            };
            self.commit(id, state, &[event])?;
            Ok(TurnOutcome::Question {
                question: asked.text,
                regenerations: asked.regenerations,
                elapsed_seconds: elapsed,
                remaining_seconds: (f64::from(config.lbt_seconds) - elapsed).max(0.0),
            })
        })
    }

    pub fn add_note(&self, id: &str, item_id: &str, text: &str, now: DateTime<Utc>) -> ServiceResult<()> {
        self.with_state(id, |state| {
            let round = Self::study_round(state)?;
            let event = state.add_note(round, item_id, text, &self.config.protocol, now)?;
            self.commit(id, state, &[event])
        })
    }

    /// Ends study and opens Posttest-1.
    pub fn finish_study(&self, id: &str, now: DateTime<Utc>) -> ServiceResult<RoundTest> {
        self.with_state(id, |state| {
            let round = Self::study_round(state)?;
            let language = state.participant()?.native_language;
            let items = state.sessions[round].partition.posttest1.clone();
            let test = self.build_test(id, round, TestKind::Posttest1, &items, language)?;
            let event = state.finish_study(round, test.clone(), now)?;
            self.commit(id, state, &[event])?;
            Ok(RoundTest {
                round,
                test: PublicTest::from(&test),
            })
        })
    }

    pub fn due_posttests(&self, id: &str, now: DateTime<Utc>) -> ServiceResult<Vec<DueItem>> {
        let state = self.state(id)?;
        let mut out = Vec::new();
        for (round, s) in state.sessions.iter().enumerate() {
            for due in state.due_posttests(round, now)? {
                out.push(DueItem {
                    round,
                    condition: s.condition,
                    due,
                });
            }
        }
        Ok(out)
    }

    pub fn start_posttest(&self, id: &str, round: usize, kind: TestKind, now: DateTime<Utc>) -> ServiceResult<RoundTest> {
        self.with_state(id, |state| {
            let s = state.session(round)?;
            let language = state.participant()?.native_language;
            // Refuse early before spending model calls on question generation.
            if !state.due_posttests(round, now)?.iter().any(|d| d.kind == kind) {
                return Err(ProtocolError::NotDue(kind).into());
            }
            let items = s.partition.items_for(kind).to_vec();
            let test = self.build_test(id, round, kind, &items, language)?;
            let event = state.start_posttest(round, test.clone(), now)?;
            self.commit(id, state, &[event])?;
            Ok(RoundTest {
                round,
                test: PublicTest::from(&test),
            })
        })
    }

    pub fn questionnaire(&self, id: &str, stage: SurveyStage) -> ServiceResult<SurveyForm> {
        Ok(self.state(id)?.questionnaire_for(stage)?)
    }

    pub fn submit_survey(&self, id: &str, stage: SurveyStage, answers: Vec<String>, now: DateTime<Utc>) -> ServiceResult<()> {
        self.with_state(id, |state| {
            let event = state.submit_survey(stage, answers, now)?;
            self.commit(id, state, &[event])
        })
    }

    // ---- read side ------------------------------------------------------

    pub fn view(&self, id: &str, now: DateTime<Utc>) -> ServiceResult<ParticipantView> {
        let state = self.state(id)?;
        let participant = state.participant()?.clone();
        let config = &self.config.protocol;
        let rounds = state
            .sessions
            .iter()
            .enumerate()
            .map(|(round, s)| {
                Ok(RoundView {
                    round,
                    condition: s.condition,
                    phase: s.phase,
                    open_test: s.phase.open_test().and_then(|k| s.tests.get(&k)).map(|t| PublicTest::from(&t.test)),
                    study: study_views(s, config, now),
                    scores: s
                        .tests
                        .iter()
                        .filter_map(|(k, t)| Some((*k, t.result.as_ref()?.score_percent)))
                        .collect(),
                    due: state.due_posttests(round, now)?,
                })
            })
            .collect::<ServiceResult<Vec<_>>>()?;
        let next_round = state.condition_for(state.sessions.len()).ok().filter(|_| {
            state
                .sessions
                .last()
                .is_none_or(|s| s.phase >= Phase::AwaitPosttest2)
        });
        let available_surveys = SurveyStage::ALL
            .into_iter()
            .filter(|s| state.questionnaire_for(*s).is_ok())
            .collect();
        Ok(ParticipantView {
            participant,
            rounds,
            next_round,
            available_surveys,
            submitted_surveys: state.surveys.iter().map(|f| f.stage).collect(),
            lbt_seconds: config.lbt_seconds,
        })
    }

    /// Stored event log, one JSON record per line. All participants when
    /// `id` is `None`.
    pub fn events_jsonl(&self, id: Option<&str>) -> ServiceResult<String> {
        let ids = match id {
            Some(id) => {
                self.slot(id)?;
                vec![id.to_owned()]
            }
            None => self.store.session_ids()?,
        };
        let mut records = Vec::new();
        for id in ids {
            records.extend(self.store.load(&id)?);
        }
        Ok(to_json_lines(&records)?)
    }

    /// State rebuilt from the stored log.
    pub fn replayed_state(&self, id: &str) -> ServiceResult<ProtocolState> {
        let events = self
            .store
            .load(id)?
            .iter()
            .map(EventRecord::event)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(replay(&events))
    }

    pub fn all_states(&self) -> Vec<ProtocolState> {
        let slots: Vec<Slot> = self.participants.read().expect("registry lock poisoned").values().cloned().collect();
        slots
            .iter()
            .map(|s| s.lock().expect("participant lock poisoned").clone())
            .collect()
    }

    pub fn export_analytics(&self, format: ExportFormat) -> ServiceResult<String> {
        Ok(export_report(&self.all_states(), format, self.config.agent.duplicate_threshold)?)
    }

    pub fn group_counts(&self) -> BTreeMap<Group, usize> {
        let mut counts = BTreeMap::new();
        for s in self.all_states() {
            if let Some(p) = s.participant {
                *counts.entry(p.group).or_insert(0) += 1;
            }
        }
        counts
    }
}

fn study_views(s: &StudySession, config: &ProtocolConfig, now: DateTime<Utc>) -> Vec<StudyItemView> {
    s.items
        .iter()
        .map(|item_id| {
            let item = &s.study[item_id];
            let used = s.correction_attempts.get(item_id).copied().unwrap_or(0);
            let resolved = item.is_resolved();
            let m = &item.content.material;
            StudyItemView {
                item_id: item_id.clone(),
                keyword: item.content.keyword.clone(),
                meaning: item.content.meaning.clone(),
                title: m.title.clone(),
                sentence: m.content.clone(),
                correction: item.correction,
                attempts_used: used,
                attempts_remaining: config.max_corrections.saturating_sub(used),
                evidence: resolved.then(|| m.evidence.clone()),
                corrections: resolved.then(|| m.correct_words()),
                lbt: s.lbt_gate(item_id, now, config.lbt_seconds),
                dialogue: s.transcript.get(item_id).map(|t| t.turns.clone()).unwrap_or_default(),
                notes: item.notes.clone(),
            }
        })
        .collect()
}
