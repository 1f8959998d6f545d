//! The study protocol: tests, correction loop, teaching window, retention
//! schedule and surveys, as an event-sourced state machine per participant.

mod config;
mod grading;
mod schedule;
mod session;
mod state;
mod survey;

use serde::{Deserialize, Serialize};

use crate::domain::{Test, TestKind};

pub use config::{ConfigError, ProtocolConfig};
pub use grading::{
    grade_answers, partition_posttests, select_study_items, FeedbackBlock, FeedbackEntry, GradedTest, GradingError,
    PartitionError, PosttestPartition, FEEDBACK_PAGE_SIZE,
};
pub use schedule::{assign_group, due_posttests, DuePosttest, Schedule};
pub use session::{
    is_correct_correction, AdministeredTest, CorrectionOutcome, CorrectionState, LbtGate, Note, Phase, StudyItem,
    StudyMaterial, StudySession,
};
pub use state::{
    monotonicity_violations, replay, ErrorClass, ProtocolError, ProtocolEvent, ProtocolState, TeacherTurnPermit,
    ROUNDS,
};
pub use survey::{
    survey_questions, SurveyForm, SurveyStage, AFTER_RETENTION_QUESTIONS, AFTER_STUDY_QUESTIONS,
    CHATGPT_USAGE_QUESTION, PRE_EXPERIMENT_QUESTIONS,
};

/// A question as shown to the learner: no answer, no explanation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicQuestion {
    pub id: String,
    pub stem: String,
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicTest {
    pub kind: TestKind,
    pub questions: Vec<PublicQuestion>,
}

impl From<&Test> for PublicTest {
    fn from(test: &Test) -> Self {
        PublicTest {
            kind: test.kind,
            questions: test
                .questions
                .iter()
                .map(|q| PublicQuestion {
                    id: q.id.clone(),
                    stem: q.stem.clone(),
                    options: q.options.clone(),
                })
                .collect(),
        }
    }
}
