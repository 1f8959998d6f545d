use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurveyStage {
    PreExperiment,
    AfterProposed,
    AfterBaseline,
    AfterRetention,
}

impl SurveyStage {
    pub const ALL: [SurveyStage; 4] = [
        SurveyStage::PreExperiment,
        SurveyStage::AfterProposed,
        SurveyStage::AfterBaseline,
        SurveyStage::AfterRetention,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SurveyStage::PreExperiment => "pre_experiment",
            SurveyStage::AfterProposed => "after_proposed",
            SurveyStage::AfterBaseline => "after_baseline",
            SurveyStage::AfterRetention => "after_retention",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|stage| stage.as_str() == s)
    }
}

pub const PRE_EXPERIMENT_QUESTIONS: [&str; 5] = [
    "What is your name?",
    "What is your age?",
    "What is your gender?",
    "How much English do you use in your daily life?",
    "Have you ever practiced Learning by Teaching (learning to teach others what you learned)?",
];

/// Asked after each study round; identical for both conditions.
pub const AFTER_STUDY_QUESTIONS: [&str; 5] = [
    "How difficult was the Pretest?",
    "How difficult was the Posttest?",
    "Did the learning lead to understanding the vocabulary efficiently?",
    "Did the learning motivate you to understand the vocabulary?",
    "Please feel free to write your thoughts and impressions.",
];

pub const AFTER_RETENTION_QUESTIONS: [&str; 5] = [
    "How difficult was the first Posttest?",
    "How difficult was the second Posttest?",
    "Was first or the second Posttest easier to solve?",
    "Please explain why you think so.",
    "Please feel free to write your thoughts and impressions.",
];

/// Only asked once the last retention test is done.
pub const CHATGPT_USAGE_QUESTION: &str = "How often do you use ChatGPT?";

/// Question texts for a stage. `final_retention` adds the ChatGPT-usage
/// question to the retention survey.
pub fn survey_questions(stage: SurveyStage, final_retention: bool) -> Vec<String> {
    let base: &[&str] = match stage {
        SurveyStage::PreExperiment => &PRE_EXPERIMENT_QUESTIONS,
        SurveyStage::AfterProposed | SurveyStage::AfterBaseline => &AFTER_STUDY_QUESTIONS,
        SurveyStage::AfterRetention => &AFTER_RETENTION_QUESTIONS,
    };
    let mut questions: Vec<String> = base.iter().map(|q| q.to_string()).collect();
    if stage == SurveyStage::AfterRetention && final_retention {
        questions.push(CHATGPT_USAGE_QUESTION.to_string());
    }
    questions
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyForm {
    pub stage: SurveyStage,
    #[serde(default)]
    pub final_retention: bool,
    pub questions: Vec<String>,
    #[serde(default)]
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submitted_at: Option<DateTime<Utc>>,
}

impl SurveyForm {
    pub fn blank(stage: SurveyStage, final_retention: bool) -> Self {
        SurveyForm {
            stage,
            final_retention,
            questions: survey_questions(stage, final_retention),
            answers: Vec::new(),
            submitted_at: None,
        }
    }
}
