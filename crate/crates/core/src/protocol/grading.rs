use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ItemId, ItemOutcome, Test, TestKind, TestResult};

/// Results and explanations are shown after every this many answers.
pub const FEEDBACK_PAGE_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GradingError {
    #[error("expected {expected} answers, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("answer {choice} to question {question} is not one of its {options} options")]
    InvalidChoice {
        question: usize,
        choice: usize,
        options: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub question_id: String,
    pub chosen_index: usize,
    pub correct_index: usize,
    pub correct: bool,
    /// Present for pretests only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

/// Feedback for one page of up to [`FEEDBACK_PAGE_SIZE`] questions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackBlock {
    /// Zero-based position of the block's first question.
    pub first_question: usize,
    pub correct_count: usize,
    pub entries: Vec<FeedbackEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradedTest {
    pub result: TestResult,
    pub feedback: Vec<FeedbackBlock>,
}

/// Grades `answers` (chosen option indices, one per question in test order).
pub fn grade_answers(test: &Test, answers: &[usize]) -> Result<GradedTest, GradingError> {
    if answers.len() != test.questions.len() {
        return Err(GradingError::LengthMismatch {
            expected: test.questions.len(),
            got: answers.len(),
        });
    }
    let mut per_item = Vec::with_capacity(answers.len());
    for (i, (q, &choice)) in test.questions.iter().zip(answers).enumerate() {
        if choice >= q.options.len() {
            return Err(GradingError::InvalidChoice {
                question: i,
                choice,
                options: q.options.len(),
            });
        }
        per_item.push(ItemOutcome {
            question_id: q.id.clone(),
            keyword_id: q.keyword_id.clone(),
            chosen_index: choice,
            correct: choice == q.correct_index,
        });
    }

    let with_explanations = test.kind == TestKind::Pretest;
    let feedback = test
        .questions
        .chunks(FEEDBACK_PAGE_SIZE)
        .zip(per_item.chunks(FEEDBACK_PAGE_SIZE))
        .enumerate()
        .map(|(page, (questions, outcomes))| {
            let entries: Vec<FeedbackEntry> = questions
                .iter()
                .zip(outcomes)
                .map(|(q, o)| FeedbackEntry {
                    question_id: q.id.clone(),
                    chosen_index: o.chosen_index,
                    correct_index: q.correct_index,
                    correct: o.correct,
                    explanation: with_explanations.then(|| q.explanation.clone()),
                })
                .collect();
            FeedbackBlock {
                first_question: page * FEEDBACK_PAGE_SIZE,
                correct_count: entries.iter().filter(|e| e.correct).count(),
                entries,
            }
        })
        .collect();

    Ok(GradedTest {
        result: TestResult::new(test.kind, per_item),
        feedback,
    })
}

/// Items answered wrongly, in the order they were presented.
pub fn select_study_items(pretest: &TestResult) -> Vec<ItemId> {
    pretest
        .per_item
        .iter()
        .filter(|o| !o.correct)
        .map(|o| o.keyword_id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosttestPartition {
    pub posttest1: Vec<ItemId>,
    pub posttest2: Vec<ItemId>,
    pub posttest3: Vec<ItemId>,
}

impl PosttestPartition {
    pub fn items_for(&self, kind: TestKind) -> &[ItemId] {
        match kind {
            TestKind::Pretest => &[],
            TestKind::Posttest1 => &self.posttest1,
            TestKind::Posttest2 => &self.posttest2,
            TestKind::Posttest3 => &self.posttest3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PartitionError {
    #[error("expected {expected} pretest items, got {got}")]
    WrongItemCount { expected: usize, got: usize },
    #[error("item {0:?} appears more than once")]
    DuplicateItem(ItemId),
}

/// Splits the pretest items into three disjoint posttest sets of
/// `posttest_size` each, by a seeded shuffle.
pub fn partition_posttests(
    pretest_items: &[ItemId],
    seed: u64,
    posttest_size: usize,
) -> Result<PosttestPartition, PartitionError> {
    let expected = 3 * posttest_size;
    if pretest_items.len() != expected {
        return Err(PartitionError::WrongItemCount {
            expected,
            got: pretest_items.len(),
        });
    }
    let mut seen = BTreeSet::new();
    for id in pretest_items {
        if !seen.insert(id) {
            return Err(PartitionError::DuplicateItem(id.clone()));
        }
    }
    let mut shuffled = pretest_items.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let posttest3 = shuffled.split_off(2 * posttest_size);
    let posttest2 = shuffled.split_off(posttest_size);
    Ok(PosttestPartition {
        posttest1: shuffled,
        posttest2,
        posttest3,
    })
}
