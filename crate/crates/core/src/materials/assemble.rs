use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::QuestionBank;
use crate::domain::{ItemId, Language, Test, TestKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssembleError {
    #[error("no {kind} question in {language} for item {id:?}")]
    MissingQuestion { id: ItemId, kind: TestKind, language: Language },
}

/// Builds a test with one cached question per item.
///
/// Question order and each question's option order are shuffled by `seed`;
/// `correct_index` is remapped so it still points at the same option text.
pub fn assemble_test(
    bank: &QuestionBank,
    kind: TestKind,
    language: Language,
    item_ids: &[ItemId],
    seed: u64,
) -> Result<Test, AssembleError> {
    let mut questions = item_ids
        .iter()
        .map(|id| {
            bank.mcq(id, kind, language)
                .cloned()
                .ok_or_else(|| AssembleError::MissingQuestion {
                    id: id.clone(),
                    kind,
                    language,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    questions.shuffle(&mut rng);
    for q in &mut questions {
        let correct = q.options[q.correct_index].clone();
        q.options.shuffle(&mut rng);
        q.correct_index = q
            .options
            .iter()
            .position(|o| *o == correct)
            .expect("shuffle keeps every option");
    }
    Ok(Test { kind, seed, questions })
}
