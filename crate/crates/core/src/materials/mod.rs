//! Question bank, material and MCQ generation, and test assembly.

mod assemble;
mod generate;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    validate_material, DomainError, ItemId, Language, MCQuestion, Material, TestKind, VocabularyItem,
};

pub use assemble::{assemble_test, AssembleError};
pub use generate::{
    generate_material, generate_mcq, GeneratedMaterial, GenerationError, GenerationSettings,
};

/// Format version written to bank files.
pub const BANK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BankError {
    #[error("cannot read or write bank file: {0}")]
    Io(#[from] std::io::Error),
    #[error("bank file is not valid JSON: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unsupported bank format version {0}")]
    Version(u32),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("duplicate item id {0:?}")]
    DuplicateItem(ItemId),
    #[error("{what} refers to unknown item {id:?}")]
    UnknownItem { what: &'static str, id: ItemId },
    #[error("question {question:?} is filed under {filed:?} but belongs to {keyword_id:?}")]
    MisfiledQuestion {
        question: String,
        filed: ItemId,
        keyword_id: ItemId,
    },
    #[error("cached material for {0:?} fails validation")]
    InvalidMaterial(ItemId),
}

/// Vocabulary items with their cached test questions and materials.
///
/// The pretest questions ship with the bank; posttest questions and
/// materials are generated on demand and cached here so that a participant
/// sees stable content.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionBank {
    #[serde(default = "default_version")]
    pub version: u32,
    pub items: Vec<VocabularyItem>,
    #[serde(default)]
    pub mcqs: BTreeMap<ItemId, Vec<MCQuestion>>,
    #[serde(default)]
    pub materials: BTreeMap<ItemId, Material>,
}

fn default_version() -> u32 {
    BANK_FORMAT_VERSION
}

impl QuestionBank {
    pub fn new(items: Vec<VocabularyItem>) -> Self {
        QuestionBank {
            version: BANK_FORMAT_VERSION,
            items,
            mcqs: BTreeMap::new(),
            materials: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, BankError> {
        let raw = std::fs::read_to_string(path)?;
        let bank: QuestionBank = serde_json::from_str(&raw)?;
        bank.validate()?;
        Ok(bank)
    }

    /// Writes through a temporary file so a crash never leaves a torn bank.
    pub fn save(&self, path: &Path) -> Result<(), BankError> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), BankError> {
        if self.version != BANK_FORMAT_VERSION {
            return Err(BankError::Version(self.version));
        }
        let mut ids = std::collections::BTreeSet::new();
        for item in &self.items {
            item.validate()?;
            if !ids.insert(item.id.as_str()) {
                return Err(BankError::DuplicateItem(item.id.clone()));
            }
        }
        for (filed, questions) in &self.mcqs {
            if !ids.contains(filed.as_str()) {
                return Err(BankError::UnknownItem {
                    what: "question list",
                    id: filed.clone(),
                });
            }
            for q in questions {
                if &q.keyword_id != filed {
                    return Err(BankError::MisfiledQuestion {
                        question: q.id.clone(),
                        filed: filed.clone(),
                        keyword_id: q.keyword_id.clone(),
                    });
                }
                q.validate()?;
            }
        }
        for (id, material) in &self.materials {
            let item = self.item(id).ok_or_else(|| BankError::UnknownItem {
                what: "material",
                id: id.clone(),
            })?;
            if !validate_material(material, &item.keyword).is_valid() {
                return Err(BankError::InvalidMaterial(id.clone()));
            }
        }
        Ok(())
    }

    pub fn item(&self, id: &str) -> Option<&VocabularyItem> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn item_ids(&self) -> Vec<ItemId> {
        self.items.iter().map(|i| i.id.clone()).collect()
    }

    /// The cached question for `id` of the given kind and language.
    pub fn mcq(&self, id: &str, kind: TestKind, language: Language) -> Option<&MCQuestion> {
        self.mcqs
            .get(id)?
            .iter()
            .find(|q| q.test_kind == kind && q.language == language)
    }

    pub fn insert_mcq(&mut self, question: MCQuestion) -> Result<(), BankError> {
        if self.item(&question.keyword_id).is_none() {
            return Err(BankError::UnknownItem {
                what: "question",
                id: question.keyword_id.clone(),
            });
        }
        question.validate()?;
        let list = self.mcqs.entry(question.keyword_id.clone()).or_default();
        list.retain(|q| !(q.test_kind == question.test_kind && q.language == question.language));
        list.push(question);
        Ok(())
    }

    pub fn material(&self, id: &str) -> Option<&Material> {
        self.materials.get(id)
    }

    pub fn insert_material(&mut self, id: &str, material: Material) -> Result<(), BankError> {
        let item = self.item(id).ok_or_else(|| BankError::UnknownItem {
            what: "material",
            id: id.to_owned(),
        })?;
        if !validate_material(&material, &item.keyword).is_valid() {
            return Err(BankError::InvalidMaterial(id.to_owned()));
        }
        self.materials.insert(id.to_owned(), material);
        Ok(())
    }
}
