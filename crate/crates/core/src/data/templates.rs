use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::corpus::{DocRecord, QAPair};
use super::vocab::{Token, Vocab};
use crate::error::{Error, Result};

/// Templates used to phrase training questions.
pub const TRAINING_TEMPLATES: [u16; 3] = [0, 1, 2];
/// Alternate surface forms never seen during training.
pub const VARIANT_TEMPLATES: [u16; 3] = [3, 4, 5];

pub fn question_tokens(vocab: &Vocab, template_id: u16, key: Token) -> Result<Vec<Token>> {
    let w = |s| vocab.word(s);
    Ok(match template_id {
        0 => vec![w("what"), w("is"), w("the"), key, w("?")],
        1 => vec![w("give"), w("the"), key, w("value")],
        2 => vec![key, w("value"), w("?")],
        3 => vec![w("tell"), w("me"), w("the"), key],
        4 => vec![w("find"), w("the"), key, w("entry")],
        5 => vec![w("show"), w("field"), key, w("?")],
        other => return Err(Error::UnknownTemplate(other)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationMode {
    Exact,
    TemplateVariant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub mode: PerturbationMode,
    pub variant_seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        Self::EXACT
    }
}

impl PerturbationSpec {
    pub const EXACT: PerturbationSpec = PerturbationSpec { mode: PerturbationMode::Exact, variant_seed: 0 };
}

/// Rephrases every question of `record`; answers are untouched.
pub fn perturb_questions(vocab: &Vocab, record: &DocRecord, spec: PerturbationSpec) -> Result<Vec<QAPair>> {
    if record.qas.is_empty() {
        return Err(Error::Empty("document has no question-answer pairs"));
    }
    record
        .qas
        .iter()
        .map(|qa| {
            if usize::from(qa.template_id) >= TRAINING_TEMPLATES.len() + VARIANT_TEMPLATES.len() {
                return Err(Error::UnknownTemplate(qa.template_id));
            }
            match spec.mode {
                PerturbationMode::Exact => Ok(qa.clone()),
                PerturbationMode::TemplateVariant => {
                    let n = VARIANT_TEMPLATES.len() as u64;
                    let pick = (u64::from(qa.template_id) + spec.variant_seed) % n;
                    let template_id = VARIANT_TEMPLATES[pick as usize];
                    Ok(QAPair {
                        question: question_tokens(vocab, template_id, qa.field_key)?,
                        answer: qa.answer.clone(),
                        template_id,
                        field_key: qa.field_key,
                    })
                }
            }
        })
        .collect()
}
