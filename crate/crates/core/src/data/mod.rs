//! The synthetic document world: key-value records, their question-answer
//! pairs, member/non-member splits and question rephrasing.

mod corpus;
mod templates;
mod vocab;

pub use corpus::{
    examples_of, generate_corpus, Corpus, CorpusConfig, DocId, DocRecord, Document, Field, Labeled, QAPair,
};
pub use templates::{
    perturb_questions, question_tokens, PerturbationMode, PerturbationSpec, TRAINING_TEMPLATES, VARIANT_TEMPLATES,
};
pub use vocab::{Token, Vocab, BOS, EOS, FIELD_SEP, PAD, SEP};
