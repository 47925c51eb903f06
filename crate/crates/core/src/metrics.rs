//! Answer utilities (exact match and normalized Levenshtein similarity) and
//! teacher-forced answer losses.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Token, Vocab};
use crate::error::Result;
use crate::model::{EncoderInput, Seq2Seq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UtilityKind {
    Acc,
    Nls,
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Normalized Levenshtein similarity over characters, zeroed once the
/// normalized distance reaches 0.5. Two empty strings score 1.
pub fn nls(pred: &str, gold: &str) -> f64 {
    let p: Vec<char> = pred.chars().collect();
    let g: Vec<char> = gold.chars().collect();
    let longest = p.len().max(g.len());
    if longest == 0 {
        return 1.0;
    }
    let nl = levenshtein(&p, &g) as f64 / longest as f64;
    if nl < 0.5 {
        1.0 - nl
    } else {
        0.0
    }
}

fn canonical(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Exact match after trimming and lower-casing.
pub fn acc(pred: &str, gold: &str) -> f64 {
    if canonical(pred) == canonical(gold) {
        1.0
    } else {
        0.0
    }
}

impl UtilityKind {
    pub fn score(self, pred: &str, gold: &str) -> f64 {
        match self {
            UtilityKind::Acc => acc(pred, gold),
            UtilityKind::Nls => nls(pred, gold),
        }
    }

    /// Utility of a predicted token answer against the gold tokens, compared
    /// as rendered text.
    pub fn score_tokens(self, vocab: &Vocab, pred: &[Token], gold: &[Token]) -> f64 {
        self.score(&vocab.render(pred), &vocab.render(gold))
    }
}

/// Teacher-forced log-probabilities of each answer token and of the end
/// marker that terminates it.
pub fn answer_token_logprobs(model: &Seq2Seq, input: &EncoderInput<'_>, answer: &[Token]) -> Result<Vec<f64>> {
    model.token_logprobs(input, answer)
}

/// Negative log-likelihood of the terminated answer.
pub fn answer_loss(model: &Seq2Seq, input: &EncoderInput<'_>, answer: &[Token]) -> Result<f64> {
    Ok(-answer_token_logprobs(model, input, answer)?.iter().sum::<f64>())
}
