use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub type Token = usize;

pub const PAD: Token = 0;
pub const BOS: Token = 1;
pub const EOS: Token = 2;
pub const SEP: Token = 3;
pub const FIELD_SEP: Token = 4;

const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<sep>", ";"];

pub(crate) const WORDS: [&str; 14] = [
    "what", "is", "the", "value", "of", "?", "give", "for", "tell", "me", "find", "entry", "show", "field",
];

const KEY_NAMES: [&str; 24] = [
    "total", "date", "invoice", "vendor", "tax", "due", "account", "phone", "zip", "city", "ref", "qty",
    "price", "item", "code", "client", "iban", "order", "street", "country", "email", "fax", "page", "batch",
];

const VALUE_CHARS: &str = "abcdefghijklmnopqrstuvwxyz0123456789";

/// Token inventory of the synthetic document world.
///
/// Layout: specials, question words, field keys, then single-character
/// value tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    n_keys: usize,
    n_values: usize,
}

impl Vocab {
    pub const MAX_KEYS: usize = KEY_NAMES.len();
    pub const MAX_VALUES: usize = 36;

    pub fn new(n_keys: usize, n_values: usize) -> Result<Self> {
        if n_keys == 0 || n_keys > Self::MAX_KEYS {
            return Err(Error::InfeasibleConfig(alloc::format!(
                "{n_keys} keys requested, vocabulary holds 1..={}",
                Self::MAX_KEYS
            )));
        }
        if n_values == 0 || n_values > Self::MAX_VALUES {
            return Err(Error::InfeasibleConfig(alloc::format!(
                "value alphabet of {n_values} requested, vocabulary holds 1..={}",
                Self::MAX_VALUES
            )));
        }
        Ok(Vocab { n_keys, n_values })
    }

    pub fn len(&self) -> usize {
        SPECIALS.len() + WORDS.len() + self.n_keys + self.n_values
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_keys(&self) -> usize {
        self.n_keys
    }

    pub fn n_values(&self) -> usize {
        self.n_values
    }

    pub fn word(&self, w: &str) -> Token {
        let i = WORDS.iter().position(|x| *x == w).expect("known question word");
        SPECIALS.len() + i
    }

    pub fn key(&self, i: usize) -> Token {
        debug_assert!(i < self.n_keys);
        SPECIALS.len() + WORDS.len() + i
    }

    pub fn value(&self, i: usize) -> Token {
        debug_assert!(i < self.n_values);
        SPECIALS.len() + WORDS.len() + self.n_keys + i
    }

    pub fn is_key(&self, t: Token) -> bool {
        let lo = SPECIALS.len() + WORDS.len();
        (lo..lo + self.n_keys).contains(&t)
    }

    pub fn is_value(&self, t: Token) -> bool {
        let lo = SPECIALS.len() + WORDS.len() + self.n_keys;
        (lo..lo + self.n_values).contains(&t)
    }

    pub fn is_special(&self, t: Token) -> bool {
        t < SPECIALS.len()
    }

    pub fn text(&self, t: Token) -> &str {
        let w = SPECIALS.len();
        let k = w + WORDS.len();
        let v = k + self.n_keys;
        if t < w {
            SPECIALS[t]
        } else if t < k {
            WORDS[t - w]
        } else if t < v {
            KEY_NAMES[t - k]
        } else if t < v + self.n_values {
            let i = t - v;
            &VALUE_CHARS[i..i + 1]
        } else {
            "<unk>"
        }
    }

    /// Detokenizes to a display string: value characters are joined directly,
    /// other tokens are space separated, padding and sequence markers dropped.
    pub fn render(&self, tokens: &[Token]) -> String {
        let mut out = String::new();
        let mut prev_value = false;
        for &t in tokens {
            if matches!(t, PAD | BOS | EOS) {
                continue;
            }
            let is_val = self.is_value(t);
            if !out.is_empty() && !(is_val && prev_value) {
                out.push(' ');
            }
            out.push_str(self.text(t));
            prev_value = is_val;
        }
        out
    }

    pub fn check(&self, tokens: &[Token]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.len()) {
            Some(&t) => Err(Error::OutOfVocabulary { token: t, vocab: self.len() }),
            None => Ok(()),
        }
    }

    pub fn all_texts(&self) -> Vec<&str> {
        (0..self.len()).map(|t| self.text(t)).collect()
    }
}
