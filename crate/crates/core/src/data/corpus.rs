use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::templates::{question_tokens, TRAINING_TEMPLATES};
use super::vocab::{Token, Vocab, FIELD_SEP};
use crate::error::{Error, Result};
use crate::rng::{Seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DocId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub key: Token,
    pub value: Vec<Token>,
}

/// A key-value record; the unit of membership.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: DocId,
    pub fields: Vec<Field>,
}

impl Document {
    /// Token sequence fed to the encoder: `key value.. ;` per field.
    pub fn linearize(&self) -> Vec<Token> {
        let mut out = Vec::new();
        for f in &self.fields {
            out.push(f.key);
            out.extend_from_slice(&f.value);
            out.push(FIELD_SEP);
        }
        out
    }

    pub fn value_of(&self, key: Token) -> Option<&[Token]> {
        self.fields.iter().find(|f| f.key == key).map(|f| f.value.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub question: Vec<Token>,
    pub answer: Vec<Token>,
    pub template_id: u16,
    pub field_key: Token,
}

/// A document together with its question-answer pairs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocRecord {
    pub document: Document,
    pub qas: Vec<QAPair>,
}

impl DocRecord {
    pub fn id(&self) -> DocId {
        self.document.doc_id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// Size of the target's training set.
    pub n_train: usize,
    /// Members sampled from the training set for the attack set.
    pub n_member: usize,
    /// Held-out documents for the attack set.
    pub n_nonmember: usize,
    /// Disjoint pool used to pretrain proxy models.
    pub n_pretrain: usize,
    pub n_keys: usize,
    pub n_values: usize,
    pub min_fields: usize,
    pub max_fields: usize,
    pub max_value_len: usize,
    /// Largest number of questions attached to one document.
    pub m_max: usize,
    /// Probability mass at exactly one question.
    pub single_question_fraction: f64,
    /// Continuation probability of the geometric tail for documents with
    /// two or more questions.
    pub question_continue_p: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_train: 200,
            n_member: 50,
            n_nonmember: 50,
            n_pretrain: 200,
            n_keys: 16,
            n_values: 36,
            min_fields: 2,
            max_fields: 10,
            max_value_len: 4,
            m_max: 10,
            single_question_fraction: 0.3,
            question_continue_p: 0.6,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InfeasibleConfig(m.into()));
        if self.n_member > self.n_train {
            return bad("n_member exceeds n_train");
        }
        if self.min_fields == 0 || self.min_fields > self.max_fields {
            return bad("need 1 <= min_fields <= max_fields");
        }
        if self.max_fields > self.n_keys {
            return bad("max_fields exceeds the number of distinct keys");
        }
        if self.m_max == 0 || self.m_max > self.max_fields {
            return bad("need 1 <= m_max <= max_fields");
        }
        if self.max_value_len == 0 {
            return bad("max_value_len must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.single_question_fraction) || !(0.0..1.0).contains(&self.question_continue_p) {
            return bad("question-count probabilities out of range");
        }
        Vocab::new(self.n_keys, self.n_values).map(|_| ())
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::new(self.n_keys, self.n_values)
    }
}

/// The synthetic world: training set, attack set and the disjoint pretrain pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub seed: Seed,
    pub train: Vec<DocRecord>,
    /// Ids of training documents placed in the attack set.
    pub members: Vec<DocId>,
    pub nonmembers: Vec<DocRecord>,
    pub pretrain: Vec<DocRecord>,
}

/// One attack-set entry with its ground-truth label.
#[derive(Debug, Clone, Copy)]
pub struct Labeled<'c> {
    pub record: &'c DocRecord,
    pub is_member: bool,
}

impl Corpus {
    pub fn vocab(&self) -> Vocab {
        self.config.vocab().expect("validated at generation")
    }

    /// Members (in training order) followed by non-members.
    pub fn attack_set(&self) -> Vec<Labeled<'_>> {
        let ids: BTreeSet<DocId> = self.members.iter().copied().collect();
        let mut out: Vec<Labeled<'_>> = self
            .train
            .iter()
            .filter(|r| ids.contains(&r.id()))
            .map(|record| Labeled { record, is_member: true })
            .collect();
        out.extend(self.nonmembers.iter().map(|record| Labeled { record, is_member: false }));
        out
    }

    pub fn member_records(&self) -> Vec<&DocRecord> {
        self.attack_set().into_iter().filter(|l| l.is_member).map(|l| l.record).collect()
    }

    /// Every `(document, qa)` of the training set, one example per pair.
    pub fn train_examples(&self) -> Vec<(&Document, &QAPair)> {
        examples_of(&self.train)
    }
}

pub fn examples_of(records: &[DocRecord]) -> Vec<(&Document, &QAPair)> {
    records.iter().flat_map(|r| r.qas.iter().map(move |qa| (&r.document, qa))).collect()
}

fn question_count(cfg: &CorpusConfig, s: &mut Stream) -> usize {
    if cfg.m_max == 1 || s.uniform() < cfg.single_question_fraction {
        return 1;
    }
    let mut m = 2;
    while m < cfg.m_max && s.uniform() < cfg.question_continue_p {
        m += 1;
    }
    m
}

fn make_record(cfg: &CorpusConfig, vocab: &Vocab, id: DocId, s: &mut Stream) -> DocRecord {
    let m = question_count(cfg, s);
    let n_fields = s.range_inclusive(m.max(cfg.min_fields), cfg.max_fields);
    let mut keys: Vec<usize> = (0..cfg.n_keys).collect();
    s.shuffle(&mut keys);
    let fields: Vec<Field> = keys[..n_fields]
        .iter()
        .map(|&k| {
            let len = s.range_inclusive(1, cfg.max_value_len);
            Field { key: vocab.key(k), value: (0..len).map(|_| vocab.value(s.index(cfg.n_values))).collect() }
        })
        .collect();
    let qas = fields[..m]
        .iter()
        .map(|f| {
            let template_id = TRAINING_TEMPLATES[s.index(TRAINING_TEMPLATES.len())];
            QAPair {
                question: question_tokens(vocab, template_id, f.key).expect("training template"),
                answer: f.value.clone(),
                template_id,
                field_key: f.key,
            }
        })
        .collect();
    DocRecord { document: Document { doc_id: id, fields }, qas }
}

/// Generates the corpus. Pure function of `(config, seed)`.
pub fn generate_corpus(config: &CorpusConfig, seed: Seed) -> Result<Corpus> {
    config.validate()?;
    let vocab = config.vocab()?;
    let mut s = Stream::new(seed, "corpus");
    let mut next = 0u32;
    let mut pool = |n: usize, s: &mut Stream| -> Vec<DocRecord> {
        (0..n)
            .map(|_| {
                let id = DocId(next);
                next += 1;
                make_record(config, &vocab, id, s)
            })
            .collect()
    };
    let train = pool(config.n_train, &mut s);
    let nonmembers = pool(config.n_nonmember, &mut s);
    let pretrain = pool(config.n_pretrain, &mut s);

    let mut pick = Stream::new(seed, "members");
    let mut idx: Vec<usize> = (0..train.len()).collect();
    pick.shuffle(&mut idx);
    let mut chosen: Vec<usize> = idx[..config.n_member].to_vec();
    chosen.sort_unstable();
    let members = chosen.into_iter().map(|i| train[i].id()).collect();

    Ok(Corpus { config: config.clone(), seed, train, members, nonmembers, pretrain })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CorpusConfig {
        CorpusConfig { n_train: 40, n_member: 10, n_nonmember: 10, n_pretrain: 20, ..CorpusConfig::default() }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_corpus(&small(), Seed(5)).unwrap();
        let b = generate_corpus(&small(), Seed(5)).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&small(), Seed(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn balanced_attack_set() {
        let cfg = CorpusConfig { n_member: 50, n_nonmember: 50, ..CorpusConfig::default() };
        let c = generate_corpus(&cfg, Seed(1)).unwrap();
        let set = c.attack_set();
        assert_eq!(set.len(), 100);
        assert_eq!(set.iter().filter(|l| l.is_member).count(), 50);
    }

    #[test]
    fn question_counts_respect_bounds_and_include_singletons() {
        let c = generate_corpus(&CorpusConfig::default(), Seed(2)).unwrap();
        let counts: Vec<usize> = c.train.iter().map(|r| r.qas.len()).collect();
        assert!(counts.iter().all(|&m| (1..=10).contains(&m)));
        assert!(counts.iter().any(|&m| m == 1));
        assert!(counts.iter().any(|&m| m >= 4));
    }

    #[test]
    fn pools_are_disjoint_and_answers_extractive() {
        let c = generate_corpus(&small(), Seed(3)).unwrap();
        let mut ids = BTreeSet::new();
        for r in c.train.iter().chain(&c.nonmembers).chain(&c.pretrain) {
            assert!(ids.insert(r.id()));
            let keys: BTreeSet<Token> = r.document.fields.iter().map(|f| f.key).collect();
            assert_eq!(keys.len(), r.document.fields.len());
            for qa in &r.qas {
                assert_eq!(r.document.value_of(qa.field_key), Some(qa.answer.as_slice()));
                assert!((1..=4).contains(&qa.answer.len()));
            }
        }
        let train_ids: BTreeSet<DocId> = c.train.iter().map(|r| r.id()).collect();
        assert!(c.members.iter().all(|id| train_ids.contains(id)));
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let cfg = CorpusConfig { n_keys: 40, ..CorpusConfig::default() };
        assert!(matches!(generate_corpus(&cfg, Seed(0)), Err(Error::InfeasibleConfig(_))));
        let cfg = CorpusConfig { n_member: 300, ..CorpusConfig::default() };
        assert!(generate_corpus(&cfg, Seed(0)).is_err());
    }
}
