//! Label-only access to a target: an answer oracle behind a query counter,
//! and the distillation of a proxy model from its answers.

use alloc::boxed::Box;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attack::{extract_document_features, AttackHyperparams, AttackVariant, OptimizationTrace};
use crate::data::{DocId, DocRecord, Document, QAPair, Token, Vocab};
use crate::error::{Error, Result};
use crate::model::{train_with, EncoderInput, Example, ModelConfig, Seq2Seq, Trainable, TrainConfig, TrainReport};
use crate::rng::{Seed, Stream};

/// Anything that answers a question about a document and reveals nothing
/// else.
pub trait AnswerOracle {
    fn answer(&mut self, document: &Document, question: &[Token]) -> Result<Vec<Token>>;
}

/// A model reachable only through its greedy answers.
pub struct ModelOracle {
    model: Seq2Seq,
}

impl ModelOracle {
    pub fn new(model: Seq2Seq) -> Self {
        ModelOracle { model }
    }
}

impl AnswerOracle for ModelOracle {
    fn answer(&mut self, document: &Document, question: &[Token]) -> Result<Vec<Token>> {
        let doc = document.linearize();
        Ok(self.model.generate(&EncoderInput::new(&doc, question))?.answer().to_vec())
    }
}

/// Counts and optionally limits queries to an oracle. Answers are the only
/// thing that comes out; neither the oracle nor a wrapped model is
/// reachable through the handle:
///
/// ```compile_fail
/// use mialab_core::blackbox::BlackBoxHandle;
/// fn peek(h: &BlackBoxHandle) {
///     let _ = &h.oracle;
/// }
/// ```
///
/// ```compile_fail
/// use mialab_core::blackbox::ModelOracle;
/// use mialab_core::model::Seq2Seq;
/// fn peek(o: &ModelOracle) -> &Seq2Seq {
///     &o.model
/// }
/// ```
pub struct BlackBoxHandle {
    oracle: Box<dyn AnswerOracle + Send>,
    queries: usize,
    budget: Option<usize>,
}

impl BlackBoxHandle {
    pub fn new(oracle: Box<dyn AnswerOracle + Send>, budget: Option<usize>) -> Self {
        BlackBoxHandle { oracle, queries: 0, budget }
    }

    pub fn queries(&self) -> usize {
        self.queries
    }

    pub fn remaining(&self) -> Option<usize> {
        self.budget.map(|b| b.saturating_sub(self.queries))
    }

    pub fn query(&mut self, document: &Document, question: &[Token]) -> Result<Vec<Token>> {
        if let Some(b) = self.budget {
            if self.queries >= b {
                return Err(Error::BudgetExceeded { required: self.queries + 1, budget: b });
            }
        }
        self.queries += 1;
        self.oracle.answer(document, question)
    }
}

/// Documents with the oracle's answers in place of the gold ones.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryDataset {
    pub records: Vec<DocRecord>,
}

impl QueryDataset {
    pub fn len(&self) -> usize {
        self.records.iter().map(|r| r.qas.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn examples(&self) -> Vec<Example> {
        self.records.iter().flat_map(|r| r.qas.iter().map(move |qa| Example::new(&r.document, qa))).collect()
    }
}

/// Asks the oracle each of the first `max_questions` questions of every
/// document. Fails before the first call when the budget cannot cover them.
pub fn build_query_dataset(
    handle: &mut BlackBoxHandle,
    records: &[&DocRecord],
    max_questions: usize,
) -> Result<QueryDataset> {
    let required: usize = records.iter().map(|r| r.qas.len().min(max_questions)).sum();
    if let Some(left) = handle.remaining() {
        if left < required {
            return Err(Error::BudgetExceeded { required, budget: left });
        }
    }
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let mut qas = Vec::new();
        for qa in r.qas.iter().take(max_questions) {
            let answer = handle.query(&r.document, &qa.question)?;
            qas.push(QAPair { answer, ..qa.clone() });
        }
        out.push(DocRecord { document: r.document.clone(), qas });
    }
    Ok(QueryDataset { records: out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    pub model: ModelConfig,
    pub pretrain: TrainConfig,
    pub distill: TrainConfig,
    pub seed: Seed,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            model: ModelConfig { d_model: 40, d_ff: 80, ..ModelConfig::default() },
            pretrain: TrainConfig { epochs: 30, ..TrainConfig::default() },
            distill: TrainConfig { epochs: 50, loss_floor: Some(1e-2), ..TrainConfig::default() },
            seed: Seed(0),
        }
    }
}

impl ProxyConfig {
    /// Proxy shaped exactly like `target`.
    pub fn matched(target: &ModelConfig) -> Self {
        ProxyConfig { model: target.clone(), ..Self::default() }
    }
}

/// A proxy trained on question answering over the disjoint pool.
pub fn pretrain_proxy(cfg: &ProxyConfig, vocab: &Vocab, pool: &[DocRecord]) -> Result<(Seq2Seq, TrainReport)> {
    if pool.is_empty() {
        return Err(Error::Empty("pretrain pool"));
    }
    let mc = ModelConfig { vocab_size: vocab.len(), ..cfg.model.clone() };
    let mut proxy = Seq2Seq::new(mc, &mut Stream::new(cfg.seed, "proxy-init"))?;
    let examples: Vec<Example> =
        pool.iter().flat_map(|r| r.qas.iter().map(move |qa| Example::new(&r.document, qa))).collect();
    let tc = TrainConfig { seed: cfg.seed, ..cfg.pretrain.clone() };
    let report = train_with(&mut proxy, &examples, &tc, &Trainable::All, |_, _, _| true)?;
    Ok((proxy, report))
}

/// Fits the proxy to the oracle's answers until the epoch loss drops below
/// the configured floor or the epoch cap. `on_epoch` sees every epoch's
/// proxy, for tracking the attack along the distillation.
pub fn distill_proxy<F>(
    mut proxy: Seq2Seq,
    queries: &QueryDataset,
    cfg: &TrainConfig,
    on_epoch: F,
) -> Result<(Seq2Seq, TrainReport)>
where
    F: FnMut(usize, &Seq2Seq, f64) -> bool,
{
    if queries.is_empty() {
        return Err(Error::Empty("query dataset"));
    }
    let report = train_with(&mut proxy, &queries.examples(), cfg, &Trainable::All, on_epoch)?;
    Ok((proxy, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlackBoxRun {
    pub queries: QueryDataset,
    pub oracle_calls: usize,
    pub pretrain: TrainReport,
    pub distill: TrainReport,
    pub proxy: Seq2Seq,
    /// Traces of the white-box attack on the proxy, one entry per document.
    pub traces: Vec<(DocId, Vec<OptimizationTrace>)>,
}

/// Queries the oracle, distills a proxy from a pretrained start and runs the
/// white-box attack against the proxy with the gold question-answer pairs.
pub fn blackbox_attack(
    handle: &mut BlackBoxHandle,
    vocab: &Vocab,
    records: &[&DocRecord],
    pretrain_pool: &[DocRecord],
    variant: &AttackVariant,
    hp: &AttackHyperparams,
    proxy_cfg: &ProxyConfig,
) -> Result<BlackBoxRun> {
    let pool_ids: alloc::collections::BTreeSet<DocId> = pretrain_pool.iter().map(DocRecord::id).collect();
    if records.iter().any(|r| pool_ids.contains(&r.id())) {
        return Err(Error::Contract("pretrain pool overlaps the attacked documents".into()));
    }
    let before = handle.queries();
    let queries = build_query_dataset(handle, records, hp.max_questions)?;
    let oracle_calls = handle.queries() - before;
    let (proxy, pretrain) = pretrain_proxy(proxy_cfg, vocab, pretrain_pool)?;
    let distill_cfg = TrainConfig { seed: proxy_cfg.seed, ..proxy_cfg.distill.clone() };
    let (proxy, distill) = distill_proxy(proxy, &queries, &distill_cfg, |_, _, _| true)?;
    let traces = records
        .iter()
        .map(|r| Ok((r.id(), extract_document_features(&proxy, vocab, &r.document, &r.qas, variant, hp)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BlackBoxRun { queries, oracle_calls, pretrain, distill, proxy, traces })
}
