//! Comparison attacks: thresholds on mean score or loss, clustering on
//! score, loss and gradient statistics, and the Min-K% family over the
//! target's token probabilities.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attack::OptimizationTrace;
use crate::cluster::{cluster_and_decide, Aggregator, DirectionFeature, Feature, FeatureSelection};
use crate::cluster::build_descriptors;
use crate::data::{DocId, Document, QAPair, Vocab};
use crate::error::{Error, Result};
use crate::metrics::UtilityKind;
use crate::model::{EncoderInput, Generation, Seq2Seq, Trainable};
use crate::numerics::l2_norm;
use crate::rng::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaselineKind {
    ScoreTa,
    ScoreUa,
    ScoreUaAll,
    LossTa,
    GradientUa,
    ScoreLossUaAll,
    MinK { k: f64 },
    MinKPlusPlus { k: f64 },
}

impl BaselineKind {
    /// Every baseline, with the Min-K fraction left for the caller to sweep.
    pub fn all(k: f64) -> [BaselineKind; 8] {
        [
            BaselineKind::ScoreTa,
            BaselineKind::ScoreUa,
            BaselineKind::ScoreUaAll,
            BaselineKind::LossTa,
            BaselineKind::GradientUa,
            BaselineKind::ScoreLossUaAll,
            BaselineKind::MinK { k },
            BaselineKind::MinKPlusPlus { k },
        ]
    }

    pub fn name(&self) -> String {
        match self {
            BaselineKind::ScoreTa => "score-ta".into(),
            BaselineKind::ScoreUa => "score-ua".into(),
            BaselineKind::ScoreUaAll => "score-ua-all".into(),
            BaselineKind::LossTa => "loss-ta".into(),
            BaselineKind::GradientUa => "gradient-ua".into(),
            BaselineKind::ScoreLossUaAll => "scoreloss-ua-all".into(),
            BaselineKind::MinK { k } => alloc::format!("min-k[{k}]"),
            BaselineKind::MinKPlusPlus { k } => alloc::format!("min-k++[{k}]"),
        }
    }

    /// Whether the baseline reads token probabilities.
    pub fn is_grey_box(&self) -> bool {
        matches!(self, BaselineKind::MinK { .. } | BaselineKind::MinKPlusPlus { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineKind::MinK { k } | BaselineKind::MinKPlusPlus { k } if !(*k > 0.0 && *k <= 1.0) => {
                Err(Error::invalid("Min-K fraction must lie in (0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

/// Hard labels plus a score where higher means more member-like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub name: String,
    pub is_member: Vec<bool>,
    pub scores: Vec<f64>,
}

/// What the target reveals about one document without any fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentProbe {
    pub doc_id: DocId,
    /// Zero-step traces: loss, full-model gradient norm and score per pair.
    pub pairs: Vec<OptimizationTrace>,
    /// Greedy generations with token probabilities, one per pair.
    pub generations: Vec<Generation>,
}

impl DocumentProbe {
    pub fn mean(&self, f: Feature) -> f64 {
        self.pairs.iter().map(|t| f.of(t)).sum::<f64>() / self.pairs.len() as f64
    }
}

/// Loss, full-model gradient norm, utility and generation of the target on
/// each of the first `max_questions` pairs.
pub fn probe_document(
    target: &Seq2Seq,
    vocab: &Vocab,
    document: &Document,
    qas: &[QAPair],
    utility: UtilityKind,
    max_questions: usize,
) -> Result<DocumentProbe> {
    if qas.is_empty() {
        return Err(Error::Empty("question-answer pairs"));
    }
    let doc = document.linearize();
    let mut pairs = Vec::new();
    let mut generations = Vec::new();
    for qa in qas.iter().take(max_questions) {
        let input = EncoderInput::new(&doc, &qa.question);
        let (loss, grads) = target.loss_and_grads(&input, &qa.answer, &Trainable::All)?;
        let g = target.generate(&input)?;
        pairs.push(OptimizationTrace {
            delta: 0.0,
            steps: 0,
            utilities: alloc::vec![utility.score_tokens(vocab, g.answer(), &qa.answer)],
            initial_loss: loss,
            final_loss: loss,
            initial_grad_norm: l2_norm(grads.values()),
            failed: false,
        });
        generations.push(g);
    }
    Ok(DocumentProbe { doc_id: document.doc_id, pairs, generations })
}

/// Member iff the statistic is at least its mean over the attack set.
fn threshold(stats: &[f64], higher_is_member: bool) -> Result<(Vec<bool>, Vec<f64>)> {
    if stats.is_empty() {
        return Err(Error::Empty("documents"));
    }
    let kappa = stats.iter().sum::<f64>() / stats.len() as f64;
    let labels = stats.iter().map(|&s| if higher_is_member { s >= kappa } else { s <= kappa }).collect();
    let scores = stats.iter().map(|&s| if higher_is_member { s } else { -s }).collect();
    Ok((labels, scores))
}

pub fn score_ta(mean_scores: &[f64]) -> Result<BaselineOutcome> {
    let (is_member, scores) = threshold(mean_scores, true)?;
    Ok(BaselineOutcome { name: BaselineKind::ScoreTa.name(), is_member, scores })
}

pub fn loss_ta(mean_losses: &[f64]) -> Result<BaselineOutcome> {
    let (is_member, scores) = threshold(mean_losses, false)?;
    Ok(BaselineOutcome { name: BaselineKind::LossTa.name(), is_member, scores })
}

fn clustered(
    name: String,
    probes: &[DocumentProbe],
    features: &[Feature],
    aggs: &[Aggregator],
    direction: Feature,
    seed: Seed,
) -> Result<BaselineOutcome> {
    let docs: Vec<(DocId, Vec<OptimizationTrace>)> = probes.iter().map(|p| (p.doc_id, p.pairs.clone())).collect();
    let sel = FeatureSelection::new(features, aggs);
    let ds = build_descriptors(&docs, &sel)?;
    let dir = DirectionFeature { aggregator: aggs[0], ..DirectionFeature::natural(direction) };
    let (_, m) = cluster_and_decide(&ds, &sel, dir, seed)?;
    Ok(BaselineOutcome { name, is_member: m.is_member, scores: m.scores })
}

/// Clusters documents on their scores; `aggs` is `[Avg]` for the plain
/// variant and every aggregator for the `_all` variant.
pub fn score_ua(probes: &[DocumentProbe], aggs: &[Aggregator], seed: Seed) -> Result<BaselineOutcome> {
    let name = if aggs.len() > 1 { BaselineKind::ScoreUaAll.name() } else { BaselineKind::ScoreUa.name() };
    clustered(name, probes, &[Feature::Score], aggs, Feature::Score, seed)
}

/// Clusters on gradient norm and score; lower gradient norm is member-like.
pub fn gradient_ua(probes: &[DocumentProbe], seed: Seed) -> Result<BaselineOutcome> {
    clustered(
        BaselineKind::GradientUa.name(),
        probes,
        &[Feature::GradNorm, Feature::Score],
        &Aggregator::ALL,
        Feature::GradNorm,
        seed,
    )
}

/// Clusters on loss and score; lower loss is member-like.
pub fn scoreloss_ua(probes: &[DocumentProbe], seed: Seed) -> Result<BaselineOutcome> {
    clustered(
        BaselineKind::ScoreLossUaAll.name(),
        probes,
        &[Feature::Loss, Feature::Score],
        &Aggregator::ALL,
        Feature::Loss,
        seed,
    )
}

fn lowest_k_mean(values: &mut [f64], k: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("answer tokens"));
    }
    values.sort_by(f64::total_cmp);
    let n = ((k * values.len() as f64) as usize).max(1).min(values.len());
    Ok(values[..n].iter().sum::<f64>() / n as f64)
}

/// Mean of the lowest `k` fraction of token log-probabilities.
pub fn min_k_score(logprobs: &[f64], k: f64) -> Result<f64> {
    BaselineKind::MinK { k }.validate()?;
    lowest_k_mean(&mut logprobs.to_vec(), k)
}

/// Standardized log-probability of `token` under `dist`; `None` when the
/// distribution is flat.
pub fn min_k_pp_token(dist: &[f64], token: usize) -> Option<f64> {
    let logs: Vec<f64> = dist.iter().map(|&p| if p > 0.0 { libm::log(p) } else { 0.0 }).collect();
    let mu: f64 = dist.iter().zip(&logs).map(|(p, l)| p * l).sum();
    let var: f64 = dist.iter().zip(&logs).map(|(p, l)| p * (l - mu) * (l - mu)).sum();
    let sigma = libm::sqrt(var);
    if !(sigma > 1e-12) {
        return None;
    }
    Some((logs[token] - mu) / sigma)
}

/// Min-K%++ of one generation. Returns the score and the number of
/// skipped flat-distribution tokens.
pub fn min_k_pp_score(g: &Generation, k: f64) -> Result<(f64, usize)> {
    BaselineKind::MinKPlusPlus { k }.validate()?;
    let mut zs: Vec<f64> = g
        .distributions
        .iter()
        .zip(&g.tokens)
        .filter_map(|(d, &t)| min_k_pp_token(d, t))
        .collect();
    let skipped = g.tokens.len() - zs.len();
    if zs.is_empty() {
        return Err(Error::DegenerateInput("every token has a flat next-token distribution".into()));
    }
    Ok((lowest_k_mean(&mut zs, k)?, skipped))
}

fn per_doc_min_k(name: String, per_doc: Vec<f64>) -> Result<BaselineOutcome> {
    let (is_member, scores) = threshold(&per_doc, true)?;
    Ok(BaselineOutcome { name, is_member, scores })
}

/// Min-K% averaged over each document's answers; labels threshold at the
/// attack-set mean.
pub fn min_k(probes: &[DocumentProbe], k: f64) -> Result<BaselineOutcome> {
    let per_doc = probes
        .iter()
        .map(|p| {
            let s: Result<Vec<f64>> = p.generations.iter().map(|g| min_k_score(&g.logprobs, k)).collect();
            let s = s?;
            Ok(s.iter().sum::<f64>() / s.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    per_doc_min_k(BaselineKind::MinK { k }.name(), per_doc)
}

pub fn min_k_pp(probes: &[DocumentProbe], k: f64) -> Result<BaselineOutcome> {
    let mut skipped = 0;
    let mut per_doc = Vec::with_capacity(probes.len());
    for p in probes {
        let mut sum = 0.0;
        let mut n = 0;
        for g in &p.generations {
            match min_k_pp_score(g, k) {
                Ok((s, sk)) => {
                    sum += s;
                    n += 1;
                    skipped += sk;
                }
                Err(Error::DegenerateInput(_)) => skipped += g.tokens.len(),
                Err(e) => return Err(e),
            }
        }
        if n == 0 {
            return Err(Error::DegenerateInput(alloc::format!("document {} has no scorable token", p.doc_id.0)));
        }
        per_doc.push(sum / n as f64);
    }
    if skipped > 0 {
        log::info!("min-k++: {skipped} token(s) with flat distributions skipped");
    }
    per_doc_min_k(BaselineKind::MinKPlusPlus { k }.name(), per_doc)
}

/// Runs one baseline on probed documents.
pub fn run_baseline(kind: BaselineKind, probes: &[DocumentProbe], seed: Seed) -> Result<BaselineOutcome> {
    kind.validate()?;
    match kind {
        BaselineKind::ScoreTa => score_ta(&probes.iter().map(|p| p.mean(Feature::Score)).collect::<Vec<_>>()),
        BaselineKind::LossTa => loss_ta(&probes.iter().map(|p| p.mean(Feature::Loss)).collect::<Vec<_>>()),
        BaselineKind::ScoreUa => score_ua(probes, &[Aggregator::Avg], seed),
        BaselineKind::ScoreUaAll => score_ua(probes, &Aggregator::ALL, seed),
        BaselineKind::GradientUa => gradient_ua(probes, seed),
        BaselineKind::ScoreLossUaAll => scoreloss_ua(probes, seed),
        BaselineKind::MinK { k } => min_k(probes, k),
        BaselineKind::MinKPlusPlus { k } => min_k_pp(probes, k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe(id: u32, scores: &[f64], losses: &[f64]) -> DocumentProbe {
        DocumentProbe {
            doc_id: DocId(id),
            pairs: scores
                .iter()
                .zip(losses)
                .map(|(&s, &l)| OptimizationTrace {
                    delta: 0.0,
                    steps: 0,
                    utilities: alloc::vec![s],
                    initial_loss: l,
                    final_loss: l,
                    initial_grad_norm: l,
                    failed: false,
                })
                .collect(),
            generations: Vec::new(),
        }
    }

    #[test]
    fn score_threshold_examples() {
        let r = score_ta(&[0.9, 0.8, 0.2, 0.1]).unwrap();
        assert_eq!(r.is_member, vec![true, true, false, false]);
        assert!(score_ta(&[0.4; 5]).unwrap().is_member.iter().all(|&m| m));
        let shifted = score_ta(&[1.9, 1.8, 1.2, 1.1]).unwrap();
        assert_eq!(shifted.is_member, r.is_member);
    }

    #[test]
    fn loss_threshold_examples() {
        let r = loss_ta(&[0.1, 0.2, 2.0, 3.0]).unwrap();
        assert_eq!(r.is_member, vec![true, true, false, false]);
        assert!(loss_ta(&[2.0; 3]).unwrap().is_member.iter().all(|&m| m));
        assert_eq!(loss_ta(&[0.7, 1.4, 14.0, 21.0]).unwrap().is_member, r.is_member);
    }

    #[test]
    fn score_clustering_picks_high_group() {
        let probes: Vec<DocumentProbe> =
            [0.95, 0.9, 1.0, 0.1, 0.0, 0.05].iter().enumerate().map(|(i, &s)| probe(i as u32, &[s], &[1.0])).collect();
        let r = score_ua(&probes, &[Aggregator::Avg], Seed(0)).unwrap();
        assert_eq!(r.is_member, vec![true, true, true, false, false, false]);
        let all = score_ua(&probes, &Aggregator::ALL, Seed(0)).unwrap();
        assert_eq!(all.is_member, r.is_member);
        let flat: Vec<DocumentProbe> = (0..4).map(|i| probe(i, &[0.5], &[1.0])).collect();
        assert!(matches!(score_ua(&flat, &[Aggregator::Avg], Seed(0)), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn scoreloss_picks_low_loss_group() {
        let probes: Vec<DocumentProbe> =
            [0.1, 0.2, 0.15, 4.0, 5.0, 4.5].iter().enumerate().map(|(i, &l)| probe(i as u32, &[0.5], &[l])).collect();
        let r = scoreloss_ua(&probes, Seed(0)).unwrap();
        assert_eq!(r.is_member, vec![true, true, true, false, false, false]);
        let g = gradient_ua(&probes, Seed(0)).unwrap();
        assert_eq!(g.is_member, r.is_member);
    }

    #[test]
    fn min_k_examples() {
        let lp = [-0.1, -0.5, -2.0];
        assert!((min_k_score(&lp, 1.0).unwrap() - (-2.6 / 3.0)).abs() < 1e-12);
        assert_eq!(min_k_score(&lp, 0.34).unwrap(), -2.0);
        assert!(min_k_score(&[], 0.5).is_err());
        assert!(min_k_score(&lp, 0.0).is_err());
    }

    #[test]
    fn min_k_pp_hand_value() {
        let z = min_k_pp_token(&[0.9, 0.1], 0).unwrap();
        assert!((z - 0.3333).abs() < 1e-3, "{z}");
        let peaked = [0.97, 0.01, 0.01, 0.01];
        assert!(min_k_pp_token(&peaked, 0).unwrap() > 0.0);
        assert!(min_k_pp_token(&[0.25; 4], 1).is_none());
    }
}
