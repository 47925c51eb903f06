//! Attack evaluation: balanced accuracy, F1, ROC, TPR at fixed FPR,
//! per-stratum recall and the train-test utility gap.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{DocRecord, Vocab};
use crate::error::{Error, Result};
use crate::metrics::UtilityKind;
use crate::model::{EncoderInput, Seq2Seq};
use crate::rng::{Seed, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn count(truth: &[bool], pred: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&t, &p) in truth.iter().zip(pred) {
            match (t, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub balanced_accuracy: f64,
    /// Members are the positive class.
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    /// Set when precision or F1 had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

pub fn classification_metrics(truth: &[bool], pred: &[bool]) -> Result<Classification> {
    if truth.len() != pred.len() {
        return Err(Error::shape("classification_metrics", "truth and prediction lengths differ"));
    }
    let c = Confusion::count(truth, pred);
    let pos = c.tp + c.fn_;
    let neg = c.tn + c.fp;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateInput("truth must contain both classes".into()));
    }
    let recall = c.tp as f64 / pos as f64;
    let specificity = c.tn as f64 / neg as f64;
    let mut zero_division = false;
    let precision = if c.tp + c.fp == 0 {
        zero_division = true;
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let f1 = if precision + recall == 0.0 {
        zero_division = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Classification { balanced_accuracy: 0.5 * (recall + specificity), f1, precision, recall, specificity, zero_division })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Documents scoring at least this are predicted members.
    pub threshold: f64,
}

fn class_counts(scores: &[f64], truth: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != truth.len() {
        return Err(Error::shape("roc", "scores and truth lengths differ"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NumericFailure("NaN membership score".into()));
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateInput("truth must contain both classes".into()));
    }
    Ok((pos, neg))
}

/// ROC from (0,0) to (1,1), one point per distinct score; tied documents
/// cross the threshold together.
pub fn roc(scores: &[f64], truth: &[bool]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = class_counts(scores, truth)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = alloc::vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(RocPoint { fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64, threshold: s });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TprAtFpr {
    pub target_fpr: f64,
    pub tpr: f64,
    pub achieved_fpr: f64,
    /// Fewer non-members than `1 / target_fpr`: the target is not resolvable.
    pub coarse: bool,
}

/// TPR at the most permissive threshold whose FPR stays within each target.
pub fn tpr_at_fpr(scores: &[f64], truth: &[bool], targets: &[f64]) -> Result<Vec<TprAtFpr>> {
    let (_, neg) = class_counts(scores, truth)?;
    let curve = roc(scores, truth)?;
    targets
        .iter()
        .map(|&f| {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid("FPR target must lie in [0, 1]"));
            }
            let best = curve.iter().filter(|p| p.fpr <= f).last().expect("curve starts at fpr 0");
            let coarse = (neg as f64) * f < 1.0;
            if coarse {
                log::warn!("{neg} non-members cannot resolve FPR {f}");
            }
            Ok(TprAtFpr { target_fpr: f, tpr: best.tpr, achieved_fpr: best.fpr, coarse })
        })
        .collect()
}

/// Area under the ROC step curve, ties counted as half.
pub fn auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    let curve = roc(scores, truth)?;
    Ok(curve.windows(2).map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[1].tpr + w[0].tpr)).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub label: String,
    pub members: usize,
    /// Fraction of the stratum's members predicted as members.
    pub accuracy: f64,
}

/// Member recall split by question count: `m=1`, `m=2`, `m=3`, `m>3` and
/// `all`. Empty strata are omitted.
pub fn stratified_report(truth: &[bool], pred: &[bool], question_counts: &[usize]) -> Result<Vec<Stratum>> {
    if truth.len() != pred.len() || truth.len() != question_counts.len() {
        return Err(Error::shape("stratified_report", "inputs must have equal length"));
    }
    let strata: [(&str, fn(usize) -> bool); 5] =
        [("m=1", |m| m == 1), ("m=2", |m| m == 2), ("m=3", |m| m == 3), ("m>3", |m| m > 3), ("all", |_| true)];
    let mut out = Vec::new();
    for (label, keep) in strata {
        let hits: Vec<bool> = (0..truth.len()).filter(|&i| truth[i] && keep(question_counts[i])).map(|i| pred[i]).collect();
        if hits.is_empty() {
            log::info!("stratum {label} has no member documents");
            continue;
        }
        let accuracy = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
        out.push(Stratum { label: label.into(), members: hits.len(), accuracy });
    }
    Ok(out)
}

/// Mean per-question utility of the target's greedy answers over `records`.
pub fn mean_utility(target: &Seq2Seq, vocab: &Vocab, records: &[&DocRecord], utility: UtilityKind) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in records {
        let doc = r.document.linearize();
        for qa in &r.qas {
            let g = target.generate(&EncoderInput::new(&doc, &qa.question))?;
            sum += utility.score_tokens(vocab, g.answer(), &qa.answer);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("questions"));
    }
    Ok(sum / n as f64)
}

/// Mean member utility minus mean non-member utility.
pub fn traintest_gap(
    target: &Seq2Seq,
    vocab: &Vocab,
    members: &[&DocRecord],
    nonmembers: &[&DocRecord],
    utility: UtilityKind,
) -> Result<f64> {
    Ok(mean_utility(target, vocab, members, utility)? - mean_utility(target, vocab, nonmembers, utility)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanSd::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
        MeanSd { mean, sd }
    }
}

/// Balanced accuracy of `predicted` against `rounds` random shuffles of
/// `truth`: what an attack with no signal scores on this split.
pub fn permuted_label_control(truth: &[bool], predicted: &[bool], rounds: usize, seed: Seed) -> Result<MeanSd> {
    if rounds == 0 {
        return Err(Error::Empty("permutation rounds"));
    }
    let mut s = Stream::new(seed, "permuted-labels");
    let mut shuffled = truth.to_vec();
    let accs = (0..rounds)
        .map(|_| {
            s.shuffle(&mut shuffled);
            classification_metrics(&shuffled, predicted).map(|c| c.balanced_accuracy)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MeanSd::of(&accs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub attack: String,
    pub seed: u64,
    pub config_hash: String,
    pub balanced_accuracy: f64,
    pub f1: f64,
    pub auc: f64,
    pub tpr_at_1: TprAtFpr,
    pub tpr_at_3: TprAtFpr,
    pub roc: Vec<RocPoint>,
    pub strata: Vec<Stratum>,
    pub train_test_gap: Option<f64>,
    /// Spread over the KMeans restarts, when the attack clusters.
    pub restart_balanced_accuracy: Option<MeanSd>,
    pub restart_f1: Option<MeanSd>,
}

/// Everything an evaluation needs about one attack's output.
#[derive(Debug, Clone, Copy)]
pub struct AttackOutput<'a> {
    pub name: &'a str,
    pub truth: &'a [bool],
    pub predicted: &'a [bool],
    pub scores: &'a [f64],
    pub question_counts: &'a [usize],
    /// Member predictions of each KMeans restart.
    pub restart_predictions: &'a [Vec<bool>],
}

pub fn evaluate(out: &AttackOutput<'_>, seed: u64, config_hash: &str, gap: Option<f64>) -> Result<EvalReport> {
    let c = classification_metrics(out.truth, out.predicted)?;
    let t = tpr_at_fpr(out.scores, out.truth, &[0.01, 0.03])?;
    let (restart_balanced_accuracy, restart_f1) = if out.restart_predictions.is_empty() {
        (None, None)
    } else {
        let cs: Vec<Classification> =
            out.restart_predictions.iter().map(|p| classification_metrics(out.truth, p)).collect::<Result<_>>()?;
        (
            Some(MeanSd::of(&cs.iter().map(|c| c.balanced_accuracy).collect::<Vec<_>>())),
            Some(MeanSd::of(&cs.iter().map(|c| c.f1).collect::<Vec<_>>())),
        )
    };
    Ok(EvalReport {
        attack: out.name.into(),
        seed,
        config_hash: config_hash.into(),
        balanced_accuracy: c.balanced_accuracy,
        f1: c.f1,
        auc: auc(out.scores, out.truth)?,
        tpr_at_1: t[0],
        tpr_at_3: t[1],
        roc: roc(out.scores, out.truth)?,
        strata: stratified_report(out.truth, out.predicted, out.question_counts)?,
        train_test_gap: gap,
        restart_balanced_accuracy,
        restart_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn classification_examples() {
        let t = [true, true, false, false];
        let perfect = classification_metrics(&t, &t).unwrap();
        assert_eq!((perfect.balanced_accuracy, perfect.f1), (1.0, 1.0));
        assert_eq!(classification_metrics(&t, &[true; 4]).unwrap().balanced_accuracy, 0.5);
        let c = classification_metrics(&t, &[true, false, false, false]).unwrap();
        assert_eq!(c.balanced_accuracy, 0.75);
        assert!((c.f1 - 2.0 / 3.0).abs() < 1e-12);
        let none = classification_metrics(&t, &[false; 4]).unwrap();
        assert!(none.zero_division && none.f1 == 0.0);
        assert!(classification_metrics(&[true, true], &[true, false]).is_err());
    }

    #[test]
    fn tpr_at_fpr_examples() {
        let scores = [0.9, 0.8, 0.7, 0.6, 0.2, 0.1];
        let truth = [true, true, true, false, false, false];
        let r = tpr_at_fpr(&scores, &truth, &[0.33]).unwrap();
        assert_eq!((r[0].tpr, r[0].achieved_fpr), (1.0, 0.0));
        assert_eq!(tpr_at_fpr(&scores, &truth, &[0.01]).unwrap()[0].tpr, 1.0);
    }

    #[test]
    fn permuted_control_is_near_chance() {
        let truth: Vec<bool> = (0..100).map(|i| i < 50).collect();
        let c = permuted_label_control(&truth, &truth, 200, Seed(1)).unwrap();
        assert!((c.mean - 0.5).abs() < 0.02, "{c:?}");
        assert!(c.sd > 0.0 && c.sd < 0.1);
        assert!(permuted_label_control(&truth, &truth, 0, Seed(1)).is_err());
    }

    #[test]
    fn ties_cross_together() {
        let scores = [0.5, 0.5, 0.1];
        let truth = [true, false, false];
        let r = tpr_at_fpr(&scores, &truth, &[0.4]).unwrap();
        assert_eq!(r[0].tpr, 0.0);
        let curve = roc(&scores, &truth).unwrap();
        assert_eq!(curve.len(), 3);
        assert_eq!((curve[1].fpr, curve[1].tpr), (0.5, 1.0));
    }

    #[test]
    fn random_scores_give_diagonal() {
        use crate::rng::{Seed, Stream};
        let mut s = Stream::new(Seed(11), "roc");
        let n = 2000;
        let scores: Vec<f64> = (0..n).map(|_| s.uniform()).collect();
        let truth: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        for f in [0.1, 0.3, 0.5] {
            let r = tpr_at_fpr(&scores, &truth, &[f]).unwrap();
            assert!((r[0].tpr - f).abs() < 0.05, "tpr {} at {f}", r[0].tpr);
        }
    }

    #[test]
    fn strata_partition_members() {
        let truth = [true, true, true, true, false];
        let pred = [true, false, true, true, true];
        let m = [1, 1, 2, 7, 1];
        let s = stratified_report(&truth, &pred, &m).unwrap();
        let all = s.iter().find(|x| x.label == "all").unwrap();
        assert_eq!(all.members, 4);
        assert_eq!(all.accuracy, 0.75);
        assert_eq!(s.iter().filter(|x| x.label != "all").map(|x| x.members).sum::<usize>(), 4);
        assert!(s.iter().all(|x| x.label != "m=3"));
    }

    proptest! {
        #[test]
        fn roc_is_monotone_and_transform_invariant(
            raw in proptest::collection::vec((0u8..20, any::<bool>()), 2..40)
        ) {
            let scores: Vec<f64> = raw.iter().map(|r| f64::from(r.0)).collect();
            let truth: Vec<bool> = raw.iter().map(|r| r.1).collect();
            prop_assume!(truth.iter().any(|&t| t) && truth.iter().any(|&t| !t));
            let curve = roc(&scores, &truth).unwrap();
            prop_assert_eq!((curve[0].fpr, curve[0].tpr), (0.0, 0.0));
            let last = curve.last().unwrap();
            prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
            for w in curve.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
            let targets = [0.01, 0.03, 0.1, 0.5, 1.0];
            let a = tpr_at_fpr(&scores, &truth, &targets).unwrap();
            let warped: Vec<f64> = scores.iter().map(|s| libm::exp(s * 0.3) - 7.0).collect();
            let b = tpr_at_fpr(&warped, &truth, &targets).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!(x.tpr, y.tpr);
            }
            for w in a.windows(2) {
                prop_assert!(w[1].tpr >= w[0].tpr);
            }
        }
    }
}
