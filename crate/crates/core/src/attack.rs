//! Per-pair fine-tuning traces: how far, and for how long, a copy of the
//! target has to move to fit one question-answer pair.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Document, QAPair, Token, Vocab};
use crate::error::{Error, Result};
use crate::metrics::UtilityKind;
use crate::model::{EncoderInput, Seq2Seq, Trainable, FINAL_PROJECTION, INPUT_VIEW};
use crate::numerics::{l2_norm, AdamState, Gradients, Tensor};
use crate::rng::{Seed, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AttackVariant {
    /// Fine-tune one registered layer.
    FullLayer { layer: String },
    /// Fine-tune a fresh low-rank adapter on one layer.
    Lora { layer: String, rank: usize },
    /// Optimize the continuous document input with the model frozen.
    Input,
}

impl AttackVariant {
    pub fn final_projection() -> Self {
        AttackVariant::FullLayer { layer: FINAL_PROJECTION.into() }
    }

    pub fn label(&self) -> String {
        match self {
            AttackVariant::FullLayer { layer } => alloc::format!("fl[{layer}]"),
            AttackVariant::Lora { layer, rank } => alloc::format!("fllora[{layer},r={rank}]"),
            AttackVariant::Input => "ig".into(),
        }
    }

    pub fn validate(&self, model: &Seq2Seq) -> Result<()> {
        match self {
            AttackVariant::FullLayer { layer } | AttackVariant::Lora { layer, .. } => {
                if !model.params.has_layer(layer) {
                    return Err(Error::UnknownLayer(layer.clone()));
                }
                if let AttackVariant::Lora { rank: 0, .. } = self {
                    return Err(Error::invalid("LoRA rank must be >= 1"));
                }
                Ok(())
            }
            AttackVariant::Input => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackHyperparams {
    pub lr: f64,
    pub max_steps: usize,
    /// Stop once one step changes the loss by less than this.
    pub tau: f64,
    pub utility: UtilityKind,
    /// Questions used per document.
    pub max_questions: usize,
    /// Seeds the adapter initialization.
    pub seed: Seed,
}

impl Default for AttackHyperparams {
    fn default() -> Self {
        AttackHyperparams {
            lr: 1e-3,
            max_steps: 200,
            tau: 1e-3,
            utility: UtilityKind::Nls,
            max_questions: 10,
            seed: Seed(0),
        }
    }
}

impl AttackHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.max_steps == 0 || !(self.tau >= 0.0) || self.max_questions == 0 {
            return Err(Error::invalid("attack hyperparameters need lr > 0, S >= 1, tau >= 0, M >= 1"));
        }
        Ok(())
    }
}

/// Outcome of fine-tuning on one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    /// Distance travelled by the optimized parameters (or input).
    pub delta: f64,
    pub steps: usize,
    /// Utility before the first step and after every step.
    pub utilities: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Gradient norm over the optimized parameters at the start.
    pub initial_grad_norm: f64,
    /// Set when the loss went non-finite; the other fields are then partial.
    pub failed: bool,
}

impl OptimizationTrace {
    /// Mean utility over the optimization.
    pub fn utility(&self) -> f64 {
        self.utilities.iter().sum::<f64>() / self.utilities.len() as f64
    }

    /// Utility of the unmodified target.
    pub fn initial_utility(&self) -> f64 {
        self.utilities[0]
    }
}

enum Subject<'t> {
    Params { model: Seq2Seq, trainable: Trainable, layers: Vec<String>, encoded: Option<Tensor> },
    Input { model: &'t Seq2Seq, view: BTreeMap<String, Tensor> },
}

impl Subject<'_> {
    fn loss_and_grads(&self, input: &EncoderInput<'_>, answer: &[Token]) -> Result<(f64, Gradients)> {
        match self {
            Subject::Params { model, trainable, encoded: Some(enc), .. } => {
                model.loss_and_grads_encoded(enc, answer, trainable)
            }
            Subject::Params { model, trainable, encoded: None, .. } => model.loss_and_grads(input, answer, trainable),
            Subject::Input { model, view } => {
                let with_view = EncoderInput { document_view: Some(&view[INPUT_VIEW]), ..*input };
                model.loss_and_grads(&with_view, answer, &Trainable::Nothing)
            }
        }
    }

    fn predict(&self, input: &EncoderInput<'_>) -> Result<Vec<Token>> {
        let g = match self {
            Subject::Params { model, encoded: Some(enc), .. } => model.generate_encoded(enc)?,
            Subject::Params { model, encoded: None, .. } => model.generate(input)?,
            Subject::Input { model, view } => {
                model.generate(&EncoderInput { document_view: Some(&view[INPUT_VIEW]), ..*input })?
            }
        };
        Ok(g.answer().to_vec())
    }

    fn snapshot(&self) -> Result<Vec<Tensor>> {
        match self {
            Subject::Params { model, layers, .. } => model.params.snapshot(layers),
            Subject::Input { view, .. } => Ok(view.values().cloned().collect()),
        }
    }

    fn step(&mut self, adam: &mut AdamState, grads: &Gradients) -> Result<()> {
        match self {
            Subject::Params { model, .. } => adam.step(grads, &mut model.params),
            Subject::Input { view, .. } => adam.step(grads, view),
        }
    }
}

fn subject<'t>(
    target: &'t Seq2Seq,
    variant: &AttackVariant,
    hp: &AttackHyperparams,
    input: &EncoderInput<'_>,
) -> Result<Subject<'t>> {
    variant.validate(target)?;
    let params = |model: Seq2Seq, layer: String| -> Result<Subject<'t>> {
        let trainable = Trainable::layer(&layer);
        // decoder-side layers leave the encoder output fixed
        let encoded = if layer.contains("enc.") || layer.contains("embed.") { None } else { Some(model.encode(input)?) };
        Ok(Subject::Params { model, trainable, layers: alloc::vec![layer], encoded })
    };
    match variant {
        AttackVariant::FullLayer { layer } => params(target.clone(), layer.clone()),
        AttackVariant::Lora { layer, rank } => {
            let adapted = target.attach_lora(layer, *rank, &mut Stream::new(hp.seed, "lora-init"))?;
            let name = adapted.adapters.last().expect("adapter just attached").layer_name();
            params(adapted, name)
        }
        AttackVariant::Input => {
            let mut view = BTreeMap::new();
            view.insert(INPUT_VIEW.to_string(), target.document_input_view(input.document)?);
            Ok(Subject::Input { model: target, view })
        }
    }
}

/// Fine-tunes a private copy of `target` (or of its document input) on one
/// pair with Adam and records distance, step count and utility.
///
/// The early-stop test runs before every update after the first: training
/// stops once the last step changed the loss by less than `tau`. An infinite
/// `tau` stops before any step.
pub fn extract_trace(
    target: &Seq2Seq,
    vocab: &Vocab,
    document: &Document,
    qa: &QAPair,
    variant: &AttackVariant,
    hp: &AttackHyperparams,
) -> Result<OptimizationTrace> {
    hp.validate()?;
    let doc = document.linearize();
    let input = EncoderInput::new(&doc, &qa.question);
    let mut subj = subject(target, variant, hp, &input)?;
    let start = subj.snapshot()?;
    let utility = |s: &Subject<'_>| -> Result<f64> { Ok(hp.utility.score_tokens(vocab, &s.predict(&input)?, &qa.answer)) };

    let mut trace = OptimizationTrace {
        delta: 0.0,
        steps: 0,
        utilities: alloc::vec![utility(&subj)?],
        initial_loss: f64::NAN,
        final_loss: f64::NAN,
        initial_grad_norm: f64::NAN,
        failed: false,
    };
    let mut adam = AdamState::new(hp.lr);
    let mut prev: Option<f64> = None;
    let mut last: Option<f64> = None;
    loop {
        let (loss, grads) = match subj.loss_and_grads(&input, &qa.answer) {
            Ok(r) => r,
            Err(Error::NumericFailure(_)) => {
                trace.failed = true;
                break;
            }
            Err(e) => return Err(e),
        };
        if trace.steps == 0 {
            trace.initial_loss = loss;
            trace.initial_grad_norm = l2_norm(grads.values());
        }
        last = Some(loss);
        let converged = match prev {
            Some(p) => libm::fabs(p - loss) < hp.tau,
            None => hp.tau == f64::INFINITY,
        };
        if converged || trace.steps == hp.max_steps {
            break;
        }
        subj.step(&mut adam, &grads)?;
        trace.steps += 1;
        prev = Some(loss);
        trace.utilities.push(utility(&subj)?);
    }
    trace.final_loss = last.unwrap_or(f64::NAN);
    let end = subj.snapshot()?;
    let sq: f64 = start.iter().zip(&end).map(|(a, b)| b.sub(a).map(|d| d.sum_squares())).sum::<Result<f64>>()?;
    trace.delta = libm::sqrt(sq);
    if !trace.delta.is_finite() {
        trace.failed = true;
    }
    Ok(trace)
}

/// One independent trace for each of the first `hp.max_questions` pairs.
pub fn extract_document_features(
    target: &Seq2Seq,
    vocab: &Vocab,
    document: &Document,
    qas: &[QAPair],
    variant: &AttackVariant,
    hp: &AttackHyperparams,
) -> Result<Vec<OptimizationTrace>> {
    if qas.is_empty() {
        return Err(Error::Empty("question-answer pairs"));
    }
    qas.iter().take(hp.max_questions).map(|qa| extract_trace(target, vocab, document, qa, variant, hp)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, CorpusConfig};
    use crate::model::ModelConfig;

    fn setup() -> (Seq2Seq, crate::data::Corpus) {
        let cfg = CorpusConfig { n_train: 6, n_member: 3, n_nonmember: 3, n_pretrain: 2, ..CorpusConfig::default() };
        let corpus = generate_corpus(&cfg, Seed(4)).unwrap();
        let mc = ModelConfig { vocab_size: corpus.vocab().len(), d_model: 16, d_ff: 16, ..ModelConfig::default() };
        (Seq2Seq::new(mc, &mut Stream::new(Seed(1), "init")).unwrap(), corpus)
    }

    #[test]
    fn infinite_tau_takes_no_steps() {
        let (m, c) = setup();
        let r = &c.train[0];
        let hp = AttackHyperparams { tau: f64::INFINITY, ..AttackHyperparams::default() };
        for v in [AttackVariant::final_projection(), AttackVariant::Input] {
            let t = extract_trace(&m, &c.vocab(), &r.document, &r.qas[0], &v, &hp).unwrap();
            assert_eq!((t.steps, t.delta, t.utilities.len()), (0, 0.0, 1));
        }
    }

    #[test]
    fn lora_starts_from_target_utility() {
        let (m, c) = setup();
        let r = &c.train[1];
        let hp = AttackHyperparams { max_steps: 3, ..AttackHyperparams::default() };
        let fl = extract_trace(&m, &c.vocab(), &r.document, &r.qas[0], &AttackVariant::final_projection(), &hp).unwrap();
        let lora = AttackVariant::Lora { layer: "dec.0.fc1".into(), rank: 2 };
        let lt = extract_trace(&m, &c.vocab(), &r.document, &r.qas[0], &lora, &hp).unwrap();
        assert_eq!(fl.utilities[0], lt.utilities[0]);
        assert_eq!(fl.initial_loss, lt.initial_loss);
    }

    #[test]
    fn target_untouched_and_deterministic() {
        let (m, c) = setup();
        let before = m.params.checksum();
        let r = &c.train[2];
        let hp = AttackHyperparams { max_steps: 5, tau: 0.0, ..AttackHyperparams::default() };
        for v in [
            AttackVariant::FullLayer { layer: "enc.0.fc1".into() },
            AttackVariant::Lora { layer: FINAL_PROJECTION.into(), rank: 1 },
            AttackVariant::Input,
        ] {
            let a = extract_trace(&m, &c.vocab(), &r.document, &r.qas[0], &v, &hp).unwrap();
            let b = extract_trace(&m, &c.vocab(), &r.document, &r.qas[0], &v, &hp).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.steps, 5);
            assert_eq!(a.utilities.len(), 6);
            assert!(a.delta > 0.0);
        }
        assert_eq!(m.params.checksum(), before);
    }

    #[test]
    fn larger_budget_never_takes_fewer_steps() {
        let (m, c) = setup();
        let r = &c.train[0];
        let mut last = 0;
        for s in [1, 4, 16, 64] {
            let hp = AttackHyperparams { max_steps: s, tau: 1e-2, ..AttackHyperparams::default() };
            let t = extract_trace(&m, &c.vocab(), &r.document, &r.qas[0], &AttackVariant::final_projection(), &hp).unwrap();
            assert!(t.steps >= last);
            last = t.steps;
        }
    }

    #[test]
    fn truncates_to_max_questions() {
        let (m, c) = setup();
        let r = &c.train[0];
        let qas: Vec<QAPair> = (0..15).map(|i| r.qas[i % r.qas.len()].clone()).collect();
        let hp = AttackHyperparams { max_steps: 1, max_questions: 10, ..AttackHyperparams::default() };
        let ts = extract_document_features(&m, &c.vocab(), &r.document, &qas, &AttackVariant::Input, &hp).unwrap();
        assert_eq!(ts.len(), 10);
        let one = extract_document_features(&m, &c.vocab(), &r.document, &qas[..1], &AttackVariant::Input, &hp).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], ts[0]);
    }

    #[test]
    fn unknown_layer_is_rejected() {
        let (m, c) = setup();
        let r = &c.train[0];
        let v = AttackVariant::FullLayer { layer: "nope".into() };
        let err = extract_trace(&m, &c.vocab(), &r.document, &r.qas[0], &v, &AttackHyperparams::default());
        assert!(matches!(err, Err(Error::UnknownLayer(_))));
    }
}
