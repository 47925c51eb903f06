use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::net::{EncoderInput, Seq2Seq, Trainable};
use crate::data::{Document, QAPair, Token};
use crate::dp::{dp_sgd_step, DpConfig};
use crate::error::{Error, Result};
use crate::numerics::{AdamState, Gradients};
use crate::rng::{Seed, Stream};

/// One `(document, question, answer)` training example in token form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub document: Vec<Token>,
    pub question: Vec<Token>,
    pub answer: Vec<Token>,
}

impl Example {
    pub fn new(doc: &Document, qa: &QAPair) -> Self {
        Example { document: doc.linearize(), question: qa.question.clone(), answer: qa.answer.clone() }
    }

    pub fn input(&self) -> EncoderInput<'_> {
        EncoderInput::new(&self.document, &self.question)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: Seed,
    /// Stop once an epoch's mean loss drops below this value.
    pub loss_floor: Option<f64>,
    pub dp: Option<DpConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 80, batch_size: 16, lr: 3e-3, seed: Seed(0), loss_floor: None, dp: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-example loss of each epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

pub(crate) fn accumulate(acc: &mut Gradients, g: Gradients) -> Result<()> {
    for (name, t) in g {
        match acc.get_mut(&name) {
            Some(a) => a.axpy(1.0, &t)?,
            None => {
                acc.insert(name, t);
            }
        }
    }
    Ok(())
}

/// Mini-batch Adam on the summed answer negative log-likelihood; each
/// question-answer pair is an independent example. `on_epoch` sees the
/// model after every epoch and may stop training by returning `false`.
pub fn train_with<F>(
    model: &mut Seq2Seq,
    examples: &[Example],
    cfg: &TrainConfig,
    trainable: &Trainable,
    mut on_epoch: F,
) -> Result<TrainReport>
where
    F: FnMut(usize, &Seq2Seq, f64) -> bool,
{
    if examples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let mut adam = AdamState::new(cfg.lr);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut shuffle = Stream::new(cfg.seed, "train-shuffle");
    let mut noise = Stream::new(cfg.seed, "dp-noise");
    let mut sampler = Stream::new(cfg.seed, "dp-sample");
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        if let Some(dp) = &cfg.dp {
            // Poisson sampling: each example joins a step with probability q,
            // 1/q steps per epoch.
            dp.validate()?;
            let steps = libm::round(1.0 / dp.sampling_rate).max(1.0) as usize;
            let expected = dp.sampling_rate * examples.len() as f64;
            let mut total = 0.0;
            for _ in 0..steps {
                let batch: Vec<&Example> =
                    examples.iter().filter(|_| sampler.uniform() < dp.sampling_rate).collect();
                let l = dp_sgd_step(model, &batch, expected, dp, trainable, &mut adam, &mut noise)?;
                if !l.is_finite() {
                    return Err(Error::Diverged { epoch, step: report.steps, loss: l });
                }
                total += l;
                report.steps += 1;
            }
            let mean = total / (expected * steps as f64);
            report.epoch_losses.push(mean);
            if !on_epoch(epoch, model, mean) || cfg.loss_floor.is_some_and(|f| mean < f) {
                break;
            }
            continue;
        }
        shuffle.shuffle(&mut order);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = batch.iter().map(|&i| &examples[i]).collect();
            let mut acc = Gradients::new();
            let mut batch_loss = 0.0;
            for ex in &batch {
                let (l, g) = model.loss_and_grads(&ex.input(), &ex.answer, trainable)?;
                batch_loss += l;
                accumulate(&mut acc, g)?;
            }
            let inv = 1.0 / batch.len() as f64;
            acc.values_mut().for_each(|t| t.scale_in_place(inv));
            adam.step(&acc, &mut model.params)?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch, step: report.steps, loss: batch_loss });
            }
            total += batch_loss;
            report.steps += 1;
        }
        let mean = total / examples.len() as f64;
        report.epoch_losses.push(mean);
        log::debug!("epoch {epoch}: mean loss {mean:.5}");
        let keep_going = on_epoch(epoch, model, mean);
        if !keep_going || cfg.loss_floor.is_some_and(|f| mean < f) {
            break;
        }
    }
    Ok(report)
}

pub fn train(model: &mut Seq2Seq, examples: &[Example], cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(model, examples, cfg, &Trainable::All, |_, _, _| true)
}
