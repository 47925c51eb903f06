//! Single-head pre-norm transformer encoder-decoder over the synthetic
//! vocabulary.

use alloc::borrow::Cow;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::ParameterSet;
use crate::data::{Token, BOS, EOS, SEP};
use crate::error::{Error, Result};
use crate::numerics::{kaiming_init, normal_init, Gradients, Tape, Tensor, Var};
use crate::rng::Stream;

/// Gradient key of the continuous document input.
pub const INPUT_VIEW: &str = "input.document";
pub const FINAL_PROJECTION: &str = "final-projection";
pub const LORA_PREFIX: &str = "lora:";

/// Low-rank adapter metadata; the matrices live in the parameter registry
/// under the layer `lora:<target>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    pub target: String,
    pub rank: usize,
    pub scaling: f64,
}

impl LoraAdapter {
    pub fn layer_name(&self) -> String {
        alloc::format!("{LORA_PREFIX}{}", self.target)
    }
}

/// Which registry layers receive gradients in a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub enum Trainable {
    Nothing,
    All,
    Layers(BTreeSet<String>),
}

impl Trainable {
    pub fn layer(name: &str) -> Self {
        let mut s = BTreeSet::new();
        s.insert(name.to_string());
        Trainable::Layers(s)
    }

    pub(crate) fn allows(&self, layer: &str) -> bool {
        match self {
            Trainable::Nothing => false,
            Trainable::All => true,
            Trainable::Layers(s) => s.contains(layer),
        }
    }

    /// Whether any encoder-side parameter is trainable.
    fn touches_encoder(&self) -> bool {
        match self {
            Trainable::Nothing => false,
            Trainable::All => true,
            Trainable::Layers(s) => s.iter().any(|l| {
                let base = l.strip_prefix(LORA_PREFIX).unwrap_or(l);
                base.starts_with("enc.") || base.starts_with("embed.")
            }),
        }
    }
}

/// Encoder input: the document tokens (or a continuous stand-in for their
/// embeddings) followed by the separator and the question.
#[derive(Debug, Clone, Copy)]
pub struct EncoderInput<'a> {
    pub document: &'a [Token],
    pub question: &'a [Token],
    /// Replaces the token embeddings of `document` when present.
    pub document_view: Option<&'a Tensor>,
}

impl<'a> EncoderInput<'a> {
    pub fn new(document: &'a [Token], question: &'a [Token]) -> Self {
        EncoderInput { document, question, document_view: None }
    }
}

/// Result of greedy decoding. Every decoding step is recorded, including
/// the step that emitted the end marker.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: Vec<Token>,
    pub logprobs: Vec<f64>,
    pub distributions: Vec<Vec<f64>>,
}

impl Generation {
    /// Generated answer without the end marker.
    pub fn answer(&self) -> &[Token] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }

    pub fn sequence_logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }
}

/// The target model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub params: ParameterSet,
    pub adapters: Vec<LoraAdapter>,
}

struct Binder<'a> {
    params: &'a ParameterSet,
    trainable: &'a Trainable,
    bound: BTreeMap<&'a str, Var>,
}

impl<'a> Binder<'a> {
    fn new(params: &'a ParameterSet, trainable: &'a Trainable) -> Self {
        Binder { params, trainable, bound: BTreeMap::new() }
    }

    fn get(&mut self, tape: &mut Tape<'a>, name: &str) -> Result<Var> {
        let (key, tensor) = self.params.entry(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if let Some(&v) = self.bound.get(key) {
            return Ok(v);
        }
        let layer = self.params.layer_of(key).expect("indexed parameter has a layer");
        let v = if self.trainable.allows(layer) {
            tape.param(key, Cow::Borrowed(tensor))
        } else {
            tape.constant(Cow::Borrowed(tensor))
        };
        self.bound.insert(key, v);
        Ok(v)
    }
}

impl Seq2Seq {
    pub fn new(config: ModelConfig, stream: &mut Stream) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let f = config.d_ff;
        let v = config.vocab_size;
        let attn_std = libm::sqrt(1.0 / d as f64);
        let mut p = ParameterSet::new();

        let norm = |p: &mut ParameterSet, name: &str| {
            p.add(name, vec![("gain", Tensor::filled(&[d], 1.0)), ("bias", Tensor::zeros(&[d]))])
        };
        let attn = |p: &mut ParameterSet, name: &str, s: &mut Stream| -> Result<()> {
            p.add(
                name,
                vec![
                    ("q", normal_init(attn_std, &[d, d], s)?),
                    ("k", normal_init(attn_std, &[d, d], s)?),
                    ("v", normal_init(attn_std, &[d, d], s)?),
                    ("o", normal_init(attn_std, &[d, d], s)?),
                ],
            )
        };
        let ffn = |p: &mut ParameterSet, prefix: &str, s: &mut Stream| -> Result<()> {
            p.add(
                &alloc::format!("{prefix}.fc1"),
                vec![("weight", kaiming_init(d, &[d, f], s)?), ("bias", Tensor::zeros(&[f]))],
            )?;
            p.add(
                &alloc::format!("{prefix}.fc2"),
                vec![("weight", normal_init(libm::sqrt(1.0 / f as f64), &[f, d], s)?), ("bias", Tensor::zeros(&[d]))],
            )
        };

        p.add("embed.tokens", vec![("weight", normal_init(1.0, &[v, d], stream)?)])?;
        p.add("embed.enc-pos", vec![("weight", normal_init(0.3, &[config.max_input_len, d], stream)?)])?;
        p.add("embed.dec-pos", vec![("weight", normal_init(0.3, &[config.decoder_len(), d], stream)?)])?;
        for i in 0..config.n_enc_blocks {
            norm(&mut p, &alloc::format!("enc.{i}.layer-norm1"))?;
            attn(&mut p, &alloc::format!("enc.{i}.self-attn"), stream)?;
            norm(&mut p, &alloc::format!("enc.{i}.layer-norm2"))?;
            ffn(&mut p, &alloc::format!("enc.{i}"), stream)?;
        }
        norm(&mut p, "enc.final-norm")?;
        for i in 0..config.n_dec_blocks {
            norm(&mut p, &alloc::format!("dec.{i}.layer-norm1"))?;
            attn(&mut p, &alloc::format!("dec.{i}.self-attn"), stream)?;
            norm(&mut p, &alloc::format!("dec.{i}.layer-norm2"))?;
            attn(&mut p, &alloc::format!("dec.{i}.cross-attn"), stream)?;
            norm(&mut p, &alloc::format!("dec.{i}.layer-norm3"))?;
            ffn(&mut p, &alloc::format!("dec.{i}"), stream)?;
        }
        norm(&mut p, "dec.final-norm")?;
        p.add(
            FINAL_PROJECTION,
            vec![("weight", normal_init(config.proj_init_std, &[d, v], stream)?), ("bias", Tensor::zeros(&[v]))],
        )?;
        Ok(Seq2Seq { config, params: p, adapters: Vec::new() })
    }

    pub fn last_decoder_block(&self) -> usize {
        self.config.n_dec_blocks - 1
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            Some(&t) => Err(Error::OutOfVocabulary { token: t, vocab: self.config.vocab_size }),
            None => Ok(()),
        }
    }

    fn layer_norm<'a>(&'a self, tape: &mut Tape<'a>, b: &mut Binder<'a>, layer: &str, x: Var) -> Result<Var> {
        let g = b.get(tape, &alloc::format!("{layer}.gain"))?;
        let beta = b.get(tape, &alloc::format!("{layer}.bias"))?;
        tape.layer_norm(x, g, beta)
    }

    fn linear<'a>(&'a self, tape: &mut Tape<'a>, b: &mut Binder<'a>, layer: &str, x: Var) -> Result<Var> {
        let w = b.get(tape, &alloc::format!("{layer}.weight"))?;
        let mut y = tape.matmul(x, w)?;
        let bias_name = alloc::format!("{layer}.bias");
        if self.params.get(&bias_name).is_some() {
            let bias = b.get(tape, &bias_name)?;
            y = tape.add_row(y, bias)?;
        }
        if let Some(ad) = self.adapters.iter().find(|a| a.target == layer) {
            let ln = ad.layer_name();
            let a = b.get(tape, &alloc::format!("{ln}.a"))?;
            let bm = b.get(tape, &alloc::format!("{ln}.b"))?;
            let xa = tape.matmul(x, a)?;
            let xab = tape.matmul(xa, bm)?;
            let delta = tape.scale(xab, ad.scaling);
            y = tape.add(y, delta)?;
        }
        Ok(y)
    }

    fn attention<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        b: &mut Binder<'a>,
        layer: &str,
        xq: Var,
        xkv: Var,
        causal: bool,
    ) -> Result<Var> {
        let wq = b.get(tape, &alloc::format!("{layer}.q"))?;
        let wk = b.get(tape, &alloc::format!("{layer}.k"))?;
        let wv = b.get(tape, &alloc::format!("{layer}.v"))?;
        let wo = b.get(tape, &alloc::format!("{layer}.o"))?;
        let q = tape.matmul(xq, wq)?;
        let k = tape.matmul(xkv, wk)?;
        let v = tape.matmul(xkv, wv)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / libm::sqrt(self.config.d_model as f64));
        let att = tape.softmax_rows(scores, causal)?;
        let mixed = tape.matmul(att, v)?;
        tape.matmul(mixed, wo)
    }

    fn ffn<'a>(&'a self, tape: &mut Tape<'a>, b: &mut Binder<'a>, prefix: &str, x: Var) -> Result<Var> {
        let h = self.linear(tape, b, &alloc::format!("{prefix}.fc1"), x)?;
        let h = tape.relu(h);
        self.linear(tape, b, &alloc::format!("{prefix}.fc2"), h)
    }

    fn encode_on<'a>(&'a self, tape: &mut Tape<'a>, b: &mut Binder<'a>, input: &EncoderInput<'a>) -> Result<Var> {
        self.check_tokens(input.document)?;
        self.check_tokens(input.question)?;
        let emb = b.get(tape, "embed.tokens.weight")?;
        let doc = match input.document_view {
            Some(view) => {
                if view.shape() != [input.document.len(), self.config.d_model] {
                    return Err(Error::shape("document view", alloc::format!("{:?}", view.shape())));
                }
                tape.param(INPUT_VIEW, Cow::Borrowed(view))
            }
            None => tape.embedding(emb, input.document)?,
        };
        let mut rest = Vec::with_capacity(input.question.len() + 1);
        rest.push(SEP);
        rest.extend_from_slice(input.question);
        let q = tape.embedding(emb, &rest)?;
        let x = if input.document.is_empty() { q } else { tape.concat_rows(doc, q)? };
        let len = input.document.len() + rest.len();
        if len > self.config.max_input_len {
            return Err(Error::invalid(alloc::format!(
                "encoder input of {len} tokens exceeds max_input_len {}",
                self.config.max_input_len
            )));
        }
        let pos_table = b.get(tape, "embed.enc-pos.weight")?;
        let positions: Vec<usize> = (0..len).collect();
        let pos = tape.embedding(pos_table, &positions)?;
        let mut h = tape.add(x, pos)?;
        for i in 0..self.config.n_enc_blocks {
            let n1 = self.layer_norm(tape, b, &alloc::format!("enc.{i}.layer-norm1"), h)?;
            let a = self.attention(tape, b, &alloc::format!("enc.{i}.self-attn"), n1, n1, false)?;
            h = tape.add(h, a)?;
            let n2 = self.layer_norm(tape, b, &alloc::format!("enc.{i}.layer-norm2"), h)?;
            let f = self.ffn(tape, b, &alloc::format!("enc.{i}"), n2)?;
            h = tape.add(h, f)?;
        }
        self.layer_norm(tape, b, "enc.final-norm", h)
    }

    /// Logits (`[len(prefix), V]`) for every decoder position.
    fn decode_on<'a>(&'a self, tape: &mut Tape<'a>, b: &mut Binder<'a>, enc: Var, prefix: &[Token]) -> Result<Var> {
        if prefix.len() > self.config.decoder_len() {
            return Err(Error::invalid("decoder input longer than max_answer_len + 1"));
        }
        self.check_tokens(prefix)?;
        let emb = b.get(tape, "embed.tokens.weight")?;
        let x = tape.embedding(emb, prefix)?;
        let pos_table = b.get(tape, "embed.dec-pos.weight")?;
        let positions: Vec<usize> = (0..prefix.len()).collect();
        let pos = tape.embedding(pos_table, &positions)?;
        let mut h = tape.add(x, pos)?;
        for i in 0..self.config.n_dec_blocks {
            let n1 = self.layer_norm(tape, b, &alloc::format!("dec.{i}.layer-norm1"), h)?;
            let a = self.attention(tape, b, &alloc::format!("dec.{i}.self-attn"), n1, n1, true)?;
            h = tape.add(h, a)?;
            let n2 = self.layer_norm(tape, b, &alloc::format!("dec.{i}.layer-norm2"), h)?;
            let c = self.attention(tape, b, &alloc::format!("dec.{i}.cross-attn"), n2, enc, false)?;
            h = tape.add(h, c)?;
            let n3 = self.layer_norm(tape, b, &alloc::format!("dec.{i}.layer-norm3"), h)?;
            let f = self.ffn(tape, b, &alloc::format!("dec.{i}"), n3)?;
            h = tape.add(h, f)?;
        }
        let hn = self.layer_norm(tape, b, "dec.final-norm", h)?;
        self.linear(tape, b, FINAL_PROJECTION, hn)
    }

    fn teacher_forcing(&self, answer: &[Token]) -> Result<(Vec<Token>, Vec<Token>)> {
        if answer.len() > self.config.max_answer_len {
            return Err(Error::invalid(alloc::format!(
                "answer of {} tokens exceeds max_answer_len {}",
                answer.len(),
                self.config.max_answer_len
            )));
        }
        let mut inp = Vec::with_capacity(answer.len() + 1);
        inp.push(BOS);
        inp.extend_from_slice(answer);
        let mut tgt = answer.to_vec();
        tgt.push(EOS);
        Ok((inp, tgt))
    }

    /// Encoder output as a plain tensor, for reuse while only decoder-side
    /// parameters change.
    pub fn encode(&self, input: &EncoderInput<'_>) -> Result<Tensor> {
        let trainable = Trainable::Nothing;
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params, &trainable);
        let enc = self.encode_on(&mut tape, &mut b, input)?;
        Ok(tape.value(enc).clone())
    }

    /// Teacher-forced negative log-likelihood of `answer` followed by the end
    /// marker, with gradients for the `trainable` layers (and for the
    /// document view, when one is given).
    pub fn loss_and_grads(
        &self,
        input: &EncoderInput<'_>,
        answer: &[Token],
        trainable: &Trainable,
    ) -> Result<(f64, Gradients)> {
        let (inp, tgt) = self.teacher_forcing(answer)?;
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params, trainable);
        let enc = self.encode_on(&mut tape, &mut b, input)?;
        let logits = self.decode_on(&mut tape, &mut b, enc, &inp)?;
        let loss = tape.cross_entropy(logits, &tgt)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NumericFailure("loss".into()));
        }
        Ok((value, tape.backward(loss)?))
    }

    /// Same as [`Seq2Seq::loss_and_grads`] but with a precomputed encoder
    /// output. Only valid when no encoder-side layer is trainable.
    pub fn loss_and_grads_encoded(
        &self,
        encoded: &Tensor,
        answer: &[Token],
        trainable: &Trainable,
    ) -> Result<(f64, Gradients)> {
        if trainable.touches_encoder() {
            return Err(Error::Contract("cached encoder output with trainable encoder layers".into()));
        }
        let (inp, tgt) = self.teacher_forcing(answer)?;
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params, trainable);
        let enc = tape.constant(Cow::Borrowed(encoded));
        let logits = self.decode_on(&mut tape, &mut b, enc, &inp)?;
        let loss = tape.cross_entropy(logits, &tgt)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NumericFailure("loss".into()));
        }
        Ok((value, tape.backward(loss)?))
    }

    pub fn forward_loss(&self, input: &EncoderInput<'_>, answer: &[Token]) -> Result<f64> {
        let logprobs = self.token_logprobs(input, answer)?;
        Ok(-logprobs.iter().sum::<f64>())
    }

    /// Teacher-forced `log p(target_k | prefix, x, q)` for each answer token
    /// and the end marker.
    pub fn token_logprobs(&self, input: &EncoderInput<'_>, answer: &[Token]) -> Result<Vec<f64>> {
        let (inp, tgt) = self.teacher_forcing(answer)?;
        let trainable = Trainable::Nothing;
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params, &trainable);
        let enc = self.encode_on(&mut tape, &mut b, input)?;
        let logits = self.decode_on(&mut tape, &mut b, enc, &inp)?;
        let lt = tape.value(logits);
        Ok(tgt.iter().enumerate().map(|(i, &t)| log_softmax_at(lt.row(i), t)).collect())
    }

    pub fn generate(&self, input: &EncoderInput<'_>) -> Result<Generation> {
        let enc = self.encode(input)?;
        self.generate_encoded(&enc)
    }

    /// Greedy decoding from a precomputed encoder output. Answers are cut
    /// at `max_answer_len` tokens when no end marker comes first.
    pub fn generate_encoded(&self, encoded: &Tensor) -> Result<Generation> {
        let trainable = Trainable::Nothing;
        let mut prefix = vec![BOS];
        let mut out = Generation { tokens: Vec::new(), logprobs: Vec::new(), distributions: Vec::new() };
        for step in 0..self.config.decoder_len() {
            let mut tape = Tape::new();
            let mut b = Binder::new(&self.params, &trainable);
            let enc = tape.constant(Cow::Borrowed(encoded));
            let logits = self.decode_on(&mut tape, &mut b, enc, &prefix)?;
            let lt = tape.value(logits);
            let row = lt.row(prefix.len() - 1);
            let dist = softmax(row);
            // lowest index wins ties
            let mut best = 0;
            for (i, &p) in dist.iter().enumerate() {
                if p > dist[best] {
                    best = i;
                }
            }
            if step == self.config.max_answer_len && best != EOS {
                break;
            }
            out.logprobs.push(log_softmax_at(row, best));
            out.tokens.push(best);
            out.distributions.push(dist);
            if best == EOS {
                break;
            }
            prefix.push(best);
        }
        Ok(out)
    }

    /// Token embeddings of `document`, detached: the continuous input that
    /// the input-space attack optimizes.
    pub fn document_input_view(&self, document: &[Token]) -> Result<Tensor> {
        self.check_tokens(document)?;
        let table = self.params.tensor("embed.tokens.weight")?;
        let d = self.config.d_model;
        let mut data = Vec::with_capacity(document.len() * d);
        for &t in document {
            data.extend_from_slice(table.row(t));
        }
        Tensor::matrix(document.len(), d, data)
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = row.iter().map(|v| libm::exp(v - mx)).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= z);
    out
}

fn log_softmax_at(row: &[f64], t: usize) -> f64 {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|v| libm::exp(v - mx)).sum();
    row[t] - mx - libm::log(z)
}
