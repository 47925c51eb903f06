//! Randomly composed graphs for checking reverse-mode gradients against
//! central finite differences.

use std::borrow::Cow;
use std::collections::BTreeMap;

use mialab_core::numerics::{Tape, Tensor, Var};
use mialab_core::rng::{Seed, Stream};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
enum Mix {
    LayerNorm,
    Softmax,
    CausalSoftmax,
    SelfProduct,
    Attention,
    Scale,
}

#[derive(Clone, Debug)]
struct Graph {
    rows: usize,
    widths: Vec<usize>,
    mixes: Vec<Mix>,
    input: Tensor,
    ids: Vec<usize>,
    targets: Vec<usize>,
    vocab: usize,
    log_head: bool,
}

fn random_graph(seed: u64) -> (Graph, BTreeMap<String, Tensor>) {
    let mut s = Stream::new(Seed(seed), "graph");
    let rows = s.range_inclusive(2, 5);
    let vocab = s.range_inclusive(3, 6);
    let mut widths = vec![s.range_inclusive(2, 5)];
    let mut mixes = Vec::new();
    let all = [Mix::LayerNorm, Mix::Softmax, Mix::CausalSoftmax, Mix::SelfProduct, Mix::Attention, Mix::Scale];
    for _ in 0..3 {
        widths.push(s.range_inclusive(2, 5));
        mixes.push(all[s.index(all.len())]);
    }
    let d0 = widths[0];
    let input = Tensor::matrix(rows, d0, (0..rows * d0).map(|_| s.normal()).collect()).unwrap();
    let ids = (0..rows).map(|_| s.index(vocab)).collect();
    let targets = (0..rows).map(|_| s.index(vocab)).collect();
    let mut params = BTreeMap::new();
    params.insert(
        "emb".to_string(),
        Tensor::matrix(vocab, d0, (0..vocab * d0).map(|_| 0.5 * s.normal()).collect()).unwrap(),
    );
    for l in 0..3 {
        let (a, b) = (widths[l], widths[l + 1]);
        params.insert(format!("w{l}"), Tensor::matrix(a, b, (0..a * b).map(|_| 0.7 * s.normal()).collect()).unwrap());
        params.insert(format!("b{l}"), Tensor::vector((0..b).map(|_| 0.3 * s.normal()).collect()));
        params.insert(format!("g{l}"), Tensor::vector((0..b).map(|_| 1.0 + 0.2 * s.normal()).collect()));
        params.insert(format!("c{l}"), Tensor::vector((0..b).map(|_| 0.2 * s.normal()).collect()));
    }
    let last = widths[3];
    params.insert(
        "head".to_string(),
        Tensor::matrix(last, vocab, (0..last * vocab).map(|_| 0.7 * s.normal()).collect()).unwrap(),
    );
    let log_head = s.index(2) == 0;
    (Graph { rows, widths, mixes, input, ids, targets, vocab, log_head }, params)
}

fn forward<'a>(g: &'a Graph, params: &'a BTreeMap<String, Tensor>, tape: &mut Tape<'a>) -> Var {
    let p = |tape: &mut Tape<'a>, name: &str| tape.param(name.to_string(), Cow::Borrowed(&params[name]));
    let x = tape.constant(Cow::Borrowed(&g.input));
    let emb = p(tape, "emb");
    let e = tape.embedding(emb, &g.ids).unwrap();
    let mut h = tape.add(x, e).unwrap();
    for l in 0..3 {
        let w = p(tape, &format!("w{l}"));
        let b = p(tape, &format!("b{l}"));
        let z = tape.matmul(h, w).unwrap();
        let z = tape.add_row(z, b).unwrap();
        h = match g.mixes[l] {
            Mix::LayerNorm => {
                let gm = p(tape, &format!("g{l}"));
                let c = p(tape, &format!("c{l}"));
                tape.layer_norm(z, gm, c).unwrap()
            }
            Mix::Softmax => tape.softmax_rows(z, false).unwrap(),
            Mix::CausalSoftmax => tape.softmax_rows(z, true).unwrap(),
            Mix::SelfProduct => {
                let gate = tape.softmax_rows(z, false).unwrap();
                tape.mul(gate, z).unwrap()
            }
            Mix::Attention => {
                let zt = tape.transpose(z).unwrap();
                let scores = tape.matmul(z, zt).unwrap();
                let scores = tape.scale(scores, 0.3);
                let att = tape.softmax_rows(scores, true).unwrap();
                let mixed = tape.matmul(att, z).unwrap();
                let top = tape.concat_rows(mixed, z).unwrap();
                // keep the first `rows` rows by multiplying with a selector
                let sel = Tensor::matrix(
                    g.rows,
                    2 * g.rows,
                    (0..g.rows * 2 * g.rows)
                        .map(|k| if k / (2 * g.rows) == k % (2 * g.rows) || k / (2 * g.rows) + g.rows == k % (2 * g.rows) { 0.5 } else { 0.0 })
                        .collect(),
                )
                .unwrap();
                let sel = tape.constant(Cow::Owned(sel));
                tape.matmul(sel, top).unwrap()
            }
            Mix::Scale => tape.scale(z, -1.7),
        };
    }
    let head = p(tape, "head");
    let logits = tape.matmul(h, head).unwrap();
    if g.log_head {
        let sm = tape.softmax_rows(logits, false).unwrap();
        let lg = tape.log(sm);
        let s = tape.sum(lg);
        tape.scale(s, -1.0)
    } else {
        tape.cross_entropy(logits, &g.targets).unwrap()
    }
}

fn eval(g: &Graph, params: &BTreeMap<String, Tensor>) -> f64 {
    let mut tape = Tape::new();
    let out = forward(g, params, &mut tape);
    tape.value(out).item()
}

/// Worst relative error between tape and finite-difference gradients.
pub fn max_rel_error(seed: u64) -> f64 {
    let (g, params) = random_graph(seed);
    let grads = {
        let mut tape = Tape::new();
        let out = forward(&g, &params, &mut tape);
        tape.backward(out).unwrap()
    };
    let mut worst: f64 = 0.0;
    for (name, t) in &params {
        for i in 0..t.len() {
            let mut plus = params.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += H;
            let mut minus = params.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= H;
            let numeric = (eval(&g, &plus) - eval(&g, &minus)) / (2.0 * H);
            let analytic = grads.get(name).map_or(0.0, |t| t.data()[i]);
            // relative error, with an absolute floor for near-zero gradients
            let denom = analytic.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max((analytic - numeric).abs() / denom);
        }
    }
    let _ = (g.vocab, &g.widths);
    worst
}
