//! Reverse-mode automatic differentiation over a Wengert list.
//!
//! Operations are evaluated eagerly as they are recorded. Leaves are either
//! named parameters (which receive gradients) or constants (which do not).
//! Nodes whose inputs are all constant are marked as not needing a gradient
//! and are skipped entirely during the backward sweep.

use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{gemm_nn, gemm_nt_acc, gemm_tn_acc, Tensor};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(String),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax { x: Var },
    Log(Var),
    Embedding { table: Var, ids: Vec<usize> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    ConcatRows(Var, Var),
    Sum(Var),
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to every registered parameter.
pub type Gradients = BTreeMap<String, Tensor>;

/// Recorded forward computation.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

fn check_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::shape(op, alloc::format!("expected a matrix, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value: Cow::Owned(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records a leaf that will receive a gradient under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Cow<'a, Tensor>) -> Var {
        self.nodes.push(Node { value, op: Op::Param(name.into()), needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Cow<'a, Tensor>) -> Var {
        self.nodes.push(Node { value, op: Op::Constant, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = check_2d("matmul", self.value(a))?;
        let (k2, n) = check_2d("matmul", self.value(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", alloc::format!("[{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = check_2d("transpose", self.value(a))?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(Tensor::matrix(n, m, out)?, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", alloc::format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`n` vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = check_2d("add_row", self.value(a))?;
        if self.value(row).len() != n {
            return Err(Error::shape("add_row", alloc::format!("row of {} for {n} columns", self.value(row).len())));
        }
        let r = self.value(row).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(r) {
                *o += b;
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::AddRow(a, row), &[a, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", alloc::format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * s).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Relu(a), &[a])
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` is masked for `j > i`.
    pub fn softmax_rows(&mut self, a: Var, causal: bool) -> Result<Var> {
        let (m, n) = check_2d("softmax", self.value(a))?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let width = if causal { (i + 1).min(n) } else { n };
            let row = &src[i * n..i * n + width];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..width {
                let e = libm::exp(row[j] - mx);
                out[i * n + j] = e;
                z += e;
            }
            for j in 0..width {
                out[i * n + j] /= z;
            }
        }
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::Softmax { x: a }, &[a]))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| libm::log(x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Log(a), &[a])
    }

    /// Gathers rows of `table` (`[V, d]`) by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = check_2d("embedding", self.value(table))?;
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::OutOfVocabulary { token: id, vocab: v });
            }
            out.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let t = Tensor::matrix(ids.len(), d, out)?;
        Ok(self.push(t, Op::Embedding { table, ids: ids.to_vec() }, &[table]))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (m, n) = check_2d("layer_norm", self.value(x))?;
        if self.value(gamma).len() != n || self.value(beta).len() != n {
            return Err(Error::shape("layer_norm", "gain/bias length differs from row width"));
        }
        let src = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / libm::sqrt(var + LN_EPS);
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::matrix(m, n, out)?;
        Ok(self.push(t, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta]))
    }

    /// Summed token-level cross-entropy of `logits` (`[T, V]`) against `targets`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (t, v) = check_2d("cross_entropy", self.value(logits))?;
        if targets.len() != t {
            return Err(Error::shape("cross_entropy", alloc::format!("{} targets for {t} rows", targets.len())));
        }
        let src = self.value(logits).data();
        let mut probs = vec![0.0; t * v];
        let mut loss = 0.0;
        for i in 0..t {
            if targets[i] >= v {
                return Err(Error::OutOfVocabulary { token: targets[i], vocab: v });
            }
            let row = &src[i * v..(i + 1) * v];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..v {
                let e = libm::exp(row[j] - mx);
                probs[i * v + j] = e;
                z += e;
            }
            for j in 0..v {
                probs[i * v + j] /= z;
            }
            loss += libm::log(z) + mx - row[targets[i]];
        }
        let out = Tensor::scalar(loss);
        Ok(self.push(out, Op::CrossEntropy { logits, targets: targets.to_vec(), probs }, &[logits]))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m1, n) = check_2d("concat_rows", self.value(a))?;
        let (m2, n2) = check_2d("concat_rows", self.value(b))?;
        if n != n2 {
            return Err(Error::shape("concat_rows", alloc::format!("width {n} vs {n2}")));
        }
        let mut out = Vec::with_capacity((m1 + m2) * n);
        out.extend_from_slice(self.value(a).data());
        out.extend_from_slice(self.value(b).data());
        Ok(self.push(Tensor::matrix(m1 + m2, n, out)?, Op::ConcatRows(a, b), &[a, b]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Reverse sweep from a scalar node. Every parameter leaf on the tape
    /// appears in the result, with an all-zero gradient if it was unused.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if !out.is_scalar() {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Param(_) => {
                    grads[idx] = Some(g);
                }
                Op::Constant => {}
                _ => self.propagate(idx, &g, &mut grads)?,
            }
        }

        let mut result = Gradients::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let g = grads[idx].take().unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                if !g.is_finite() {
                    return Err(Error::NumericFailure(alloc::format!("gradient of `{name}`")));
                }
                match result.get_mut(name) {
                    Some(acc) => acc.axpy(1.0, &g)?,
                    None => {
                        result.insert(name.to_string(), g);
                    }
                }
            }
        }
        Ok(result)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        let slot = &mut grads[target.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.nodes[target.0].value.shape()));
        }
        f(slot.as_mut().expect("initialized").data_mut());
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                self.accumulate(grads, *a, |ga| gemm_nt_acc(gd, tb.data(), m, n, k, ga));
                self.accumulate(grads, *b, |gb| gemm_tn_acc(ta.data(), gd, m, k, n, gb));
            }
            Op::Transpose(a) => {
                let (m, n) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                self.accumulate(grads, *a, |ga| {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += gd[j * m + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(grads, v, |gv| gv.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(gd).for_each(|(x, y)| *x += y));
                let n = self.value(*row).len();
                self.accumulate(grads, *row, |gr| {
                    for chunk in gd.chunks(n) {
                        gr.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gd[i] * db[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += gd[i] * da[i];
                    }
                });
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(gd).for_each(|(x, y)| *x += s * y));
            }
            Op::Relu(a) => {
                let xa = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        if xa[i] > 0.0 {
                            ga[i] += gd[i];
                        }
                    }
                });
            }
            Op::Softmax { x } => {
                let y = node.value.data();
                let n = node.value.cols();
                self.accumulate(grads, *x, |gx| {
                    for (r, (yr, gr)) in y.chunks(n).zip(gd.chunks(n)).enumerate() {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gx[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::Log(a) => {
                let xa = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += gd[i] / xa[i];
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let d = self.value(*table).shape()[1];
                self.accumulate(grads, *table, |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            gt[id * d + j] += gd[r * d + j];
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let n = node.value.cols();
                let m = node.value.rows();
                let gm = self.value(*gamma).data();
                self.accumulate(grads, *gamma, |gg| {
                    for i in 0..m {
                        for j in 0..n {
                            gg[j] += gd[i * n + j] * xhat[i * n + j];
                        }
                    }
                });
                self.accumulate(grads, *beta, |gb| {
                    for i in 0..m {
                        for j in 0..n {
                            gb[j] += gd[i * n + j];
                        }
                    }
                });
                self.accumulate(grads, *x, |gx| {
                    for i in 0..m {
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..n {
                            let dh = gd[i * n + j] * gm[j];
                            mean_dh += dh;
                            mean_dh_h += dh * xhat[i * n + j];
                        }
                        mean_dh /= n as f64;
                        mean_dh_h /= n as f64;
                        for j in 0..n {
                            let dh = gd[i * n + j] * gm[j];
                            gx[i * n + j] += rstd[i] * (dh - mean_dh - xhat[i * n + j] * mean_dh_h);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let scale = gd[0];
                let v = self.value(*logits).cols();
                self.accumulate(grads, *logits, |gl| {
                    for (i, &t) in targets.iter().enumerate() {
                        for j in 0..v {
                            gl[i * v + j] += scale * probs[i * v + j];
                        }
                        gl[i * v + t] -= scale;
                    }
                });
            }
            Op::ConcatRows(a, b) => {
                let la = self.value(*a).len();
                self.accumulate(grads, *a, |ga| ga.iter_mut().zip(&gd[..la]).for_each(|(x, y)| *x += y));
                self.accumulate(grads, *b, |gb| gb.iter_mut().zip(&gd[la..]).for_each(|(x, y)| *x += y));
            }
            Op::Sum(a) => {
                let s = gd[0];
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += s));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param<'a>(tape: &mut Tape<'a>, name: &str, v: f64) -> Var {
        tape.param(name, Cow::Owned(Tensor::matrix(1, 1, vec![v]).unwrap()))
    }

    #[test]
    fn square_has_derivative_six_at_three() {
        let mut tape = Tape::new();
        let w = scalar_param(&mut tape, "w", 3.0);
        let sq = tape.mul(w, w).unwrap();
        let out = tape.sum(sq);
        let g = tape.backward(out).unwrap();
        assert_eq!(g["w"].item(), 6.0);
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let mut tape = Tape::new();
        let _w = scalar_param(&mut tape, "w", 3.0);
        let c = tape.constant(Cow::Owned(Tensor::matrix(1, 1, vec![5.0]).unwrap()));
        let out = tape.sum(c);
        let g = tape.backward(out).unwrap();
        assert_eq!(g["w"].data(), &[0.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.param("w", Cow::Owned(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap()));
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn nan_gradient_is_reported() {
        let mut tape = Tape::new();
        let w = scalar_param(&mut tape, "w", 0.0);
        let l = tape.log(w);
        let z = tape.mul(l, w).unwrap();
        let out = tape.sum(z);
        assert!(matches!(tape.backward(out), Err(Error::NumericFailure(_))));
    }

    #[test]
    fn shared_parameter_gradients_accumulate() {
        let mut tape = Tape::new();
        let a = scalar_param(&mut tape, "w", 2.0);
        let b = scalar_param(&mut tape, "w", 2.0);
        let p = tape.mul(a, b).unwrap();
        let out = tape.sum(p);
        let g = tape.backward(out).unwrap();
        assert_eq!(g["w"].item(), 4.0);
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut tape = Tape::new();
        let x = tape.constant(Cow::Owned(Tensor::matrix(2, 2, vec![1.0, 5.0, 1.0, 1.0]).unwrap()));
        let y = tape.softmax_rows(x, true).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 0.0, 0.5, 0.5]);
    }
}
