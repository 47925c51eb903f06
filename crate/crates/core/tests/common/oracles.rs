//! Independent reference implementations and the checks that compare the
//! library against them. Each check returns a short summary or the first
//! mismatch.

use std::collections::HashMap;

use mialab_core::baselines::min_k_pp_token;
use mialab_core::cluster::kmeans2;
use mialab_core::eval::classification_metrics;
use mialab_core::metrics::levenshtein;
use mialab_core::numerics::{AdamState, Gradients, Tensor};
use mialab_core::rng::{Seed, Stream};

fn lev_rec(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    if let Some(&d) = memo.get(&(a.len(), b.len())) {
        return d;
    }
    let sub = lev_rec(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
    let del = lev_rec(&a[1..], b, memo) + 1;
    let ins = lev_rec(a, &b[1..], memo) + 1;
    let d = sub.min(del).min(ins);
    memo.insert((a.len(), b.len()), d);
    d
}

fn all_strings(max_len: usize, alphabet: u8) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        frontier = frontier
            .iter()
            .flat_map(|s: &Vec<u8>| {
                (0..alphabet).map(move |c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
        out.extend(frontier.iter().cloned());
    }
    out
}

/// Edit distance against the defining recursion on every pair of strings
/// up to `max_len` over `alphabet` symbols.
pub fn levenshtein_exhaustive(max_len: usize, alphabet: u8) -> Result<String, String> {
    let strings = all_strings(max_len, alphabet);
    let mut pairs = 0usize;
    for a in &strings {
        for b in &strings {
            let mut memo = HashMap::new();
            let want = lev_rec(a, b, &mut memo);
            let got = levenshtein(a, b);
            if got != want {
                return Err(format!("levenshtein({a:?}, {b:?}) = {got}, recursion gives {want}"));
            }
            pairs += 1;
        }
    }
    Ok(format!("{pairs} pairs"))
}

fn sse(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m) * (x - m)).sum()
}

/// Best within-cluster sum of squares over every split into two non-empty
/// groups.
fn best_partition(xs: &[f64]) -> f64 {
    let n = xs.len();
    let mut best = f64::INFINITY;
    for mask in 1u32..(1 << (n - 1)) {
        let (mut a, mut b) = (vec![], vec![]);
        for (i, &x) in xs.iter().enumerate() {
            if mask >> i & 1 == 1 { a.push(x) } else { b.push(x) }
        }
        best = best.min(sse(&a) + sse(&b));
    }
    best
}

/// Two-cluster KMeans inertia against exhaustive search on random 1-D sets.
pub fn kmeans_exhaustive(instances: usize, max_n: usize, seed: u64) -> Result<String, String> {
    let mut s = Stream::new(Seed(seed), "kmeans-oracle");
    for k in 0..instances {
        let n = s.range_inclusive(2, max_n);
        let xs: Vec<f64> = (0..n).map(|_| (s.normal() * 3.0 * 1e6).round() / 1e6).collect();
        let points: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let best = best_partition(&xs);
        let got = match kmeans2(&points, Seed(k as u64)) {
            Ok(r) => r.inertia,
            Err(e) if xs.iter().all(|&x| x == xs[0]) => {
                let _ = e;
                continue;
            }
            Err(e) => return Err(format!("instance {k}: {e}")),
        };
        if (got - best).abs() > 1e-9 * best.max(1.0) {
            return Err(format!("instance {k} ({n} points): kmeans inertia {got}, optimum {best}"));
        }
    }
    Ok(format!("{instances} instances"))
}

/// One Adam step on f(w) = w² from w = 1 with learning rate 0.1.
pub fn adam_first_step() -> Result<String, String> {
    let mut store = std::collections::BTreeMap::from([("w".to_string(), Tensor::scalar(1.0))]);
    let grads = Gradients::from([("w".to_string(), Tensor::scalar(2.0))]);
    let mut adam = AdamState::with_betas(0.1, 0.9, 0.999, 1e-8);
    adam.step(&grads, &mut store).map_err(|e| e.to_string())?;
    let w = store["w"].item();
    // m̂ = 2, v̂ = 4: the step is 0.1 · 2 / (2 + 1e-8).
    let want = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
    if (w - want).abs() > 1e-12 || (w - 0.9).abs() > 1e-6 {
        return Err(format!("w' = {w}, expected {want}"));
    }
    Ok(format!("w' = {w:.9}"))
}

/// Min-K%++ token score for p = (0.9, 0.1) with the likelier token realized.
pub fn min_k_pp_hand() -> Result<String, String> {
    let z = min_k_pp_token(&[0.9, 0.1], 0).ok_or("no score for a non-degenerate distribution")?;
    let (p, q) = (0.9f64, 0.1f64);
    let mu = p * p.ln() + q * q.ln();
    let sigma = (p * (p.ln() - mu).powi(2) + q * (q.ln() - mu).powi(2)).sqrt();
    let want = (p.ln() - mu) / sigma;
    if (z - 0.3333).abs() > 1e-3 || (z - want).abs() > 1e-12 {
        return Err(format!("z = {z}, expected {want}"));
    }
    Ok(format!("z = {z:.4}"))
}

/// Balanced accuracy and F1 against a confusion-matrix count on random
/// labelings of size up to 20.
pub fn confusion_oracle(instances: usize, seed: u64) -> Result<String, String> {
    let mut s = Stream::new(Seed(seed), "confusion-oracle");
    let mut checked = 0;
    while checked < instances {
        let n = s.range_inclusive(2, 20);
        let truth: Vec<bool> = (0..n).map(|_| s.uniform() < 0.5).collect();
        let pred: Vec<bool> = (0..n).map(|_| s.uniform() < 0.5).collect();
        let both_classes = truth.iter().any(|&t| t) && truth.iter().any(|&t| !t);
        let got = classification_metrics(&truth, &pred);
        if !both_classes {
            if got.is_ok() {
                return Err(format!("single-class truth {truth:?} accepted"));
            }
            continue;
        }
        let got = got.map_err(|e| e.to_string())?;
        let count = |t: bool, p: bool| truth.iter().zip(&pred).filter(|&(&a, &b)| a == t && b == p).count() as f64;
        let (tp, fn_, fp, tn) = (count(true, true), count(true, false), count(false, true), count(false, false));
        let bacc = 0.5 * (tp / (tp + fn_) + tn / (tn + fp));
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        if (got.balanced_accuracy - bacc).abs() > 1e-12 || (got.f1 - f1).abs() > 1e-12 {
            return Err(format!("truth {truth:?} pred {pred:?}: got ({}, {}), want ({bacc}, {f1})", got.balanced_accuracy, got.f1));
        }
        checked += 1;
    }
    Ok(format!("{instances} instances"))
}

/// Finite-difference agreement on `graphs` random graphs.
pub fn autodiff_graphs(graphs: u64) -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..graphs {
        let e = super::graphs::max_rel_error(seed);
        if !(e < super::graphs::TOL) {
            return Err(format!("graph {seed}: relative error {e:.2e}"));
        }
        worst = worst.max(e);
    }
    Ok(format!("{graphs} graphs, worst relative error {worst:.1e}"))
}
