//! Reverse-mode gradients against central finite differences on randomly
//! composed graphs.

mod common;

use std::borrow::Cow;

use common::graphs::{max_rel_error, TOL};
use mialab_core::numerics::{Tape, Tensor};

#[test]
fn hundred_random_graphs_match_finite_differences() {
    for seed in 0..120 {
        let err = max_rel_error(seed);
        assert!(err < TOL, "graph {seed}: max relative error {err}");
    }
}

#[test]
fn relu_away_from_kink() {
    let w = Tensor::matrix(1, 4, vec![-2.0, -0.5, 0.7, 3.0]).unwrap();
    let mut tape = Tape::new();
    let v = tape.param("w", Cow::Borrowed(&w));
    let r = tape.relu(v);
    let sq = tape.mul(r, r).unwrap();
    let out = tape.sum(sq);
    let g = tape.backward(out).unwrap();
    assert_eq!(g["w"].data(), &[0.0, 0.0, 1.4, 6.0]);
}
