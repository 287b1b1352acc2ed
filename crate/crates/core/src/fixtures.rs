//! Small hand-checkable lattices used across tests, examples and the CLI docs.

use crate::lattice::{Lattice, LatticeLogits};
use crate::matrix::Matrix;

/// Logit value whose softmax weight underflows to exactly zero next to a 0 logit.
pub const NEG_LARGE: f64 = -1000.0;

/// Deterministic chain `1 → 2 → … → L` where vertex `k` emits `tokens[k-1]`
/// with probability one.
pub fn chain(tokens: &[usize], vocab_size: usize) -> Lattice {
    Lattice::from_logits(&chain_logits(tokens, vocab_size)).expect("chain fixture")
}

pub fn chain_logits(tokens: &[usize], vocab_size: usize) -> LatticeLogits {
    let l = tokens.len();
    let transition = Matrix::from_fn(l, l, |i, j| if j == i + 1 { 0.0 } else { NEG_LARGE });
    let emission = Matrix::from_fn(
        l,
        vocab_size,
        |v, t| {
            if t == tokens[v] {
                0.0
            } else {
                NEG_LARGE
            }
        },
    );
    LatticeLogits::new(transition, emission).expect("chain fixture")
}

/// The four-vertex branch lattice: `1 → {2, 3}` with probability 1/2 each,
/// `2 → 4` and `3 → 4` with probability one. Vertices emit tokens 0, 1, 2, 1
/// deterministically over a vocabulary of 3.
pub fn b4() -> Lattice {
    Lattice::from_logits(&b4_logits()).expect("b4 fixture")
}

pub fn b4_logits() -> LatticeLogits {
    let n = NEG_LARGE;
    let transition = Matrix::from_rows(vec![
        vec![n, 0.0, 0.0, n],
        vec![n, n, n, 0.0],
        vec![n, n, n, 0.0],
        vec![n, n, n, n],
    ])
    .unwrap();
    let tokens = [0, 1, 2, 1];
    let emission = Matrix::from_fn(4, 3, |v, t| if t == tokens[v] { 0.0 } else { n });
    LatticeLogits::new(transition, emission).expect("b4 fixture")
}
