//! Directed acyclic decoding lattices with exact expected n-gram statistics.
//!
//! A [`Lattice`] has `L` vertices, a strictly upper-triangular row-stochastic
//! transition matrix and one emission distribution per vertex. On top of it
//! this crate computes passing probabilities, the fuzzy n-gram alignment loss
//! and the marginal NLL together with exact gradients with respect to logits,
//! three decoders, brute-force oracles for all of the above, and a small
//! tabular training harness.

pub mod cli;
pub mod decode;
pub mod error;
pub mod fixtures;
pub mod fuzzy;
pub mod grad;
pub mod io;
pub mod lattice;
pub mod matrix;
pub mod oracle;
pub mod pathdp;
pub mod train;

pub use decode::{decode, decode_stats, Decode, StatRecord, Strategy};
pub use error::{Error, Result};
pub use fuzzy::{fa_loss, AlignmentReport};
pub use grad::{finite_diff_check, loss_grad, loss_value, CheckReport, GradientBundle, LossKind};
pub use lattice::{random_lattice, Lattice, LatticeLogits, ValidationVerdict, Violation};
pub use matrix::Matrix;
pub use pathdp::{marginal_nll, passing_probabilities, PassingVector, Path, Reference};
pub use train::{make_toy_corpus, train, CorpusSpec, Preset, ToyCorpus, ToyModel, TrainConfig};
