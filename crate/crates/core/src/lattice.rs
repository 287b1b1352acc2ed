//! The decoding lattice: `L` vertices joined by strictly forward transitions,
//! each vertex carrying a distribution over `V` tokens.
//!
//! Vertices are numbered `1..=L` wherever they are exposed to callers (paths,
//! validation reports, [`Lattice::transition`]). The backing [`Matrix`]
//! storage is 0-based. Token ids are 0-based, `0..V`.

use std::fmt;
use std::path::Path as FsPath;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Tolerance on row sums of transition and emission matrices.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Unconstrained lattice parameters. This is also the on-disk lattice format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeLogits {
    #[serde(rename = "L")]
    pub num_vertices: usize,
    pub vocab_size: usize,
    /// `L×L`; entries on or below the diagonal and the last row are ignored.
    pub transition_logits: Matrix,
    /// `L×V`.
    pub emission_logits: Matrix,
}

impl LatticeLogits {
    pub fn new(transition_logits: Matrix, emission_logits: Matrix) -> Result<Self> {
        let logits = LatticeLogits {
            num_vertices: transition_logits.rows(),
            vocab_size: emission_logits.cols(),
            transition_logits,
            emission_logits,
        };
        logits.check_shape()?;
        Ok(logits)
    }

    /// All-zero logits: uniform transitions over successors, uniform emissions.
    pub fn zeros(num_vertices: usize, vocab_size: usize) -> Self {
        LatticeLogits {
            num_vertices,
            vocab_size,
            transition_logits: Matrix::zeros(num_vertices, num_vertices),
            emission_logits: Matrix::zeros(num_vertices, vocab_size),
        }
    }

    pub fn check_shape(&self) -> Result<()> {
        let (l, v) = (self.num_vertices, self.vocab_size);
        if l == 0 || v == 0 {
            return Err(Error::InvalidSize(format!(
                "need L >= 1 and vocab_size >= 1, got L={l}, vocab_size={v}"
            )));
        }
        let t = &self.transition_logits;
        let e = &self.emission_logits;
        if t.rows() != l || t.cols() != l {
            return Err(Error::InvalidSize(format!(
                "transition_logits is {}x{}, expected {l}x{l}",
                t.rows(),
                t.cols()
            )));
        }
        if e.rows() != l || e.cols() != v {
            return Err(Error::InvalidSize(format!(
                "emission_logits is {}x{}, expected {l}x{v}",
                e.rows(),
                e.cols()
            )));
        }
        Ok(())
    }

    /// Number of scalar parameters (`L² + L·V`), masked entries included.
    pub fn num_params(&self) -> usize {
        self.num_vertices * self.num_vertices + self.num_vertices * self.vocab_size
    }

    /// Flat read access: transition logits first, then emission logits.
    pub fn param(&self, k: usize) -> f64 {
        let lt = self.num_vertices * self.num_vertices;
        if k < lt {
            self.transition_logits.as_slice()[k]
        } else {
            self.emission_logits.as_slice()[k - lt]
        }
    }

    pub fn param_mut(&mut self, k: usize) -> &mut f64 {
        let lt = self.num_vertices * self.num_vertices;
        if k < lt {
            &mut self.transition_logits.as_mut_slice()[k]
        } else {
            &mut self.emission_logits.as_mut_slice()[k - lt]
        }
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let logits: LatticeLogits = serde_json::from_str(&text)?;
        logits
            .check_shape()
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok(logits)
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        crate::io::write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }
}

/// Generates logits with every entry drawn i.i.d. from the standard normal
/// distribution, using ChaCha8 seeded with `seed`. Transition logits are drawn
/// row-major over the full `L×L` matrix, then emission logits row-major.
pub fn random_lattice(seed: u64, num_vertices: usize, vocab_size: usize) -> Result<LatticeLogits> {
    if num_vertices < 2 {
        return Err(Error::InvalidSize(format!(
            "random lattices need L >= 2, got {num_vertices}"
        )));
    }
    if vocab_size < 1 {
        return Err(Error::InvalidSize("vocab_size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |_, _| StandardNormal.sample(&mut rng);
    let transition_logits = Matrix::from_fn(num_vertices, num_vertices, &mut draw);
    let emission_logits = Matrix::from_fn(num_vertices, vocab_size, &mut draw);
    Ok(LatticeLogits {
        num_vertices,
        vocab_size,
        transition_logits,
        emission_logits,
    })
}

/// Probabilistic lattice: row-stochastic strictly upper-triangular
/// transitions plus per-vertex token distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    transition: Matrix,
    emission: Matrix,
}

impl Lattice {
    /// Wraps probability matrices without checking the lattice invariants; use
    /// [`Lattice::validate`] for that. Only shapes are checked.
    pub fn from_probabilities(transition: Matrix, emission: Matrix) -> Result<Self> {
        let l = transition.rows();
        if l == 0 || transition.cols() != l {
            return Err(Error::InvalidSize(format!(
                "transition matrix must be square and non-empty, got {}x{}",
                transition.rows(),
                transition.cols()
            )));
        }
        if emission.rows() != l || emission.cols() == 0 {
            return Err(Error::InvalidSize(format!(
                "emission matrix must be {l}xV with V >= 1, got {}x{}",
                emission.rows(),
                emission.cols()
            )));
        }
        Ok(Lattice {
            transition,
            emission,
        })
    }

    /// Convenience constructor from row vectors.
    pub fn from_rows(transition: Vec<Vec<f64>>, emission: Vec<Vec<f64>>) -> Result<Self> {
        let t = Matrix::from_rows(transition).map_err(Error::InvalidSize)?;
        let e = Matrix::from_rows(emission).map_err(Error::InvalidSize)?;
        Self::from_probabilities(t, e)
    }

    /// Masked softmax: row `i < L` is normalized over successors `j > i` only,
    /// the last row is all zeros, emission rows are plain softmax.
    pub fn from_logits(params: &LatticeLogits) -> Result<Self> {
        params.check_shape()?;
        let l = params.num_vertices;
        let finite = params
            .transition_logits
            .as_slice()
            .iter()
            .chain(params.emission_logits.as_slice())
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("logits must be finite".into()));
        }

        let mut transition = Matrix::zeros(l, l);
        for i in 0..l.saturating_sub(1) {
            softmax_into(
                &params.transition_logits.row(i)[i + 1..],
                &mut transition.row_mut(i)[i + 1..],
            );
        }
        let mut emission = Matrix::zeros(l, params.vocab_size);
        for v in 0..l {
            softmax_into(params.emission_logits.row(v), emission.row_mut(v));
        }
        Ok(Lattice {
            transition,
            emission,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.transition.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.emission.cols()
    }

    /// Transition probability from vertex `i` to vertex `j` (1-based).
    pub fn transition(&self, i: usize, j: usize) -> f64 {
        self.transition[(i - 1, j - 1)]
    }

    /// Probability that vertex `v` (1-based) emits token `t`.
    pub fn emission(&self, v: usize, t: usize) -> f64 {
        self.emission[(v - 1, t)]
    }

    pub fn transition_matrix(&self) -> &Matrix {
        &self.transition
    }

    pub fn emission_matrix(&self) -> &Matrix {
        &self.emission
    }

    pub fn validate(&self) -> ValidationVerdict {
        let l = self.num_vertices();
        let mut violations = Vec::new();

        for i in 0..l {
            let row = self.transition.row(i);
            for (j, &x) in row.iter().enumerate() {
                if !x.is_finite() || !(0.0..=1.0).contains(&x) {
                    violations.push(Violation::OutOfRange {
                        matrix: MatrixKind::Transition,
                        row: i + 1,
                        col: j + 1,
                        value: x,
                    });
                } else if j <= i && x != 0.0 {
                    violations.push(Violation::LowerTriangular {
                        row: i + 1,
                        col: j + 1,
                        value: x,
                    });
                }
            }
            if i + 1 == l {
                if let Some(j) = row.iter().position(|&x| x != 0.0) {
                    if j > i {
                        violations.push(Violation::TerminalRow {
                            col: j + 1,
                            value: row[j],
                        });
                    }
                }
            } else {
                let residual = (1.0 - row.iter().sum::<f64>()).abs();
                if residual.is_nan() || residual > ROW_SUM_TOLERANCE {
                    violations.push(Violation::RowSum {
                        matrix: MatrixKind::Transition,
                        row: i + 1,
                        residual,
                    });
                }
            }
        }

        for v in 0..l {
            let row = self.emission.row(v);
            for (t, &x) in row.iter().enumerate() {
                if !x.is_finite() || !(0.0..=1.0).contains(&x) {
                    violations.push(Violation::OutOfRange {
                        matrix: MatrixKind::Emission,
                        row: v + 1,
                        col: t,
                        value: x,
                    });
                }
            }
            let residual = (1.0 - row.iter().sum::<f64>()).abs();
            if residual.is_nan() || residual > ROW_SUM_TOLERANCE {
                violations.push(Violation::RowSum {
                    matrix: MatrixKind::Emission,
                    row: v + 1,
                    residual,
                });
            }
        }

        ValidationVerdict { violations }
    }

    /// Errors with [`Error::InvalidLattice`] when any invariant is violated.
    pub fn ensure_valid(&self) -> Result<()> {
        let verdict = self.validate();
        if verdict.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidLattice(verdict.to_string()))
        }
    }

    pub(crate) fn check_token(&self, token: usize) -> Result<()> {
        if token >= self.vocab_size() {
            return Err(Error::InvalidToken {
                token,
                vocab_size: self.vocab_size(),
            });
        }
        Ok(())
    }

    /// Per-vertex argmax token, smallest id on ties, with its probability.
    pub fn argmax_tokens(&self) -> Vec<(usize, f64)> {
        (0..self.num_vertices())
            .map(|v| argmax(self.emission.row(v)))
            .collect()
    }
}

/// First index of the maximum. Ties go to the smallest index.
pub(crate) fn argmax(xs: &[f64]) -> (usize, f64) {
    let mut best = (0, xs[0]);
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    if logits.is_empty() {
        return;
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixKind {
    Transition,
    Emission,
}

impl fmt::Display for MatrixKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixKind::Transition => f.write_str("transition"),
            MatrixKind::Emission => f.write_str("emission"),
        }
    }
}

/// One violated lattice invariant. Vertex rows are 1-based; emission columns
/// are token ids.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// Entry outside `[0, 1]` or not finite.
    OutOfRange {
        matrix: MatrixKind,
        row: usize,
        col: usize,
        value: f64,
    },
    /// Nonzero transition at `(row, col)` with `col <= row`.
    LowerTriangular { row: usize, col: usize, value: f64 },
    /// Nonzero entry in the terminal vertex's transition row.
    TerminalRow { col: usize, value: f64 },
    /// `|1 - Σ row|` above [`ROW_SUM_TOLERANCE`].
    RowSum {
        matrix: MatrixKind,
        row: usize,
        residual: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OutOfRange {
                matrix,
                row,
                col,
                value,
            } => write!(
                f,
                "{matrix} entry ({row},{col}) = {value} is not a probability"
            ),
            Violation::LowerTriangular { row, col, value } => write!(
                f,
                "lower-triangular transition ({row},{col}) = {value} must be 0"
            ),
            Violation::TerminalRow { col, value } => {
                write!(
                    f,
                    "terminal vertex has outgoing transition to {col} = {value}"
                )
            }
            Violation::RowSum {
                matrix,
                row,
                residual,
            } => write!(f, "{matrix} row {row} sum residual {residual:.3e}"),
        }
    }
}

/// Result of [`Lattice::validate`]: empty violation list means success.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationVerdict {
    pub violations: Vec<Violation>,
}

impl ValidationVerdict {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return f.write_str("valid");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn two_vertices_force_the_only_successor() {
        let logits = LatticeLogits::new(Matrix::filled(2, 2, 0.7), Matrix::zeros(2, 3)).unwrap();
        let lat = Lattice::from_logits(&logits).unwrap();
        assert_eq!(lat.transition(1, 2), 1.0);
        assert_eq!(lat.transition(1, 1), 0.0);
        assert_eq!(lat.transition(2, 1), 0.0);
        assert_eq!(lat.transition(2, 2), 0.0);
    }

    #[test]
    fn equal_logits_split_evenly() {
        let lat = Lattice::from_logits(&LatticeLogits::zeros(3, 2)).unwrap();
        assert_eq!(lat.transition(1, 2), 0.5);
        assert_eq!(lat.transition(1, 3), 0.5);
        assert_eq!(lat.transition(2, 3), 1.0);
    }

    #[test]
    fn masked_softmax_matches_hand_normalization() {
        let mut logits = LatticeLogits::zeros(3, 2);
        logits.transition_logits[(0, 1)] = 3f64.ln();
        logits.transition_logits[(0, 2)] = 0.0;
        // masked entry must not leak into the normalization
        logits.transition_logits[(0, 0)] = 50.0;
        let lat = Lattice::from_logits(&logits).unwrap();
        let (a, b) = (3.0, 1.0);
        assert!((lat.transition(1, 2) - a / (a + b)).abs() < 1e-15);
        assert!((lat.transition(1, 3) - b / (a + b)).abs() < 1e-15);
        assert_eq!(lat.transition(1, 1), 0.0);
    }

    #[test]
    fn non_finite_logits_rejected() {
        let mut logits = LatticeLogits::zeros(3, 2);
        logits.emission_logits[(1, 1)] = f64::NAN;
        assert!(matches!(
            Lattice::from_logits(&logits),
            Err(Error::InvalidParameter(_))
        ));
        let mut logits = LatticeLogits::zeros(3, 2);
        logits.transition_logits[(2, 0)] = f64::INFINITY;
        assert!(Lattice::from_logits(&logits).is_err());
    }

    #[test]
    fn validate_accepts_chain() {
        assert!(fixtures::chain(&[0, 1, 1], 3).validate().is_valid());
        assert!(fixtures::b4().validate().is_valid());
    }

    #[test]
    fn validate_reports_lower_triangular_entry() {
        let lat = Lattice::from_rows(
            vec![
                vec![0.0, 1.0, 0.0],
                vec![0.1, 0.0, 0.9],
                vec![0.0, 0.0, 0.0],
            ],
            vec![vec![1.0]; 3],
        )
        .unwrap();
        let verdict = lat.validate();
        assert_eq!(
            verdict.violations,
            vec![Violation::LowerTriangular {
                row: 2,
                col: 1,
                value: 0.1
            }]
        );
    }

    #[test]
    fn validate_reports_emission_residual() {
        let lat = Lattice::from_rows(
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            vec![vec![0.5, 0.5], vec![0.4, 0.5]],
        )
        .unwrap();
        let verdict = lat.validate();
        assert_eq!(verdict.violations.len(), 1);
        match &verdict.violations[0] {
            Violation::RowSum {
                matrix: MatrixKind::Emission,
                row: 2,
                residual,
            } => assert!((residual - 0.1).abs() < 1e-12),
            other => panic!("unexpected violation {other:?}"),
        }
    }

    #[test]
    fn validate_reports_terminal_row() {
        let lat = Lattice::from_rows(
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            vec![vec![1.0], vec![1.0]],
        )
        .unwrap();
        assert!(lat.validate().is_valid());
        let mut t = lat.transition_matrix().clone();
        t[(0, 1)] = 0.7;
        let bad = Lattice::from_probabilities(t, lat.emission_matrix().clone()).unwrap();
        assert!(matches!(
            bad.validate().violations[0],
            Violation::RowSum { row: 1, .. }
        ));
    }

    #[test]
    fn random_lattice_is_deterministic() {
        let a = random_lattice(7, 5, 3).unwrap();
        let b = random_lattice(7, 5, 3).unwrap();
        assert_eq!(a, b);
        let c = random_lattice(8, 5, 3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn random_lattice_rejects_single_vertex() {
        assert!(matches!(
            random_lattice(0, 1, 3),
            Err(Error::InvalidSize(_))
        ));
    }

    #[test]
    fn seed_zero_fixture_validates() {
        let lat = Lattice::from_logits(&random_lattice(0, 4, 3).unwrap()).unwrap();
        assert!(lat.validate().is_valid(), "{}", lat.validate());
    }

    #[test]
    fn logits_json_layout() {
        let logits = LatticeLogits::zeros(2, 1);
        let json = serde_json::to_value(&logits).unwrap();
        assert_eq!(json["L"], 2);
        assert_eq!(json["vocab_size"], 1);
        assert_eq!(
            json["transition_logits"],
            serde_json::json!([[0.0, 0.0], [0.0, 0.0]])
        );
        assert_eq!(json["emission_logits"], serde_json::json!([[0.0], [0.0]]));
    }
}
