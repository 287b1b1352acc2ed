//! Fuzzy n-gram alignment between a lattice and a reference.
//!
//! Expected n-gram counts are evaluated without enumerating paths: the
//! passing vector `p` is pushed through `n − 1` vector–matrix products with the
//! transition matrix, optionally reweighting by the emission probability of the
//! gram's next token after each hop. Cost is `O(n · L²)` per gram.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::matrix::Matrix;
use crate::pathdp::{passing_unchecked, Reference};

/// Distinct n-grams of a reference with their multiplicities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NGramTable {
    pub order: usize,
    pub entries: BTreeMap<Vec<usize>, usize>,
}

impl NGramTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> usize {
        self.entries.values().sum()
    }

    pub fn count(&self, gram: &[usize]) -> usize {
        self.entries.get(gram).copied().unwrap_or(0)
    }
}

pub fn ngram_table(y: &Reference, n: usize) -> Result<NGramTable> {
    Ok(NGramTable {
        order: n,
        entries: count_ngrams(y.tokens(), n)?,
    })
}

pub(crate) fn count_ngrams(tokens: &[usize], n: usize) -> Result<BTreeMap<Vec<usize>, usize>> {
    if n < 1 {
        return Err(Error::InvalidOrder(n));
    }
    let mut entries = BTreeMap::new();
    for w in tokens.windows(n) {
        *entries.entry(w.to_vec()).or_insert(0) += 1;
    }
    Ok(entries)
}

/// `c ← c · E` restricted to the strictly upper triangle.
pub(crate) fn push_forward(c: &[f64], e: &Matrix) -> Vec<f64> {
    let l = c.len();
    let mut out = vec![0.0; l];
    for (u, &cu) in c.iter().enumerate() {
        if cu == 0.0 {
            continue;
        }
        let row = e.row(u);
        for v in u + 1..l {
            out[v] += cu * row[v];
        }
    }
    out
}

/// `‖pᵀ · E^{n−1}‖₁`: expected number of n-grams in a sampled output.
pub fn expected_total_ngrams(lat: &Lattice, n: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidOrder(n));
    }
    lat.ensure_valid()?;
    let p = passing_unchecked(lat);
    Ok(total_from_passing(lat, &p, n))
}

pub(crate) fn total_from_passing(lat: &Lattice, p: &[f64], n: usize) -> f64 {
    let mut c = p.to_vec();
    for _ in 1..n {
        c = push_forward(&c, lat.transition_matrix());
    }
    c.iter().sum()
}

/// `G(i, v) = P(g_i | v)`, one row per gram position.
#[derive(Clone, Debug, PartialEq)]
pub struct GramProbMatrix(pub Matrix);

pub fn gram_prob_matrix(lat: &Lattice, gram: &[usize]) -> Result<GramProbMatrix> {
    check_gram(lat, gram)?;
    Ok(GramProbMatrix(gram_rows(lat, gram)))
}

fn check_gram(lat: &Lattice, gram: &[usize]) -> Result<()> {
    if gram.is_empty() {
        return Err(Error::EmptyGram);
    }
    gram.iter().try_for_each(|&t| lat.check_token(t))
}

fn gram_rows(lat: &Lattice, gram: &[usize]) -> Matrix {
    let q = lat.emission_matrix();
    Matrix::from_fn(gram.len(), lat.num_vertices(), |i, v| q[(v, gram[i])])
}

/// `‖pᵀ⊙G₁ · E⊙G₂ · … · E⊙Gₙ‖₁`: expected occurrences of `gram` in a sampled
/// output.
pub fn expected_gram_count(lat: &Lattice, gram: &[usize]) -> Result<f64> {
    check_gram(lat, gram)?;
    lat.ensure_valid()?;
    let p = passing_unchecked(lat);
    Ok(gram_count_from_passing(lat, &p, gram))
}

pub(crate) fn gram_count_from_passing(lat: &Lattice, p: &[f64], gram: &[usize]) -> f64 {
    let q = lat.emission_matrix();
    let mut c: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(v, pv)| pv * q[(v, gram[0])])
        .collect();
    for &tok in &gram[1..] {
        c = push_forward(&c, lat.transition_matrix());
        for (v, cv) in c.iter_mut().enumerate() {
            *cv *= q[(v, tok)];
        }
    }
    c.iter().sum()
}

/// Clipped expected match count, expected n-gram count and their ratio.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Precision {
    pub numerator: f64,
    pub denominator: f64,
    pub precision: f64,
}

pub fn fuzzy_precision(lat: &Lattice, y: &Reference, n: usize) -> Result<Precision> {
    let parts = AlignmentParts::compute(lat, y, n)?;
    Ok(parts.precision())
}

/// `min(exp(1 − T_y / E[T]), 1)`.
pub fn brevity_penalty(lat: &Lattice, y: &Reference) -> Result<f64> {
    lat.ensure_valid()?;
    let t = passing_unchecked(lat).iter().sum::<f64>();
    Ok(bp_value(y.len() as f64, t))
}

pub(crate) fn bp_value(ref_len: f64, expected_len: f64) -> f64 {
    if expected_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len / expected_len).exp()
    }
}

/// Full fuzzy-alignment evaluation of a lattice against a reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub order: usize,
    pub numerator: f64,
    pub denominator: f64,
    pub precision: f64,
    pub expected_length: f64,
    pub bp: f64,
    pub loss: f64,
}

/// `−BP × p′_n`.
pub fn fa_loss(lat: &Lattice, y: &Reference, n: usize) -> Result<AlignmentReport> {
    Ok(AlignmentParts::compute(lat, y, n)?.report())
}

/// Intermediate quantities shared by the loss and its gradient.
pub(crate) struct AlignmentParts {
    pub order: usize,
    pub passing: Vec<f64>,
    pub table: NGramTable,
    /// Expected count per entry of `table`, in table order.
    pub expected_counts: Vec<f64>,
    pub denominator: f64,
    pub expected_length: f64,
    pub ref_len: usize,
}

impl AlignmentParts {
    pub fn compute(lat: &Lattice, y: &Reference, n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidOrder(n));
        }
        if y.len() < n {
            return Err(Error::InfeasibleOrder { m: y.len(), n });
        }
        lat.ensure_valid()?;
        y.check_vocab(lat)?;
        let passing = passing_unchecked(lat);
        let denominator = total_from_passing(lat, &passing, n);
        if denominator <= 0.0 {
            return Err(Error::DegenerateLattice(n));
        }
        let table = ngram_table(y, n)?;
        let expected_counts = table
            .entries
            .keys()
            .map(|g| gram_count_from_passing(lat, &passing, g))
            .collect();
        let expected_length = passing.iter().sum();
        Ok(AlignmentParts {
            order: n,
            passing,
            table,
            expected_counts,
            denominator,
            expected_length,
            ref_len: y.len(),
        })
    }

    pub fn numerator(&self) -> f64 {
        self.table
            .entries
            .values()
            .zip(&self.expected_counts)
            .map(|(&c, &e)| e.min(c as f64))
            .sum()
    }

    pub fn precision(&self) -> Precision {
        let numerator = self.numerator();
        Precision {
            numerator,
            denominator: self.denominator,
            precision: numerator / self.denominator,
        }
    }

    pub fn report(&self) -> AlignmentReport {
        let p = self.precision();
        let bp = bp_value(self.ref_len as f64, self.expected_length);
        AlignmentReport {
            order: self.order,
            numerator: p.numerator,
            denominator: p.denominator,
            precision: p.precision,
            expected_length: self.expected_length,
            bp,
            loss: -bp * p.precision,
        }
    }
}

/// Exact clipped n-gram precision of a concrete output against a reference.
pub fn clipped_precision(output: &[usize], reference: &[usize], n: usize) -> Result<f64> {
    let out = count_ngrams(output, n)?;
    let refs = count_ngrams(reference, n)?;
    let total: usize = out.values().sum();
    if total == 0 {
        return Err(Error::DegenerateLattice(n));
    }
    let matched: usize = refs
        .iter()
        .map(|(g, &c)| c.min(out.get(g).copied().unwrap_or(0)))
        .sum();
    Ok(matched as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{b4, chain};
    use crate::pathdp::expected_length;

    fn r(t: &[usize]) -> Reference {
        Reference::new(t.to_vec()).unwrap()
    }

    #[test]
    fn ngram_tables() {
        let t = ngram_table(&r(&[0, 1, 1]), 2).unwrap();
        assert_eq!(t.entries.len(), 2);
        assert_eq!(t.count(&[0, 1]), 1);
        assert_eq!(t.count(&[1, 1]), 1);
        let t = ngram_table(&r(&[0, 0, 0]), 2).unwrap();
        assert_eq!(t.entries.len(), 1);
        assert_eq!(t.count(&[0, 0]), 2);
        assert!(ngram_table(&r(&[0, 1]), 3).unwrap().is_empty());
        assert!(matches!(
            ngram_table(&r(&[0]), 0),
            Err(Error::InvalidOrder(0))
        ));
    }

    #[test]
    fn expected_totals() {
        assert_eq!(
            expected_total_ngrams(&chain(&[0, 1, 2], 3), 2).unwrap(),
            2.0
        );
        assert_eq!(expected_total_ngrams(&b4(), 2).unwrap(), 2.0);
        let lat = b4();
        assert_eq!(
            expected_total_ngrams(&lat, 1).unwrap(),
            expected_length(&lat).unwrap()
        );
        assert!(expected_total_ngrams(&b4(), 0).is_err());
    }

    #[test]
    fn gram_prob_rows() {
        let g = gram_prob_matrix(&b4(), &[1, 2]).unwrap().0;
        assert_eq!(g.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(g.row(1), &[0.0, 0.0, 1.0, 0.0]);
        let uniform = Lattice::from_logits(&crate::LatticeLogits::zeros(3, 4)).unwrap();
        let g = gram_prob_matrix(&uniform, &[3, 0]).unwrap().0;
        assert!(g.as_slice().iter().all(|&x| x == 0.25));
        assert!(matches!(
            gram_prob_matrix(&b4(), &[5]),
            Err(Error::InvalidToken { token: 5, .. })
        ));
        assert!(matches!(
            gram_prob_matrix(&b4(), &[]),
            Err(Error::EmptyGram)
        ));
    }

    #[test]
    fn expected_gram_counts() {
        assert_eq!(
            expected_gram_count(&chain(&[0, 1, 1], 2), &[0, 1]).unwrap(),
            1.0
        );
        assert_eq!(expected_gram_count(&b4(), &[0, 1]).unwrap(), 0.5);
        assert_eq!(expected_gram_count(&b4(), &[1, 1]).unwrap(), 0.5);
        // token 2 is only emitted by vertex 3, which never precedes a token-0 vertex
        assert_eq!(expected_gram_count(&b4(), &[2, 0]).unwrap(), 0.0);
    }

    #[test]
    fn precision_examples() {
        let y = r(&[0, 1, 1]);
        let p = fuzzy_precision(&chain(&[0, 1, 1], 2), &y, 2).unwrap();
        assert_eq!(p.precision, 1.0);
        let p = fuzzy_precision(&b4(), &y, 2).unwrap();
        assert_eq!((p.numerator, p.denominator, p.precision), (1.0, 2.0, 0.5));
        let p = fuzzy_precision(&chain(&[2, 2, 2], 3), &y, 2).unwrap();
        assert_eq!(p.precision, 0.0);
        assert!(matches!(
            fuzzy_precision(&b4(), &r(&[0, 1]), 3),
            Err(Error::InfeasibleOrder { m: 2, n: 3 })
        ));
    }

    #[test]
    fn bp_examples() {
        assert_eq!(bp_value(3.0, 3.0), 1.0);
        assert!((bp_value(4.0, 2.0) - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(bp_value(3.0, 6.0), 1.0);
        assert_eq!(brevity_penalty(&b4(), &r(&[0, 1, 1])).unwrap(), 1.0);
        let bp = brevity_penalty(&chain(&[0, 1], 2), &r(&[0, 1, 1, 1])).unwrap();
        assert!((bp - 0.367879441171).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let y = r(&[0, 1, 1]);
        assert_eq!(fa_loss(&chain(&[0, 1, 1], 2), &y, 2).unwrap().loss, -1.0);
        let rep = fa_loss(&b4(), &y, 2).unwrap();
        assert_eq!(rep.precision, 0.5);
        assert_eq!(rep.bp, 1.0);
        assert_eq!(rep.expected_length, 3.0);
        assert_eq!(rep.loss, -0.5);
        assert_eq!(fa_loss(&chain(&[2, 2, 2], 3), &y, 2).unwrap().loss, 0.0);
    }

    #[test]
    fn degenerate_denominator() {
        // every path has two vertices: no trigrams at all
        assert!(matches!(
            fa_loss(&chain(&[0, 1], 2), &r(&[0, 1, 1]), 3),
            Err(Error::DegenerateLattice(3))
        ));
    }

    #[test]
    fn clipped_precision_of_text() {
        assert_eq!(clipped_precision(&[0, 1, 1], &[0, 1, 1], 2).unwrap(), 1.0);
        assert_eq!(
            clipped_precision(&[1, 1, 1, 1], &[0, 1, 1], 2).unwrap(),
            1.0 / 3.0
        );
    }
}
