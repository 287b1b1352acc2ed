//! Exponential-time reference implementations by explicit enumeration of
//! paths (and, for the translation expectation, of every output of every
//! path). Intended for `L ≤ 8`, `V ≤ 4`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::decode::Decode;
use crate::error::{Error, Result};
use crate::fuzzy::count_ngrams;
use crate::lattice::Lattice;
use crate::pathdp::{beats, ties, PassingVector, Path, Reference};

/// Default cap on `L` for path enumeration.
pub const DEFAULT_PATH_CAP: usize = 12;
/// Caps for enumerating every translation of every path.
pub const TRANSLATION_VERTEX_CAP: usize = 7;
pub const TRANSLATION_VOCAB_CAP: usize = 4;

static ENUMERATIONS: AtomicUsize = AtomicUsize::new(0);

/// Number of path enumerations started in this process, for asserting that a
/// computation never falls back to enumeration.
pub fn enumerations_started() -> usize {
    ENUMERATIONS.load(Ordering::Relaxed)
}

/// Every monotone path from vertex 1 to `L` with nonzero probability.
#[derive(Clone, Debug)]
pub struct PathEnumeration {
    pub paths: Vec<(Path, f64)>,
}

impl PathEnumeration {
    pub fn total_probability(&self) -> f64 {
        self.paths.iter().map(|(_, p)| p).sum()
    }
}

pub fn enumerate_paths(lat: &Lattice) -> Result<PathEnumeration> {
    enumerate_paths_capped(lat, DEFAULT_PATH_CAP)
}

/// Depth-first enumeration in lexicographic vertex order, pruning zero edges.
pub fn enumerate_paths_capped(lat: &Lattice, cap: usize) -> Result<PathEnumeration> {
    let l = lat.num_vertices();
    if l > cap {
        return Err(Error::OracleCap { l, cap });
    }
    lat.ensure_valid()?;
    ENUMERATIONS.fetch_add(1, Ordering::Relaxed);
    let mut paths = Vec::new();
    let mut stack = vec![0usize];
    dfs(lat, &mut stack, 1.0, &mut paths);
    Ok(PathEnumeration { paths })
}

fn dfs(lat: &Lattice, stack: &mut Vec<usize>, prob: f64, out: &mut Vec<(Path, f64)>) {
    let l = lat.num_vertices();
    let u = *stack.last().unwrap();
    if u == l - 1 {
        out.push((Path::from_zero_based(stack.iter().copied()), prob));
        return;
    }
    for v in u + 1..l {
        let t = lat.transition_matrix()[(u, v)];
        if t == 0.0 {
            continue;
        }
        stack.push(v);
        dfs(lat, stack, prob * t, out);
        stack.pop();
    }
}

/// `p_v = Σ_{a ∋ v} P(a)`.
pub fn oracle_passing_prob(lat: &Lattice) -> Result<PassingVector> {
    let paths = enumerate_paths(lat)?;
    let mut p = vec![0.0; lat.num_vertices()];
    for (a, prob) in &paths.paths {
        for &v in a.vertices() {
            p[v - 1] += prob;
        }
    }
    Ok(PassingVector(p))
}

/// `Σ_a P(a) · |a|`.
pub fn oracle_expected_length(lat: &Lattice) -> Result<f64> {
    Ok(enumerate_paths(lat)?
        .paths
        .iter()
        .map(|(a, p)| p * a.len() as f64)
        .sum())
}

/// `Σ_a P(a) · max(|a| − n + 1, 0)`.
pub fn oracle_expected_total_ngrams(lat: &Lattice, n: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidOrder(n));
    }
    Ok(enumerate_paths(lat)?
        .paths
        .iter()
        .map(|(a, p)| p * (a.len() + 1).saturating_sub(n) as f64)
        .sum())
}

/// `Σ_a P(a) Σ_i Π_j P(g_j | a_{i+j−1})`: a window of size `n` slid along
/// each path's token distributions.
pub fn oracle_expected_gram_count(lat: &Lattice, gram: &[usize]) -> Result<f64> {
    if gram.is_empty() {
        return Err(Error::EmptyGram);
    }
    for &t in gram {
        if t >= lat.vocab_size() {
            return Err(Error::InvalidToken {
                token: t,
                vocab_size: lat.vocab_size(),
            });
        }
    }
    let paths = enumerate_paths(lat)?;
    let mut total = 0.0;
    for (a, prob) in &paths.paths {
        let vs = a.vertices();
        let mut along = 0.0;
        for window in vs.windows(gram.len()) {
            along += window
                .iter()
                .zip(gram)
                .map(|(&v, &t)| lat.emission(v, t))
                .product::<f64>();
        }
        total += prob * along;
    }
    Ok(total)
}

/// `Σ_{a ∈ Γ_y} P(a) Π_i P(y_i | a_i)`; zero when no path has `|y|` vertices.
pub fn oracle_marginal_prob(lat: &Lattice, y: &Reference) -> Result<f64> {
    let paths = enumerate_paths(lat)?;
    Ok(paths
        .paths
        .iter()
        .filter(|(a, _)| a.len() == y.len())
        .map(|(a, prob)| {
            prob * a
                .vertices()
                .iter()
                .zip(y.tokens())
                .map(|(&v, &t)| lat.emission(v, t))
                .product::<f64>()
        })
        .sum())
}

/// Every `a ∈ Γ_y` with `P(y, a | x)`, in lexicographic path order.
pub fn oracle_aligned_paths(lat: &Lattice, y: &Reference) -> Result<Vec<(Path, f64)>> {
    let paths = enumerate_paths(lat)?;
    Ok(paths
        .paths
        .into_iter()
        .filter(|(a, _)| a.len() == y.len())
        .map(|(a, prob)| {
            let emit: f64 = a
                .vertices()
                .iter()
                .zip(y.tokens())
                .map(|(&v, &t)| lat.emission(v, t))
                .product();
            (a, prob * emit)
        })
        .collect())
}

/// Numerator and denominator of the fuzzy precision, with every expectation
/// taken by enumerating all `V^|a|` outputs of every path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TranslationExpectation {
    pub numerator: f64,
    pub denominator: f64,
}

pub fn oracle_full_translation_expectation(
    lat: &Lattice,
    y: &Reference,
    n: usize,
) -> Result<TranslationExpectation> {
    if n < 1 {
        return Err(Error::InvalidOrder(n));
    }
    let l = lat.num_vertices();
    if l > TRANSLATION_VERTEX_CAP {
        return Err(Error::OracleCap {
            l,
            cap: TRANSLATION_VERTEX_CAP,
        });
    }
    if lat.vocab_size() > TRANSLATION_VOCAB_CAP {
        return Err(Error::OracleVocabCap {
            vocab_size: lat.vocab_size(),
            cap: TRANSLATION_VOCAB_CAP,
        });
    }
    let ref_counts = count_ngrams(y.tokens(), n)?;
    let mut expected: BTreeMap<&[usize], f64> =
        ref_counts.keys().map(|g| (g.as_slice(), 0.0)).collect();
    let mut denominator = 0.0;

    let paths = enumerate_paths(lat)?;
    let v_size = lat.vocab_size();
    for (a, path_prob) in &paths.paths {
        let vs = a.vertices();
        let mut output = vec![0usize; vs.len()];
        // odometer over all V^|a| outputs
        loop {
            let prob: f64 = path_prob
                * vs.iter()
                    .zip(&output)
                    .map(|(&v, &t)| lat.emission(v, t))
                    .product::<f64>();
            if prob != 0.0 {
                let counts = count_ngrams(&output, n)?;
                denominator += prob * counts.values().sum::<usize>() as f64;
                for (g, slot) in expected.iter_mut() {
                    if let Some(&c) = counts.get(*g) {
                        *slot += prob * c as f64;
                    }
                }
            }
            if !advance(&mut output, v_size) {
                break;
            }
        }
    }

    let numerator = ref_counts
        .iter()
        .map(|(g, &c)| expected[g.as_slice()].min(c as f64))
        .sum();
    Ok(TranslationExpectation {
        numerator,
        denominator,
    })
}

/// Odometer increment over `[0, base)^len`; false after the last element.
fn advance(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

/// Exhaustive search over every path with per-vertex argmax tokens for the
/// best length-normalized log joint, using the same tie-breaks as
/// [`crate::decode::joint_viterbi_decode`].
pub fn oracle_best_joint(lat: &Lattice) -> Result<Decode> {
    let paths = enumerate_paths(lat)?;
    if lat.num_vertices() < 2 {
        return Err(Error::InvalidSize(
            "joint Viterbi decoding needs at least 2 vertices".into(),
        ));
    }
    let best_tokens = lat.argmax_tokens();
    let mut best: Option<(f64, Path, Vec<usize>)> = None;
    for (a, prob) in paths.paths {
        let tokens: Vec<usize> = a.vertices().iter().map(|&v| best_tokens[v - 1].0).collect();
        let emit: f64 = a
            .vertices()
            .iter()
            .map(|&v| best_tokens[v - 1].1.ln())
            .sum();
        let score = (prob.ln() + emit) / a.len() as f64;
        let better = match &best {
            None => true,
            Some((bs, bp, bt)) => {
                beats(score, *bs)
                    || (ties(score, *bs) && (a.len(), &tokens, &a) < (bp.len(), bt, bp))
            }
        };
        if better {
            best = Some((score, a, tokens));
        }
    }
    let (_, path, tokens) = best.ok_or(Error::NoFeasiblePath)?;
    let log_path_prob = crate::pathdp::log_path_prob(lat, &path);
    let log_tokens = crate::pathdp::log_tokens_given_path(lat, &path, &tokens);
    let log_marginal = oracle_marginal_prob(lat, &Reference::new(tokens.clone())?)?.ln();
    Ok(Decode {
        path,
        tokens,
        log_path_prob,
        log_tokens_given_path: log_tokens,
        log_marginal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{b4, chain};

    fn r(t: &[usize]) -> Reference {
        Reference::new(t.to_vec()).unwrap()
    }

    #[test]
    fn enumerates_chain_and_b4() {
        let e = enumerate_paths(&chain(&[0, 1, 2], 3)).unwrap();
        assert_eq!(e.paths.len(), 1);
        assert_eq!(e.paths[0].1, 1.0);
        let e = enumerate_paths(&b4()).unwrap();
        let got: Vec<_> = e
            .paths
            .iter()
            .map(|(a, p)| (a.vertices().to_vec(), *p))
            .collect();
        assert_eq!(got, vec![(vec![1, 2, 4], 0.5), (vec![1, 3, 4], 0.5)]);
        assert_eq!(e.total_probability(), 1.0);
    }

    #[test]
    fn cap_is_enforced() {
        let lat = Lattice::from_logits(&crate::random_lattice(1, 13, 2).unwrap()).unwrap();
        assert!(matches!(
            enumerate_paths(&lat),
            Err(Error::OracleCap { l: 13, cap: 12 })
        ));
        assert!(enumerate_paths_capped(&lat, 13).is_ok());
    }

    #[test]
    fn passing_by_enumeration() {
        assert_eq!(
            oracle_passing_prob(&b4()).unwrap().0,
            vec![1.0, 0.5, 0.5, 1.0]
        );
        assert_eq!(
            oracle_passing_prob(&chain(&[0, 0, 0, 0], 1)).unwrap().0,
            vec![1.0; 4]
        );
    }

    #[test]
    fn gram_counts_by_enumeration() {
        assert_eq!(oracle_expected_gram_count(&b4(), &[0, 1]).unwrap(), 0.5);
        assert_eq!(
            oracle_expected_gram_count(&chain(&[0, 1, 0, 1], 2), &[0, 1]).unwrap(),
            2.0
        );
        assert_eq!(oracle_expected_gram_count(&b4(), &[2, 2]).unwrap(), 0.0);
    }

    #[test]
    fn marginal_by_enumeration() {
        assert_eq!(oracle_marginal_prob(&b4(), &r(&[0, 1, 1])).unwrap(), 0.5);
        assert_eq!(
            oracle_marginal_prob(&chain(&[0, 1, 1], 2), &r(&[0, 1, 1])).unwrap(),
            1.0
        );
        assert_eq!(
            oracle_marginal_prob(&b4(), &r(&[0, 1, 1, 1, 1])).unwrap(),
            0.0
        );
    }

    #[test]
    fn translation_expectation_by_enumeration() {
        let t = oracle_full_translation_expectation(&b4(), &r(&[0, 1, 1]), 2).unwrap();
        assert_eq!((t.numerator, t.denominator), (1.0, 2.0));
        let t = oracle_full_translation_expectation(&chain(&[0, 1, 0, 1], 2), &r(&[0, 1, 1]), 2)
            .unwrap();
        // output 0,1,0,1 vs reference 0,1,1: (0,1) clipped to 1, (1,1) absent
        assert_eq!((t.numerator, t.denominator), (1.0, 3.0));
        let t = oracle_full_translation_expectation(&chain(&[0, 1], 2), &r(&[0, 1, 1]), 3).unwrap();
        assert_eq!(t.denominator, 0.0);
    }

    #[test]
    fn best_joint_by_enumeration() {
        let d = oracle_best_joint(&b4()).unwrap();
        assert_eq!(d.tokens, vec![0, 1, 1]);
        assert_eq!(d.path.vertices(), &[1, 2, 4]);
        let d = oracle_best_joint(&chain(&[1, 0, 1], 2)).unwrap();
        assert_eq!(d.path.vertices(), &[1, 2, 3]);
    }
}
