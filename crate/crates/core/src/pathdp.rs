//! Dynamic programs over lattice paths: passing probabilities, the marginal
//! likelihood of a reference, path posteriors and the most probable aligned
//! path.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::Lattice;

/// Relative tolerance under which two log scores count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

pub(crate) fn ties(a: f64, b: f64) -> bool {
    if a == b {
        return true;
    }
    if !a.is_finite() || !b.is_finite() {
        return false;
    }
    (a - b).abs() <= TIE_TOLERANCE * (1.0 + a.abs().max(b.abs()))
}

/// `a` is better than `b` by more than the tie tolerance.
pub(crate) fn beats(a: f64, b: f64) -> bool {
    a > b && !ties(a, b)
}

pub(crate) fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Strictly increasing sequence of 1-based vertex indices.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Path(Vec<usize>);

impl Path {
    pub fn new(vertices: Vec<usize>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::InvalidPath("path is empty".into()));
        }
        if vertices[0] == 0 {
            return Err(Error::InvalidPath("vertex indices are 1-based".into()));
        }
        if vertices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPath(format!(
                "{vertices:?} is not strictly increasing"
            )));
        }
        Ok(Path(vertices))
    }

    pub(crate) fn from_zero_based(vertices: impl IntoIterator<Item = usize>) -> Self {
        Path(vertices.into_iter().map(|v| v + 1).collect())
    }

    pub fn vertices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// True when the path starts at vertex 1 and ends at vertex `l`.
    pub fn spans(&self, l: usize) -> bool {
        self.0.first() == Some(&1) && self.0.last() == Some(&l)
    }

    fn check_in(&self, lat: &Lattice) -> Result<()> {
        let l = lat.num_vertices();
        if !self.spans(l) {
            return Err(Error::InvalidPath(format!(
                "{self} does not run from vertex 1 to vertex {l}"
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<usize>> for Path {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Path::new(v)
    }
}

impl From<Path> for Vec<usize> {
    fn from(p: Path) -> Self {
        p.0
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, v) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Non-empty target token sequence.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Reference(Vec<usize>);

impl Reference {
    pub fn new(tokens: Vec<usize>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidParameter("reference is empty".into()));
        }
        Ok(Reference(tokens))
    }

    /// Parses comma-separated token ids, e.g. `"0,1,1"`.
    pub fn parse(s: &str) -> Result<Self> {
        let tokens = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::InvalidParameter(format!("bad token {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Reference::new(tokens)
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn reversed(&self) -> Reference {
        Reference(self.0.iter().rev().copied().collect())
    }

    pub(crate) fn check_vocab(&self, lat: &Lattice) -> Result<()> {
        self.0.iter().try_for_each(|&t| lat.check_token(t))
    }
}

impl TryFrom<Vec<usize>> for Reference {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Reference::new(v)
    }
}

impl From<Reference> for Vec<usize> {
    fn from(r: Reference) -> Self {
        r.0
    }
}

/// `p_v`: probability that a path sampled from the transitions visits `v`.
/// Indexed 0-based in storage; [`PassingVector::get`] takes 1-based vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct PassingVector(pub Vec<f64>);

impl PassingVector {
    pub fn get(&self, v: usize) -> f64 {
        self.0[v - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Forward recursion `p_v = Σ_{u<v} p_u · E(u, v)`, `p_1 = 1`.
pub fn passing_probabilities(lat: &Lattice) -> Result<PassingVector> {
    lat.ensure_valid()?;
    Ok(PassingVector(passing_unchecked(lat)))
}

pub(crate) fn passing_unchecked(lat: &Lattice) -> Vec<f64> {
    let l = lat.num_vertices();
    let e = lat.transition_matrix();
    let mut p = vec![0.0; l];
    p[0] = 1.0;
    for u in 0..l {
        let pu = p[u];
        if pu == 0.0 {
            continue;
        }
        let row = e.row(u);
        for v in u + 1..l {
            p[v] += pu * row[v];
        }
    }
    p
}

/// Expected number of vertices on a sampled path, `‖p‖₁`.
pub fn expected_length(lat: &Lattice) -> Result<f64> {
    Ok(passing_probabilities(lat)?.sum())
}

/// `Γ_y` is non-empty as a set of index sequences: `2 ≤ M ≤ L`, or `M = L = 1`.
pub(crate) fn check_feasible_length(m: usize, l: usize) -> Result<()> {
    if m > l || (m == 1 && l > 1) || m == 0 {
        return Err(Error::InfeasibleLength { m, l });
    }
    Ok(())
}

/// Log-domain forward and backward tables over (reference position, vertex).
pub(crate) struct ForwardBackward {
    /// `alpha[i][v]`: log probability of emitting `y[..=i]` along a path from
    /// vertex 0 that sits at `v` for position `i`.
    pub alpha: Vec<Vec<f64>>,
    /// `beta[i][v]`: log probability of completing `y[i+1..]` from `v` at
    /// position `i` and ending at the last vertex.
    pub beta: Vec<Vec<f64>>,
    pub log_z: f64,
    pub log_e: Vec<Vec<f64>>,
    pub log_q: Vec<Vec<f64>>,
}

pub(crate) fn log_tables(lat: &Lattice, y: &Reference) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let l = lat.num_vertices();
    let e = lat.transition_matrix();
    let q = lat.emission_matrix();
    let log_e = (0..l)
        .map(|u| e.row(u).iter().map(|x| x.ln()).collect())
        .collect();
    let log_q = y
        .tokens()
        .iter()
        .map(|&t| (0..l).map(|v| q[(v, t)].ln()).collect())
        .collect();
    (log_e, log_q)
}

fn forward(log_e: &[Vec<f64>], log_q: &[Vec<f64>], l: usize) -> Vec<Vec<f64>> {
    let m = log_q.len();
    let mut alpha = vec![vec![f64::NEG_INFINITY; l]; m];
    alpha[0][0] = log_q[0][0];
    for i in 1..m {
        let (done, rest) = alpha.split_at_mut(i);
        let prev = &done[i - 1];
        let cur = &mut rest[0];
        for v in i..l {
            let s = log_sum_exp((0..v).map(|u| prev[u] + log_e[u][v]));
            cur[v] = s + log_q[i][v];
        }
    }
    alpha
}

pub(crate) fn forward_backward(lat: &Lattice, y: &Reference) -> ForwardBackward {
    let l = lat.num_vertices();
    let m = y.len();
    let (log_e, log_q) = log_tables(lat, y);
    let alpha = forward(&log_e, &log_q, l);
    let mut beta = vec![vec![f64::NEG_INFINITY; l]; m];
    beta[m - 1][l - 1] = 0.0;
    for i in (0..m - 1).rev() {
        let (head, tail) = beta.split_at_mut(i + 1);
        let next = &tail[0];
        let cur = &mut head[i];
        for u in 0..l {
            cur[u] = log_sum_exp((u + 1..l).map(|v| log_e[u][v] + log_q[i + 1][v] + next[v]));
        }
    }
    let log_z = alpha[m - 1][l - 1];
    ForwardBackward {
        alpha,
        beta,
        log_z,
        log_e,
        log_q,
    }
}

/// `−log Σ_{a∈Γ_y} P(a|x) P(y|a,x)` via a log-space forward pass. Returns
/// `+∞` when no aligned path can emit `y`.
pub fn marginal_nll(lat: &Lattice, y: &Reference) -> Result<f64> {
    lat.ensure_valid()?;
    y.check_vocab(lat)?;
    check_feasible_length(y.len(), lat.num_vertices())?;
    let (log_e, log_q) = log_tables(lat, y);
    let alpha = forward(&log_e, &log_q, lat.num_vertices());
    Ok(-alpha[y.len() - 1][lat.num_vertices() - 1])
}

/// `log P(a|x)`, summed along the path.
pub fn log_path_prob(lat: &Lattice, a: &Path) -> f64 {
    a.vertices()
        .windows(2)
        .map(|w| lat.transition(w[0], w[1]).ln())
        .sum()
}

/// `log P(y|a,x)` for one token per path vertex.
pub fn log_tokens_given_path(lat: &Lattice, a: &Path, tokens: &[usize]) -> f64 {
    a.vertices()
        .iter()
        .zip(tokens)
        .map(|(&v, &t)| lat.emission(v, t).ln())
        .sum()
}

/// `log P(y, a | x)`.
pub fn log_joint(lat: &Lattice, y: &Reference, a: &Path) -> f64 {
    log_path_prob(lat, a) + log_tokens_given_path(lat, a, y.tokens())
}

/// `P(a | y, x) = P(a|x) P(y|a,x) / P(y|x)` for `a ∈ Γ_y`.
pub fn path_posterior(lat: &Lattice, y: &Reference, a: &Path) -> Result<f64> {
    a.check_in(lat)?;
    if a.len() != y.len() {
        return Err(Error::InvalidPath(format!(
            "path {a} has {} vertices but the reference has {} tokens",
            a.len(),
            y.len()
        )));
    }
    let nll = marginal_nll(lat, y)?;
    if nll.is_infinite() {
        return Err(Error::UndefinedPosterior);
    }
    Ok((log_joint(lat, y, a) + nll).exp())
}

/// Most probable path in `Γ_y` (max-product DP with backtracking), with its
/// log joint probability `log P(y, a | x)`. Among tied paths the
/// lexicographically smallest vertex sequence wins.
pub fn best_path_given_reference(lat: &Lattice, y: &Reference) -> Result<(Path, f64)> {
    lat.ensure_valid()?;
    y.check_vocab(lat)?;
    let l = lat.num_vertices();
    let m = y.len();
    check_feasible_length(m, l)?;
    let (log_e, log_q) = log_tables(lat, y);

    // suffix[i][u]: best log score of positions i+1.. given position i at u.
    let mut suffix = vec![vec![f64::NEG_INFINITY; l]; m];
    suffix[m - 1][l - 1] = 0.0;
    for i in (0..m - 1).rev() {
        for u in 0..l {
            suffix[i][u] = (u + 1..l)
                .map(|v| log_e[u][v] + log_q[i + 1][v] + suffix[i + 1][v])
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    if (log_q[0][0] + suffix[0][0]) == f64::NEG_INFINITY {
        return Err(Error::NoFeasiblePath);
    }

    // Forward reconstruction taking the smallest vertex that attains the max.
    let mut vertices = Vec::with_capacity(m);
    let mut u = 0;
    vertices.push(u);
    for i in 0..m - 1 {
        let target = suffix[i][u];
        let v = (u + 1..l)
            .find(|&v| {
                let s = log_e[u][v] + log_q[i + 1][v] + suffix[i + 1][v];
                s.is_finite() && ties(s, target)
            })
            .expect("a maximizing successor exists");
        vertices.push(v);
        u = v;
    }
    let path = Path::from_zero_based(vertices);
    let score = log_joint(lat, y, &path);
    Ok((path, score))
}
