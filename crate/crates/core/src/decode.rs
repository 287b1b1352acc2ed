//! Greedy, lookahead and joint-Viterbi decoding over a lattice.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{argmax, Lattice};
use crate::pathdp::{
    beats, log_path_prob, log_tokens_given_path, marginal_nll, passing_unchecked, ties, Path,
    Reference,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Greedy,
    Lookahead,
    Viterbi,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Greedy, Strategy::Lookahead, Strategy::Viterbi];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Strategy::Greedy => "greedy",
            Strategy::Lookahead => "lookahead",
            Strategy::Viterbi => "viterbi",
        })
    }
}

/// A decoded output: one token per visited vertex plus its log probabilities.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decode {
    pub path: Path,
    pub tokens: Vec<usize>,
    pub log_path_prob: f64,
    pub log_tokens_given_path: f64,
    pub log_marginal: f64,
}

impl Decode {
    fn assemble(lat: &Lattice, path: Path, tokens: Vec<usize>) -> Result<Self> {
        let log_path = log_path_prob(lat, &path);
        let log_tokens = log_tokens_given_path(lat, &path, &tokens);
        let log_marginal = -marginal_nll(lat, &Reference::new(tokens.clone())?)?;
        Ok(Decode {
            path,
            tokens,
            log_path_prob: log_path,
            log_tokens_given_path: log_tokens,
            log_marginal,
        })
    }

    pub fn log_joint(&self) -> f64 {
        self.log_path_prob + self.log_tokens_given_path
    }
}

pub fn decode(lat: &Lattice, strategy: Strategy) -> Result<Decode> {
    match strategy {
        Strategy::Greedy => greedy_decode(lat),
        Strategy::Lookahead => lookahead_decode(lat),
        Strategy::Viterbi => joint_viterbi_decode(lat),
    }
}

/// Follows the most probable transition from vertex 1 to `L`, then takes the
/// most probable token at every visited vertex.
pub fn greedy_decode(lat: &Lattice) -> Result<Decode> {
    lat.ensure_valid()?;
    let l = lat.num_vertices();
    let e = lat.transition_matrix();
    let best_tokens = lat.argmax_tokens();
    let mut vertices = vec![0];
    let mut v = 0;
    while v + 1 < l {
        let (offset, _) = argmax(&e.row(v)[v + 1..]);
        v += 1 + offset;
        vertices.push(v);
    }
    let tokens = vertices.iter().map(|&v| best_tokens[v].0).collect();
    Decode::assemble(lat, Path::from_zero_based(vertices), tokens)
}

/// Picks the successor and token maximizing `E(v, j) · P(t | j)` at each step.
pub fn lookahead_decode(lat: &Lattice) -> Result<Decode> {
    lat.ensure_valid()?;
    let l = lat.num_vertices();
    let e = lat.transition_matrix();
    let best_tokens = lat.argmax_tokens();
    let mut vertices = vec![0];
    let mut v = 0;
    while v + 1 < l {
        let mut best = (v + 1, f64::NEG_INFINITY);
        for j in v + 1..l {
            let score = e[(v, j)] * best_tokens[j].1;
            if score > best.1 {
                best = (j, score);
            }
        }
        v = best.0;
        vertices.push(v);
    }
    let tokens = vertices.iter().map(|&v| best_tokens[v].0).collect();
    Decode::assemble(lat, Path::from_zero_based(vertices), tokens)
}

/// Best-per-length max-product search over (position, vertex) with per-vertex
/// argmax tokens, reranked by `log P(y, a | x) / m`.
///
/// Ties: smaller `m`, then the lexicographically smaller token sequence, then
/// the lexicographically smaller path.
pub fn joint_viterbi_decode(lat: &Lattice) -> Result<Decode> {
    lat.ensure_valid()?;
    let l = lat.num_vertices();
    if l < 2 {
        return Err(Error::InvalidSize(
            "joint Viterbi decoding needs at least 2 vertices".into(),
        ));
    }
    let e = lat.transition_matrix();
    let best_tokens = lat.argmax_tokens();
    let tokens: Vec<usize> = best_tokens.iter().map(|b| b.0).collect();
    let w: Vec<f64> = best_tokens.iter().map(|b| b.1.ln()).collect();
    let log_e: Vec<Vec<f64>> = (0..l)
        .map(|u| e.row(u).iter().map(|x| x.ln()).collect())
        .collect();

    let mut best: Option<(f64, Vec<usize>)> = None;
    for m in 2..=l {
        let Some((score, vertices)) = best_of_length(&log_e, &w, &tokens, m) else {
            continue;
        };
        let normalized = score / m as f64;
        let better = match &best {
            None => true,
            Some((b, _)) => beats(normalized, *b),
        };
        if better {
            best = Some((normalized, vertices));
        }
    }
    let (_, vertices) = best.ok_or(Error::NoFeasiblePath)?;
    let out_tokens = vertices.iter().map(|&v| tokens[v]).collect();
    Decode::assemble(lat, Path::from_zero_based(vertices), out_tokens)
}

/// Optimal path with exactly `m` vertices from 0 to `L − 1`, 0-based.
fn best_of_length(
    log_e: &[Vec<f64>],
    w: &[f64],
    tokens: &[usize],
    m: usize,
) -> Option<(f64, Vec<usize>)> {
    let l = w.len();
    // suffix[i][u]: best completion score for positions i+1..m-1 from u at i
    let mut suffix = vec![vec![f64::NEG_INFINITY; l]; m];
    suffix[m - 1][l - 1] = 0.0;
    for i in (0..m - 1).rev() {
        for u in 0..l {
            suffix[i][u] = (u + 1..l)
                .map(|v| log_e[u][v] + w[v] + suffix[i + 1][v])
                .fold(f64::NEG_INFINITY, f64::max);
        }
    }
    let total = w[0] + suffix[0][0];
    if total == f64::NEG_INFINITY {
        return None;
    }
    let optimal_edge = |i: usize, u: usize, v: usize| {
        let s = log_e[u][v] + w[v] + suffix[i + 1][v];
        s.is_finite() && ties(s, suffix[i][u])
    };

    // Lexicographically smallest token sequence among optimal paths: keep the
    // frontier of vertices reachable with the current token prefix.
    let mut frontiers: Vec<Vec<usize>> = vec![vec![0]];
    for i in 0..m - 1 {
        let prev = &frontiers[i];
        let mut cands: Vec<usize> = (0..l)
            .filter(|&v| prev.iter().any(|&u| v > u && optimal_edge(i, u, v)))
            .collect();
        let min_tok = cands.iter().map(|&v| tokens[v]).min()?;
        cands.retain(|&v| tokens[v] == min_tok);
        frontiers.push(cands);
    }

    // Drop frontier vertices that cannot finish along the frontier chain.
    let mut alive: Vec<Vec<bool>> = frontiers.iter().map(|f| vec![false; f.len()]).collect();
    for (k, &v) in frontiers[m - 1].iter().enumerate() {
        alive[m - 1][k] = v == l - 1;
    }
    for i in (0..m - 1).rev() {
        for k in 0..frontiers[i].len() {
            let u = frontiers[i][k];
            alive[i][k] = frontiers[i + 1]
                .iter()
                .zip(&alive[i + 1])
                .any(|(&v, &ok)| ok && v > u && optimal_edge(i, u, v));
        }
    }

    // Smallest vertex sequence through the surviving frontier.
    let mut vertices = vec![0];
    for i in 0..m - 1 {
        let u = *vertices.last().unwrap();
        let v = frontiers[i + 1]
            .iter()
            .zip(&alive[i + 1])
            .filter(|(&v, &ok)| ok && v > u && optimal_edge(i, u, v))
            .map(|(&v, _)| v)
            .min()?;
        vertices.push(v);
    }
    let score = w[0]
        + vertices
            .windows(2)
            .map(|p| log_e[p[0]][p[1]] + w[p[1]])
            .sum::<f64>();
    Some((score, vertices))
}

/// Negative log statistics of a decode plus the per-vertex calibration scatter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatRecord {
    pub neg_log_path: f64,
    pub neg_log_tokens_given_path: f64,
    pub neg_log_marginal: f64,
    /// `(p_v, max_t P(t|v))` for every vertex, in vertex order.
    pub vertices: Vec<(f64, f64)>,
}

pub fn decode_stats(lat: &Lattice, d: &Decode) -> StatRecord {
    let p = passing_unchecked(lat);
    let vertices = p
        .iter()
        .zip(lat.argmax_tokens())
        .map(|(&pv, (_, q))| (pv, q))
        .collect();
    StatRecord {
        neg_log_path: -d.log_path_prob,
        neg_log_tokens_given_path: -d.log_tokens_given_path,
        neg_log_marginal: -d.log_marginal,
        vertices,
    }
}

impl StatRecord {
    /// `neg_log_path,neg_log_tokens_given_path,neg_log_marginal` CSV.
    pub fn write_summary_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "neg_log_path,neg_log_tokens_given_path,neg_log_marginal")?;
        writeln!(
            w,
            "{},{},{}",
            fmt_f64(self.neg_log_path),
            fmt_f64(self.neg_log_tokens_given_path),
            fmt_f64(self.neg_log_marginal)
        )
    }

    /// `vertex,passing_prob,max_token_prob` CSV, one row per vertex (1-based).
    pub fn write_vertices_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "vertex,passing_prob,max_token_prob")?;
        for (v, (p, q)) in self.vertices.iter().enumerate() {
            writeln!(w, "{},{},{}", v + 1, fmt_f64(*p), fmt_f64(*q))?;
        }
        Ok(())
    }

    /// Mean max-token probability over vertices with passing probability above 1/2.
    pub fn confidence(&self) -> f64 {
        confidence_summary(&self.vertices)
    }
}

pub fn confidence_summary(vertices: &[(f64, f64)]) -> f64 {
    let (sum, count) = vertices
        .iter()
        .filter(|(p, _)| *p > 0.5)
        .fold((0.0, 0usize), |(s, c), (_, q)| (s + q, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Shortest representation that round-trips; `inf` for infinities.
pub(crate) fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        // Adding zero turns -0.0 into 0.0.
        format!("{:?}", x + 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{b4, chain};
    use crate::lattice::Lattice;

    #[test]
    fn chain_decodes_identically() {
        let lat = chain(&[0, 1, 1], 2);
        let g = greedy_decode(&lat).unwrap();
        assert_eq!(g.tokens, vec![0, 1, 1]);
        assert_eq!(g.path.vertices(), &[1, 2, 3]);
        assert_eq!(lookahead_decode(&lat).unwrap(), g);
        assert_eq!(joint_viterbi_decode(&lat).unwrap(), g);
    }

    #[test]
    fn b4_tie_breaks() {
        let lat = b4();
        for s in Strategy::ALL {
            let d = decode(&lat, s).unwrap();
            assert_eq!(d.path.vertices(), &[1, 2, 4], "{s}");
            assert_eq!(d.tokens, vec![0, 1, 1], "{s}");
        }
    }

    #[test]
    fn lookahead_prefers_confident_successor() {
        let third = 1.0 / 3.0;
        let lat = Lattice::from_rows(
            vec![
                vec![0.0, 0.55, 0.45, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
                vec![0.0, 0.0, 0.0, 1.0],
                vec![0.0, 0.0, 0.0, 0.0],
            ],
            vec![
                vec![1.0, 0.0, 0.0],
                vec![third, third, third],
                vec![0.0, 0.0, 1.0],
                vec![1.0, 0.0, 0.0],
            ],
        )
        .unwrap();
        assert_eq!(greedy_decode(&lat).unwrap().path.vertices(), &[1, 2, 4]);
        let la = lookahead_decode(&lat).unwrap();
        assert_eq!(la.path.vertices(), &[1, 3, 4]);
        assert_eq!(la.tokens, vec![0, 2, 0]);
    }

    #[test]
    fn normalization_prefers_long_confident_path() {
        // short path 1→4 has raw joint 0.6 * 0.5 * 0.5 (flat endpoints drag it down
        // per token); long path 1→2→3→4 has joint 0.4 with confident middle tokens.
        let lat = Lattice::from_rows(
            vec![
                vec![0.0, 0.4, 0.0, 0.6],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
                vec![0.0, 0.0, 0.0, 0.0],
            ],
            vec![
                vec![0.5, 0.5],
                vec![1.0, 0.0],
                vec![1.0, 0.0],
                vec![0.5, 0.5],
            ],
        )
        .unwrap();
        // raw: short = ln(0.6·0.25) = -1.897, long = ln(0.4·0.25) = -2.303
        // normalized: short = -0.949, long = -0.576
        let d = joint_viterbi_decode(&lat).unwrap();
        assert_eq!(d.path.vertices(), &[1, 2, 3, 4]);
    }

    #[test]
    fn stats_on_b4() {
        let lat = b4();
        let d = greedy_decode(&lat).unwrap();
        let s = decode_stats(&lat, &d);
        assert!((s.neg_log_path - 2f64.ln()).abs() < 1e-12);
        assert_eq!(s.neg_log_tokens_given_path, 0.0);
        assert!((s.neg_log_marginal - 2f64.ln()).abs() < 1e-12);
        assert_eq!(s.vertices.len(), 4);
        assert_eq!(s.vertices[0].0, 1.0);
        assert_eq!(s.vertices[3].0, 1.0);
    }

    #[test]
    fn stats_on_deterministic_lattice() {
        let lat = chain(&[1, 0, 1, 1], 2);
        let d = joint_viterbi_decode(&lat).unwrap();
        let s = decode_stats(&lat, &d);
        assert_eq!(
            (
                s.neg_log_path,
                s.neg_log_tokens_given_path,
                s.neg_log_marginal
            ),
            (0.0, 0.0, 0.0)
        );
        assert_eq!(s.confidence(), 1.0);
    }

    #[test]
    fn csv_layout() {
        let lat = b4();
        let s = decode_stats(&lat, &greedy_decode(&lat).unwrap());
        let mut buf = Vec::new();
        s.write_summary_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("neg_log_path,neg_log_tokens_given_path,neg_log_marginal\n"));
        let mut buf = Vec::new();
        s.write_vertices_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "vertex,passing_prob,max_token_prob");
        assert_eq!(lines[1], "1,1.0,1.0");
        assert_eq!(lines.len(), 5);
    }

    #[test]
    fn viterbi_needs_two_vertices() {
        let single = Lattice::from_rows(vec![vec![0.0]], vec![vec![1.0]]).unwrap();
        assert!(joint_viterbi_decode(&single).is_err());
        // greedy on a single vertex is the trivial path
        assert_eq!(greedy_decode(&single).unwrap().path.vertices(), &[1]);
    }
}
