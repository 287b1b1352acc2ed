//! Exact gradients of the fuzzy-alignment and marginal NLL losses with respect
//! to lattice logits, and a central finite-difference checker.
//!
//! Both gradients are hand-derived reverse passes through the forward
//! recurrences. Subgradient conventions at the two `min` kinks:
//!
//! * clipped count `min(E[C_g], C_g(y))`: gradient flows through `E[C_g]` only
//!   when `E[C_g] < C_g(y)`;
//! * brevity penalty `min(exp(1 − T_y/E[T]), 1)`: gradient flows only when
//!   `E[T] < T_y`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fuzzy::AlignmentParts;
use crate::lattice::{Lattice, LatticeLogits};
use crate::matrix::Matrix;
use crate::pathdp::{check_feasible_length, forward_backward, Path, Reference};

#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub d_transition_logits: Matrix,
    pub d_emission_logits: Matrix,
    pub loss_value: f64,
}

impl GradientBundle {
    /// Flat view matching [`LatticeLogits::param`] ordering.
    pub fn component(&self, k: usize) -> f64 {
        let lt = self.d_transition_logits.as_slice().len();
        if k < lt {
            self.d_transition_logits.as_slice()[k]
        } else {
            self.d_emission_logits.as_slice()[k - lt]
        }
    }

    pub fn len(&self) -> usize {
        self.d_transition_logits.as_slice().len() + self.d_emission_logits.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Accumulates `scale · other` into `self`, loss included.
    pub fn add_scaled(&mut self, other: &GradientBundle, scale: f64) {
        for (a, b) in self
            .d_transition_logits
            .as_mut_slice()
            .iter_mut()
            .zip(other.d_transition_logits.as_slice())
        {
            *a += scale * b;
        }
        for (a, b) in self
            .d_emission_logits
            .as_mut_slice()
            .iter_mut()
            .zip(other.d_emission_logits.as_slice())
        {
            *a += scale * b;
        }
        self.loss_value += scale * other.loss_value;
    }

    pub fn zeros_like(params: &LatticeLogits) -> Self {
        GradientBundle {
            d_transition_logits: Matrix::zeros(params.num_vertices, params.num_vertices),
            d_emission_logits: Matrix::zeros(params.num_vertices, params.vocab_size),
            loss_value: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `−BP × p′_n`.
    Fa,
    /// `−log P(y|x)`.
    Nll,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Fa => f.pad("fa"),
            LossKind::Nll => f.pad("nll"),
        }
    }
}

/// Evaluates the selected loss at `params`. `n` is ignored for NLL.
pub fn loss_value(params: &LatticeLogits, y: &Reference, n: usize, which: LossKind) -> Result<f64> {
    let lat = Lattice::from_logits(params)?;
    match which {
        LossKind::Fa => Ok(AlignmentParts::compute(&lat, y, n)?.report().loss),
        LossKind::Nll => crate::pathdp::marginal_nll(&lat, y),
    }
}

pub fn loss_grad(
    params: &LatticeLogits,
    y: &Reference,
    n: usize,
    which: LossKind,
) -> Result<GradientBundle> {
    match which {
        LossKind::Fa => fa_loss_grad(params, y, n),
        LossKind::Nll => nll_loss_grad(params, y),
    }
}

/// Maps gradients w.r.t. transition and emission probabilities through the
/// masked softmax.
fn softmax_backward(lat: &Lattice, d_e: &Matrix, d_q: &Matrix, loss_value: f64) -> GradientBundle {
    let l = lat.num_vertices();
    let e = lat.transition_matrix();
    let q = lat.emission_matrix();
    let mut d_theta = Matrix::zeros(l, l);
    for u in 0..l.saturating_sub(1) {
        let row = &e.row(u)[u + 1..];
        let grow = &d_e.row(u)[u + 1..];
        let s: f64 = row.iter().zip(grow).map(|(a, b)| a * b).sum();
        for (k, (a, b)) in row.iter().zip(grow).enumerate() {
            d_theta[(u, u + 1 + k)] = a * (b - s);
        }
    }
    let mut d_phi = Matrix::zeros(l, lat.vocab_size());
    for v in 0..l {
        let row = q.row(v);
        let grow = d_q.row(v);
        let s: f64 = row.iter().zip(grow).map(|(a, b)| a * b).sum();
        for (t, (a, b)) in row.iter().zip(grow).enumerate() {
            d_phi[(v, t)] = a * (b - s);
        }
    }
    GradientBundle {
        d_transition_logits: d_theta,
        d_emission_logits: d_phi,
        loss_value,
    }
}

/// Same mapping for gradients w.r.t. log-probabilities: `∂/∂θ_k = G_k − π_k Σ_j G_j`.
fn log_softmax_backward(
    lat: &Lattice,
    d_log_e: &Matrix,
    d_log_q: &Matrix,
    loss_value: f64,
) -> GradientBundle {
    let l = lat.num_vertices();
    let e = lat.transition_matrix();
    let q = lat.emission_matrix();
    let mut d_theta = Matrix::zeros(l, l);
    for u in 0..l.saturating_sub(1) {
        let total: f64 = d_log_e.row(u)[u + 1..].iter().sum();
        for k in u + 1..l {
            d_theta[(u, k)] = d_log_e[(u, k)] - e[(u, k)] * total;
        }
    }
    let mut d_phi = Matrix::zeros(l, lat.vocab_size());
    for v in 0..l {
        let total: f64 = d_log_q.row(v).iter().sum();
        for t in 0..lat.vocab_size() {
            d_phi[(v, t)] = d_log_q[(v, t)] - q[(v, t)] * total;
        }
    }
    GradientBundle {
        d_transition_logits: d_theta,
        d_emission_logits: d_phi,
        loss_value,
    }
}

/// `d_e[u][v] += a[u] · b[v]` over the strict upper triangle.
fn add_outer_upper(d_e: &mut Matrix, a: &[f64], b: &[f64]) {
    let l = a.len();
    for (u, &au) in a.iter().enumerate() {
        if au == 0.0 {
            continue;
        }
        let row = d_e.row_mut(u);
        for v in u + 1..l {
            row[v] += au * b[v];
        }
    }
}

/// `out[u] = Σ_{v>u} E[u][v] · b[v]`.
fn pull_back(e: &Matrix, b: &[f64]) -> Vec<f64> {
    let l = b.len();
    (0..l)
        .map(|u| {
            let row = e.row(u);
            (u + 1..l).map(|v| row[v] * b[v]).sum()
        })
        .collect()
}

/// Gradient of the fuzzy-alignment loss `−BP × p′_n`.
pub fn fa_loss_grad(params: &LatticeLogits, y: &Reference, n: usize) -> Result<GradientBundle> {
    let lat = Lattice::from_logits(params)?;
    let parts = AlignmentParts::compute(&lat, y, n)?;
    let report = parts.report();
    let l = lat.num_vertices();
    let e = lat.transition_matrix();
    let q = lat.emission_matrix();
    let p = &parts.passing;

    let numerator = report.numerator;
    let den = report.denominator;
    let bp = report.bp;
    let m = parts.ref_len as f64;
    let t = parts.expected_length;

    let d_num = -bp / den;
    let d_den = bp * numerator / (den * den);
    let d_t = if t < m {
        -report.precision * bp * m / (t * t)
    } else {
        0.0
    };

    let mut d_p = vec![d_t; l];
    let mut d_e = Matrix::zeros(l, l);
    let mut d_q = Matrix::zeros(l, lat.vocab_size());

    // denominator: c_1 = p, c_{k+1} = c_k E, den = Σ c_n
    if d_den != 0.0 {
        let mut cs = vec![p.clone()];
        for _ in 1..n {
            let next = crate::fuzzy::push_forward(cs.last().unwrap(), e);
            cs.push(next);
        }
        let mut grad = vec![d_den; l];
        for k in (0..n - 1).rev() {
            add_outer_upper(&mut d_e, &cs[k], &grad);
            grad = pull_back(e, &grad);
        }
        for (dp, g) in d_p.iter_mut().zip(&grad) {
            *dp += g;
        }
    }

    // clipped numerator: only unclipped grams carry gradient
    for ((gram, &count), &expected) in parts.table.entries.iter().zip(&parts.expected_counts) {
        if expected >= count as f64 || d_num == 0.0 {
            continue;
        }
        // forward, keeping post-reweight states c_k and pre-reweight z_k
        let mut cs: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(n);
        cs.push((0..l).map(|v| p[v] * q[(v, gram[0])]).collect());
        zs.push(Vec::new());
        for &tok in &gram[1..] {
            let z = crate::fuzzy::push_forward(cs.last().unwrap(), e);
            let c = z
                .iter()
                .enumerate()
                .map(|(v, zv)| zv * q[(v, tok)])
                .collect();
            zs.push(z);
            cs.push(c);
        }
        let mut grad = vec![d_num; l];
        for k in (1..n).rev() {
            let tok = gram[k];
            let z_hat: Vec<f64> = (0..l)
                .map(|v| {
                    d_q[(v, tok)] += grad[v] * zs[k][v];
                    grad[v] * q[(v, tok)]
                })
                .collect();
            add_outer_upper(&mut d_e, &cs[k - 1], &z_hat);
            grad = pull_back(e, &z_hat);
        }
        for v in 0..l {
            d_q[(v, gram[0])] += grad[v] * p[v];
            d_p[v] += grad[v] * q[(v, gram[0])];
        }
    }

    // passing recursion p_v = Σ_{u<v} p_u E[u][v], reverse topological order
    for v in (1..l).rev() {
        let g = d_p[v];
        if g == 0.0 {
            continue;
        }
        for u in 0..v {
            d_e[(u, v)] += g * p[u];
            d_p[u] += g * e[(u, v)];
        }
    }

    Ok(softmax_backward(&lat, &d_e, &d_q, report.loss))
}

/// Gradient of `−log P(y|x)` from posterior edge and emission occupancies.
pub fn nll_loss_grad(params: &LatticeLogits, y: &Reference) -> Result<GradientBundle> {
    let lat = Lattice::from_logits(params)?;
    y.check_vocab(&lat)?;
    let l = lat.num_vertices();
    let m = y.len();
    check_feasible_length(m, l)?;
    let fb = forward_backward(&lat, y);
    if fb.log_z == f64::NEG_INFINITY {
        return Err(Error::UndefinedGradient);
    }

    let mut d_log_e = Matrix::zeros(l, l);
    let mut d_log_q = Matrix::zeros(l, lat.vocab_size());
    for (i, &tok) in y.tokens().iter().enumerate() {
        for v in 0..l {
            let occ = (fb.alpha[i][v] + fb.beta[i][v] - fb.log_z).exp();
            d_log_q[(v, tok)] -= occ;
        }
    }
    for i in 0..m - 1 {
        for u in 0..l {
            let a = fb.alpha[i][u];
            if a == f64::NEG_INFINITY {
                continue;
            }
            for v in u + 1..l {
                let s = a + fb.log_e[u][v] + fb.log_q[i + 1][v] + fb.beta[i + 1][v] - fb.log_z;
                d_log_e[(u, v)] -= s.exp();
            }
        }
    }
    Ok(log_softmax_backward(&lat, &d_log_e, &d_log_q, -fb.log_z))
}

/// Gradient of `−log P(y, a | x)` for one aligned path.
pub fn path_nll_grad(params: &LatticeLogits, y: &Reference, a: &Path) -> Result<GradientBundle> {
    let lat = Lattice::from_logits(params)?;
    y.check_vocab(&lat)?;
    let l = lat.num_vertices();
    if !a.spans(l) || a.len() != y.len() {
        return Err(Error::InvalidPath(format!(
            "{a} is not an aligned path for a reference of length {}",
            y.len()
        )));
    }
    let mut d_log_e = Matrix::zeros(l, l);
    let mut d_log_q = Matrix::zeros(l, lat.vocab_size());
    for w in a.vertices().windows(2) {
        d_log_e[(w[0] - 1, w[1] - 1)] -= 1.0;
    }
    for (&v, &t) in a.vertices().iter().zip(y.tokens()) {
        d_log_q[(v - 1, t)] -= 1.0;
    }
    let loss = -crate::pathdp::log_joint(&lat, y, a);
    Ok(log_softmax_backward(&lat, &d_log_e, &d_log_q, loss))
}

/// One logit coordinate, 1-based vertices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coordinate {
    Transition { from: usize, to: usize },
    Emission { vertex: usize, token: usize },
}

impl Coordinate {
    pub fn from_flat(params: &LatticeLogits, k: usize) -> Self {
        let l = params.num_vertices;
        if k < l * l {
            Coordinate::Transition {
                from: k / l + 1,
                to: k % l + 1,
            }
        } else {
            let k = k - l * l;
            Coordinate::Emission {
                vertex: k / params.vocab_size + 1,
                token: k % params.vocab_size,
            }
        }
    }
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coordinate::Transition { from, to } => write!(f, "transition[{from},{to}]"),
            Coordinate::Emission { vertex, token } => write!(f, "emission[{vertex},{token}]"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CheckConfig {
    pub step: f64,
    pub rel_tolerance: f64,
    /// Absolute difference always accepted, for near-zero gradients.
    pub abs_floor: f64,
    /// Distance to a clipping boundary under which a coordinate is skipped.
    pub kink_margin: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            step: 1e-5,
            rel_tolerance: 1e-4,
            abs_floor: 1e-8,
            kink_margin: 1e-7,
        }
    }
}

impl CheckConfig {
    /// `|a − f| / max(|a|, |f|, abs_floor / rel_tolerance)`; a coordinate
    /// passes when this is at most `rel_tolerance`.
    pub fn error(&self, analytic: f64, numeric: f64) -> f64 {
        let scale = analytic
            .abs()
            .max(numeric.abs())
            .max(self.abs_floor / self.rel_tolerance);
        (analytic - numeric).abs() / scale
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateResult {
    pub coordinate: Coordinate,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

/// Coordinate excluded because a central difference would straddle a
/// clipping kink.
#[derive(Clone, Debug, PartialEq)]
pub struct SkippedCoordinate {
    pub coordinate: Coordinate,
    pub analytic: f64,
    pub numeric: f64,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub loss: LossKind,
    pub loss_value: f64,
    pub checked: usize,
    pub max_error: f64,
    pub worst: Option<CoordinateResult>,
    pub failures: Vec<CoordinateResult>,
    pub skipped: Vec<SkippedCoordinate>,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "loss={} value={:.12} checked={} max_rel_error={:.3e} tolerance={:.0e} {}",
            self.loss,
            self.loss_value,
            self.checked,
            self.max_error,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        if let Some(w) = &self.worst {
            writeln!(
                f,
                "worst {}: analytic={:.6e} numeric={:.6e}",
                w.coordinate, w.analytic, w.numeric
            )?;
        }
        for c in &self.failures {
            writeln!(
                f,
                "failed {}: analytic={:.6e} numeric={:.6e} error={:.3e}",
                c.coordinate, c.analytic, c.numeric, c.error
            )?;
        }
        for s in &self.skipped {
            writeln!(
                f,
                "skipped {} ({}): analytic={:.6e} numeric={:.6e}",
                s.coordinate, s.reason, s.analytic, s.numeric
            )?;
        }
        Ok(())
    }
}

/// Signed distances to every clipping boundary of the FA loss: the brevity
/// penalty first, then one entry per reference gram.
fn kink_offsets(params: &LatticeLogits, y: &Reference, n: usize) -> Result<Vec<f64>> {
    let lat = Lattice::from_logits(params)?;
    let parts = AlignmentParts::compute(&lat, y, n)?;
    let mut out = vec![parts.expected_length - parts.ref_len as f64];
    out.extend(
        parts
            .table
            .entries
            .values()
            .zip(&parts.expected_counts)
            .map(|(&c, &e)| e - c as f64),
    );
    Ok(out)
}

/// Compares the analytic gradient against central differences on every logit.
pub fn finite_diff_check(
    params: &LatticeLogits,
    y: &Reference,
    n: usize,
    which: LossKind,
) -> Result<CheckReport> {
    finite_diff_check_with(params, y, n, which, &CheckConfig::default())
}

pub fn finite_diff_check_with(
    params: &LatticeLogits,
    y: &Reference,
    n: usize,
    which: LossKind,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    let grad = loss_grad(params, y, n, which)?;
    let base = loss_value(params, y, n, which)?;
    if !base.is_finite() {
        return Err(Error::CheckInfeasible);
    }
    let base_kinks = match which {
        LossKind::Fa => kink_offsets(params, y, n)?,
        LossKind::Nll => Vec::new(),
    };

    let mut report = CheckReport {
        loss: which,
        loss_value: base,
        checked: 0,
        max_error: 0.0,
        worst: None,
        failures: Vec::new(),
        skipped: Vec::new(),
        tolerance: cfg.rel_tolerance,
    };
    let mut probe = params.clone();
    for k in 0..params.num_params() {
        let x0 = params.param(k);
        *probe.param_mut(k) = x0 + cfg.step;
        let plus = loss_value(&probe, y, n, which)?;
        let plus_kinks = match which {
            LossKind::Fa => kink_offsets(&probe, y, n)?,
            LossKind::Nll => Vec::new(),
        };
        *probe.param_mut(k) = x0 - cfg.step;
        let minus = loss_value(&probe, y, n, which)?;
        let minus_kinks = match which {
            LossKind::Fa => kink_offsets(&probe, y, n)?,
            LossKind::Nll => Vec::new(),
        };
        *probe.param_mut(k) = x0;

        let numeric = (plus - minus) / (2.0 * cfg.step);
        let analytic = grad.component(k);
        let coordinate = Coordinate::from_flat(params, k);

        let kink = base_kinks
            .iter()
            .zip(&plus_kinks)
            .zip(&minus_kinks)
            .enumerate()
            .find_map(|(idx, ((&b, &p), &m))| {
                // constant branch is active at offset >= 0
                let crosses = (p >= 0.0) != (b >= 0.0) || (m >= 0.0) != (b >= 0.0);
                let near = b.abs() <= cfg.kink_margin && p != m;
                (crosses || near).then_some(idx)
            });
        if let Some(idx) = kink {
            let reason = if idx == 0 {
                "brevity-penalty kink".to_string()
            } else {
                let gram = parts_gram(y, n, idx - 1);
                format!("clipping kink at gram {gram:?}")
            };
            report.skipped.push(SkippedCoordinate {
                coordinate,
                analytic,
                numeric,
                reason,
            });
            continue;
        }

        let error = cfg.error(analytic, numeric);
        let result = CoordinateResult {
            coordinate,
            analytic,
            numeric,
            error,
        };
        report.checked += 1;
        if error > report.max_error || report.worst.is_none() {
            report.max_error = report.max_error.max(error);
            report.worst = Some(result.clone());
        }
        if error.is_nan() || error > cfg.rel_tolerance {
            report.failures.push(result);
        }
    }
    Ok(report)
}

fn parts_gram(y: &Reference, n: usize, idx: usize) -> Vec<usize> {
    crate::fuzzy::ngram_table(y, n)
        .map(|t| t.entries.keys().nth(idx).cloned().unwrap_or_default())
        .unwrap_or_default()
}
