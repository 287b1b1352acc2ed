//! Command-line front end. Exit status is 0 on success, 1 when the inputs are
//! well formed but fail a validation or feasibility check, and 2 for I/O,
//! parse and usage errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::decode::{decode, decode_stats, joint_viterbi_decode, Strategy};
use crate::error::{Error, Result};
use crate::fuzzy::{expected_gram_count, expected_total_ngrams, fa_loss, fuzzy_precision};
use crate::grad::{finite_diff_check, LossKind};
use crate::lattice::{random_lattice, Lattice, LatticeLogits};
use crate::oracle::{
    oracle_best_joint, oracle_expected_gram_count, oracle_expected_total_ngrams,
    oracle_full_translation_expectation, oracle_marginal_prob, oracle_passing_prob,
    TRANSLATION_VERTEX_CAP, TRANSLATION_VOCAB_CAP,
};
use crate::pathdp::{marginal_nll, passing_probabilities, Reference};
use crate::train::{
    eval_report, lambda_sweep, make_toy_corpus, train, CorpusSpec, Preset, ToyCorpus, TrainConfig,
};

/// Oracle deviations above this fail `oracle-check`.
pub const ORACLE_TOLERANCE: f64 = 1e-9;
/// Largest `V^n` for which `oracle-check` compares every gram when no
/// reference is given.
const ALL_GRAMS_CAP: usize = 4096;

#[derive(Parser, Debug)]
#[command(name = "fadag", version, about = "DAG lattice alignment toolkit")]
struct Cli {
    /// Seed for commands that draw random numbers.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress informational output.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RefArgs {
    /// Comma-separated token ids, e.g. `0,1,1`.
    reference: Option<String>,
    /// File holding the reference as comma-separated ids or a JSON array.
    #[arg(long, conflicts_with = "reference")]
    ref_file: Option<PathBuf>,
}

impl RefArgs {
    fn get(&self) -> Result<Option<Reference>> {
        if let Some(s) = &self.reference {
            return Reference::parse(s).map(Some);
        }
        let Some(path) = &self.ref_file else {
            return Ok(None);
        };
        let text = std::fs::read_to_string(path)?;
        let text = text.trim();
        let r = if text.starts_with('[') {
            serde_json::from_str(text)?
        } else {
            Reference::parse(text).map_err(|e| Error::Format(e.to_string()))?
        };
        Ok(Some(r))
    }

    fn require(&self) -> Result<Reference> {
        self.get()?
            .ok_or_else(|| Error::InvalidParameter("a reference is required".into()))
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum StrategyArg {
    Greedy,
    Lookahead,
    Viterbi,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Greedy => Strategy::Greedy,
            StrategyArg::Lookahead => Strategy::Lookahead,
            StrategyArg::Viterbi => Strategy::Viterbi,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum LossArg {
    Fa,
    Nll,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PresetArg {
    Single,
    TwoModality,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fuzzy alignment report of a lattice against a reference.
    Score {
        lattice: PathBuf,
        #[command(flatten)]
        reference: RefArgs,
        #[arg(long, default_value_t = 2)]
        n: usize,
    },
    /// Marginal negative log-likelihood of a reference.
    Nll {
        lattice: PathBuf,
        #[command(flatten)]
        reference: RefArgs,
    },
    /// Decode a lattice.
    Decode {
        lattice: PathBuf,
        #[arg(long, value_enum, default_value = "lookahead")]
        strategy: StrategyArg,
        /// Prefix for `<prefix>.summary.csv` and `<prefix>.vertices.csv`.
        #[arg(long)]
        stats_out: Option<PathBuf>,
    },
    /// Compare the dynamic programs against brute-force enumeration.
    OracleCheck {
        lattice: PathBuf,
        #[command(flatten)]
        reference: RefArgs,
        #[arg(long, default_value_t = 2)]
        n: usize,
    },
    /// Finite-difference check of a loss gradient.
    Gradcheck {
        lattice: PathBuf,
        #[command(flatten)]
        reference: RefArgs,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, value_enum, default_value = "fa")]
        loss: LossArg,
    },
    /// NLL pretraining followed by FA finetuning on a toy corpus.
    Train {
        corpus: PathBuf,
        config: PathBuf,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long)]
        report_out: PathBuf,
        /// Optional per-vertex scatter CSV.
        #[arg(long)]
        vertices_out: Option<PathBuf>,
    },
    /// Train NLL-only and NLL→FA models over a range of upsampling factors.
    Sweep {
        corpus: PathBuf,
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])]
        lambdas: Vec<f64>,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write standard-normal lattice logits.
    RandomLattice {
        #[arg(long = "vertices")]
        num_vertices: usize,
        #[arg(long = "vocab")]
        vocab_size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a toy corpus as JSON lines.
    Corpus {
        #[arg(long, value_enum)]
        preset: PresetArg,
        #[arg(long, default_value_t = 1)]
        classes: usize,
        #[arg(long, default_value_t = 5)]
        length: usize,
        #[arg(long = "vocab", default_value_t = 4)]
        vocab_size: usize,
        /// Explicit words, `;`-separated, each comma-separated.
        #[arg(long)]
        words: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit
/// status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_io_or_format() {
                2
            } else {
                1
            }
        }
    }
}

fn load_lattice(path: &FsPath) -> Result<Lattice> {
    Lattice::from_logits(&LatticeLogits::load(path)?)
}

/// Rounds to `digits` significant digits; non-finite values become strings.
fn num(x: f64, digits: usize) -> Value {
    if !x.is_finite() {
        return Value::String(crate::decode::fmt_f64(x));
    }
    let rounded: f64 = format!("{:.*e}", digits - 1, x).parse().unwrap_or(x);
    json!(rounded)
}

/// Full precision: shortest representation that round-trips.
fn exact(x: f64) -> Value {
    num(x, 17)
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Score {
            lattice,
            reference,
            n,
        } => {
            let lat = load_lattice(lattice)?;
            let r = fa_loss(&lat, &reference.require()?, *n)?;
            let v = json!({
                "order": r.order,
                "numerator": num(r.numerator, 12),
                "denominator": num(r.denominator, 12),
                "precision": num(r.precision, 12),
                "expected_length": num(r.expected_length, 12),
                "bp": num(r.bp, 12),
                "loss": num(r.loss, 12),
            });
            writeln!(out, "{v}")?;
        }
        Command::Nll { lattice, reference } => {
            let lat = load_lattice(lattice)?;
            let nll = marginal_nll(&lat, &reference.require()?)?;
            writeln!(out, "{}", json!({ "nll": exact(nll) }))?;
        }
        Command::Decode {
            lattice,
            strategy,
            stats_out,
        } => {
            let lat = load_lattice(lattice)?;
            let d = decode(&lat, (*strategy).into())?;
            let v = json!({
                "strategy": Strategy::from(*strategy).to_string(),
                "tokens": d.tokens,
                "path": d.path.vertices(),
                "log_path_prob": exact(d.log_path_prob),
                "log_tokens_given_path": exact(d.log_tokens_given_path),
                "log_marginal": exact(d.log_marginal),
            });
            writeln!(out, "{v}")?;
            if let Some(prefix) = stats_out {
                let stats = decode_stats(&lat, &d);
                let mut summary = Vec::new();
                stats.write_summary_csv(&mut summary)?;
                crate::io::write_atomic(with_suffix(prefix, "summary.csv"), &summary)?;
                let mut vertices = Vec::new();
                stats.write_vertices_csv(&mut vertices)?;
                crate::io::write_atomic(with_suffix(prefix, "vertices.csv"), &vertices)?;
            }
        }
        Command::OracleCheck {
            lattice,
            reference,
            n,
        } => {
            let lat = load_lattice(lattice)?;
            let report = oracle_check(&lat, reference.get()?.as_ref(), *n)?;
            for (name, dev) in &report {
                writeln!(out, "{name:<24} max_abs_dev={dev:.3e}")?;
            }
            let pass = report.iter().all(|(_, d)| *d <= ORACLE_TOLERANCE);
            writeln!(
                out,
                "{} (tolerance {ORACLE_TOLERANCE:.0e})",
                if pass { "PASS" } else { "FAIL" }
            )?;
            return Ok(if pass { 0 } else { 1 });
        }
        Command::Gradcheck {
            lattice,
            reference,
            n,
            loss,
        } => {
            let params = LatticeLogits::load(lattice)?;
            let which = match loss {
                LossArg::Fa => LossKind::Fa,
                LossArg::Nll => LossKind::Nll,
            };
            let report = finite_diff_check(&params, &reference.require()?, *n, which)?;
            write!(out, "{report}")?;
            return Ok(if report.passed() { 0 } else { 1 });
        }
        Command::Train {
            corpus,
            config,
            model_out,
            report_out,
            vertices_out,
        } => {
            let (corpus, cfg) = load_training_inputs(corpus, config, cli.seed)?;
            let model = train(&corpus, &cfg)?;
            model.save(model_out)?;
            let report = eval_report(&model, &corpus, &cfg)?;
            let mut csv = Vec::new();
            report.write_csv(&mut csv)?;
            crate::io::write_atomic(report_out, &csv)?;
            if let Some(path) = vertices_out {
                let mut csv = Vec::new();
                report.write_vertices_csv(&mut csv)?;
                crate::io::write_atomic(path, &csv)?;
            }
            if !cli.quiet {
                writeln!(
                    out,
                    "classes={} exact_match[lookahead]={:.3} fa_loss={:.6} confidence={:.6}",
                    report.classes.len(),
                    report.exact_match_rate(Strategy::Lookahead),
                    report.mean_fa_loss(),
                    report.mean_confidence()
                )?;
            }
        }
        Command::Sweep {
            corpus,
            config,
            lambdas,
            out: dest,
        } => {
            let (corpus, cfg) = load_training_inputs(corpus, config, cli.seed)?;
            let table = lambda_sweep(&corpus, &cfg, lambdas)?;
            let mut csv = Vec::new();
            table.write_csv(&mut csv)?;
            match dest {
                Some(path) => crate::io::write_atomic(path, &csv)?,
                None => out.write_all(&csv)?,
            }
        }
        Command::RandomLattice {
            num_vertices,
            vocab_size,
            out: dest,
        } => {
            random_lattice(seed, *num_vertices, *vocab_size)?.save(dest)?;
        }
        Command::Corpus {
            preset,
            classes,
            length,
            vocab_size,
            words,
            out: dest,
        } => {
            let preset = match preset {
                PresetArg::Single => Preset::Single,
                PresetArg::TwoModality => Preset::TwoModality,
            };
            let words = words
                .as_deref()
                .map(|w| {
                    w.split(';')
                        .map(|s| Reference::parse(s).map(Vec::from))
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?;
            let spec = CorpusSpec {
                preset,
                num_classes: words.as_ref().map_or(*classes, Vec::len),
                length: *length,
                vocab_size: *vocab_size,
                words,
            };
            make_toy_corpus(&spec, seed)?.save(dest)?;
        }
    }
    Ok(0)
}

fn with_suffix(prefix: &FsPath, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn load_training_inputs(
    corpus: &FsPath,
    config: &FsPath,
    seed: Option<u64>,
) -> Result<(ToyCorpus, TrainConfig)> {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let corpus = ToyCorpus::load(corpus, cfg.vocab_size)?;
    Ok((corpus, cfg))
}

/// Maximum absolute deviation between each efficient quantity and its oracle.
/// Reference-dependent rows appear only when a reference is supplied.
pub fn oracle_check(lat: &Lattice, y: Option<&Reference>, n: usize) -> Result<Vec<(String, f64)>> {
    let mut rows = Vec::new();
    let p = passing_probabilities(lat)?;
    let q = oracle_passing_prob(lat)?;
    rows.push((
        "passing_prob".to_string(),
        max_dev(p.as_slice().iter().zip(q.as_slice()).map(|(a, b)| (*a, *b))),
    ));
    rows.push((
        format!("expected_total_{n}grams"),
        (expected_total_ngrams(lat, n)? - oracle_expected_total_ngrams(lat, n)?).abs(),
    ));

    let grams: Vec<Vec<usize>> = match y {
        Some(r) => {
            r.check_vocab(lat)?;
            r.tokens().windows(n).map(<[usize]>::to_vec).collect()
        }
        None => all_grams(lat.vocab_size(), n)?,
    };
    let mut dev = 0.0f64;
    for g in &grams {
        dev = dev.max((expected_gram_count(lat, g)? - oracle_expected_gram_count(lat, g)?).abs());
    }
    rows.push(("expected_gram_counts".to_string(), dev));

    if let Some(r) = y {
        if r.len() <= lat.num_vertices() {
            let m = (-marginal_nll(lat, r)?).exp();
            rows.push((
                "marginal_prob".to_string(),
                (m - oracle_marginal_prob(lat, r)?).abs(),
            ));
        }
        if r.len() >= n
            && lat.num_vertices() <= TRANSLATION_VERTEX_CAP
            && lat.vocab_size() <= TRANSLATION_VOCAB_CAP
        {
            let fast = fuzzy_precision(lat, r, n)?;
            let slow = oracle_full_translation_expectation(lat, r, n)?;
            rows.push((
                "precision_terms".to_string(),
                (fast.numerator - slow.numerator)
                    .abs()
                    .max((fast.denominator - slow.denominator).abs()),
            ));
        }
    }

    if lat.num_vertices() >= 2 {
        let fast = joint_viterbi_decode(lat)?;
        let slow = oracle_best_joint(lat)?;
        let dev = if fast.tokens == slow.tokens && fast.path == slow.path {
            (fast.log_joint() - slow.log_joint()).abs()
        } else {
            f64::INFINITY
        };
        rows.push(("joint_viterbi".to_string(), dev));
    }
    Ok(rows)
}

fn all_grams(vocab: usize, n: usize) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::InvalidOrder(n));
    }
    let count = (0..n).try_fold(1usize, |acc, _| acc.checked_mul(vocab));
    if count.is_none_or(|c| c > ALL_GRAMS_CAP) {
        return Err(Error::OracleVocabCap {
            vocab_size: vocab,
            cap: ALL_GRAMS_CAP,
        });
    }
    let count = count.unwrap();
    Ok((0..count)
        .map(|mut k| {
            let mut g = vec![0; n];
            for slot in g.iter_mut().rev() {
                *slot = k % vocab;
                k /= vocab;
            }
            g
        })
        .collect())
}

fn max_dev(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    pairs.map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::b4;

    #[test]
    fn twelve_digit_rounding() {
        assert_eq!(num(0.5, 12), json!(0.5));
        assert_eq!(num(1.0 / 3.0, 12), json!(0.333333333333));
        assert_eq!(num(f64::INFINITY, 12), json!("inf"));
    }

    #[test]
    fn gram_listing() {
        let g = all_grams(2, 2).unwrap();
        assert_eq!(g, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }

    #[test]
    fn oracle_check_on_b4() {
        let y = Reference::parse("0,1,1").unwrap();
        let rows = oracle_check(&b4(), Some(&y), 2).unwrap();
        assert!(rows.len() >= 6);
        assert!(rows.iter().all(|(_, d)| *d < 1e-12), "{rows:?}");
    }
}
