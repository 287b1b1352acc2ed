//! Toy training harness: a tabular lattice per class, NLL pretraining followed
//! by fuzzy-alignment finetuning, and evaluation reports.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path as FsPath;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decode::{confidence_summary, decode, decode_stats, fmt_f64, Strategy};
use crate::error::{Error, Result};
use crate::fuzzy::fa_loss;
use crate::grad::{loss_grad, GradientBundle, LossKind};
use crate::lattice::{random_lattice, Lattice, LatticeLogits};
use crate::pathdp::{marginal_nll, Reference};

/// One training pair: a class (the stand-in for a source sentence) and one of
/// its references.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub class: usize,
    pub reference: Reference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyCorpus {
    pub samples: Vec<Sample>,
    pub vocab_size: usize,
}

impl ToyCorpus {
    pub fn new(samples: Vec<Sample>, vocab_size: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::MalformedSpec("corpus is empty".into()));
        }
        for s in &samples {
            if s.reference.len() < 2 {
                return Err(Error::MalformedSpec(format!(
                    "class {} has a reference shorter than 2 tokens",
                    s.class
                )));
            }
            if let Some(&t) = s.reference.tokens().iter().find(|&&t| t >= vocab_size) {
                return Err(Error::MalformedSpec(format!(
                    "token {t} outside vocabulary of size {vocab_size}"
                )));
            }
        }
        Ok(ToyCorpus {
            samples,
            vocab_size,
        })
    }

    /// Distinct references per class, in order of first appearance.
    pub fn variants(&self) -> BTreeMap<usize, Vec<Reference>> {
        let mut out: BTreeMap<usize, Vec<Reference>> = BTreeMap::new();
        for s in &self.samples {
            let v = out.entry(s.class).or_default();
            if !v.contains(&s.reference) {
                v.push(s.reference.clone());
            }
        }
        out
    }

    pub fn num_classes(&self) -> usize {
        self.variants().len()
    }

    /// Reads JSON lines `{"class": int, "reference": [int, ...]}`. The
    /// vocabulary is one past the largest token id unless given.
    pub fn read_jsonl(reader: impl BufRead, vocab_size: Option<usize>) -> Result<Self> {
        let mut samples = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            samples.push(serde_json::from_str::<Sample>(&line)?);
        }
        let inferred = samples
            .iter()
            .flat_map(|s| s.reference.tokens().iter().copied())
            .max()
            .map_or(1, |t| t + 1);
        ToyCorpus::new(samples, vocab_size.unwrap_or(inferred))
    }

    pub fn load(path: impl AsRef<FsPath>, vocab_size: Option<usize>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f), vocab_size)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for s in &self.samples {
            writeln!(w, "{}", serde_json::to_string(s)?)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        crate::io::write_atomic(path, &buf)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// One reference per class.
    Single,
    /// Each class has a word and its reversal. Generated words begin and end
    /// with the same token.
    TwoModality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub preset: Preset,
    pub num_classes: usize,
    /// Word length when words are generated.
    pub length: usize,
    pub vocab_size: usize,
    /// Explicit base words, one per class; generated from the seed when absent.
    #[serde(default)]
    pub words: Option<Vec<Vec<usize>>>,
}

impl CorpusSpec {
    pub fn with_words(preset: Preset, vocab_size: usize, words: Vec<Vec<usize>>) -> Self {
        CorpusSpec {
            preset,
            num_classes: words.len(),
            length: words.first().map_or(0, Vec::len),
            vocab_size,
            words: Some(words),
        }
    }
}

pub fn make_toy_corpus(spec: &CorpusSpec, seed: u64) -> Result<ToyCorpus> {
    if spec.num_classes == 0 || spec.vocab_size == 0 {
        return Err(Error::MalformedSpec(
            "need at least one class and one token".into(),
        ));
    }
    let words = match &spec.words {
        Some(w) => {
            if w.len() != spec.num_classes {
                return Err(Error::MalformedSpec(format!(
                    "{} words given for {} classes",
                    w.len(),
                    spec.num_classes
                )));
            }
            w.clone()
        }
        None => {
            if spec.length < 2 {
                return Err(Error::MalformedSpec(
                    "word length must be at least 2".into(),
                ));
            }
            let two = spec.preset == Preset::TwoModality;
            if two && (spec.vocab_size < 2 || spec.length < 4) {
                return Err(Error::MalformedSpec(
                    "two-modality words need length >= 4 and at least 2 tokens".into(),
                ));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..spec.num_classes)
                .map(|_| loop {
                    let mut w: Vec<usize> = (0..spec.length)
                        .map(|_| rng.random_range(0..spec.vocab_size))
                        .collect();
                    if !two {
                        break w;
                    }
                    // Every path starts at vertex 1 and ends at vertex L, so a
                    // lattice can only hold both orders if they share endpoints.
                    w[spec.length - 1] = w[0];
                    if !w.iter().eq(w.iter().rev()) {
                        break w;
                    }
                })
                .collect()
        }
    };
    let mut samples = Vec::new();
    for (class, w) in words.into_iter().enumerate() {
        let reference = Reference::new(w)?;
        if spec.preset == Preset::TwoModality {
            let reversed = reference.reversed();
            samples.push(Sample {
                class,
                reference: reference.clone(),
            });
            samples.push(Sample {
                class,
                reference: reversed,
            });
        } else {
            samples.push(Sample { class, reference });
        }
    }
    ToyCorpus::new(samples, spec.vocab_size)
}

fn default_lambda() -> f64 {
    4.0
}
fn default_n() -> usize {
    2
}
fn default_pretrain() -> usize {
    2000
}
fn default_finetune() -> usize {
    500
}
fn default_lr() -> f64 {
    0.05
}
fn default_warmup() -> usize {
    100
}
fn default_finetune_lr() -> f64 {
    0.005
}
fn default_finetune_warmup() -> usize {
    50
}
fn default_batch() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Per-class `L = max(ceil(lambda · mean reference length), max length + 1)`.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_pretrain")]
    pub pretrain_steps: usize,
    #[serde(default = "default_finetune")]
    pub finetune_steps: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    /// Peak rate of the FA phase, which restarts its own warmup and Adam state.
    #[serde(default = "default_finetune_lr")]
    pub finetune_learning_rate: f64,
    #[serde(default = "default_finetune_warmup")]
    pub finetune_warmup_steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the vocabulary inferred from a corpus file.
    #[serde(default)]
    pub vocab_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: default_lambda(),
            n: default_n(),
            pretrain_steps: default_pretrain(),
            finetune_steps: default_finetune(),
            learning_rate: default_lr(),
            warmup_steps: default_warmup(),
            finetune_learning_rate: default_finetune_lr(),
            finetune_warmup_steps: default_finetune_warmup(),
            batch_size: default_batch(),
            seed: 0,
            vocab_size: None,
        }
    }
}

impl TrainConfig {
    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Same total step budget spent entirely on NLL.
    pub fn nll_only(&self) -> Self {
        TrainConfig {
            pretrain_steps: self.pretrain_steps + self.finetune_steps,
            finetune_steps: 0,
            ..self.clone()
        }
    }

    fn check(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 1.0 {
            return Err(Error::InfeasibleConfig(format!(
                "lambda must be at least 1, got {}",
                self.lambda
            )));
        }
        if self.n < 1 {
            return Err(Error::InfeasibleConfig("n must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InfeasibleConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        for (name, lr) in [
            ("learning_rate", self.learning_rate),
            ("finetune_learning_rate", self.finetune_learning_rate),
        ] {
            if !lr.is_finite() || lr <= 0.0 {
                return Err(Error::InfeasibleConfig(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn graph_size(&self, references: &[Reference]) -> usize {
        let mean =
            references.iter().map(Reference::len).sum::<usize>() as f64 / references.len() as f64;
        let max = references.iter().map(Reference::len).max().unwrap_or(1);
        ((self.lambda * mean).ceil() as usize).max(max + 1)
    }
}

/// Per-class lattice logits over a shared vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub vocab_size: usize,
    pub classes: BTreeMap<usize, LatticeLogits>,
}

impl ToyModel {
    /// Standard-normal initialization; class `c` uses a seed derived from
    /// `(seed, c)`.
    pub fn init(corpus: &ToyCorpus, cfg: &TrainConfig) -> Result<Self> {
        cfg.check()?;
        let mut classes = BTreeMap::new();
        for (class, refs) in corpus.variants() {
            let l = cfg.graph_size(&refs);
            let class_seed = cfg
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(class as u64 + 1);
            classes.insert(class, random_lattice(class_seed, l, corpus.vocab_size)?);
        }
        Ok(ToyModel {
            vocab_size: corpus.vocab_size,
            classes,
        })
    }

    pub fn lattice(&self, class: usize) -> Result<Lattice> {
        let params = self.classes.get(&class).ok_or_else(|| {
            Error::InfeasibleConfig(format!("model has no lattice for class {class}"))
        })?;
        Lattice::from_logits(params)
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let model: ToyModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        for p in model.classes.values() {
            p.check_shape().map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        crate::io::write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    fn check_feasible(&self, corpus: &ToyCorpus, cfg: &TrainConfig) -> Result<()> {
        for s in &corpus.samples {
            let params = self.classes.get(&s.class).ok_or_else(|| {
                Error::InfeasibleConfig(format!("no lattice for class {}", s.class))
            })?;
            if params.num_vertices < s.reference.len() {
                return Err(Error::InfeasibleConfig(format!(
                    "class {} has L = {} but a reference of length {}",
                    s.class,
                    params.num_vertices,
                    s.reference.len()
                )));
            }
            if cfg.finetune_steps > 0 && s.reference.len() < cfg.n {
                return Err(Error::InfeasibleConfig(format!(
                    "reference of length {} is shorter than n = {}",
                    s.reference.len(),
                    cfg.n
                )));
            }
        }
        Ok(())
    }
}

/// Adam with bias correction.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

impl Adam {
    fn new(size: usize) -> Self {
        Adam {
            m: vec![0.0; size],
            v: vec![0.0; size],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
        }
    }
}

/// Per-step mean batch losses of both phases.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub pretrain: Vec<f64>,
    pub finetune: Vec<f64>,
}

/// Trains a fresh model: `pretrain_steps` of NLL then `finetune_steps` of FA
/// loss.
pub fn train(corpus: &ToyCorpus, cfg: &TrainConfig) -> Result<ToyModel> {
    Ok(train_with_history(corpus, cfg)?.0)
}

pub fn train_with_history(
    corpus: &ToyCorpus,
    cfg: &TrainConfig,
) -> Result<(ToyModel, TrainHistory)> {
    let mut model = ToyModel::init(corpus, cfg)?;
    let history = continue_training(&mut model, corpus, cfg)?;
    Ok((model, history))
}

/// Runs both phases on an existing model. Sampling is driven by a ChaCha8
/// stream seeded from `cfg.seed`; batch gradients are summed in batch order.
pub fn continue_training(
    model: &mut ToyModel,
    corpus: &ToyCorpus,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.check()?;
    model.check_feasible(corpus, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = Batcher::new(corpus.samples.len());
    let pretrain = Phase {
        kind: LossKind::Nll,
        steps: cfg.pretrain_steps,
        schedule: Schedule {
            peak: cfg.learning_rate,
            warmup: cfg.warmup_steps,
        },
    };
    let finetune = Phase {
        kind: LossKind::Fa,
        steps: cfg.finetune_steps,
        schedule: Schedule {
            peak: cfg.finetune_learning_rate,
            warmup: cfg.finetune_warmup_steps,
        },
    };
    let pretrain = pretrain.run(model, corpus, cfg, &mut order, &mut rng)?;
    let finetune = finetune.run(model, corpus, cfg, &mut order, &mut rng)?;
    Ok(TrainHistory { pretrain, finetune })
}

/// Epoch-wise shuffled sample order.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
}

impl Batcher {
    fn new(len: usize) -> Self {
        Batcher {
            order: (0..len).collect(),
            pos: len,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos == self.order.len() {
            self.order.sort_unstable();
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

#[derive(Clone, Copy)]
struct Phase {
    kind: LossKind,
    steps: usize,
    schedule: Schedule,
}

impl Phase {
    fn run(
        &self,
        model: &mut ToyModel,
        corpus: &ToyCorpus,
        cfg: &TrainConfig,
        order: &mut Batcher,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        let Phase {
            kind,
            steps,
            schedule,
        } = *self;
        let classes: Vec<usize> = model.classes.keys().copied().collect();
        let offsets: Vec<usize> = classes
            .iter()
            .scan(0, |acc, c| {
                let start = *acc;
                *acc += model.classes[c].num_params();
                Some(start)
            })
            .collect();
        let total: usize = model.classes.values().map(LatticeLogits::num_params).sum();
        let mut adam = Adam::new(total);
        let mut losses = Vec::with_capacity(steps);

        for step in 0..steps {
            let mut flat_grad = vec![0.0; total];
            let mut batch_loss = 0.0;
            let scale = 1.0 / cfg.batch_size as f64;
            for _ in 0..cfg.batch_size {
                let sample = &corpus.samples[order.next(rng)];
                let params = &model.classes[&sample.class];
                let g = loss_grad(params, &sample.reference, cfg.n, kind)?;
                if !g.loss_value.is_finite() {
                    return Err(Error::InfeasibleConfig(format!(
                        "non-finite {kind} loss on class {}",
                        sample.class
                    )));
                }
                let k = classes.binary_search(&sample.class).unwrap();
                accumulate(&mut flat_grad[offsets[k]..], &g, scale);
                batch_loss += scale * g.loss_value;
            }
            let lr = schedule.rate(step);
            let mut flat_params = flatten(model);
            adam.step(&mut flat_params, &flat_grad, lr);
            unflatten(model, &flat_params);
            losses.push(batch_loss);
        }
        Ok(losses)
    }
}

/// Linear warmup to `peak` over `warmup` steps, constant afterwards.
#[derive(Clone, Copy)]
struct Schedule {
    peak: f64,
    warmup: usize,
}

impl Schedule {
    fn rate(&self, step: usize) -> f64 {
        if self.warmup == 0 {
            self.peak
        } else {
            self.peak * ((step + 1) as f64 / self.warmup as f64).min(1.0)
        }
    }
}

fn accumulate(dst: &mut [f64], g: &GradientBundle, scale: f64) {
    for (k, d) in dst.iter_mut().take(g.len()).enumerate() {
        *d += scale * g.component(k);
    }
}

fn flatten(model: &ToyModel) -> Vec<f64> {
    model
        .classes
        .values()
        .flat_map(|p| {
            p.transition_logits
                .as_slice()
                .iter()
                .chain(p.emission_logits.as_slice())
                .copied()
        })
        .collect()
}

fn unflatten(model: &mut ToyModel, flat: &[f64]) {
    let mut pos = 0;
    for p in model.classes.values_mut() {
        for k in 0..p.num_params() {
            *p.param_mut(k) = flat[pos + k];
        }
        pos += p.num_params();
    }
}

/// Decode of one class under one strategy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategyOutcome {
    pub strategy: Strategy,
    pub tokens: Vec<usize>,
    pub exact_match: bool,
    pub neg_log_path: f64,
    pub neg_log_tokens_given_path: f64,
    pub neg_log_marginal: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassReport {
    pub class: usize,
    pub num_vertices: usize,
    pub outcomes: Vec<StrategyOutcome>,
    /// `(p_v, max_t P(t|v))` per vertex.
    pub vertices: Vec<(f64, f64)>,
    /// Mean max-token probability over vertices with `p_v > 0.5`.
    pub confidence: f64,
    /// Mean FA loss over the class's references.
    pub fa_loss: f64,
    /// `P(y|x)` of each reference variant, in corpus order.
    pub variant_probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub classes: Vec<ClassReport>,
}

pub fn eval_report(model: &ToyModel, corpus: &ToyCorpus, cfg: &TrainConfig) -> Result<Report> {
    let mut classes = Vec::new();
    for (class, refs) in corpus.variants() {
        let lat = model.lattice(class)?;
        let mut outcomes = Vec::new();
        let mut vertices = Vec::new();
        for strategy in Strategy::ALL {
            let d = decode(&lat, strategy)?;
            let stats = decode_stats(&lat, &d);
            vertices = stats.vertices.clone();
            outcomes.push(StrategyOutcome {
                strategy,
                exact_match: refs.iter().any(|r| r.tokens() == d.tokens.as_slice()),
                tokens: d.tokens,
                neg_log_path: stats.neg_log_path,
                neg_log_tokens_given_path: stats.neg_log_tokens_given_path,
                neg_log_marginal: stats.neg_log_marginal,
            });
        }
        let mut fa_total = 0.0;
        let mut variant_probs = Vec::new();
        for r in &refs {
            fa_total += fa_loss(&lat, r, cfg.n)?.loss;
            variant_probs.push((-marginal_nll(&lat, r)?).exp());
        }
        classes.push(ClassReport {
            class,
            num_vertices: lat.num_vertices(),
            outcomes,
            confidence: confidence_summary(&vertices),
            vertices,
            fa_loss: fa_total / refs.len() as f64,
            variant_probs,
        });
    }
    Ok(Report { classes })
}

impl Report {
    fn outcomes(&self, strategy: Strategy) -> impl Iterator<Item = &StrategyOutcome> {
        self.classes
            .iter()
            .flat_map(move |c| c.outcomes.iter().filter(move |o| o.strategy == strategy))
    }

    pub fn exact_match_rate(&self, strategy: Strategy) -> f64 {
        let (hits, n) = self
            .outcomes(strategy)
            .fold((0, 0), |(h, n), o| (h + o.exact_match as usize, n + 1));
        hits as f64 / n.max(1) as f64
    }

    /// Mean `(−log P(a|x), −log P(y|a,x), −log P(y|x))` of decoded outputs.
    pub fn mean_neg_logs(&self, strategy: Strategy) -> (f64, f64, f64) {
        let mut acc = (0.0, 0.0, 0.0);
        let mut n = 0.0;
        for o in self.outcomes(strategy) {
            acc.0 += o.neg_log_path;
            acc.1 += o.neg_log_tokens_given_path;
            acc.2 += o.neg_log_marginal;
            n += 1.0;
        }
        (acc.0 / n, acc.1 / n, acc.2 / n)
    }

    pub fn mean_confidence(&self) -> f64 {
        self.classes.iter().map(|c| c.confidence).sum::<f64>() / self.classes.len() as f64
    }

    pub fn mean_fa_loss(&self) -> f64 {
        self.classes.iter().map(|c| c.fa_loss).sum::<f64>() / self.classes.len() as f64
    }

    /// One row per (class, strategy):
    /// `class,strategy,tokens,exact_match,neg_log_path,neg_log_tokens_given_path,neg_log_marginal,confidence,fa_loss`.
    /// Tokens are space-separated.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "class,strategy,tokens,exact_match,neg_log_path,neg_log_tokens_given_path,neg_log_marginal,confidence,fa_loss"
        )?;
        for c in &self.classes {
            for o in &c.outcomes {
                let tokens: Vec<String> = o.tokens.iter().map(usize::to_string).collect();
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    c.class,
                    o.strategy,
                    tokens.join(" "),
                    o.exact_match,
                    fmt_f64(o.neg_log_path),
                    fmt_f64(o.neg_log_tokens_given_path),
                    fmt_f64(o.neg_log_marginal),
                    fmt_f64(c.confidence),
                    fmt_f64(c.fa_loss)
                )?;
            }
        }
        Ok(())
    }

    /// `class,vertex,passing_prob,max_token_prob`.
    pub fn write_vertices_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "class,vertex,passing_prob,max_token_prob")?;
        for c in &self.classes {
            for (v, (p, q)) in c.vertices.iter().enumerate() {
                writeln!(w, "{},{},{},{}", c.class, v + 1, fmt_f64(*p), fmt_f64(*q))?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Objective {
    #[serde(rename = "nll")]
    NllOnly,
    #[serde(rename = "nll+fa")]
    NllThenFa,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(match self {
            Objective::NllOnly => "nll",
            Objective::NllThenFa => "nll+fa",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub objective: Objective,
    /// Lookahead exact-match rate.
    pub exact_match: f64,
    /// `BP × p′_n` averaged over classes (negated FA loss).
    pub fa_score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// `lambda,objective,exact_match,fa_score`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "lambda,objective,exact_match,fa_score")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_f64(r.lambda),
                r.objective,
                fmt_f64(r.exact_match),
                fmt_f64(r.fa_score)
            )?;
        }
        Ok(())
    }
}

/// Trains NLL-only and NLL→FA models for every `λ`, with equal step budgets.
pub fn lambda_sweep(corpus: &ToyCorpus, cfg: &TrainConfig, lambdas: &[f64]) -> Result<SweepTable> {
    let mut rows = Vec::new();
    for &lambda in lambdas {
        let base = TrainConfig {
            lambda,
            ..cfg.clone()
        };
        for (objective, run_cfg) in [
            (Objective::NllOnly, base.nll_only()),
            (Objective::NllThenFa, base.clone()),
        ] {
            let model = train(corpus, &run_cfg)?;
            let report = eval_report(&model, corpus, &run_cfg)?;
            rows.push(SweepRow {
                lambda,
                objective,
                exact_match: report.exact_match_rate(Strategy::Lookahead),
                fa_score: -report.mean_fa_loss(),
            });
        }
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            pretrain_steps: 30,
            finetune_steps: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn presets() {
        let spec = CorpusSpec::with_words(Preset::Single, 3, vec![vec![0, 1, 2]]);
        let c = make_toy_corpus(&spec, 0).unwrap();
        assert_eq!(c.samples.len(), 1);
        let spec = CorpusSpec::with_words(Preset::TwoModality, 3, vec![vec![0, 1, 2]]);
        let c = make_toy_corpus(&spec, 0).unwrap();
        let refs: Vec<_> = c
            .samples
            .iter()
            .map(|s| s.reference.tokens().to_vec())
            .collect();
        assert_eq!(refs, vec![vec![0, 1, 2], vec![2, 1, 0]]);
    }

    #[test]
    fn generated_corpora_are_seeded() {
        let spec = CorpusSpec {
            preset: Preset::TwoModality,
            num_classes: 3,
            length: 5,
            vocab_size: 4,
            words: None,
        };
        let a = make_toy_corpus(&spec, 9).unwrap();
        assert_eq!(a, make_toy_corpus(&spec, 9).unwrap());
        for (_, v) in a.variants() {
            assert_eq!(v.len(), 2);
        }
    }

    #[test]
    fn malformed_specs() {
        let spec = CorpusSpec::with_words(Preset::Single, 2, vec![vec![0, 5]]);
        assert!(matches!(
            make_toy_corpus(&spec, 0),
            Err(Error::MalformedSpec(_))
        ));
        let spec = CorpusSpec::with_words(Preset::Single, 2, vec![vec![0]]);
        assert!(make_toy_corpus(&spec, 0).is_err());
    }

    #[test]
    fn graph_size_clamps() {
        let cfg = TrainConfig {
            lambda: 1.0,
            ..TrainConfig::default()
        };
        let refs = vec![Reference::new(vec![0, 1, 2]).unwrap()];
        assert_eq!(cfg.graph_size(&refs), 4);
        assert_eq!(TrainConfig::default().graph_size(&refs), 12);
    }

    #[test]
    fn zero_finetune_equals_pretrain_only() {
        let spec = CorpusSpec::with_words(Preset::Single, 3, vec![vec![0, 1, 2]]);
        let corpus = make_toy_corpus(&spec, 0).unwrap();
        let cfg = TrainConfig {
            finetune_steps: 0,
            ..quick_cfg()
        };
        let a = train(&corpus, &cfg).unwrap();
        let b = train(&corpus, &cfg.nll_only()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let spec = CorpusSpec::with_words(Preset::TwoModality, 3, vec![vec![0, 1, 2]]);
        let corpus = make_toy_corpus(&spec, 0).unwrap();
        let (a, ha) = train_with_history(&corpus, &quick_cfg()).unwrap();
        let (b, hb) = train_with_history(&corpus, &quick_cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        assert!(ha
            .pretrain
            .iter()
            .chain(&ha.finetune)
            .all(|x| x.is_finite()));
    }

    #[test]
    fn infeasible_model_rejected() {
        let spec = CorpusSpec::with_words(Preset::Single, 3, vec![vec![0, 1, 2, 1, 0]]);
        let corpus = make_toy_corpus(&spec, 0).unwrap();
        let mut model = ToyModel {
            vocab_size: 3,
            classes: [(0, LatticeLogits::zeros(3, 3))].into_iter().collect(),
        };
        assert!(matches!(
            continue_training(&mut model, &corpus, &quick_cfg()),
            Err(Error::InfeasibleConfig(_))
        ));
    }

    #[test]
    fn bad_configs_rejected() {
        let spec = CorpusSpec::with_words(Preset::Single, 3, vec![vec![0, 1, 2]]);
        let corpus = make_toy_corpus(&spec, 0).unwrap();
        for cfg in [
            TrainConfig {
                lambda: 0.5,
                ..quick_cfg()
            },
            TrainConfig {
                batch_size: 0,
                ..quick_cfg()
            },
            TrainConfig {
                n: 4,
                ..quick_cfg()
            },
        ] {
            assert!(matches!(
                train(&corpus, &cfg),
                Err(Error::InfeasibleConfig(_))
            ));
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let spec = CorpusSpec::with_words(Preset::TwoModality, 4, vec![vec![0, 1, 3]]);
        let corpus = make_toy_corpus(&spec, 0).unwrap();
        let mut buf = Vec::new();
        corpus.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"class":0,"reference":[0,1,3]}"#
        );
        let back = ToyCorpus::read_jsonl(&buf[..], Some(4)).unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn sweep_has_two_rows_per_lambda() {
        let spec = CorpusSpec::with_words(Preset::Single, 3, vec![vec![0, 1, 2]]);
        let corpus = make_toy_corpus(&spec, 0).unwrap();
        let table = lambda_sweep(&corpus, &quick_cfg(), &[2.0, 4.0]).unwrap();
        assert_eq!(table.rows.len(), 4);
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
    }
}
