//! Two-modality preset: each class has a word and its reversal. Compares an
//! NLL-only model with an NLL then FA model trained for the same number of
//! steps.

use fadag::train::{eval_report, train, CorpusSpec, Preset, Report, TrainConfig};
use fadag::{make_toy_corpus, Strategy};

fn summarize(name: &str, report: &Report) {
    let (path, tokens, marginal) = report.mean_neg_logs(Strategy::Lookahead);
    println!(
        "{name:>7}: -log P(a|x) {path:.4}  -log P(y|a,x) {tokens:.4}  -log P(y|x) {marginal:.4}  confidence {:.4}",
        report.mean_confidence()
    );
    for c in &report.classes {
        let decoded = c
            .outcomes
            .iter()
            .find(|o| o.strategy == Strategy::Lookahead)
            .map(|o| o.tokens.clone())
            .unwrap_or_default();
        println!(
            "         class {} decodes {decoded:?}; reference probabilities {:.4?}",
            c.class, c.variant_probs
        );
    }
}

fn main() -> fadag::Result<()> {
    let spec = CorpusSpec {
        preset: Preset::TwoModality,
        num_classes: 1,
        length: 5,
        vocab_size: 4,
        words: None,
    };
    let corpus = make_toy_corpus(&spec, 0)?;
    for (class, refs) in corpus.variants() {
        let refs: Vec<_> = refs.iter().map(|r| r.tokens().to_vec()).collect();
        println!("class {class}: {refs:?}");
    }
    let cfg = TrainConfig::default();
    for (name, run) in [("nll", cfg.nll_only()), ("nll+fa", cfg.clone())] {
        let model = train(&corpus, &run)?;
        summarize(name, &eval_report(&model, &corpus, &run)?);
    }
    Ok(())
}
