//! Trains the `single` preset (one class, length 5, V = 4) and prints the
//! evaluation report.

use fadag::train::{eval_report, train_with_history, CorpusSpec, Preset, TrainConfig};
use fadag::{make_toy_corpus, Strategy};

fn main() -> fadag::Result<()> {
    let spec = CorpusSpec {
        preset: Preset::Single,
        num_classes: 1,
        length: 5,
        vocab_size: 4,
        words: None,
    };
    let corpus = make_toy_corpus(&spec, 7)?;
    let cfg = TrainConfig::default();
    let start = std::time::Instant::now();
    let (model, history) = train_with_history(&corpus, &cfg)?;
    let report = eval_report(&model, &corpus, &cfg)?;
    println!("reference: {:?}", corpus.samples[0].reference.tokens());
    println!(
        "nll after pretraining: {:.4}, FA loss after finetuning: {:.4}",
        history.pretrain.last().copied().unwrap_or(f64::NAN),
        history.finetune.last().copied().unwrap_or(f64::NAN)
    );
    for c in &report.classes {
        for o in &c.outcomes {
            println!(
                "{:>9}: {:?} exact={} -log P(a|x)={:.4} -log P(y|a,x)={:.4} -log P(y|x)={:.4}",
                o.strategy,
                o.tokens,
                o.exact_match,
                o.neg_log_path,
                o.neg_log_tokens_given_path,
                o.neg_log_marginal
            );
        }
        println!("confidence {:.4}, FA loss {:.4}", c.confidence, c.fa_loss);
    }
    println!(
        "lookahead exact match {:.0}% in {:.2?}",
        100.0 * report.exact_match_rate(Strategy::Lookahead),
        start.elapsed()
    );
    Ok(())
}
