//! Graph-size sweep: NLL-only against NLL then FA, for several upsampling
//! factors, printed as CSV.

use fadag::make_toy_corpus;
use fadag::train::{lambda_sweep, CorpusSpec, Preset, TrainConfig};

fn main() -> fadag::Result<()> {
    let spec = CorpusSpec {
        preset: Preset::TwoModality,
        num_classes: 2,
        length: 5,
        vocab_size: 4,
        words: None,
    };
    let corpus = make_toy_corpus(&spec, 0)?;
    let cfg = TrainConfig {
        pretrain_steps: 1000,
        finetune_steps: 300,
        ..TrainConfig::default()
    };
    let table = lambda_sweep(&corpus, &cfg, &[2.0, 4.0, 6.0, 8.0])?;
    table.write_csv(std::io::stdout().lock())?;
    Ok(())
}
