//! Greedy, lookahead and joint-Viterbi decoding with the per-decode
//! statistics and vertex scatter CSVs.

use fadag::decode::{decode_stats, Strategy};
use fadag::fixtures::{b4, chain};
use fadag::{decode, random_lattice, Lattice};

fn show(name: &str, lat: &Lattice) -> fadag::Result<()> {
    println!("{name}:");
    for s in Strategy::ALL {
        let d = decode(lat, s)?;
        println!(
            "  {s:>9}: tokens {:?} path {} log P(a) {:.4} log P(y|a) {:.4} log P(y) {:.4}",
            d.tokens, d.path, d.log_path_prob, d.log_tokens_given_path, d.log_marginal
        );
    }
    Ok(())
}

fn main() -> fadag::Result<()> {
    show("deterministic chain", &chain(&[2, 0, 1, 1], 3))?;
    show("branching B4 (ties broken toward smaller vertices)", &b4())?;
    let lat = Lattice::from_logits(&random_lattice(11, 8, 4)?)?;
    show("random L=8", &lat)?;

    let d = decode(&lat, Strategy::Viterbi)?;
    let stats = decode_stats(&lat, &d);
    let mut out = std::io::stdout().lock();
    stats.write_summary_csv(&mut out)?;
    stats.write_vertices_csv(&mut out)?;
    println!("confidence summary: {:.4}", stats.confidence());
    Ok(())
}
