//! Expected n-gram statistics and the fuzzy alignment loss, on a small
//! branching lattice and on a large random one.

use std::time::Instant;

use fadag::fixtures::b4;
use fadag::fuzzy::{
    brevity_penalty, clipped_precision, expected_gram_count, expected_total_ngrams,
    fuzzy_precision, ngram_table,
};
use fadag::{fa_loss, random_lattice, Lattice, Reference};

fn main() -> fadag::Result<()> {
    // Vertex 1 branches to 2 or 3 with probability 1/2; both rejoin at 4.
    // Emissions are deterministic: 0, 1, 2, 1.
    let lat = b4();
    let y = Reference::parse("0,1,1")?;
    for n in 1..=3 {
        println!("E[#{n}-grams] = {:.4}", expected_total_ngrams(&lat, n)?);
    }
    for (gram, count) in &ngram_table(&y, 2)?.entries {
        println!(
            "gram {gram:?}: reference count {count}, expected count {:.4}",
            expected_gram_count(&lat, gram)?
        );
    }
    let p = fuzzy_precision(&lat, &y, 2)?;
    println!(
        "bigram precision {:.4} = {:.4} / {:.4}, BP {:.4}",
        p.precision,
        p.numerator,
        p.denominator,
        brevity_penalty(&lat, &y)?
    );
    println!("report: {:?}", fa_loss(&lat, &y, 2)?);

    // On a single sequence the fuzzy precision is the usual clipped precision.
    println!(
        "clipped bigram precision of [0,1,2,1] vs [0,1,1]: {:.4}",
        clipped_precision(&[0, 1, 2, 1], y.tokens(), 2)?
    );

    // The matrix recurrence stays fast on a large graph.
    let big = Lattice::from_logits(&random_lattice(3, 256, 16)?)?;
    let y = Reference::new((0..40).map(|t| t % 16).collect())?;
    let start = Instant::now();
    let r = fa_loss(&big, &y, 2)?;
    println!(
        "L=256: loss {:.6} (E[T] = {:.2}) in {:.2?}",
        r.loss,
        r.expected_length,
        start.elapsed()
    );
    Ok(())
}
