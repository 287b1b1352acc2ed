//! Marginal likelihood of a reference, path posteriors, and the most probable
//! alignment used for glancing.

use fadag::fixtures::b4;
use fadag::oracle::oracle_aligned_paths;
use fadag::pathdp::{best_path_given_reference, log_joint, path_posterior};
use fadag::{marginal_nll, random_lattice, Lattice, Reference};

fn main() -> fadag::Result<()> {
    let lat = b4();
    for r in ["0,1,1", "0,2,1", "0,1", "0,0,1"] {
        let y = Reference::parse(r)?;
        match marginal_nll(&lat, &y) {
            Ok(nll) => println!("-log P({r}) = {nll:.6}"),
            Err(e) => println!("-log P({r}): {e}"),
        }
    }

    let lat = Lattice::from_logits(&random_lattice(5, 7, 3)?)?;
    let y = Reference::parse("0,2,1,1")?;
    println!("\nrandom L=7 lattice, reference {:?}", y.tokens());
    println!("-log P(y|x) = {:.6}", marginal_nll(&lat, &y)?);
    let mut total = 0.0;
    for (path, _) in oracle_aligned_paths(&lat, &y)? {
        let post = path_posterior(&lat, &y, &path)?;
        total += post;
        println!(
            "  P({path} | y) = {post:.5}  log P(y,a) = {:.4}",
            log_joint(&lat, &y, &path)
        );
    }
    println!("posteriors sum to {total:.12}");
    let (best, score) = best_path_given_reference(&lat, &y)?;
    println!("argmax alignment {best} with log P(y,a) = {score:.4}");
    Ok(())
}
