//! Builds a lattice from logits, checks its invariants and computes passing
//! probabilities and the expected output length.

use fadag::pathdp::expected_length;
use fadag::{passing_probabilities, random_lattice, Lattice, LatticeLogits, Matrix};

fn main() -> fadag::Result<()> {
    // Hand-written logits: entries on or below the diagonal are masked out.
    let transitions = Matrix::from_rows(vec![
        vec![0.0, 1.0, 0.0, -2.0],
        vec![0.0, 0.0, 0.5, 0.5],
        vec![0.0, 0.0, 0.0, 3.0],
        vec![0.0, 0.0, 0.0, 0.0],
    ])
    .map_err(fadag::Error::InvalidSize)?;
    let emissions = Matrix::from_rows(vec![
        vec![2.0, 0.0, 0.0],
        vec![0.0, 2.0, 0.0],
        vec![0.0, 0.0, 2.0],
        vec![1.0, 1.0, 0.0],
    ])
    .map_err(fadag::Error::InvalidSize)?;
    let logits = LatticeLogits::new(transitions, emissions)?;
    let lat = Lattice::from_logits(&logits)?;

    println!("transition probabilities:");
    for i in 1..=lat.num_vertices() {
        let row: Vec<String> = (1..=lat.num_vertices())
            .map(|j| format!("{:.4}", lat.transition(i, j)))
            .collect();
        println!("  {}", row.join("  "));
    }
    println!("validation: {}", lat.validate());
    let p = passing_probabilities(&lat)?;
    println!("passing probabilities: {:.4?}", p.as_slice());
    println!("expected length: {:.4}", expected_length(&lat)?);

    // A matrix that breaks the invariants is reported entry by entry.
    let bad = Lattice::from_rows(
        vec![vec![0.0, 0.9], vec![0.2, 0.0]],
        vec![vec![1.0], vec![1.0]],
    )?;
    println!("broken lattice:\n{}", bad.validate());

    // Random logits are reproducible from the seed and round-trip through JSON.
    let random = random_lattice(42, 6, 3)?;
    let path = std::env::temp_dir().join("fadag_lattice_basics.json");
    random.save(&path)?;
    let back = LatticeLogits::load(&path)?;
    assert_eq!(random, back);
    println!(
        "random L=6 lattice saved to {} and reloaded; expected length {:.4}",
        path.display(),
        expected_length(&Lattice::from_logits(&back)?)?
    );
    Ok(())
}
