//! Compares every dynamic program against brute-force enumeration on a batch
//! of random lattices.

use fadag::cli::{oracle_check, ORACLE_TOLERANCE};
use fadag::{random_lattice, Lattice, Reference};

fn main() -> fadag::Result<()> {
    let mut worst: Vec<(String, f64)> = Vec::new();
    for seed in 0..25u64 {
        let l = 3 + (seed % 5) as usize;
        let lat = Lattice::from_logits(&random_lattice(seed, l, 3)?)?;
        let y = Reference::new((0..l.min(4)).map(|k| (k + seed as usize) % 3).collect())?;
        for n in 1..=2 {
            for (name, dev) in oracle_check(&lat, Some(&y), n)? {
                match worst.iter_mut().find(|(w, _)| *w == name) {
                    Some(slot) => slot.1 = slot.1.max(dev),
                    None => worst.push((name, dev)),
                }
            }
        }
    }
    for (name, dev) in &worst {
        let verdict = if *dev <= ORACLE_TOLERANCE {
            "ok"
        } else {
            "MISMATCH"
        };
        println!("{name:<24} max deviation {dev:.2e} {verdict}");
    }
    Ok(())
}
