use fadag::fixtures::{b4, b4_logits};
use fadag::fuzzy::{expected_gram_count, expected_total_ngrams};
use fadag::grad::{nll_loss_grad, path_nll_grad};
use fadag::oracle::{oracle_aligned_paths, oracle_marginal_prob, oracle_passing_prob};
use fadag::pathdp::path_posterior;
use fadag::{
    decode, marginal_nll, passing_probabilities, random_lattice, Lattice, Path, Reference,
    Strategy as DecodeStrategy,
};
use proptest::prelude::*;

fn lattice_params() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 2usize..=6, 2usize..=4)
}

fn reference_for(l: usize, v: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..v, 2..=l)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_ignores_row_shifts((seed, l, v) in lattice_params(), shift in -50.0f64..50.0) {
        let params = random_lattice(seed, l, v).unwrap();
        let mut shifted = params.clone();
        for k in 0..shifted.num_params() {
            *shifted.param_mut(k) += shift;
        }
        let a = Lattice::from_logits(&params).unwrap();
        let b = Lattice::from_logits(&shifted).unwrap();
        prop_assert!(a.transition_matrix().max_abs_diff(b.transition_matrix()) < 1e-12);
        prop_assert!(a.emission_matrix().max_abs_diff(b.emission_matrix()) < 1e-12);
    }

    #[test]
    fn logits_always_give_a_valid_lattice((seed, l, v) in lattice_params()) {
        let lat = Lattice::from_logits(&random_lattice(seed, l, v).unwrap()).unwrap();
        prop_assert!(lat.validate().is_valid());
    }

    #[test]
    fn passing_probabilities_match_enumeration((seed, l, v) in lattice_params()) {
        let lat = Lattice::from_logits(&random_lattice(seed, l, v).unwrap()).unwrap();
        let p = passing_probabilities(&lat).unwrap();
        let oracle = oracle_passing_prob(&lat).unwrap();
        prop_assert_eq!(p.get(1), 1.0);
        prop_assert!((p.get(l) - 1.0).abs() < 1e-12);
        for u in 1..=l {
            prop_assert!((p.get(u) - oracle.get(u)).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_counts_are_complete((seed, l, v) in lattice_params()) {
        let lat = Lattice::from_logits(&random_lattice(seed, l, v).unwrap()).unwrap();
        let sum: f64 = (0..v)
            .flat_map(|a| (0..v).map(move |b| vec![a, b]))
            .map(|g| expected_gram_count(&lat, &g).unwrap())
            .sum();
        prop_assert!((sum - expected_total_ngrams(&lat, 2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn posteriors_sum_to_one(
        ((seed, l, v), tokens) in lattice_params()
            .prop_flat_map(|(s, l, v)| (Just((s, l, v)), reference_for(l, v)))
    ) {
        let lat = Lattice::from_logits(&random_lattice(seed, l, v).unwrap()).unwrap();
        let y = Reference::new(tokens).unwrap();
        let marginal = (-marginal_nll(&lat, &y).unwrap()).exp();
        prop_assert!((marginal - oracle_marginal_prob(&lat, &y).unwrap()).abs() < 1e-12);
        let total: f64 = oracle_aligned_paths(&lat, &y)
            .unwrap()
            .iter()
            .map(|(a, _)| path_posterior(&lat, &y, a).unwrap())
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn decoding_is_deterministic((seed, l, v) in lattice_params()) {
        let lat = Lattice::from_logits(&random_lattice(seed, l, v).unwrap()).unwrap();
        for s in DecodeStrategy::ALL {
            prop_assert_eq!(decode(&lat, s).unwrap(), decode(&lat, s).unwrap());
        }
    }
}

#[test]
fn b4_gradient_splits_over_two_alignments() {
    let params = b4_logits();
    let lat = b4();
    let y = Reference::new(vec![0, 1, 1]).unwrap();
    let paths = oracle_aligned_paths(&lat, &y).unwrap();
    let vertices: Vec<&[usize]> = paths.iter().map(|(a, _)| a.vertices()).collect();
    assert_eq!(vertices, [&[1, 2, 4][..], &[1, 3, 4][..]]);

    let full = nll_loss_grad(&params, &y).unwrap();
    let mut weighted = vec![0.0; full.len()];
    // Vertex 3 emits token 2, so only the upper branch explains y.
    let expected = [1.0, 0.0];
    for ((a, _), e) in paths.iter().zip(expected) {
        let w = path_posterior(&lat, &y, a).unwrap();
        assert!((w - e).abs() < 1e-12);
        let g = path_nll_grad(&params, &y, a).unwrap();
        for (k, slot) in weighted.iter_mut().enumerate() {
            *slot += w * g.component(k);
        }
    }
    for (k, w) in weighted.iter().enumerate() {
        assert!((w - full.component(k)).abs() < 1e-12, "component {k}");
    }
}

#[test]
fn unaligned_path_is_rejected() {
    let params = b4_logits();
    let y = Reference::new(vec![0, 1, 1]).unwrap();
    let too_long = Path::new(vec![1, 2, 3, 4]).unwrap();
    assert!(path_nll_grad(&params, &y, &too_long).is_err());
}
