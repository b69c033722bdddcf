mod common;

use common::*;
use proptest::prelude::*;

fn labels(max_n: usize, max_k: usize) -> impl Strategy<Value = Vec<usize>> {
    (1..=max_n).prop_flat_map(move |n| prop::collection::vec(0..max_k, n))
}

fn label_pair(max_n: usize, max_k: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    (1..=max_n).prop_flat_map(move |n| {
        (prop::collection::vec(0..max_k, n), prop::collection::vec(0..max_k, n))
    })
}

/// Allocation draws over `c` effects with components `0..=l`.
fn draws() -> impl Strategy<Value = (Vec<Vec<u32>>, usize)> {
    (1usize..8, 1usize..5).prop_flat_map(|(c, l)| {
        (prop::collection::vec(prop::collection::vec(0..=l as u32, c), 1..30), Just(l))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn adjusted_rand_identities((a, b) in label_pair(12, 4)) {
        prop_assert_eq!(ari_identities(&a, &b), Ok(()));
    }

    #[test]
    fn pair_counts_are_conserved((a, b) in label_pair(15, 5)) {
        prop_assert_eq!(pair_conservation(&a, &b), Ok(()));
    }

    #[test]
    fn silhouette_is_bounded(
        assignment in (2usize..9).prop_flat_map(|n| prop::collection::vec(0usize..4, n)),
        noise in prop::collection::vec(0.0f64..1.0, 36),
    ) {
        let n = assignment.len();
        let d = dissimilarity_from_upper(n, &noise[..n * (n - 1) / 2]);
        prop_assert_eq!(silhouette_bounds(&d, &assignment), Ok(()));
    }

    #[test]
    fn pam_finds_the_optimum_on_separated_instances(
        groups in labels(8, 4),
        noise in prop::collection::vec(0.0f64..1.0, 1..28),
    ) {
        let d = separated_instance(&groups, &noise);
        let k = groups.iter().collect::<std::collections::HashSet<_>>().len();
        prop_assert_eq!(pam_matches_brute_force(&d, k), Ok(()));
    }

    #[test]
    fn pam_never_ends_above_build(
        n in 2usize..9,
        noise in prop::collection::vec(0.0f64..1.0, 28),
        k_frac in 0.0f64..1.0,
    ) {
        let d = dissimilarity_from_upper(n, &noise[..n * (n - 1) / 2]);
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let fit = effectfuse::partition::pam(&d, k).unwrap();
        prop_assert!(fit.cost <= fit.build_cost + 1e-12);
        prop_assert!(fit.cost >= brute_force_cost(&d, k) - 1e-9);
    }

    #[test]
    fn cocluster_matrix_shape((d, _) in draws()) {
        prop_assert_eq!(cocluster_shape(&d), Ok(()));
    }

    #[test]
    fn partitions_ignore_component_labels(
        (d, l) in draws(),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut perm: Vec<u32> = (1..=l as u32).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(relabeling_invariance(&d, &perm), Ok(()));
    }
}
