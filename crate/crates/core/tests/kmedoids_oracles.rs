mod common;

use common::{brute_force_two_medoids, naive_silhouette, random_matrix, rows, single_class, TestRng};
use coreselect::kmedoids::{cluster_class, kmedoids_fit, pairwise_distances, select_k, silhouette, ClusterConfig, Metric};
use coreselect::synthetic::{four_cluster_scenario, generate};
use proptest::prelude::*;

#[test]
fn triangle_inequality_exhaustive() {
    let mut rng = TestRng::new(10);
    let m = single_class(random_matrix(&mut rng, 20, 3));
    for metric in [Metric::Euclidean, Metric::Manhattan] {
        let d = pairwise_distances(&m, metric).unwrap();
        for i in 0..20 {
            assert_eq!(d.get(i, i), 0.0);
            for j in 0..20 {
                assert_eq!(d.get(i, j), d.get(j, i));
                for k in 0..20 {
                    assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-12);
                }
            }
        }
    }
}

#[test]
fn pam_matches_brute_force_on_small_instances() {
    let mut rng = TestRng::new(11);
    let mut exact = 0;
    for _ in 0..200 {
        let n = 3 + rng.below(6);
        let data = random_matrix(&mut rng, n, 2);
        let d = pairwise_distances(&single_class(data.clone()), Metric::Euclidean).unwrap();
        let c = kmedoids_fit(&d, 2, 0, 100).unwrap();
        let best = brute_force_two_medoids(&rows(&data));
        assert!(c.total_deviation <= best * 1.05 + 1e-12, "n={n} got {} best {} medoids {:?} hist {:?} data {:?}", c.total_deviation, best, c.medoids, c.deviation_history, data);
        if (c.total_deviation - best).abs() <= 1e-9 * best.max(1.0) {
            exact += 1;
        }
    }
    assert!(exact >= 190, "exact optimum on {exact}/200");
}

#[test]
fn deviation_never_increases_and_partition_holds() {
    let mut rng = TestRng::new(12);
    for _ in 0..30 {
        let n = 10 + rng.below(40);
        let m = single_class(random_matrix(&mut rng, n, 3));
        let d = pairwise_distances(&m, Metric::Euclidean).unwrap();
        let k = 2 + rng.below(5);
        let c = kmedoids_fit(&d, k, 0, 100).unwrap();
        assert!(c.deviation_history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(c.assignment.len(), n);
        for (cl, &med) in c.medoids.iter().enumerate() {
            assert_eq!(c.assignment[med], cl);
        }
        for (j, &cl) in c.assignment.iter().enumerate() {
            let own = d.get(c.medoids[cl], j);
            for (other, &med) in c.medoids.iter().enumerate() {
                let dist = d.get(med, j);
                assert!(own < dist || (own == dist && (cl <= other || j == c.medoids[cl])));
            }
        }
        assert_eq!(c, kmedoids_fit(&d, k, 0, 100).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn silhouette_equals_naive_transcription(seed in any::<u64>(), n in 4usize..=50, k in 2usize..=5) {
        let mut rng = TestRng::new(seed);
        let data = random_matrix(&mut rng, n, 3);
        let mut labels: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.below(k) }).collect();
        labels.rotate_left(rng.below(n));
        let d = pairwise_distances(&single_class(data.clone()), Metric::Euclidean).unwrap();
        let got = silhouette(&d, &labels).unwrap();
        let want = naive_silhouette(&rows(&data), &labels);
        for (g, w) in got.per_point.iter().zip(&want) {
            prop_assert!((g - w).abs() <= 1e-12, "{} vs {}", g, w);
            prop_assert!((-1.0..=1.0).contains(g));
        }
    }
}

#[test]
fn recovers_four_planted_clusters() {
    let data = generate(&four_cluster_scenario(21, 0.05, 1.0)).unwrap();
    let d = pairwise_distances(&data.matrix, Metric::Euclidean).unwrap();
    let r = select_k(&d, 2, 8, 0, 100).unwrap();
    assert_eq!(r.chosen_k, 4);
    assert_eq!(r.clusterings.len(), 7);
    let mut sizes = r.chosen().cluster_sizes();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![20, 40, 60, 80]);
}

#[test]
fn class_clustering_medoids_sit_in_planted_clusters() {
    let data = generate(&four_cluster_scenario(22, 0.1, 10.0)).unwrap();
    let out = cluster_class(&data.matrix, &ClusterConfig::default()).unwrap();
    let cc = out.clustering;
    assert_eq!(cc.k, 4);
    assert_eq!(cc.cluster_sizes().iter().sum::<usize>(), 200);
    let planted: std::collections::BTreeSet<usize> =
        cc.medoid_ids.iter().map(|&id| data.ground_truth(id).unwrap()).collect();
    assert_eq!(planted.len(), 4);
    // Every member shares its medoid's planted cluster.
    for (row, &c) in cc.assignment.iter().enumerate() {
        assert_eq!(data.cluster_of[row], data.ground_truth(cc.medoid_ids[c]).unwrap());
    }
    cc.validate().unwrap();
}
