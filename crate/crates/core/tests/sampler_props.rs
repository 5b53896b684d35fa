mod common;

use std::collections::{BTreeMap, HashSet};

use common::compositions;
use coreselect::kmedoids::{ClassClustering, ClusterConfig};
use coreselect::sampler::{
    intelligent_sample, random_sample, representation_report, ClassAllocation, ClusterAllocation, MultinomialModel,
};
use coreselect::synthetic::{four_cluster_scenario, generate, ClassSpec, ClusterSpec, MixtureSpec, SyntheticData};
use coreselect::{cluster_classes, EmbeddingMatrix};
use proptest::prelude::*;

fn planted(data: &SyntheticData) -> Vec<ClassClustering> {
    let m = &data.matrix;
    (0..m.num_classes() as u32)
        .map(|class| {
            let rows: Vec<usize> = (0..m.n()).filter(|&r| m.labels()[r] == class).collect();
            let assignment: Vec<usize> = rows.iter().map(|&r| data.cluster_of[r]).collect();
            let k = assignment.iter().max().unwrap() + 1;
            let medoids: Vec<usize> = (0..k).map(|c| assignment.iter().position(|&a| a == c).unwrap()).collect();
            ClassClustering {
                class,
                class_name: m.class_names()[class as usize].clone(),
                ids: rows.iter().map(|&r| m.ids()[r]).collect(),
                k,
                medoid_ids: medoids.iter().map(|&r| m.ids()[rows[r]]).collect(),
                medoids,
                assignment,
                silhouette: None,
                cluster_silhouette: Vec::new(),
                scores: BTreeMap::new(),
                fallback: false,
            }
        })
        .collect()
}

fn mixture(sizes: &[Vec<usize>], seed: u64) -> SyntheticData {
    let classes = sizes
        .iter()
        .enumerate()
        .map(|(c, clusters)| {
            let total: usize = clusters.iter().sum();
            ClassSpec {
                name: format!("c{c}"),
                count: total,
                clusters: clusters
                    .iter()
                    .enumerate()
                    .map(|(k, &s)| ClusterSpec {
                        weight: s as f64 / total as f64,
                        center: vec![c as f64 * 100.0, k as f64 * 10.0],
                        stddev: 0.5,
                    })
                    .collect(),
            }
        })
        .collect();
    generate(&MixtureSpec { dim: 2, seed, exact_counts: true, classes }).unwrap()
}

#[test]
fn pmf_sums_to_one_exhaustively() {
    let model = MultinomialModel::new(vec![0.5, 0.3, 0.2], 4).unwrap();
    let all = compositions(4, 3);
    assert_eq!(all.len(), 15);
    let total: f64 = all.iter().map(|c| model.pmf(c).unwrap()).sum();
    assert!((total - 1.0).abs() <= 1e-12);
}

fn check_selection(m: &EmbeddingMatrix, ids: &[coreselect::SampleId], n: usize) {
    assert_eq!(ids.len(), n);
    let unique: HashSet<_> = ids.iter().collect();
    assert_eq!(unique.len(), n);
    let source: HashSet<_> = m.ids().iter().collect();
    assert!(ids.iter().all(|id| source.contains(id)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn samplers_return_exactly_n_unique_source_ids(
        sizes in proptest::collection::vec(proptest::collection::vec(1usize..30, 1..5), 1..4),
        frac in 0.01f64..=1.0,
        seed in any::<u64>(),
        equal_classes in any::<bool>(),
        floor_clusters in any::<bool>(),
    ) {
        let data = mixture(&sizes, seed);
        let m = &data.matrix;
        let cs = planted(&data);
        let n = ((frac * m.n() as f64).round() as usize).clamp(1, m.n());
        let class_alloc = if equal_classes { ClassAllocation::Equal } else { ClassAllocation::Proportional };
        let cluster_alloc = if floor_clusters { ClusterAllocation::ProportionalFloor } else { ClusterAllocation::Equal };
        let is = intelligent_sample(m, &cs, n, cluster_alloc, class_alloc, seed).unwrap();
        check_selection(m, &is.ids, n);
        prop_assert_eq!(is.per_cluster.iter().map(|c| c.count).sum::<usize>(), n);
        prop_assert_eq!(&is, &intelligent_sample(m, &cs, n, cluster_alloc, class_alloc, seed).unwrap());
        let rs = random_sample(m, n, seed).unwrap();
        check_selection(m, &rs.ids, n);
        prop_assert_eq!(&rs, &random_sample(m, n, seed).unwrap());
    }

    #[test]
    fn equal_allocation_is_balanced_up_to_capacity(
        clusters in proptest::collection::vec(1usize..40, 2..6),
        seed in any::<u64>(),
        frac in 0.05f64..=1.0,
    ) {
        let data = mixture(std::slice::from_ref(&clusters), seed);
        let cs = planted(&data);
        let n = ((frac * data.matrix.n() as f64).round() as usize).clamp(1, data.matrix.n());
        let sel = intelligent_sample(&data.matrix, &cs, n, ClusterAllocation::Equal, ClassAllocation::Proportional, seed).unwrap();
        let counts: Vec<usize> = sel.per_cluster.iter().map(|c| c.count).collect();
        let uncapped: Vec<usize> = counts.iter().zip(&clusters).filter(|(c, s)| c < s).map(|(c, _)| *c).collect();
        if let (Some(lo), Some(hi)) = (uncapped.iter().min(), uncapped.iter().max()) {
            prop_assert!(hi - lo <= 1, "{:?} of {:?}", counts, clusters);
            // A capped cluster never holds more than an uncapped one.
            for (c, s) in counts.iter().zip(&clusters) {
                if c == s {
                    prop_assert!(c <= hi);
                }
            }
        }
    }
}

#[test]
fn intelligent_lifts_the_rarest_cluster() {
    // Every instance has a cluster holding < 1/k of its class.
    for (sizes, n) in [(vec![80, 60, 40, 20], 40), (vec![100, 10, 5], 30), (vec![50, 30, 15, 4, 1], 25)] {
        let data = mixture(std::slice::from_ref(&sizes), 3);
        let cs = planted(&data);
        let sel = intelligent_sample(&data.matrix, &cs, n, ClusterAllocation::Equal, ClassAllocation::Proportional, 1).unwrap();
        let report = representation_report(&sel, &cs).unwrap();
        let is_min = report.iter().map(|r| r.selected as f64).fold(f64::INFINITY, f64::min);
        let rs_min = report.iter().map(|r| r.rs_expected).fold(f64::INFINITY, f64::min);
        assert!(is_min >= rs_min, "{sizes:?}: {is_min} < {rs_min}");
        let smallest = report.iter().min_by_key(|r| r.source_size).unwrap();
        assert!(smallest.rate >= smallest.rs_expected / smallest.source_size as f64);
    }
}

#[test]
fn kmedoids_clusterings_drive_equal_allocation() {
    let data = generate(&four_cluster_scenario(8, 0.1, 10.0)).unwrap();
    let cs = cluster_classes(&data.matrix, &ClusterConfig::default()).unwrap();
    let sel = intelligent_sample(&data.matrix, &cs, 40, ClusterAllocation::Equal, ClassAllocation::Proportional, 2).unwrap();
    let counts: Vec<usize> = sel.per_cluster.iter().map(|c| c.count).collect();
    assert_eq!(counts, vec![10, 10, 10, 10]);
}
