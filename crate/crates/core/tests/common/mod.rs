//! Independent reference computations used by the integration suites.
//! Nothing here calls into the code paths it is used to check.
#![allow(dead_code)]

use coreselect::{EmbeddingMatrix, SampleId};
use ndarray::Array2;
use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

/// Small seeded generator for test inputs, separate from the library's stream.
pub struct TestRng(SplitMix64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(SplitMix64::seed_from_u64(seed))
    }

    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }
}

pub fn single_class(data: Array2<f64>) -> EmbeddingMatrix {
    let n = data.nrows();
    EmbeddingMatrix::new((0..n as u64).map(SampleId).collect(), vec![0; n], vec!["a".into()], data).unwrap()
}

pub fn random_matrix(rng: &mut TestRng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.range(-5.0, 5.0))
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn rows(data: &Array2<f64>) -> Vec<Vec<f64>> {
    data.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Direct transcription of the silhouette definitions:
/// a_i = sum_{j in C_I, j != i} d_ij / (|C_I| - 1),
/// b_i = min_{J != I} sum_{j in C_J} d_ij / |C_J|,
/// s_i = (b_i - a_i) / max(a_i, b_i); singletons and a_i = b_i = 0 give 0.
pub fn naive_silhouette(points: &[Vec<f64>], labels: &[usize]) -> Vec<f64> {
    let k = labels.iter().max().unwrap() + 1;
    (0..points.len())
        .map(|i| {
            let own = labels[i];
            let own_size = labels.iter().filter(|&&l| l == own).count();
            if own_size == 1 {
                return 0.0;
            }
            let mut a = 0.0;
            for j in 0..points.len() {
                if j != i && labels[j] == own {
                    a += euclid(&points[i], &points[j]);
                }
            }
            a /= (own_size - 1) as f64;
            let mut b = f64::INFINITY;
            for c in (0..k).filter(|&c| c != own) {
                let members: Vec<usize> = (0..points.len()).filter(|&j| labels[j] == c).collect();
                let mean = members.iter().map(|&j| euclid(&points[i], &points[j])).sum::<f64>() / members.len() as f64;
                b = b.min(mean);
            }
            if a.max(b) == 0.0 {
                0.0
            } else {
                (b - a) / a.max(b)
            }
        })
        .collect()
}

/// Exhaustive optimum of the 2-medoid objective.
pub fn brute_force_two_medoids(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    for a in 0..n {
        for b in a + 1..n {
            let cost: f64 = points
                .iter()
                .map(|p| euclid(p, &points[a]).min(euclid(p, &points[b])))
                .sum();
            best = best.min(cost);
        }
    }
    best
}

/// All vectors of `k` non-negative integers summing to `total`.
pub fn compositions(total: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 1 {
        return vec![vec![total]];
    }
    (0..=total)
        .flat_map(|first| {
            compositions(total - first, k - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

/// Sort every training row by distance and vote among the first k
/// (distance ties: smaller class first; vote ties: smaller class).
pub fn naive_knn(train: &[Vec<f64>], labels: &[u32], query: &[f64], k: usize, classes: usize) -> u32 {
    let mut order: Vec<(f64, u32)> = train.iter().zip(labels).map(|(t, &l)| (euclid(t, query), l)).collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes = vec![0; classes];
    for &(_, l) in &order[..k] {
        votes[l as usize] += 1;
    }
    let max = *votes.iter().max().unwrap();
    votes.iter().position(|&v| v == max).unwrap() as u32
}

/// Upper tail P(X >= wins) for X ~ Binomial(n, 1/2).
pub fn sign_test_p(wins: usize, n: usize) -> f64 {
    let mut p = 0.0;
    for x in wins..=n {
        let mut c = 1.0f64;
        for i in 0..x {
            c *= (n - i) as f64 / (i + 1) as f64;
        }
        p += c * 0.5f64.powi(n as i32);
    }
    p
}
