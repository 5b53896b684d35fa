//! Fixtures shared by the criterion benches.

use coreselect::synthetic::{generate, ClassSpec, ClusterSpec, MixtureSpec, SyntheticData};

/// `classes` classes of `per_class` rows in `dim` dimensions, each class a
/// mixture of four clusters with weights 0.4/0.3/0.2/0.1.
pub fn mixture(classes: usize, per_class: usize, dim: usize, seed: u64) -> SyntheticData {
    let spec = MixtureSpec {
        dim,
        seed,
        exact_counts: true,
        classes: (0..classes)
            .map(|c| ClassSpec {
                name: format!("c{c}"),
                count: per_class,
                clusters: [0.4, 0.3, 0.2, 0.1]
                    .iter()
                    .enumerate()
                    .map(|(k, &weight)| ClusterSpec {
                        weight,
                        center: (0..dim).map(|j| if j == (c * 4 + k) % dim { 10.0 } else { c as f64 }).collect(),
                        stddev: 1.0,
                    })
                    .collect(),
            })
            .collect(),
    };
    generate(&spec).expect("fixture spec is valid")
}
