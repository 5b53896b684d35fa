//! Labeled Gaussian-mixture embeddings with planted intraclass clusters.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{is_valid_label, EmbeddingMatrix, SampleId};
use crate::error::{Error, Result};
use crate::rng::UniformStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub weight: f64,
    pub center: Vec<f64>,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub count: usize,
    pub clusters: Vec<ClusterSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub dim: usize,
    pub seed: u64,
    /// Use largest-remainder cluster sizes instead of a multinomial draw.
    #[serde(default)]
    pub exact_counts: bool,
    pub classes: Vec<ClassSpec>,
}

/// Generated matrix plus the planted cluster of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub matrix: EmbeddingMatrix,
    /// `cluster_of[i]` is the planted cluster (within its class) of row `i`.
    pub cluster_of: Vec<usize>,
}

impl SyntheticData {
    pub fn ground_truth(&self, id: SampleId) -> Option<usize> {
        self.matrix
            .ids()
            .iter()
            .position(|&x| x == id)
            .map(|row| self.cluster_of[row])
    }
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Spec("dim must be at least 1".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::Spec("no classes".into()));
        }
        for class in &self.classes {
            let name = &class.name;
            if !is_valid_label(name) {
                return Err(Error::Spec(format!("invalid class name `{name}`")));
            }
            if class.clusters.is_empty() {
                return Err(Error::Spec(format!("class `{name}` has no clusters")));
            }
            if class.count < class.clusters.len() {
                return Err(Error::Spec(format!(
                    "class `{name}`: count {} smaller than {} clusters",
                    class.count,
                    class.clusters.len()
                )));
            }
            let mut total = 0.0;
            for (k, c) in class.clusters.iter().enumerate() {
                if !(c.weight > 0.0 && c.weight.is_finite()) {
                    return Err(Error::Spec(format!("class `{name}` cluster {k}: weight must be positive")));
                }
                if !(c.stddev > 0.0 && c.stddev.is_finite()) {
                    return Err(Error::Spec(format!("class `{name}` cluster {k}: stddev must be positive")));
                }
                if c.center.len() != self.dim {
                    return Err(Error::Spec(format!(
                        "class `{name}` cluster {k}: center has {} coordinates, dim is {}",
                        c.center.len(),
                        self.dim
                    )));
                }
                if c.center.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Spec(format!("class `{name}` cluster {k}: non-finite center")));
                }
                total += c.weight;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Spec(format!("class `{name}`: weights sum to {total}, not 1")));
            }
        }
        Ok(())
    }
}

/// Integer split of `total` proportional to `weights`: floors first, then the
/// leftover units by descending fractional remainder (ties: lowest index).
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| (x + 1e-9).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    let rem = |i: usize| exact[i] - counts[i] as f64;
    order.sort_by(|&a, &b| rem(b).total_cmp(&rem(a)).then(a.cmp(&b)));
    if assigned <= total {
        for &i in order.iter().take(total - assigned) {
            counts[i] += 1;
        }
    } else {
        // Only reachable through the floor slack; remove from the smallest remainders.
        let drop: Vec<usize> = order
            .iter()
            .rev()
            .copied()
            .filter(|&i| counts[i] > 0)
            .take(assigned - total)
            .collect();
        for i in drop {
            counts[i] -= 1;
        }
    }
    counts
}

/// Draws the mixture. Rows are ordered by class, then by draw order.
pub fn generate(spec: &MixtureSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut stream = UniformStream::new(spec.seed);
    let total: usize = spec.classes.iter().map(|c| c.count).sum();
    let mut values = Vec::with_capacity(total * spec.dim);
    let mut labels = Vec::with_capacity(total);
    let mut cluster_of = Vec::with_capacity(total);

    for (class_idx, class) in spec.classes.iter().enumerate() {
        let weights: Vec<f64> = class.clusters.iter().map(|c| c.weight).collect();
        let assignment: Vec<usize> = if spec.exact_counts {
            largest_remainder(&weights, class.count)
                .into_iter()
                .enumerate()
                .flat_map(|(k, n)| std::iter::repeat_n(k, n))
                .collect()
        } else {
            let cumulative: Vec<f64> = weights
                .iter()
                .scan(0.0, |acc, w| {
                    *acc += w;
                    Some(*acc)
                })
                .collect();
            (0..class.count)
                .map(|_| stream.next_categorical(&cumulative))
                .collect()
        };
        for k in assignment {
            let cluster = &class.clusters[k];
            for &c in &cluster.center {
                values.push(c + cluster.stddev * stream.next_standard_normal());
            }
            labels.push(class_idx as u32);
            cluster_of.push(k);
        }
    }

    let ids = (0..total as u64).map(SampleId).collect();
    let class_names = spec.classes.iter().map(|c| c.name.clone()).collect();
    let data = Array2::from_shape_vec((total, spec.dim), values).expect("sizes consistent");
    Ok(SyntheticData {
        matrix: EmbeddingMatrix::new(ids, labels, class_names, data)?,
        cluster_of,
    })
}

/// One class, four 2-D clusters of 80/60/40/20 points on a square of side
/// `separation`: the imbalanced-cluster scenario used throughout the tests.
pub fn four_cluster_scenario(seed: u64, stddev: f64, separation: f64) -> MixtureSpec {
    let centers = [[0.0, 0.0], [separation, 0.0], [0.0, separation], [separation, separation]];
    let weights = [0.40, 0.30, 0.20, 0.10];
    MixtureSpec {
        dim: 2,
        seed,
        exact_counts: true,
        classes: vec![ClassSpec {
            name: "lymphocyte".into(),
            count: 200,
            clusters: centers
                .iter()
                .zip(weights)
                .map(|(c, w)| ClusterSpec {
                    weight: w,
                    center: c.to_vec(),
                    stddev,
                })
                .collect(),
        }],
    }
}
