//! Coreset selection for classification datasets.
//!
//! The pipeline reduces each embedding matrix with PCA, clusters every class
//! on its own with K-Medoids (choosing k by mean silhouette), and then samples
//! a coreset either uniformly at random or evenly across the intraclass
//! clusters. A k-NN evaluator compares the two on held-out data.
//!
//! ```
//! use coreselect::synthetic::{four_cluster_scenario, generate};
//! use coreselect::kmedoids::{cluster_classes, ClusterConfig};
//! use coreselect::sampler::{build_coreset, CoresetSize, CoresetSpec, SamplingMethod};
//!
//! let data = generate(&four_cluster_scenario(7, 0.05, 10.0)).unwrap();
//! let clusters = cluster_classes(&data.matrix, &ClusterConfig::default()).unwrap();
//! assert_eq!(clusters[0].k, 4);
//! let spec = CoresetSpec::new(CoresetSize::Absolute(40), SamplingMethod::Intelligent, 1);
//! let coreset = build_coreset(&data.matrix, Some(&clusters), &spec).unwrap();
//! assert_eq!(coreset.ids.len(), 40);
//! ```

pub mod data;
pub mod error;
pub mod eval;
pub mod kmedoids;
pub mod pca;
pub mod rng;
pub mod sampler;
pub mod synthetic;

pub use data::{
    load_embeddings, partition_by_class, save_embeddings, split, EmbeddingFormat, EmbeddingMatrix,
    LabeledDataset, Manifest, SampleId, SplitSpec,
};
pub use error::{Error, Result};
pub use eval::{compare, compute_metrics, ClassifierConfig, CompareConfig, ConfusionMatrix, EvalReport};
pub use kmedoids::{
    cluster_class, cluster_classes, kmedoids_fit, pairwise_distances, select_k, silhouette, ClassClustering,
    ClusterConfig, Clustering, DistanceMatrix, KSelectionResult, Metric, SilhouetteReport,
};
pub use pca::PcaModel;
pub use sampler::{
    build_coreset, intelligent_sample, random_sample, ClassAllocation, ClusterAllocation, CoresetSelection,
    CoresetSize, CoresetSpec, MultinomialModel, SamplingMethod,
};
pub use synthetic::{generate, MixtureSpec};
