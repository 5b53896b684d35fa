use std::path::{Path, PathBuf};

use coreselect::eval::ClassifierConfig;
use coreselect::{ClassAllocation, ClusterAllocation, Metric, SamplingMethod};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Everything a pipeline run depends on. Relative paths in a config file
/// resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dataset manifest.
    pub input: PathBuf,
    pub out: PathBuf,
    pub pca_threshold: f64,
    pub k_range: [usize; 2],
    pub metric: Metric,
    pub split_fraction: f64,
    /// Seed for the split and the clustering restarts.
    pub seed: u64,
    pub fractions: Vec<f64>,
    pub methods: Vec<SamplingMethod>,
    /// Sampling seeds; one coreset per (fraction, seed, method).
    pub seeds: Vec<u64>,
    pub classifier: ClassifierConfig,
    pub cluster_allocation: ClusterAllocation,
    pub class_allocation: ClassAllocation,
    pub max_iter: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            out: PathBuf::from("coreselect-out"),
            pca_threshold: coreselect::pca::DEFAULT_THRESHOLD,
            k_range: [2, 8],
            metric: Metric::Euclidean,
            split_fraction: 0.7,
            seed: 0,
            fractions: vec![0.1, 0.25, 0.5],
            methods: vec![SamplingMethod::Random, SamplingMethod::Intelligent],
            seeds: vec![0, 1, 2],
            classifier: ClassifierConfig::default(),
            cluster_allocation: ClusterAllocation::default(),
            class_allocation: ClassAllocation::default(),
            max_iter: 100,
        }
    }
}

/// Command-line values that replace config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub pca_threshold: Option<f64>,
    pub k_range: Option<[usize; 2]>,
    pub fractions: Option<Vec<f64>>,
    pub methods: Option<Vec<SamplingMethod>>,
    pub seeds: Option<Vec<u64>>,
}

impl PipelineConfig {
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        for p in [&mut cfg.input, &mut cfg.out] {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        Self::from_json(&text, base).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply(&mut self, o: Overrides) {
        if let Some(v) = o.input {
            self.input = v;
        }
        if let Some(v) = o.out {
            self.out = v;
        }
        if let Some(v) = o.pca_threshold {
            self.pca_threshold = v;
        }
        if let Some(v) = o.k_range {
            self.k_range = v;
        }
        if let Some(v) = o.fractions {
            self.fractions = v;
        }
        if let Some(v) = o.methods {
            self.methods = v;
        }
        if let Some(v) = o.seeds {
            self.seeds = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.input.as_os_str().is_empty() {
            return fail("no input manifest given".into());
        }
        if !self.input.is_file() {
            return fail(format!("input manifest {} does not exist", self.input.display()));
        }
        if !(self.pca_threshold > 0.0 && self.pca_threshold <= 1.0) {
            return fail(format!("pca_threshold {} outside (0, 1]", self.pca_threshold));
        }
        let [lo, hi] = self.k_range;
        if lo < 2 || lo > hi {
            return fail(format!("k_range [{lo}, {hi}] must satisfy 2 <= min <= max"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return fail(format!("split_fraction {} outside (0, 1)", self.split_fraction));
        }
        if self.fractions.is_empty() || self.methods.is_empty() || self.seeds.is_empty() {
            return fail("fractions, methods and seeds must be non-empty".into());
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return fail(format!("coreset fraction {f} outside (0, 1]"));
        }
        if self.max_iter == 0 {
            return fail("max_iter must be at least 1".into());
        }
        if let ClassifierConfig::Knn { k } = self.classifier {
            if k == 0 || k % 2 == 0 {
                return fail(format!("k-NN needs an odd k, got {k}"));
            }
        }
        Ok(())
    }
}

/// Accepts `2,8`, `2-8` or `2..8`.
pub fn parse_k_range(s: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = if s.contains("..") {
        s.split("..").collect()
    } else {
        s.split([',', '-']).collect()
    };
    match parts.as_slice() {
        [a, b] => {
            let a = a.trim().parse().map_err(|_| format!("bad k range `{s}`"))?;
            let b = b.trim().parse().map_err(|_| format!("bad k range `{s}`"))?;
            Ok([a, b])
        }
        _ => Err(format!("bad k range `{s}`, expected MIN,MAX")),
    }
}
