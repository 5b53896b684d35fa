//! Intraclass K-Medoids (PAM) clustering with silhouette-based choice of k.
//!
//! PAM here is BUILD seeding followed by SWAP rounds. Each round evaluates every
//! (medoid, non-medoid) exchange and applies the single best strictly-improving
//! one, so one round costs O(k n^2). Ties anywhere resolve to the lowest index.
//!
//! Single swaps can stall in a local optimum (four points where the optimal
//! pair shares no medoid with the BUILD pair is enough). The SWAP phase is
//! therefore also run from a few seeded random starts and the best result kept;
//! the seed only matters through those starts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{partition_by_class, EmbeddingMatrix, SampleId};
use crate::error::{Error, Result};
use crate::rng::UniformStream;

/// Random restarts run by [`kmedoids_fit`] in addition to the BUILD start.
pub const DEFAULT_RESTARTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
}

impl Metric {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Self::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Self::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Self::Euclidean),
            "manhattan" => Ok(Self::Manhattan),
            other => Err(Error::Parameter(format!("unknown metric `{other}`"))),
        }
    }
}

/// Dense symmetric dissimilarity matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    values: Vec<f64>,
    metric: Metric,
}

impl DistanceMatrix {
    /// Wraps a row-major n x n matrix after checking symmetry, diagonal and sign.
    pub fn from_values(n: usize, values: Vec<f64>, metric: Metric) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Shape(format!("{} values for a {n}x{n} matrix", values.len())));
        }
        for i in 0..n {
            if values[i * n + i] != 0.0 {
                return Err(Error::InvalidData(format!("non-zero diagonal at {i}")));
            }
            for j in 0..n {
                let v = values[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidData(format!("invalid distance {v} at ({i}, {j})")));
                }
                if v != values[j * n + i] {
                    return Err(Error::InvalidData(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, values, metric })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }
}

pub fn pairwise_distances(m: &EmbeddingMatrix, metric: Metric) -> Result<DistanceMatrix> {
    let n = m.n();
    if n < 2 {
        return Err(Error::Parameter(format!("need at least 2 points for distances, got {n}")));
    }
    let rows: Vec<Vec<f64>> = m.data().rows().into_iter().map(|r| r.to_vec()).collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = metric.distance(&rows[i], &rows[j]);
            values[i * n + j] = d;
            values[j * n + i] = d;
        }
    }
    Ok(DistanceMatrix { n, values, metric })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    /// Cluster index in `0..k` for every point.
    pub assignment: Vec<usize>,
    /// Point index of each cluster's medoid, ascending.
    pub medoids: Vec<usize>,
    pub total_deviation: f64,
    /// Number of SWAP rounds evaluated.
    pub iterations: usize,
    /// Total deviation after BUILD and after every applied swap.
    pub deviation_history: Vec<f64>,
}

impl Clustering {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Nearest and second-nearest medoid distances for one point.
#[derive(Clone, Copy)]
struct Nearest {
    slot: usize,
    near: f64,
    second: f64,
}

fn nearest_medoids(d: &DistanceMatrix, medoids: &[usize]) -> Vec<Nearest> {
    (0..d.n())
        .map(|j| {
            let mut best = Nearest {
                slot: 0,
                near: f64::INFINITY,
                second: f64::INFINITY,
            };
            for (slot, &m) in medoids.iter().enumerate() {
                let dist = d.get(m, j);
                if dist < best.near {
                    best.second = best.near;
                    best.near = dist;
                    best.slot = slot;
                } else if dist < best.second {
                    best.second = dist;
                }
            }
            best
        })
        .collect()
}

/// Greedy BUILD: the first medoid minimizes total distance, each further one
/// maximizes the reduction in total deviation.
fn build(d: &DistanceMatrix, k: usize) -> Vec<usize> {
    let n = d.n();
    let first = (0..n)
        .map(|i| (i, d.row(i).iter().sum::<f64>()))
        .fold((0, f64::INFINITY), |best, (i, s)| if s < best.1 { (i, s) } else { best })
        .0;
    let mut medoids = vec![first];
    let mut is_medoid = vec![false; n];
    is_medoid[first] = true;
    let mut near: Vec<f64> = d.row(first).to_vec();
    while medoids.len() < k {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for c in (0..n).filter(|&c| !is_medoid[c]) {
            let gain: f64 = d
                .row(c)
                .iter()
                .zip(&near)
                .map(|(dc, dn)| (dn - dc).max(0.0))
                .sum();
            if gain > best.1 {
                best = (c, gain);
            }
        }
        let c = best.0;
        medoids.push(c);
        is_medoid[c] = true;
        for (nj, dc) in near.iter_mut().zip(d.row(c)) {
            if *dc < *nj {
                *nj = *dc;
            }
        }
    }
    medoids
}

/// Result of the SWAP phase from one starting medoid set.
struct SwapRun {
    medoids: Vec<usize>,
    total: f64,
    iterations: usize,
    history: Vec<f64>,
}

fn swap_phase(d: &DistanceMatrix, mut medoids: Vec<usize>, max_iter: usize) -> SwapRun {
    let n = d.n();
    let k = medoids.len();
    let mut is_medoid = vec![false; n];
    for &m in &medoids {
        is_medoid[m] = true;
    }
    let mut nearest = nearest_medoids(d, &medoids);
    let mut total: f64 = nearest.iter().map(|p| p.near).sum();
    let mut history = vec![total];
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let mut best = (0usize, 0usize, 0.0f64);
        for slot in 0..k {
            for h in (0..n).filter(|&h| !is_medoid[h]) {
                let dh = d.row(h);
                let delta: f64 = nearest
                    .iter()
                    .zip(dh)
                    .map(|(p, &djh)| {
                        let replacement = if p.slot == slot { p.second } else { p.near };
                        djh.min(replacement) - p.near
                    })
                    .sum();
                if delta < best.2 {
                    best = (slot, h, delta);
                }
            }
        }
        let (slot, h, delta) = best;
        if !(delta < -1e-12 * total) {
            break;
        }
        is_medoid[medoids[slot]] = false;
        is_medoid[h] = true;
        medoids[slot] = h;
        nearest = nearest_medoids(d, &medoids);
        let next: f64 = nearest.iter().map(|p| p.near).sum();
        debug_assert!(next <= total, "swap increased deviation: {total} -> {next}");
        total = next;
        history.push(total);
    }
    SwapRun {
        medoids,
        total,
        iterations,
        history,
    }
}

/// PAM for any `1 <= k <= n`: SWAP from the BUILD medoids, then from
/// `restarts` seeded random medoid sets; the lowest deviation wins (ties: the
/// earliest run, so BUILD first).
pub(crate) fn fit_unchecked(d: &DistanceMatrix, k: usize, seed: u64, max_iter: usize, restarts: usize) -> Clustering {
    let n = d.n();
    debug_assert!(k >= 1 && k <= n);
    let mut best = swap_phase(d, build(d, k), max_iter);
    if k < n {
        let mut stream = UniformStream::new(seed);
        for _ in 0..restarts {
            let start = stream.sample_without_replacement(n, k);
            let run = swap_phase(d, start, max_iter);
            if run.total < best.total - 1e-12 * best.total {
                best = run;
            }
        }
    }

    let SwapRun {
        mut medoids,
        iterations,
        history,
        ..
    } = best;
    medoids.sort_unstable();
    let mut assignment: Vec<usize> = (0..n)
        .map(|j| {
            let mut best = (0, f64::INFINITY);
            for (c, &m) in medoids.iter().enumerate() {
                let dist = d.get(m, j);
                if dist < best.1 {
                    best = (c, dist);
                }
            }
            best.0
        })
        .collect();
    for (c, &m) in medoids.iter().enumerate() {
        assignment[m] = c;
    }
    let total_deviation = assignment
        .iter()
        .enumerate()
        .map(|(j, &c)| d.get(medoids[c], j))
        .sum();

    Clustering {
        k,
        assignment,
        medoids,
        total_deviation,
        iterations,
        deviation_history: history,
    }
}

/// PAM clustering into `k` clusters, `2 <= k <= n`, with
/// [`DEFAULT_RESTARTS`] seeded restarts besides the BUILD start.
pub fn kmedoids_fit(d: &DistanceMatrix, k: usize, seed: u64, max_iter: usize) -> Result<Clustering> {
    kmedoids_fit_with_restarts(d, k, seed, max_iter, DEFAULT_RESTARTS)
}

/// [`kmedoids_fit`] with an explicit number of random restarts (0 = BUILD only).
pub fn kmedoids_fit_with_restarts(
    d: &DistanceMatrix,
    k: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<Clustering> {
    if k < 2 || k > d.n() {
        return Err(Error::Parameter(format!("k = {k} outside [2, {}]", d.n())));
    }
    if max_iter < 1 {
        return Err(Error::Parameter("max_iter must be at least 1".into()));
    }
    Ok(fit_unchecked(d, k, seed, max_iter, restarts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilhouetteReport {
    pub per_point: Vec<f64>,
    pub mean: f64,
    pub per_cluster_mean: Vec<f64>,
}

/// Silhouette values. Singletons score 0, as does a point with `a = b = 0`.
pub fn silhouette(d: &DistanceMatrix, assignment: &[usize]) -> Result<SilhouetteReport> {
    let n = d.n();
    if assignment.len() != n {
        return Err(Error::Shape(format!("{} assignments for {n} points", assignment.len())));
    }
    let k = assignment.iter().max().map_or(0, |&m| m + 1);
    if k < 2 {
        return Err(Error::SilhouetteUndefined);
    }
    let mut sizes = vec![0usize; k];
    for &c in assignment {
        sizes[c] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::Parameter(format!("cluster {empty} is empty")));
    }

    let mut sums = vec![0.0; k];
    let per_point: Vec<f64> = (0..n)
        .map(|i| {
            let own = assignment[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            sums.iter_mut().for_each(|s| *s = 0.0);
            for (j, &dij) in d.row(i).iter().enumerate() {
                sums[assignment[j]] += dij;
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();

    let mut cluster_sums = vec![0.0; k];
    for (&s, &c) in per_point.iter().zip(assignment) {
        cluster_sums[c] += s;
    }
    let per_cluster_mean = cluster_sums.iter().zip(&sizes).map(|(s, &z)| s / z as f64).collect();
    let mean = per_point.iter().sum::<f64>() / n as f64;
    Ok(SilhouetteReport {
        per_point,
        mean,
        per_cluster_mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelectionResult {
    pub chosen_k: usize,
    pub scores: BTreeMap<usize, f64>,
    pub clusterings: BTreeMap<usize, Clustering>,
}

impl KSelectionResult {
    pub fn chosen(&self) -> &Clustering {
        &self.clusterings[&self.chosen_k]
    }
}

/// Fits every k in `[k_min, k_max]` and keeps the best mean silhouette
/// (ties: smaller k).
pub fn select_k(d: &DistanceMatrix, k_min: usize, k_max: usize, seed: u64, max_iter: usize) -> Result<KSelectionResult> {
    if k_min < 2 || k_min > k_max || k_max + 1 > d.n() {
        return Err(Error::Parameter(format!(
            "k range [{k_min}, {k_max}] invalid for {} points",
            d.n()
        )));
    }
    let mut scores = BTreeMap::new();
    let mut clusterings = BTreeMap::new();
    let mut chosen = (k_min, f64::NEG_INFINITY);
    for k in k_min..=k_max {
        let c = kmedoids_fit(d, k, seed, max_iter)?;
        let score = silhouette(d, &c.assignment)?.mean;
        if score > chosen.1 {
            chosen = (k, score);
        }
        scores.insert(k, score);
        clusterings.insert(k, c);
    }
    Ok(KSelectionResult {
        chosen_k: chosen.0,
        scores,
        clusterings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k_min: usize,
    pub k_max: usize,
    pub metric: Metric,
    pub seed: u64,
    pub max_iter: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 8,
            metric: Metric::Euclidean,
            seed: 0,
            max_iter: 100,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_min < 2 || self.k_max < self.k_min {
            return Err(Error::Parameter(format!(
                "k range [{}, {}] invalid; need 2 <= k_min <= k_max",
                self.k_min, self.k_max
            )));
        }
        if self.max_iter < 1 {
            return Err(Error::Parameter("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// The chosen clustering of one class, keyed by sample ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassClustering {
    pub class: u32,
    pub class_name: String,
    pub ids: Vec<SampleId>,
    pub k: usize,
    pub assignment: Vec<usize>,
    /// Row index (within this class) of each cluster's medoid.
    pub medoids: Vec<usize>,
    pub medoid_ids: Vec<SampleId>,
    /// Mean silhouette of the chosen k; `None` for the single-cluster fallback.
    pub silhouette: Option<f64>,
    pub cluster_silhouette: Vec<f64>,
    /// Mean silhouette for every searched k.
    pub scores: BTreeMap<usize, f64>,
    /// Set when the class was too small for the k range and kept as one cluster.
    pub fallback: bool,
}

impl ClassClustering {
    /// Per-cluster sample counts (the frequency table).
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &c in &self.assignment {
            sizes[c] += 1;
        }
        sizes
    }

    /// Member ids of each cluster, in class row order.
    pub fn members(&self) -> Vec<Vec<SampleId>> {
        let mut out = vec![Vec::new(); self.k];
        for (&id, &c) in self.ids.iter().zip(&self.assignment) {
            out[c].push(id);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Consistency(format!("class `{}`: {msg}", self.class_name)));
        if self.ids.is_empty() || self.k == 0 {
            return bad("empty clustering".into());
        }
        if self.assignment.len() != self.ids.len() {
            return bad("assignment length differs from id count".into());
        }
        if self.medoids.len() != self.k || self.medoid_ids.len() != self.k {
            return bad(format!("expected {} medoids", self.k));
        }
        if self.assignment.iter().any(|&c| c >= self.k) {
            return bad("assignment outside 0..k".into());
        }
        if self.cluster_sizes().contains(&0) {
            return bad("empty cluster".into());
        }
        for (c, (&row, &id)) in self.medoids.iter().zip(&self.medoid_ids).enumerate() {
            if row >= self.ids.len() || self.ids[row] != id || self.assignment[row] != c {
                return bad(format!("medoid of cluster {c} is inconsistent"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    /// Absent when the class fell back to a single cluster.
    pub selection: Option<KSelectionResult>,
    pub clustering: ClassClustering,
}

/// Distances + k selection for one class. Classes with fewer than `k_min + 1`
/// points become a single cluster around their 1-medoid.
pub fn cluster_class(m: &EmbeddingMatrix, config: &ClusterConfig) -> Result<ClusterOutcome> {
    config.validate()?;
    let class = m.labels()[0];
    if m.labels().iter().any(|&l| l != class) {
        return Err(Error::Parameter("cluster_class expects a single-class matrix".into()));
    }
    let class_name = m.class_names()[class as usize].clone();
    let n = m.n();

    if n < config.k_min + 1 {
        log::warn!(
            "class `{class_name}` has {n} sample(s), fewer than k_min + 1 = {}; using one cluster",
            config.k_min + 1
        );
        let medoid = if n == 1 {
            0
        } else {
            fit_unchecked(&pairwise_distances(m, config.metric)?, 1, config.seed, config.max_iter, 0).medoids[0]
        };
        let clustering = ClassClustering {
            class,
            class_name,
            ids: m.ids().to_vec(),
            k: 1,
            assignment: vec![0; n],
            medoids: vec![medoid],
            medoid_ids: vec![m.ids()[medoid]],
            silhouette: None,
            cluster_silhouette: Vec::new(),
            scores: BTreeMap::new(),
            fallback: true,
        };
        return Ok(ClusterOutcome {
            selection: None,
            clustering,
        });
    }

    let d = pairwise_distances(m, config.metric)?;
    let k_max = config.k_max.min(n - 1);
    let selection = select_k(&d, config.k_min, k_max, config.seed, config.max_iter)?;
    let chosen = selection.chosen();
    let report = silhouette(&d, &chosen.assignment)?;
    let clustering = ClassClustering {
        class,
        class_name,
        ids: m.ids().to_vec(),
        k: chosen.k,
        assignment: chosen.assignment.clone(),
        medoids: chosen.medoids.clone(),
        medoid_ids: chosen.medoids.iter().map(|&r| m.ids()[r]).collect(),
        silhouette: Some(report.mean),
        cluster_silhouette: report.per_cluster_mean,
        scores: selection.scores.clone(),
        fallback: false,
    };
    Ok(ClusterOutcome {
        selection: Some(selection),
        clustering,
    })
}

/// Clusters every class of `m` (in parallel), ordered by class index.
pub fn cluster_classes(m: &EmbeddingMatrix, config: &ClusterConfig) -> Result<Vec<ClassClustering>> {
    let parts: Vec<EmbeddingMatrix> = partition_by_class(m).into_values().collect();
    parts
        .par_iter()
        .map(|part| cluster_class(part, config).map(|o| o.clustering))
        .collect()
}

/// One row of the per-cluster report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReportRow {
    pub class: String,
    pub cluster: usize,
    pub size: usize,
    pub medoid_id: SampleId,
    pub mean_silhouette: Option<f64>,
}

pub fn cluster_report(clusterings: &[ClassClustering]) -> Vec<ClusterReportRow> {
    clusterings
        .iter()
        .flat_map(|cc| {
            cc.cluster_sizes().into_iter().enumerate().map(move |(c, size)| ClusterReportRow {
                class: cc.class_name.clone(),
                cluster: c,
                size,
                medoid_id: cc.medoid_ids[c],
                mean_silhouette: cc.cluster_silhouette.get(c).copied(),
            })
        })
        .collect()
}

pub const CLUSTER_REPORT_HEADER: &str = "class,cluster,size,medoid_id,mean_silhouette";

/// CSV `class,cluster,size,medoid_id,mean_silhouette`; the silhouette field is
/// empty for single-cluster fallbacks.
pub fn cluster_report_csv(rows: &[ClusterReportRow]) -> String {
    let mut out = format!("{CLUSTER_REPORT_HEADER}\n");
    for r in rows {
        let sil = r.mean_silhouette.map(|s| format!("{s:?}")).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{},{}", r.class, r.cluster, r.size, r.medoid_id, sil);
    }
    out
}

pub fn parse_cluster_report_csv(text: &str) -> Result<Vec<ClusterReportRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CLUSTER_REPORT_HEADER) {
        return Err(Error::Format {
            line: 1,
            message: format!("expected header `{CLUSTER_REPORT_HEADER}`"),
        });
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = || Error::Format {
                line: i + 2,
                message: format!("malformed cluster report row `{line}`"),
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(ClusterReportRow {
                class: f[0].to_owned(),
                cluster: f[1].parse().map_err(|_| bad())?,
                size: f[2].parse().map_err(|_| bad())?,
                medoid_id: SampleId(f[3].parse().map_err(|_| bad())?),
                mean_silhouette: if f[4].is_empty() {
                    None
                } else {
                    Some(f[4].parse().map_err(|_| bad())?)
                },
            })
        })
        .collect()
}
