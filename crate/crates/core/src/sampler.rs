//! Coreset construction: the random-sampling baseline, cluster-stratified
//! intelligent sampling, and the multinomial model of how random sampling
//! spreads a budget over clusters.
//!
//! Random sampling draws uniformly without replacement over the whole training
//! set, so the number of picks landing in cluster k is (approximately, for a
//! small budget) multinomial with p_k proportional to the cluster size.
//! Intelligent sampling instead treats every cluster as its own population
//! and splits the budget evenly across clusters, which lifts rare clusters up
//! to the same representation as dominant ones.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{round_half_up, EmbeddingMatrix, SampleId};
use crate::error::{Error, Result};
use crate::kmedoids::ClassClustering;
use crate::rng::UniformStream;
use crate::synthetic::largest_remainder;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoresetSize {
    /// Fraction of the source set, rounded half up, at least 1.
    Fraction(f64),
    Absolute(usize),
}

impl CoresetSize {
    pub fn resolve(self, available: usize) -> Result<usize> {
        let n = match self {
            Self::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::Parameter(format!("coreset fraction {f} not in (0, 1]")));
                }
                round_half_up(f * available as f64).max(1)
            }
            Self::Absolute(n) => n,
        };
        if n == 0 {
            return Err(Error::Parameter("coreset size must be at least 1".into()));
        }
        if n > available {
            return Err(Error::Size {
                requested: n,
                available,
            });
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMethod {
    Random,
    Intelligent,
}

impl SamplingMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Intelligent => "intelligent",
        }
    }
}

impl std::str::FromStr for SamplingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "rs" => Ok(Self::Random),
            "intelligent" | "is" => Ok(Self::Intelligent),
            other => Err(Error::Parameter(format!("unknown sampling method `{other}`"))),
        }
    }
}

/// How a class quota is split across its clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterAllocation {
    #[default]
    Equal,
    ProportionalFloor,
}

/// How the total budget is split across classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassAllocation {
    Equal,
    #[default]
    Proportional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoresetSpec {
    pub size: CoresetSize,
    pub method: SamplingMethod,
    pub seed: u64,
    #[serde(default)]
    pub cluster_allocation: ClusterAllocation,
    #[serde(default)]
    pub class_allocation: ClassAllocation,
}

impl CoresetSpec {
    pub fn new(size: CoresetSize, method: SamplingMethod, seed: u64) -> Self {
        Self {
            size,
            method,
            seed,
            cluster_allocation: ClusterAllocation::default(),
            class_allocation: ClassAllocation::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterCount {
    pub class: u32,
    pub cluster: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresetSelection {
    /// Selected ids in source row order.
    pub ids: Vec<SampleId>,
    pub per_class: BTreeMap<u32, usize>,
    /// Picks per (class, cluster); empty when no clustering was supplied.
    pub per_cluster: Vec<ClusterCount>,
    pub spec: CoresetSpec,
}

impl CoresetSelection {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Recomputes `per_cluster` from the clusterings.
    pub fn tally_clusters(&mut self, clusterings: &[ClassClustering]) -> Result<()> {
        let lookup = cluster_lookup(clusterings);
        let mut counts: BTreeMap<(u32, usize), usize> = BTreeMap::new();
        for cc in clusterings {
            for c in 0..cc.k {
                counts.insert((cc.class, c), 0);
            }
        }
        for id in &self.ids {
            let key = lookup
                .get(id)
                .ok_or_else(|| Error::Consistency(format!("selected id {id} is in no cluster")))?;
            *counts.get_mut(key).expect("key seeded above") += 1;
        }
        self.per_cluster = counts
            .into_iter()
            .map(|((class, cluster), count)| ClusterCount { class, cluster, count })
            .collect();
        Ok(())
    }
}

/// Maps every clustered id to its (class, cluster).
pub fn cluster_lookup(clusterings: &[ClassClustering]) -> HashMap<SampleId, (u32, usize)> {
    clusterings
        .iter()
        .flat_map(|cc| cc.ids.iter().zip(&cc.assignment).map(move |(&id, &c)| (id, (cc.class, c))))
        .collect()
}

fn per_class_counts(m: &EmbeddingMatrix, ids: &[SampleId]) -> BTreeMap<u32, usize> {
    let wanted: HashSet<SampleId> = ids.iter().copied().collect();
    let mut out = BTreeMap::new();
    for (id, &l) in m.ids().iter().zip(m.labels()) {
        if wanted.contains(id) {
            *out.entry(l).or_default() += 1;
        }
    }
    out
}

/// Uniform sample of `n` rows without replacement over the whole matrix.
pub fn random_sample(m: &EmbeddingMatrix, n: usize, seed: u64) -> Result<CoresetSelection> {
    let available = m.n();
    if n == 0 || n > available {
        return Err(Error::Size {
            requested: n,
            available,
        });
    }
    let mut stream = UniformStream::new(seed);
    let ids: Vec<SampleId> = stream
        .sample_without_replacement(available, n)
        .into_iter()
        .map(|r| m.ids()[r])
        .collect();
    Ok(CoresetSelection {
        per_class: per_class_counts(m, &ids),
        ids,
        per_cluster: Vec::new(),
        spec: CoresetSpec::new(CoresetSize::Absolute(n), SamplingMethod::Random, seed),
    })
}

/// Splits `quota` as evenly as possible over groups with the given capacities.
///
/// Groups that cannot absorb their share are filled, and the shortfall is
/// re-split over the rest. Indivisible units go to the groups with the most
/// remaining capacity first (ties: lowest index).
pub fn allocate_equal(quota: usize, capacities: &[usize]) -> Vec<usize> {
    let mut alloc = vec![0; capacities.len()];
    let mut remaining = quota;
    let mut active: Vec<usize> = (0..capacities.len()).filter(|&i| capacities[i] > 0).collect();
    while remaining > 0 && !active.is_empty() {
        // Lowest level first so leftovers keep the active groups within one unit.
        active.sort_by(|&a, &b| {
            let ra = capacities[a] - alloc[a];
            let rb = capacities[b] - alloc[b];
            alloc[a].cmp(&alloc[b]).then(rb.cmp(&ra)).then(a.cmp(&b))
        });
        let share = remaining / active.len();
        let extra = remaining % active.len();
        let mut given = 0;
        for (pos, &g) in active.iter().enumerate() {
            let want = share + usize::from(pos < extra);
            let take = want.min(capacities[g] - alloc[g]);
            alloc[g] += take;
            given += take;
        }
        remaining -= given;
        active.retain(|&g| alloc[g] < capacities[g]);
    }
    alloc
}

/// Proportional split that gives every group at least one unit when the quota
/// allows it. Below that, the largest groups get one unit each.
pub fn allocate_proportional_floor(quota: usize, sizes: &[usize]) -> Vec<usize> {
    let k = sizes.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let nonempty = sizes.iter().filter(|&&s| s > 0).count();
    let mut alloc = vec![0; k];
    if quota < nonempty {
        for &g in order.iter().filter(|&&g| sizes[g] > 0).take(quota) {
            alloc[g] = 1;
        }
        return alloc;
    }
    let spare: Vec<f64> = sizes.iter().map(|&s| s.saturating_sub(1) as f64).collect();
    let extra = largest_remainder(&spare, quota - nonempty);
    for g in 0..k {
        if sizes[g] > 0 {
            alloc[g] = 1 + extra[g];
        }
    }
    alloc
}

/// Budget split over classes, then over each class's clusters, then uniform
/// sampling without replacement inside each cluster.
pub fn intelligent_sample(
    m: &EmbeddingMatrix,
    clusterings: &[ClassClustering],
    n: usize,
    cluster_allocation: ClusterAllocation,
    class_allocation: ClassAllocation,
    seed: u64,
) -> Result<CoresetSelection> {
    let available = m.n();
    if n == 0 || n > available {
        return Err(Error::Size {
            requested: n,
            available,
        });
    }
    let by_class: BTreeMap<u32, &ClassClustering> = clusterings.iter().map(|c| (c.class, c)).collect();
    let class_ids: BTreeMap<u32, Vec<SampleId>> = m.ids().iter().zip(m.labels()).fold(
        BTreeMap::new(),
        |mut acc: BTreeMap<u32, Vec<SampleId>>, (&id, &l)| {
            acc.entry(l).or_default().push(id);
            acc
        },
    );
    for (class, ids) in &class_ids {
        let name = &m.class_names()[*class as usize];
        let cc = by_class
            .get(class)
            .ok_or_else(|| Error::Consistency(format!("no clustering for class `{name}`")))?;
        cc.validate()?;
        let clustered: HashSet<&SampleId> = cc.ids.iter().collect();
        if clustered.len() != ids.len() || ids.iter().any(|id| !clustered.contains(id)) {
            return Err(Error::Consistency(format!(
                "clustering of class `{name}` does not cover exactly its {} samples",
                ids.len()
            )));
        }
    }

    let classes: Vec<u32> = class_ids.keys().copied().collect();
    let sizes: Vec<usize> = class_ids.values().map(Vec::len).collect();
    let class_quota = match class_allocation {
        ClassAllocation::Proportional => {
            let w: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
            largest_remainder(&w, n)
        }
        ClassAllocation::Equal => allocate_equal(n, &sizes),
    };

    let mut stream = UniformStream::new(seed);
    let mut chosen: HashSet<SampleId> = HashSet::with_capacity(n);
    let mut per_cluster = Vec::new();
    for (&class, &quota) in classes.iter().zip(&class_quota) {
        let cc = by_class[&class];
        let members = cc.members();
        let cluster_sizes: Vec<usize> = members.iter().map(Vec::len).collect();
        let quotas = match cluster_allocation {
            ClusterAllocation::Equal => allocate_equal(quota, &cluster_sizes),
            ClusterAllocation::ProportionalFloor => allocate_proportional_floor(quota, &cluster_sizes),
        };
        for (cluster, (pool, &q)) in members.iter().zip(&quotas).enumerate() {
            for pos in stream.sample_without_replacement(pool.len(), q) {
                chosen.insert(pool[pos]);
            }
            per_cluster.push(ClusterCount { class, cluster, count: q });
        }
    }

    let ids: Vec<SampleId> = m.ids().iter().copied().filter(|id| chosen.contains(id)).collect();
    debug_assert_eq!(ids.len(), n);
    Ok(CoresetSelection {
        per_class: per_class_counts(m, &ids),
        ids,
        per_cluster,
        spec: CoresetSpec {
            size: CoresetSize::Absolute(n),
            method: SamplingMethod::Intelligent,
            seed,
            cluster_allocation,
            class_allocation,
        },
    })
}

/// Resolves the spec's size against `m` and runs the requested sampler.
/// Random selections are tallied per cluster when clusterings are given.
pub fn build_coreset(
    m: &EmbeddingMatrix,
    clusterings: Option<&[ClassClustering]>,
    spec: &CoresetSpec,
) -> Result<CoresetSelection> {
    let n = spec.size.resolve(m.n())?;
    let mut sel = match spec.method {
        SamplingMethod::Random => {
            let mut sel = random_sample(m, n, spec.seed)?;
            if let Some(cs) = clusterings {
                sel.tally_clusters(cs)?;
            }
            sel
        }
        SamplingMethod::Intelligent => {
            let cs = clusterings.ok_or_else(|| {
                Error::Consistency("intelligent sampling requires per-class clusterings".into())
            })?;
            intelligent_sample(m, cs, n, spec.cluster_allocation, spec.class_allocation, spec.seed)?
        }
    };
    sel.spec = *spec;
    Ok(sel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultinomialModel {
    probabilities: Vec<f64>,
    draws: usize,
}

impl MultinomialModel {
    pub fn new(probabilities: Vec<f64>, draws: usize) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::Parameter("no categories".into()));
        }
        if probabilities.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::Parameter("probabilities must be finite and non-negative".into()));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probabilities, draws })
    }

    /// The random-sampling model for clusters of the given sizes.
    pub fn from_cluster_sizes(sizes: &[usize], draws: usize) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        if total == 0 {
            return Err(Error::Parameter("cluster sizes sum to zero".into()));
        }
        Self::new(sizes.iter().map(|&s| s as f64 / total as f64).collect(), draws)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    /// `draws! / prod(n_k!) * prod(p_k^n_k)`, evaluated in log space.
    pub fn pmf(&self, counts: &[usize]) -> Result<f64> {
        if counts.len() != self.probabilities.len() {
            return Err(Error::Parameter(format!(
                "{} counts for {} categories",
                counts.len(),
                self.probabilities.len()
            )));
        }
        let total: usize = counts.iter().sum();
        if total != self.draws {
            return Err(Error::Parameter(format!("counts sum to {total}, expected {}", self.draws)));
        }
        let mut log_p = ln_factorial(self.draws);
        for (&c, &p) in counts.iter().zip(&self.probabilities) {
            if c == 0 {
                continue;
            }
            if p == 0.0 {
                return Ok(0.0);
            }
            log_p += c as f64 * p.ln() - ln_factorial(c);
        }
        Ok(log_p.exp())
    }

    pub fn expected_counts(&self) -> Vec<f64> {
        self.probabilities.iter().map(|p| p * self.draws as f64).collect()
    }
}

/// ln(n!), exact product below 171, log-gamma above.
pub fn ln_factorial(n: usize) -> f64 {
    if n <= 170 {
        (2..=n).fold(1.0f64, |acc, i| acc * i as f64).ln()
    } else {
        statrs::function::gamma::ln_gamma(n as f64 + 1.0)
    }
}

/// Expected picks per cluster under random sampling: `n * size_k / sum(size)`.
pub fn rs_expected_counts(cluster_sizes: &[usize], n: usize) -> Vec<f64> {
    let total: usize = cluster_sizes.iter().sum();
    cluster_sizes
        .iter()
        .map(|&s| n as f64 * s as f64 / total as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationRow {
    pub class: String,
    pub cluster: usize,
    pub source_size: usize,
    pub selected: usize,
    pub rate: f64,
    pub rs_expected: f64,
}

/// Per (class, cluster): source size, picks, pick rate, and what random
/// sampling of the same budget over all clustered samples would expect.
pub fn representation_report(
    sel: &CoresetSelection,
    clusterings: &[ClassClustering],
) -> Result<Vec<RepresentationRow>> {
    let lookup = cluster_lookup(clusterings);
    let mut picked: HashMap<(u32, usize), usize> = HashMap::new();
    for id in &sel.ids {
        let key = lookup
            .get(id)
            .ok_or_else(|| Error::Consistency(format!("selected id {id} is in no cluster")))?;
        *picked.entry(*key).or_default() += 1;
    }
    let sizes: Vec<usize> = clusterings.iter().flat_map(|cc| cc.cluster_sizes()).collect();
    let expected = rs_expected_counts(&sizes, sel.ids.len());
    let mut rows = Vec::with_capacity(sizes.len());
    let mut idx = 0;
    for cc in clusterings {
        for (cluster, size) in cc.cluster_sizes().into_iter().enumerate() {
            let selected = picked.get(&(cc.class, cluster)).copied().unwrap_or(0);
            rows.push(RepresentationRow {
                class: cc.class_name.clone(),
                cluster,
                source_size: size,
                selected,
                rate: selected as f64 / size as f64,
                rs_expected: expected[idx],
            });
            idx += 1;
        }
    }
    Ok(rows)
}

pub const REPORT_HEADER: &str = "class,cluster,source_size,selected,rate,rs_expected";
pub const SELECTION_HEADER: &str = "id,class,cluster";

pub fn representation_csv(rows: &[RepresentationRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{:?},{:?}",
            r.class, r.cluster, r.source_size, r.selected, r.rate, r.rs_expected
        );
    }
    out
}

pub fn parse_representation_csv(text: &str) -> Result<Vec<RepresentationRow>> {
    parse_rows(text, REPORT_HEADER, 6, |f| {
        Some(RepresentationRow {
            class: f[0].to_owned(),
            cluster: f[1].parse().ok()?,
            source_size: f[2].parse().ok()?,
            selected: f[3].parse().ok()?,
            rate: f[4].parse().ok()?,
            rs_expected: f[5].parse().ok()?,
        })
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub id: SampleId,
    pub class: String,
    pub cluster: usize,
}

/// Rows for the `id,class,cluster` selection file.
pub fn selection_rows(sel: &CoresetSelection, clusterings: &[ClassClustering]) -> Result<Vec<SelectionRow>> {
    let names: HashMap<u32, &str> = clusterings.iter().map(|c| (c.class, c.class_name.as_str())).collect();
    let lookup = cluster_lookup(clusterings);
    sel.ids
        .iter()
        .map(|id| {
            let &(class, cluster) = lookup
                .get(id)
                .ok_or_else(|| Error::Consistency(format!("selected id {id} is in no cluster")))?;
            Ok(SelectionRow {
                id: *id,
                class: names[&class].to_owned(),
                cluster,
            })
        })
        .collect()
}

pub fn selection_csv(rows: &[SelectionRow]) -> String {
    let mut out = format!("{SELECTION_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.id, r.class, r.cluster);
    }
    out
}

pub fn parse_selection_csv(text: &str) -> Result<Vec<SelectionRow>> {
    parse_rows(text, SELECTION_HEADER, 3, |f| {
        Some(SelectionRow {
            id: SampleId(f[0].parse().ok()?),
            class: f[1].to_owned(),
            cluster: f[2].parse().ok()?,
        })
    })
}

fn parse_rows<T>(text: &str, header: &str, width: usize, row: impl Fn(&[&str]) -> Option<T>) -> Result<Vec<T>> {
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(Error::Format {
            line: 1,
            message: format!("expected header `{header}`"),
        });
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            (fields.len() == width)
                .then(|| row(&fields))
                .flatten()
                .ok_or_else(|| Error::Format {
                    line: i + 2,
                    message: format!("malformed row `{line}`"),
                })
        })
        .collect()
}
