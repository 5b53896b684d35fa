//! Dataset, embedding and split types plus the on-disk embedding formats.
//!
//! Labels are class indices internally; class-name strings only appear at the
//! I/O boundary (CSV label column, binary label table, manifest).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::UniformStream;

pub const BINARY_MAGIC: &[u8; 4] = b"CSEL";
pub const BINARY_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u64);

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Labels restricted to `[A-Za-z0-9_-]+` so CSV needs no quoting.
pub fn is_valid_label(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

/// Labeled samples before embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub samples: Vec<(SampleId, String)>,
    pub class_names: Vec<String>,
    pub source: String,
}

impl LabeledDataset {
    pub fn new(
        samples: Vec<(SampleId, String)>,
        class_names: Vec<String>,
        source: impl Into<String>,
    ) -> Result<Self> {
        let ds = Self {
            samples,
            class_names,
            source: source.into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::InvalidData("dataset has no classes".into()));
        }
        let mut names = HashSet::new();
        for name in &self.class_names {
            if !names.insert(name.as_str()) {
                return Err(Error::InvalidData(format!("duplicate class name `{name}`")));
            }
        }
        let mut ids = HashSet::new();
        let mut per_class: HashMap<&str, usize> = HashMap::new();
        for (id, label) in &self.samples {
            if !ids.insert(*id) {
                return Err(Error::DuplicateId(id.0));
            }
            if !names.contains(label.as_str()) {
                return Err(Error::InvalidData(format!(
                    "sample {id} has unknown label `{label}`"
                )));
            }
            *per_class.entry(label.as_str()).or_default() += 1;
        }
        if let Some(empty) = self
            .class_names
            .iter()
            .find(|c| !per_class.contains_key(c.as_str()))
        {
            return Err(Error::InvalidData(format!("class `{empty}` has no samples")));
        }
        Ok(())
    }

    pub fn from_embeddings(m: &EmbeddingMatrix, source: impl Into<String>) -> Self {
        let samples = m
            .ids()
            .iter()
            .zip(m.labels())
            .map(|(&id, &l)| (id, m.class_names()[l as usize].clone()))
            .collect();
        let used: HashSet<u32> = m.labels().iter().copied().collect();
        let class_names = m
            .class_names()
            .iter()
            .enumerate()
            .filter(|(i, _)| used.contains(&(*i as u32)))
            .map(|(_, n)| n.clone())
            .collect();
        Self {
            samples,
            class_names,
            source: source.into(),
        }
    }
}

/// N x d matrix of per-sample feature vectors with ids and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<SampleId>,
    labels: Vec<u32>,
    class_names: Vec<String>,
    data: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(
        ids: Vec<SampleId>,
        labels: Vec<u32>,
        class_names: Vec<String>,
        data: Array2<f64>,
    ) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 {
            return Err(Error::InvalidData("embedding matrix has no rows".into()));
        }
        if d == 0 {
            return Err(Error::InvalidData("embedding dimension is zero".into()));
        }
        if ids.len() != n || labels.len() != n {
            return Err(Error::Shape(format!(
                "{} ids and {} labels for {n} rows",
                ids.len(),
                labels.len()
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(*id) {
                return Err(Error::DuplicateId(id.0));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= class_names.len()) {
            return Err(Error::InvalidData(format!(
                "label index {bad} outside class table of {}",
                class_names.len()
            )));
        }
        let mut names = HashSet::new();
        for name in &class_names {
            if !is_valid_label(name) {
                return Err(Error::InvalidData(format!("invalid class name `{name}`")));
            }
            if !names.insert(name) {
                return Err(Error::InvalidData(format!("duplicate class name `{name}`")));
            }
        }
        for ((row, col), v) in data.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row,
                    column: format!("f{col}"),
                });
            }
        }
        Ok(Self {
            ids,
            labels,
            class_names,
            data,
        })
    }

    pub fn ids(&self) -> &[SampleId] {
        &self.ids
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Sub-matrix of the given rows, in the given order. Keeps the class table.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidData("row selection is empty".into()));
        }
        Ok(Self {
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_names: self.class_names.clone(),
            data: self.data.select(Axis(0), rows),
        })
    }

    /// Sub-matrix of the rows whose ids are in `ids`, kept in source order.
    pub fn select_ids(&self, ids: &[SampleId]) -> Result<Self> {
        let wanted: HashSet<SampleId> = ids.iter().copied().collect();
        let rows: Vec<usize> = (0..self.n())
            .filter(|&r| wanted.contains(&self.ids[r]))
            .collect();
        if rows.len() != wanted.len() {
            return Err(Error::InvalidData(format!(
                "{} of {} requested ids are not in the matrix",
                wanted.len() - rows.len(),
                wanted.len()
            )));
        }
        self.select_rows(&rows)
    }

    /// Same rows, ids and labels with a new data block (e.g. after PCA).
    pub fn with_data(&self, data: Array2<f64>) -> Result<Self> {
        if data.nrows() != self.n() {
            return Err(Error::Shape(format!(
                "replacement data has {} rows, expected {}",
                data.nrows(),
                self.n()
            )));
        }
        Self::new(
            self.ids.clone(),
            self.labels.clone(),
            self.class_names.clone(),
            data,
        )
    }

    /// Number of rows per class index (length = class table size).
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Re-index labels against another class table containing every used name.
    pub fn relabel(&self, class_names: &[String]) -> Result<Self> {
        let lookup: HashMap<&str, u32> = class_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i as u32))
            .collect();
        let labels = self
            .labels
            .iter()
            .map(|&l| {
                let name = &self.class_names[l as usize];
                lookup
                    .get(name.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidData(format!("class `{name}` not in class table")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.ids.clone(), labels, class_names.to_vec(), self.data.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    Csv,
    Binary,
}

impl EmbeddingFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Binary => "bin",
        }
    }
}

impl std::str::FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "binary" | "bin" => Ok(Self::Binary),
            other => Err(Error::Parameter(format!("unknown embedding format `{other}`"))),
        }
    }
}

/// Loads an embedding file. CSV class indices follow first appearance.
pub fn load_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingMatrix> {
    match format {
        EmbeddingFormat::Csv => parse_csv(&fs::read_to_string(path)?),
        EmbeddingFormat::Binary => decode_binary(&fs::read(path)?),
    }
}

pub fn save_embeddings(m: &EmbeddingMatrix, path: &Path, format: EmbeddingFormat) -> Result<()> {
    let bytes = match format {
        EmbeddingFormat::Csv => encode_csv(m).into_bytes(),
        EmbeddingFormat::Binary => encode_binary(m),
    };
    let mut out = BufWriter::new(fs::File::create(path)?);
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

/// Row numbers in errors are 1-based data rows (the header is line 1, row 1 is line 2).
pub fn parse_csv(text: &str) -> Result<EmbeddingMatrix> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Format {
        line: 1,
        message: "empty file".into(),
    })?;
    let header = header.trim_end_matches('\r');
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "id" || cols[1] != "label" {
        return Err(Error::Format {
            line: 1,
            message: format!("expected header `id,label,f0,...`, got `{header}`"),
        });
    }
    let dim = cols.len() - 2;
    for (j, c) in cols[2..].iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(Error::Format {
                line: 1,
                message: format!("feature column {j} is named `{c}`, expected `f{j}`"),
            });
        }
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut class_index: HashMap<String, u32> = HashMap::new();
    let mut values = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let line_no = lineno + 1;
        let row = ids.len() + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 2 {
            return Err(Error::Format {
                line: line_no,
                message: format!("expected {} fields, found {}", dim + 2, fields.len()),
            });
        }
        let id: u64 = fields[0].parse().map_err(|_| Error::Format {
            line: line_no,
            message: format!("invalid id `{}`", fields[0]),
        })?;
        let label = fields[1];
        if !is_valid_label(label) {
            return Err(Error::Format {
                line: line_no,
                message: format!("invalid label `{label}`"),
            });
        }
        let idx = match class_index.get(label) {
            Some(&i) => i,
            None => {
                let i = class_names.len() as u32;
                class_names.push(label.to_owned());
                class_index.insert(label.to_owned(), i);
                i
            }
        };
        for (j, raw) in fields[2..].iter().enumerate() {
            let v: f64 = raw.trim().parse().map_err(|_| Error::Format {
                line: line_no,
                message: format!("invalid number `{raw}` in column f{j}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row,
                    column: format!("f{j}"),
                });
            }
            values.push(v);
        }
        ids.push(SampleId(id));
        labels.push(idx);
    }
    let n = ids.len();
    if n == 0 {
        return Err(Error::Format {
            line: 2,
            message: "no data rows".into(),
        });
    }
    let data = Array2::from_shape_vec((n, dim), values).expect("row lengths checked");
    EmbeddingMatrix::new(ids, labels, class_names, data)
}

/// Shortest round-trip decimal for every value.
pub fn encode_csv(m: &EmbeddingMatrix) -> String {
    let mut out = String::from("id,label");
    for j in 0..m.dim() {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for (i, row) in m.data.rows().into_iter().enumerate() {
        out.push_str(&m.ids[i].to_string());
        out.push(',');
        out.push_str(&m.class_names[m.labels[i] as usize]);
        for v in row {
            out.push(',');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    out
}

pub fn encode_binary(m: &EmbeddingMatrix) -> Vec<u8> {
    let (n, d) = m.data.dim();
    let mut buf = Vec::with_capacity(22 + n * (12 + 8 * d));
    buf.extend_from_slice(BINARY_MAGIC);
    buf.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    for id in &m.ids {
        buf.extend_from_slice(&id.0.to_le_bytes());
    }
    for l in &m.labels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    buf.extend_from_slice(&(m.class_names.len() as u32).to_le_bytes());
    for name in &m.class_names {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
    }
    for v in m.data.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Little-endian cursor over a byte buffer.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format {
                line: 0,
                message: format!("truncated binary data at byte {}", self.pos),
            }),
        }
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format {
                line: 0,
                message: format!("{} trailing bytes", self.bytes.len() - self.pos),
            });
        }
        Ok(())
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != BINARY_MAGIC {
        return Err(Error::Format {
            line: 0,
            message: "bad magic, expected CSEL".into(),
        });
    }
    let version = r.u16()?;
    if version != BINARY_VERSION {
        return Err(Error::Format {
            line: 0,
            message: format!("unsupported format version {version}"),
        });
    }
    let n = r.u64()? as usize;
    let d = r.u32()? as usize;
    // Bound allocations by what the buffer can actually hold.
    if n.saturating_mul(12 + 8 * d) > bytes.len() {
        return Err(Error::Format {
            line: 0,
            message: format!("header claims {n}x{d} but file has {} bytes", bytes.len()),
        });
    }
    let ids = (0..n).map(|_| r.u64().map(SampleId)).collect::<Result<Vec<_>>>()?;
    let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let num_names = r.u32()? as usize;
    let mut class_names = Vec::with_capacity(num_names.min(1 << 16));
    for _ in 0..num_names {
        let len = r.u32()? as usize;
        let raw = r.take(len)?;
        let name = std::str::from_utf8(raw).map_err(|_| Error::Format {
            line: 0,
            message: "class name is not UTF-8".into(),
        })?;
        class_names.push(name.to_owned());
    }
    let values = (0..n * d).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let data = Array2::from_shape_vec((n, d), values).expect("length checked");
    EmbeddingMatrix::new(ids, labels, class_names, data)
}

/// Dataset manifest pointing at an embedding file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub class_names: Vec<String>,
    /// Relative paths resolve against the manifest's directory.
    pub embedding_path: PathBuf,
    pub format: EmbeddingFormat,
    pub dim: usize,
    pub n: usize,
    pub provenance: String,
}

impl Manifest {
    pub fn describe(name: &str, m: &EmbeddingMatrix, path: PathBuf, format: EmbeddingFormat, provenance: &str) -> Self {
        Self {
            name: name.to_owned(),
            class_names: m.class_names().to_vec(),
            embedding_path: path,
            format,
            dim: m.dim(),
            n: m.n(),
            provenance: provenance.to_owned(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn resolve_embedding_path(&self, manifest_path: &Path) -> PathBuf {
        if self.embedding_path.is_absolute() {
            self.embedding_path.clone()
        } else {
            manifest_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(&self.embedding_path)
        }
    }

    /// Loads the embeddings, re-indexing labels to the manifest's class order.
    pub fn load_embeddings(&self, manifest_path: &Path) -> Result<EmbeddingMatrix> {
        let path = self.resolve_embedding_path(manifest_path);
        let m = load_embeddings(&path, self.format)?.relabel(&self.class_names)?;
        if m.n() != self.n || m.dim() != self.dim {
            return Err(Error::InvalidData(format!(
                "manifest declares {}x{} but {} holds {}x{}",
                self.n,
                self.dim,
                path.display(),
                m.n(),
                m.dim()
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 0,
            stratified: true,
        }
    }
}

pub(crate) fn round_half_up(x: f64) -> usize {
    // Slack absorbs products like 0.7 * 5 landing just below 3.5.
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Train/test split. Both sides keep the source row order.
pub fn split(m: &EmbeddingMatrix, spec: &SplitSpec) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let f = spec.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Parameter(format!("train fraction {f} not in (0, 1)")));
    }
    let n = m.n();
    let mut stream = UniformStream::new(spec.seed);
    let mut in_train = vec![false; n];

    if spec.stratified {
        let groups = class_rows(m);
        for (&class, rows) in &groups {
            if rows.len() < 2 {
                return Err(Error::Split {
                    class: m.class_names[class as usize].clone(),
                    reason: format!("{} sample(s), need at least 2", rows.len()),
                });
            }
        }
        let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
        let mut quotas: Vec<usize> = sizes
            .iter()
            .map(|&s| round_half_up(f * s as f64).clamp(1, s - 1))
            .collect();
        let lo: usize = sizes.len();
        let hi: usize = n - sizes.len();
        let target = round_half_up(f * n as f64).clamp(lo, hi);
        // Largest class first (ties: lowest class index) absorbs the rounding drift.
        let mut order: Vec<usize> = (0..sizes.len()).collect();
        order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
        let mut total: usize = quotas.iter().sum();
        while total != target {
            let grow = total < target;
            let pick = order.iter().copied().find(|&c| {
                if grow {
                    quotas[c] + 1 < sizes[c]
                } else {
                    quotas[c] > 1
                }
            });
            let c = pick.expect("target lies within per-class bounds");
            if grow {
                quotas[c] += 1;
                total += 1;
            } else {
                quotas[c] -= 1;
                total -= 1;
            }
        }
        for (rows, &q) in groups.values().zip(&quotas) {
            for pos in stream.sample_without_replacement(rows.len(), q) {
                in_train[rows[pos]] = true;
            }
        }
    } else {
        if n < 2 {
            return Err(Error::Split {
                class: "*".into(),
                reason: "need at least 2 samples".into(),
            });
        }
        let q = round_half_up(f * n as f64).clamp(1, n - 1);
        for pos in stream.sample_without_replacement(n, q) {
            in_train[pos] = true;
        }
    }

    let train: Vec<usize> = (0..n).filter(|&i| in_train[i]).collect();
    let test: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
    Ok((m.select_rows(&train)?, m.select_rows(&test)?))
}

fn class_rows(m: &EmbeddingMatrix) -> BTreeMap<u32, Vec<usize>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in m.labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups
}

/// Splits rows by class, preserving relative order inside each class.
pub fn partition_by_class(m: &EmbeddingMatrix) -> BTreeMap<u32, EmbeddingMatrix> {
    class_rows(m)
        .into_iter()
        .map(|(class, rows)| {
            let sub = m.select_rows(&rows).expect("class groups are non-empty");
            (class, sub)
        })
        .collect()
}
