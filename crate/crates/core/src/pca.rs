//! Principal component analysis with a cumulative explained-variance cutoff.
//!
//! The covariance is the population covariance of the mean-centered data
//! (divisor N). Its eigen-decomposition comes from a cyclic Jacobi sweep,
//! which keeps the accumulated eigenvectors orthonormal to round-off.

use ndarray::{Array1, Array2, Axis};

use crate::data::{EmbeddingMatrix, Reader};
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.95;
pub const MODEL_MAGIC: &[u8; 4] = b"CPCA";
pub const MODEL_VERSION: u16 = 1;

/// Slack on the cumulative-ratio comparison so that threshold 1.0 is reachable
/// despite round-off in the running sum.
const RATIO_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: Array1<f64>,
    /// d x k, columns are the retained principal directions.
    basis: Array2<f64>,
    /// Full eigenvalue spectrum (length d), descending, clamped at 0.
    spectrum: Vec<f64>,
    explained_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn basis(&self) -> &Array2<f64> {
        &self.basis
    }

    /// Eigenvalues of the retained components, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.spectrum[..self.retained()]
    }

    /// All d eigenvalues of the covariance, descending.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// Cumulative explained-variance ratio for 1..=k components.
    pub fn explained_ratio(&self) -> &[f64] {
        &self.explained_ratio
    }

    pub fn cumulative_variance(&self) -> f64 {
        *self.explained_ratio.last().expect("k >= 1")
    }

    pub fn total_variance(&self) -> f64 {
        self.spectrum.iter().sum()
    }

    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn retained(&self) -> usize {
        self.basis.ncols()
    }

    /// Binary section: `CPCA`, version u16, d u32, k u32, mean (d), spectrum (d),
    /// basis (d x k row-major); all little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.input_dim();
        let k = self.retained();
        let mut buf = Vec::with_capacity(14 + 8 * (2 * d + d * k));
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&(d as u32).to_le_bytes());
        buf.extend_from_slice(&(k as u32).to_le_bytes());
        for v in self.mean.iter().chain(&self.spectrum).chain(self.basis.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |message: String| Error::Format { line: 0, message };
        let mut r = Reader::new(bytes);
        if r.take(4)? != MODEL_MAGIC {
            return Err(bad("bad magic, expected CPCA".into()));
        }
        let version = r.u16()?;
        if version != MODEL_VERSION {
            return Err(bad(format!("unsupported PCA model version {version}")));
        }
        let d = r.u32()? as usize;
        let k = r.u32()? as usize;
        if d == 0 || k == 0 || k > d {
            return Err(bad(format!("invalid PCA shape d={d}, k={k}")));
        }
        if bytes.len() != 14 + 8 * (2 * d + d * k) {
            return Err(bad(format!("PCA section length {} does not match d={d}, k={k}", bytes.len())));
        }
        let mut read = |len: usize| (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>();
        let mean = Array1::from(read(d)?);
        let spectrum = read(d)?;
        let basis = Array2::from_shape_vec((d, k), read(d * k)?).expect("length checked");
        let explained_ratio = cumulative_ratios(&spectrum)[..k].to_vec();
        Ok(Self {
            mean,
            basis,
            spectrum,
            explained_ratio,
        })
    }
}

fn cumulative_ratios(spectrum: &[f64]) -> Vec<f64> {
    let total: f64 = spectrum.iter().sum();
    let mut acc = 0.0;
    spectrum
        .iter()
        .map(|v| {
            acc += v;
            (acc / total).min(1.0)
        })
        .collect()
}

/// Population covariance of the mean-centered rows.
pub fn covariance(data: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = data.nrows() as f64;
    let mean = data.mean_axis(Axis(0)).expect("non-empty");
    let centered = data - &mean;
    let cov = centered.t().dot(&centered) / n;
    (mean, cov)
}

/// Eigenvalues (descending) and unit eigenvectors (columns) of a symmetric matrix.
pub fn symmetric_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let d = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(d);
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return (vec![0.0; d], v);
    }
    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|p| (0..d).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| m[[p, q]] * m[[p, q]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..d {
                    let mrp = m[[r, p]];
                    let mrq = m[[r, q]];
                    m[[r, p]] = c * mrp - s * mrq;
                    m[[r, q]] = s * mrp + c * mrq;
                }
                for r in 0..d {
                    let mpr = m[[p, r]];
                    let mqr = m[[q, r]];
                    m[[p, r]] = c * mpr - s * mqr;
                    m[[q, r]] = s * mpr + c * mqr;
                }
                for r in 0..d {
                    let vrp = v[[r, p]];
                    let vrq = v[[r, q]];
                    v[[r, p]] = c * vrp - s * vrq;
                    v[[r, q]] = s * vrp + c * vrq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[[j, j]].total_cmp(&m[[i, i]]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[[i, i]]).collect();
    let vectors = v.select(Axis(1), &order);
    (values, vectors)
}

/// Flips each column so its largest-magnitude entry (first on ties) is non-negative.
fn canonical_signs(basis: &mut Array2<f64>) {
    for mut col in basis.columns_mut() {
        let mut best = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
}

pub fn fit(m: &EmbeddingMatrix, threshold: f64) -> Result<PcaModel> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Parameter(format!("variance threshold {threshold} not in (0, 1]")));
    }
    if m.n() < 2 {
        return Err(Error::Degenerate(format!("PCA needs at least 2 rows, got {}", m.n())));
    }
    let data = m.data();
    let first = data.row(0);
    if data.rows().into_iter().all(|r| r == first) {
        return Err(Error::Degenerate("all rows are identical; total variance is zero".into()));
    }
    let (mean, cov) = covariance(data);
    let (mut spectrum, vectors) = symmetric_eigen(&cov);
    for v in &mut spectrum {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let total: f64 = spectrum.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("total variance is zero".into()));
    }
    let ratios = cumulative_ratios(&spectrum);
    let k = ratios
        .iter()
        .position(|&r| r >= threshold - RATIO_SLACK)
        .map_or(ratios.len(), |i| i + 1);
    let mut basis = vectors.slice(ndarray::s![.., ..k]).to_owned();
    canonical_signs(&mut basis);
    Ok(PcaModel {
        mean,
        basis,
        spectrum,
        explained_ratio: ratios[..k].to_vec(),
    })
}

/// Projects rows onto the retained components: `(row - mean) * W`.
pub fn transform(model: &PcaModel, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    if m.dim() != model.input_dim() {
        return Err(Error::Shape(format!(
            "model expects dimension {}, matrix has {}",
            model.input_dim(),
            m.dim()
        )));
    }
    let projected = (m.data() - &model.mean).dot(&model.basis);
    m.with_data(projected)
}

pub fn fit_transform(m: &EmbeddingMatrix, threshold: f64) -> Result<(PcaModel, EmbeddingMatrix)> {
    let model = fit(m, threshold)?;
    let reduced = transform(&model, m)?;
    Ok((model, reduced))
}
