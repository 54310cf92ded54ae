//! NT-Xent contrastive loss over `2N` views and a toy 3D-conv encoder.
//!
//! Rows `2k` and `2k + 1` (zero-based) of an [`EmbeddingBatch`] are the two
//! views of sample `k`.

mod encoder;

pub use encoder::{encode, encode_backward, EncoderConfig, EncoderGrads, EncoderTrace, ToyEncoder};

use crate::error::{Error, Result};
use crate::tensor::DenseArray;

pub const NORM_EPS: f64 = 1e-12;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_EMBED_DIM: usize = 32;

const UNIT_TOL: f64 = 1e-12;

/// `x / ||x||`, or the zero vector when `||x|| <= NORM_EPS`.
pub fn l2_normalize(x: &[f64]) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= NORM_EPS {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| v / norm).collect()
}

/// Pulls a gradient on `l2_normalize(x)` back onto `x`:
/// `(g - u (u·g)) / ||x||`. Degenerate inputs get zero gradient.
pub fn l2_normalize_backward(x: &[f64], grad_unit: &[f64]) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= NORM_EPS {
        return vec![0.0; x.len()];
    }
    let u: Vec<f64> = x.iter().map(|v| v / norm).collect();
    let dot: f64 = u.iter().zip(grad_unit).map(|(a, b)| a * b).sum();
    u.iter().zip(grad_unit).map(|(ui, gi)| (gi - ui * dot) / norm).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingBatch {
    rows: DenseArray,
}

impl EmbeddingBatch {
    /// Wraps a `2N × D` matrix whose rows are unit length (or exactly zero,
    /// the image of a degenerate input under [`l2_normalize`]).
    pub fn new(rows: DenseArray) -> Result<Self> {
        if rows.rank() != 2 {
            return Err(Error::dim("embedding batch must be a matrix"));
        }
        for i in 0..rows.shape()[0] {
            let r = rows.row(i);
            let sq: f64 = r.iter().map(|v| v * v).sum();
            let zero = r.iter().all(|&v| v == 0.0);
            if !zero && (sq.sqrt() - 1.0).abs() > UNIT_TOL {
                return Err(Error::Contract(format!(
                    "embedding row {i} has norm {}, expected 1",
                    sq.sqrt()
                )));
            }
        }
        Ok(EmbeddingBatch { rows })
    }

    /// Normalizes each row of `raw`.
    pub fn from_raw(raw: &DenseArray) -> Result<Self> {
        if raw.rank() != 2 {
            return Err(Error::dim("embedding batch must be a matrix"));
        }
        let data = (0..raw.shape()[0]).flat_map(|i| l2_normalize(raw.row(i))).collect();
        EmbeddingBatch::new(DenseArray::new(raw.shape().to_vec(), data)?)
    }

    pub fn rows(&self) -> &DenseArray {
        &self.rows
    }

    pub fn num_rows(&self) -> usize {
        self.rows.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.rows.shape()[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
    pub samples: usize,
}

impl LossConfig {
    pub fn new(temperature: f64, samples: usize) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::config("temperature", format!("must be > 0, got {temperature}")));
        }
        if samples == 0 {
            return Err(Error::dim("contrastive batch needs at least one sample"));
        }
        Ok(LossConfig { temperature, samples })
    }
}

/// Pairwise dot products of the (unit) rows.
pub fn cosine_matrix(e: &EmbeddingBatch) -> DenseArray {
    let n = e.num_rows();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = e.rows.row(i).iter().zip(e.rows.row(j)).map(|(a, b)| a * b).sum();
        }
    }
    DenseArray::new(vec![n, n], data).expect("cosines of finite rows are finite")
}

fn positive_of(i: usize) -> usize {
    i ^ 1
}

fn check_batch(e: &EmbeddingBatch, cfg: &LossConfig) -> Result<usize> {
    if cfg.samples == 0 {
        return Err(Error::dim("contrastive batch needs at least one sample"));
    }
    let n = e.num_rows();
    if n != 2 * cfg.samples {
        return Err(Error::dim(format!(
            "expected {} embedding rows for N = {}, got {n}",
            2 * cfg.samples,
            cfg.samples
        )));
    }
    Ok(n)
}

/// Row-wise softmax over `c[i][k] / tau` for `k != i`, max-shifted. The
/// diagonal entry of each returned row is 0.
fn softmax_rows(c: &DenseArray, tau: f64) -> (Vec<f64>, Vec<f64>) {
    let n = c.shape()[0];
    let mut probs = vec![0.0; n * n];
    let mut log_den = vec![0.0; n];
    for i in 0..n {
        let m = (0..n).filter(|&k| k != i).map(|k| c.at2(i, k) / tau).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for k in (0..n).filter(|&k| k != i) {
            let e = (c.at2(i, k) / tau - m).exp();
            probs[i * n + k] = e;
            sum += e;
        }
        for k in 0..n {
            probs[i * n + k] /= sum;
        }
        log_den[i] = m + sum.ln();
    }
    (probs, log_den)
}

/// Mean over all `2N` anchors of `-log softmax` of the positive pair.
pub fn nt_xent(e: &EmbeddingBatch, cfg: &LossConfig) -> Result<f64> {
    let n = check_batch(e, cfg)?;
    let tau = cfg.temperature;
    let c = cosine_matrix(e);
    let (_, log_den) = softmax_rows(&c, tau);
    let total: f64 = (0..n).map(|i| log_den[i] - c.at2(i, positive_of(i)) / tau).sum();
    let loss = total / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("nt_xent".into()));
    }
    Ok(loss)
}

/// Gradient of [`nt_xent`] with respect to each (unit) embedding row, with
/// cosine similarity treated as the plain dot product of those rows.
pub fn nt_xent_backward(e: &EmbeddingBatch, cfg: &LossConfig) -> Result<DenseArray> {
    let n = check_batch(e, cfg)?;
    let d = e.dim();
    let tau = cfg.temperature;
    let c = cosine_matrix(e);
    let (probs, _) = softmax_rows(&c, tau);
    // dL/dc[i][k] for the anchor-i term
    let scale = 1.0 / (n as f64 * tau);
    let mut gc = vec![0.0; n * n];
    for i in 0..n {
        for k in (0..n).filter(|&k| k != i) {
            let target = if k == positive_of(i) { 1.0 } else { 0.0 };
            gc[i * n + k] = scale * (probs[i * n + k] - target);
        }
    }
    let mut grad = vec![0.0; n * d];
    for i in 0..n {
        let out = &mut grad[i * d..(i + 1) * d];
        for k in (0..n).filter(|&k| k != i) {
            let w = gc[i * n + k] + gc[k * n + i];
            for (o, &x) in out.iter_mut().zip(e.rows.row(k)) {
                *o += w * x;
            }
        }
    }
    DenseArray::new(vec![n, d], grad)
}

/// NT-Xent of raw (unnormalized) rows and its gradient back onto those rows,
/// normalization Jacobian included.
pub fn nt_xent_raw(raw: &DenseArray, cfg: &LossConfig) -> Result<(f64, DenseArray)> {
    let e = EmbeddingBatch::from_raw(raw)?;
    let loss = nt_xent(&e, cfg)?;
    let g_unit = nt_xent_backward(&e, cfg)?;
    let data = (0..e.num_rows())
        .flat_map(|i| l2_normalize_backward(raw.row(i), g_unit.row(i)))
        .collect();
    Ok((loss, DenseArray::new(raw.shape().to_vec(), data)?))
}
