//! Noise-driven crop parameter generator.
//!
//! `v = sigmoid(W2 · relu(W1 · n))` with `W1: d×m`, `W2: 6×d` and no biases.
//! Each view branch owns an independent [`CropperState`].

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::affine::{Interval, ParamBounds, UnitParams, NUM_PARAMS};
use crate::error::{Error, Result};
use crate::tensor::{relu, sigmoid, DenseArray};

pub const DEFAULT_NOISE_DIM: usize = 16;
pub const DEFAULT_HIDDEN_DIM: usize = 32;
pub const DEFAULT_INIT_SCALE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct CropperState {
    w1: DenseArray,
    w2: DenseArray,
    pub bounds: ParamBounds,
}

impl CropperState {
    pub fn new(w1: DenseArray, w2: DenseArray, bounds: ParamBounds) -> Result<Self> {
        if w1.rank() != 2 || w2.rank() != 2 {
            return Err(Error::dim("cropper weights must be matrices"));
        }
        let (d, m) = (w1.shape()[0], w1.shape()[1]);
        if m == 0 || d == 0 || w2.shape() != [NUM_PARAMS, d] {
            return Err(Error::dim(format!(
                "W1 {:?} and W2 {:?} are incompatible (need W2 = 6 x d)",
                w1.shape(),
                w2.shape()
            )));
        }
        Ok(CropperState { w1, w2, bounds })
    }

    /// Weights drawn from `Uniform[-scale, scale]`.
    pub fn random<R: Rng>(rng: &mut R, noise_dim: usize, hidden_dim: usize, scale: f64, bounds: ParamBounds) -> Result<Self> {
        let mut draw = |r: usize, c: usize| {
            let data = (0..r * c).map(|_| rng.random_range(-scale..=scale)).collect();
            DenseArray::new(vec![r, c], data)
        };
        let w1 = draw(hidden_dim, noise_dim)?;
        let w2 = draw(NUM_PARAMS, hidden_dim)?;
        CropperState::new(w1, w2, bounds)
    }

    pub fn zeros(noise_dim: usize, hidden_dim: usize, bounds: ParamBounds) -> Result<Self> {
        CropperState::new(
            DenseArray::zeros(vec![hidden_dim, noise_dim]),
            DenseArray::zeros(vec![NUM_PARAMS, hidden_dim]),
            bounds,
        )
    }

    pub fn noise_dim(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn w1(&self) -> &DenseArray {
        &self.w1
    }

    pub fn w2(&self) -> &DenseArray {
        &self.w2
    }

    pub fn max_abs(&self) -> f64 {
        self.w1.max_abs().max(self.w2.max_abs())
    }

    /// All weights, `W1` then `W2`, row-major.
    pub fn flat_weights(&self) -> Vec<f64> {
        let mut out = self.w1.data().to_vec();
        out.extend_from_slice(self.w2.data());
        out
    }

    pub fn with_flat_weights(&self, flat: &[f64]) -> Result<Self> {
        let n1 = self.w1.len();
        if flat.len() != n1 + self.w2.len() {
            return Err(Error::dim("flat weight vector has the wrong length"));
        }
        CropperState::new(
            DenseArray::new(self.w1.shape().to_vec(), flat[..n1].to_vec())?,
            DenseArray::new(self.w2.shape().to_vec(), flat[n1..].to_vec())?,
            self.bounds,
        )
    }

    /// Writes `w1.pct`, `w2.pct` and `cropper.manifest` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, seed: u64) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.w1.save(dir.join("w1.pct"))?;
        self.w2.save(dir.join("w2.pct"))?;
        let b = &self.bounds;
        let manifest = format!(
            "noise_dim = {}\nhidden_dim = {}\nsp_min = {}\nsp_max = {}\nst_min = {}\nst_max = {}\ntheta_min = {}\ntheta_max = {}\ndetach_bound = {}\nseed = {}\n",
            self.noise_dim(),
            self.hidden_dim(),
            b.spatial_scale.lo,
            b.spatial_scale.hi,
            b.temporal_scale.lo,
            b.temporal_scale.hi,
            b.rotation.lo,
            b.rotation.hi,
            b.detach_bound,
            seed
        );
        fs::write(dir.join("cropper.manifest"), manifest)?;
        Ok(())
    }

    /// Loads a checkpoint written by [`CropperState::save`]; returns the seed too.
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, u64)> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("cropper.manifest"))?;
        let kv: BTreeMap<&str, &str> = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        let num = |k: &str| -> Result<f64> {
            kv.get(k)
                .ok_or_else(|| Error::Format(format!("checkpoint manifest lacks `{k}`")))?
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("`{k}`: {e}")))
        };
        let bounds = ParamBounds {
            spatial_scale: Interval::new(num("sp_min")?, num("sp_max")?),
            temporal_scale: Interval::new(num("st_min")?, num("st_max")?),
            rotation: Interval::new(num("theta_min")?, num("theta_max")?),
            detach_bound: num("detach_bound")?,
        };
        let seed = kv
            .get("seed")
            .ok_or_else(|| Error::Format("checkpoint manifest lacks `seed`".into()))?
            .parse::<u64>()
            .map_err(|e| Error::Format(format!("`seed`: {e}")))?;
        let state = CropperState::new(
            DenseArray::load(dir.join("w1.pct"))?,
            DenseArray::load(dir.join("w2.pct"))?,
            bounds,
        )?;
        if state.noise_dim() as f64 != num("noise_dim")? || state.hidden_dim() as f64 != num("hidden_dim")? {
            return Err(Error::Format("checkpoint dims disagree with weight files".into()));
        }
        Ok((state, seed))
    }
}

/// `m` independent draws from `Uniform[0, 1)`.
pub fn sample_noise<R: Rng>(rng: &mut R, m: usize) -> Vec<f64> {
    (0..m).map(|_| rng.random::<f64>()).collect()
}

/// Forward intermediates kept for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub noise: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out_pre: [f64; NUM_PARAMS],
    pub v: UnitParams,
}

pub fn mlp_forward(noise: &[f64], s: &CropperState) -> Result<MlpTrace> {
    if noise.len() != s.noise_dim() {
        return Err(Error::dim(format!(
            "noise has length {}, generator expects {}",
            noise.len(),
            s.noise_dim()
        )));
    }
    let hidden_pre = s.w1.matvec(noise)?;
    let hidden: Vec<f64> = hidden_pre.iter().map(|&z| relu(z)).collect();
    let out = s.w2.matvec(&hidden)?;
    let out_pre: [f64; NUM_PARAMS] = std::array::from_fn(|i| out[i]);
    let v = UnitParams::new(out_pre.map(sigmoid))?;
    Ok(MlpTrace {
        noise: noise.to_vec(),
        hidden_pre,
        hidden,
        out_pre,
        v,
    })
}

/// Weight gradients for one [`CropperState`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

impl MlpGrads {
    pub fn zeros_for(s: &CropperState) -> Self {
        MlpGrads {
            w1: vec![0.0; s.w1.len()],
            w2: vec![0.0; s.w2.len()],
        }
    }

    pub fn accumulate(&mut self, other: &MlpGrads) {
        for (a, b) in self.w1.iter_mut().zip(&other.w1) {
            *a += b;
        }
        for (a, b) in self.w2.iter_mut().zip(&other.w2) {
            *a += b;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.w1.clone();
        out.extend_from_slice(&self.w2);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.w1.iter().chain(&self.w2).fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn mlp_backward(grad_v: &[f64; NUM_PARAMS], trace: &MlpTrace, s: &CropperState) -> MlpGrads {
    let (d, m) = (s.hidden_dim(), s.noise_dim());
    let v = trace.v.values();
    let g_out: [f64; NUM_PARAMS] = std::array::from_fn(|i| grad_v[i] * v[i] * (1.0 - v[i]));
    let mut w2 = vec![0.0; NUM_PARAMS * d];
    for i in 0..NUM_PARAMS {
        for j in 0..d {
            w2[i * d + j] = g_out[i] * trace.hidden[j];
        }
    }
    let mut w1 = vec![0.0; d * m];
    for j in 0..d {
        if trace.hidden_pre[j] <= 0.0 {
            continue;
        }
        let g_h: f64 = (0..NUM_PARAMS).map(|i| s.w2.at2(i, j) * g_out[i]).sum();
        for k in 0..m {
            w1[j * m + k] = g_h * trace.noise[k];
        }
    }
    MlpGrads { w1, w2 }
}

/// Backward-pass negation. The forward pass through a reversal point is the
/// identity; only the gradient crossing it changes sign.
pub fn reverse_gradient(g: &[f64]) -> Vec<f64> {
    g.iter().map(|x| -x).collect()
}

/// Plain SGD with heavy-ball momentum: `u = mu·u + g; w -= lr·u`.
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> Self {
        SgdMomentum {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// Returns updated parameters; `step` is only used in error reports.
    pub fn step(&mut self, params: &[f64], grads: &[f64], step: usize) -> Result<Vec<f64>> {
        if params.len() != grads.len() {
            return Err(Error::dim("parameter and gradient lengths differ"));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training {
                step,
                reason: format!("non-finite gradient at index {i}"),
            });
        }
        if self.velocity.len() != params.len() {
            self.velocity = vec![0.0; params.len()];
        }
        let mut out = Vec::with_capacity(params.len());
        for ((w, &g), u) in params.iter().zip(grads).zip(self.velocity.iter_mut()) {
            *u = self.momentum * *u + g;
            out.push(w - self.lr * *u);
        }
        Ok(out)
    }
}

pub fn update_weights(s: &CropperState, grads: &MlpGrads, opt: &mut SgdMomentum, step: usize) -> Result<CropperState> {
    let next = opt.step(&s.flat_weights(), &grads.flat(), step)?;
    s.with_flat_weights(&next)
}
