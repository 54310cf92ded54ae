//! Tiny video encoder: strided 3D conv → ReLU → global mean pool → linear →
//! L2 normalize. Small enough for finite-difference checks, deep enough to
//! pass a content-dependent gradient back to the crop voxels.

use rand::Rng;

use super::{l2_normalize, l2_normalize_backward};
use crate::error::{Error, Result};
use crate::sampler::VideoTensor;
use crate::tensor::DenseArray;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub in_channels: usize,
    /// `[t, h, w]` of the videos fed to the encoder.
    pub input_dims: [usize; 3],
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub embed_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: 3,
            input_dims: [8, 16, 16],
            filters: 8,
            kernel: 3,
            stride: 2,
            embed_dim: super::DEFAULT_EMBED_DIM,
        }
    }
}

impl EncoderConfig {
    pub fn output_dims(&self) -> Result<[usize; 3]> {
        if self.stride == 0 || self.kernel == 0 {
            return Err(Error::config("encoder", "kernel and stride must be >= 1"));
        }
        let mut out = [0; 3];
        for (o, &len) in out.iter_mut().zip(&self.input_dims) {
            if len < self.kernel {
                return Err(Error::dim(format!(
                    "encoder input axis {len} is shorter than kernel {}",
                    self.kernel
                )));
            }
            *o = (len - self.kernel) / self.stride + 1;
        }
        Ok(out)
    }

    fn kernel_volume(&self) -> usize {
        self.in_channels * self.kernel.pow(3)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyEncoder {
    cfg: EncoderConfig,
    conv_w: DenseArray,
    conv_b: DenseArray,
    proj_w: DenseArray,
    proj_b: DenseArray,
}

impl ToyEncoder {
    /// Uniform fan-in init for the weights, zero biases.
    pub fn random<R: Rng>(rng: &mut R, cfg: EncoderConfig) -> Result<Self> {
        cfg.output_dims()?;
        let fan_in = cfg.kernel_volume();
        let a = (3.0 / fan_in as f64).sqrt();
        let conv = (0..cfg.filters * fan_in).map(|_| rng.random_range(-a..a)).collect();
        let b = (3.0 / cfg.filters as f64).sqrt();
        let proj = (0..cfg.embed_dim * cfg.filters).map(|_| rng.random_range(-b..b)).collect();
        Ok(ToyEncoder {
            cfg,
            conv_w: DenseArray::new(vec![cfg.filters, fan_in], conv)?,
            conv_b: DenseArray::zeros(vec![cfg.filters]),
            proj_w: DenseArray::new(vec![cfg.embed_dim, cfg.filters], proj)?,
            proj_b: DenseArray::zeros(vec![cfg.embed_dim]),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn num_params(&self) -> usize {
        self.conv_w.len() + self.conv_b.len() + self.proj_w.len() + self.proj_b.len()
    }

    /// Conv weights, conv bias, projection weights, projection bias.
    pub fn flat_weights(&self) -> Vec<f64> {
        [&self.conv_w, &self.conv_b, &self.proj_w, &self.proj_b]
            .iter()
            .flat_map(|a| a.data().iter().copied())
            .collect()
    }

    pub fn with_flat_weights(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::dim("flat encoder weights have the wrong length"));
        }
        let mut rest = flat;
        let mut take = |like: &DenseArray| {
            let (head, tail) = rest.split_at(like.len());
            rest = tail;
            DenseArray::new(like.shape().to_vec(), head.to_vec())
        };
        Ok(ToyEncoder {
            cfg: self.cfg,
            conv_w: take(&self.conv_w)?,
            conv_b: take(&self.conv_b)?,
            proj_w: take(&self.proj_w)?,
            proj_b: take(&self.proj_b)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct EncoderTrace {
    /// Conv pre-activations, `filters × positions`.
    pub conv_pre: Vec<f64>,
    pub pooled: Vec<f64>,
    pub raw: Vec<f64>,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads {
    pub flat: Vec<f64>,
}

impl EncoderGrads {
    pub fn zeros_for(enc: &ToyEncoder) -> Self {
        EncoderGrads {
            flat: vec![0.0; enc.num_params()],
        }
    }

    pub fn accumulate(&mut self, other: &EncoderGrads) {
        for (a, b) in self.flat.iter_mut().zip(&other.flat) {
            *a += b;
        }
    }
}

/// Offsets of every kernel tap relative to a window origin, and the origin of
/// every output position, both as flat indices into one input channel-stack.
struct ConvLayout {
    taps: Vec<usize>,
    origins: Vec<usize>,
}

fn layout(cfg: &EncoderConfig) -> Result<ConvLayout> {
    let [ot, oh, ow] = cfg.output_dims()?;
    let [t, h, w] = cfg.input_dims;
    let k = cfg.kernel;
    let mut taps = Vec::with_capacity(cfg.kernel_volume());
    for c in 0..cfg.in_channels {
        for a in 0..k {
            for b in 0..k {
                for e in 0..k {
                    taps.push(((c * t + a) * h + b) * w + e);
                }
            }
        }
    }
    let s = cfg.stride;
    let mut origins = Vec::with_capacity(ot * oh * ow);
    for i in 0..ot {
        for j in 0..oh {
            for l in 0..ow {
                origins.push((i * s * h + j * s) * w + l * s);
            }
        }
    }
    Ok(ConvLayout { taps, origins })
}

fn check_input(video: &VideoTensor, cfg: &EncoderConfig) -> Result<()> {
    let [c, t, h, w] = video.shape();
    if c != cfg.in_channels || [t, h, w] != cfg.input_dims {
        return Err(Error::dim(format!(
            "encoder expects {}x{:?}, got {:?}",
            cfg.in_channels,
            cfg.input_dims,
            video.shape()
        )));
    }
    Ok(())
}

pub fn encode(video: &VideoTensor, enc: &ToyEncoder) -> Result<EncoderTrace> {
    let cfg = &enc.cfg;
    check_input(video, cfg)?;
    let lay = layout(cfg)?;
    let x = video.data();
    let positions = lay.origins.len();
    let mut conv_pre = vec![0.0; cfg.filters * positions];
    let mut pooled = vec![0.0; cfg.filters];
    for f in 0..cfg.filters {
        let wf = enc.conv_w.row(f);
        let bias = enc.conv_b.data()[f];
        let mut acc_pool = 0.0;
        for (p, &origin) in lay.origins.iter().enumerate() {
            let mut z = bias;
            for (wk, &tap) in wf.iter().zip(&lay.taps) {
                z += wk * x[origin + tap];
            }
            conv_pre[f * positions + p] = z;
            if z > 0.0 {
                acc_pool += z;
            }
        }
        pooled[f] = acc_pool / positions as f64;
    }
    let mut raw = enc.proj_w.matvec(&pooled)?;
    for (r, b) in raw.iter_mut().zip(enc.proj_b.data()) {
        *r += b;
    }
    let embedding = l2_normalize(&raw);
    Ok(EncoderTrace {
        conv_pre,
        pooled,
        raw,
        embedding,
    })
}

/// Backward from a gradient on the normalized embedding to the encoder
/// weights and the input voxels.
pub fn encode_backward(
    grad_embedding: &[f64],
    video: &VideoTensor,
    trace: &EncoderTrace,
    enc: &ToyEncoder,
) -> Result<(EncoderGrads, VideoTensor)> {
    let cfg = &enc.cfg;
    check_input(video, cfg)?;
    if grad_embedding.len() != cfg.embed_dim {
        return Err(Error::dim("embedding gradient has the wrong length"));
    }
    let lay = layout(cfg)?;
    let x = video.data();
    let positions = lay.origins.len();
    let (nf, d, kv) = (cfg.filters, cfg.embed_dim, cfg.kernel_volume());

    let g_raw = l2_normalize_backward(&trace.raw, grad_embedding);
    let mut g_conv_w = vec![0.0; nf * kv];
    let mut g_conv_b = vec![0.0; nf];
    let mut g_proj_w = vec![0.0; d * nf];
    let mut g_input = vec![0.0; x.len()];

    for i in 0..d {
        for f in 0..nf {
            g_proj_w[i * nf + f] = g_raw[i] * trace.pooled[f];
        }
    }
    for f in 0..nf {
        let g_pool: f64 = (0..d).map(|i| enc.proj_w.at2(i, f) * g_raw[i]).sum();
        let g_act = g_pool / positions as f64;
        if g_act == 0.0 {
            continue;
        }
        let wf = enc.conv_w.row(f);
        let gw = &mut g_conv_w[f * kv..(f + 1) * kv];
        for (p, &origin) in lay.origins.iter().enumerate() {
            if trace.conv_pre[f * positions + p] <= 0.0 {
                continue;
            }
            g_conv_b[f] += g_act;
            for ((gwk, &wk), &tap) in gw.iter_mut().zip(wf).zip(&lay.taps) {
                *gwk += g_act * x[origin + tap];
                g_input[origin + tap] += g_act * wk;
            }
        }
    }

    let mut flat = g_conv_w;
    flat.extend(g_conv_b);
    flat.extend(g_proj_w);
    flat.extend(g_raw);
    let input = VideoTensor::from_vec(video.shape(), g_input)?;
    Ok((EncoderGrads { flat }, input))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            in_channels: 2,
            input_dims: [4, 5, 5],
            filters: 3,
            kernel: 2,
            stride: 2,
            embed_dim: 4,
        }
    }

    fn random_input(rng: &mut ChaCha8Rng, cfg: &EncoderConfig) -> VideoTensor {
        let [t, h, w] = cfg.input_dims;
        VideoTensor::from_fn([cfg.in_channels, t, h, w], |_, _, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn output_is_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = ToyEncoder::random(&mut rng, EncoderConfig::default()).unwrap();
        let x = random_input(&mut rng, enc.config());
        let t = encode(&x, &enc).unwrap();
        assert_eq!(t.embedding.len(), 32);
        let norm: f64 = t.embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(EncoderConfig::default().output_dims().unwrap(), [3, 7, 7]);
    }

    #[test]
    fn zero_input_is_well_defined() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = ToyEncoder::random(&mut rng, small_cfg()).unwrap();
        let x = VideoTensor::zeros([2, 4, 5, 5]);
        let t = encode(&x, &enc).unwrap();
        assert!(t.embedding.iter().all(|&v| v == 0.0));
        let (g, gi) = encode_backward(&[1.0; 4], &x, &t, &enc).unwrap();
        assert!(g.flat.iter().all(|&v| v == 0.0));
        assert!(gi.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scale_invariance_with_zero_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = ToyEncoder::random(&mut rng, small_cfg()).unwrap();
        let x = random_input(&mut rng, enc.config());
        let doubled = VideoTensor::from_vec(x.shape(), x.data().iter().map(|v| 2.0 * v).collect()).unwrap();
        let a = encode(&x, &enc).unwrap().embedding;
        let b = encode(&doubled, &enc).unwrap().embedding;
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = ToyEncoder::random(&mut rng, small_cfg()).unwrap();
        assert!(matches!(encode(&VideoTensor::zeros([2, 4, 5, 6]), &enc), Err(Error::Dimension(_))));
    }

    /// Central-difference oracle for weight and input gradients.
    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut checked = 0;
        while checked < 5 {
            let mut enc = ToyEncoder::random(&mut rng, small_cfg()).unwrap();
            let flat: Vec<f64> = enc.flat_weights().iter().map(|w| w + rng.random_range(-0.1..0.1)).collect();
            enc = enc.with_flat_weights(&flat).unwrap();
            let x = random_input(&mut rng, enc.config());
            let gw: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = encode(&x, &enc).unwrap();
            if t.conv_pre.iter().any(|z| z.abs() < 1e-4) {
                continue;
            }
            checked += 1;
            let objective = |e: &ToyEncoder, v: &VideoTensor| -> f64 {
                encode(v, e).unwrap().embedding.iter().zip(&gw).map(|(a, b)| a * b).sum()
            };
            let (g, gi) = encode_backward(&gw, &x, &t, &enc).unwrap();
            for i in 0..flat.len() {
                let mut hi = flat.clone();
                let mut lo = flat.clone();
                hi[i] += h;
                lo[i] -= h;
                let fd = (objective(&enc.with_flat_weights(&hi).unwrap(), &x)
                    - objective(&enc.with_flat_weights(&lo).unwrap(), &x))
                    / (2.0 * h);
                assert!(crate::gradcheck::relative_error(g.flat[i], fd) < 1e-5, "weight {i}: {} vs {fd}", g.flat[i]);
            }
            for i in 0..x.data().len() {
                let mut hi = x.data().to_vec();
                let mut lo = x.data().to_vec();
                hi[i] += h;
                lo[i] -= h;
                let fd = (objective(&enc, &VideoTensor::from_vec(x.shape(), hi).unwrap())
                    - objective(&enc, &VideoTensor::from_vec(x.shape(), lo).unwrap()))
                    / (2.0 * h);
                assert!(crate::gradcheck::relative_error(gi.data()[i], fd) < 1e-5, "voxel {i}: {} vs {fd}", gi.data()[i]);
            }
        }
    }
}
