//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each check draws small random instances from a seeded stream, computes the
//! analytic gradient, and compares it entry by entry against
//! `(f(x + h) - f(x - h)) / 2h`. Instances that land within [`KINK_MARGIN`] of
//! a non-differentiable point (a voxel knot, a clamp border, a ReLU kink) are
//! redrawn, since there the two one-sided derivatives disagree.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affine::{
    build_affine_matrix, clamp_params, clamp_params_backward, generate_grid, transform_grid,
    transform_grid_backward, AffineParams, GradientMask, Interval, ParamBounds, SamplingGrid,
    UnitParams, NUM_PARAMS,
};
use crate::contrastive::{encode, encode_backward, nt_xent_raw, EncoderConfig, LossConfig, ToyEncoder};
use crate::error::{Error, Result};
use crate::paramgen::{mlp_backward, mlp_forward, sample_noise, CropperState};
use crate::sampler::{boundary_distance, sample, sample_backward, VideoTensor};
use crate::simulator::{contrastive_pass, CropSource, ViewInput};
use crate::tensor::DenseArray;

pub const FD_STEP: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_SEEDS: usize = 20;

/// Denominator floor for [`relative_error`]. Central differences at
/// `h = 1e-6` carry roundoff near `1e-10 · |f|`, so entries far below this
/// floor are compared in absolute terms instead.
pub const REL_FLOOR: f64 = 1e-4;

const KINK_MARGIN: f64 = 1e-4;
const MAX_REDRAWS: usize = 200;

/// `|a - n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let d = (analytic - numeric).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Worst [`relative_error`] over paired entries; NaN anywhere counts as infinite.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    analytic.iter().zip(numeric).fold(0.0, |m, (&a, &n)| {
        let e = relative_error(a, n);
        if e.is_nan() {
            f64::INFINITY
        } else {
            m.max(e)
        }
    })
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(x: &[f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe)?;
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe)?;
        probe[i] = x[i];
        out.push((up - down) / (2.0 * FD_STEP));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckKind {
    SamplerGrid,
    ClampParams,
    TransformGrid,
    CropperChain,
    NtXent,
    Mlp,
    Encoder,
}

impl CheckKind {
    pub const ALL: [CheckKind; 7] = [
        CheckKind::SamplerGrid,
        CheckKind::ClampParams,
        CheckKind::TransformGrid,
        CheckKind::CropperChain,
        CheckKind::NtXent,
        CheckKind::Mlp,
        CheckKind::Encoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckKind::SamplerGrid => "sampler_grid",
            CheckKind::ClampParams => "clamp_params",
            CheckKind::TransformGrid => "transform_grid",
            CheckKind::CropperChain => "cropper_chain",
            CheckKind::NtXent => "nt_xent",
            CheckKind::Mlp => "mlp_weights",
            CheckKind::Encoder => "encoder",
        }
    }

    fn instance(self, rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
        match self {
            CheckKind::SamplerGrid => check_sampler(rng),
            CheckKind::ClampParams => check_clamp(rng),
            CheckKind::TransformGrid => check_transform(rng),
            CheckKind::CropperChain => check_chain(rng),
            CheckKind::NtXent => check_nt_xent(rng),
            CheckKind::Mlp => check_mlp(rng),
            CheckKind::Encoder => check_encoder(rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub kind: CheckKind,
    pub max_rel_error: f64,
    /// Seed offset of the instance with the largest error.
    pub worst_seed: usize,
    pub instances: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub seeds: usize,
    pub results: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.first_failure().is_none()
    }

    pub fn first_failure(&self) -> Option<&CheckResult> {
        self.results.iter().find(|r| !(r.max_rel_error < self.tolerance))
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16} {:>14} {:>10}  result", "check", "max_rel_err", "worst_seed")?;
        for r in &self.results {
            let verdict = if r.max_rel_error < self.tolerance { "PASS" } else { "FAIL" };
            writeln!(f, "{:<16} {:>14.6e} {:>10}  {verdict}", r.kind.name(), r.max_rel_error, r.worst_seed)?;
        }
        match self.first_failure() {
            None => write!(f, "all {} checks passed over {} seeds (tolerance {:e})", self.results.len(), self.seeds, self.tolerance),
            Some(r) => write!(f, "FAILED: {} exceeds tolerance {:e}", r.kind.name(), self.tolerance),
        }
    }
}

/// Runs every check on `seeds` instances derived from `base_seed`.
pub fn run_gradcheck(base_seed: u64, seeds: usize, tolerance: f64) -> Result<GradcheckReport> {
    if seeds == 0 {
        return Err(Error::config("seeds", "must be >= 1"));
    }
    if !(tolerance >= 0.0) || !tolerance.is_finite() {
        return Err(Error::config("tolerance", format!("must be finite and >= 0, got {tolerance}")));
    }
    let mut results = Vec::new();
    for (k, kind) in CheckKind::ALL.into_iter().enumerate() {
        let mut worst = (0.0, 0);
        for s in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(s as u64));
            rng.set_stream(k as u64);
            let err = draw_until_smooth(kind, &mut rng)?;
            if err > worst.0 || err.is_nan() {
                worst = (if err.is_nan() { f64::INFINITY } else { err }, s);
            }
        }
        results.push(CheckResult {
            kind,
            max_rel_error: worst.0,
            worst_seed: worst.1,
            instances: seeds,
        });
    }
    Ok(GradcheckReport { tolerance, seeds, results })
}

fn draw_until_smooth(kind: CheckKind, rng: &mut ChaCha8Rng) -> Result<f64> {
    for _ in 0..MAX_REDRAWS {
        if let Some(e) = kind.instance(rng)? {
            return Ok(e);
        }
    }
    Err(Error::Contract(format!("{}: no kink-free instance in {MAX_REDRAWS} draws", kind.name())))
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn random_video(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Result<VideoTensor> {
    VideoTensor::from_vec(shape, uniform_vec(rng, shape.iter().product(), -1.0, 1.0))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn grid_is_smooth(grid: &SamplingGrid, video_dims: [usize; 3]) -> bool {
    let [t, h, w] = video_dims;
    grid.coords().iter().all(|[x, y, tc]| {
        boundary_distance(*x, w) > KINK_MARGIN
            && boundary_distance(*y, h) > KINK_MARGIN
            && boundary_distance(*tc, t) > KINK_MARGIN
    })
}

fn clear_of_zero(v: &[f64]) -> bool {
    v.iter().all(|z| z.abs() > KINK_MARGIN)
}

fn flat_coords(g: &SamplingGrid) -> Vec<f64> {
    g.coords().iter().flatten().copied().collect()
}

fn grid_from_flat(dims: [usize; 3], flat: &[f64]) -> Result<SamplingGrid> {
    SamplingGrid::from_coords(dims, flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
}

fn check_sampler(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let shape = [2, 4, 5, 6];
    let video = random_video(rng, shape)?;
    let dims = [2, 3, 2];
    let n = dims.iter().product::<usize>();
    let grid = grid_from_flat(dims, &uniform_vec(rng, 3 * n, -1.1, 1.1))?;
    if !grid_is_smooth(&grid, [4, 5, 6]) {
        return Ok(None);
    }
    let weights = random_video(rng, [2, 2, 3, 2])?;
    let analytic = flat_coords(&sample_backward(&weights, &video, &grid)?);
    let numeric = central_difference(&flat_coords(&grid), |x| {
        Ok(dot(sample(&video, &grid_from_flat(dims, x)?)?.data(), weights.data()))
    })?;
    Ok(Some(max_relative_error(&analytic, &numeric)))
}

fn random_bounds(rng: &mut ChaCha8Rng) -> ParamBounds {
    let mut scale = || {
        let lo = rng.random_range(0.2..0.8);
        Interval::new(lo, rng.random_range(lo + 0.05..1.0))
    };
    let (spatial_scale, temporal_scale) = (scale(), scale());
    let r = rng.random_range(0.0..0.6);
    ParamBounds {
        spatial_scale,
        temporal_scale,
        rotation: Interval::new(-r, r),
        detach_bound: 0.0,
    }
}

fn check_clamp(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let bounds = random_bounds(rng);
    let v: [f64; NUM_PARAMS] = std::array::from_fn(|_| rng.random_range(0.01..0.99));
    let g: [f64; NUM_PARAMS] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let analytic = clamp_params_backward(&g, &UnitParams::new(v)?, &bounds, &GradientMask::ALL);
    let numeric = central_difference(&v, |x| {
        let p = clamp_params(&UnitParams::new(std::array::from_fn(|i| x[i]))?, &bounds);
        Ok(dot(&p.to_array(), &g))
    })?;
    Ok(Some(max_relative_error(&analytic, &numeric)))
}

fn random_params(rng: &mut ChaCha8Rng) -> AffineParams {
    AffineParams {
        s_p: rng.random_range(0.4..1.0),
        s_t: rng.random_range(0.4..1.0),
        theta: rng.random_range(-0.6..0.6),
        dx: rng.random_range(-0.3..0.3),
        dy: rng.random_range(-0.3..0.3),
        dt: rng.random_range(-0.3..0.3),
    }
}

fn check_transform(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let base = generate_grid(3, 4, 5)?;
    let p = random_params(rng);
    let weights = grid_from_flat(base.dims(), &uniform_vec(rng, 3 * base.len(), -1.0, 1.0))?;
    let analytic = transform_grid_backward(&weights, &base, &p)?;
    let w = flat_coords(&weights);
    let numeric = central_difference(&p.to_array(), |x| {
        let q = AffineParams::from_array(std::array::from_fn(|i| x[i]));
        Ok(dot(&flat_coords(&transform_grid(&base, &build_affine_matrix(&q))), &w))
    })?;
    Ok(Some(max_relative_error(&analytic, &numeric)))
}

fn check_nt_xent(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let n = rng.random_range(1..=4);
    let d = 5;
    let cfg = LossConfig::new(rng.random_range(0.2..1.0), n)?;
    let raw = DenseArray::new(vec![2 * n, d], uniform_vec(rng, 2 * n * d, -1.0, 1.0))?;
    let (_, grad) = nt_xent_raw(&raw, &cfg)?;
    let numeric = central_difference(raw.data(), |x| {
        Ok(nt_xent_raw(&DenseArray::new(vec![2 * n, d], x.to_vec())?, &cfg)?.0)
    })?;
    Ok(Some(max_relative_error(grad.data(), &numeric)))
}

fn check_mlp(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let s = CropperState::random(rng, 4, 6, 1.0, ParamBounds::default())?;
    let noise = sample_noise(rng, 4);
    let trace = mlp_forward(&noise, &s)?;
    if !clear_of_zero(&trace.hidden_pre) {
        return Ok(None);
    }
    let g: [f64; NUM_PARAMS] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let analytic = mlp_backward(&g, &trace, &s).flat();
    let numeric = central_difference(&s.flat_weights(), |x| {
        Ok(dot(mlp_forward(&noise, &s.with_flat_weights(x)?)?.v.values(), &g))
    })?;
    Ok(Some(max_relative_error(&analytic, &numeric)))
}

fn check_encoder(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let cfg = EncoderConfig {
        in_channels: 2,
        input_dims: [5, 5, 5],
        filters: 3,
        kernel: 3,
        stride: 2,
        embed_dim: 4,
    };
    let enc = ToyEncoder::random(rng, cfg)?;
    // nonzero biases so their gradients are exercised away from the origin
    let mut w = enc.flat_weights();
    for x in w.iter_mut() {
        *x += rng.random_range(-0.1..0.1);
    }
    let enc = enc.with_flat_weights(&w)?;
    let video = random_video(rng, [2, 5, 5, 5])?;
    let trace = encode(&video, &enc)?;
    if !clear_of_zero(&trace.conv_pre) {
        return Ok(None);
    }
    let g = uniform_vec(rng, cfg.embed_dim, -1.0, 1.0);
    let (grads, input_grad) = encode_backward(&g, &video, &trace, &enc)?;
    let num_w = central_difference(&w, |x| Ok(dot(&encode(&video, &enc.with_flat_weights(x)?)?.embedding, &g)))?;
    let num_x = central_difference(video.data(), |x| {
        Ok(dot(&encode(&VideoTensor::from_vec(video.shape(), x.to_vec())?, &enc)?.embedding, &g))
    })?;
    Ok(Some(
        max_relative_error(&grads.flat, &num_w).max(max_relative_error(input_grad.data(), &num_x)),
    ))
}

/// Loss of the full pass as a function of both croppers' weights, and the
/// unreversed analytic gradient of the same.
fn check_chain(rng: &mut ChaCha8Rng) -> Result<Option<f64>> {
    let samples = 2;
    let source_shape = [2, 4, 8, 8];
    let crop = [3, 4, 4];
    let bounds = ParamBounds {
        spatial_scale: Interval::new(0.5, 1.0),
        temporal_scale: Interval::new(0.5, 1.0),
        rotation: Interval::new(-0.4, 0.4),
        detach_bound: 0.0,
    };
    let enc = ToyEncoder::random(
        rng,
        EncoderConfig {
            in_channels: 2,
            input_dims: crop,
            filters: 3,
            kernel: 2,
            stride: 2,
            embed_dim: 4,
        },
    )?;
    let croppers = [
        CropperState::random(rng, 3, 4, 1.5, bounds)?,
        CropperState::random(rng, 3, 4, 1.5, bounds)?,
    ];
    let base = generate_grid(crop[0], crop[1], crop[2])?;
    let mut views = Vec::new();
    for _ in 0..2 * samples {
        views.push(ViewInput {
            source: random_video(rng, source_shape)?,
            crop: CropSource::Generated(sample_noise(rng, 3)),
        });
    }
    let temperature = 0.5;

    for (i, view) in views.iter().enumerate() {
        let CropSource::Generated(noise) = &view.crop else { unreachable!() };
        let trace = mlp_forward(noise, &croppers[i % 2])?;
        if !clear_of_zero(&trace.hidden_pre) {
            return Ok(None);
        }
        let grid = transform_grid(&base, &build_affine_matrix(&clamp_params(&trace.v, &bounds)));
        if !grid_is_smooth(&grid, [4, 8, 8]) {
            return Ok(None);
        }
        if !clear_of_zero(&encode(&sample(&view.source, &grid)?, &enc)?.conv_pre) {
            return Ok(None);
        }
    }

    let out = contrastive_pass(&enc, &croppers, &base, &bounds, &views, temperature)?;
    let mut analytic = out.grads.croppers_unreversed[0].flat();
    analytic.extend(out.grads.croppers_unreversed[1].flat());
    let split = croppers[0].flat_weights().len();
    let mut w = croppers[0].flat_weights();
    w.extend(croppers[1].flat_weights());
    let numeric = central_difference(&w, |x| {
        let c = [croppers[0].with_flat_weights(&x[..split])?, croppers[1].with_flat_weights(&x[split..])?];
        Ok(contrastive_pass(&enc, &c, &base, &bounds, &views, temperature)?.loss)
    })?;
    Ok(Some(max_relative_error(&analytic, &numeric)))
}
