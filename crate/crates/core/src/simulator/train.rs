//! The adversarial training loop.
//!
//! Per step and sample, each of the two branches draws noise, generates crop
//! parameters, samples a crop, and encodes it. The encoder descends the
//! NT-Xent loss. The croppers receive the same gradient negated at their
//! input, so their updates ascend it. Early-stop masking gates individual
//! generator outputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::baseline::{baseline_params, Strategy};
use super::config::TrainConfig;
use super::cube::{center_manhattan, crop_cube_from_params, st_iou};
use super::metrics::{MetricsLog, StepRecord};
use super::synthetic::make_synthetic_batch;
use crate::affine::{
    apply_early_stop, build_affine_matrix, clamp_params, clamp_params_backward, generate_grid,
    transform_grid, transform_grid_backward, unclamp_params, AffineParams, GradientMask,
    ParamBounds, SamplingGrid, UnitParams, NUM_PARAMS,
};
use crate::contrastive::{
    encode, encode_backward, nt_xent, nt_xent_backward, EmbeddingBatch, EncoderConfig,
    EncoderGrads, EncoderTrace, LossConfig, ToyEncoder,
};
use crate::error::{Error, Result};
use crate::paramgen::{
    mlp_backward, mlp_forward, reverse_gradient, sample_noise, update_weights, CropperState,
    MlpGrads, MlpTrace, SgdMomentum,
};
use crate::sampler::{sample, sample_backward, VideoTensor};
use crate::tensor::DenseArray;

// Independent ChaCha streams derived from the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_AUG: u64 = 3;
const STREAM_PROBE: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// How one view's crop parameters are produced.
#[derive(Clone, Debug)]
pub enum CropSource {
    /// Noise fed to the generator of the view's branch.
    Generated(Vec<f64>),
    /// Parameters fixed by a baseline strategy; no generator gradient.
    Fixed(AffineParams),
}

/// One of the `2N` views entering a forward/backward pass. Views `2k` and
/// `2k + 1` belong to sample `k`; view `i` uses branch `i % 2`.
#[derive(Clone, Debug)]
pub struct ViewInput {
    pub source: VideoTensor,
    pub crop: CropSource,
}

/// Gradients from one forward/backward pass.
#[derive(Clone, Debug)]
pub struct StepGrads {
    pub encoder: EncoderGrads,
    /// Per branch, after reversal and masking.
    pub croppers: [MlpGrads; 2],
    /// Per branch, the same chain without the reversal.
    pub croppers_unreversed: [MlpGrads; 2],
}

#[derive(Clone, Debug)]
pub struct PassOutput {
    pub loss: f64,
    pub params: Vec<AffineParams>,
    /// Generator outputs, or the unit values a fixed crop corresponds to.
    pub unit: Vec<[f64; NUM_PARAMS]>,
    pub grads: StepGrads,
}

struct View {
    params: AffineParams,
    grid: SamplingGrid,
    crop: VideoTensor,
    enc: EncoderTrace,
    generator: Option<(MlpTrace, GradientMask)>,
}

/// Crops, encodes and scores `views`, then backpropagates the loss into the
/// encoder and (for generated views) both croppers. Bounds and the detach
/// threshold come from each cropper's own state; `bounds` is only used to
/// report unit values of fixed crops.
pub fn contrastive_pass(
    encoder: &ToyEncoder,
    croppers: &[CropperState; 2],
    base_grid: &SamplingGrid,
    bounds: &ParamBounds,
    views: &[ViewInput],
    temperature: f64,
) -> Result<PassOutput> {
    if views.is_empty() || !views.len().is_multiple_of(2) {
        return Err(Error::dim(format!("need an even, non-zero number of views, got {}", views.len())));
    }
    let n = views.len() / 2;
    let loss_cfg = LossConfig::new(temperature, n)?;
    let mut fwd: Vec<View> = Vec::with_capacity(views.len());
    for (i, view) in views.iter().enumerate() {
        let cropper = &croppers[i % 2];
        let (params, generator) = match &view.crop {
            CropSource::Generated(noise) => {
                let trace = mlp_forward(noise, cropper)?;
                let (v, mask) = apply_early_stop(&trace.v, cropper.bounds.detach_bound)?;
                (clamp_params(&v, &cropper.bounds), Some((trace, mask)))
            }
            CropSource::Fixed(p) => (*p, None),
        };
        let grid = transform_grid(base_grid, &build_affine_matrix(&params));
        let crop = sample(&view.source, &grid)?;
        let enc = encode(&crop, encoder)?;
        fwd.push(View { params, grid, crop, enc, generator });
    }

    let d = encoder.config().embed_dim;
    let rows: Vec<f64> = fwd.iter().flat_map(|v| v.enc.embedding.iter().copied()).collect();
    let batch_emb = EmbeddingBatch::new(DenseArray::new(vec![2 * n, d], rows)?)?;
    let loss = nt_xent(&batch_emb, &loss_cfg)?;
    let grad_emb = nt_xent_backward(&batch_emb, &loss_cfg)?;

    let mut enc_grads = EncoderGrads::zeros_for(encoder);
    let mut crop_grads = [MlpGrads::zeros_for(&croppers[0]), MlpGrads::zeros_for(&croppers[1])];
    let mut crop_plain = crop_grads.clone();
    for (i, (view, input)) in fwd.iter().zip(views).enumerate() {
        let (eg, input_grad) = encode_backward(grad_emb.row(i), &view.crop, &view.enc, encoder)?;
        enc_grads.accumulate(&eg);
        let Some((trace, mask)) = &view.generator else { continue };
        let cropper = &croppers[i % 2];
        let grid_grad = sample_backward(&input_grad, &input.source, &view.grid)?;
        let param_grad = transform_grid_backward(&grid_grad, base_grid, &view.params)?;
        let reversed: [f64; NUM_PARAMS] = reverse_gradient(&param_grad).try_into().expect("six parameters");
        let g_rev = clamp_params_backward(&reversed, &trace.v, &cropper.bounds, mask);
        crop_grads[i % 2].accumulate(&mlp_backward(&g_rev, trace, cropper));
        let g_plain = clamp_params_backward(&param_grad, &trace.v, &cropper.bounds, mask);
        crop_plain[i % 2].accumulate(&mlp_backward(&g_plain, trace, cropper));
    }

    let unit = fwd
        .iter()
        .map(|v| match &v.generator {
            Some((trace, _)) => *trace.v.values(),
            None => unclamp_params(&v.params, bounds),
        })
        .collect();
    Ok(PassOutput {
        loss,
        params: fwd.iter().map(|v| v.params).collect(),
        unit,
        grads: StepGrads {
            encoder: enc_grads,
            croppers: crop_grads,
            croppers_unreversed: crop_plain,
        },
    })
}

pub struct Trainer {
    cfg: TrainConfig,
    encoder: ToyEncoder,
    enc_opt: SgdMomentum,
    croppers: [CropperState; 2],
    crop_opts: [SgdMomentum; 2],
    base_grid: SamplingGrid,
    data_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    aug_rng: ChaCha8Rng,
    step: usize,
    last_grads: Option<StepGrads>,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init = stream(cfg.seed, STREAM_INIT);
        let enc_cfg = EncoderConfig {
            in_channels: cfg.input_shape[0],
            input_dims: cfg.crop_shape,
            filters: cfg.encoder_filters,
            kernel: cfg.encoder_kernel,
            stride: 2,
            embed_dim: cfg.embed_dim,
        };
        let encoder = ToyEncoder::random(&mut init, enc_cfg)?;
        let mut make_cropper = || CropperState::random(&mut init, cfg.noise_dim, cfg.hidden_dim, cfg.init_scale, cfg.bounds);
        let croppers = [make_cropper()?, make_cropper()?];
        let [t, h, w] = cfg.crop_shape;
        Ok(Trainer {
            encoder,
            enc_opt: SgdMomentum::new(cfg.lr_encoder, cfg.momentum),
            croppers,
            crop_opts: [
                SgdMomentum::new(cfg.lr_cropper, cfg.momentum),
                SgdMomentum::new(cfg.lr_cropper, cfg.momentum),
            ],
            base_grid: generate_grid(t, h, w)?,
            data_rng: stream(cfg.seed, STREAM_DATA),
            noise_rng: stream(cfg.seed, STREAM_NOISE),
            aug_rng: stream(cfg.seed, STREAM_AUG),
            step: 0,
            last_grads: None,
            cfg,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn croppers(&self) -> &[CropperState; 2] {
        &self.croppers
    }

    pub fn encoder(&self) -> &ToyEncoder {
        &self.encoder
    }

    /// Gradients from the most recent step.
    pub fn last_grads(&self) -> Option<&StepGrads> {
        self.last_grads.as_ref()
    }

    pub fn next_batch(&mut self) -> Result<Vec<VideoTensor>> {
        make_synthetic_batch(&mut self.data_rng, self.cfg.batch, self.cfg.input_shape)
    }

    fn augment(&mut self, video: &VideoTensor) -> Result<VideoTensor> {
        let mut out = video.clone();
        if self.cfg.pre_crop {
            let v = UnitParams::new(std::array::from_fn(|_| self.aug_rng.random::<f64>()))?;
            let p = clamp_params(&v, &self.cfg.bounds);
            let [_, t, h, w] = self.cfg.input_shape;
            let grid = transform_grid(&generate_grid(t, h, w)?, &build_affine_matrix(&p));
            out = sample(&out, &grid)?;
        }
        if self.cfg.flip && self.aug_rng.random::<bool>() {
            out = out.flip_width();
        }
        Ok(out)
    }

    /// Disparity of the current croppers (or baseline at step 0) over
    /// `probe_samples` noise pairs, from a dedicated generator stream so the
    /// training draws are untouched. Returns `(mean IoU, mean normalized distance)`.
    pub fn probe(&self) -> Result<(f64, f64)> {
        let mut rng = stream(self.cfg.seed, STREAM_PROBE);
        let n = self.cfg.probe_samples;
        let (mut iou, mut dist) = (0.0, 0.0);
        for _ in 0..n {
            let (a, b) = match self.cfg.strategy {
                Strategy::ParamCrop => {
                    let mut draw = |s: &CropperState| -> Result<AffineParams> {
                        let t = mlp_forward(&sample_noise(&mut rng, self.cfg.noise_dim), s)?;
                        Ok(clamp_params(&t.v, &self.cfg.bounds))
                    };
                    (draw(&self.croppers[0])?, draw(&self.croppers[1])?)
                }
                other => baseline_params(other, 0, self.cfg.steps, &mut rng, &self.cfg.bounds, &self.cfg.manual)?,
            };
            let (ca, cb) = (crop_cube_from_params(&a)?, crop_cube_from_params(&b)?);
            iou += st_iou(&ca, &cb);
            dist += center_manhattan(&ca, &cb).1;
        }
        Ok((iou / n as f64, dist / n as f64))
    }

    pub fn train_step(&mut self, batch: &[VideoTensor]) -> Result<StepRecord> {
        let step = self.step;
        let n = batch.len();
        let learned = self.cfg.strategy == Strategy::ParamCrop;

        let mut views = Vec::with_capacity(2 * n);
        for video in batch {
            let crops = if learned {
                let a = sample_noise(&mut self.noise_rng, self.cfg.noise_dim);
                let b = sample_noise(&mut self.noise_rng, self.cfg.noise_dim);
                [CropSource::Generated(a), CropSource::Generated(b)]
            } else {
                let (pa, pb) = baseline_params(
                    self.cfg.strategy,
                    step,
                    self.cfg.steps,
                    &mut self.aug_rng,
                    &self.cfg.bounds,
                    &self.cfg.manual,
                )?;
                [CropSource::Fixed(pa), CropSource::Fixed(pb)]
            };
            for crop in crops {
                views.push(ViewInput { source: self.augment(video)?, crop });
            }
        }

        let out = contrastive_pass(
            &self.encoder,
            &self.croppers,
            &self.base_grid,
            &self.cfg.bounds,
            &views,
            self.cfg.temperature,
        )
        .map_err(|e| match e {
            Error::NonFinite(what) => Error::Training {
                step,
                reason: format!("non-finite {what}; cropper weights {:?} / {:?}", self.croppers[0].max_abs(), self.croppers[1].max_abs()),
            },
            other => other,
        })?;

        let mut cubes = Vec::with_capacity(2 * n);
        for p in &out.params {
            let cube = crop_cube_from_params(p)?;
            if !cube.within_unit_cube() {
                return Err(Error::Contract(format!("step {step}: crop {cube:?} leaves the source cube")));
            }
            cubes.push(cube);
        }

        let grads = out.grads;
        let next = self.enc_opt.step(&self.encoder.flat_weights(), &grads.encoder.flat, step)?;
        self.encoder = self.encoder.with_flat_weights(&next)?;
        let cropper_grad_max = grads.croppers[0].max_abs().max(grads.croppers[1].max_abs());
        if learned {
            for b in 0..2 {
                self.croppers[b] = update_weights(&self.croppers[b], &grads.croppers[b], &mut self.crop_opts[b], step)?;
            }
        }

        let (mut iou, mut dist_raw, mut dist_norm) = (0.0, 0.0, 0.0);
        for pair in cubes.chunks(2) {
            iou += st_iou(&pair[0], &pair[1]);
            let (r, nd) = center_manhattan(&pair[0], &pair[1]);
            dist_raw += r;
            dist_norm += nd;
        }
        let mut v_mean = [0.0; NUM_PARAMS];
        for u in &out.unit {
            for (a, x) in v_mean.iter_mut().zip(u) {
                *a += x / out.unit.len() as f64;
            }
        }
        let nf = n as f64;
        self.last_grads = Some(grads);
        self.step += 1;
        Ok(StepRecord {
            step,
            loss: out.loss,
            iou: iou / nf,
            dist_raw: dist_raw / nf,
            dist_norm: dist_norm / nf,
            v_mean,
            cropper_grad_max,
        })
    }
}

/// Runs `cfg.steps` steps on fresh synthetic batches.
pub fn run_training(cfg: &TrainConfig) -> Result<MetricsLog> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let mut log = MetricsLog::default();
    for _ in 0..cfg.steps {
        let batch = trainer.next_batch()?;
        log.records.push(trainer.train_step(&batch)?);
    }
    Ok(log)
}

/// Like [`run_training`], also returning the step-0 disparity probe.
pub fn run_training_with_probe(cfg: &TrainConfig) -> Result<(MetricsLog, (f64, f64))> {
    let mut trainer = Trainer::new(cfg.clone())?;
    let probe = trainer.probe()?;
    let mut log = MetricsLog::default();
    for _ in 0..cfg.steps {
        let batch = trainer.next_batch()?;
        log.records.push(trainer.train_step(&batch)?);
    }
    Ok((log, probe))
}
