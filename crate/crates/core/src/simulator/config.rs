//! Training configuration and its flat `key = value` text form.
//!
//! Blank lines, `#` comments and `[section]` headers are ignored; every other
//! line must be `key = value` with a known key. [`TrainConfig::to_text`]
//! writes every key, and parsing that output reproduces the config exactly.

use std::fmt::Write as _;
use std::path::Path;

use super::baseline::{ManualSchedule, Strategy};
use crate::affine::{check_detach_bound, Interval, ParamBounds};
use crate::contrastive::{DEFAULT_EMBED_DIM, DEFAULT_TEMPERATURE};
use crate::error::{Error, Result};
use crate::paramgen::{DEFAULT_HIDDEN_DIM, DEFAULT_INIT_SCALE, DEFAULT_NOISE_DIM};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub strategy: Strategy,
    /// `[C, T, H, W]`.
    pub input_shape: [usize; 4],
    /// `[T, H, W]`.
    pub crop_shape: [usize; 3],
    pub lr_encoder: f64,
    pub lr_cropper: f64,
    pub momentum: f64,
    pub temperature: f64,
    pub bounds: ParamBounds,
    pub noise_dim: usize,
    pub hidden_dim: usize,
    pub init_scale: f64,
    pub embed_dim: usize,
    pub encoder_filters: usize,
    pub encoder_kernel: usize,
    /// Random horizontal flip of each view's source before cropping.
    pub flip: bool,
    /// Random-strategy crop (resampled back to the input shape) before the
    /// main crop.
    pub pre_crop: bool,
    pub manual: ManualSchedule,
    /// Noise draws used for the step-0 disparity probe.
    pub probe_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 8,
            seed: 0,
            strategy: Strategy::ParamCrop,
            input_shape: [3, 16, 32, 32],
            crop_shape: [8, 16, 16],
            lr_encoder: 0.01,
            lr_cropper: 0.1,
            momentum: 0.9,
            temperature: DEFAULT_TEMPERATURE,
            bounds: ParamBounds::default(),
            noise_dim: DEFAULT_NOISE_DIM,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            init_scale: DEFAULT_INIT_SCALE,
            embed_dim: DEFAULT_EMBED_DIM,
            encoder_filters: 8,
            encoder_kernel: 3,
            flip: false,
            pre_crop: false,
            manual: ManualSchedule::default(),
            probe_samples: 64,
        }
    }
}

fn parse_shape<const N: usize>(key: &str, value: &str) -> Result<[usize; N]> {
    let parts: Vec<&str> = value.split('x').map(str::trim).collect();
    if parts.len() != N {
        return Err(Error::config(key, format!("expected {N} `x`-separated lengths, got `{value}`")));
    }
    let mut out = [0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse()
            .map_err(|_| Error::config(key, format!("`{p}` is not a length")))?;
    }
    Ok(out)
}

fn fmt_shape(s: &[usize]) -> String {
    s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("`{value}` is not a boolean"))),
    }
}

impl TrainConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (key, v) = (key.trim(), value.trim());
        match key {
            "steps" => self.steps = parse_num(key, v)?,
            "batch" => self.batch = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "strategy" => self.strategy = v.parse()?,
            "input_shape" => self.input_shape = parse_shape(key, v)?,
            "crop_shape" => self.crop_shape = parse_shape(key, v)?,
            "lr_encoder" => self.lr_encoder = parse_num(key, v)?,
            "lr_cropper" => self.lr_cropper = parse_num(key, v)?,
            "momentum" => self.momentum = parse_num(key, v)?,
            "temperature" => self.temperature = parse_num(key, v)?,
            "sp_min" => self.bounds.spatial_scale.lo = parse_num(key, v)?,
            "sp_max" => self.bounds.spatial_scale.hi = parse_num(key, v)?,
            "st_min" => self.bounds.temporal_scale.lo = parse_num(key, v)?,
            "st_max" => self.bounds.temporal_scale.hi = parse_num(key, v)?,
            "theta_min" => self.bounds.rotation.lo = parse_num(key, v)?,
            "theta_max" => self.bounds.rotation.hi = parse_num(key, v)?,
            "detach_bound" => self.bounds.detach_bound = parse_num(key, v)?,
            "noise_dim" => self.noise_dim = parse_num(key, v)?,
            "hidden_dim" => self.hidden_dim = parse_num(key, v)?,
            "init_scale" => self.init_scale = parse_num(key, v)?,
            "embed_dim" => self.embed_dim = parse_num(key, v)?,
            "encoder_filters" => self.encoder_filters = parse_num(key, v)?,
            "encoder_kernel" => self.encoder_kernel = parse_num(key, v)?,
            "flip" => self.flip = parse_bool(key, v)?,
            "pre_crop" => self.pre_crop = parse_bool(key, v)?,
            "manual_start" => self.manual.start = parse_num(key, v)?,
            "manual_end" => self.manual.end = parse_num(key, v)?,
            "manual_breakpoint" => self.manual.breakpoint = parse_num(key, v)?,
            "probe_samples" => self.probe_samples = parse_num(key, v)?,
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Defaults overridden by every assignment in `text`, then validated.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies assignments without validating; unknown keys are errors unless
    /// `skip` returns true for them.
    pub(crate) fn apply_text_filtered(&mut self, text: &str, skip: impl Fn(&str) -> bool) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`"))
            })?;
            if skip(k.trim()) {
                continue;
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        self.apply_text_filtered(text, |_| false)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        TrainConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::config("batch", "must be >= 1"));
        }
        let [c, t, h, w] = self.input_shape;
        if c == 0 || t < 2 || h < 2 || w < 2 {
            return Err(Error::config("input_shape", "need C >= 1 and T, H, W >= 2"));
        }
        if self.crop_shape.contains(&0) {
            return Err(Error::config("crop_shape", "lengths must be >= 1"));
        }
        if self.crop_shape.iter().zip(&self.input_shape[1..]).any(|(cr, inp)| cr > inp) {
            return Err(Error::config("crop_shape", "crop may not exceed the input per axis"));
        }
        if self.crop_shape.iter().any(|&d| d < self.encoder_kernel) {
            return Err(Error::config("encoder_kernel", "kernel larger than the crop"));
        }
        for (name, v) in [("lr_encoder", self.lr_encoder), ("lr_cropper", self.lr_cropper)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::config("temperature", "must be > 0"));
        }
        self.bounds.validate()?;
        check_detach_bound(self.bounds.detach_bound)?;
        if self.bounds.rotation != Interval::new(0.0, 0.0) {
            return Err(Error::config(
                "theta_min",
                "disparity metrics need axis-aligned crops; rotation bounds must be [0, 0]",
            ));
        }
        for (name, v) in [
            ("noise_dim", self.noise_dim),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("encoder_filters", self.encoder_filters),
            ("encoder_kernel", self.encoder_kernel),
            ("probe_samples", self.probe_samples),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be >= 1"));
            }
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::config("init_scale", "must be >= 0"));
        }
        self.manual.validate()
    }

    /// Every key, grouped in sections; parses back to `self`.
    pub fn to_text(&self) -> String {
        let b = &self.bounds;
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "strategy = {}", self.strategy);
        let _ = writeln!(s, "probe_samples = {}", self.probe_samples);
        let _ = writeln!(s, "\n[shapes]");
        let _ = writeln!(s, "input_shape = {}", fmt_shape(&self.input_shape));
        let _ = writeln!(s, "crop_shape = {}", fmt_shape(&self.crop_shape));
        let _ = writeln!(s, "\n[optim]");
        let _ = writeln!(s, "lr_encoder = {}", self.lr_encoder);
        let _ = writeln!(s, "lr_cropper = {}", self.lr_cropper);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "temperature = {}", self.temperature);
        let _ = writeln!(s, "\n[crop]");
        let _ = writeln!(s, "sp_min = {}", b.spatial_scale.lo);
        let _ = writeln!(s, "sp_max = {}", b.spatial_scale.hi);
        let _ = writeln!(s, "st_min = {}", b.temporal_scale.lo);
        let _ = writeln!(s, "st_max = {}", b.temporal_scale.hi);
        let _ = writeln!(s, "theta_min = {}", b.rotation.lo);
        let _ = writeln!(s, "theta_max = {}", b.rotation.hi);
        let _ = writeln!(s, "detach_bound = {}", b.detach_bound);
        let _ = writeln!(s, "flip = {}", self.flip);
        let _ = writeln!(s, "pre_crop = {}", self.pre_crop);
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "noise_dim = {}", self.noise_dim);
        let _ = writeln!(s, "hidden_dim = {}", self.hidden_dim);
        let _ = writeln!(s, "init_scale = {}", self.init_scale);
        let _ = writeln!(s, "embed_dim = {}", self.embed_dim);
        let _ = writeln!(s, "encoder_filters = {}", self.encoder_filters);
        let _ = writeln!(s, "encoder_kernel = {}", self.encoder_kernel);
        let _ = writeln!(s, "\n[manual]");
        let _ = writeln!(s, "manual_start = {}", self.manual.start);
        let _ = writeln!(s, "manual_end = {}", self.manual.end);
        let _ = writeln!(s, "manual_breakpoint = {}", self.manual.breakpoint);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.lr_cropper = 0.0123456789012345;
        cfg.strategy = Strategy::Manual;
        cfg.flip = true;
        cfg.manual.breakpoint = 0.6;
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_sections() {
        let cfg = TrainConfig::parse("# hi\n[run]\nsteps = 5 # five\n\nbatch=2\n").unwrap();
        assert_eq!((cfg.steps, cfg.batch), (5, 2));
    }

    #[test]
    fn errors_name_the_field() {
        let field = |text: &str| match TrainConfig::parse(text) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        assert_eq!(field("strategy = cubic"), "strategy");
        assert_eq!(field("steps = many"), "steps");
        assert_eq!(field("bogus = 1"), "bogus");
        assert_eq!(field("detach_bound = 0.7"), "detach_bound");
        assert_eq!(field("crop_shape = 8x64x16"), "crop_shape");
        assert_eq!(field("input_shape = 3x16x32"), "input_shape");
        assert_eq!(field("sp_min = 0"), "spatial_scale");
        assert_eq!(field("steps 5"), "line 1");
    }
}
