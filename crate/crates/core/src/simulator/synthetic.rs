//! Synthetic videos: one smooth Gaussian blob drifting across a low-amplitude
//! noise background. Crop placement changes what a view sees, which is what
//! the adversarial cropper needs to exploit.

use rand::Rng;

use crate::affine::axis_coords;
use crate::error::Result;
use crate::sampler::VideoTensor;

pub const BACKGROUND_NOISE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct BlobSpec {
    /// Center at the temporal midpoint, normalized `(x, y)`.
    pub center: [f64; 2],
    /// Displacement per unit of normalized time.
    pub velocity: [f64; 2],
    pub sigma: f64,
    /// Peak intensity per channel.
    pub color: Vec<f64>,
}

impl BlobSpec {
    pub fn random<R: Rng>(rng: &mut R, channels: usize) -> Self {
        BlobSpec {
            center: [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)],
            velocity: [rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4)],
            sigma: rng.random_range(0.2..0.4),
            color: (0..channels).map(|_| rng.random_range(0.2..1.0)).collect(),
        }
    }

    fn intensity(&self, x: f64, y: f64, t: f64) -> f64 {
        let cx = self.center[0] + self.velocity[0] * t;
        let cy = self.center[1] + self.velocity[1] * t;
        let r2 = (x - cx).powi(2) + (y - cy).powi(2);
        (-r2 / (2.0 * self.sigma * self.sigma)).exp()
    }
}

/// Renders `spec` into a `C × T × H × W` video, adding uniform background
/// noise of amplitude `noise` drawn from `rng`.
pub fn render_blob<R: Rng>(spec: &BlobSpec, shape: [usize; 4], noise: f64, rng: &mut R) -> Result<VideoTensor> {
    let [_, t, h, w] = shape;
    let (ts, ys, xs) = (axis_coords(t), axis_coords(h), axis_coords(w));
    VideoTensor::from_fn(shape, |c, ti, hi, wi| {
        let bg = if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 };
        spec.color[c] * spec.intensity(xs[wi], ys[hi], ts[ti]) + bg
    })
}

/// `n` independent videos, deterministic given the generator state.
pub fn make_synthetic_batch<R: Rng>(rng: &mut R, n: usize, shape: [usize; 4]) -> Result<Vec<VideoTensor>> {
    (0..n)
        .map(|_| {
            let spec = BlobSpec::random(rng, shape[0]);
            render_blob(&spec, shape, BACKGROUND_NOISE, rng)
        })
        .collect()
}
