//! Trilinear sampling of a `C × T × H × W` video at normalized coordinates.
//!
//! Axis position `i` of an axis with `L` samples sits at `-1 + 2i/(L-1)`.
//! Coordinates outside `[-1, 1]` are clamped to the border, and the clamped
//! axis then carries no gradient. On an exact voxel boundary the upper cell's
//! derivative is used.

use crate::affine::SamplingGrid;
use crate::error::{Error, Result};
use crate::tensor::DenseArray;

/// Rank-4 `C × T × H × W` array of finite `f64` values.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor(DenseArray);

impl VideoTensor {
    pub fn new(array: DenseArray) -> Result<Self> {
        if array.rank() != 4 {
            return Err(Error::dim(format!(
                "video must be rank 4 (C x T x H x W), got shape {:?}",
                array.shape()
            )));
        }
        Ok(VideoTensor(array))
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        VideoTensor::new(DenseArray::new(shape.to_vec(), data)?)
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        VideoTensor(DenseArray::zeros(shape.to_vec()))
    }

    /// Fills the video from `f(c, t, h, w)`.
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let [c, t, h, w] = shape;
        let mut data = Vec::with_capacity(c * t * h * w);
        for ci in 0..c {
            for ti in 0..t {
                for hi in 0..h {
                    for wi in 0..w {
                        data.push(f(ci, ti, hi, wi));
                    }
                }
            }
        }
        VideoTensor::from_vec(shape, data)
    }

    pub fn shape(&self) -> [usize; 4] {
        let s = self.0.shape();
        [s[0], s[1], s[2], s[3]]
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn array(&self) -> &DenseArray {
        &self.0
    }

    pub fn at(&self, c: usize, t: usize, h: usize, w: usize) -> f64 {
        let [_, tt, hh, ww] = self.shape();
        self.0.data()[((c * tt + t) * hh + h) * ww + w]
    }

    /// Mirror along the width axis.
    pub fn flip_width(&self) -> VideoTensor {
        let [c, t, h, w] = self.shape();
        let src = self.data();
        let mut data = Vec::with_capacity(src.len());
        for row in src.chunks(w) {
            data.extend(row.iter().rev());
        }
        debug_assert_eq!(data.len(), c * t * h * w);
        VideoTensor(DenseArray::new(vec![c, t, h, w], data).expect("flip keeps shape"))
    }
}

/// Location of one coordinate along an axis: the lower cell index, the
/// fractional position inside the cell, and `d(position)/d(coordinate)`
/// (zero when the coordinate was clamped).
#[derive(Clone, Copy, Debug)]
struct AxisHit {
    lo: usize,
    frac: f64,
    slope: f64,
}

fn locate(coord: f64, len: usize) -> AxisHit {
    let half = (len - 1) as f64 / 2.0;
    if coord < -1.0 {
        return AxisHit { lo: 0, frac: 0.0, slope: 0.0 };
    }
    if coord > 1.0 {
        return AxisHit { lo: len - 2, frac: 1.0, slope: 0.0 };
    }
    let pos = (coord + 1.0) * half;
    let lo = (pos.floor() as usize).min(len - 2);
    AxisHit { lo, frac: pos - lo as f64, slope: half }
}

fn check_sampleable(video: &VideoTensor) -> Result<()> {
    let [_, t, h, w] = video.shape();
    if t < 2 || h < 2 || w < 2 {
        return Err(Error::dim(format!(
            "sampling needs T, H, W >= 2, got {t}x{h}x{w}"
        )));
    }
    Ok(())
}

struct Cell {
    // Flat offsets of the 8 corners within one channel, ordered (dt, dy, dx)
    // with dx fastest.
    offsets: [usize; 8],
    x: AxisHit,
    y: AxisHit,
    t: AxisHit,
}

impl Cell {
    fn new(coord: &[f64; 3], dims: [usize; 3]) -> Cell {
        let [tt, hh, ww] = dims;
        let x = locate(coord[0], ww);
        let y = locate(coord[1], hh);
        let t = locate(coord[2], tt);
        let mut offsets = [0; 8];
        for (k, o) in offsets.iter_mut().enumerate() {
            let (dt, dy, dx) = (k >> 2, (k >> 1) & 1, k & 1);
            *o = ((t.lo + dt) * hh + y.lo + dy) * ww + x.lo + dx;
        }
        Cell { offsets, x, y, t }
    }

    fn weights(&self) -> [f64; 8] {
        let wx = [1.0 - self.x.frac, self.x.frac];
        let wy = [1.0 - self.y.frac, self.y.frac];
        let wt = [1.0 - self.t.frac, self.t.frac];
        std::array::from_fn(|k| wt[k >> 2] * wy[(k >> 1) & 1] * wx[k & 1])
    }
}

/// Samples `video` at every grid coordinate; output is `C × T_c × H_c × W_c`.
pub fn sample(video: &VideoTensor, grid: &SamplingGrid) -> Result<VideoTensor> {
    check_sampleable(video)?;
    let [c, t, h, w] = video.shape();
    let plane = t * h * w;
    let n = grid.len();
    let src = video.data();
    let mut out = vec![0.0; c * n];
    for (i, coord) in grid.coords().iter().enumerate() {
        if !coord.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("grid coordinate {i}")));
        }
        let cell = Cell::new(coord, [t, h, w]);
        let wts = cell.weights();
        for ch in 0..c {
            let base = &src[ch * plane..(ch + 1) * plane];
            let mut acc = 0.0;
            for k in 0..8 {
                acc += wts[k] * base[cell.offsets[k]];
            }
            out[ch * n + i] = acc;
        }
    }
    let [gt, gh, gw] = grid.dims();
    VideoTensor::from_vec([c, gt, gh, gw], out)
}

/// Gradient of `sum(grad_out · sample(video, grid))` with respect to each
/// grid coordinate, summed over channels.
pub fn sample_backward(
    grad_out: &VideoTensor,
    video: &VideoTensor,
    grid: &SamplingGrid,
) -> Result<SamplingGrid> {
    check_sampleable(video)?;
    let [c, t, h, w] = video.shape();
    let [gt, gh, gw] = grid.dims();
    if grad_out.shape() != [c, gt, gh, gw] {
        return Err(Error::dim(format!(
            "output gradient {:?} does not match sampled shape {:?}",
            grad_out.shape(),
            [c, gt, gh, gw]
        )));
    }
    let plane = t * h * w;
    let n = grid.len();
    let src = video.data();
    let go = grad_out.data();
    let mut out = SamplingGrid::zeros_like(grid);
    for (i, (coord, slot)) in grid.coords().iter().zip(out.coords_mut()).enumerate() {
        let cell = Cell::new(coord, [t, h, w]);
        let (fx, fy, ft) = (cell.x.frac, cell.y.frac, cell.t.frac);
        let wx = [1.0 - fx, fx];
        let wy = [1.0 - fy, fy];
        let wt = [1.0 - ft, ft];
        let sign = [-1.0, 1.0];
        let (mut dx, mut dy, mut dt) = (0.0, 0.0, 0.0);
        for ch in 0..c {
            let g = go[ch * n + i];
            if g == 0.0 {
                continue;
            }
            let base = &src[ch * plane..(ch + 1) * plane];
            let (mut ax, mut ay, mut at) = (0.0, 0.0, 0.0);
            for k in 0..8 {
                let (kt, ky, kx) = (k >> 2, (k >> 1) & 1, k & 1);
                let v = base[cell.offsets[k]];
                ax += sign[kx] * wy[ky] * wt[kt] * v;
                ay += wx[kx] * sign[ky] * wt[kt] * v;
                at += wx[kx] * wy[ky] * sign[kt] * v;
            }
            dx += g * ax;
            dy += g * ay;
            dt += g * at;
        }
        *slot = [dx * cell.x.slope, dy * cell.y.slope, dt * cell.t.slope];
    }
    Ok(out)
}

/// Distance, in normalized units, from `coord` to the nearest voxel-center
/// plane (or clamp border) along the axis. Piecewise-linear kinks live there.
pub fn boundary_distance(coord: f64, len: usize) -> f64 {
    let half = (len - 1) as f64 / 2.0;
    let pos = (coord.clamp(-1.0, 1.0) + 1.0) * half;
    let to_knot = (pos - pos.round()).abs() / half;
    to_knot.min((coord - 1.0).abs()).min((coord + 1.0).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affine::{build_affine_matrix, generate_grid, transform_grid, AffineParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_video(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> VideoTensor {
        VideoTensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn pixel_centers_reproduce_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for shape in [[2, 3, 5, 9], [1, 2, 2, 2], [3, 5, 9, 17]] {
            let v = random_video(&mut rng, shape);
            let g = generate_grid(shape[1], shape[2], shape[3]).unwrap();
            let out = sample(&v, &g).unwrap();
            assert_eq!(out.data(), v.data());
        }
    }

    #[test]
    fn identity_reproduction_non_dyadic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random_video(&mut rng, [3, 16, 32, 32]);
        let out = sample(&v, &generate_grid(16, 32, 32).unwrap()).unwrap();
        let err = out.data().iter().zip(v.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12, "max error {err}");
    }

    #[test]
    fn constant_video() {
        let v = VideoTensor::from_fn([2, 4, 4, 4], |_, _, _, _| 0.37).unwrap();
        let p = AffineParams { s_p: 0.6, s_t: 0.7, theta: 0.0, dx: 0.11, dy: -0.2, dt: 0.05 };
        let g = transform_grid(&generate_grid(3, 5, 5).unwrap(), &build_affine_matrix(&p));
        let out = sample(&v, &g).unwrap();
        assert!(out.data().iter().all(|&x| (x - 0.37).abs() < 1e-15));
        let go = VideoTensor::from_fn(out.shape(), |_, _, _, _| 1.0).unwrap();
        let grad = sample_backward(&go, &v, &g).unwrap();
        assert!(grad.coords().iter().flatten().all(|&x| x.abs() < 1e-14));
    }

    #[test]
    fn linear_ramp() {
        // value equals the normalized x coordinate of the voxel
        let w = 11;
        let v = VideoTensor::from_fn([1, 3, 4, w], |_, _, _, wi| -1.0 + 2.0 * wi as f64 / (w - 1) as f64).unwrap();
        let g = SamplingGrid::from_coords([1, 1, 2], vec![[0.3, 0.1, -0.2], [-0.77, 0.5, 0.9]]).unwrap();
        let out = sample(&v, &g).unwrap();
        assert!((out.data()[0] - 0.3).abs() < 1e-15);
        assert!((out.data()[1] + 0.77).abs() < 1e-15);
        let go = VideoTensor::from_vec([1, 1, 1, 2], vec![2.0, -0.5]).unwrap();
        let grad = sample_backward(&go, &v, &g).unwrap();
        assert!((grad.coords()[0][0] - 2.0).abs() < 1e-12);
        assert!((grad.coords()[1][0] + 0.5).abs() < 1e-12);
        assert!(grad.coords()[0][1].abs() < 1e-15 && grad.coords()[0][2].abs() < 1e-15);
    }

    #[test]
    fn clamped_coordinates_have_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_video(&mut rng, [2, 3, 4, 5]);
        let g = SamplingGrid::from_coords([1, 1, 1], vec![[1.4, 0.2, -1.3]]).unwrap();
        let go = VideoTensor::from_vec([2, 1, 1, 1], vec![1.0, 1.0]).unwrap();
        let grad = sample_backward(&go, &v, &g).unwrap();
        assert_eq!(grad.coords()[0][0], 0.0);
        assert_eq!(grad.coords()[0][2], 0.0);
        let edge = SamplingGrid::from_coords([1, 1, 1], vec![[1.0, 0.2, -1.0]]).unwrap();
        assert_eq!(sample(&v, &g).unwrap(), sample(&v, &edge).unwrap());
    }

    #[test]
    fn short_axes_rejected() {
        let v = VideoTensor::zeros([1, 1, 4, 4]);
        let g = generate_grid(1, 2, 2).unwrap();
        assert!(matches!(sample(&v, &g), Err(Error::Dimension(_))));
        let v = VideoTensor::zeros([1, 2, 4, 4]);
        let bad = VideoTensor::zeros([1, 2, 2, 3]);
        assert!(matches!(sample_backward(&bad, &v, &g), Err(Error::Dimension(_))));
    }

    #[test]
    fn output_within_neighbor_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = [1, 4, 5, 6];
        let v = random_video(&mut rng, shape);
        let coords: Vec<[f64; 3]> = (0..500).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
        let g = SamplingGrid::from_coords([1, 1, 500], coords.clone()).unwrap();
        let out = sample(&v, &g).unwrap();
        for (i, c) in coords.iter().enumerate() {
            let cell = Cell::new(c, [4, 5, 6]);
            let nb: Vec<f64> = cell.offsets.iter().map(|&o| v.data()[o]).collect();
            let lo = nb.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = nb.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let x = out.data()[i];
            assert!(x >= lo - 1e-15 && x <= hi + 1e-15);
        }
    }

    /// Central-difference oracle on interior, non-boundary coordinates.
    #[test]
    fn backward_matches_finite_differences() {
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let shape = [2, 4, 5, 6];
            let v = random_video(&mut rng, shape);
            let mut coords = Vec::new();
            while coords.len() < 12 {
                let c: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let safe = boundary_distance(c[0], 6) > 1e-4
                    && boundary_distance(c[1], 5) > 1e-4
                    && boundary_distance(c[2], 4) > 1e-4;
                if safe {
                    coords.push(c);
                }
            }
            let g = SamplingGrid::from_coords([1, 3, 4], coords.clone()).unwrap();
            let go = random_video(&mut rng, [2, 1, 3, 4]);
            let f = |cs: &[[f64; 3]]| -> f64 {
                let gg = SamplingGrid::from_coords([1, 3, 4], cs.to_vec()).unwrap();
                sample(&v, &gg).unwrap().data().iter().zip(go.data()).map(|(a, b)| a * b).sum()
            };
            let analytic = sample_backward(&go, &v, &g).unwrap();
            for i in 0..coords.len() {
                for a in 0..3 {
                    let mut hi = coords.clone();
                    let mut lo = coords.clone();
                    hi[i][a] += h;
                    lo[i][a] -= h;
                    let fd = (f(&hi) - f(&lo)) / (2.0 * h);
                    let an = analytic.coords()[i][a];
                    let err = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
                    assert!(err < 1e-5, "coord {i} axis {a}: {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn flip_width_mirrors() {
        let v = VideoTensor::from_fn([1, 2, 2, 3], |_, t, h, w| (t * 100 + h * 10 + w) as f64).unwrap();
        let f = v.flip_width();
        assert_eq!(f.at(0, 1, 1, 0), v.at(0, 1, 1, 2));
        assert_eq!(f.flip_width(), v);
    }
}
