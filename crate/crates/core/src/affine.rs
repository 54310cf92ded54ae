//! Crop parameters, the 3×4 spatio-temporal affine matrix, and sampling grids.
//!
//! Parameter order everywhere is `[s_p, s_t, theta, dx, dy, dt]`. Raw MLP
//! outputs (`UnitParams`, all in `[0, 1]`) are mapped into valid ranges by
//! [`clamp_params`]; the offset ranges depend on the already-mapped scales so
//! that a crop with `theta = 0` never leaves the source cube `[-1, 1]^3`.

use crate::error::{Error, Result};

pub const NUM_PARAMS: usize = 6;

pub const SP: usize = 0;
pub const ST: usize = 1;
pub const THETA: usize = 2;
pub const DX: usize = 3;
pub const DY: usize = 4;
pub const DT: usize = 5;

pub const PARAM_NAMES: [&str; NUM_PARAMS] = ["sp", "st", "theta", "dx", "dy", "dt"];

/// Gradient with respect to the six crop parameters (same ordering).
pub type ParamGrad = [f64; NUM_PARAMS];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub s_p: f64,
    pub s_t: f64,
    pub theta: f64,
    pub dx: f64,
    pub dy: f64,
    pub dt: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        s_p: 1.0,
        s_t: 1.0,
        theta: 0.0,
        dx: 0.0,
        dy: 0.0,
        dt: 0.0,
    };

    pub fn to_array(&self) -> [f64; NUM_PARAMS] {
        [self.s_p, self.s_t, self.theta, self.dx, self.dy, self.dt]
    }

    pub fn from_array(a: [f64; NUM_PARAMS]) -> Self {
        AffineParams {
            s_p: a[SP],
            s_t: a[ST],
            theta: a[THETA],
            dx: a[DX],
            dy: a[DY],
            dt: a[DT],
        }
    }

    /// Checks scale ranges and the scale-dependent offset limits.
    pub fn validate(&self) -> Result<()> {
        let in_unit = |s: f64| s > 0.0 && s <= 1.0;
        if !in_unit(self.s_p) || !in_unit(self.s_t) {
            return Err(Error::Contract(format!(
                "scales must lie in (0, 1], got s_p={} s_t={}",
                self.s_p, self.s_t
            )));
        }
        let sp_room = 1.0 - self.s_p;
        let st_room = 1.0 - self.s_t;
        if self.dx.abs() > sp_room || self.dy.abs() > sp_room || self.dt.abs() > st_room {
            return Err(Error::Contract(format!("offsets exceed the crop's room: {self:?}")));
        }
        Ok(())
    }
}

/// Six raw generator outputs, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnitParams([f64; NUM_PARAMS]);

impl UnitParams {
    pub fn new(v: [f64; NUM_PARAMS]) -> Result<Self> {
        if v.iter().all(|x| (0.0..=1.0).contains(x)) {
            Ok(UnitParams(v))
        } else {
            Err(Error::Contract(format!("unit params outside [0, 1]: {v:?}")))
        }
    }

    pub fn splat(x: f64) -> Result<Self> {
        UnitParams::new([x; NUM_PARAMS])
    }

    pub fn values(&self) -> &[f64; NUM_PARAMS] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Affine map of `v ∈ [0, 1]` onto the interval.
    pub fn map(&self, v: f64) -> f64 {
        self.lo + v * (self.hi - self.lo)
    }
}

/// Static ranges for scales and rotation plus the early-stop detach bound.
/// Offset ranges are not stored: they follow from the mapped scales.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamBounds {
    pub spatial_scale: Interval,
    pub temporal_scale: Interval,
    pub rotation: Interval,
    pub detach_bound: f64,
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            spatial_scale: Interval::new(0.5, 1.0),
            temporal_scale: Interval::new(0.5, 1.0),
            rotation: Interval::new(0.0, 0.0),
            detach_bound: 0.2,
        }
    }
}

impl ParamBounds {
    pub fn validate(&self) -> Result<()> {
        let scale_ok = |i: &Interval| i.lo > 0.0 && i.lo <= i.hi && i.hi <= 1.0;
        if !scale_ok(&self.spatial_scale) {
            return Err(Error::config(
                "spatial_scale",
                format!("need 0 < min <= max <= 1, got {:?}", self.spatial_scale),
            ));
        }
        if !scale_ok(&self.temporal_scale) {
            return Err(Error::config(
                "temporal_scale",
                format!("need 0 < min <= max <= 1, got {:?}", self.temporal_scale),
            ));
        }
        if !(self.rotation.lo <= self.rotation.hi) || !self.rotation.lo.is_finite() || !self.rotation.hi.is_finite() {
            return Err(Error::config("rotation", "need finite min <= max"));
        }
        check_detach_bound(self.detach_bound)
    }
}

pub(crate) fn check_detach_bound(b: f64) -> Result<()> {
    if (0.0..=0.5).contains(&b) {
        Ok(())
    } else {
        Err(Error::config("detach_bound", format!("{b} is outside [0, 0.5]")))
    }
}

/// The 3×4 matrix mapping homogeneous crop coordinates to source coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineMatrix(pub [[f64; 4]; 3]);

impl AffineMatrix {
    /// Maps a crop-frame point `(x, y, t)` into the source frame.
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        let row = |r: &[f64; 4]| r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + r[3];
        [row(&m[0]), row(&m[1]), row(&m[2])]
    }
}

/// Per-entry gradient gate produced by the early-stop rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradientMask(pub [bool; NUM_PARAMS]);

impl GradientMask {
    pub const ALL: GradientMask = GradientMask([true; NUM_PARAMS]);
    pub const NONE: GradientMask = GradientMask([false; NUM_PARAMS]);

    pub fn flows(&self, i: usize) -> bool {
        self.0[i]
    }
}

/// A `T_c × H_c × W_c` lattice of `(x, y, t)` coordinates, row-major with `x`
/// fastest. Also used for per-coordinate gradients of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingGrid {
    dims: [usize; 3],
    coords: Vec<[f64; 3]>,
}

impl SamplingGrid {
    pub fn from_coords(dims: [usize; 3], coords: Vec<[f64; 3]>) -> Result<Self> {
        if dims.iter().product::<usize>() != coords.len() {
            return Err(Error::dim(format!(
                "grid dims {dims:?} do not match {} coordinates",
                coords.len()
            )));
        }
        Ok(SamplingGrid { dims, coords })
    }

    pub fn zeros_like(other: &SamplingGrid) -> Self {
        SamplingGrid {
            dims: other.dims,
            coords: vec![[0.0; 3]; other.coords.len()],
        }
    }

    /// `[t, h, w]`.
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

pub fn build_affine_matrix(p: &AffineParams) -> AffineMatrix {
    let (sin, cos) = p.theta.sin_cos();
    AffineMatrix([
        [p.s_p * cos, -sin, 0.0, p.dx],
        [sin, p.s_p * cos, 0.0, p.dy],
        [0.0, 0.0, p.s_t, p.dt],
    ])
}

/// Early-stop rule: values pass through, and entry `i` keeps its gradient only
/// while `|v_i - 0.5| <= 0.5 - b_detach`.
pub fn apply_early_stop(v: &UnitParams, detach_bound: f64) -> Result<(UnitParams, GradientMask)> {
    check_detach_bound(detach_bound)?;
    let limit = 0.5 - detach_bound;
    let mut mask = [false; NUM_PARAMS];
    for (m, &x) in mask.iter_mut().zip(v.values()) {
        *m = (x - 0.5).abs() <= limit;
    }
    Ok((*v, GradientMask(mask)))
}

/// Maps unit outputs into crop parameters. Scales and rotation use their
/// static intervals; offsets use `[s - 1, 1 - s]` built from the mapped scale.
pub fn clamp_params(v: &UnitParams, bounds: &ParamBounds) -> AffineParams {
    let v = v.values();
    let s_p = bounds.spatial_scale.map(v[SP]);
    let s_t = bounds.temporal_scale.map(v[ST]);
    let theta = bounds.rotation.map(v[THETA]);
    let sp_offsets = Interval::new(s_p - 1.0, 1.0 - s_p);
    let st_offsets = Interval::new(s_t - 1.0, 1.0 - s_t);
    AffineParams {
        s_p,
        s_t,
        theta,
        dx: sp_offsets.map(v[DX]),
        dy: sp_offsets.map(v[DY]),
        dt: st_offsets.map(v[DT]),
    }
}

/// Chain rule through [`clamp_params`], including the dependence of the
/// offset ranges on the mapped scales. Masked-off entries get zero.
pub fn clamp_params_backward(
    grad: &ParamGrad,
    v: &UnitParams,
    bounds: &ParamBounds,
    mask: &GradientMask,
) -> [f64; NUM_PARAMS] {
    let v = v.values();
    let s_p = bounds.spatial_scale.map(v[SP]);
    let s_t = bounds.temporal_scale.map(v[ST]);
    // offset = (s - 1) + v * 2(1 - s) = (1 - s)(2v - 1)
    let d_sp = grad[SP] + grad[DX] * (1.0 - 2.0 * v[DX]) + grad[DY] * (1.0 - 2.0 * v[DY]);
    let d_st = grad[ST] + grad[DT] * (1.0 - 2.0 * v[DT]);
    let mut out = [
        d_sp * bounds.spatial_scale.width(),
        d_st * bounds.temporal_scale.width(),
        grad[THETA] * bounds.rotation.width(),
        grad[DX] * 2.0 * (1.0 - s_p),
        grad[DY] * 2.0 * (1.0 - s_p),
        grad[DT] * 2.0 * (1.0 - s_t),
    ];
    for (g, &flows) in out.iter_mut().zip(&mask.0) {
        if !flows {
            *g = 0.0;
        }
    }
    out
}

/// Inverse of [`clamp_params`] for parameters already inside their ranges.
/// Zero-width intervals map to 0.5.
pub fn unclamp_params(p: &AffineParams, bounds: &ParamBounds) -> [f64; NUM_PARAMS] {
    let inv = |i: Interval, x: f64| {
        if i.width() > 0.0 {
            ((x - i.lo) / i.width()).clamp(0.0, 1.0)
        } else {
            0.5
        }
    };
    [
        inv(bounds.spatial_scale, p.s_p),
        inv(bounds.temporal_scale, p.s_t),
        inv(bounds.rotation, p.theta),
        inv(Interval::new(p.s_p - 1.0, 1.0 - p.s_p), p.dx),
        inv(Interval::new(p.s_p - 1.0, 1.0 - p.s_p), p.dy),
        inv(Interval::new(p.s_t - 1.0, 1.0 - p.s_t), p.dt),
    ]
}

/// Align-corners coordinates for an axis of `len` samples; a single sample
/// sits at 0.
pub fn axis_coords(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![0.0];
    }
    let denom = (len - 1) as f64;
    (0..len).map(|i| (2 * i) as f64 / denom - 1.0).collect()
}

pub fn generate_grid(t_c: usize, h_c: usize, w_c: usize) -> Result<SamplingGrid> {
    if t_c == 0 || h_c == 0 || w_c == 0 {
        return Err(Error::dim(format!("grid lengths must be >= 1, got {t_c}x{h_c}x{w_c}")));
    }
    let (ts, ys, xs) = (axis_coords(t_c), axis_coords(h_c), axis_coords(w_c));
    let mut coords = Vec::with_capacity(t_c * h_c * w_c);
    for &t in &ts {
        for &y in &ys {
            for &x in &xs {
                coords.push([x, y, t]);
            }
        }
    }
    Ok(SamplingGrid {
        dims: [t_c, h_c, w_c],
        coords,
    })
}

pub fn transform_grid(g: &SamplingGrid, a: &AffineMatrix) -> SamplingGrid {
    SamplingGrid {
        dims: g.dims,
        coords: g.coords.iter().map(|&p| a.apply(p)).collect(),
    }
}

/// Gradient of `sum(grad_out · transform_grid(g, A(p)))` with respect to `p`.
pub fn transform_grid_backward(
    grad_out: &SamplingGrid,
    g: &SamplingGrid,
    p: &AffineParams,
) -> Result<ParamGrad> {
    if grad_out.dims != g.dims {
        return Err(Error::dim(format!(
            "gradient grid {:?} does not match source grid {:?}",
            grad_out.dims, g.dims
        )));
    }
    let (sin, cos) = p.theta.sin_cos();
    let mut out = [0.0; NUM_PARAMS];
    for (go, c) in grad_out.coords.iter().zip(&g.coords) {
        let [gx, gy, gt] = *go;
        let [x, y, t] = *c;
        out[SP] += gx * cos * x + gy * cos * y;
        out[ST] += gt * t;
        out[THETA] += gx * (-p.s_p * sin * x - cos * y) + gy * (cos * x - p.s_p * sin * y);
        out[DX] += gx;
        out[DY] += gy;
        out[DT] += gt;
    }
    Ok(out)
}
