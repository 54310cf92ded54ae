//! Axis-aligned crop cubes and the two disparity metrics between views.

use crate::affine::{AffineParams, Interval};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropCube {
    pub x: Interval,
    pub y: Interval,
    pub t: Interval,
}

impl CropCube {
    pub fn axes(&self) -> [Interval; 3] {
        [self.x, self.y, self.t]
    }

    pub fn center(&self) -> [f64; 3] {
        self.axes().map(|i| 0.5 * (i.lo + i.hi))
    }

    pub fn extents(&self) -> [f64; 3] {
        self.axes().map(|i| i.width())
    }

    /// Per-axis scale (half extent): `[s_p, s_p, s_t]`.
    pub fn scales(&self) -> [f64; 3] {
        self.extents().map(|e| 0.5 * e)
    }

    pub fn volume(&self) -> f64 {
        self.extents().iter().product()
    }

    pub fn contains_point(&self, p: [f64; 3]) -> bool {
        self.axes().iter().zip(p).all(|(i, v)| i.lo <= v && v <= i.hi)
    }

    pub fn within_unit_cube(&self) -> bool {
        self.axes().iter().all(|i| i.lo >= -1.0 && i.hi <= 1.0)
    }
}

/// The region of the source covered by a rotation-free crop.
pub fn crop_cube_from_params(p: &AffineParams) -> Result<CropCube> {
    if p.theta != 0.0 {
        return Err(Error::UnsupportedMetric(format!(
            "crop cubes need theta = 0, got {}",
            p.theta
        )));
    }
    Ok(CropCube {
        x: Interval::new(p.dx - p.s_p, p.dx + p.s_p),
        y: Interval::new(p.dy - p.s_p, p.dy + p.s_p),
        t: Interval::new(p.dt - p.s_t, p.dt + p.s_t),
    })
}

/// Spatio-temporal intersection over union.
pub fn st_iou(a: &CropCube, b: &CropCube) -> f64 {
    let inter: f64 = a
        .axes()
        .iter()
        .zip(b.axes())
        .map(|(p, q)| (p.hi.min(q.hi) - p.lo.max(q.lo)).max(0.0))
        .product();
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Manhattan distance between cube centers, raw and normalized by the total
/// room both crops have to move (`Σ_axis (1 - s_a) + (1 - s_b)`). The
/// normalized value is 0 when neither crop can move.
pub fn center_manhattan(a: &CropCube, b: &CropCube) -> (f64, f64) {
    let (ca, cb) = (a.center(), b.center());
    let raw: f64 = ca.iter().zip(cb).map(|(p, q)| (p - q).abs()).sum();
    let (sa, sb) = (a.scales(), b.scales());
    let room: f64 = sa.iter().zip(sb).map(|(p, q)| (1.0 - p) + (1.0 - q)).sum();
    let norm = if room > 0.0 { (raw / room).min(1.0) } else { 0.0 };
    (raw, norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(s: f64, dx: f64, dy: f64, dt: f64) -> AffineParams {
        AffineParams { s_p: s, s_t: s, theta: 0.0, dx, dy, dt }
    }

    #[test]
    fn cube_examples() {
        let c = crop_cube_from_params(&params(0.5, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(c.axes(), [Interval::new(-0.5, 0.5); 3]);
        let full = crop_cube_from_params(&AffineParams::IDENTITY).unwrap();
        assert_eq!([full.x, full.y], [Interval::new(-1.0, 1.0); 2]);
        let shifted = crop_cube_from_params(&params(0.5, 0.5, 0.0, 0.0)).unwrap();
        assert_eq!(shifted.x, Interval::new(0.0, 1.0));
        let rotated = AffineParams { theta: 0.1, ..AffineParams::IDENTITY };
        assert!(matches!(crop_cube_from_params(&rotated), Err(Error::UnsupportedMetric(_))));
    }

    #[test]
    fn iou_examples() {
        let a = crop_cube_from_params(&params(0.5, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(st_iou(&a, &a), 1.0);
        let far = crop_cube_from_params(&params(0.4, 0.6, 0.0, 0.0)).unwrap();
        let near = crop_cube_from_params(&params(0.4, -0.6, 0.0, 0.0)).unwrap();
        assert_eq!(st_iou(&far, &near), 0.0);
        let b = crop_cube_from_params(&params(0.5, 0.5, 0.0, 0.0)).unwrap();
        assert!((st_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn manhattan_examples() {
        let a = crop_cube_from_params(&params(0.5, 0.1, 0.2, -0.3)).unwrap();
        assert_eq!(center_manhattan(&a, &a), (0.0, 0.0));
        let lo = crop_cube_from_params(&params(0.5, -0.5, -0.5, -0.5)).unwrap();
        let hi = crop_cube_from_params(&params(0.5, 0.5, 0.5, 0.5)).unwrap();
        assert_eq!(center_manhattan(&lo, &hi), (3.0, 1.0));
        let full = crop_cube_from_params(&AffineParams::IDENTITY).unwrap();
        assert_eq!(center_manhattan(&full, &full).1, 0.0);
    }

    /// Monte-Carlo membership oracle for the interval-arithmetic IoU.
    #[test]
    fn iou_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let mut draw = || {
                let s = rng.random_range(0.3..1.0);
                let st = rng.random_range(0.3..1.0);
                let room = 1.0 - s;
                crop_cube_from_params(&AffineParams {
                    s_p: s,
                    s_t: st,
                    theta: 0.0,
                    dx: rng.random_range(-room..=room),
                    dy: rng.random_range(-room..=room),
                    dt: rng.random_range(-(1.0 - st)..=(1.0 - st)),
                })
                .unwrap()
            };
            let (a, b) = (draw(), draw());
            let (mut inter, mut union) = (0u64, 0u64);
            for _ in 0..200_000 {
                let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
                let (ia, ib) = (a.contains_point(p), b.contains_point(p));
                inter += (ia && ib) as u64;
                union += (ia || ib) as u64;
            }
            let mc = inter as f64 / union as f64;
            assert!((mc - st_iou(&a, &b)).abs() < 0.01);
        }
    }
}
