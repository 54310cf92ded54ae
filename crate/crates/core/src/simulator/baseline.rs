//! Fixed cropping strategies used as baselines against the learned cropper.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::affine::{clamp_params, AffineParams, ParamBounds, UnitParams};
use crate::error::{Error, Result};

/// Placement jitter for the Simple and Hard strategies.
pub const PLACEMENT_JITTER: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    ParamCrop,
    Random,
    Simple,
    Hard,
    Manual,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::ParamCrop,
        Strategy::Random,
        Strategy::Simple,
        Strategy::Hard,
        Strategy::Manual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::ParamCrop => "paramcrop",
            Strategy::Random => "random",
            Strategy::Simple => "simple",
            Strategy::Hard => "hard",
            Strategy::Manual => "manual",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s.trim())
            .ok_or_else(|| Error::config("strategy", format!("unknown strategy `{s}`")))
    }
}

/// Target normalized center distance over training for the Manual strategy.
/// Holds `start` until `breakpoint` (a fraction of training), then ramps
/// linearly to `end` at the final step. The default is a plain 0 → 1 ramp;
/// a late breakpoint gives the "more distance late in training" variants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManualSchedule {
    pub start: f64,
    pub end: f64,
    pub breakpoint: f64,
}

impl Default for ManualSchedule {
    fn default() -> Self {
        ManualSchedule {
            start: 0.0,
            end: 1.0,
            breakpoint: 0.0,
        }
    }
}

impl ManualSchedule {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("manual_start", self.start), ("manual_end", self.end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(name, format!("{v} is outside [0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.breakpoint) {
            return Err(Error::config("manual_breakpoint", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn target(&self, step: usize, total_steps: usize) -> f64 {
        let progress = if total_steps <= 1 {
            1.0
        } else {
            step as f64 / (total_steps - 1) as f64
        };
        if progress <= self.breakpoint {
            return self.start;
        }
        let ramp = (progress - self.breakpoint) / (1.0 - self.breakpoint);
        self.start + (self.end - self.start) * ramp
    }
}

fn jitter<R: Rng>(rng: &mut R, value: f64, room: f64) -> f64 {
    (value + rng.random_range(-PLACEMENT_JITTER..=PLACEMENT_JITTER)).clamp(-room, room)
}

/// Rotation used by fixed placements: the midpoint of the allowed range.
fn fixed_theta(bounds: &ParamBounds) -> f64 {
    bounds.rotation.map(0.5)
}

/// Crop parameters for both views under a non-learned strategy.
pub fn baseline_params<R: Rng>(
    strategy: Strategy,
    step: usize,
    total_steps: usize,
    rng: &mut R,
    bounds: &ParamBounds,
    schedule: &ManualSchedule,
) -> Result<(AffineParams, AffineParams)> {
    match strategy {
        Strategy::ParamCrop => Err(Error::config(
            "strategy",
            "paramcrop crops are produced by the learned generator, not a baseline",
        )),
        Strategy::Random => {
            let mut draw = || -> Result<AffineParams> {
                let v = UnitParams::new(std::array::from_fn(|_| rng.random::<f64>()))?;
                Ok(clamp_params(&v, bounds))
            };
            Ok((draw()?, draw()?))
        }
        Strategy::Simple => {
            let s_p = bounds.spatial_scale.hi;
            let s_t = bounds.temporal_scale.hi;
            let (rp, rt) = (1.0 - s_p, 1.0 - s_t);
            let mut place = || AffineParams {
                s_p,
                s_t,
                theta: fixed_theta(bounds),
                dx: jitter(rng, 0.0, rp),
                dy: jitter(rng, 0.0, rp),
                dt: jitter(rng, 0.0, rt),
            };
            Ok((place(), place()))
        }
        Strategy::Hard => {
            let s_p = bounds.spatial_scale.lo;
            let s_t = bounds.temporal_scale.lo;
            let (rp, rt) = (1.0 - s_p, 1.0 - s_t);
            let mut place = |sign: f64| AffineParams {
                s_p,
                s_t,
                theta: fixed_theta(bounds),
                dx: jitter(rng, sign * rp, rp),
                dy: jitter(rng, sign * rp, rp),
                dt: jitter(rng, sign * rt, rt),
            };
            let a = place(-1.0);
            Ok((a, place(1.0)))
        }
        Strategy::Manual => {
            let target = schedule.target(step, total_steps);
            let s_p = bounds.spatial_scale.lo;
            let s_t = bounds.temporal_scale.lo;
            // Both views on the main diagonal at ±target of their room gives a
            // normalized distance of exactly `target`.
            let place = |sign: f64| AffineParams {
                s_p,
                s_t,
                theta: fixed_theta(bounds),
                dx: sign * target * (1.0 - s_p),
                dy: sign * target * (1.0 - s_p),
                dt: sign * target * (1.0 - s_t),
            };
            Ok((place(-1.0), place(1.0)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::cube::{center_manhattan, crop_cube_from_params, st_iou};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn metrics(p: &(AffineParams, AffineParams)) -> (f64, f64) {
        let a = crop_cube_from_params(&p.0).unwrap();
        let b = crop_cube_from_params(&p.1).unwrap();
        (st_iou(&a, &b), center_manhattan(&a, &b).1)
    }

    #[test]
    fn parse_names() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        let err = "cubic".parse::<Strategy>().unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "strategy"));
    }

    #[test]
    fn simple_is_identical_and_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = ParamBounds::default();
        for step in [0, 10, 99] {
            let p = baseline_params(Strategy::Simple, step, 100, &mut rng, &b, &ManualSchedule::default()).unwrap();
            assert_eq!(p.0, p.1);
            assert_eq!(p.0, AffineParams::IDENTITY);
            assert_eq!(metrics(&p).0, 1.0);
        }
    }

    #[test]
    fn hard_sits_in_opposite_corners() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = ParamBounds::default();
        let p = baseline_params(Strategy::Hard, 0, 10, &mut rng, &b, &ManualSchedule::default()).unwrap();
        let (iou, dist) = metrics(&p);
        assert!(iou < 0.01 && dist > 0.95, "iou {iou} dist {dist}");
        p.0.validate().unwrap();
        p.1.validate().unwrap();
    }

    #[test]
    fn manual_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = ParamBounds::default();
        let sched = ManualSchedule::default();
        let first = baseline_params(Strategy::Manual, 0, 50, &mut rng, &b, &sched).unwrap();
        let last = baseline_params(Strategy::Manual, 49, 50, &mut rng, &b, &sched).unwrap();
        assert_eq!(metrics(&first).1, 0.0);
        assert!((metrics(&last).1 - 1.0).abs() < 1e-12);
        let mid = baseline_params(Strategy::Manual, 20, 41, &mut rng, &b, &sched).unwrap();
        assert!((metrics(&mid).1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn manual_breakpoint_holds_then_ramps() {
        let sched = ManualSchedule { start: 0.2, end: 0.9, breakpoint: 0.5 };
        sched.validate().unwrap();
        assert_eq!(sched.target(0, 101), 0.2);
        assert_eq!(sched.target(50, 101), 0.2);
        assert!((sched.target(75, 101) - 0.55).abs() < 1e-12);
        assert!((sched.target(100, 101) - 0.9).abs() < 1e-12);
        assert!(ManualSchedule { breakpoint: 1.0, ..sched }.validate().is_err());
    }

    #[test]
    fn random_is_stationary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = ParamBounds::default();
        let total = 10_000;
        let dists: Vec<f64> = (0..total)
            .map(|s| metrics(&baseline_params(Strategy::Random, s, total, &mut rng, &b, &ManualSchedule::default()).unwrap()).1)
            .collect();
        let q = total / 4;
        let first = dists[..q].iter().sum::<f64>() / q as f64;
        let last = dists[total - q..].iter().sum::<f64>() / q as f64;
        assert!((first - last).abs() / first < 0.05, "{first} vs {last}");
    }

    #[test]
    fn paramcrop_is_not_a_baseline() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = baseline_params(Strategy::ParamCrop, 0, 1, &mut rng, &ParamBounds::default(), &ManualSchedule::default());
        assert!(matches!(r, Err(Error::Config { .. })));
    }
}
