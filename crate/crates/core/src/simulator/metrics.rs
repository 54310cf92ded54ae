use std::io::Write;

use crate::affine::NUM_PARAMS;
use crate::error::Result;

pub const CSV_HEADER: &str = "step,loss,iou,dist_raw,dist_norm,v_sp,v_st,v_theta,v_dx,v_dy,v_dt";

/// Nine significant digits, scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.8e}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub iou: f64,
    pub dist_raw: f64,
    pub dist_norm: f64,
    /// Batch mean of each generator output (or its equivalent for baselines).
    pub v_mean: [f64; NUM_PARAMS],
    /// Largest absolute gradient that reached either cropper this step.
    /// Kept in memory only; not part of the CSV.
    pub cropper_grad_max: f64,
}

impl StepRecord {
    pub fn csv_fields(&self) -> String {
        let mut fields = vec![
            self.step.to_string(),
            fmt_f64(self.loss),
            fmt_f64(self.iou),
            fmt_f64(self.dist_raw),
            fmt_f64(self.dist_norm),
        ];
        fields.extend(self.v_mean.iter().map(|&v| fmt_f64(v)));
        fields.join(",")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub records: Vec<StepRecord>,
}

impl MetricsLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{}", r.csv_fields())?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }

    /// Mean of `f` over records in `[from, to)`.
    pub fn window_mean(&self, from: usize, to: usize, f: impl Fn(&StepRecord) -> f64) -> f64 {
        let slice = &self.records[from.min(self.len())..to.min(self.len())];
        if slice.is_empty() {
            return f64::NAN;
        }
        slice.iter().map(f).sum::<f64>() / slice.len() as f64
    }

    /// Mean of `f` over the first `fraction` of steps.
    pub fn head_mean(&self, fraction: f64, f: impl Fn(&StepRecord) -> f64) -> f64 {
        let n = ((self.len() as f64 * fraction).round() as usize).max(1);
        self.window_mean(0, n, f)
    }

    /// Mean of `f` over the last `fraction` of steps.
    pub fn tail_mean(&self, fraction: f64, f: impl Fn(&StepRecord) -> f64) -> f64 {
        let n = ((self.len() as f64 * fraction).round() as usize).max(1);
        self.window_mean(self.len().saturating_sub(n), self.len(), f)
    }
}
