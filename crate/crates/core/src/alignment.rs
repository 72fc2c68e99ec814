//! Statistics that make losses and metrics invariant to scale, or to shift and scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Grid2D, Unit, ValidityMask};

/// Smallest population standard deviation accepted by a normalization.
pub const STD_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl AlignmentStats {
    /// Population mean and standard deviation; errors on fewer than two values or
    /// a standard deviation below [`STD_EPSILON`].
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::TooFewPixels {
                needed: 2,
                have: values.len(),
            });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std >= STD_EPSILON) {
            return Err(Error::Degenerate(format!(
                "standard deviation {std:e} below {STD_EPSILON:e}"
            )));
        }
        Ok(Self {
            mean,
            std,
            count: values.len(),
        })
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// `(D - mean) / std` over the valid pixels; invalid pixels keep their payload.
pub fn normalize_meanstd(g: &Grid2D, mask: &ValidityMask) -> Result<(Grid2D, AlignmentStats)> {
    g.check_mask(mask)?;
    let stats = AlignmentStats::of(&g.gather(mask))?;
    let mut values = g.values().to_vec();
    for i in mask.indices() {
        values[i] = stats.normalize(values[i]);
    }
    let out = Grid2D::new(g.width(), g.height(), values, Unit::Dimensionless)?;
    Ok((out, stats))
}

/// Which order statistics a median was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MedianSupport {
    /// Odd count: the single middle element.
    One(usize),
    /// Even count: the two middle elements, averaged.
    Two(usize, usize),
}

/// Median of `values` along with the positions it was taken from.
/// Even counts average the two middle order statistics.
pub fn median_with_support(values: &[f64]) -> Result<(f64, MedianSupport)> {
    if values.is_empty() {
        return Err(Error::TooFewPixels { needed: 1, have: 0 });
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    // Index tie-break keeps the selection deterministic.
    order.sort_unstable_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let n = values.len();
    if n % 2 == 1 {
        let i = order[n / 2];
        Ok((values[i], MedianSupport::One(i)))
    } else {
        let (i, j) = (order[n / 2 - 1], order[n / 2]);
        Ok((0.5 * (values[i] + values[j]), MedianSupport::Two(i, j)))
    }
}

pub fn median(values: &[f64]) -> Result<f64> {
    median_with_support(values).map(|(m, _)| m)
}

/// Median over the valid pixels of `l - ln(d*)`.
pub fn median_log_shift(l: &Grid2D, d_star: &Grid2D, mask: &ValidityMask) -> Result<f64> {
    l.check_same_dims(d_star)?;
    d_star.check_positive(mask)?;
    let residuals: Vec<f64> = mask
        .indices()
        .map(|i| l.values()[i] - d_star.values()[i].ln())
        .collect();
    median(&residuals)
}

/// Rescales a log-depth prediction so that its median log-residual against `gt` is zero,
/// returning metric depth `exp(l - mu)`.
pub fn scale_align_depth(pred_log: &Grid2D, gt: &Grid2D, mask: &ValidityMask) -> Result<Grid2D> {
    let mu = median_log_shift(pred_log, gt, mask)?;
    let aligned = pred_log.map(Unit::MetersDepth, |l| (l - mu).exp());
    aligned.check_positive(mask)?;
    Ok(aligned)
}

/// Least-squares fit of `scale * pred + shift` to the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftScaleFit {
    pub scale: f64,
    pub shift: f64,
    pub residual_rms: f64,
}

pub fn lsq_shift_scale(pred: &Grid2D, gt: &Grid2D, mask: &ValidityMask) -> Result<ShiftScaleFit> {
    pred.check_same_dims(gt)?;
    pred.check_mask(mask)?;
    let n = mask.require(2)? as f64;
    let (p, g) = (pred.values(), gt.values());

    let (mut sp, mut sg) = (0.0, 0.0);
    for i in mask.indices() {
        sp += p[i];
        sg += g[i];
    }
    let (mp, mg) = (sp / n, sg / n);
    let (mut spp, mut spg) = (0.0, 0.0);
    for i in mask.indices() {
        let dp = p[i] - mp;
        spp += dp * dp;
        spg += dp * (g[i] - mg);
    }
    // Centered normal equations; singular when the prediction is constant.
    if !((spp / n).sqrt() >= STD_EPSILON) {
        return Err(Error::Degenerate(
            "prediction is constant on the mask; normal equations are singular".into(),
        ));
    }
    let scale = spg / spp;
    let shift = mg - scale * mp;
    let sq: f64 = mask
        .indices()
        .map(|i| (scale * p[i] + shift - g[i]).powi(2))
        .sum();
    Ok(ShiftScaleFit {
        scale,
        shift,
        residual_rms: (sq / n).sqrt(),
    })
}
