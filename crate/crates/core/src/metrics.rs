//! Depth metrics and the scale-aligned evaluation wrapper.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::alignment::{lsq_shift_scale, scale_align_depth};
use crate::error::{Error, Result};
use crate::geometry::{depth_to_disparity, unproject};
use crate::raster::{CameraIntrinsics, Grid2D, PointCloud, ValidityMask};

pub const DEFAULT_DELTA_THRESHOLD: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Fraction of pixels whose depth ratio exceeds the threshold.
    pub delta_error: f64,
    pub rel: f64,
    /// Meters.
    pub cloud_rmse: f64,
    /// |shift| of the least-squares affine fit of predicted to true disparity.
    pub shift_indicator: f64,
}

impl MetricReport {
    /// Field-wise mean of several reports.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let sum = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(MetricReport {
            delta_error: sum(|r| r.delta_error),
            rel: sum(|r| r.rel),
            cloud_rmse: sum(|r| r.cloud_rmse),
            shift_indicator: sum(|r| r.shift_indicator),
        })
    }
}

fn checked_pair(pred: &Grid2D, gt: &Grid2D, mask: &ValidityMask) -> Result<usize> {
    pred.check_same_dims(gt)?;
    gt.check_positive(mask)?;
    mask.require(1)
}

/// Fraction of valid pixels with `max(pred/gt, gt/pred) > threshold` (strict).
pub fn delta_error(pred: &Grid2D, gt: &Grid2D, mask: &ValidityMask, threshold: f64) -> Result<f64> {
    let n = checked_pair(pred, gt, mask)?;
    pred.check_positive(mask)?;
    let (p, g) = (pred.values(), gt.values());
    let bad = mask
        .indices()
        .filter(|&i| (p[i] / g[i]).max(g[i] / p[i]) > threshold)
        .count();
    Ok(bad as f64 / n as f64)
}

/// Mean absolute relative error `|pred - gt| / gt`.
pub fn rel_error(pred: &Grid2D, gt: &Grid2D, mask: &ValidityMask) -> Result<f64> {
    let n = checked_pair(pred, gt, mask)?;
    let (p, g) = (pred.values(), gt.values());
    let sum: f64 = mask.indices().map(|i| (p[i] - g[i]).abs() / g[i]).sum();
    Ok(sum / n as f64)
}

/// RMS Euclidean distance between corresponding points.
///
/// When both clouds carry source pixels, points are paired by source pixel;
/// otherwise they are paired by position.
pub fn cloud_rmse(pred: &PointCloud, gt: &PointCloud) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "clouds differ in size: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::TooFewPixels { needed: 1, have: 0 });
    }
    let dist2 = |a: &[f64; 3], b: &[f64; 3]| {
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
    };
    let sum: f64 = match (pred.source(), gt.source()) {
        (Some(ps), Some(gs)) => {
            let lookup: HashMap<(usize, usize), usize> =
                gs.iter().enumerate().map(|(k, s)| (*s, k)).collect();
            let mut sum = 0.0;
            for (p, src) in pred.points().iter().zip(ps) {
                let k = lookup.get(src).ok_or_else(|| {
                    Error::InvalidArgument(format!("source pixel {src:?} has no match"))
                })?;
                sum += dist2(p, &gt.points()[*k]);
            }
            sum
        }
        _ => pred
            .points()
            .iter()
            .zip(gt.points())
            .map(|(a, b)| dist2(a, b))
            .sum(),
    };
    Ok((sum / pred.len() as f64).sqrt())
}

/// Scale-aligns a log-depth prediction, then reports threshold error, relative error,
/// point-cloud RMSE and the disparity shift indicator.
pub fn evaluate_uts(
    pred_log: &Grid2D,
    gt_depth: &Grid2D,
    mask: &ValidityMask,
    cam: &CameraIntrinsics,
) -> Result<MetricReport> {
    let aligned = scale_align_depth(pred_log, gt_depth, mask)?;
    let delta_error = delta_error(&aligned, gt_depth, mask, DEFAULT_DELTA_THRESHOLD)?;
    let rel = rel_error(&aligned, gt_depth, mask)?;
    let cloud_rmse = cloud_rmse(
        &unproject(&aligned, mask, cam)?,
        &unproject(gt_depth, mask, cam)?,
    )?;
    let fit = lsq_shift_scale(
        &depth_to_disparity(&aligned, mask)?,
        &depth_to_disparity(gt_depth, mask)?,
        mask,
    )?;
    Ok(MetricReport {
        delta_error,
        rel,
        cloud_rmse,
        shift_indicator: fit.shift.abs(),
    })
}
