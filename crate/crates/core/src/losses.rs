//! Scale-invariant (UTS) and shift-and-scale-invariant (UTSS) L1 losses on log-depth
//! predictions, their per-sample mixture, and a central-difference gradient checker.
//!
//! Gradients are exact almost everywhere: they flow through the alignment statistics
//! (median of log-residuals, mean and population std of disparity), and `sign(0) = 0`.
//!
//! The `*_terms` functions work on compact slices holding only the supervised pixels;
//! the grid-level functions gather through a mask and scatter the gradient back.

use crate::alignment::{median_with_support, AlignmentStats, MedianSupport};
use crate::error::{Error, Result};
use crate::raster::{Grid2D, SupervisionClass, ValidityMask};
use crate::rng::Rng;

/// Loss value and its gradient with respect to the predicted log-depth.
///
/// `grad` is laid out like the prediction grid; masked-out pixels hold exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LossValueGrad {
    fn scatter(value: f64, compact: &[f64], mask: &ValidityMask) -> Self {
        let mut grad = vec![0.0; mask.bits().len()];
        for (i, g) in mask.indices().zip(compact) {
            grad[i] = *g;
        }
        Self { value, grad }
    }

    /// Gradient at the valid pixels only, in row-major order.
    pub fn valid_grad(&self, mask: &ValidityMask) -> Vec<f64> {
        mask.indices().map(|i| self.grad[i]).collect()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "prediction has {} pixels, target has {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Median-aligned L1 on log-depth: `mean |l - ln d* - median(l - ln d*)|`.
pub fn uts_terms(l: &[f64], log_gt: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_lengths(l, log_gt)?;
    let residuals: Vec<f64> = l.iter().zip(log_gt).map(|(a, b)| a - b).collect();
    let (mu, support) = median_with_support(&residuals)?;
    let n = residuals.len() as f64;

    let signs: Vec<f64> = residuals.iter().map(|r| sign(r - mu)).collect();
    let value = residuals.iter().map(|r| (r - mu).abs()).sum::<f64>() / n;

    // d value / d mu = -sum(sign) / n, routed to the order statistics mu was built from.
    let through_mu = -signs.iter().sum::<f64>() / n;
    let mut grad: Vec<f64> = signs.iter().map(|s| s / n).collect();
    match support {
        MedianSupport::One(i) => grad[i] += through_mu,
        MedianSupport::Two(i, j) => {
            grad[i] += 0.5 * through_mu;
            grad[j] += 0.5 * through_mu;
        }
    }
    Ok((value, grad))
}

/// Mean/std-normalized L1 between predicted disparity `exp(-l)` and target disparity.
pub fn utss_terms(l: &[f64], gt_disp: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_lengths(l, gt_disp)?;
    let disp: Vec<f64> = l.iter().map(|v| (-v).exp()).collect();
    let pred_stats = AlignmentStats::of(&disp)?;
    let gt_stats = AlignmentStats::of(gt_disp)?;
    let n = disp.len() as f64;

    let pred_hat: Vec<f64> = disp.iter().map(|&d| pred_stats.normalize(d)).collect();
    let gt_hat = gt_disp.iter().map(|&d| gt_stats.normalize(d));

    let mut value = 0.0;
    let mut upstream = Vec::with_capacity(disp.len());
    for (p, g) in pred_hat.iter().zip(gt_hat) {
        value += (p - g).abs();
        upstream.push(sign(p - g) / n);
    }
    value /= n;

    // Backprop through (D - mean) / std with population std:
    // dL/dD_j = (g_j - mean(g) - Dhat_j * mean(g * Dhat)) / std.
    let mean_g = upstream.iter().sum::<f64>() / n;
    let mean_g_hat = upstream
        .iter()
        .zip(&pred_hat)
        .map(|(g, h)| g * h)
        .sum::<f64>()
        / n;
    let grad = upstream
        .iter()
        .zip(&pred_hat)
        .zip(&disp)
        .map(|((g, h), d)| {
            let d_disp = (g - mean_g - h * mean_g_hat) / pred_stats.std;
            // dD/dl = -D
            -d * d_disp
        })
        .collect();
    Ok((value, grad))
}

/// Per-sample training loss. `target` holds depth for ABSOLUTE/UTS samples and
/// disparity for UTSS samples.
pub fn mixture_terms(l: &[f64], target: &[f64], cls: SupervisionClass) -> Result<(f64, Vec<f64>)> {
    if !cls.uses_uts_term() {
        return utss_terms(l, target);
    }
    if let Some(bad) = target.iter().find(|&&d| !(d > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "depth target must be positive, found {bad}"
        )));
    }
    let log_gt: Vec<f64> = target.iter().map(|d| d.ln()).collect();
    let disp: Vec<f64> = target.iter().map(|d| 1.0 / d).collect();
    let (uts, g_uts) = uts_terms(l, &log_gt)?;
    let (utss, g_utss) = utss_terms(l, &disp)?;
    let grad = g_uts.iter().zip(&g_utss).map(|(a, b)| a + b).collect();
    Ok((uts + utss, grad))
}

fn gather_pair(a: &Grid2D, b: &Grid2D, mask: &ValidityMask) -> Result<(Vec<f64>, Vec<f64>)> {
    a.check_same_dims(b)?;
    a.check_mask(mask)?;
    Ok((a.gather(mask), b.gather(mask)))
}

pub fn uts_loss(l: &Grid2D, d_star: &Grid2D, mask: &ValidityMask) -> Result<LossValueGrad> {
    d_star.check_positive(mask)?;
    let (lv, dv) = gather_pair(l, d_star, mask)?;
    let log_gt: Vec<f64> = dv.iter().map(|d| d.ln()).collect();
    let (value, grad) = uts_terms(&lv, &log_gt)?;
    Ok(LossValueGrad::scatter(value, &grad, mask))
}

pub fn utss_loss(l: &Grid2D, gt_disp: &Grid2D, mask: &ValidityMask) -> Result<LossValueGrad> {
    let (lv, dv) = gather_pair(l, gt_disp, mask)?;
    let (value, grad) = utss_terms(&lv, &dv)?;
    Ok(LossValueGrad::scatter(value, &grad, mask))
}

pub fn mixture_loss(
    l: &Grid2D,
    target: &Grid2D,
    mask: &ValidityMask,
    cls: SupervisionClass,
) -> Result<LossValueGrad> {
    if cls.uses_uts_term() {
        target.check_positive(mask)?;
    }
    let (lv, tv) = gather_pair(l, target, mask)?;
    let (value, grad) = mixture_terms(&lv, &tv, cls)?;
    Ok(LossValueGrad::scatter(value, &grad, mask))
}

/// Outcome of a central-difference gradient comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest relative deviation between analytic and numerical partials.
    pub max_rel_error: f64,
    /// Number of times the point was jittered to escape a kink.
    pub resamples: usize,
}

/// Resampling budget before a point is declared non-generic.
pub const MAX_RESAMPLES: usize = 10;

/// Compares the analytic gradient of `f` at `x` with central differences on `coords`.
///
/// A coordinate whose one-sided differences disagree sits on a kink (an L1 zero or a
/// median tie) unless the disagreement scales linearly with the step, as smooth
/// curvature does; this is tested at `h / 2` and `2 h`. On a kink the whole point is
/// jittered by `jitter * N(0, 1)` per coordinate and the check restarts.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-3 * max_k |a_k|)`, so partials that
/// vanish are measured against the overall gradient scale.
pub fn check_gradient<F>(
    x: &[f64],
    coords: &[usize],
    h: f64,
    jitter: f64,
    rng: &mut Rng,
    mut f: F,
) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut point = x.to_vec();
    'attempt: for resamples in 0..=MAX_RESAMPLES {
        if resamples > 0 {
            for v in point.iter_mut() {
                *v += jitter * rng.normal();
            }
        }
        let (f0, analytic) = f(&point)?;
        if analytic.len() != point.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient has {} entries for {} coordinates",
                analytic.len(),
                point.len()
            )));
        }
        let scale = coords
            .iter()
            .map(|&i| analytic[i].abs())
            .fold(0.0, f64::max);
        let floor = (1e-3 * scale).max(1e-12);

        let mut worst: f64 = 0.0;
        for &i in coords {
            let mut sided = |step: f64| -> Result<(f64, f64)> {
                let orig = point[i];
                point[i] = orig + step;
                let plus = f(&point)?.0;
                point[i] = orig - step;
                let minus = f(&point)?.0;
                point[i] = orig;
                Ok((plus, minus))
            };
            let (plus, minus) = sided(h)?;
            let gap = |plus: f64, minus: f64, step: f64| ((plus - f0) - (f0 - minus)) / step;
            let forward = (plus - f0) / h;
            let backward = (f0 - minus) / h;
            let g = gap(plus, minus, h);
            if g.abs() > 1e-7 + 1e-3 * forward.abs().max(backward.abs()) {
                let (p2, m2) = sided(0.5 * h)?;
                let (p4, m4) = sided(2.0 * h)?;
                let half = gap(p2, m2, 0.5 * h) / g;
                let double = gap(p4, m4, 2.0 * h) / g;
                if !((0.4..=0.6).contains(&half) && (1.6..=2.4).contains(&double)) {
                    continue 'attempt;
                }
            }
            let numeric = (plus - minus) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs()).max(floor);
            worst = worst.max((analytic[i] - numeric).abs() / denom);
        }
        return Ok(GradCheck {
            max_rel_error: worst,
            resamples,
        });
    }
    Err(Error::NonGenericPoint(MAX_RESAMPLES))
}

/// Finite-difference check of a grid loss with respect to the prediction at every valid pixel.
pub fn finite_diff_check<F>(
    loss: F,
    l: &Grid2D,
    mask: &ValidityMask,
    h: f64,
    seed: u64,
) -> Result<GradCheck>
where
    F: Fn(&Grid2D) -> Result<LossValueGrad>,
{
    l.check_mask(mask)?;
    let coords: Vec<usize> = mask.indices().collect();
    let mut rng = Rng::new(seed);
    let (w, hgt, unit) = (l.width(), l.height(), l.unit());
    check_gradient(l.values(), &coords, h, 1e-3, &mut rng, |x| {
        let grid = Grid2D::new(w, hgt, x.to_vec(), unit)?;
        let out = loss(&grid)?;
        Ok((out.value, out.grad))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Unit;
    use crate::rng::Rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn row(values: &[f64], unit: Unit) -> Grid2D {
        Grid2D::new(values.len(), 1, values.to_vec(), unit).unwrap()
    }

    fn random_row(rng: &mut Rng, n: usize, lo: f64, hi: f64, unit: Unit) -> Grid2D {
        let v: Vec<f64> = (0..n).map(|_| rng.uniform(lo, hi)).collect();
        row(&v, unit)
    }

    #[test]
    fn uts_worked_examples() {
        let ones = row(&[1.0; 4], Unit::MetersDepth);
        let out = uts_loss(&row(&[0.0, 1.0, 2.0, 3.0], Unit::LogDepth), &ones, &ValidityMask::full(4, 1))
            .unwrap();
        assert_abs_diff_eq!(out.value, 1.0, epsilon = 1e-12);

        let ones = row(&[1.0; 3], Unit::MetersDepth);
        let out = uts_loss(&row(&[0.0, 2.0, 10.0], Unit::LogDepth), &ones, &ValidityMask::full(3, 1))
            .unwrap();
        assert_abs_diff_eq!(out.value, 10.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn uts_zero_on_constant_offset() {
        let gt = row(&[1.0, 2.0, 4.5, 9.0, 3.3], Unit::MetersDepth);
        let l = gt.map(Unit::LogDepth, |d| d.ln() - 1.7);
        let out = uts_loss(&l, &gt, &ValidityMask::full(5, 1)).unwrap();
        assert_abs_diff_eq!(out.value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn utss_worked_examples() {
        // Predicted disparity [1, 3] normalizes to [-1, 1]; gt [5, 2] to [1, -1].
        let l = row(&[0.0, -(3.0f64.ln())], Unit::LogDepth);
        let gt = row(&[5.0, 2.0], Unit::InverseMetersDisparity);
        let out = utss_loss(&l, &gt, &ValidityMask::full(2, 1)).unwrap();
        assert_abs_diff_eq!(out.value, 2.0, epsilon = 1e-12);

        // Oracle: normalize both sides by hand and average |difference|.
        let pred = [1.0, 2.0, 3.0, 4.0];
        let target = [1.0, 2.0, 3.0, 5.0];
        let norm = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            v.iter().map(|x| (x - m) / s).collect::<Vec<_>>()
        };
        let oracle = norm(&pred)
            .iter()
            .zip(norm(&target))
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 4.0;
        let l: Vec<f64> = pred.iter().map(|d: &f64| -d.ln()).collect();
        let out = utss_loss(
            &row(&l, Unit::LogDepth),
            &row(&target, Unit::InverseMetersDisparity),
            &ValidityMask::full(4, 1),
        )
        .unwrap();
        assert_abs_diff_eq!(out.value, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(out.value, 0.169, epsilon = 1e-3);
    }

    #[test]
    fn utss_rejects_constant_sides() {
        let mask = ValidityMask::full(3, 1);
        let flat = row(&[0.5; 3], Unit::LogDepth);
        let gt = row(&[1.0, 2.0, 3.0], Unit::InverseMetersDisparity);
        assert!(matches!(utss_loss(&flat, &gt, &mask), Err(Error::Degenerate(_))));
        let l = row(&[0.1, 0.2, 0.3], Unit::LogDepth);
        let flat_gt = row(&[2.0; 3], Unit::InverseMetersDisparity);
        assert!(matches!(utss_loss(&l, &flat_gt, &mask), Err(Error::Degenerate(_))));
    }

    #[test]
    fn mixture_indicator() {
        let mask = ValidityMask::full(4, 1);
        let l = row(&[0.0, 1.0, 2.0, 3.0], Unit::LogDepth);
        let depth = row(&[1.0, 2.0, 3.0, 6.0], Unit::MetersDepth);
        let disp = depth.map(Unit::InverseMetersDisparity, |d| 1.0 / d);

        let utss = utss_loss(&l, &disp, &mask).unwrap();
        let as_utss = mixture_loss(&l, &disp, &mask, SupervisionClass::Utss).unwrap();
        assert_eq!(as_utss, utss);

        let uts = uts_loss(&l, &depth, &mask).unwrap();
        let both = mixture_loss(&l, &depth, &mask, SupervisionClass::Uts).unwrap();
        assert_abs_diff_eq!(both.value, uts.value + utss.value, epsilon = 1e-12);
        let abs = mixture_loss(&l, &depth, &mask, SupervisionClass::Absolute).unwrap();
        assert_eq!(abs, both);

        let perfect = depth.map(Unit::LogDepth, |d| (3.0 * d).ln());
        let zero = mixture_loss(&perfect, &depth, &mask, SupervisionClass::Uts).unwrap();
        assert_abs_diff_eq!(zero.value, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn mixture_uts_residual_example() {
        // Residuals {0,1,2,3} in log-depth: UTS term 1.0 plus the normalized-disparity term.
        let mask = ValidityMask::full(4, 1);
        let depth = row(&[1.5, 2.0, 4.0, 8.0], Unit::MetersDepth);
        let l = row(
            &[1.5f64.ln(), 2.0f64.ln() + 1.0, 4.0f64.ln() + 2.0, 8.0f64.ln() + 3.0],
            Unit::LogDepth,
        );
        let disp = depth.map(Unit::InverseMetersDisparity, |d| 1.0 / d);
        let utss = utss_loss(&l, &disp, &mask).unwrap().value;
        let out = mixture_loss(&l, &depth, &mask, SupervisionClass::Uts).unwrap();
        assert_abs_diff_eq!(out.value, 1.0 + utss, epsilon = 1e-12);
    }

    #[test]
    fn masked_pixels_have_no_influence() {
        let mask = ValidityMask::new(5, 1, vec![true, true, false, true, true]).unwrap();
        let gt = row(&[1.0, 2.0, 3.0, 4.0, 5.0], Unit::MetersDepth);
        let a = row(&[0.3, 0.1, 9.0, 1.2, 0.7], Unit::LogDepth);
        let b = row(&[0.3, 0.1, -4.0, 1.2, 0.7], Unit::LogDepth);
        let disp = gt.map(Unit::InverseMetersDisparity, |d| 1.0 / d);
        type GridLoss = fn(&Grid2D, &Grid2D, &ValidityMask) -> Result<LossValueGrad>;
        let cases: [(GridLoss, &Grid2D); 2] = [(uts_loss, &gt), (utss_loss, &disp)];
        for (loss, target) in cases {
            let (ra, rb) = (loss(&a, target, &mask).unwrap(), loss(&b, target, &mask).unwrap());
            assert_eq!(ra, rb);
            assert_eq!(ra.grad[2], 0.0);
            assert_eq!(ra.valid_grad(&mask).len(), 4);
        }
    }

    #[test]
    fn empty_mask_rejected() {
        let gt = row(&[1.0, 2.0], Unit::MetersDepth);
        let l = row(&[0.0, 0.0], Unit::LogDepth);
        assert!(uts_loss(&l, &gt, &ValidityMask::empty(2, 1)).is_err());
    }

    #[test]
    fn uts_gradient_in_linear_region() {
        let mut rng = Rng::new(5);
        let gt = random_row(&mut rng, 15, 1.0, 10.0, Unit::MetersDepth);
        let l = random_row(&mut rng, 15, -1.0, 2.0, Unit::LogDepth);
        let mask = ValidityMask::full(15, 1);
        let check = finite_diff_check(|x| uts_loss(x, &gt, &mask), &l, &mask, 1e-5, 1).unwrap();
        assert!(check.max_rel_error < 1e-6, "{check:?}");
    }

    #[test]
    fn utss_gradient_at_generic_point() {
        let mut rng = Rng::new(9);
        let gt = random_row(&mut rng, 20, 0.1, 1.0, Unit::InverseMetersDisparity);
        let l = random_row(&mut rng, 20, 0.0, 2.3, Unit::LogDepth);
        let mask = ValidityMask::full(20, 1);
        let check = finite_diff_check(|x| utss_loss(x, &gt, &mask), &l, &mask, 1e-5, 2).unwrap();
        assert!(check.max_rel_error < 1e-4, "{check:?}");
    }

    #[test]
    fn corrupted_gradient_detected() {
        let mut rng = Rng::new(13);
        let gt = random_row(&mut rng, 20, 0.1, 1.0, Unit::InverseMetersDisparity);
        let l = random_row(&mut rng, 20, 0.0, 2.3, Unit::LogDepth);
        let mask = ValidityMask::full(20, 1);
        let corrupted = |x: &Grid2D| {
            let mut out = utss_loss(x, &gt, &mask)?;
            out.grad[7] += 0.1;
            Ok(out)
        };
        let check = finite_diff_check(corrupted, &l, &mask, 1e-5, 3).unwrap();
        assert!(check.max_rel_error > 1e-2, "{check:?}");
    }

    #[test]
    fn tie_at_median_is_resampled() {
        // Two residuals tie exactly at the median, which is a kink of the loss.
        let gt = row(&[1.0; 5], Unit::MetersDepth);
        let l = row(&[0.0, 1.0, 1.0, 2.5, 3.0], Unit::LogDepth);
        let mask = ValidityMask::full(5, 1);
        let check = finite_diff_check(|x| uts_loss(x, &gt, &mask), &l, &mask, 1e-5, 4).unwrap();
        assert!(check.resamples >= 1);
        assert!(check.max_rel_error < 1e-6, "{check:?}");
    }

    #[test]
    fn always_kinked_function_reports_non_generic() {
        let mut rng = Rng::new(0);
        // Oscillates far faster than the step, so one-sided differences never agree.
        let err = check_gradient(&[0.3], &[0], 1e-5, 1e-3, &mut rng, |x| {
            Ok(((1e8 * x[0]).sin(), vec![0.0]))
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonGenericPoint(MAX_RESAMPLES)));
    }

    proptest! {
        #[test]
        fn uts_invariances(
            seed in any::<u64>(),
            c in -5.0f64..5.0,
            s in 0.05f64..20.0,
        ) {
            let mut rng = Rng::new(seed);
            let n = 2 + rng.below(30);
            let gt = random_row(&mut rng, n, 1.0, 10.0, Unit::MetersDepth);
            let l = random_row(&mut rng, n, -1.0, 3.0, Unit::LogDepth);
            let mask = ValidityMask::full(n, 1);
            let base = uts_loss(&l, &gt, &mask).unwrap();
            let shifted = uts_loss(&l.map(Unit::LogDepth, |v| v + c), &gt, &mask).unwrap();
            let scaled = uts_loss(&l, &gt.map(Unit::MetersDepth, |d| s * d), &mask).unwrap();
            prop_assert!((base.value - shifted.value).abs() < 1e-12);
            prop_assert!((base.value - scaled.value).abs() < 1e-12);
            prop_assert!(base.value >= 0.0);
            // Alignment absorbs uniform shifts, so the gradient sums to zero.
            prop_assert!(base.grad.iter().sum::<f64>().abs() < 1e-12);
        }

        #[test]
        fn utss_invariances(
            seed in any::<u64>(),
            c in -2.0f64..2.0,
            a in 0.05f64..20.0,
            b in -1.0f64..1.0,
        ) {
            let mut rng = Rng::new(seed);
            let n = 3 + rng.below(30);
            let gt = random_row(&mut rng, n, 0.1, 1.0, Unit::InverseMetersDisparity);
            let l = random_row(&mut rng, n, 0.0, 2.3, Unit::LogDepth);
            let mask = ValidityMask::full(n, 1);
            let base = utss_loss(&l, &gt, &mask).unwrap();
            let shifted = utss_loss(&l.map(Unit::LogDepth, |v| v + c), &gt, &mask).unwrap();
            let affine = utss_loss(&l, &gt.map(Unit::InverseMetersDisparity, |d| a * d + b), &mask).unwrap();
            prop_assert!((base.value - shifted.value).abs() < 1e-9);
            prop_assert!((base.value - affine.value).abs() < 1e-9);
            prop_assert!(base.value >= 0.0);
        }
    }
}
