//! Pinhole unprojection, depth/disparity conversion and measures of how an affine
//! change of disparity distorts recovered 3D geometry.
//!
//! A disparity transform `D -> c1*D + c2` with `c2 == 0` only rescales the scene.
//! Any nonzero shift rescales each point by a depth-dependent factor, which breaks
//! depth ratios and angles. [`depth_ratio_distortion`] and [`angle_distortion`]
//! quantify that; [`affine_depth_locus`] evaluates the depth-affine-in-image locus and
//! [`collinearity_residual`] measures how far a point set is from a straight line.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{CameraIntrinsics, Grid2D, PointCloud, Unit, ValidityMask};

/// Affine map of disparity: `D -> c1*D + c2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisparityAffine {
    pub c1: f64,
    pub c2: f64,
}

impl DisparityAffine {
    pub const IDENTITY: Self = Self { c1: 1.0, c2: 0.0 };

    pub fn new(c1: f64, c2: f64) -> Self {
        Self { c1, c2 }
    }

    /// Depth whose disparity is the transformed disparity of `depth`,
    /// or `None` when the transformed disparity is not strictly positive.
    pub fn apply_depth(&self, depth: f64) -> Option<f64> {
        let disparity = self.c1 / depth + self.c2;
        (disparity > 0.0 && depth > 0.0).then(|| depth / (self.c1 + self.c2 * depth))
    }

    /// `self` followed by `then`, as a single transform.
    pub fn then(&self, then: &DisparityAffine) -> DisparityAffine {
        DisparityAffine {
            c1: self.c1 * then.c1,
            c2: self.c2 * then.c1 + then.c2,
        }
    }
}

/// Depth over the image plane, `d(x, y) = a*x + b*y + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineParam {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LineParam {
    pub fn depth_at(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }
}

/// Unprojects every valid pixel (row-major scan) with the pinhole model.
pub fn unproject(depth: &Grid2D, mask: &ValidityMask, cam: &CameraIntrinsics) -> Result<PointCloud> {
    depth.check_positive(mask)?;
    let width = depth.width();
    let n = mask.count();
    let mut points = Vec::with_capacity(n);
    let mut source = Vec::with_capacity(n);
    for i in mask.indices() {
        let (u, v) = (i % width, i / width);
        points.push(cam.unproject(u as f64, v as f64, depth.values()[i]));
        source.push((u, v));
    }
    PointCloud::with_source(points, source)
}

/// Elementwise reciprocal on valid pixels; invalid pixels keep their payload.
fn reciprocal(grid: &Grid2D, mask: &ValidityMask, unit: Unit) -> Result<Grid2D> {
    grid.check_positive(mask)?;
    let mut values = grid.values().to_vec();
    for i in mask.indices() {
        values[i] = 1.0 / values[i];
    }
    Grid2D::with_mask(grid.width(), grid.height(), values, unit, mask)
}

pub fn depth_to_disparity(depth: &Grid2D, mask: &ValidityMask) -> Result<Grid2D> {
    reciprocal(depth, mask, Unit::InverseMetersDisparity)
}

pub fn disparity_to_depth(disparity: &Grid2D, mask: &ValidityMask) -> Result<Grid2D> {
    reciprocal(disparity, mask, Unit::MetersDepth)
}

/// `D = exp(-l)` on every pixel.
pub fn log_depth_to_disparity(log_depth: &Grid2D) -> Grid2D {
    log_depth.map(Unit::InverseMetersDisparity, |l| (-l).exp())
}

pub fn apply_disparity_affine(
    depth: &Grid2D,
    mask: &ValidityMask,
    t: &DisparityAffine,
) -> Result<Grid2D> {
    depth.check_positive(mask)?;
    let width = depth.width();
    let mut values = depth.values().to_vec();
    for i in mask.indices() {
        let d = values[i];
        values[i] = t.apply_depth(d).ok_or(Error::InvalidPixel {
            x: i % width,
            y: i / width,
            value: d,
            reason: "transformed disparity is not strictly positive",
        })?;
    }
    Grid2D::with_mask(width, depth.height(), values, Unit::MetersDepth, mask)
}

/// `|log((z1'/z2') / (z1/z2))|` for the transformed depths `z1'`, `z2'`.
pub fn depth_ratio_distortion(z1: f64, z2: f64, t: &DisparityAffine) -> Result<f64> {
    if !(z1 > 0.0 && z2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "depths must be positive, got {z1} and {z2}"
        )));
    }
    let transformed = |z: f64| {
        t.apply_depth(z).ok_or_else(|| {
            Error::InvalidArgument(format!("transform makes disparity non-positive at depth {z}"))
        })
    };
    transformed(z1)?;
    transformed(z2)?;
    // z' / z = 1 / (c1 + c2 z), so the ratio change reduces to a ratio of denominators.
    Ok(((t.c1 + t.c2 * z2) / (t.c1 + t.c2 * z1)).ln().abs())
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn angle_between(a: [f64; 3], b: [f64; 3]) -> f64 {
    let (a, b) = (Vector3::from(a), Vector3::from(b));
    a.cross(&b).norm().atan2(a.dot(&b))
}

/// Change of the angle at vertex `corner[1]` after pushing all three points through
/// project, disparity transform and unproject.
pub fn angle_distortion(
    corner: [[f64; 3]; 3],
    t: &DisparityAffine,
    cam: &CameraIntrinsics,
) -> Result<f64> {
    let [p, q, r] = corner;
    let norm = |v: [f64; 3]| Vector3::from(v).norm();
    if norm(sub(p, q)) == 0.0 || norm(sub(r, q)) == 0.0 {
        return Err(Error::Degenerate("corner has a zero-length edge".into()));
    }
    let warp = |point: [f64; 3]| -> Result<[f64; 3]> {
        let (u, v, d) = cam.project(point);
        if !(d > 0.0) || !u.is_finite() || !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "point {point:?} does not project in front of the camera"
            )));
        }
        let warped = t.apply_depth(d).ok_or_else(|| {
            Error::InvalidArgument(format!("transform makes disparity non-positive at depth {d}"))
        })?;
        Ok(cam.unproject(u, v, warped))
    };
    let (pw, qw, rw) = (warp(p)?, warp(q)?, warp(r)?);
    let before = angle_between(sub(p, q), sub(r, q));
    let after = angle_between(sub(pw, qw), sub(rw, qw));
    Ok((after - before).abs())
}

/// RMS distance of the points to their least-squares 3D line.
pub fn collinearity_residual(cloud: &PointCloud) -> Result<f64> {
    let pts = cloud.points();
    if pts.len() < 3 {
        return Err(Error::TooFewPixels {
            needed: 3,
            have: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let centroid = pts
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + Vector3::from(*p))
        / n;
    let centered: Vec<Vector3<f64>> = pts.iter().map(|p| Vector3::from(*p) - centroid).collect();
    let scatter = centered
        .iter()
        .fold(Matrix3::zeros(), |acc, c| acc + c * c.transpose());
    let eig = SymmetricEigen::new(scatter);
    let (k, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        });
    let dir = eig.eigenvectors.column(k).normalize();
    let sq: f64 = centered
        .iter()
        .map(|c| (c - dir * c.dot(&dir)).norm_squared())
        .sum();
    Ok((sq / n).sqrt())
}

/// Evaluates `d = a*x + b*y + c` at each image sample, applies the disparity transform
/// and unprojects the result.
pub fn affine_depth_locus(
    line: &LineParam,
    t: &DisparityAffine,
    cam: &CameraIntrinsics,
    samples: &[(f64, f64)],
) -> Result<PointCloud> {
    let mut points = Vec::with_capacity(samples.len());
    for &(x, y) in samples {
        let d = line.depth_at(x, y);
        if !(d > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "line depth {d} is not positive at ({x}, {y})"
            )));
        }
        let warped = t.apply_depth(d).ok_or_else(|| {
            Error::InvalidArgument(format!("transformed depth is not positive at ({x}, {y})"))
        })?;
        points.push(cam.unproject(x, y, warped));
    }
    Ok(PointCloud::new(points))
}
