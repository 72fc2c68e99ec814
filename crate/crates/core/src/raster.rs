//! Raster, mask, camera and point-cloud types shared by every other module.
//!
//! Rasters are row-major with a top-left origin and hold `f64`. Invalid pixels keep
//! whatever payload they were given; they are excluded through a [`ValidityMask`],
//! never through sentinel values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical meaning of the values stored in a [`Grid2D`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Unit {
    MetersDepth,
    LogDepth,
    InverseMetersDisparity,
    Dimensionless,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    width: usize,
    height: usize,
    values: Vec<f64>,
    unit: Unit,
}

impl Grid2D {
    /// Builds a grid where every pixel counts as valid.
    ///
    /// Depth-tagged grids must be strictly positive everywhere; use [`Grid2D::with_mask`]
    /// when some pixels carry an arbitrary payload.
    pub fn new(width: usize, height: usize, values: Vec<f64>, unit: Unit) -> Result<Self> {
        let grid = Self::unchecked(width, height, values, unit)?;
        if unit == Unit::MetersDepth {
            grid.check_positive(&ValidityMask::full(width, height))?;
        }
        Ok(grid)
    }

    /// Builds a grid whose depth positivity is only enforced on `mask`.
    pub fn with_mask(
        width: usize,
        height: usize,
        values: Vec<f64>,
        unit: Unit,
        mask: &ValidityMask,
    ) -> Result<Self> {
        let grid = Self::unchecked(width, height, values, unit)?;
        grid.check_mask(mask)?;
        if unit == Unit::MetersDepth {
            grid.check_positive(mask)?;
        }
        Ok(grid)
    }

    fn unchecked(width: usize, height: usize, values: Vec<f64>, unit: Unit) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} grid needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            unit,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64, unit: Unit) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], unit)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Re-tags the grid. Switching to depth re-checks positivity on every pixel.
    pub fn with_unit(self, unit: Unit) -> Result<Self> {
        Self::new(self.width, self.height, self.values, unit)
    }

    /// Same dimensions and unit, new values from `f` applied to each pixel.
    pub fn map(&self, unit: Unit, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| f(v)).collect(),
            unit,
        }
    }

    pub fn check_mask(&self, mask: &ValidityMask) -> Result<()> {
        if mask.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: mask.dims(),
            });
        }
        Ok(())
    }

    pub fn check_same_dims(&self, other: &Grid2D) -> Result<()> {
        if other.dims() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    /// Errors on the first valid pixel (row-major) that is not strictly positive.
    pub fn check_positive(&self, mask: &ValidityMask) -> Result<()> {
        self.check_mask(mask)?;
        for i in mask.indices() {
            let v = self.values[i];
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidPixel {
                    x: i % self.width,
                    y: i / self.width,
                    value: v,
                    reason: "expected a strictly positive finite value",
                });
            }
        }
        Ok(())
    }

    /// Values at the valid pixels, in row-major order.
    pub fn gather(&self, mask: &ValidityMask) -> Vec<f64> {
        mask.indices().map(|i| self.values[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl ValidityMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} mask needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    /// Mask with exactly the listed pixels set.
    pub fn from_indices(width: usize, height: usize, indices: &[usize]) -> Result<Self> {
        let mut bits = vec![false; width * height];
        for &i in indices {
            *bits.get_mut(i).ok_or_else(|| {
                Error::InvalidArgument(format!("pixel index {i} outside {width}x{height} mask"))
            })? = true;
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    /// Row-major indices of the valid pixels.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn require(&self, needed: usize) -> Result<usize> {
        let have = self.count();
        if have < needed {
            return Err(Error::TooFewPixels { needed, have });
        }
        Ok(have)
    }

    /// Mask encoded as a dimensionless 0/1 raster, for PFM export.
    pub fn to_grid(&self) -> Grid2D {
        Grid2D {
            width: self.width,
            height: self.height,
            values: self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            unit: Unit::Dimensionless,
        }
    }

    /// Inverse of [`ValidityMask::to_grid`]: pixels greater than 0.5 are valid.
    pub fn from_grid(grid: &Grid2D) -> Self {
        Self {
            width: grid.width(),
            height: grid.height(),
            bits: grid.values().iter().map(|&v| v > 0.5).collect(),
        }
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, u0: f64, v0: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        Ok(Self { fx, fy, u0, v0 })
    }

    /// Principal point at the geometric center of a `width`x`height` image.
    pub fn centered(focal: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
        )
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        [
            (u - self.u0) * depth / self.fx,
            (v - self.v0) * depth / self.fy,
            depth,
        ]
    }

    /// Pixel coordinates and depth of a camera-frame point.
    pub fn project(&self, p: [f64; 3]) -> (f64, f64, f64) {
        let [x, y, z] = p;
        (self.fx * x / z + self.u0, self.fy * y / z + self.v0, z)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    source: Option<Vec<(usize, usize)>>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self {
            points,
            source: None,
        }
    }

    pub fn with_source(points: Vec<[f64; 3]>, source: Vec<(usize, usize)>) -> Result<Self> {
        if source.len() != points.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} source pixels",
                points.len(),
                source.len()
            )));
        }
        Ok(Self {
            points,
            source: Some(source),
        })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn source(&self) -> Option<&[(usize, usize)]> {
        self.source.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| [p[0] * s, p[1] * s, p[2] * s])
                .collect(),
            source: self.source.clone(),
        }
    }
}

/// How much of the geometry a training target pins down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SupervisionClass {
    /// Metric depth.
    Absolute,
    /// Depth up to an unknown positive scale.
    Uts,
    /// Disparity up to an unknown positive scale and additive shift.
    Utss,
}

impl SupervisionClass {
    /// Whether the scale-invariant log-depth term applies to this sample.
    pub fn uses_uts_term(self) -> bool {
        matches!(self, Self::Absolute | Self::Uts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(Grid2D::new(2, 2, vec![1.0; 3], Unit::Dimensionless).is_err());
        assert!(Grid2D::new(0, 2, vec![], Unit::Dimensionless).is_err());
    }

    #[test]
    fn depth_must_be_positive() {
        let err = Grid2D::new(2, 1, vec![1.0, 0.0], Unit::MetersDepth).unwrap_err();
        assert!(matches!(err, Error::InvalidPixel { x: 1, y: 0, .. }));
        // Log-depth and disparity may hold any real.
        assert!(Grid2D::new(2, 1, vec![1.0, -3.0], Unit::LogDepth).is_ok());
    }

    #[test]
    fn masked_depth_ignores_invalid_payload() {
        let mask = ValidityMask::new(2, 1, vec![true, false]).unwrap();
        assert!(Grid2D::with_mask(2, 1, vec![1.0, -5.0], Unit::MetersDepth, &mask).is_ok());
        let wrong = ValidityMask::full(1, 2);
        assert!(matches!(
            Grid2D::with_mask(2, 1, vec![1.0, 1.0], Unit::MetersDepth, &wrong),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mask_round_trips_through_grid() {
        let mask = ValidityMask::new(3, 1, vec![true, false, true]).unwrap();
        assert_eq!(ValidityMask::from_grid(&mask.to_grid()), mask);
        assert_eq!(mask.indices().collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(mask.count(), 2);
        assert!(mask.require(3).is_err());
    }

    #[test]
    fn camera_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        let cam = CameraIntrinsics::centered(100.0, 64, 48).unwrap();
        assert_eq!((cam.u0, cam.v0), (31.5, 23.5));
        let p = cam.unproject(10.0, 40.0, 3.0);
        let (u, v, d) = cam.project(p);
        assert!((u - 10.0).abs() < 1e-12 && (v - 40.0).abs() < 1e-12 && d == 3.0);
    }

    #[test]
    fn cloud_source_length_checked() {
        assert!(PointCloud::with_source(vec![[0.0; 3]], vec![]).is_err());
    }

    #[test]
    fn indicator_semantics() {
        assert!(SupervisionClass::Absolute.uses_uts_term());
        assert!(SupervisionClass::Uts.uses_uts_term());
        assert!(!SupervisionClass::Utss.uses_uts_term());
    }
}
