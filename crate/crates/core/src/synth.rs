//! Seeded toy scenes, UTS/UTSS label corruption, stereo validity masking and
//! equal-probability dataset mixtures.
//!
//! Scene values are quantized to `f32` precision at generation time so a scene
//! written to PFM and read back is bit-identical to the in-memory one.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{read_pfm, write_pfm};
use crate::error::{Error, Result};
use crate::raster::{Grid2D, SupervisionClass, Unit, ValidityMask};
use crate::rng::{derive_seed, Rng};

const STREAM_SCENE: u64 = 1;
const STREAM_UTS: u64 = 2;
const STREAM_UTSS: u64 = 3;

/// Scale range for UTS corruption (log-uniform).
pub const UTS_SCALE_RANGE: (f64, f64) = (0.25, 4.0);
/// Disparity scale range for UTSS corruption (log-uniform).
pub const UTSS_SCALE_RANGE: (f64, f64) = (0.25, 4.0);
/// Disparity shift range for UTSS corruption (uniform).
pub const UTSS_SHIFT_RANGE: (f64, f64) = (-0.05, 0.5);
/// Smallest admissible corrupted disparity.
pub const UTSS_MIN_TARGET: f64 = 0.01;
pub const UTSS_MAX_DRAWS: usize = 100;

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    /// Region sites per axis, `[columns, rows]`; one jittered site per cell.
    pub region_grid: [usize; 2],
    pub depth_min: f64,
    pub depth_max: f64,
    /// Standard deviation of the Gaussian noise on feature channels 0 and 2.
    pub feature_noise: f64,
    /// Exponent applied to disparity in feature channel 0.
    pub gamma: f64,
    /// Largest disparity change across the image, relative to the region's base disparity.
    pub slope: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            region_grid: [3, 3],
            depth_min: 1.0,
            depth_max: 10.0,
            feature_noise: 0.02,
            gamma: 0.75,
            slope: 0.5,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.height < 16 || self.width < 16 {
            return bad(format!("scene must be at least 16x16, got {}x{}", self.width, self.height));
        }
        if self.region_grid[0] == 0 || self.region_grid[1] == 0 {
            return bad("region grid must be at least 1x1".into());
        }
        if !(self.depth_min > 0.0 && self.depth_max > self.depth_min) {
            return bad(format!(
                "depth range must satisfy 0 < min < max, got [{}, {}]",
                self.depth_min, self.depth_max
            ));
        }
        if !(self.feature_noise >= 0.0) || !(self.gamma > 0.0) || !(self.slope >= 0.0) {
            return bad("noise and slope must be non-negative and gamma positive".into());
        }
        Ok(())
    }
}

/// Parameters of the label corruption applied to a scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Corruption {
    None,
    /// `target = k * depth`.
    Scale { k: f64 },
    /// `target = a / depth + b` (disparity).
    Affine { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub features: [Grid2D; 3],
    pub gt_depth: Grid2D,
    /// Depth for ABSOLUTE/UTS scenes, disparity for UTSS scenes.
    pub target: Grid2D,
    pub cls: SupervisionClass,
    pub mask: ValidityMask,
    pub seed: u64,
    pub corruption: Corruption,
}

impl ToyScene {
    pub fn width(&self) -> usize {
        self.gt_depth.width()
    }

    pub fn height(&self) -> usize {
        self.gt_depth.height()
    }

    /// Resets the supervision to metric depth.
    pub fn to_absolute(&self) -> ToyScene {
        ToyScene {
            target: self.gt_depth.clone(),
            cls: SupervisionClass::Absolute,
            corruption: Corruption::None,
            ..self.clone()
        }
    }
}

struct Region {
    site: (f64, f64),
    base_disparity: f64,
    grad_u: f64,
    grad_v: f64,
    texture: f64,
}

/// Generates a scene made of Voronoi regions, each a plane in disparity, with depth
/// clipped to the configured range. Channel 0 is `disparity^gamma` plus noise,
/// channel 1 the normalized column `u / W`, channel 2 a per-region texture plus noise.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<ToyScene> {
    cfg.validate()?;
    let (w, h) = (cfg.width, cfg.height);
    let mut rng = Rng::new(derive_seed(seed, STREAM_SCENE));

    let [cols, rows] = cfg.region_grid;
    let mut regions = Vec::with_capacity(cols * rows);
    for gy in 0..rows {
        for gx in 0..cols {
            let su = (gx as f64 + rng.next_f64()) / cols as f64 * w as f64;
            let sv = (gy as f64 + rng.next_f64()) / rows as f64 * h as f64;
            let base_disparity = 1.0 / rng.log_uniform(cfg.depth_min, cfg.depth_max);
            let grad_u = rng.uniform(-cfg.slope, cfg.slope) * base_disparity;
            let grad_v = rng.uniform(-cfg.slope, cfg.slope) * base_disparity;
            let texture = rng.next_f64();
            regions.push(Region {
                site: (su, sv),
                base_disparity,
                grad_u,
                grad_v,
                texture,
            });
        }
    }

    let n = w * h;
    let mut depth = Vec::with_capacity(n);
    let mut f0 = Vec::with_capacity(n);
    let mut f1 = Vec::with_capacity(n);
    let mut f2 = Vec::with_capacity(n);
    for v in 0..h {
        for u in 0..w {
            let (uf, vf) = (u as f64 + 0.5, v as f64 + 0.5);
            let region = regions
                .iter()
                .min_by(|a, b| {
                    let da = (a.site.0 - uf).powi(2) + (a.site.1 - vf).powi(2);
                    let db = (b.site.0 - uf).powi(2) + (b.site.1 - vf).powi(2);
                    da.total_cmp(&db)
                })
                .expect("at least one region");
            let disparity = region.base_disparity
                + region.grad_u * (uf - region.site.0) / w as f64
                + region.grad_v * (vf - region.site.1) / h as f64;
            let d = if disparity > 0.0 {
                (1.0 / disparity).clamp(cfg.depth_min, cfg.depth_max)
            } else {
                cfg.depth_max
            };
            let d = quantize(d);
            depth.push(d);
            f0.push(quantize((1.0 / d).powf(cfg.gamma) + cfg.feature_noise * rng.normal()));
            f1.push(quantize(u as f64 / w as f64));
            f2.push(quantize(region.texture + cfg.feature_noise * rng.normal()));
        }
    }

    let gt_depth = Grid2D::new(w, h, depth, Unit::MetersDepth)?;
    let features = [
        Grid2D::new(w, h, f0, Unit::Dimensionless)?,
        Grid2D::new(w, h, f1, Unit::Dimensionless)?,
        Grid2D::new(w, h, f2, Unit::Dimensionless)?,
    ];
    Ok(ToyScene {
        features,
        target: gt_depth.clone(),
        gt_depth,
        cls: SupervisionClass::Absolute,
        mask: ValidityMask::full(w, h),
        seed,
        corruption: Corruption::None,
    })
}

fn require_absolute(scene: &ToyScene) -> Result<()> {
    if scene.cls != SupervisionClass::Absolute {
        return Err(Error::InvalidArgument(format!(
            "corruption expects an ABSOLUTE scene, got {:?}",
            scene.cls
        )));
    }
    Ok(())
}

/// UTS target `k * depth` for a given `k > 0`.
pub fn with_scale(scene: &ToyScene, k: f64) -> Result<ToyScene> {
    require_absolute(scene)?;
    if !(k > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {k}")));
    }
    let target = scene.gt_depth.map(Unit::MetersDepth, |d| quantize(k * d));
    target.check_positive(&scene.mask)?;
    Ok(ToyScene {
        target,
        cls: SupervisionClass::Uts,
        corruption: Corruption::Scale { k },
        ..scene.clone()
    })
}

/// UTSS target `a / depth + b` for given coefficients; every valid value must exceed
/// [`UTSS_MIN_TARGET`].
pub fn with_affine_disparity(scene: &ToyScene, a: f64, b: f64) -> Result<ToyScene> {
    require_absolute(scene)?;
    let target = scene
        .gt_depth
        .map(Unit::InverseMetersDisparity, |d| quantize(a / d + b));
    let min = target.gather(&scene.mask).into_iter().fold(f64::INFINITY, f64::min);
    if !(a > 0.0) || !(min > UTSS_MIN_TARGET) {
        return Err(Error::InvalidArgument(format!(
            "affine corruption (a={a}, b={b}) leaves minimum disparity {min}"
        )));
    }
    Ok(ToyScene {
        target,
        cls: SupervisionClass::Utss,
        corruption: Corruption::Affine { a, b },
        ..scene.clone()
    })
}

/// Multiplies depth by a random positive coefficient.
pub fn make_uts(scene: &ToyScene, seed: u64) -> Result<ToyScene> {
    require_absolute(scene)?;
    let mut rng = Rng::new(derive_seed(seed, STREAM_UTS));
    let k = rng.log_uniform(UTS_SCALE_RANGE.0, UTS_SCALE_RANGE.1);
    with_scale(scene, k)
}

/// Scales and shifts disparity by random coefficients, redrawing until positive.
pub fn make_utss(scene: &ToyScene, seed: u64) -> Result<ToyScene> {
    require_absolute(scene)?;
    let mut rng = Rng::new(derive_seed(seed, STREAM_UTSS));
    let max_depth = scene
        .gt_depth
        .gather(&scene.mask)
        .into_iter()
        .fold(0.0, f64::max);
    for _ in 0..UTSS_MAX_DRAWS {
        let a = rng.log_uniform(UTSS_SCALE_RANGE.0, UTSS_SCALE_RANGE.1);
        let b = rng.uniform(UTSS_SHIFT_RANGE.0, UTSS_SHIFT_RANGE.1);
        // Cheap pre-check on the smallest disparity; the exact check follows.
        if a / max_depth + b > UTSS_MIN_TARGET {
            if let Ok(out) = with_affine_disparity(scene, a, b) {
                return Ok(out);
            }
        }
    }
    Err(Error::Degenerate(format!(
        "no positive affine corruption found in {UTSS_MAX_DRAWS} draws"
    )))
}

/// Left-anchored consistency: left pixel `(u, v)` matches right pixel `(u - round(dL), v)`
/// and is valid when that pixel exists and `|dL - dR| < max_discrepancy`.
pub fn lr_consistency_mask(
    disp_left: &Grid2D,
    disp_right: &Grid2D,
    max_discrepancy: f64,
) -> Result<ValidityMask> {
    consistency(disp_left, disp_right, max_discrepancy, -1.0)
}

/// Right-anchored counterpart: right pixel `(u, v)` matches left pixel `(u + round(dR), v)`.
pub fn rl_consistency_mask(
    disp_right: &Grid2D,
    disp_left: &Grid2D,
    max_discrepancy: f64,
) -> Result<ValidityMask> {
    consistency(disp_right, disp_left, max_discrepancy, 1.0)
}

fn consistency(
    anchor: &Grid2D,
    other: &Grid2D,
    max_discrepancy: f64,
    direction: f64,
) -> Result<ValidityMask> {
    anchor.check_same_dims(other)?;
    let (w, h) = anchor.dims();
    let mut bits = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            let d = anchor.get(u, v);
            if !d.is_finite() {
                continue;
            }
            let target = u as f64 + direction * d.round();
            if target < 0.0 || target >= w as f64 {
                continue;
            }
            let matched = other.get(target as usize, v);
            bits[v * w + u] = (d - matched).abs() < max_discrepancy;
        }
    }
    ValidityMask::new(w, h, bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StereoVerdict {
    Accepted,
    RejectedValidity,
    RejectedRange,
}

impl std::fmt::Display for StereoVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Accepted => "accepted",
            Self::RejectedValidity => "rejected: validity",
            Self::RejectedRange => "rejected: range",
        })
    }
}

pub const MIN_VALID_FRACTION: f64 = 0.8;
pub const MIN_DISPARITY_RANGE: f64 = 8.0;
pub const MAX_LR_DISCREPANCY: f64 = 8.0;

/// Frame filter: valid fraction must exceed `min_valid_fraction` and the disparity
/// range over valid pixels must exceed `min_range`. The validity rule is checked first.
pub fn stereo_verdict(
    disp: &Grid2D,
    mask: &ValidityMask,
    min_valid_fraction: f64,
    min_range: f64,
) -> StereoVerdict {
    if disp.check_mask(mask).is_err() || !(mask.fraction() > min_valid_fraction) {
        return StereoVerdict::RejectedValidity;
    }
    let (lo, hi) = mask
        .indices()
        .map(|i| disp.values()[i])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo > min_range {
        StereoVerdict::Accepted
    } else {
        StereoVerdict::RejectedRange
    }
}

pub fn accept_stereo_frame(
    disp: &Grid2D,
    mask: &ValidityMask,
    min_valid_fraction: f64,
    min_range: f64,
) -> bool {
    stereo_verdict(disp, mask, min_valid_fraction, min_range) == StereoVerdict::Accepted
}

/// Rectified pair of pixel disparities for a fronto-parallel background at `d_bg` with a
/// foreground slab at `d_fg` covering left-image columns `fg_cols.0..fg_cols.1`.
///
/// The right view sees the foreground wherever its shifted footprint lands and the
/// background everywhere else.
pub fn two_plane_stereo_pair(
    width: usize,
    height: usize,
    fg_cols: (usize, usize),
    d_fg: f64,
    d_bg: f64,
) -> Result<(Grid2D, Grid2D)> {
    if fg_cols.0 >= fg_cols.1 || fg_cols.1 > width || !(d_fg > d_bg) || !(d_bg >= 0.0) {
        return Err(Error::InvalidArgument(
            "foreground must be a non-empty column range nearer than the background".into(),
        ));
    }
    let shift = d_fg.round() as i64;
    let (a, b) = (fg_cols.0 as i64 - shift, fg_cols.1 as i64 - shift);
    let mut left = Vec::with_capacity(width * height);
    let mut right = Vec::with_capacity(width * height);
    for _ in 0..height {
        for u in 0..width {
            left.push(if (fg_cols.0..fg_cols.1).contains(&u) { d_fg } else { d_bg });
            right.push(if (a..b).contains(&(u as i64)) { d_fg } else { d_bg });
        }
    }
    Ok((
        Grid2D::new(width, height, left, Unit::Dimensionless)?,
        Grid2D::new(width, height, right, Unit::Dimensionless)?,
    ))
}

#[derive(Debug, Clone)]
pub struct NamedDataset {
    pub name: String,
    pub scenes: Vec<ToyScene>,
}

/// Several datasets sampled with equal probability regardless of their sizes.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    datasets: Vec<NamedDataset>,
}

impl MixtureSpec {
    pub fn new(datasets: Vec<NamedDataset>) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::InvalidArgument("mixture has no datasets".into()));
        }
        if let Some(empty) = datasets.iter().find(|d| d.scenes.is_empty()) {
            return Err(Error::InvalidArgument(format!("dataset {:?} is empty", empty.name)));
        }
        Ok(Self { datasets })
    }

    /// Builds a mixture from possibly-empty parts, dropping the empty ones.
    pub fn from_nonempty(datasets: Vec<NamedDataset>) -> Result<Self> {
        Self::new(datasets.into_iter().filter(|d| !d.scenes.is_empty()).collect())
    }

    pub fn datasets(&self) -> &[NamedDataset] {
        &self.datasets
    }

    /// Dataset index, then scene index, each uniform.
    pub fn draw(&self, rng: &mut Rng) -> (usize, usize) {
        let ds = rng.below(self.datasets.len());
        let scene = rng.below(self.datasets[ds].scenes.len());
        (ds, scene)
    }
}

pub fn sample_mixture<'a>(spec: &'a MixtureSpec, rng: &mut Rng) -> &'a ToyScene {
    let (ds, scene) = spec.draw(rng);
    &spec.datasets[ds].scenes[scene]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneMeta {
    pub width: usize,
    pub height: usize,
    pub class: SupervisionClass,
    pub seed: u64,
    pub corruption: Corruption,
}

pub const FEATURE_FILES: [&str; 3] = ["feature_0.pfm", "feature_1.pfm", "feature_2.pfm"];

/// Writes a scene as a directory of PFM rasters plus `meta.json`.
pub fn save_scene(dir: &Path, scene: &ToyScene) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, grid) in FEATURE_FILES.iter().zip(&scene.features) {
        fs::write(dir.join(name), write_pfm(grid)?)?;
    }
    fs::write(dir.join("gt_depth.pfm"), write_pfm(&scene.gt_depth)?)?;
    fs::write(dir.join("target.pfm"), write_pfm(&scene.target)?)?;
    fs::write(dir.join("mask.pfm"), write_pfm(&scene.mask.to_grid())?)?;
    let meta = SceneMeta {
        width: scene.width(),
        height: scene.height(),
        class: scene.cls,
        seed: scene.seed,
        corruption: scene.corruption,
    };
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    fs::write(dir.join("meta.json"), json)?;
    Ok(())
}

pub fn load_scene(dir: &Path) -> Result<ToyScene> {
    let read = |name: &str| -> Result<Grid2D> { Ok(read_pfm(&fs::read(dir.join(name))?)?.0) };
    let meta: SceneMeta = serde_json::from_slice(&fs::read(dir.join("meta.json"))?)?;
    let mask = ValidityMask::from_grid(&read("mask.pfm")?);
    let gt_depth = read("gt_depth.pfm")?;
    let gt_depth = Grid2D::with_mask(
        gt_depth.width(),
        gt_depth.height(),
        gt_depth.into_values(),
        Unit::MetersDepth,
        &mask,
    )?;
    let target_unit = match meta.class {
        SupervisionClass::Utss => Unit::InverseMetersDisparity,
        _ => Unit::MetersDepth,
    };
    let target = read("target.pfm")?;
    let target = Grid2D::with_mask(
        target.width(),
        target.height(),
        target.into_values(),
        target_unit,
        &mask,
    )?;
    let features = [read(FEATURE_FILES[0])?, read(FEATURE_FILES[1])?, read(FEATURE_FILES[2])?];
    for f in &features {
        gt_depth.check_same_dims(f)?;
    }
    if gt_depth.dims() != (meta.width, meta.height) {
        return Err(Error::DimensionMismatch {
            expected: (meta.width, meta.height),
            actual: gt_depth.dims(),
        });
    }
    Ok(ToyScene {
        features,
        gt_depth,
        target,
        cls: meta.class,
        mask,
        seed: meta.seed,
        corruption: meta.corruption,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::lsq_shift_scale;
    use crate::geometry::depth_to_disparity;
    use approx::assert_abs_diff_eq;

    fn small() -> SceneConfig {
        SceneConfig {
            height: 16,
            width: 20,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = small();
        cfg.width = 8;
        assert!(generate_scene(&cfg, 0).is_err());
        let mut cfg = small();
        cfg.depth_min = 5.0;
        cfg.depth_max = 2.0;
        assert!(generate_scene(&cfg, 0).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_scene(&small(), 42).unwrap();
        let b = generate_scene(&small(), 42).unwrap();
        assert_eq!(a, b);
        let c = generate_scene(&small(), 43).unwrap();
        assert_ne!(a.gt_depth, c.gt_depth);
    }

    #[test]
    fn depth_stays_in_range() {
        let cfg = small();
        for seed in 0..100 {
            let s = generate_scene(&cfg, seed).unwrap();
            for &d in s.gt_depth.values() {
                assert!((cfg.depth_min..=cfg.depth_max).contains(&d), "{d}");
            }
        }
    }

    #[test]
    fn noiseless_channel_encodes_depth() {
        let cfg = SceneConfig {
            feature_noise: 0.0,
            ..small()
        };
        let s = generate_scene(&cfg, 5).unwrap();
        for (f, d) in s.features[0].values().iter().zip(s.gt_depth.values()) {
            let recovered = f.powf(-1.0 / cfg.gamma);
            assert!((recovered - d).abs() / d < 1e-5);
        }
        assert_eq!(s.features[1].get(10, 3), 0.5);
    }

    #[test]
    fn uts_corruption() {
        let s = generate_scene(&small(), 1).unwrap();
        let same = with_scale(&s, 1.0).unwrap();
        assert_eq!(same.target, s.gt_depth);

        let uts = make_uts(&s, 9).unwrap();
        assert_eq!(uts.cls, SupervisionClass::Uts);
        assert_eq!(uts.gt_depth, s.gt_depth);
        let Corruption::Scale { k } = uts.corruption else { panic!() };
        assert!((0.25..=4.0).contains(&k));
        let t = uts.target.values();
        let g = s.gt_depth.values();
        for i in 1..t.len() {
            assert_abs_diff_eq!(t[i] / t[0], g[i] / g[0], epsilon = 1e-6 * g[i] / g[0]);
        }
        assert!(make_uts(&uts, 1).is_err());
    }

    #[test]
    fn utss_corruption() {
        let s = generate_scene(&small(), 2).unwrap();
        let same = with_affine_disparity(&s, 1.0, 0.0).unwrap();
        let disp = depth_to_disparity(&s.gt_depth, &s.mask).unwrap();
        for (a, b) in same.target.values().iter().zip(disp.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7 * b);
        }

        let utss = make_utss(&s, 4).unwrap();
        let Corruption::Affine { a, b } = utss.corruption else { panic!() };
        assert!(utss.target.values().iter().all(|&v| v > UTSS_MIN_TARGET));
        let fit = lsq_shift_scale(&disp, &utss.target, &s.mask).unwrap();
        // Targets are stored at f32 precision.
        assert_abs_diff_eq!(fit.scale, a, epsilon = 1e-5);
        assert_abs_diff_eq!(fit.shift, b, epsilon = 1e-6);
        assert!(with_affine_disparity(&s, 1.0, -5.0).is_err());
    }

    #[test]
    fn consistency_examples() {
        let (w, h) = (64, 4);
        let five = Grid2D::filled(w, h, 5.0, Unit::Dimensionless).unwrap();
        let mask = lr_consistency_mask(&five, &five, 8.0).unwrap();
        for v in 0..h {
            for u in 0..w {
                assert_eq!(mask.is_valid(u, v), u >= 5);
            }
        }
        let twenty = Grid2D::filled(w, h, 20.0, Unit::Dimensionless).unwrap();
        assert_eq!(lr_consistency_mask(&five, &twenty, 8.0).unwrap().count(), 0);
        let other = Grid2D::filled(w, h + 1, 5.0, Unit::Dimensionless).unwrap();
        assert!(lr_consistency_mask(&five, &other, 8.0).is_err());
    }

    #[test]
    fn two_plane_occlusion_band_matches_geometry() {
        let (w, h) = (80, 3);
        let (fg0, fg1, d_fg, d_bg) = (30usize, 50usize, 20.0, 4.0);
        let (left, right) = two_plane_stereo_pair(w, h, (fg0, fg1), d_fg, d_bg).unwrap();
        let mask = lr_consistency_mask(&left, &right, 8.0).unwrap();

        // Oracle from the scene layout: a left pixel survives when its match lands inside
        // the image and, for background pixels, is not covered by the foreground slab in
        // the right view (which spans fg0 - d_fg .. fg1 - d_fg).
        let mut expected = 0;
        for u in 0..w as i64 {
            let is_fg = (fg0 as i64..fg1 as i64).contains(&u);
            let d = if is_fg { d_fg } else { d_bg } as i64;
            let x = u - d;
            if x < 0 || x >= w as i64 {
                continue;
            }
            let hidden = !is_fg && (fg0 as i64 - d_fg as i64..fg1 as i64 - d_fg as i64).contains(&x);
            if !hidden {
                expected += 1;
            }
        }
        assert_eq!(mask.count(), expected * h);
        // The band exists: some in-bounds background pixels were rejected.
        assert!(mask.count() < (w - d_bg as usize) * h);
    }

    #[test]
    fn anchoring_agrees_without_occlusion() {
        let (w, h) = (128, 8);
        let values: Vec<f64> = (0..w * h).map(|i| 6.0 + 0.01 * (i % w) as f64).collect();
        let left = Grid2D::new(w, h, values.clone(), Unit::Dimensionless).unwrap();
        let right = Grid2D::new(w, h, values, Unit::Dimensionless).unwrap();
        let l = lr_consistency_mask(&left, &right, 8.0).unwrap().fraction();
        let r = rl_consistency_mask(&right, &left, 8.0).unwrap().fraction();
        assert!((l - r).abs() < 0.01, "{l} vs {r}");
    }

    #[test]
    fn frame_filter() {
        let (w, h) = (29, 10);
        let wide: Vec<f64> = (0..w * h).map(|i| 2.0 + (i % w) as f64).collect();
        let wide = Grid2D::new(w, h, wide, Unit::Dimensionless).unwrap();
        let all = ValidityMask::full(w, h);
        assert!(accept_stereo_frame(&wide, &all, 0.8, 8.0));

        let flat = Grid2D::filled(w, h, 5.0, Unit::Dimensionless).unwrap();
        assert_eq!(stereo_verdict(&flat, &all, 0.8, 8.0), StereoVerdict::RejectedRange);

        let (w, h) = (100, 1);
        let wide: Vec<f64> = (0..w).map(|i| i as f64 * 0.3).collect();
        let wide = Grid2D::new(w, h, wide, Unit::Dimensionless).unwrap();
        let bits: Vec<bool> = (0..w).map(|i| i < 79).collect();
        let most = ValidityMask::new(w, h, bits).unwrap();
        assert_eq!(stereo_verdict(&wide, &most, 0.8, 8.0), StereoVerdict::RejectedValidity);
        // Exactly 80% is not "more than 80%".
        let bits: Vec<bool> = (0..w).map(|i| i < 80).collect();
        let exact = ValidityMask::new(w, h, bits).unwrap();
        assert!(!accept_stereo_frame(&wide, &exact, 0.8, 8.0));
        assert!(!accept_stereo_frame(&wide, &ValidityMask::empty(w, h), 0.8, 8.0));
        assert_eq!(StereoVerdict::RejectedRange.to_string(), "rejected: range");
    }

    fn dataset(name: &str, n: usize) -> NamedDataset {
        let s = generate_scene(&small(), 0).unwrap();
        NamedDataset {
            name: name.into(),
            scenes: (0..n).map(|i| ToyScene { seed: i as u64, ..s.clone() }).collect(),
        }
    }

    #[test]
    fn mixture_rejects_empty() {
        assert!(MixtureSpec::new(vec![]).is_err());
        assert!(MixtureSpec::new(vec![dataset("a", 0)]).is_err());
        let spec = MixtureSpec::from_nonempty(vec![dataset("a", 0), dataset("b", 2)]).unwrap();
        assert_eq!(spec.datasets().len(), 1);
    }

    #[test]
    fn mixture_is_equal_probability() {
        let one = MixtureSpec::new(vec![dataset("only", 3)]).unwrap();
        let mut rng = Rng::new(1);
        assert!((0..100).all(|_| one.draw(&mut rng).0 == 0));

        // Binomial(10000, 0.5) has sd 0.005, so +-0.02 is four standard deviations.
        let spec = MixtureSpec::new(vec![dataset("small", 1), dataset("large", 999)]).unwrap();
        let mut rng = Rng::new(2024);
        let hits = (0..10_000).filter(|_| spec.draw(&mut rng).0 == 0).count();
        assert!((hits as f64 / 1e4 - 0.5).abs() < 0.02, "{hits}");

        let spec =
            MixtureSpec::new(vec![dataset("a", 5), dataset("b", 50), dataset("c", 500)]).unwrap();
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            counts[spec.draw(&mut rng).0] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e4 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
        }
        let picked = sample_mixture(&spec, &mut Rng::new(5));
        assert_eq!(picked.width(), 20);
    }

    #[test]
    fn scene_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = make_utss(&generate_scene(&small(), 8).unwrap(), 8).unwrap();
        save_scene(dir.path(), &s).unwrap();
        let back = load_scene(dir.path()).unwrap();
        assert_eq!(back, s);
    }
}
