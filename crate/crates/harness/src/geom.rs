//! Disparity-shift geometry demo: distortion tables and transformed line loci.

use std::path::Path;

use geodepth_core::codec::write_ply_ascii;
use geodepth_core::geometry::{
    affine_depth_locus, angle_distortion, collinearity_residual, depth_ratio_distortion,
    DisparityAffine, LineParam,
};
use geodepth_core::rng::Rng;
use geodepth_core::{CameraIntrinsics, PointCloud};
use serde::{Deserialize, Serialize};

use crate::config::GeometryConfig;
use crate::error::{io_err, HarnessError, Result};

/// Tolerance for "exactly zero" distortion under a pure scale.
pub const ZERO_TOLERANCE: f64 = 1e-12;

const DEPTH_PAIRS: [(f64, f64); 5] = [(1.0, 2.0), (2.0, 4.0), (1.0, 10.0), (3.0, 3.0), (5.0, 8.0)];
const RANDOM_CORNERS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEntry {
    pub z1: f64,
    pub z2: f64,
    pub distortion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleEntry {
    pub name: String,
    /// Points p, q (vertex), r.
    pub corner: [[f64; 3]; 3],
    pub distortion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocusEntry {
    pub name: String,
    /// Depth along the samples is affine in image coordinates for `depth_affine`
    /// loci, and the exact projection of a 3D segment for `projected` loci.
    pub kind: String,
    pub residual_original: f64,
    pub residual_transformed: f64,
    pub ply_original: String,
    pub ply_transformed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeomDemoReport {
    pub c1: f64,
    pub c2: f64,
    pub ratio_distortion: Vec<RatioEntry>,
    pub angle_distortion: Vec<AngleEntry>,
    pub loci: Vec<LocusEntry>,
}

impl GeomDemoReport {
    /// Largest ratio or angle distortion in the tables.
    pub fn max_distortion(&self) -> f64 {
        self.ratio_distortion
            .iter()
            .map(|e| e.distortion)
            .chain(self.angle_distortion.iter().map(|e| e.distortion))
            .fold(0.0, f64::max)
    }
}

fn corners(seed: u64) -> Vec<(String, [[f64; 3]; 3])> {
    let mut out = vec![
        ("axis_corner".to_string(), [[1.0, 0.0, 2.0], [0.0, 0.0, 2.0], [0.0, 0.0, 3.0]]),
        ("generic_corner".to_string(), [[1.0, 0.0, 2.0], [0.0, 0.0, 2.5], [0.0, 0.5, 3.0]]),
    ];
    let mut rng = Rng::new(seed);
    for k in 0..RANDOM_CORNERS {
        let mut point = || [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(2.0, 5.0)];
        out.push((format!("random_corner_{k}"), [point(), point(), point()]));
    }
    out
}

/// Depth at each sample for the exact projection of the 3D segment `a -> b`.
fn projected_segment(cam: &CameraIntrinsics, a: [f64; 3], b: [f64; 3], n: usize) -> Vec<(f64, f64, f64)> {
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            cam.project([
                a[0] + t * (b[0] - a[0]),
                a[1] + t * (b[1] - a[1]),
                a[2] + t * (b[2] - a[2]),
            ])
        })
        .collect()
}

fn transform_cloud(
    samples: &[(f64, f64, f64)],
    t: &DisparityAffine,
    cam: &CameraIntrinsics,
) -> Result<(PointCloud, PointCloud)> {
    let mut before = Vec::with_capacity(samples.len());
    let mut after = Vec::with_capacity(samples.len());
    for &(u, v, d) in samples {
        let warped = t.apply_depth(d).ok_or_else(|| {
            HarnessError::Config(format!("transform leaves a non-positive depth at ({u}, {v})"))
        })?;
        before.push(cam.unproject(u, v, d));
        after.push(cam.unproject(u, v, warped));
    }
    Ok((PointCloud::new(before), PointCloud::new(after)))
}

fn write_ply(out: &Path, name: &str, cloud: &PointCloud) -> Result<String> {
    let path = out.join(name);
    std::fs::write(&path, write_ply_ascii(cloud)).map_err(io_err(&path))?;
    Ok(name.to_string())
}

/// Builds the distortion tables and writes the original and transformed loci as PLY files.
pub fn run_geom_demo(cfg: &GeometryConfig, out: &Path) -> Result<GeomDemoReport> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let t = DisparityAffine::new(cfg.c1, cfg.c2);
    let cam = CameraIntrinsics::centered(cfg.focal, cfg.width, cfg.height)?;

    let ratio_distortion = DEPTH_PAIRS
        .iter()
        .map(|&(z1, z2)| {
            Ok(RatioEntry {
                z1,
                z2,
                distortion: depth_ratio_distortion(z1, z2, &t)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let angle_distortion = corners(cfg.seed)
        .into_iter()
        .map(|(name, corner)| {
            Ok(AngleEntry {
                distortion: angle_distortion(corner, &t, &cam)?,
                name,
                corner,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let n = cfg.samples;
    let row: Vec<(f64, f64)> = (0..n)
        .map(|i| (w * 0.125 + (w * 0.75) * i as f64 / (n - 1) as f64, (h - 1.0) / 2.0))
        .collect();
    let mut loci = Vec::new();
    for (name, line) in [
        ("fronto_parallel", LineParam { a: 0.0, b: 0.0, c: 2.0 }),
        ("slanted", LineParam { a: 0.5, b: 0.0, c: 2.0 }),
    ] {
        let original = affine_depth_locus(&line, &DisparityAffine::IDENTITY, &cam, &row)?;
        let transformed = affine_depth_locus(&line, &t, &cam, &row)?;
        loci.push(LocusEntry {
            name: name.into(),
            kind: "depth_affine".into(),
            residual_original: collinearity_residual(&original)?,
            residual_transformed: collinearity_residual(&transformed)?,
            ply_original: write_ply(out, &format!("locus_{name}_original.ply"), &original)?,
            ply_transformed: write_ply(out, &format!("locus_{name}_transformed.ply"), &transformed)?,
        });
    }
    let segment = projected_segment(&cam, [-0.8, -0.3, 1.5], [0.9, 0.4, 6.0], n);
    let (original, transformed) = transform_cloud(&segment, &t, &cam)?;
    loci.push(LocusEntry {
        name: "segment".into(),
        kind: "projected".into(),
        residual_original: collinearity_residual(&original)?,
        residual_transformed: collinearity_residual(&transformed)?,
        ply_original: write_ply(out, "locus_segment_original.ply", &original)?,
        ply_transformed: write_ply(out, "locus_segment_transformed.ply", &transformed)?,
    });

    let report = GeomDemoReport {
        c1: cfg.c1,
        c2: cfg.c2,
        ratio_distortion,
        angle_distortion,
        loci,
    };
    if cfg.c2 == 0.0 && report.max_distortion() > ZERO_TOLERANCE {
        return Err(HarnessError::Violation(format!(
            "pure scale produced distortion {}",
            report.max_distortion()
        )));
    }
    Ok(report)
}
