//! Analytic against central-difference gradients for both losses composed with the regressor.

use geodepth_core::losses::{check_gradient, utss_terms, uts_terms};
use geodepth_core::model::{ToyRegressor, PARAM_COUNT};
use geodepth_core::rng::{derive_seed, Rng};
use geodepth_core::synth::{generate_scene, make_uts, make_utss, SceneConfig, ToyScene};
use serde::{Deserialize, Serialize};

use crate::config::GradcheckConfig;
use crate::error::{HarnessError, Result};

const STREAM_SCENE: u64 = 1;
const STREAM_MODEL: u64 = 2;
const STREAM_PICK: u64 = 3;
/// Jitter applied when a point sits on a kink of the L1 or median.
const JITTER: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub points: usize,
    pub coords_per_point: usize,
    pub pixels_per_point: usize,
    pub step: f64,
    pub tolerance: f64,
    pub uts_max_rel_error: f64,
    pub utss_max_rel_error: f64,
    /// Total kink-escaping resamples over all points.
    pub resamples: usize,
    pub pass: bool,
}

#[derive(Clone, Copy)]
enum Which {
    Uts,
    Utss,
}

fn scene_cfg() -> SceneConfig {
    SceneConfig {
        width: 16,
        height: 16,
        ..SceneConfig::default()
    }
}

fn check_point(
    which: Which,
    scene: &ToyScene,
    model: &ToyRegressor,
    pixels: &[usize],
    coords: &[usize],
    cfg: &GradcheckConfig,
    rng: &mut Rng,
) -> Result<(f64, usize)> {
    let target: Vec<f64> = pixels.iter().map(|&i| scene.target.values()[i]).collect();
    let log_target: Vec<f64> = target.iter().map(|t| t.ln()).collect();
    let check = check_gradient(model.params(), coords, cfg.step, JITTER, rng, |p| {
        let m = ToyRegressor::from_params(p.to_vec())?;
        let pred = m.forward_pixels(&scene.features, pixels);
        let (value, upstream) = match which {
            Which::Uts => uts_terms(&pred, &log_target)?,
            Which::Utss => utss_terms(&pred, &target)?,
        };
        Ok((value, m.backward_pixels(&scene.features, pixels, &upstream)?))
    })?;
    Ok((check.max_rel_error, check.resamples))
}

/// Checks `cfg.points` seeded (scene, parameter) points per loss.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut uts_max: f64 = 0.0;
    let mut utss_max: f64 = 0.0;
    let mut resamples = 0;
    for k in 0..cfg.points as u64 {
        let point_seed = derive_seed(cfg.seed, k);
        let clean = generate_scene(&scene_cfg(), derive_seed(point_seed, STREAM_SCENE))?;
        let model = ToyRegressor::seeded(derive_seed(point_seed, STREAM_MODEL));
        let mut rng = Rng::new(derive_seed(point_seed, STREAM_PICK));
        let valid: Vec<usize> = clean.mask.indices().collect();
        if valid.len() < cfg.pixels {
            return Err(HarnessError::Config(format!(
                "gradcheck scene has {} valid pixels, {} requested",
                valid.len(),
                cfg.pixels
            )));
        }
        let pixels: Vec<usize> =
            rng.choose_distinct(valid.len(), cfg.pixels).into_iter().map(|i| valid[i]).collect();
        let coords = rng.choose_distinct(PARAM_COUNT, cfg.coords.min(PARAM_COUNT));
        let uts = make_uts(&clean, clean.seed)?;
        let utss = make_utss(&clean, clean.seed)?;
        let (e, r) = check_point(Which::Uts, &uts, &model, &pixels, &coords, cfg, &mut rng)?;
        uts_max = uts_max.max(e);
        resamples += r;
        let (e, r) = check_point(Which::Utss, &utss, &model, &pixels, &coords, cfg, &mut rng)?;
        utss_max = utss_max.max(e);
        resamples += r;
    }
    Ok(GradcheckReport {
        points: cfg.points,
        coords_per_point: cfg.coords.min(PARAM_COUNT),
        pixels_per_point: cfg.pixels,
        step: cfg.step,
        tolerance: cfg.tolerance,
        uts_max_rel_error: uts_max,
        utss_max_rel_error: utss_max,
        resamples,
        pass: uts_max < cfg.tolerance && utss_max < cfg.tolerance,
    })
}
