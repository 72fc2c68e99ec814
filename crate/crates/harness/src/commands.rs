//! Command implementations. Each writes its artifacts under an output directory and
//! returns the JSON summary printed by the CLI.

use std::fs;
use std::path::Path;
use std::time::Instant;

use geodepth_core::codec::{read_pfm, write_pfm};
use geodepth_core::metrics::MetricReport;
use geodepth_core::model::{train, Checkpoint, ToyRegressor};
use geodepth_core::synth::{lr_consistency_mask, stereo_verdict, MixtureSpec, NamedDataset, ToyScene};
use geodepth_core::{Grid2D, SupervisionClass};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ablation::{evaluate_model, rows_to_csv, run_ablation, AblationResult};
use crate::config::HarnessConfig;
use crate::data::{self, write_json};
use crate::error::{io_err, HarnessError, Result};
use crate::geom::run_geom_demo;
use crate::gradcheck::run_gradcheck;

pub const CHECKPOINT: &str = "checkpoint.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const METRICS: &str = "metrics.json";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_CONTROL_CSV: &str = "ablation_control.csv";
pub const ABLATION_JSON: &str = "ablation.json";
pub const GRADCHECK_JSON: &str = "gradcheck.json";
pub const GEOM_JSON: &str = "geom_demo.json";
pub const STEREO_MASK: &str = "mask.pfm";
pub const STEREO_JSON: &str = "stereo.json";

/// Window of the trailing-loss figure in training summaries.
const LOSS_WINDOW: usize = 100;

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Seeds the part of the configuration a command draws from. Ablation seeds become
/// `seed, seed + 1, ...`, keeping their count.
pub fn apply_seed(cfg: &mut HarnessConfig, command: &str, seed: u64) {
    match command {
        "gen-data" => cfg.data.seed = seed,
        "train" => cfg.train.seed = seed,
        "ablate" => {
            let n = cfg.ablation.seeds.len() as u64;
            cfg.ablation.seeds = (seed..seed + n).collect();
        }
        "gradcheck" => cfg.gradcheck.seed = seed,
        "geom-demo" => cfg.geometry.seed = seed,
        _ => {}
    }
}

pub fn gen_data(cfg: &HarnessConfig, out: &Path) -> Result<Value> {
    let ds = data::generate(&cfg.data)?;
    let m = data::save(out, &ds)?;
    Ok(json!({
        "command": "gen-data",
        "out": out,
        "n_train": m.train.len(),
        "n_test": m.test.len(),
        "n_uts": m.n_uts,
        "n_utss": m.n_utss,
        "width": cfg.data.scene.width,
        "height": cfg.data.scene.height,
        "seed": cfg.data.seed,
    }))
}

/// Groups scenes by supervision: ABSOLUTE and UTS scenes form one dataset, UTSS the other.
pub fn mixture_from(scenes: &[ToyScene]) -> Result<MixtureSpec> {
    let (uts, utss): (Vec<ToyScene>, Vec<ToyScene>) = scenes
        .iter()
        .cloned()
        .partition(|s| s.cls != SupervisionClass::Utss);
    Ok(MixtureSpec::from_nonempty(vec![
        NamedDataset {
            name: "uts".into(),
            scenes: uts,
        },
        NamedDataset {
            name: "utss".into(),
            scenes: utss,
        },
    ])?)
}

pub fn train_cmd(cfg: &HarnessConfig, data_dir: &Path, out: &Path) -> Result<Value> {
    let ds = data::load(data_dir)?;
    let mixture = mixture_from(&ds.train)?;
    let (model, log) = train(&mixture, &cfg.train)?;
    ensure_dir(out)?;
    write_json(&out.join(CHECKPOINT), &model.to_checkpoint())?;
    write_text(&out.join(TRAIN_LOG), &log.to_csv())?;
    Ok(json!({
        "command": "train",
        "out": out,
        "steps": log.rows.len(),
        "seed": cfg.train.seed,
        "datasets": mixture.datasets().iter().map(|d| json!({"name": d.name, "scenes": d.scenes.len()})).collect::<Vec<_>>(),
        "final_loss": log.rows.last().map(|r| r.loss),
        "trailing_loss": log.trailing_loss(LOSS_WINDOW),
    }))
}

pub fn load_checkpoint(path: &Path) -> Result<ToyRegressor> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    Ok(ToyRegressor::from_checkpoint(&ckpt)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean: MetricReport,
    pub per_scene: Vec<MetricReport>,
}

pub fn eval(model_path: &Path, data_dir: &Path, out: &Path) -> Result<Value> {
    let model = load_checkpoint(model_path)?;
    let ds = data::load(data_dir)?;
    let cam = ds.camera()?;
    let per_scene = ds
        .test
        .iter()
        .map(|s| evaluate_model(&model, std::slice::from_ref(s), &cam))
        .collect::<Result<Vec<_>>>()?;
    let mean = evaluate_model(&model, &ds.test, &cam)?;
    ensure_dir(out)?;
    write_json(&out.join(METRICS), &EvalReport { mean, per_scene })?;
    Ok(json!({
        "command": "eval",
        "out": out,
        "scenes": ds.test.len(),
        "metrics": mean,
    }))
}

pub fn ablate(cfg: &HarnessConfig, data_dir: &Path, out: &Path) -> Result<(Value, AblationResult)> {
    let started = Instant::now();
    let ds = data::load(data_dir)?;
    let cam = ds.camera()?;
    let result = run_ablation(&ds.train, &ds.test, &cam, &cfg.ablation, &cfg.train)?;
    ensure_dir(out)?;
    write_text(&out.join(ABLATION_CSV), &rows_to_csv(&result.rows))?;
    write_text(&out.join(ABLATION_CONTROL_CSV), &rows_to_csv(&result.controls))?;
    write_json(&out.join(ABLATION_JSON), &result)?;
    let summary = json!({
        "command": "ablate",
        "out": out,
        "rows": result.rows.len(),
        "controls": result.controls.len(),
        "failed_runs": result.rows.iter().chain(&result.controls).filter(|r| r.status != crate::ablation::RunStatus::Ok).count(),
        "summary": result.summary,
        "checks": result.checks,
        "elapsed_seconds": started.elapsed().as_secs_f64(),
    });
    Ok((summary, result))
}

pub fn gradcheck(cfg: &HarnessConfig, out: &Path) -> Result<Value> {
    let report = run_gradcheck(&cfg.gradcheck)?;
    ensure_dir(out)?;
    write_json(&out.join(GRADCHECK_JSON), &report)?;
    if !report.pass {
        return Err(HarnessError::Violation(format!(
            "gradient mismatch: uts {} utss {} (tolerance {})",
            report.uts_max_rel_error, report.utss_max_rel_error, report.tolerance
        )));
    }
    let mut summary = serde_json::to_value(&report)?;
    summary["command"] = json!("gradcheck");
    summary["out"] = json!(out);
    Ok(summary)
}

pub fn geom_demo(cfg: &HarnessConfig, out: &Path) -> Result<Value> {
    let report = run_geom_demo(&cfg.geometry, out)?;
    write_json(&out.join(GEOM_JSON), &report)?;
    Ok(json!({
        "command": "geom-demo",
        "out": out,
        "c1": report.c1,
        "c2": report.c2,
        "max_distortion": report.max_distortion(),
        "angle_distortion": report.angle_distortion.iter().map(|e| json!({"name": e.name, "distortion": e.distortion})).collect::<Vec<_>>(),
        "loci": report.loci.iter().map(|l| json!({"name": l.name, "kind": l.kind, "residual_original": l.residual_original, "residual_transformed": l.residual_transformed})).collect::<Vec<_>>(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoReport {
    pub verdict: String,
    pub valid_fraction: f64,
    /// Disparity range over valid left pixels; absent when none are valid.
    pub disparity_range: Option<f64>,
    pub max_discrepancy: f64,
    pub min_valid_fraction: f64,
    pub min_range: f64,
}

fn read_disparity(path: &Path) -> Result<Grid2D> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(read_pfm(&bytes)?.0)
}

pub fn mask_stereo(cfg: &HarnessConfig, left: &Path, right: &Path, out: &Path) -> Result<Value> {
    let (dl, dr) = (read_disparity(left)?, read_disparity(right)?);
    let s = &cfg.stereo;
    let mask = lr_consistency_mask(&dl, &dr, s.max_discrepancy)?;
    let verdict = stereo_verdict(&dl, &mask, s.min_valid_fraction, s.min_range);
    let valid = dl.gather(&mask);
    let disparity_range = (!valid.is_empty()).then(|| {
        let (lo, hi) = valid
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        hi - lo
    });
    let report = StereoReport {
        verdict: verdict.to_string(),
        valid_fraction: mask.fraction(),
        disparity_range,
        max_discrepancy: s.max_discrepancy,
        min_valid_fraction: s.min_valid_fraction,
        min_range: s.min_range,
    };
    ensure_dir(out)?;
    let mask_path = out.join(STEREO_MASK);
    fs::write(&mask_path, write_pfm(&mask.to_grid())?).map_err(io_err(&mask_path))?;
    write_json(&out.join(STEREO_JSON), &report)?;
    let mut summary = serde_json::to_value(&report)?;
    summary["command"] = json!("mask-stereo");
    summary["out"] = json!(out);
    Ok(summary)
}
