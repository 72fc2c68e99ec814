//! Single JSON configuration with dotted-path overrides.

use std::path::Path;

use geodepth_core::model::TrainConfig;
use geodepth_core::synth::{SceneConfig, MAX_LR_DISCREPANCY, MIN_DISPARITY_RANGE, MIN_VALID_FRACTION};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub scene: SceneConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Fraction of training scenes that keep up-to-scale labels; the rest get
    /// shift-and-scale corrupted disparity.
    pub uts_ratio: f64,
    /// Focal length in pixels; the principal point sits at the image center.
    pub focal: f64,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            n_train: 200,
            n_test: 50,
            uts_ratio: 0.1,
            focal: 64.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub ratios: Vec<f64>,
    /// Training seeds; every (ratio, scheme) cell is trained once per seed.
    pub seeds: Vec<u64>,
    /// Also train a control on shift-and-scale labels only.
    pub control: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            ratios: vec![0.05, 0.1, 0.2, 0.5, 1.0],
            seeds: vec![0, 1, 2],
            control: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub points: usize,
    pub step: f64,
    /// Parameters compared per point.
    pub coords: usize,
    /// Pixels entering the loss per point.
    pub pixels: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            points: 100,
            step: 1e-5,
            coords: 20,
            pixels: 48,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub c1: f64,
    pub c2: f64,
    pub focal: f64,
    pub width: usize,
    pub height: usize,
    /// Samples along each demo line.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            c1: 1.0,
            c2: 0.2,
            focal: 64.0,
            width: 64,
            height: 64,
            samples: 33,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StereoConfig {
    pub max_discrepancy: f64,
    pub min_valid_fraction: f64,
    pub min_range: f64,
}

impl Default for StereoConfig {
    fn default() -> Self {
        Self {
            max_discrepancy: MAX_LR_DISCREPANCY,
            min_valid_fraction: MIN_VALID_FRACTION,
            min_range: MIN_DISPARITY_RANGE,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
    pub gradcheck: GradcheckConfig,
    pub geometry: GeometryConfig,
    pub stereo: StereoConfig,
}

impl HarnessConfig {
    /// Defaults, overlaid with the optional config file, then with `path=value` overrides.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut root = serde_json::to_value(Self::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            let patch: Value = serde_json::from_str(&text)?;
            merge(&mut root, patch);
        }
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("override `{item}` is not key=value")))?;
            set_path(&mut root, key.trim(), parse_scalar(raw.trim()))?;
        }
        let cfg: Self =
            serde_json::from_value(root).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        self.data.scene.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if d.n_train == 0 || d.n_test == 0 {
            return bad("data.n_train and data.n_test must be positive".into());
        }
        if !(d.uts_ratio > 0.0 && d.uts_ratio <= 1.0) {
            return bad(format!("data.uts_ratio {} is outside (0, 1]", d.uts_ratio));
        }
        if !(d.focal > 0.0) || !d.focal.is_finite() {
            return bad(format!("data.focal {} must be positive", d.focal));
        }
        let a = &self.ablation;
        if a.ratios.is_empty() || a.seeds.is_empty() {
            return bad("ablation.ratios and ablation.seeds must be non-empty".into());
        }
        if let Some(r) = a.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return bad(format!("ablation ratio {r} is outside (0, 1]"));
        }
        for (i, r) in a.ratios.iter().enumerate() {
            if a.ratios[..i].contains(r) {
                return bad(format!("ablation ratio {r} is repeated"));
            }
        }
        for (i, s) in a.seeds.iter().enumerate() {
            if a.seeds[..i].contains(s) {
                return bad(format!("ablation seed {s} is repeated"));
            }
        }
        let g = &self.gradcheck;
        if g.points == 0 || g.coords == 0 || g.pixels < 2 || !(g.step > 0.0) || !(g.tolerance > 0.0) {
            return bad("gradcheck needs points, coords >= 1, pixels >= 2, positive step and tolerance".into());
        }
        let geo = &self.geometry;
        if !(geo.c1 > 0.0) || !(geo.c2 >= 0.0) || !(geo.focal > 0.0) || geo.samples < 3 {
            return bad("geometry needs c1 > 0, c2 >= 0, focal > 0 and at least 3 samples".into());
        }
        if geo.width < 2 || geo.height < 2 {
            return bad("geometry image must be at least 2x2".into());
        }
        let s = &self.stereo;
        if !(s.max_discrepancy > 0.0) || !(0.0..1.0).contains(&s.min_valid_fraction) || !(s.min_range >= 0.0) {
            return bad("stereo thresholds out of range".into());
        }
        Ok(())
    }
}

/// Number of up-to-scale scenes out of `n` for a ratio: floor rounding, at least one.
pub fn uts_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64 + 1e-9).floor() as usize).clamp(1, n)
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// JSON literal when it parses as one, otherwise a bare string.
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| HarnessError::Config(format!("unknown configuration key `{key}`")))?;
    }
    *node = value;
    Ok(())
}
