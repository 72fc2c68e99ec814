//! Generated datasets on disk: `manifest.json` plus one directory per scene.

use std::fs;
use std::path::Path;

use geodepth_core::rng::derive_seed;
use geodepth_core::synth::{generate_scene, load_scene, make_uts, make_utss, save_scene, Corruption, ToyScene};
use geodepth_core::{CameraIntrinsics, SupervisionClass};
use serde::{Deserialize, Serialize};

use crate::config::{uts_count, DataConfig};
use crate::error::{io_err, HarnessError, Result};

const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Scene directory relative to the dataset root.
    pub dir: String,
    pub seed: u64,
    pub class: SupervisionClass,
    pub corruption: Corruption,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config: DataConfig,
    pub n_uts: usize,
    pub n_utss: usize,
    pub train: Vec<ManifestEntry>,
    pub test: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DataConfig,
    pub train: Vec<ToyScene>,
    pub test: Vec<ToyScene>,
}

impl Dataset {
    pub fn camera(&self) -> Result<CameraIntrinsics> {
        Ok(CameraIntrinsics::centered(
            self.config.focal,
            self.config.scene.width,
            self.config.scene.height,
        )?)
    }
}

pub fn train_seed(base: u64, index: usize) -> u64 {
    derive_seed(derive_seed(base, STREAM_TRAIN), index as u64)
}

pub fn test_seed(base: u64, index: usize) -> u64 {
    derive_seed(derive_seed(base, STREAM_TEST), index as u64)
}

/// Assigns supervision to clean scenes: the first `uts_count(ratio, n)` become
/// up-to-scale, the rest shift-and-scale corrupted. Corruption draws are keyed on
/// each scene's own seed, so a scene is corrupted identically under every ratio.
pub fn assign_classes(clean: &[ToyScene], ratio: f64) -> Result<(Vec<ToyScene>, Vec<ToyScene>)> {
    let n_uts = uts_count(ratio, clean.len());
    let uts = clean[..n_uts]
        .iter()
        .map(|s| make_uts(s, s.seed))
        .collect::<geodepth_core::Result<Vec<_>>>()?;
    let utss = clean[n_uts..]
        .iter()
        .map(|s| make_utss(s, s.seed))
        .collect::<geodepth_core::Result<Vec<_>>>()?;
    Ok((uts, utss))
}

pub fn generate(cfg: &DataConfig) -> Result<Dataset> {
    let clean = (0..cfg.n_train)
        .map(|i| generate_scene(&cfg.scene, train_seed(cfg.seed, i)))
        .collect::<geodepth_core::Result<Vec<_>>>()?;
    let (mut train, utss) = assign_classes(&clean, cfg.uts_ratio)?;
    train.extend(utss);
    let test = (0..cfg.n_test)
        .map(|i| generate_scene(&cfg.scene, test_seed(cfg.seed, i)))
        .collect::<geodepth_core::Result<Vec<_>>>()?;
    Ok(Dataset {
        config: cfg.clone(),
        train,
        test,
    })
}

fn entry(split: &str, index: usize, scene: &ToyScene) -> ManifestEntry {
    ManifestEntry {
        dir: format!("{split}/{index:04}"),
        seed: scene.seed,
        class: scene.cls,
        corruption: scene.corruption,
    }
}

pub fn manifest(ds: &Dataset) -> Manifest {
    let n_uts = ds.train.iter().filter(|s| s.cls == SupervisionClass::Uts).count();
    Manifest {
        config: ds.config.clone(),
        n_uts,
        n_utss: ds.train.len() - n_uts,
        train: ds.train.iter().enumerate().map(|(i, s)| entry("train", i, s)).collect(),
        test: ds.test.iter().enumerate().map(|(i, s)| entry("test", i, s)).collect(),
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn save(root: &Path, ds: &Dataset) -> Result<Manifest> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let m = manifest(ds);
    let scenes = ds.train.iter().chain(&ds.test);
    for (e, scene) in m.train.iter().chain(&m.test).zip(scenes) {
        save_scene(&root.join(&e.dir), scene)?;
    }
    write_json(&root.join(MANIFEST), &m)?;
    Ok(m)
}

pub fn load(root: &Path) -> Result<Dataset> {
    let path = root.join(MANIFEST);
    if !path.is_file() {
        return Err(HarnessError::MissingData(format!("{} not found", path.display())));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let read = |entries: &[ManifestEntry]| -> Result<Vec<ToyScene>> {
        entries
            .iter()
            .map(|e| {
                let scene = load_scene(&root.join(&e.dir))?;
                if scene.seed != e.seed || scene.cls != e.class {
                    return Err(HarnessError::MissingData(format!(
                        "scene {} does not match the manifest",
                        e.dir
                    )));
                }
                Ok(scene)
            })
            .collect()
    };
    Ok(Dataset {
        train: read(&m.train)?,
        test: read(&m.test)?,
        config: m.config,
    })
}
