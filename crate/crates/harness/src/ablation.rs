//! UTS-ratio ablation: mixture training against UTS-only training at equal step budgets.

use std::fmt;

use geodepth_core::metrics::{evaluate_uts, MetricReport};
use geodepth_core::model::{train, ToyRegressor, TrainConfig};
use geodepth_core::synth::{make_utss, MixtureSpec, NamedDataset, ToyScene};
use geodepth_core::CameraIntrinsics;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::AblationConfig;
use crate::data::assign_classes;
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// UTS and UTSS datasets mixed with equal probability.
    #[serde(rename = "GP2")]
    Gp2,
    /// Only the UTS scenes of the split.
    #[serde(rename = "UTS_ONLY")]
    UtsOnly,
    /// Every training scene with shift-and-scale labels; the control run.
    #[serde(rename = "UTSS_ONLY")]
    UtssOnly,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Gp2 => "GP2",
            Self::UtsOnly => "UTS_ONLY",
            Self::UtssOnly => "UTSS_ONLY",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    /// Non-finite loss during training.
    Diverged,
    /// Predictions collapsed to a constant, so a loss or metric was undefined.
    Degenerate,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Diverged => "diverged",
            Self::Degenerate => "degenerate",
        }
    }
}

/// One trained model evaluated on the test split. Metrics are absent for failed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub uts_ratio: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub status: RunStatus,
    pub delta_error: Option<f64>,
    pub rel: Option<f64>,
    pub shift_indicator: Option<f64>,
    pub cloud_rmse: Option<f64>,
}

/// Means over the converged seeds of one (ratio, scheme) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub uts_ratio: f64,
    pub scheme: Scheme,
    pub runs: usize,
    pub delta_error: f64,
    pub rel: f64,
    pub shift_indicator: f64,
    pub cloud_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeCheck {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    /// UTSS-only control runs; `uts_ratio` is 0.
    pub controls: Vec<AblationRow>,
    pub summary: Vec<CellSummary>,
    pub checks: Vec<ShapeCheck>,
}

pub const CSV_HEADER: &str = "uts_ratio,scheme,seed,status,delta_error,rel,shift_indicator,cloud_rmse";

fn field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn rows_to_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.uts_ratio,
            r.scheme,
            r.seed,
            r.status.as_str(),
            field(r.delta_error),
            field(r.rel),
            field(r.shift_indicator),
            field(r.cloud_rmse)
        ));
    }
    out
}

/// Mean test metrics of a model over a set of scenes.
pub fn evaluate_model(
    model: &ToyRegressor,
    scenes: &[ToyScene],
    cam: &CameraIntrinsics,
) -> Result<MetricReport> {
    let reports = scenes
        .iter()
        .map(|s| evaluate_uts(&model.forward(s), &s.gt_depth, &s.mask, cam))
        .collect::<geodepth_core::Result<Vec<_>>>()?;
    MetricReport::mean(&reports).ok_or_else(|| HarnessError::MissingData("empty test split".into()))
}

fn run_cell(
    mixture: &MixtureSpec,
    uts_ratio: f64,
    scheme: Scheme,
    seed: u64,
    train_cfg: &TrainConfig,
    test: &[ToyScene],
    cam: &CameraIntrinsics,
) -> Result<AblationRow> {
    let cfg = TrainConfig {
        seed,
        ..train_cfg.clone()
    };
    let row = |status, m: Option<MetricReport>| AblationRow {
        uts_ratio,
        scheme,
        seed,
        status,
        delta_error: m.map(|m| m.delta_error),
        rel: m.map(|m| m.rel),
        shift_indicator: m.map(|m| m.shift_indicator),
        cloud_rmse: m.map(|m| m.cloud_rmse),
    };
    let tag = format!("ablate: ratio={uts_ratio} scheme={scheme} seed={seed}");
    let model = match train(mixture, &cfg) {
        Ok((model, _)) => model,
        Err(geodepth_core::Error::Diverged { step, loss }) => {
            eprintln!("{tag} diverged at step {step} (loss {loss})");
            return Ok(row(RunStatus::Diverged, None));
        }
        Err(geodepth_core::Error::Degenerate(msg)) => {
            eprintln!("{tag} degenerate during training: {msg}");
            return Ok(row(RunStatus::Degenerate, None));
        }
        Err(e) => return Err(e.into()),
    };
    match evaluate_model(&model, test, cam) {
        Ok(m) => {
            eprintln!("{tag} delta={:.4} shift={:.4}", m.delta_error, m.shift_indicator);
            Ok(row(RunStatus::Ok, Some(m)))
        }
        Err(HarnessError::Core(geodepth_core::Error::Degenerate(msg))) => {
            eprintln!("{tag} degenerate predictions: {msg}");
            Ok(row(RunStatus::Degenerate, None))
        }
        Err(e) => Err(e),
    }
}

fn dataset(name: &str, scenes: Vec<ToyScene>) -> NamedDataset {
    NamedDataset {
        name: name.into(),
        scenes,
    }
}

fn run_seeds(
    jobs: &[(&MixtureSpec, Scheme)],
    uts_ratio: f64,
    cfg: &AblationConfig,
    train_cfg: &TrainConfig,
    test: &[ToyScene],
    cam: &CameraIntrinsics,
) -> Result<Vec<AblationRow>> {
    let cells: Vec<(&MixtureSpec, Scheme, u64)> = jobs
        .iter()
        .flat_map(|&(m, s)| cfg.seeds.iter().map(move |&seed| (m, s, seed)))
        .collect();
    cells
        .par_iter()
        .map(|&(m, scheme, seed)| run_cell(m, uts_ratio, scheme, seed, train_cfg, test, cam))
        .collect()
}

/// Trains every (ratio, scheme, seed) cell on re-corrupted copies of `train_scenes` and
/// evaluates each model on `test`. Diverged runs are recorded, not fatal.
pub fn run_ablation(
    train_scenes: &[ToyScene],
    test: &[ToyScene],
    cam: &CameraIntrinsics,
    cfg: &AblationConfig,
    train_cfg: &TrainConfig,
) -> Result<AblationResult> {
    if train_scenes.is_empty() || test.is_empty() {
        return Err(HarnessError::MissingData("ablation needs train and test scenes".into()));
    }
    let clean: Vec<ToyScene> = train_scenes.iter().map(ToyScene::to_absolute).collect();
    let mut rows = Vec::new();
    for &ratio in &cfg.ratios {
        let (uts, utss) = assign_classes(&clean, ratio)?;
        let uts_only = MixtureSpec::new(vec![dataset("uts", uts.clone())])?;
        let gp2 = MixtureSpec::from_nonempty(vec![dataset("uts", uts), dataset("utss", utss)])?;
        rows.extend(run_seeds(
            &[(&gp2, Scheme::Gp2), (&uts_only, Scheme::UtsOnly)],
            ratio,
            cfg,
            train_cfg,
            test,
            cam,
        )?);
    }
    let mut controls = Vec::new();
    if cfg.control {
        let utss = clean
            .iter()
            .map(|s| make_utss(s, s.seed))
            .collect::<geodepth_core::Result<Vec<_>>>()?;
        let control = MixtureSpec::new(vec![dataset("utss", utss)])?;
        controls = run_seeds(&[(&control, Scheme::UtssOnly)], 0.0, cfg, train_cfg, test, cam)?;
    }
    let key = |r: &AblationRow| (r.uts_ratio, r.scheme, r.seed);
    rows.sort_by(|a, b| key(a).partial_cmp(&key(b)).expect("ratios are finite"));
    controls.sort_by_key(|r| r.seed);
    check_complete(&rows, cfg)?;

    let mut summary = Vec::new();
    for &ratio in &cfg.ratios {
        for scheme in [Scheme::Gp2, Scheme::UtsOnly] {
            summary.extend(summarize(&rows, ratio, scheme));
        }
    }
    summary.sort_by(|a, b| {
        (a.uts_ratio, a.scheme).partial_cmp(&(b.uts_ratio, b.scheme)).expect("ratios are finite")
    });
    summary.extend(summarize(&controls, 0.0, Scheme::UtssOnly));
    let checks = shape_checks(&summary);
    Ok(AblationResult {
        rows,
        controls,
        summary,
        checks,
    })
}

fn check_complete(rows: &[AblationRow], cfg: &AblationConfig) -> Result<()> {
    let expected = cfg.ratios.len() * 2 * cfg.seeds.len();
    let mut keys: Vec<(u64, Scheme, u64)> =
        rows.iter().map(|r| (r.uts_ratio.to_bits(), r.scheme, r.seed)).collect();
    keys.sort();
    keys.dedup();
    if rows.len() != expected || keys.len() != expected {
        return Err(HarnessError::Violation(format!(
            "expected {expected} distinct ablation rows, got {} ({} distinct)",
            rows.len(),
            keys.len()
        )));
    }
    Ok(())
}

fn summarize(rows: &[AblationRow], ratio: f64, scheme: Scheme) -> Option<CellSummary> {
    let ok: Vec<&AblationRow> = rows
        .iter()
        .filter(|r| r.uts_ratio == ratio && r.scheme == scheme && r.status == RunStatus::Ok)
        .collect();
    if ok.is_empty() {
        return None;
    }
    let n = ok.len() as f64;
    let mean = |f: fn(&AblationRow) -> Option<f64>| ok.iter().filter_map(|r| f(r)).sum::<f64>() / n;
    Some(CellSummary {
        uts_ratio: ratio,
        scheme,
        runs: ok.len(),
        delta_error: mean(|r| r.delta_error),
        rel: mean(|r| r.rel),
        shift_indicator: mean(|r| r.shift_indicator),
        cloud_rmse: mean(|r| r.cloud_rmse),
    })
}

fn cell(summary: &[CellSummary], ratio: f64, scheme: Scheme) -> Option<&CellSummary> {
    summary.iter().find(|c| c.uts_ratio == ratio && c.scheme == scheme)
}

/// The three qualitative checks on the ratio curve, for whichever of them the
/// configured grid supports.
pub fn shape_checks(summary: &[CellSummary]) -> Vec<ShapeCheck> {
    let get = |ratio, scheme| cell(summary, ratio, scheme);
    let mut checks = Vec::new();
    if let (Some(g01), Some(g1)) = (get(0.1, Scheme::Gp2), get(1.0, Scheme::Gp2)) {
        let value = (g01.delta_error - g1.delta_error).abs() / g1.delta_error;
        checks.push(ShapeCheck {
            name: "gp2_delta_error_at_0.1_within_25pct_of_1.0".into(),
            value,
            limit: 0.25,
            pass: value <= 0.25,
        });
    }
    if let (Some(g005), Some(g1), Some(u005), Some(u1)) = (
        get(0.05, Scheme::Gp2),
        get(1.0, Scheme::Gp2),
        get(0.05, Scheme::UtsOnly),
        get(1.0, Scheme::UtsOnly),
    ) {
        let value = (u005.delta_error - u1.delta_error) - (g005.delta_error - g1.delta_error);
        checks.push(ShapeCheck {
            name: "uts_only_gap_at_0.05_at_least_gp2_gap".into(),
            value,
            limit: 0.0,
            pass: value >= 0.0,
        });
    }
    if let (Some(g01), Some(c)) = (get(0.1, Scheme::Gp2), get(0.0, Scheme::UtssOnly)) {
        let value = g01.shift_indicator / c.shift_indicator;
        checks.push(ShapeCheck {
            name: "gp2_shift_at_0.1_below_half_of_control".into(),
            value,
            limit: 0.5,
            pass: value < 0.5,
        });
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use geodepth_core::synth::{generate_scene, SceneConfig};

    fn scenes(n: usize, base: u64) -> Vec<ToyScene> {
        let cfg = SceneConfig {
            width: 16,
            height: 16,
            ..SceneConfig::default()
        };
        (0..n).map(|i| generate_scene(&cfg, base + i as u64).unwrap()).collect()
    }

    fn tiny() -> (AblationConfig, TrainConfig) {
        (
            AblationConfig {
                ratios: vec![0.5, 1.0],
                seeds: vec![0, 1],
                control: true,
            },
            TrainConfig {
                steps: 5,
                pixels_per_scene: 32,
                ..TrainConfig::default()
            },
        )
    }

    #[test]
    fn every_cell_appears_once_sorted() {
        let (cfg, tc) = tiny();
        let cam = CameraIntrinsics::centered(16.0, 16, 16).unwrap();
        let res = run_ablation(&scenes(4, 0), &scenes(2, 100), &cam, &cfg, &tc).unwrap();
        let keys: Vec<(f64, Scheme, u64)> =
            res.rows.iter().map(|r| (r.uts_ratio, r.scheme, r.seed)).collect();
        assert_eq!(
            keys,
            vec![
                (0.5, Scheme::Gp2, 0),
                (0.5, Scheme::Gp2, 1),
                (0.5, Scheme::UtsOnly, 0),
                (0.5, Scheme::UtsOnly, 1),
                (1.0, Scheme::Gp2, 0),
                (1.0, Scheme::Gp2, 1),
                (1.0, Scheme::UtsOnly, 0),
                (1.0, Scheme::UtsOnly, 1),
            ]
        );
        assert_eq!(res.controls.len(), 2);
        assert_eq!(res.summary.len(), 5);
        // At ratio 1 both schemes see the same single dataset.
        assert_eq!(res.rows[4].delta_error, res.rows[6].delta_error);
        assert_eq!(res.rows[5].shift_indicator, res.rows[7].shift_indicator);
    }

    #[test]
    fn divergence_is_recorded() {
        let (cfg, mut tc) = tiny();
        tc.learning_rate = 1e6;
        tc.steps = 50;
        let cam = CameraIntrinsics::centered(16.0, 16, 16).unwrap();
        let res = run_ablation(&scenes(4, 0), &scenes(2, 100), &cam, &cfg, &tc).unwrap();
        assert_eq!(res.rows.len(), 8);
        let failed: Vec<&AblationRow> =
            res.rows.iter().filter(|r| r.status != RunStatus::Ok).collect();
        assert!(!failed.is_empty());
        assert!(failed.iter().all(|r| r.delta_error.is_none()));
        let csv = rows_to_csv(&res.rows);
        assert!(csv.contains(&format!(",{},,,,\n", failed[0].status.as_str())));
    }

    fn summary(ratio: f64, scheme: Scheme, delta: f64, shift: f64) -> CellSummary {
        CellSummary {
            uts_ratio: ratio,
            scheme,
            runs: 3,
            delta_error: delta,
            rel: 0.0,
            shift_indicator: shift,
            cloud_rmse: 0.0,
        }
    }

    #[test]
    fn shape_checks_arithmetic() {
        let s = vec![
            summary(0.05, Scheme::Gp2, 0.12, 0.01),
            summary(0.05, Scheme::UtsOnly, 0.2, 0.01),
            summary(0.1, Scheme::Gp2, 0.11, 0.02),
            summary(1.0, Scheme::Gp2, 0.1, 0.01),
            summary(1.0, Scheme::UtsOnly, 0.1, 0.01),
            summary(0.0, Scheme::UtssOnly, 0.5, 0.1),
        ];
        let c = shape_checks(&s);
        assert_eq!(c.len(), 3);
        assert!((c[0].value - 0.1).abs() < 1e-12 && c[0].pass);
        assert!((c[1].value - 0.08).abs() < 1e-12 && c[1].pass);
        assert!((c[2].value - 0.2).abs() < 1e-12 && c[2].pass);
        let failing = vec![summary(0.1, Scheme::Gp2, 0.2, 0.06), s[3].clone(), s[5].clone()];
        assert!(shape_checks(&failing).iter().all(|c| !c.pass));
    }
}
