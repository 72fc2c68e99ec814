//! Per-pixel log-depth regressor and its deterministic training loop.
//!
//! The network maps a clamped 3x3 patch of the three feature channels (27 inputs)
//! through `affine(27->32) -> tanh -> affine(32->32) -> tanh -> affine(32->1)`.
//! Gradients are computed by hand-written reverse-mode passes over the same graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{mixture_terms, LossValueGrad};
use crate::raster::{Grid2D, SupervisionClass, Unit};
use crate::rng::{derive_seed, Rng};
use crate::synth::{sample_mixture, MixtureSpec, ToyScene};

pub const INPUTS: usize = 27;
pub const HIDDEN: usize = 32;

const W1: usize = 0;
const B1: usize = W1 + HIDDEN * INPUTS;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + HIDDEN * HIDDEN;
const W3: usize = B2 + HIDDEN;
const B3: usize = W3 + HIDDEN;

/// Total number of parameters (1985).
pub const PARAM_COUNT: usize = B3 + 1;

const STREAM_INIT: u64 = 11;
const STREAM_SAMPLING: u64 = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRegressor {
    params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
struct Trace {
    input: [f64; INPUTS],
    h1: [f64; HIDDEN],
    h2: [f64; HIDDEN],
}

impl ToyRegressor {
    pub fn zeros() -> Self {
        Self {
            params: vec![0.0; PARAM_COUNT],
        }
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for every weight and bias.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = Rng::new(derive_seed(seed, STREAM_INIT));
        let mut params = vec![0.0; PARAM_COUNT];
        let ranges = [(W1, W2, INPUTS), (W2, W3, HIDDEN), (W3, PARAM_COUNT, HIDDEN)];
        for (start, end, fan_in) in ranges {
            let s = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[start..end] {
                *p = rng.uniform(-s, s);
            }
        }
        Self { params }
    }

    pub fn from_params(params: Vec<f64>) -> Result<Self> {
        if params.len() != PARAM_COUNT {
            return Err(Error::InvalidArgument(format!(
                "expected {PARAM_COUNT} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn trace(&self, input: [f64; INPUTS]) -> (f64, Trace) {
        let p = &self.params;
        let mut h1 = [0.0; HIDDEN];
        for (j, h) in h1.iter_mut().enumerate() {
            let row = &p[W1 + j * INPUTS..W1 + (j + 1) * INPUTS];
            let a: f64 = row.iter().zip(&input).map(|(w, x)| w * x).sum();
            *h = (a + p[B1 + j]).tanh();
        }
        let mut h2 = [0.0; HIDDEN];
        for (j, h) in h2.iter_mut().enumerate() {
            let row = &p[W2 + j * HIDDEN..W2 + (j + 1) * HIDDEN];
            let a: f64 = row.iter().zip(&h1).map(|(w, x)| w * x).sum();
            *h = (a + p[B2 + j]).tanh();
        }
        let out = p[W3..B3].iter().zip(&h2).map(|(w, x)| w * x).sum::<f64>() + p[B3];
        (out, Trace { input, h1, h2 })
    }

    /// Accumulates `upstream * d(out)/d(params)` into `grad`.
    fn accumulate(&self, trace: &Trace, upstream: f64, grad: &mut [f64]) {
        let p = &self.params;
        grad[B3] += upstream;
        let mut g_a2 = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            grad[W3 + j] += upstream * trace.h2[j];
            g_a2[j] = upstream * p[W3 + j] * (1.0 - trace.h2[j] * trace.h2[j]);
        }
        let mut g_h1 = [0.0; HIDDEN];
        for j in 0..HIDDEN {
            let g = g_a2[j];
            grad[B2 + j] += g;
            let row = W2 + j * HIDDEN;
            for k in 0..HIDDEN {
                grad[row + k] += g * trace.h1[k];
                g_h1[k] += g * p[row + k];
            }
        }
        for j in 0..HIDDEN {
            let g = g_h1[j] * (1.0 - trace.h1[j] * trace.h1[j]);
            grad[B1 + j] += g;
            let row = W1 + j * INPUTS;
            for k in 0..INPUTS {
                grad[row + k] += g * trace.input[k];
            }
        }
    }

    /// Log-depth at the listed row-major pixel indices.
    pub fn forward_pixels(&self, features: &[Grid2D; 3], pixels: &[usize]) -> Vec<f64> {
        pixels
            .iter()
            .map(|&i| self.trace(patch(features, i)).0)
            .collect()
    }

    /// Parameter gradient of `sum_k upstream[k] * out(pixels[k])`.
    pub fn backward_pixels(
        &self,
        features: &[Grid2D; 3],
        pixels: &[usize],
        upstream: &[f64],
    ) -> Result<Vec<f64>> {
        if pixels.len() != upstream.len() {
            return Err(Error::InvalidArgument(format!(
                "{} pixels but {} upstream gradients",
                pixels.len(),
                upstream.len()
            )));
        }
        let mut grad = vec![0.0; PARAM_COUNT];
        for (&i, &g) in pixels.iter().zip(upstream) {
            if g != 0.0 {
                let (_, trace) = self.trace(patch(features, i));
                self.accumulate(&trace, g, &mut grad);
            }
        }
        Ok(grad)
    }

    /// Log-depth prediction for every pixel of the scene.
    pub fn forward(&self, scene: &ToyScene) -> Grid2D {
        let n = scene.width() * scene.height();
        let pixels: Vec<usize> = (0..n).collect();
        let values = self.forward_pixels(&scene.features, &pixels);
        Grid2D::new(scene.width(), scene.height(), values, Unit::LogDepth)
            .expect("dimensions come from the scene")
    }

    /// Parameter gradient for a loss gradient laid out over the scene's pixels.
    pub fn backward(&self, scene: &ToyScene, loss_grad: &LossValueGrad) -> Result<Vec<f64>> {
        let n = scene.width() * scene.height();
        if loss_grad.grad.len() != n {
            return Err(Error::InvalidArgument(format!(
                "loss gradient covers {} pixels, scene has {n}",
                loss_grad.grad.len()
            )));
        }
        let pixels: Vec<usize> = scene.mask.indices().collect();
        let upstream: Vec<f64> = pixels.iter().map(|&i| loss_grad.grad[i]).collect();
        self.backward_pixels(&scene.features, &pixels, &upstream)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let layer = |name: &str, inputs, outputs, w: usize, b: usize| LayerParams {
            name: name.into(),
            inputs,
            outputs,
            weight: self.params[w..w + inputs * outputs].to_vec(),
            bias: self.params[b..b + outputs].to_vec(),
        };
        Checkpoint {
            layers: vec![
                layer("fc1", INPUTS, HIDDEN, W1, B1),
                layer("fc2", HIDDEN, HIDDEN, W2, B2),
                layer("fc3", HIDDEN, 1, W3, B3),
            ],
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let shapes = [(INPUTS, HIDDEN), (HIDDEN, HIDDEN), (HIDDEN, 1)];
        if ckpt.layers.len() != shapes.len() {
            return Err(Error::InvalidArgument(format!(
                "checkpoint has {} layers, expected 3",
                ckpt.layers.len()
            )));
        }
        let mut params = Vec::with_capacity(PARAM_COUNT);
        for (layer, (inputs, outputs)) in ckpt.layers.iter().zip(shapes) {
            if layer.inputs != inputs
                || layer.outputs != outputs
                || layer.weight.len() != inputs * outputs
                || layer.bias.len() != outputs
            {
                return Err(Error::InvalidArgument(format!(
                    "layer {:?} does not have shape {inputs}->{outputs}",
                    layer.name
                )));
            }
            params.extend_from_slice(&layer.weight);
            params.extend_from_slice(&layer.bias);
        }
        Self::from_params(params)
    }
}

/// Clamped 3x3 neighbourhood of pixel `index`, ordered (row offset, column offset, channel).
pub fn patch(features: &[Grid2D; 3], index: usize) -> [f64; INPUTS] {
    let (w, h) = features[0].dims();
    let (u, v) = ((index % w) as isize, (index / w) as isize);
    let mut out = [0.0; INPUTS];
    let mut k = 0;
    for dy in -1..=1isize {
        let y = (v + dy).clamp(0, h as isize - 1) as usize;
        for dx in -1..=1isize {
            let x = (u + dx).clamp(0, w as isize - 1) as usize;
            let at = y * w + x;
            for channel in features {
                out[k] = channel.values()[at];
                k += 1;
            }
        }
    }
    out
}

/// Layer-wise parameter dump, row-major weights of shape `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub layers: Vec<LayerParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerParams {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub steps: usize,
    pub batch: usize,
    pub pixels_per_scene: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            steps: 600,
            batch: 4,
            pixels_per_scene: 1024,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.momentum)
            || self.steps == 0
            || self.batch == 0
            || self.pixels_per_scene < 2
        {
            return Err(Error::InvalidArgument(format!(
                "invalid training configuration {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub loss: f64,
    /// Fraction of the batch whose supervision enabled the UTS term.
    pub uts_fraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,uts_fraction\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.step, r.loss, r.uts_fraction));
        }
        out
    }

    /// Mean loss over the last `window` steps.
    pub fn trailing_loss(&self, window: usize) -> Option<f64> {
        let tail = &self.rows[self.rows.len().saturating_sub(window)..];
        (!tail.is_empty()).then(|| tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64)
    }
}

/// Batch loss and averaged parameter gradient for a fixed set of (scene, pixels) pairs.
pub fn batch_loss_grad(
    model: &ToyRegressor,
    batch: &[(&ToyScene, Vec<usize>)],
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; PARAM_COUNT];
    let mut loss = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for (scene, pixels) in batch {
        let pred = model.forward_pixels(&scene.features, pixels);
        let target: Vec<f64> = pixels.iter().map(|&i| scene.target.values()[i]).collect();
        let (value, upstream) = mixture_terms(&pred, &target, scene.cls)?;
        let g = model.backward_pixels(&scene.features, pixels, &upstream)?;
        for (acc, gi) in grad.iter_mut().zip(g) {
            *acc += scale * gi;
        }
        loss += scale * value;
    }
    Ok((loss, grad))
}

/// SGD with momentum on the per-sample mixture loss, sampling scenes with equal
/// probability per dataset and a fixed number of valid pixels per scene.
pub fn train(mixture: &MixtureSpec, cfg: &TrainConfig) -> Result<(ToyRegressor, TrainLog)> {
    cfg.validate()?;
    let mut model = ToyRegressor::seeded(cfg.seed);
    let mut rng = Rng::new(derive_seed(cfg.seed, STREAM_SAMPLING));
    let mut velocity = vec![0.0; PARAM_COUNT];
    let mut log = TrainLog::default();

    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let scene = sample_mixture(mixture, &mut rng);
            let valid: Vec<usize> = scene.mask.indices().collect();
            let pixels = rng
                .choose_distinct(valid.len(), cfg.pixels_per_scene)
                .into_iter()
                .map(|k| valid[k])
                .collect();
            batch.push((scene, pixels));
        }
        let uts = batch
            .iter()
            .filter(|(s, _)| SupervisionClass::uses_uts_term(s.cls))
            .count();
        let (loss, grad) = batch_loss_grad(&model, &batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        for ((p, v), g) in model.params.iter_mut().zip(&mut velocity).zip(&grad) {
            *v = cfg.momentum * *v - cfg.learning_rate * g;
            *p += *v;
        }
        log.rows.push(TrainLogRow {
            step,
            loss,
            uts_fraction: uts as f64 / cfg.batch as f64,
        });
    }
    Ok((model, log))
}
