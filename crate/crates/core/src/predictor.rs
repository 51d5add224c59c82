//! The parameter predictor `h_theta: x -> y_hat`.
//!
//! A stack of affine layers with ReLU between them (a single affine layer by
//! default), stored as one flat parameter vector. Gradients are computed by a
//! hand-written reverse pass over that fixed layer vocabulary.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::problems::Dataset;
use crate::rng::{domain, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub relu: bool,
}

impl LayerSpec {
    fn n_params(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Per-feature standardization applied to `x` before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Mean and standard deviation per column; degenerate columns get std 1.
    pub fn from_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for ((s, q), &v) in sum.iter_mut().zip(sq.iter_mut()).zip(r) {
                *s += v;
                *q += v * v;
            }
        }
        if n == 0 {
            return Self {
                mean: vec![0.0; dim],
                std: vec![1.0; dim],
            };
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / nf - m * m).max(0.0);
                let s = var.sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

/// Input standardization and output de-standardization of a model: the
/// layers see standardized `x` and produce standardized `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelNorm {
    pub x: NormStats,
    pub y: NormStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub arch: Vec<LayerSpec>,
    pub theta: Vec<f64>,
    pub norm_stats: Option<ModelNorm>,
}

/// Activations kept by the forward pass for the reverse pass.
struct Tape {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of each layer.
    pre: Vec<Vec<f64>>,
}

impl PredictorModel {
    /// Build `dim_x -> hidden... -> dim_y` with ReLU after each hidden layer,
    /// parameters uniform in `+-1/sqrt(fan_in)`.
    pub fn new(dim_x: usize, hidden: &[usize], dim_y: usize, seed: u64) -> Result<Self> {
        if dim_x == 0 || dim_y == 0 || hidden.contains(&0) {
            return Err(ForgeError::Config("layer widths must be positive".into()));
        }
        let mut widths = vec![dim_x];
        widths.extend_from_slice(hidden);
        widths.push(dim_y);
        let arch: Vec<LayerSpec> = widths
            .windows(2)
            .enumerate()
            .map(|(k, w)| LayerSpec {
                inputs: w[0],
                outputs: w[1],
                relu: k + 2 < widths.len(),
            })
            .collect();
        let mut rng = rng_from(&[domain::INIT, seed]);
        let mut theta = Vec::with_capacity(arch.iter().map(LayerSpec::n_params).sum());
        for layer in &arch {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for _ in 0..layer.n_params() {
                theta.push(rng.random_range(-bound..=bound));
            }
        }
        Ok(Self {
            arch,
            theta,
            norm_stats: None,
        })
    }

    /// A model whose input and output scaling is fitted on the training split.
    pub fn for_dataset(ds: &Dataset, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut m = Self::new(ds.dim_x(), hidden, ds.dim_y(), seed)?;
        let train = &ds.split.train;
        m.norm_stats = Some(ModelNorm {
            x: NormStats::from_rows(ds.subset(train).map(|i| i.x.as_slice()), ds.dim_x()),
            y: NormStats::from_rows(ds.subset(train).map(|i| i.y.as_slice()), ds.dim_y()),
        });
        Ok(m)
    }

    pub fn dim_x(&self) -> usize {
        self.arch[0].inputs
    }

    pub fn dim_y(&self) -> usize {
        self.arch[self.arch.len() - 1].outputs
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    fn run(&self, x: &[f64], mut tape: Option<&mut Tape>) -> Result<Vec<f64>> {
        if x.len() != self.dim_x() {
            return Err(ForgeError::Shape {
                expected: self.dim_x(),
                got: x.len(),
            });
        }
        let mut h = match &self.norm_stats {
            Some(ns) => ns.x.apply(x),
            None => x.to_vec(),
        };
        let mut offset = 0;
        for layer in &self.arch {
            let (w, rest) = self.theta[offset..].split_at(layer.inputs * layer.outputs);
            let b = &rest[..layer.outputs];
            offset += layer.n_params();
            let mut out: Vec<f64> = b.to_vec();
            for (o, row) in out.iter_mut().zip(w.chunks_exact(layer.inputs)) {
                *o += row.iter().zip(&h).map(|(a, c)| a * c).sum::<f64>();
            }
            let input = std::mem::replace(&mut h, out);
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(input);
                t.pre.push(h.clone());
            }
            if layer.relu {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        if let Some(ns) = &self.norm_stats {
            for ((v, m), s) in h.iter_mut().zip(&ns.y.mean).zip(&ns.y.std) {
                *v = m + s * *v;
            }
        }
        Ok(h)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.run(x, None)
    }

    /// Gradient of `grad_y . h_theta(x)` with respect to `theta`.
    pub fn backward(&self, x: &[f64], grad_y: &[f64]) -> Result<Vec<f64>> {
        if grad_y.len() != self.dim_y() {
            return Err(ForgeError::Shape {
                expected: self.dim_y(),
                got: grad_y.len(),
            });
        }
        if grad_y.iter().any(|g| !g.is_finite()) {
            return Err(ForgeError::NonFinite("output gradient"));
        }
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.arch.len()),
            pre: Vec::with_capacity(self.arch.len()),
        };
        self.run(x, Some(&mut tape))?;

        let mut grad = vec![0.0; self.theta.len()];
        let mut offsets = Vec::with_capacity(self.arch.len());
        let mut acc = 0;
        for layer in &self.arch {
            offsets.push(acc);
            acc += layer.n_params();
        }
        let mut delta = match &self.norm_stats {
            Some(ns) => grad_y.iter().zip(&ns.y.std).map(|(g, s)| g * s).collect(),
            None => grad_y.to_vec(),
        };
        for (k, layer) in self.arch.iter().enumerate().rev() {
            if layer.relu {
                for (d, &p) in delta.iter_mut().zip(&tape.pre[k]) {
                    if p <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let off = offsets[k];
            let n_w = layer.inputs * layer.outputs;
            let input = &tape.inputs[k];
            let (gw, gb) = grad[off..off + layer.n_params()].split_at_mut(n_w);
            for (o, &d) in delta.iter().enumerate() {
                gb[o] = d;
                for (gwi, &a) in gw[o * layer.inputs..(o + 1) * layer.inputs]
                    .iter_mut()
                    .zip(input)
                {
                    *gwi = d * a;
                }
            }
            if k > 0 {
                let w = &self.theta[off..off + n_w];
                let mut next = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    for (n, &wv) in next
                        .iter_mut()
                        .zip(&w[o * layer.inputs..(o + 1) * layer.inputs])
                    {
                        *n += d * wv;
                    }
                }
                delta = next;
            }
        }
        Ok(grad)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(ForgeError::Shape {
                expected: self.m.len(),
                got: grad.len(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(ForgeError::NonFinite("gradient"));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Apply one Adam step to the model's parameters.
pub fn adam_step(state: &mut AdamState, model: &mut PredictorModel, grad: &[f64]) -> Result<()> {
    state.step(&mut model.theta, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PflConfig {
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Mini-batch size; 0 means full batch.
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for PflConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            patience: 10,
            batch_size: 32,
            lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PflOutcome {
    pub model: PredictorModel,
    pub epochs_run: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

pub fn mse(model: &PredictorModel, ds: &Dataset, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for inst in ds.subset(idx) {
        let p = model.forward(&inst.x)?;
        total += p
            .iter()
            .zip(&inst.y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Prediction-focused training: minimize MSE on the train split with Adam,
/// early-stopping on validation MSE. Returns the best-validation model.
pub fn pfl_train(
    model: &PredictorModel,
    ds: &Dataset,
    cfg: &PflConfig,
    seed: u64,
) -> Result<PflOutcome> {
    let train = &ds.split.train;
    if train.is_empty() {
        return Err(ForgeError::Config("empty training split".into()));
    }
    let val: &[usize] = if ds.split.val.is_empty() {
        train
    } else {
        &ds.split.val
    };
    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_val = mse(&best, ds, val)?;
    let mut since_best = 0;
    let mut epochs_run = 0;
    let mut adam = AdamState::new(current.n_params(), cfg.lr);
    let batch = if cfg.batch_size == 0 {
        train.len()
    } else {
        cfg.batch_size
    };
    let dim_y = current.dim_y() as f64;

    for epoch in 0..cfg.epochs {
        let mut order = train.clone();
        order.shuffle(&mut rng_from(&[domain::PFL, seed, epoch as u64]));
        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0; current.n_params()];
            let scale = 2.0 / (dim_y * chunk.len() as f64);
            for &i in chunk {
                let inst = &ds.instances[i];
                let p = current.forward(&inst.x)?;
                let gy: Vec<f64> = p
                    .iter()
                    .zip(&inst.y)
                    .map(|(a, b)| scale * (a - b))
                    .collect();
                for (g, d) in grad.iter_mut().zip(current.backward(&inst.x, &gy)?) {
                    *g += d;
                }
            }
            adam_step(&mut adam, &mut current, &grad)?;
        }
        epochs_run += 1;
        let v = mse(&current, ds, val)?;
        if v < best_val {
            best_val = v;
            best = current.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience {
            break;
        }
    }
    Ok(PflOutcome {
        train_mse: mse(&best, ds, train)?,
        val_mse: best_val,
        model: best,
        epochs_run,
    })
}
