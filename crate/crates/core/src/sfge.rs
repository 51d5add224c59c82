//! Score-function gradient estimation.
//!
//! A Normal policy `N(y_hat, sigma^2)` perturbs predictions; the regret of
//! the perturbed prediction, centered by a running baseline, weights the
//! score `d log phi / d y_hat`. The module also carries a standalone SFGE
//! training loop.

use std::collections::VecDeque;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::predictor::{adam_step, pfl_train, AdamState, PflConfig, PredictorModel};
use crate::problems::{CallCounter, Dataset};
use crate::rng::{domain, rng_from, Rng};
use crate::smoothing::Origin;

pub const SIGMA_MIN: f64 = 1e-3;

/// Trainable smoothing scale, stored as `log sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SfgePolicy {
    /// One entry (scalar sigma) or one per output dimension.
    pub log_sigma: Vec<f64>,
}

impl SfgePolicy {
    pub fn new(sigma: f64, dims: usize) -> Result<Self> {
        if !(sigma > SIGMA_MIN) || dims == 0 {
            return Err(ForgeError::Config(format!(
                "initial sigma must exceed {SIGMA_MIN} and dims be positive"
            )));
        }
        Ok(Self {
            log_sigma: vec![sigma.ln(); dims],
        })
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|l| l.exp()).collect()
    }

    /// Mean of the per-dimension scales.
    pub fn mean_sigma(&self) -> f64 {
        self.sigma().iter().sum::<f64>() / self.log_sigma.len() as f64
    }

    /// Apply `step` to `log sigma`, then enforce the floor.
    pub fn update(&mut self, adam: &mut AdamState, grad_log_sigma: &[f64]) -> Result<()> {
        adam.step(&mut self.log_sigma, grad_log_sigma)?;
        let floor = SIGMA_MIN.ln();
        self.log_sigma.iter_mut().for_each(|l| *l = l.max(floor));
        Ok(())
    }
}

fn sigma_at(sigma: &[f64], k: usize) -> f64 {
    if sigma.len() == 1 {
        sigma[0]
    } else {
        sigma[k]
    }
}

/// Draw `y' ~ N(y_hat, diag(sigma^2))` and record where it came from.
pub fn sfge_sample(y_hat: &[f64], sigma: &[f64], rng: &mut Rng) -> (Vec<f64>, Origin) {
    let y_prime = y_hat
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let z: f64 = StandardNormal.sample(rng);
            m + sigma_at(sigma, k) * z
        })
        .collect();
    let origin = Origin::Normal {
        mean: y_hat.to_vec(),
        sigma: sigma.to_vec(),
    };
    (y_prime, origin)
}

/// Score-function gradients of `E[r]` with respect to `y_hat` and
/// `log sigma` (one entry per entry of `sigma`).
pub fn sfge_grad(
    y_hat: &[f64],
    y_prime: &[f64],
    r: f64,
    sigma: &[f64],
    baseline: f64,
) -> (Vec<f64>, Vec<f64>) {
    let c = r - baseline;
    let mut grad_y = Vec::with_capacity(y_hat.len());
    let mut per_dim = Vec::with_capacity(y_hat.len());
    for (k, (&m, &p)) in y_hat.iter().zip(y_prime).enumerate() {
        let s = sigma_at(sigma, k);
        let d = p - m;
        grad_y.push(c * d / (s * s));
        per_dim.push(c * (d * d / (s * s) - 1.0));
    }
    let grad_log_sigma = if sigma.len() == 1 {
        vec![per_dim.iter().sum()]
    } else {
        per_dim
    };
    (grad_y, grad_log_sigma)
}

/// Running mean of the most recent regrets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    window: usize,
    recent: VecDeque<f64>,
}

impl Baseline {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            recent: VecDeque::new(),
        }
    }

    /// 0 until the first regret arrives.
    pub fn value(&self) -> f64 {
        if self.recent.is_empty() {
            0.0
        } else {
            self.recent.iter().sum::<f64>() / self.recent.len() as f64
        }
    }

    pub fn push(&mut self, r: f64) {
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back(r);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfgeConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub sigma_init: f64,
    pub sigma_per_dim: bool,
    pub baseline_window: usize,
    pub warm_start_epochs: usize,
    pub hidden: Vec<usize>,
}

impl Default for SfgeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            patience: 10,
            batch_size: 32,
            lr: 1e-3,
            sigma_init: 0.1,
            sigma_per_dim: false,
            baseline_window: 32,
            warm_start_epochs: 5,
            hidden: Vec::new(),
        }
    }
}

/// Per-epoch state of a standalone run.
#[derive(Debug, Clone, PartialEq)]
pub struct SfgeEpoch {
    pub theta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub train_regret: f64,
    pub val_regret: f64,
}

#[derive(Debug, Clone)]
pub struct SfgeRun {
    pub model: PredictorModel,
    pub trajectory: Vec<SfgeEpoch>,
    pub regret_evals: u64,
}

/// Plain SFGE training of a PFL-warm-started predictor: one perturbed
/// sample and one true regret per example per epoch, early stopping on
/// validation regret.
pub fn train_sfge(ds: &Dataset, cfg: &SfgeConfig, seed: u64) -> Result<SfgeRun> {
    let start = Instant::now();
    let spec = &ds.problem;
    let init = PredictorModel::for_dataset(ds, &cfg.hidden, seed)?;
    let warm = PflConfig {
        epochs: cfg.warm_start_epochs,
        patience: cfg.warm_start_epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
    };
    let mut model = pfl_train(&init, ds, &warm, seed)?.model;
    let mut adam = AdamState::new(model.n_params(), cfg.lr);
    let dims = if cfg.sigma_per_dim { ds.dim_y() } else { 1 };
    let mut policy = SfgePolicy::new(cfg.sigma_init, dims)?;
    let mut sigma_adam = AdamState::new(dims, cfg.lr);
    let mut baseline = Baseline::new(cfg.baseline_window);
    let counter = CallCounter::new();
    let eval_counter = CallCounter::new();

    let train = &ds.split.train;
    let val: &[usize] = if ds.split.val.is_empty() {
        train
    } else {
        &ds.split.val
    };
    let mean_regret = |m: &PredictorModel| -> Result<f64> {
        let mut total = 0.0;
        for &i in val {
            let inst = &ds.instances[i];
            total += spec.regret_counted(&inst.y, &m.forward(&inst.x)?, &eval_counter)?;
        }
        Ok(total / val.len() as f64)
    };
    let mut best = model.clone();
    let mut best_val = mean_regret(&model)?;
    let mut since_best = 0;
    let mut trajectory = Vec::new();
    let batch = if cfg.batch_size == 0 {
        train.len()
    } else {
        cfg.batch_size
    };

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_from(&[domain::BATCH, seed, epoch as u64]));
        let mut loss = 0.0;
        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0; model.n_params()];
            let mut grad_sigma = vec![0.0; dims];
            let mut regrets = Vec::with_capacity(chunk.len());
            let sigma = policy.sigma();
            let b = baseline.value();
            let scale = 1.0 / chunk.len() as f64;
            for &local in chunk {
                let inst = &ds.instances[train[local]];
                let y_hat = model.forward(&inst.x)?;
                let mut rng = rng_from(&[domain::SFGE, seed, local as u64, epoch as u64]);
                let (y_prime, _) = sfge_sample(&y_hat, &sigma, &mut rng);
                let r = spec.regret_counted(&inst.y, &y_prime, &counter)?;
                let (gy, gs) = sfge_grad(&y_hat, &y_prime, r, &sigma, b);
                let gy: Vec<f64> = gy.iter().map(|g| g * scale).collect();
                for (acc, g) in grad.iter_mut().zip(model.backward(&inst.x, &gy)?) {
                    *acc += g;
                }
                for (acc, g) in grad_sigma.iter_mut().zip(&gs) {
                    *acc += g * scale;
                }
                regrets.push(r);
                loss += r;
            }
            adam_step(&mut adam, &mut model, &grad)?;
            policy.update(&mut sigma_adam, &grad_sigma)?;
            regrets.into_iter().for_each(|r| baseline.push(r));
        }
        let val_regret = mean_regret(&model)?;
        trajectory.push(SfgeEpoch {
            theta: model.theta.clone(),
            sigma: policy.sigma(),
            train_regret: loss / train.len() as f64,
            val_regret,
        });
        if val_regret < best_val {
            best_val = val_regret;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= cfg.patience {
            break;
        }
    }
    log::debug!("standalone sfge finished in {:.2?}", start.elapsed());
    Ok(SfgeRun {
        model: best,
        trajectory,
        regret_evals: counter.regret_evals(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Normal;

    fn mean_and_se(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, (var / n).sqrt())
    }

    #[test]
    fn centered_reward_gives_zero() {
        let (gy, gs) = sfge_grad(&[0.1, 0.2], &[0.5, -0.3], 4.0, &[0.3], 4.0);
        assert!(gy.iter().chain(&gs).all(|&g| g == 0.0));
    }

    #[test]
    fn unperturbed_sample() {
        let (gy, gs) = sfge_grad(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 5.0, &[0.2], 1.0);
        assert_eq!(gy, vec![0.0; 3]);
        assert!((gs[0] + 4.0 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn per_dim_log_sigma_gradient_sums_to_scalar() {
        let (yh, yp) = ([0.0, 1.0, -1.0], [0.3, 0.8, -1.4]);
        let (_, scalar) = sfge_grad(&yh, &yp, 2.0, &[0.5], 0.5);
        let (_, per) = sfge_grad(&yh, &yp, 2.0, &[0.5; 3], 0.5);
        assert!((per.iter().sum::<f64>() - scalar[0]).abs() < 1e-12);
    }

    #[test]
    fn sample_mean_near_center() {
        let mut rng = rng_from(&[1]);
        let center = [0.7, -2.0];
        let n = 2000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| sfge_sample(&center, &[SIGMA_MIN], &mut rng).0)
            .collect();
        for d in 0..2 {
            let col: Vec<f64> = draws.iter().map(|p| p[d]).collect();
            let (m, se) = mean_and_se(&col);
            assert!((m - center[d]).abs() < 3.0 * se.max(1e-12), "{m}");
        }
    }

    #[test]
    fn fixed_seed_reproduces_draw() {
        let a = sfge_sample(&[0.0; 4], &[0.3], &mut rng_from(&[9, 9])).0;
        let b = sfge_sample(&[0.0; 4], &[0.3], &mut rng_from(&[9, 9])).0;
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_covariance_is_isotropic() {
        let mut rng = rng_from(&[2]);
        let sigma = 0.4;
        let n = 10_000;
        let draws: Vec<Vec<f64>> = (0..n)
            .map(|_| sfge_sample(&[1.0, 2.0, 3.0], &[sigma], &mut rng).0)
            .collect();
        let mean: Vec<f64> = (0..3)
            .map(|d| draws.iter().map(|p| p[d]).sum::<f64>() / n as f64)
            .collect();
        for a in 0..3 {
            for b in 0..3 {
                let c = draws
                    .iter()
                    .map(|p| (p[a] - mean[a]) * (p[b] - mean[b]))
                    .sum::<f64>()
                    / (n - 1) as f64;
                if a == b {
                    assert!((c / (sigma * sigma) - 1.0).abs() < 0.05, "{c}");
                } else {
                    assert!(c.abs() < 0.05 * sigma * sigma, "{c}");
                }
            }
        }
    }

    #[test]
    fn constant_landscape_gradient_is_zero_in_mean() {
        let mut rng = rng_from(&[3]);
        let y_hat = [0.5];
        let g: Vec<f64> = (0..10_000)
            .map(|_| {
                let (yp, _) = sfge_sample(&y_hat, &[0.2], &mut rng);
                sfge_grad(&y_hat, &yp, 7.0, &[0.2], 0.0).0[0]
            })
            .collect();
        let (m, se) = mean_and_se(&g);
        assert!(m.abs() < 3.0 * se, "{m} +- {se}");
    }

    #[test]
    fn baseline_window() {
        let mut b = Baseline::new(2);
        assert_eq!(b.value(), 0.0);
        b.push(1.0);
        b.push(3.0);
        assert_eq!(b.value(), 2.0);
        b.push(5.0);
        assert_eq!(b.value(), 4.0);
    }

    #[test]
    fn sigma_floor_holds() {
        let mut p = SfgePolicy::new(0.0011, 1).unwrap();
        let mut adam = AdamState::new(1, 0.5);
        for _ in 0..20 {
            p.update(&mut adam, &[1e3]).unwrap();
        }
        assert!(p.sigma()[0] >= SIGMA_MIN);
        assert!(SfgePolicy::new(SIGMA_MIN, 1).is_err());
    }

    #[test]
    fn quadratic_unbiased_with_and_without_baseline() {
        let sigma = 0.5;
        let n = 100_000;
        for (k, y_hat) in [-1.0f64, 0.0, 2.0].into_iter().enumerate() {
            let mut rng = rng_from(&[4, k as u64]);
            let noise = Normal::new(0.0, sigma).unwrap();
            let mut plain = Vec::with_capacity(n);
            let mut centered = Vec::with_capacity(n);
            let mut base = Baseline::new(32);
            for _ in 0..n {
                let yp = y_hat + noise.sample(&mut rng);
                let r = yp * yp;
                plain.push(sfge_grad(&[y_hat], &[yp], r, &[sigma], 0.0).0[0]);
                centered.push(sfge_grad(&[y_hat], &[yp], r, &[sigma], base.value()).0[0]);
                base.push(r);
            }
            let (m, se) = mean_and_se(&plain);
            assert!((m - 2.0 * y_hat).abs() < 3.0 * se, "{y_hat}: {m} +- {se}");
            let (mc, sec) = mean_and_se(&centered);
            assert!(
                (mc - 2.0 * y_hat).abs() < 3.0 * sec,
                "{y_hat}: {mc} +- {sec}"
            );
            assert!((m - mc).abs() < 3.0 * (se * se + sec * sec).sqrt());
        }
    }
}
