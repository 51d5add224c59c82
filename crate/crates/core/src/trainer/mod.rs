//! The confidence-gated training loop.
//!
//! Each example owns a sample bank and a GP surrogate. Per epoch, an example
//! whose surrogate is confident at the current prediction contributes the
//! surrogate mean and its analytic gradient; otherwise a perturbed prediction
//! is drawn, its true regret evaluated and archived, and a score-function
//! gradient used instead. Surrogates are refitted once enough new samples
//! have accumulated.

mod config;

pub use config::{Ablation, Method, TrainerConfig};

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::predictor::{adam_step, pfl_train, AdamState, NormStats, PredictorModel};
use crate::problems::{CallCounter, Dataset};
use crate::rng::{domain, rng_from};
use crate::sfge::{sfge_grad, sfge_sample, Baseline, SfgePolicy};
use crate::smoothing::{
    lhs_sample, pretrain_count, smoothed_targets, Bounds, Diagnostics, Origin, RegretSample,
    SampleBank, TargetStats,
};
use crate::surrogate::{
    landscape_vector, FitOptions, GpSurrogate, LandscapeVector, SharingContext,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
    TimeLimit,
}

/// One row of the per-epoch metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss: surrogate means and sampled regrets.
    pub train_regret: f64,
    pub val_regret: f64,
    /// Training regret evaluations so far, pretraining included.
    pub solver_calls_cum: u64,
    pub surrogate_hit_rate: f64,
    pub wall_time: f64,
    pub surrogate_uses: usize,
    pub fallback_uses: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub n_train: usize,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    pub wall_time: f64,
    /// Regret evaluations during training (one per sampled regret; each
    /// performs two solver calls).
    pub solver_calls_total: u64,
    pub solver_calls_per_instance: f64,
    pub pretrain_calls: u64,
    /// Raw `solve` invocations during training.
    pub solves_total: u64,
    /// Regret evaluations on validation and test splits.
    pub eval_calls: u64,
    pub surrogate_hit_rate: f64,
    pub best_epoch: usize,
    pub best_val_regret: f64,
    pub test_regret: f64,
    pub sigma: f64,
    pub gp_fits: usize,
    pub gp_failures: usize,
    pub weight_underflows: u64,
    pub low_confidence_targets: u64,
    pub d_max: Option<f64>,
    pub alpha: f64,
    pub epochs: Vec<EpochMetrics>,
    /// Parameters after every epoch, when requested.
    #[serde(skip)]
    pub trajectory: Vec<Vec<f64>>,
}

impl RunMetrics {
    /// Write the per-epoch rows as CSV.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if self.epochs.is_empty() {
            w.write_record([
                "epoch",
                "train_regret",
                "val_regret",
                "solver_calls_cum",
                "surrogate_hit_rate",
                "wall_time",
                "surrogate_uses",
                "fallback_uses",
                "sigma",
            ])?;
        }
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub struct TrainOutcome {
    pub model: PredictorModel,
    pub metrics: RunMetrics,
}

/// Mean regret of `model` over the instances `idx`.
pub fn evaluate(
    model: &PredictorModel,
    ds: &Dataset,
    idx: &[usize],
    counter: &CallCounter,
) -> Result<f64> {
    if idx.is_empty() {
        return Err(ForgeError::Config(
            "cannot evaluate on an empty split".into(),
        ));
    }
    let mut total = 0.0;
    for inst in ds.subset(idx) {
        total += ds
            .problem
            .regret_counted(&inst.y, &model.forward(&inst.x)?, counter)?;
    }
    Ok(total / idx.len() as f64)
}

/// Gate outcome counts of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub surrogate_uses: usize,
    pub fallback_uses: usize,
}

/// Training state between epochs. Examples are addressed by their position
/// in the training split.
pub struct Trainer<'a> {
    ds: &'a Dataset,
    cfg: &'a TrainerConfig,
    seed: u64,
    pub model: PredictorModel,
    adam: AdamState,
    pub policy: SfgePolicy,
    sigma_adam: AdamState,
    baseline: Baseline,
    pub bank: SampleBank,
    pub gps: Vec<Option<GpSurrogate>>,
    pub landscapes: Vec<LandscapeVector>,
    /// Own samples appended since each surrogate's last fit.
    pending: Vec<Vec<usize>>,
    neighbors: Vec<Vec<usize>>,
    pub d_max: Option<f64>,
    pub alpha: f64,
    pub counter: CallCounter,
    pub diag: Diagnostics,
    pub gp_fits: usize,
    pub gp_failures: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        ds: &'a Dataset,
        cfg: &'a TrainerConfig,
        seed: u64,
        model: PredictorModel,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = ds.split.train.len();
        if n == 0 {
            return Err(ForgeError::Config("empty training split".into()));
        }
        let dims = if cfg.sigma_per_dim { ds.dim_y() } else { 1 };
        let ys = || ds.subset(&ds.split.train).map(|i| i.y.as_slice());
        let lhs_box = Bounds::around(ys(), ds.dim_y(), cfg.box_inflation);
        let input_stats = NormStats::from_rows(ys(), ds.dim_y());
        Ok(Self {
            ds,
            cfg,
            seed,
            adam: AdamState::new(model.n_params(), cfg.lr),
            model,
            policy: SfgePolicy::new(cfg.sigma_init, dims)?,
            sigma_adam: AdamState::new(dims, cfg.lr),
            baseline: Baseline::new(cfg.baseline_window),
            bank: SampleBank::new(n, lhs_box, input_stats),
            gps: vec![None; n],
            landscapes: Vec::new(),
            pending: vec![Vec::new(); n],
            neighbors: vec![Vec::new(); n],
            d_max: None,
            alpha: cfg.alpha_init,
            counter: CallCounter::new(),
            diag: Diagnostics::default(),
            gp_fits: 0,
            gp_failures: 0,
        })
    }

    fn n_train(&self) -> usize {
        self.ds.split.train.len()
    }

    fn sharing_active(&self) -> bool {
        self.cfg.ablation.sharing && !self.landscapes.is_empty()
    }

    /// Probe every example at shared LHS points, seed the banks with the
    /// probes and the realization, and fit the initial surrogates. Returns
    /// `false` if `should_stop` interrupted it.
    pub fn pretrain(&mut self, should_stop: &dyn Fn() -> bool) -> Result<bool> {
        if !self.cfg.ablation.pretrain {
            if self.cfg.ablation.sharing {
                log::warn!("sample sharing needs pretraining landscapes; sharing disabled");
            }
            return Ok(true);
        }
        let dim = self.ds.dim_y();
        let n_probes = self
            .cfg
            .pretrain_points
            .unwrap_or_else(|| pretrain_count(dim));
        let probes = lhs_sample(
            &self.bank.lhs_box,
            n_probes,
            &mut rng_from(&[domain::LHS, self.seed]),
        )?;
        for local in 0..self.n_train() {
            if should_stop() {
                return Ok(false);
            }
            let y = &self.ds.instances[self.ds.split.train[local]].y;
            let v = landscape_vector(&self.ds.problem, y, &probes, &self.counter)?;
            let samples = &mut self.bank.examples[local];
            for (p, &r) in probes.iter().zip(&v.v) {
                samples.push(RegretSample::own(p.clone(), r, Origin::Lhs));
            }
            samples.push(RegretSample::own(y.clone(), 0.0, Origin::Lhs));
            self.landscapes.push(v);
        }
        let inputs = self
            .bank
            .examples
            .iter()
            .flatten()
            .map(|s| s.y_hat.as_slice());
        self.bank.input_stats = NormStats::from_rows(inputs, dim);
        self.bank.target_stats = Some(TargetStats::from_values(
            self.bank.examples.iter().flatten().map(|s| s.regret),
        ));

        if self.cfg.ablation.sharing {
            let d_max = match self.cfg.d_max {
                Some(d) => d,
                None => self.distance_quantile(0.1),
            };
            self.d_max = Some(d_max);
            let n = self.n_train();
            for i in 0..n {
                for j in 0..n {
                    if i != j && self.landscapes[i].distance(&self.landscapes[j]) <= d_max {
                        self.neighbors[i].push(j);
                    }
                }
            }
        }

        if self.cfg.beta > 0.0 {
            for local in 0..self.n_train() {
                if should_stop() {
                    return Ok(false);
                }
                self.fit_surrogate(local)?;
            }
        }
        Ok(true)
    }

    fn distance_quantile(&self, q: f64) -> f64 {
        let n = self.landscapes.len();
        let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                d.push(self.landscapes[i].distance(&self.landscapes[j]));
            }
        }
        if d.is_empty() {
            return f64::MIN_POSITIVE;
        }
        d.sort_by(f64::total_cmp);
        let k = ((q * (d.len() - 1) as f64).round() as usize).min(d.len() - 1);
        d[k].max(f64::MIN_POSITIVE)
    }

    fn smoothing_sigma(&self) -> f64 {
        self.cfg
            .sigma_smooth
            .unwrap_or_else(|| self.policy.mean_sigma())
    }

    fn fit_surrogate(&mut self, local: usize) -> Result<()> {
        let samples = &self.bank.examples[local];
        if samples.is_empty() {
            return Ok(());
        }
        let targets: Vec<f64> = if self.cfg.ablation.smoothing {
            smoothed_targets(
                self.smoothing_sigma(),
                samples,
                &self.bank.lhs_box,
                &self.diag,
            )?
            .into_iter()
            .map(|s| s.value)
            .collect()
        } else {
            samples.iter().map(|s| s.regret).collect()
        };
        let target_stats = *self.bank.target_stats.get_or_insert_with(|| {
            TargetStats::from_values(self.bank.examples.iter().flatten().map(|s| s.regret))
        });
        let inputs: Vec<Vec<f64>> = samples.iter().map(|s| s.y_hat.clone()).collect();
        let sources: Vec<usize> = samples.iter().map(|s| s.donor.unwrap_or(local)).collect();
        let mut gp = self.gps[local].take().unwrap_or_else(|| {
            GpSurrogate::new(local, self.bank.input_stats.clone(), target_stats)
        });
        gp.options = FitOptions {
            iterations: self.cfg.gp_iterations,
            step: self.cfg.gp_step,
        };
        let sharing = self.sharing_active().then(|| {
            (
                sources.as_slice(),
                SharingContext {
                    alpha: self.alpha,
                    landscapes: &self.landscapes,
                },
            )
        });
        match gp.fit(&inputs, &targets, sharing, true) {
            Ok(_) => self.gp_fits += 1,
            Err(e) => {
                self.gp_failures += 1;
                log::debug!("surrogate {local} unusable: {e}");
            }
        }
        self.gps[local] = Some(gp);
        Ok(())
    }

    /// One pass over the training split in mini-batches, one Adam step per
    /// batch. `epoch` is zero-based and selects the random streams.
    pub fn epoch_step(&mut self, epoch: usize) -> Result<EpochStats> {
        let cfg = self.cfg;
        let ds = self.ds;
        let train = &ds.split.train;
        let n = train.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_from(&[domain::BATCH, self.seed, epoch as u64]));
        let batch = if cfg.batch_size == 0 {
            n
        } else {
            cfg.batch_size
        };
        let dims = self.policy.log_sigma.len();
        let mut stats = EpochStats {
            loss: 0.0,
            surrogate_uses: 0,
            fallback_uses: 0,
        };

        for chunk in order.chunks(batch) {
            let mut grad = vec![0.0; self.model.n_params()];
            let mut grad_sigma = vec![0.0; dims];
            let mut regrets = Vec::with_capacity(chunk.len());
            let sigma = self.policy.sigma();
            let b = self.baseline.value();
            let scale = 1.0 / chunk.len() as f64;
            for &local in chunk {
                let inst = &ds.instances[train[local]];
                let y_hat = self.model.forward(&inst.x)?;
                let gated = match &self.gps[local] {
                    Some(gp) if cfg.beta > 0.0 && gp.is_usable() => {
                        let p = gp.predict(&y_hat)?;
                        (p.std < cfg.beta).then_some((gp, p))
                    }
                    _ => None,
                };
                match gated {
                    Some((gp, pred)) => {
                        stats.surrogate_uses += 1;
                        let gy = if cfg.ablation.differentiation {
                            gp.mean_gradient(&y_hat)?
                        } else {
                            let mut rng = rng_from(&[
                                domain::SURROGATE_SFGE,
                                self.seed,
                                local as u64,
                                epoch as u64,
                            ]);
                            let (y_prime, _) = sfge_sample(&y_hat, &sigma, &mut rng);
                            let reward = gp.predict(&y_prime)?.mean;
                            sfge_grad(&y_hat, &y_prime, reward, &sigma, pred.mean).0
                        };
                        let gy: Vec<f64> = gy.iter().map(|g| g * scale).collect();
                        for (acc, g) in grad.iter_mut().zip(self.model.backward(&inst.x, &gy)?) {
                            *acc += g;
                        }
                        stats.loss += pred.mean;
                    }
                    None => {
                        stats.fallback_uses += 1;
                        let mut rng =
                            rng_from(&[domain::SFGE, self.seed, local as u64, epoch as u64]);
                        let (y_prime, origin) = sfge_sample(&y_hat, &sigma, &mut rng);
                        let r = ds
                            .problem
                            .regret_counted(&inst.y, &y_prime, &self.counter)?;
                        let (gy, gs) = sfge_grad(&y_hat, &y_prime, r, &sigma, b);
                        let gy: Vec<f64> = gy.iter().map(|g| g * scale).collect();
                        for (acc, g) in grad.iter_mut().zip(self.model.backward(&inst.x, &gy)?) {
                            *acc += g;
                        }
                        for (acc, g) in grad_sigma.iter_mut().zip(&gs) {
                            *acc += g * scale;
                        }
                        regrets.push(r);
                        stats.loss += r;
                        let bank = &mut self.bank.examples[local];
                        self.pending[local].push(bank.len());
                        bank.push(RegretSample::own(y_prime, r, origin));
                    }
                }
            }
            adam_step(&mut self.adam, &mut self.model, &grad)?;
            self.policy.update(&mut self.sigma_adam, &grad_sigma)?;
            regrets.into_iter().for_each(|r| self.baseline.push(r));
        }
        stats.loss /= n as f64;
        Ok(stats)
    }

    /// Refit every surrogate with at least `retrain_trigger` new own samples,
    /// donating those samples to similar examples first when sharing is on.
    /// Returns the number of surrogates refitted.
    pub fn maybe_retrain(&mut self) -> Result<usize> {
        if self.cfg.beta <= 0.0 {
            return Ok(0);
        }
        let due: Vec<usize> = (0..self.n_train())
            .filter(|&i| self.pending[i].len() >= self.cfg.retrain_trigger)
            .collect();
        if self.sharing_active() {
            for &i in &due {
                let fresh: Vec<RegretSample> = self.pending[i]
                    .iter()
                    .map(|&k| RegretSample {
                        donor: Some(i),
                        ..self.bank.examples[i][k].clone()
                    })
                    .collect();
                for &j in &self.neighbors[i] {
                    self.bank.examples[j].extend(fresh.iter().cloned());
                }
            }
        }
        for &i in &due {
            self.fit_surrogate(i)?;
            self.pending[i].clear();
        }
        if self.sharing_active() && !due.is_empty() {
            let alphas: Vec<f64> = due
                .iter()
                .filter_map(|&i| self.gps[i].as_ref())
                .filter(|g| g.is_usable())
                .map(|g| g.hyper.alpha)
                .collect();
            if !alphas.is_empty() {
                self.alpha = alphas.iter().sum::<f64>() / alphas.len() as f64;
            }
        }
        Ok(due.len())
    }
}

/// PFL warm start, pretraining, then gated epochs until the epoch budget,
/// patience or time limit runs out. Returns the best-validation model.
pub fn train(ds: &Dataset, cfg: &TrainerConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let over_time = || {
        cfg.time_limit_seconds
            .is_some_and(|t| start.elapsed().as_secs_f64() >= t)
    };
    let init = PredictorModel::for_dataset(ds, &cfg.hidden, seed)?;
    let warm = pfl_train(&init, ds, &cfg.warm_start(), seed)?.model;

    let train_idx = &ds.split.train;
    let val_idx: &[usize] = if ds.split.val.is_empty() {
        train_idx
    } else {
        &ds.split.val
    };
    let test_idx: &[usize] = if ds.split.test.is_empty() {
        val_idx
    } else {
        &ds.split.test
    };
    let eval_counter = CallCounter::new();
    let mut best = warm.clone();
    let mut best_val = evaluate(&best, ds, val_idx, &eval_counter)?;
    let mut best_epoch = 0;

    let mut tr = Trainer::new(ds, cfg, seed, warm)?;
    let mut epochs = Vec::new();
    let mut trajectory = Vec::new();
    let (mut hits, mut decisions) = (0usize, 0usize);

    let mut stop = StopReason::MaxEpochs;
    if over_time() || !tr.pretrain(&over_time)? {
        stop = StopReason::TimeLimit;
    }
    let pretrain_calls = tr.counter.regret_evals();

    if stop != StopReason::TimeLimit {
        let mut since_best = 0;
        for epoch in 0..cfg.epochs {
            if over_time() {
                stop = StopReason::TimeLimit;
                break;
            }
            let stats = tr.epoch_step(epoch)?;
            tr.maybe_retrain()?;
            let val = evaluate(&tr.model, ds, val_idx, &eval_counter)?;
            hits += stats.surrogate_uses;
            decisions += stats.surrogate_uses + stats.fallback_uses;
            epochs.push(EpochMetrics {
                epoch: epoch + 1,
                train_regret: stats.loss,
                val_regret: val,
                solver_calls_cum: tr.counter.regret_evals(),
                surrogate_hit_rate: stats.surrogate_uses as f64
                    / (stats.surrogate_uses + stats.fallback_uses).max(1) as f64,
                wall_time: start.elapsed().as_secs_f64(),
                surrogate_uses: stats.surrogate_uses,
                fallback_uses: stats.fallback_uses,
                sigma: tr.policy.mean_sigma(),
            });
            if cfg.record_trajectory {
                trajectory.push(tr.model.theta.clone());
            }
            log::info!(
                "epoch {} val regret {:.4} calls {} hit rate {:.3}",
                epoch + 1,
                val,
                tr.counter.regret_evals(),
                epochs.last().map_or(0.0, |e| e.surrogate_hit_rate)
            );
            if val < best_val {
                best_val = val;
                best = tr.model.clone();
                best_epoch = epoch + 1;
                since_best = 0;
            } else {
                since_best += 1;
            }
            if since_best >= cfg.patience {
                stop = StopReason::EarlyStopping;
                break;
            }
        }
    }

    let test_regret = evaluate(&best, ds, test_idx, &eval_counter)?;
    let n_train = train_idx.len();
    let metrics = RunMetrics {
        seed,
        n_train,
        epochs_run: epochs.len(),
        stop_reason: stop,
        wall_time: start.elapsed().as_secs_f64(),
        solver_calls_total: tr.counter.regret_evals(),
        solver_calls_per_instance: tr.counter.regret_evals() as f64 / n_train as f64,
        pretrain_calls,
        solves_total: tr.counter.solves(),
        eval_calls: eval_counter.regret_evals(),
        surrogate_hit_rate: hits as f64 / decisions.max(1) as f64,
        best_epoch,
        best_val_regret: best_val,
        test_regret,
        sigma: tr.policy.mean_sigma(),
        gp_fits: tr.gp_fits,
        gp_failures: tr.gp_failures,
        weight_underflows: tr.diag.underflows(),
        low_confidence_targets: tr.diag.low_confidence_count(),
        d_max: tr.d_max,
        alpha: tr.alpha,
        epochs,
        trajectory,
    };
    Ok(TrainOutcome {
        model: best,
        metrics,
    })
}
