//! Per-example Gaussian-process surrogates of the smoothed regret.
//!
//! Inputs are normalized with the bank's per-dimension statistics and targets
//! standardized with the global regret statistics before fitting. Predictions
//! report the de-standardized mean and the standardized latent std; the
//! latter is what the confidence gate compares against `beta`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::predictor::NormStats;
use crate::problems::{CallCounter, ProblemSpec};
use crate::smoothing::TargetStats;

pub const NOISE_FLOOR: f64 = 1e-6;
const JITTERS: [f64; 6] = [0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];
const LOG_ELL_RANGE: (f64, f64) = (-6.9, 6.9);
const LOG_SOUT_RANGE: (f64, f64) = (-6.9, 4.6);
const LOG_NOISE_MAX: f64 = 2.3;
const ALPHA_RANGE: (f64, f64) = (-10.0, 10.0);

/// `s_out^2 * exp(-|a - b|^2 / (2 l^2))`.
pub fn rbf_kernel(a: &[f64], b: &[f64], ell: f64, s_out: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    s_out * s_out * (-d2 / (2.0 * ell * ell)).exp()
}

/// Covariance between samples of two examples whose landscape vectors are
/// `v_i` and `v_j`, downscaled by their distance.
pub fn shared_kernel(k_old: f64, v_i: &[f64], v_j: &[f64], alpha: f64) -> f64 {
    k_old / (1.0 + alpha.exp() * euclidean(v_i, v_j))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Regrets of one example at the global probe points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeVector {
    pub v: Vec<f64>,
}

impl LandscapeVector {
    pub fn distance(&self, other: &LandscapeVector) -> f64 {
        euclidean(&self.v, &other.v)
    }
}

/// Evaluate the regret of the example with realization `y` at every probe.
pub fn landscape_vector(
    spec: &ProblemSpec,
    y: &[f64],
    probes: &[Vec<f64>],
    counter: &CallCounter,
) -> Result<LandscapeVector> {
    let v = probes
        .iter()
        .map(|p| spec.regret_counted(y, p, counter))
        .collect::<Result<Vec<_>>>()?;
    Ok(LandscapeVector { v })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharingConfig {
    pub enabled: bool,
    /// Log-scale of the kernel downscaling; learned during fits.
    pub alpha: f64,
    /// Landscape distance up to which samples are donated. `None` selects the
    /// 10% quantile of pairwise distances at pretraining.
    pub d_max: Option<f64>,
}

impl Default for SharingConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            alpha: 0.0,
            d_max: None,
        }
    }
}

/// Sharing information a fit needs: where each training row came from and
/// the landscape vectors to measure distances with.
#[derive(Debug, Clone, Copy)]
pub struct SharingContext<'a> {
    pub alpha: f64,
    pub landscapes: &'a [LandscapeVector],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub log_ell: f64,
    pub log_s_out: f64,
    /// Log of the noise variance.
    pub log_noise: f64,
    pub alpha: f64,
}

impl Hyperparams {
    fn initial(dim_y: usize) -> Self {
        Self {
            log_ell: prior_mean(dim_y),
            log_s_out: 0.0,
            log_noise: (1e-2f64).ln(),
            alpha: 0.0,
        }
    }

    pub fn ell(&self) -> f64 {
        self.log_ell.exp()
    }

    pub fn s_out(&self) -> f64 {
        self.log_s_out.exp()
    }

    pub fn noise(&self) -> f64 {
        self.log_noise.exp()
    }

    fn as_vec(&self) -> [f64; 4] {
        [self.log_ell, self.log_s_out, self.log_noise, self.alpha]
    }

    fn from_vec(v: [f64; 4]) -> Self {
        Self {
            log_ell: v[0].clamp(LOG_ELL_RANGE.0, LOG_ELL_RANGE.1),
            log_s_out: v[1].clamp(LOG_SOUT_RANGE.0, LOG_SOUT_RANGE.1),
            log_noise: v[2].clamp(NOISE_FLOOR.ln(), LOG_NOISE_MAX),
            alpha: v[3].clamp(ALPHA_RANGE.0, ALPHA_RANGE.1),
        }
    }
}

/// Mean of the log-normal length-scale prior, `log(dim_y) / 2`.
fn prior_mean(dim_y: usize) -> f64 {
    0.5 * (dim_y.max(1) as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GpStatus {
    Unfitted,
    Ready,
    Unusable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub iterations: usize,
    pub step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            iterations: 50,
            step: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Log marginal likelihood plus log prior at the final hyperparameters.
    pub objective: f64,
    pub jitter: f64,
    pub dropped_donated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    /// De-standardized predictive mean.
    pub mean: f64,
    /// Predictive mean in standardized units.
    pub mean_std: f64,
    /// Latent predictive standard deviation in standardized units.
    pub std: f64,
}

#[derive(Debug, Clone)]
struct Posterior {
    x: Vec<Vec<f64>>,
    /// `(K + noise I)^-1 t`.
    weights: DVector<f64>,
    chol_l: DMatrix<f64>,
    /// Downscaling factor between the owner's query point and each row.
    query_factor: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GpSurrogate {
    pub example_id: usize,
    pub dim_y: usize,
    pub hyper: Hyperparams,
    pub status: GpStatus,
    pub input_stats: NormStats,
    pub target_stats: TargetStats,
    pub options: FitOptions,
    fitted_once: bool,
    posterior: Option<Posterior>,
}

/// Matrices that depend only on the data, not on hyperparameters.
struct Design {
    x: Vec<Vec<f64>>,
    t: DVector<f64>,
    d2: DMatrix<f64>,
    /// Pairwise landscape distances of the rows' source examples, if shared.
    land: Option<DMatrix<f64>>,
    query_land: Vec<f64>,
}

struct Evaluation {
    objective: f64,
    grad: [f64; 4],
}

impl GpSurrogate {
    pub fn new(example_id: usize, input_stats: NormStats, target_stats: TargetStats) -> Self {
        let dim_y = input_stats.mean.len();
        Self {
            example_id,
            dim_y,
            hyper: Hyperparams::initial(dim_y),
            status: GpStatus::Unfitted,
            input_stats,
            target_stats,
            options: FitOptions::default(),
            fitted_once: false,
            posterior: None,
        }
    }

    /// A surrogate with identity input and target scaling.
    pub fn identity(example_id: usize, dim_y: usize) -> Self {
        Self::new(
            example_id,
            NormStats {
                mean: vec![0.0; dim_y],
                std: vec![1.0; dim_y],
            },
            TargetStats {
                mean: 0.0,
                std: 1.0,
            },
        )
    }

    pub fn is_usable(&self) -> bool {
        self.status == GpStatus::Ready
    }

    pub fn n_points(&self) -> usize {
        self.posterior.as_ref().map_or(0, |p| p.x.len())
    }

    fn design(
        &self,
        inputs: &[Vec<f64>],
        targets: &[f64],
        sharing: Option<(&[usize], SharingContext<'_>)>,
    ) -> Result<Design> {
        let x: Vec<Vec<f64>> = inputs.iter().map(|p| self.input_stats.apply(p)).collect();
        let n = x.len();
        let t =
            DVector::from_iterator(n, targets.iter().map(|&r| self.target_stats.standardize(r)));
        let d2 = DMatrix::from_fn(n, n, |a, b| {
            x[a].iter().zip(&x[b]).map(|(u, v)| (u - v) * (u - v)).sum()
        });
        let (land, query_land) = match sharing {
            Some((sources, ctx)) if sources.iter().any(|&s| s != self.example_id) => {
                let lv = |i: usize| -> Result<&LandscapeVector> {
                    ctx.landscapes.get(i).ok_or_else(|| {
                        ForgeError::Config(format!("no landscape vector for example {i}"))
                    })
                };
                let own = lv(self.example_id)?;
                let mut m = DMatrix::zeros(n, n);
                for a in 0..n {
                    for b in (a + 1)..n {
                        if sources[a] != sources[b] {
                            let d = lv(sources[a])?.distance(lv(sources[b])?);
                            m[(a, b)] = d;
                            m[(b, a)] = d;
                        }
                    }
                }
                let q = sources
                    .iter()
                    .map(|&s| {
                        Ok(if s == self.example_id {
                            0.0
                        } else {
                            own.distance(lv(s)?)
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                (Some(m), q)
            }
            _ => (None, vec![0.0; n]),
        };
        Ok(Design {
            x,
            t,
            d2,
            land,
            query_land,
        })
    }

    /// Covariance without noise, and the RBF part before downscaling.
    fn covariance(h: &Hyperparams, d: &Design) -> (DMatrix<f64>, DMatrix<f64>) {
        let ell2 = h.ell() * h.ell();
        let s2 = h.s_out() * h.s_out();
        let rbf = d.d2.map(|v| s2 * (-v / (2.0 * ell2)).exp());
        let k = match &d.land {
            Some(l) => rbf.zip_map(l, |k, dist| k / (1.0 + h.alpha.exp() * dist)),
            None => rbf.clone(),
        };
        (k, rbf)
    }

    fn factor(
        k: &DMatrix<f64>,
        noise: f64,
    ) -> Option<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
        let n = k.nrows();
        for &j in &JITTERS {
            let m = k + DMatrix::identity(n, n) * (noise + j);
            if let Some(c) = m.cholesky() {
                return Some((c, j));
            }
        }
        None
    }

    fn evaluate(&self, h: &Hyperparams, d: &Design, learn_alpha: bool) -> Option<Evaluation> {
        let n = d.t.len();
        let (k, rbf) = Self::covariance(h, d);
        let (chol, _) = Self::factor(&k, h.noise())?;
        let a = chol.solve(&d.t);
        let log_det: f64 = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        let mu = prior_mean(self.dim_y);
        let objective = -0.5 * d.t.dot(&a)
            - 0.5 * log_det
            - 0.5 * n as f64 * std::f64::consts::TAU.ln()
            - 0.5 * (h.log_ell - mu).powi(2);

        // d(objective)/d(theta) = 0.5 tr((a a^T - K^-1) dK/dtheta)
        let w = &a * a.transpose() - chol.inverse();
        let ell2 = h.ell() * h.ell();
        let mut g_ell = 0.0;
        let mut g_s = 0.0;
        let mut g_alpha = 0.0;
        for c in 0..n {
            for r in 0..n {
                let wv = w[(r, c)];
                let kv = k[(r, c)];
                g_ell += wv * kv * d.d2[(r, c)] / ell2;
                g_s += wv * 2.0 * kv;
                if let (true, Some(l)) = (learn_alpha, &d.land) {
                    let e = h.alpha.exp() * l[(r, c)];
                    g_alpha -= wv * rbf[(r, c)] * e / ((1.0 + e) * (1.0 + e));
                }
            }
        }
        let g_noise = w.trace() * h.noise();
        Some(Evaluation {
            objective,
            grad: [
                0.5 * g_ell - (h.log_ell - mu),
                0.5 * g_s,
                0.5 * g_noise,
                0.5 * g_alpha,
            ],
        })
    }

    /// Fit hyperparameters by gradient ascent on the log marginal likelihood
    /// plus the length-scale log prior, then cache the posterior.
    ///
    /// `sharing` lists the source example of each row; rows from other
    /// examples are donated and are dropped if the factorization fails.
    pub fn fit(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[f64],
        sharing: Option<(&[usize], SharingContext<'_>)>,
        warm_start: bool,
    ) -> Result<FitReport> {
        if inputs.is_empty() {
            return Err(ForgeError::EmptyBank);
        }
        if inputs.len() != targets.len() {
            return Err(ForgeError::Shape {
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        if let Some(p) = inputs.iter().find(|p| p.len() != self.dim_y) {
            return Err(ForgeError::Shape {
                expected: self.dim_y,
                got: p.len(),
            });
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(ForgeError::NonFinite("surrogate targets"));
        }
        if let Some((sources, _)) = sharing {
            if sources.len() != inputs.len() {
                return Err(ForgeError::Shape {
                    expected: inputs.len(),
                    got: sources.len(),
                });
            }
        }

        match self.fit_once(inputs, targets, sharing, warm_start) {
            Ok(r) => Ok(r),
            Err(e) => {
                let own: Option<Vec<usize>> = sharing.and_then(|(sources, _)| {
                    let keep: Vec<usize> = (0..inputs.len())
                        .filter(|&k| sources[k] == self.example_id)
                        .collect();
                    (keep.len() < inputs.len() && !keep.is_empty()).then_some(keep)
                });
                let result = match own {
                    Some(keep) => {
                        let xi: Vec<Vec<f64>> = keep.iter().map(|&k| inputs[k].clone()).collect();
                        let ti: Vec<f64> = keep.iter().map(|&k| targets[k]).collect();
                        self.fit_once(&xi, &ti, None, warm_start).map(|mut r| {
                            r.dropped_donated = true;
                            r
                        })
                    }
                    None => Err(e),
                };
                if result.is_err() {
                    self.status = GpStatus::Unusable;
                    self.posterior = None;
                }
                result
            }
        }
    }

    fn fit_once(
        &mut self,
        inputs: &[Vec<f64>],
        targets: &[f64],
        sharing: Option<(&[usize], SharingContext<'_>)>,
        warm_start: bool,
    ) -> Result<FitReport> {
        let d = self.design(inputs, targets, sharing)?;
        let learn_alpha = d.land.is_some();
        let mut h = if warm_start && self.fitted_once {
            self.hyper
        } else {
            Hyperparams::initial(self.dim_y)
        };
        h.alpha = sharing.map_or(h.alpha, |(_, ctx)| ctx.alpha);

        // Adam-normalized ascent steps keep the per-iteration move bounded by
        // roughly `step` in log space regardless of gradient scale.
        let mut m = [0.0; 4];
        let mut v = [0.0; 4];
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        for it in 1..=self.options.iterations {
            let Some(ev) = self.evaluate(&h, &d, learn_alpha) else {
                break;
            };
            let mut p = h.as_vec();
            for k in 0..4 {
                if k == 3 && !learn_alpha {
                    continue;
                }
                m[k] = b1 * m[k] + (1.0 - b1) * ev.grad[k];
                v[k] = b2 * v[k] + (1.0 - b2) * ev.grad[k] * ev.grad[k];
                let mh = m[k] / (1.0 - b1.powi(it as i32));
                let vh = v[k] / (1.0 - b2.powi(it as i32));
                p[k] += self.options.step * mh / (vh.sqrt() + eps);
            }
            let next = Hyperparams::from_vec(p);
            if self.evaluate(&next, &d, learn_alpha).is_none() {
                break;
            }
            h = next;
        }

        let (k, _) = Self::covariance(&h, &d);
        let (chol, jitter) = Self::factor(&k, h.noise()).ok_or_else(|| {
            ForgeError::Numerical("Cholesky failed after jitter escalation".into())
        })?;
        let objective = self
            .evaluate(&h, &d, learn_alpha)
            .map_or(f64::NEG_INFINITY, |e| e.objective);
        let weights = chol.solve(&d.t);
        let query_factor = d
            .query_land
            .iter()
            .map(|&dist| 1.0 / (1.0 + h.alpha.exp() * dist))
            .collect();
        self.posterior = Some(Posterior {
            x: d.x,
            weights,
            chol_l: chol.l(),
            query_factor,
        });
        self.hyper = h;
        self.status = GpStatus::Ready;
        self.fitted_once = true;
        Ok(FitReport {
            objective,
            jitter,
            dropped_donated: false,
        })
    }

    fn ready(&self) -> Result<&Posterior> {
        match (&self.posterior, self.status) {
            (Some(p), GpStatus::Ready) => Ok(p),
            _ => Err(ForgeError::Unfitted),
        }
    }

    fn cross_covariance(&self, post: &Posterior, u: &[f64]) -> DVector<f64> {
        let (ell, s) = (self.hyper.ell(), self.hyper.s_out());
        DVector::from_iterator(
            post.x.len(),
            post.x
                .iter()
                .zip(&post.query_factor)
                .map(|(xb, f)| rbf_kernel(u, xb, ell, s) * f),
        )
    }

    pub fn predict(&self, y_hat: &[f64]) -> Result<Prediction> {
        let post = self.ready()?;
        if y_hat.len() != self.dim_y {
            return Err(ForgeError::Shape {
                expected: self.dim_y,
                got: y_hat.len(),
            });
        }
        let u = self.input_stats.apply(y_hat);
        let ks = self.cross_covariance(post, &u);
        let mean_std = ks.dot(&post.weights);
        let v = post
            .chol_l
            .solve_lower_triangular(&ks)
            .ok_or_else(|| ForgeError::Numerical("triangular solve failed".into()))?;
        let s2 = self.hyper.s_out().powi(2);
        let var = (s2 - v.norm_squared()).max(0.0);
        Ok(Prediction {
            mean: self.target_stats.unstandardize(mean_std),
            mean_std,
            std: var.sqrt(),
        })
    }

    /// Gradient of the de-standardized predictive mean with respect to the
    /// raw (unnormalized) input.
    pub fn mean_gradient(&self, y_hat: &[f64]) -> Result<Vec<f64>> {
        let post = self.ready()?;
        if y_hat.len() != self.dim_y {
            return Err(ForgeError::Shape {
                expected: self.dim_y,
                got: y_hat.len(),
            });
        }
        let u = self.input_stats.apply(y_hat);
        let ks = self.cross_covariance(post, &u);
        let ell2 = self.hyper.ell().powi(2);
        let mut g = vec![0.0; self.dim_y];
        for ((xb, k), w) in post.x.iter().zip(ks.iter()).zip(post.weights.iter()) {
            let c = -w * k / ell2;
            for (gd, (ud, xd)) in g.iter_mut().zip(u.iter().zip(xb)) {
                *gd += c * (ud - xd);
            }
        }
        for (gd, s) in g.iter_mut().zip(&self.input_stats.std) {
            *gd *= self.target_stats.std / s;
        }
        Ok(g)
    }

    pub fn snapshot(&self, current: Option<&[f64]>) -> GpSnapshot {
        let confidence = current.and_then(|y| self.predict(y).ok()).map(|p| p.std);
        GpSnapshot {
            example_id: self.example_id,
            hyperparams: self.hyper,
            n_points: self.n_points(),
            confidence_at_current_prediction: confidence,
            status: self.status,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub example_id: usize,
    pub hyperparams: Hyperparams,
    pub n_points: usize,
    pub confidence_at_current_prediction: Option<f64>,
    pub status: GpStatus,
}
