use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, ForgeError, Result};
use crate::predictor::PflConfig;

/// Components of the method that can be switched off individually.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Fit surrogates to smoothed rather than raw regrets.
    pub smoothing: bool,
    /// Probe every example at LHS points before training.
    pub pretrain: bool,
    /// Donate samples between examples with similar landscapes.
    pub sharing: bool,
    /// Use the analytic surrogate gradient (otherwise a score-function
    /// estimate with the surrogate mean as reward).
    pub differentiation: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            smoothing: true,
            pretrain: true,
            sharing: false,
            differentiation: true,
        }
    }
}

impl Ablation {
    pub const FLAGS: [&'static str; 4] = ["smoothing", "pretrain", "sharing", "differentiation"];

    pub fn all_on() -> Self {
        Self {
            sharing: true,
            ..Self::default()
        }
    }

    pub fn with_flag(mut self, name: &str, on: bool) -> Result<Self> {
        match name {
            "smoothing" => self.smoothing = on,
            "pretrain" => self.pretrain = on,
            "sharing" => self.sharing = on,
            "differentiation" => self.differentiation = on,
            other => return config_err(format!("unknown ablation flag `{other}`")),
        }
        Ok(self)
    }

    /// The full method followed by one run per flag switched off.
    pub fn grid() -> Vec<(String, Ablation)> {
        let full = Self::all_on();
        let mut out = vec![("full".to_string(), full)];
        for f in Self::FLAGS {
            out.push((
                format!("no-{f}"),
                full.with_flag(f, false).expect("known flag"),
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gsl,
    Sfge,
    Pfl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gsl => "gsl",
            Method::Sfge => "sfge",
            Method::Pfl => "pfl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ForgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gsl" => Ok(Method::Gsl),
            "sfge" => Ok(Method::Sfge),
            "pfl" => Ok(Method::Pfl),
            other => config_err(format!(
                "unknown method `{other}` (expected gsl, sfge or pfl)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    /// Confidence threshold on the standardized surrogate std.
    pub beta: f64,
    /// New own samples that trigger a surrogate refit.
    pub retrain_trigger: usize,
    /// Smoothing std for surrogate targets; `None` follows the policy sigma.
    pub sigma_smooth: Option<f64>,
    pub sigma_init: f64,
    pub sigma_per_dim: bool,
    pub epochs: usize,
    pub patience: usize,
    /// Mini-batch size; 0 means one full batch per epoch.
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    /// Epochs of MSE training before regret-driven training.
    pub warm_start_epochs: usize,
    /// Early stopping for the warm start; `None` runs every warm-start epoch.
    pub warm_start_patience: Option<usize>,
    pub ablation: Ablation,
    /// Sample-donation distance; `None` uses the 10% quantile of pairwise
    /// landscape distances.
    pub d_max: Option<f64>,
    pub alpha_init: f64,
    pub time_limit_seconds: Option<f64>,
    pub baseline_window: usize,
    pub gp_iterations: usize,
    pub gp_step: f64,
    /// Relative widening of the realization range that forms the LHS box.
    pub box_inflation: f64,
    /// Overrides the logarithmic probe-count rule.
    pub pretrain_points: Option<usize>,
    /// Keep theta after every epoch in the returned metrics.
    pub record_trajectory: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            retrain_trigger: 40,
            sigma_smooth: None,
            sigma_init: 0.1,
            sigma_per_dim: false,
            epochs: 100,
            patience: 10,
            batch_size: 32,
            lr: 1e-3,
            hidden: Vec::new(),
            warm_start_epochs: 5,
            warm_start_patience: None,
            ablation: Ablation::default(),
            d_max: None,
            alpha_init: 0.0,
            time_limit_seconds: None,
            baseline_window: 32,
            gp_iterations: 50,
            gp_step: 0.05,
            box_inflation: 0.2,
            pretrain_points: None,
            record_trajectory: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) {
            return config_err("beta must be non-negative");
        }
        if self.retrain_trigger == 0 {
            return config_err("retrain_trigger must be at least 1");
        }
        if !(self.sigma_init > crate::sfge::SIGMA_MIN) {
            return config_err("sigma_init must exceed the sigma floor");
        }
        if let Some(s) = self.sigma_smooth {
            if !(s > 0.0) {
                return config_err("sigma_smooth must be positive");
            }
        }
        if !(self.lr > 0.0) {
            return config_err("lr must be positive");
        }
        if let Some(d) = self.d_max {
            if !(d > 0.0) {
                return config_err("d_max must be positive");
            }
        }
        if let Some(t) = self.time_limit_seconds {
            if !(t >= 0.0) {
                return config_err("time limit must be non-negative");
            }
        }
        if self.pretrain_points == Some(0) {
            return config_err("pretrain_points must be positive");
        }
        Ok(())
    }

    /// The configuration used by `method`: `sfge` disables the gate and every
    /// surrogate component, `pfl` skips regret-driven epochs.
    pub fn for_method(mut self, method: Method) -> Self {
        match method {
            Method::Gsl => {}
            Method::Sfge => {
                self.beta = 0.0;
                self.ablation = Ablation {
                    smoothing: false,
                    pretrain: false,
                    sharing: false,
                    differentiation: false,
                };
            }
            Method::Pfl => {
                let pfl = PflConfig::default();
                self.epochs = 0;
                self.warm_start_epochs = pfl.epochs;
                self.warm_start_patience = Some(pfl.patience);
                self.ablation.pretrain = false;
            }
        }
        self
    }

    pub fn warm_start(&self) -> PflConfig {
        PflConfig {
            epochs: self.warm_start_epochs,
            patience: self.warm_start_patience.unwrap_or(self.warm_start_epochs),
            batch_size: self.batch_size,
            lr: self.lr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_five_rows() {
        let g = Ablation::grid();
        assert_eq!(g.len(), 5);
        assert_eq!(g[0].1, Ablation::all_on());
        assert!(!g[2].1.pretrain && g[2].1.smoothing);
    }

    #[test]
    fn config_rejects_bad_values() {
        let ok = TrainerConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainerConfig {
                retrain_trigger: 0,
                ..ok.clone()
            },
            TrainerConfig {
                beta: -1.0,
                ..ok.clone()
            },
            TrainerConfig {
                lr: 0.0,
                ..ok.clone()
            },
            TrainerConfig {
                d_max: Some(0.0),
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<TrainerConfig>(r#"{"betta": 1.0}"#).is_err());
        let c: TrainerConfig = serde_json::from_str(r#"{"beta": 0.5}"#).unwrap();
        assert_eq!(c.beta, 0.5);
        assert_eq!(c.retrain_trigger, 40);
    }

    #[test]
    fn method_round_trip() {
        for m in [Method::Gsl, Method::Sfge, Method::Pfl] {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("spo".parse::<Method>().is_err());
    }
}
