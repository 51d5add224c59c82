//! Benchmark problem families: exact decision solvers, true costs with
//! recourse, and regret.
//!
//! A [`ProblemSpec`] fixes everything about a family except the uncertain
//! parameter vector `y`. [`ProblemSpec::solve`] maps a (predicted) parameter
//! vector to a decision, [`ProblemSpec::true_cost`] evaluates a decision under
//! a realization, and [`ProblemSpec::regret`] combines the two.

mod dataset;
mod generate;
pub mod knapsack;
pub mod wsmc;

pub use dataset::{Dataset, Instance, Split};
pub use generate::{
    generate_dataset, generate_kp_dataset, generate_toy_dataset, generate_wsmc_dataset,
    GeneratorConfig, KpConfig, ToyConfig, Uncertain, WsmcConfig,
};

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, ForgeError, Result};

/// Which benchmark family a spec belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    #[serde(rename = "kp-weights")]
    KnapsackWeights,
    #[serde(rename = "kp-values")]
    KnapsackValues,
    #[serde(rename = "kp-capacity")]
    KnapsackCapacity,
    Wsmc,
    Toy,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::KnapsackWeights => "kp-weights",
            Family::KnapsackValues => "kp-values",
            Family::KnapsackCapacity => "kp-capacity",
            Family::Wsmc => "wsmc",
            Family::Toy => "toy",
        }
    }

    pub fn is_knapsack(self) -> bool {
        matches!(
            self,
            Family::KnapsackWeights | Family::KnapsackValues | Family::KnapsackCapacity
        )
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = ForgeError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "kp-weights" => Family::KnapsackWeights,
            "kp-values" => Family::KnapsackValues,
            "kp-capacity" => Family::KnapsackCapacity,
            "wsmc" => Family::Wsmc,
            "toy" => Family::Toy,
            other => return config_err(format!("unknown family `{other}`")),
        })
    }
}

/// Family-specific constants that are not predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FixedData {
    /// For the uncertain component (values, weights or capacity) the stored
    /// entry is unused; the prediction or realization takes its place.
    Knapsack {
        values: Vec<f64>,
        weights: Vec<f64>,
        capacity: f64,
    },
    /// `availability[item][set]` is 1 when `set` covers `item`.
    Wsmc {
        availability: Vec<Vec<u8>>,
        costs: Vec<f64>,
    },
    Toy {
        weights: Vec<Vec<f64>>,
        step_height: f64,
        step_length: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub family: Family,
    pub dim_x: usize,
    pub dim_y: usize,
    /// Recourse penalty per unit of constraint violation.
    pub penalty: f64,
    pub data: FixedData,
}

/// A decision and the objective it achieves under the parameters it was
/// solved against. For knapsacks the objective is the packed value (a
/// maximization); for WSMC it is the selected set cost; Toy reports 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub z: Vec<f64>,
    pub objective: f64,
}

/// Counts solver invocations and regret evaluations.
///
/// One regret evaluation performs two `solve` calls; the per-instance call
/// metrics reported by the trainer are regret evaluations.
#[derive(Debug, Default)]
pub struct CallCounter {
    solves: AtomicU64,
    regret_evals: AtomicU64,
}

impl CallCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solves(&self) -> u64 {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn regret_evals(&self) -> u64 {
        self.regret_evals.load(Ordering::Relaxed)
    }

    fn record_solve(&self) {
        self.solves.fetch_add(1, Ordering::Relaxed);
    }

    fn record_regret(&self) {
        self.regret_evals.fetch_add(1, Ordering::Relaxed);
    }
}

impl ProblemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim_x == 0 || self.dim_y == 0 {
            return config_err("dim_x and dim_y must be positive");
        }
        if !(self.penalty >= 0.0) {
            return config_err("penalty must be non-negative");
        }
        match (&self.data, self.family) {
            (
                FixedData::Knapsack {
                    values, weights, ..
                },
                f,
            ) if f.is_knapsack() => {
                if values.len() != weights.len() {
                    return config_err("values and weights differ in length");
                }
                let expected = if f == Family::KnapsackCapacity {
                    1
                } else {
                    values.len()
                };
                if self.dim_y != expected {
                    return config_err(format!("{f} expects dim_y = {expected}"));
                }
            }
            (
                FixedData::Wsmc {
                    availability,
                    costs,
                },
                Family::Wsmc,
            ) => {
                if availability.len() != self.dim_y {
                    return config_err("availability rows must equal dim_y");
                }
                if availability.iter().any(|row| row.len() != costs.len()) {
                    return config_err("availability columns must equal the set count");
                }
                if availability.iter().any(|row| row.iter().all(|&a| a == 0)) {
                    return config_err("every item must be coverable by some set");
                }
            }
            (
                FixedData::Toy {
                    weights,
                    step_height,
                    step_length,
                },
                Family::Toy,
            ) => {
                if weights.len() != self.dim_y || weights.iter().any(|r| r.len() != self.dim_x) {
                    return config_err("toy weight matrix must be dim_y x dim_x");
                }
                if !(*step_height > 0.0 && *step_length > 0.0) {
                    return config_err("toy step height and length must be positive");
                }
            }
            _ => return config_err("fixed data does not match family"),
        }
        Ok(())
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim_y {
            return Err(ForgeError::Shape {
                expected: self.dim_y,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Map a prediction into the solver's domain: negative weights, values and
    /// demands become 0, demands are rounded and capped at the number of sets
    /// that can cover the item.
    pub fn clamp_prediction(&self, y_hat: &[f64]) -> Vec<f64> {
        let nan_to_zero = |v: f64| if v.is_nan() { 0.0 } else { v };
        match &self.data {
            FixedData::Knapsack { .. } => y_hat.iter().map(|&v| nan_to_zero(v).max(0.0)).collect(),
            FixedData::Wsmc { availability, .. } => y_hat
                .iter()
                .zip(availability)
                .map(|(&v, row)| {
                    let cover = row.iter().filter(|&&a| a != 0).count() as f64;
                    nan_to_zero(v).max(0.0).round().min(cover)
                })
                .collect(),
            FixedData::Toy { .. } => y_hat.to_vec(),
        }
    }

    /// Exact optimum of the decision problem under the given parameters.
    pub fn solve(&self, y_hat: &[f64]) -> Result<Decision> {
        self.check_len(y_hat)?;
        let p = self.clamp_prediction(y_hat);
        match (&self.data, self.family) {
            (
                FixedData::Knapsack {
                    values,
                    weights,
                    capacity,
                },
                family,
            ) => {
                let (v, w, c): (&[f64], &[f64], f64) = match family {
                    Family::KnapsackValues => (&p, weights, *capacity),
                    Family::KnapsackWeights => (values, &p, *capacity),
                    _ => (values, weights, p[0]),
                };
                let z = knapsack::solve(v, w, c)?;
                let objective = z.iter().zip(v).map(|(zi, vi)| zi * vi).sum();
                Ok(Decision { z, objective })
            }
            (
                FixedData::Wsmc {
                    availability,
                    costs,
                },
                _,
            ) => {
                let demands: Vec<u32> = p.iter().map(|&d| d as u32).collect();
                let z = wsmc::solve(availability, costs, &demands)?;
                let objective = z.iter().zip(costs).map(|(zi, ci)| zi * ci).sum();
                Ok(Decision { z, objective })
            }
            (FixedData::Toy { .. }, _) => {
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(ForgeError::NonFinite("toy prediction"));
                }
                Ok(Decision {
                    z: p,
                    objective: 0.0,
                })
            }
        }
    }

    /// Cost of executing `z` when the parameters turn out to be `y`,
    /// including the linear recourse penalty for violated constraints.
    pub fn true_cost(&self, y: &[f64], z: &Decision) -> f64 {
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let z = &z.z;
        match (&self.data, self.family) {
            (FixedData::Knapsack { values, .. }, Family::KnapsackValues) => {
                let _ = values;
                -dot(y, z)
            }
            (
                FixedData::Knapsack {
                    values, capacity, ..
                },
                Family::KnapsackWeights,
            ) => -dot(values, z) + self.penalty * (dot(y, z) - capacity).max(0.0),
            (
                FixedData::Knapsack {
                    values, weights, ..
                },
                _,
            ) => -dot(values, z) + self.penalty * (dot(weights, z) - y[0]).max(0.0),
            (
                FixedData::Wsmc {
                    availability,
                    costs,
                },
                _,
            ) => {
                let shortfall: f64 = availability
                    .iter()
                    .zip(y)
                    .map(|(row, &demand)| {
                        let covered: f64 =
                            row.iter().zip(z).map(|(&a, &zj)| f64::from(a) * zj).sum();
                        (demand - covered).max(0.0)
                    })
                    .sum();
                dot(costs, z) + self.penalty * shortfall
            }
            (
                FixedData::Toy {
                    step_height,
                    step_length,
                    ..
                },
                _,
            ) => {
                let dist = y
                    .iter()
                    .zip(z)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                step_height * (dist / step_length).floor()
            }
        }
    }

    /// `g(y, z*(y_hat)) - g(y, z*(y))`, without call accounting.
    pub fn regret(&self, y: &[f64], y_hat: &[f64]) -> Result<f64> {
        self.regret_counted(y, y_hat, &CallCounter::default())
    }

    /// Regret with exactly two `solve` calls recorded on `counter`.
    pub fn regret_counted(&self, y: &[f64], y_hat: &[f64], counter: &CallCounter) -> Result<f64> {
        self.check_len(y)?;
        counter.record_regret();
        counter.record_solve();
        let predicted = self.solve(y_hat)?;
        counter.record_solve();
        let ideal = self.solve(y)?;
        Ok(self.true_cost(y, &predicted) - self.true_cost(y, &ideal))
    }
}
