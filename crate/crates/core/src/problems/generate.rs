//! Synthetic dataset generators.
//!
//! Contexts are standard Normal. Knapsack and WSMC targets follow the
//! polynomial map used by predict-then-optimize benchmarks,
//!
//! ```text
//! mu_j = ((b_j . x / sqrt(dim_x) + 3)^deg / 3.5^deg + 1) * eta,   eta ~ U[1 - eps, 1 + eps]
//! y_j  ~ Poisson(scale * max(mu_j, 0))
//! ```
//!
//! with `b_j` a fixed Bernoulli(0.5) row. The Toy family uses `y = W x`.

use rand::Rng as _;
use rand_distr::{Bernoulli, Distribution, Poisson, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::{Dataset, Family, FixedData, Instance, ProblemSpec};
use crate::error::{config_err, Result};
use crate::rng::{domain, rng_from, Rng};

/// Which knapsack coefficient is uncertain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Uncertain {
    Weights,
    Values,
    Capacity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KpConfig {
    pub uncertain: Uncertain,
    pub n_items: usize,
    pub dim_x: usize,
    pub degree: u32,
    pub noise_half_width: f64,
    pub n_instances: usize,
    /// Multiplier on the polynomial mean before the Poisson draw.
    pub scale: f64,
    /// Capacity as a fraction of the (expected) total weight.
    pub capacity_ratio: f64,
    pub penalty: f64,
}

impl Default for KpConfig {
    fn default() -> Self {
        Self {
            uncertain: Uncertain::Values,
            n_items: 50,
            dim_x: 5,
            degree: 5,
            noise_half_width: 0.5,
            n_instances: 1000,
            scale: 2.0,
            capacity_ratio: 0.5,
            penalty: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WsmcConfig {
    pub n_items: usize,
    pub n_sets: usize,
    pub dim_x: usize,
    pub degree: u32,
    pub noise_half_width: f64,
    pub n_instances: usize,
    /// Each item is covered by a uniformly drawn fraction of the sets in this range.
    pub density_min: f64,
    pub density_max: f64,
    pub demand_scale: f64,
    pub cost_min: f64,
    pub cost_max: f64,
    pub penalty: f64,
}

impl Default for WsmcConfig {
    fn default() -> Self {
        Self {
            n_items: 10,
            n_sets: 50,
            dim_x: 5,
            degree: 5,
            noise_half_width: 0.5,
            n_instances: 1000,
            density_min: 0.2,
            density_max: 0.4,
            demand_scale: 2.0,
            cost_min: 1.0,
            cost_max: 10.0,
            penalty: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub dim_y: usize,
    pub dim_x: usize,
    pub step_height: f64,
    pub step_length: f64,
    pub n_instances: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            dim_y: 64,
            dim_x: 5,
            step_height: 5.0,
            step_length: 1.0,
            n_instances: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeneratorConfig {
    Kp(KpConfig),
    Wsmc(WsmcConfig),
    Toy(ToyConfig),
}

impl GeneratorConfig {
    pub fn family(&self) -> Family {
        match self {
            GeneratorConfig::Kp(c) => match c.uncertain {
                Uncertain::Weights => Family::KnapsackWeights,
                Uncertain::Values => Family::KnapsackValues,
                Uncertain::Capacity => Family::KnapsackCapacity,
            },
            GeneratorConfig::Wsmc(_) => Family::Wsmc,
            GeneratorConfig::Toy(_) => Family::Toy,
        }
    }

    pub fn n_instances(&self) -> usize {
        match self {
            GeneratorConfig::Kp(c) => c.n_instances,
            GeneratorConfig::Wsmc(c) => c.n_instances,
            GeneratorConfig::Toy(c) => c.n_instances,
        }
    }
}

pub fn generate_dataset(cfg: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    match cfg {
        GeneratorConfig::Kp(c) => generate_kp_dataset(c, seed),
        GeneratorConfig::Wsmc(c) => generate_wsmc_dataset(c, seed),
        GeneratorConfig::Toy(c) => generate_toy_dataset(c, seed),
    }
}

/// The shared context-to-mean map.
struct PolyMap {
    rows: Vec<Vec<f64>>,
    degree: i32,
    noise_half_width: f64,
}

impl PolyMap {
    fn new(rng: &mut Rng, n_out: usize, dim_x: usize, degree: u32, noise_half_width: f64) -> Self {
        let coin = Bernoulli::new(0.5).expect("valid probability");
        let rows = (0..n_out)
            .map(|_| {
                (0..dim_x)
                    .map(|_| if coin.sample(rng) { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        Self {
            rows,
            degree: degree as i32,
            noise_half_width,
        }
    }

    fn means(&self, rng: &mut Rng, x: &[f64]) -> Vec<f64> {
        let norm = (x.len() as f64).sqrt();
        let denom = 3.5f64.powi(self.degree);
        self.rows
            .iter()
            .map(|b| {
                let lin: f64 = b.iter().zip(x).map(|(bi, xi)| bi * xi).sum::<f64>() / norm;
                let eta = if self.noise_half_width > 0.0 {
                    rng.random_range(1.0 - self.noise_half_width..=1.0 + self.noise_half_width)
                } else {
                    1.0
                };
                (((lin + 3.0).powi(self.degree) / denom + 1.0) * eta).max(0.0)
            })
            .collect()
    }
}

fn poisson(rng: &mut Rng, mean: f64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng)
}

fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn check_poly(dim_x: usize, degree: u32, noise: f64, n_instances: usize) -> Result<()> {
    if dim_x == 0 {
        return config_err("dim_x must be at least 1");
    }
    if degree == 0 {
        return config_err("degree must be at least 1");
    }
    if !(0.0..=1.0).contains(&noise) {
        return config_err("noise half-width must lie in [0, 1]");
    }
    if n_instances == 0 {
        return config_err("n_instances must be at least 1");
    }
    Ok(())
}

pub fn generate_kp_dataset(cfg: &KpConfig, seed: u64) -> Result<Dataset> {
    check_poly(cfg.dim_x, cfg.degree, cfg.noise_half_width, cfg.n_instances)?;
    if cfg.n_items == 0 {
        return config_err("n_items must be at least 1");
    }
    if !(cfg.scale > 0.0 && cfg.capacity_ratio > 0.0 && cfg.penalty >= 0.0) {
        return config_err("scale and capacity_ratio must be positive, penalty non-negative");
    }
    let mut rng = rng_from(&[domain::DATASET, seed]);
    let n = cfg.n_items;
    let int_dist = Uniform::new_inclusive(3u32, 8u32).expect("valid range");
    let val_dist = Uniform::new_inclusive(1u32, 20u32).expect("valid range");
    let weights: Vec<f64> = (0..n)
        .map(|_| f64::from(int_dist.sample(&mut rng)))
        .collect();
    let values: Vec<f64> = (0..n)
        .map(|_| f64::from(val_dist.sample(&mut rng)))
        .collect();

    let n_out = if cfg.uncertain == Uncertain::Capacity {
        1
    } else {
        n
    };
    let map = PolyMap::new(&mut rng, n_out, cfg.dim_x, cfg.degree, cfg.noise_half_width);
    let total_weight: f64 = weights.iter().sum();
    // A polynomial mean of 2 maps to capacity_ratio * total weight.
    let cap_scale = cfg.capacity_ratio * total_weight / 2.0;

    let instances: Vec<Instance> = (0..cfg.n_instances)
        .map(|_| {
            let x = normal_vec(&mut rng, cfg.dim_x);
            let mu = map.means(&mut rng, &x);
            let y = match cfg.uncertain {
                Uncertain::Capacity => vec![poisson(&mut rng, mu[0] * cap_scale)],
                _ => mu
                    .iter()
                    .map(|&m| poisson(&mut rng, m * cfg.scale))
                    .collect(),
            };
            Instance { x, y }
        })
        .collect();

    let capacity = match cfg.uncertain {
        Uncertain::Weights => {
            let mean_total: f64 = instances
                .iter()
                .map(|i| i.y.iter().sum::<f64>())
                .sum::<f64>()
                / instances.len() as f64;
            (cfg.capacity_ratio * mean_total).round()
        }
        _ => (cfg.capacity_ratio * total_weight).round(),
    };

    let problem = ProblemSpec {
        family: GeneratorConfig::Kp(cfg.clone()).family(),
        dim_x: cfg.dim_x,
        dim_y: n_out,
        penalty: cfg.penalty,
        data: FixedData::Knapsack {
            values,
            weights,
            capacity,
        },
    };
    Dataset::new(GeneratorConfig::Kp(cfg.clone()), seed, problem, instances)
}

pub fn generate_wsmc_dataset(cfg: &WsmcConfig, seed: u64) -> Result<Dataset> {
    check_poly(cfg.dim_x, cfg.degree, cfg.noise_half_width, cfg.n_instances)?;
    if cfg.n_items == 0 {
        return config_err("n_items must be at least 1");
    }
    if cfg.n_sets < cfg.n_items {
        return config_err(format!(
            "n_sets ({}) must be at least n_items ({})",
            cfg.n_sets, cfg.n_items
        ));
    }
    if !(0.0 < cfg.density_min && cfg.density_min <= cfg.density_max && cfg.density_max <= 1.0) {
        return config_err("density range must satisfy 0 < min <= max <= 1");
    }
    if !(0.0 <= cfg.cost_min && cfg.cost_min <= cfg.cost_max) || !(cfg.demand_scale > 0.0) {
        return config_err("invalid cost range or demand scale");
    }
    let mut rng = rng_from(&[domain::DATASET, seed]);
    let (items, sets) = (cfg.n_items, cfg.n_sets);

    let mut availability = vec![vec![0u8; sets]; items];
    for row in availability.iter_mut() {
        let density = rng.random_range(cfg.density_min..=cfg.density_max);
        let k = ((density * sets as f64).round() as usize).clamp(2.min(sets), sets);
        for j in rand::seq::index::sample(&mut rng, sets, k) {
            row[j] = 1;
        }
    }
    // Post-pass: no set may be empty.
    for j in 0..sets {
        if availability.iter().all(|row| row[j] == 0) {
            let i = rng.random_range(0..items);
            availability[i][j] = 1;
        }
    }
    let costs: Vec<f64> = (0..sets)
        .map(|_| rng.random_range(cfg.cost_min..=cfg.cost_max))
        .collect();
    let coverage: Vec<f64> = availability
        .iter()
        .map(|row| row.iter().filter(|&&a| a != 0).count() as f64)
        .collect();

    let map = PolyMap::new(&mut rng, items, cfg.dim_x, cfg.degree, cfg.noise_half_width);
    let instances = (0..cfg.n_instances)
        .map(|_| {
            let x = normal_vec(&mut rng, cfg.dim_x);
            let mu = map.means(&mut rng, &x);
            let y = mu
                .iter()
                .zip(&coverage)
                .map(|(&m, &cov)| poisson(&mut rng, m * cfg.demand_scale).max(1.0).min(cov))
                .collect();
            Instance { x, y }
        })
        .collect();

    let problem = ProblemSpec {
        family: Family::Wsmc,
        dim_x: cfg.dim_x,
        dim_y: items,
        penalty: cfg.penalty,
        data: FixedData::Wsmc {
            availability,
            costs,
        },
    };
    Dataset::new(GeneratorConfig::Wsmc(cfg.clone()), seed, problem, instances)
}

pub fn generate_toy_dataset(cfg: &ToyConfig, seed: u64) -> Result<Dataset> {
    if cfg.dim_y == 0 || cfg.dim_x == 0 || cfg.n_instances == 0 {
        return config_err("dim_y, dim_x and n_instances must be positive");
    }
    if !(cfg.step_height > 0.0 && cfg.step_length > 0.0) {
        return config_err("step height and step length must be positive");
    }
    let mut rng = rng_from(&[domain::DATASET, seed]);
    let weights: Vec<Vec<f64>> = (0..cfg.dim_y)
        .map(|_| (0..cfg.dim_x).map(|_| rng.random::<f64>()).collect())
        .collect();
    let instances = (0..cfg.n_instances)
        .map(|_| {
            let x = normal_vec(&mut rng, cfg.dim_x);
            let y = toy_map(&weights, &x);
            Instance { x, y }
        })
        .collect();
    let problem = ProblemSpec {
        family: Family::Toy,
        dim_x: cfg.dim_x,
        dim_y: cfg.dim_y,
        penalty: 0.0,
        data: FixedData::Toy {
            weights,
            step_height: cfg.step_height,
            step_length: cfg.step_length,
        },
    };
    Dataset::new(GeneratorConfig::Toy(cfg.clone()), seed, problem, instances)
}

pub(crate) fn toy_map(weights: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .map(|row| row.iter().zip(x).map(|(w, xi)| w * xi).sum())
        .collect()
}
