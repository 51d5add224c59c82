use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Family, GeneratorConfig, ProblemSpec};
use crate::error::{config_err, Result};
use crate::rng::{domain, rng_from};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Disjoint, exhaustive train/validation/test partition of instance indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded 80/10/10 partition.
    pub fn new(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng_from(&[domain::SPLIT, seed]));
        let n_train = (n as f64 * 0.8).round() as usize;
        let n_val = ((n as f64 * 0.1).round() as usize).min(n - n_train);
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        Self {
            train: idx,
            val,
            test,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n || seen[i] {
                return config_err("split indices must be a partition of the instances");
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return config_err("split does not cover every instance");
        }
        Ok(())
    }
}

/// A generated benchmark dataset. Serialized as JSON with fields
/// `family, config, seed, problem, instances, split`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub family: Family,
    pub config: GeneratorConfig,
    pub seed: u64,
    pub problem: ProblemSpec,
    pub instances: Vec<Instance>,
    pub split: Split,
}

impl Dataset {
    pub(crate) fn new(
        config: GeneratorConfig,
        seed: u64,
        problem: ProblemSpec,
        instances: Vec<Instance>,
    ) -> Result<Self> {
        let split = Split::new(instances.len(), seed);
        let ds = Self {
            family: config.family(),
            config,
            seed,
            problem,
            instances,
            split,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        if self.family != self.problem.family {
            return config_err("dataset family does not match its problem");
        }
        for inst in &self.instances {
            if inst.x.len() != self.problem.dim_x || inst.y.len() != self.problem.dim_y {
                return config_err("instance dimensions do not match the problem");
            }
        }
        self.split.validate(self.instances.len())
    }

    pub fn dim_x(&self) -> usize {
        self.problem.dim_x
    }

    pub fn dim_y(&self) -> usize {
        self.problem.dim_y
    }

    pub fn subset<'a>(&'a self, idx: &'a [usize]) -> impl Iterator<Item = &'a Instance> + 'a {
        idx.iter().map(move |&i| &self.instances[i])
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ds: Dataset = serde_json::from_str(&text)?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        format!(
            "{}: {} instances, dim_x={}, dim_y={}, split train/val/test = {}/{}/{}",
            self.family,
            self.instances.len(),
            self.dim_x(),
            self.dim_y(),
            self.split.train.len(),
            self.split.val.len(),
            self.split.test.len()
        )
    }
}
