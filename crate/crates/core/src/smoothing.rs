//! Stochastic smoothing of regret from archived samples.
//!
//! Every stored sample remembers the density it was drawn from. The smoothed
//! regret at `y_hat` is then a self-normalized importance-sampling average of
//! the archived regrets, with the mixture of all origin densities as proposal.
//! All density arithmetic happens in log space.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::predictor::NormStats;
use crate::rng::Rng;

/// Floor applied to the proposal density before dividing by it.
pub const DENSITY_FLOOR: f64 = 1e-300;
/// Normalized weights below this fraction of the largest weight are dropped.
pub const WEIGHT_CUTOFF: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Axis-aligned box `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(ForgeError::Shape {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !l.is_finite() || !u.is_finite() || u <= l)
        {
            return Err(ForgeError::Config(
                "box bounds must be finite with upper > lower".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    /// Per-dimension range of `rows`, widened by `inflate` of the range in
    /// total (half on each side). Flat dimensions get a unit-width box.
    pub fn around<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize, inflate: f64) -> Self {
        let mut lower = vec![f64::INFINITY; dim];
        let mut upper = vec![f64::NEG_INFINITY; dim];
        for r in rows {
            for ((l, u), &v) in lower.iter_mut().zip(upper.iter_mut()).zip(r) {
                *l = l.min(v);
                *u = u.max(v);
            }
        }
        for (l, u) in lower.iter_mut().zip(upper.iter_mut()) {
            if !l.is_finite() || !u.is_finite() {
                *l = -0.5;
                *u = 0.5;
                continue;
            }
            let pad = if *u > *l {
                0.5 * inflate * (*u - *l)
            } else {
                0.5
            };
            *l -= pad;
            *u += pad;
        }
        Self { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((v, l), u)| *v >= *l && *v <= *u)
    }

    /// Log of the uniform density on the box; `-inf` outside.
    pub fn log_density(&self, p: &[f64]) -> f64 {
        if !self.contains(p) {
            return f64::NEG_INFINITY;
        }
        -self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l).ln())
            .sum::<f64>()
    }
}

/// The distribution a stored sample was drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    /// Normal with the given mean; `sigma` holds one entry (isotropic) or one
    /// per dimension.
    Normal { mean: Vec<f64>, sigma: Vec<f64> },
    /// Uniform on the pretraining box.
    Lhs,
}

impl Origin {
    pub fn log_density(&self, p: &[f64], lhs_box: &Bounds) -> f64 {
        match self {
            Origin::Normal { mean, sigma } => log_normal_density(p, mean, sigma),
            Origin::Lhs => lhs_box.log_density(p),
        }
    }
}

/// Log density of `N(mean, diag(sigma^2))` at `p`; a single-entry `sigma` is
/// broadcast.
pub fn log_normal_density(p: &[f64], mean: &[f64], sigma: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (k, (x, m)) in p.iter().zip(mean).enumerate() {
        let s = if sigma.len() == 1 { sigma[0] } else { sigma[k] };
        let z = (x - m) / s;
        acc += -0.5 * z * z - s.ln() - 0.5 * LN_2PI;
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSample {
    pub y_hat: Vec<f64>,
    pub regret: f64,
    pub origin: Origin,
    /// Example the sample was donated from, if it is not an own sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub donor: Option<usize>,
}

impl RegretSample {
    pub fn own(y_hat: Vec<f64>, regret: f64, origin: Origin) -> Self {
        Self {
            y_hat,
            regret,
            origin,
            donor: None,
        }
    }
}

/// Regret standardization shared by all surrogates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetStats {
    pub mean: f64,
    pub std: f64,
}

impl TargetStats {
    pub fn from_values(values: impl Iterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.collect();
        if v.is_empty() {
            return Self {
                mean: 0.0,
                std: 1.0,
            };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn standardize(&self, r: f64) -> f64 {
        (r - self.mean) / self.std
    }

    pub fn unstandardize(&self, t: f64) -> f64 {
        t * self.std + self.mean
    }
}

/// Archived samples of every training example plus the statistics used to
/// normalize surrogate inputs and standardize their targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBank {
    pub examples: Vec<Vec<RegretSample>>,
    pub lhs_box: Bounds,
    pub input_stats: NormStats,
    /// `None` until enough regrets are known to estimate it.
    pub target_stats: Option<TargetStats>,
}

impl SampleBank {
    pub fn new(n_examples: usize, lhs_box: Bounds, input_stats: NormStats) -> Self {
        Self {
            examples: vec![Vec::new(); n_examples],
            lhs_box,
            input_stats,
            target_stats: None,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One JSON object per line: `{example_id, y_hat, regret, origin}`.
    pub fn dump_jsonl(&self, mut w: impl Write) -> Result<()> {
        for (id, samples) in self.examples.iter().enumerate() {
            for s in samples {
                let line = serde_json::json!({
                    "example_id": id,
                    "y_hat": s.y_hat,
                    "regret": s.regret,
                    "origin": s.origin,
                });
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }
}

/// Counts numerical events that callers may want to report.
#[derive(Debug, Default)]
pub struct Diagnostics {
    pub weight_underflows: AtomicU64,
    pub low_confidence: AtomicU64,
}

impl Diagnostics {
    pub fn underflows(&self) -> u64 {
        self.weight_underflows.load(Ordering::Relaxed)
    }

    pub fn low_confidence_count(&self) -> u64 {
        self.low_confidence.load(Ordering::Relaxed)
    }
}

/// Number of pretraining probes: `max(8, ceil(8 * log2(dim_y + 1)))`.
pub fn pretrain_count(dim_y: usize) -> usize {
    let raw = 8.0 * ((dim_y + 1) as f64).log2();
    // Exact powers of two must not round up through representation error.
    let n = (raw - 1e-9).ceil() as usize;
    n.max(8)
}

/// Latin hypercube sample of `n` points in `bounds`: each dimension is split
/// into `n` equal strata and every stratum receives exactly one point.
pub fn lhs_sample(bounds: &Bounds, n: usize, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(ForgeError::Config("LHS needs at least one point".into()));
    }
    let dim = bounds.dim();
    let mut points = vec![vec![0.0; dim]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for d in 0..dim {
        strata.shuffle(rng);
        let (lo, width) = (bounds.lower[d], bounds.upper[d] - bounds.lower[d]);
        for (p, &s) in points.iter_mut().zip(&strata) {
            let u: f64 = rng.random();
            p[d] = lo + width * (s as f64 + u) / n as f64;
        }
    }
    Ok(points)
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Log of the aggregated proposal density `q(p) = mean_k q_k(p)`.
pub fn log_aggregated_density(
    samples: &[RegretSample],
    lhs_box: &Bounds,
    p: &[f64],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(ForgeError::EmptyBank);
    }
    let logs: Vec<f64> = samples
        .iter()
        .map(|s| s.origin.log_density(p, lhs_box))
        .collect();
    Ok(log_sum_exp(&logs) - (samples.len() as f64).ln())
}

pub fn aggregated_density(samples: &[RegretSample], lhs_box: &Bounds, p: &[f64]) -> Result<f64> {
    Ok(log_aggregated_density(samples, lhs_box, p)?.exp())
}

/// `phi(y_prime; y_hat, sigma) / q(y_prime)` for the bank's proposal `q`.
pub fn importance_weight(
    y_hat: &[f64],
    y_prime: &[f64],
    sigma: f64,
    samples: &[RegretSample],
    lhs_box: &Bounds,
    diag: &Diagnostics,
) -> Result<f64> {
    let log_q = log_aggregated_density(samples, lhs_box, y_prime)?;
    Ok(log_weight(y_hat, y_prime, sigma, log_q, diag).exp())
}

fn log_weight(y_hat: &[f64], y_prime: &[f64], sigma: f64, log_q: f64, diag: &Diagnostics) -> f64 {
    if log_q == f64::NEG_INFINITY {
        diag.weight_underflows.fetch_add(1, Ordering::Relaxed);
        return f64::NEG_INFINITY;
    }
    log_normal_density(y_prime, y_hat, &[sigma]) - log_q.max(DENSITY_FLOOR.ln())
}

/// Result of a smoothed-regret query.
#[derive(Debug, Clone, PartialEq)]
pub struct Smoothed {
    pub value: f64,
    /// Sum of the normalized weights actually used.
    pub weight_sum: f64,
    /// Set when every weight vanished and the nearest sample was used.
    pub low_confidence: bool,
}

/// Normalize log weights to sum to 1, dropping negligible ones. `None` when
/// every weight is zero.
fn normalize(log_w: &[f64]) -> Option<Vec<f64>> {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = log_w
        .iter()
        .map(|&l| {
            let r = (l - m).exp();
            if r < WEIGHT_CUTOFF {
                0.0
            } else {
                r
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Some(w)
}

/// Normalized importance weights of every sample for a query at `y_hat`.
pub fn normalized_weights(
    y_hat: &[f64],
    sigma: f64,
    samples: &[RegretSample],
    lhs_box: &Bounds,
    diag: &Diagnostics,
) -> Result<Option<Vec<f64>>> {
    let log_q = proposal_log_densities(samples, lhs_box)?;
    Ok(normalize(&query_log_weights(
        y_hat, sigma, samples, &log_q, diag,
    )))
}

fn proposal_log_densities(samples: &[RegretSample], lhs_box: &Bounds) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(ForgeError::EmptyBank);
    }
    samples
        .iter()
        .map(|s| log_aggregated_density(samples, lhs_box, &s.y_hat))
        .collect()
}

fn query_log_weights(
    y_hat: &[f64],
    sigma: f64,
    samples: &[RegretSample],
    log_q: &[f64],
    diag: &Diagnostics,
) -> Vec<f64> {
    samples
        .iter()
        .zip(log_q)
        .map(|(s, &lq)| log_weight(y_hat, &s.y_hat, sigma, lq, diag))
        .collect()
}

fn combine(
    y_hat: &[f64],
    samples: &[RegretSample],
    weights: Option<Vec<f64>>,
    diag: &Diagnostics,
) -> Smoothed {
    match weights {
        Some(w) => Smoothed {
            value: w.iter().zip(samples).map(|(w, s)| w * s.regret).sum(),
            weight_sum: w.iter().sum(),
            low_confidence: false,
        },
        None => {
            diag.low_confidence.fetch_add(1, Ordering::Relaxed);
            let nearest = samples
                .iter()
                .min_by(|a, b| sq_dist(&a.y_hat, y_hat).total_cmp(&sq_dist(&b.y_hat, y_hat)))
                .expect("non-empty bank");
            Smoothed {
                value: nearest.regret,
                weight_sum: 0.0,
                low_confidence: true,
            }
        }
    }
}

/// Self-normalized importance-sampling estimate of
/// `E[r(y')], y' ~ N(y_hat, sigma^2 I)` from the archived samples.
pub fn smoothed_regret(
    y_hat: &[f64],
    sigma: f64,
    samples: &[RegretSample],
    lhs_box: &Bounds,
    diag: &Diagnostics,
) -> Result<Smoothed> {
    let w = normalized_weights(y_hat, sigma, samples, lhs_box, diag)?;
    Ok(combine(y_hat, samples, w, diag))
}

/// Smoothed regret at every sample location of the bank; the proposal
/// densities are shared across queries.
pub fn smoothed_targets(
    sigma: f64,
    samples: &[RegretSample],
    lhs_box: &Bounds,
    diag: &Diagnostics,
) -> Result<Vec<Smoothed>> {
    let log_q = proposal_log_densities(samples, lhs_box)?;
    Ok(samples
        .iter()
        .map(|s| {
            let lw = query_log_weights(&s.y_hat, sigma, samples, &log_q, diag);
            combine(&s.y_hat, samples, normalize(&lw), diag)
        })
        .collect())
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn unit_box(dim: usize) -> Bounds {
        Bounds::new(vec![-10.0; dim], vec![10.0; dim]).unwrap()
    }

    fn normal(mean: Vec<f64>, sigma: f64) -> Origin {
        Origin::Normal {
            mean,
            sigma: vec![sigma],
        }
    }

    #[test]
    fn count_rule() {
        assert_eq!(pretrain_count(1), 8);
        assert_eq!(pretrain_count(63), 48);
        assert_eq!(pretrain_count(50), 46);
        assert_eq!(pretrain_count(64), 49);
        assert_eq!(pretrain_count(10), 28);
    }

    #[test]
    fn lhs_one_point_per_stratum() {
        let b = Bounds::new(vec![0.0], vec![4.0]).unwrap();
        let pts = lhs_sample(&b, 4, &mut rng_from(&[3])).unwrap();
        let mut cells: Vec<usize> = pts.iter().map(|p| p[0].floor() as usize).collect();
        cells.sort();
        assert_eq!(cells, vec![0, 1, 2, 3]);
    }

    #[test]
    fn lhs_single_point_inside_box() {
        let b = Bounds::new(vec![-1.0, 2.0], vec![1.0, 5.0]).unwrap();
        let pts = lhs_sample(&b, 1, &mut rng_from(&[0])).unwrap();
        assert_eq!(pts.len(), 1);
        assert!(b.contains(&pts[0]));
        assert!(lhs_sample(&b, 0, &mut rng_from(&[0])).is_err());
    }

    #[test]
    fn box_around_inflates() {
        let rows = [vec![0.0, 1.0], vec![10.0, 1.0]];
        let b = Bounds::around(rows.iter().map(|r| r.as_slice()), 2, 0.2);
        assert_eq!(b.lower, vec![-1.0, 0.5]);
        assert_eq!(b.upper, vec![11.0, 1.5]);
    }

    #[test]
    fn standard_normal_mode_density() {
        let s = [RegretSample::own(vec![0.0], 0.0, normal(vec![0.0], 1.0))];
        let q = aggregated_density(&s, &unit_box(1), &[0.0]).unwrap();
        assert!((q - 0.398_942_280_401_432_7).abs() < 1e-12);
    }

    #[test]
    fn identical_origins_average_to_one() {
        let one = [RegretSample::own(vec![0.3], 1.0, normal(vec![0.2], 0.7))];
        let two = [one[0].clone(), one[0].clone()];
        let b = unit_box(1);
        let a = aggregated_density(&one, &b, &[0.9]).unwrap();
        let c = aggregated_density(&two, &b, &[0.9]).unwrap();
        assert!((a - c).abs() < 1e-15);
    }

    #[test]
    fn mixed_bank_matches_direct_sum() {
        let b = Bounds::new(vec![-2.0, -2.0], vec![2.0, 3.0]).unwrap();
        let s = vec![
            RegretSample::own(vec![0.0, 0.0], 1.0, normal(vec![0.1, -0.2], 0.5)),
            RegretSample::own(vec![1.0, 0.0], 2.0, Origin::Lhs),
            RegretSample::own(vec![0.0, 1.0], 3.0, normal(vec![1.0, 1.0], 2.0)),
        ];
        let p = [0.4, 0.6];
        let phi = |m: [f64; 2], sd: f64| {
            let d2 = (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2);
            (-d2 / (2.0 * sd * sd)).exp() / (2.0 * std::f64::consts::PI * sd * sd)
        };
        let expected = (phi([0.1, -0.2], 0.5) + 1.0 / 20.0 + phi([1.0, 1.0], 2.0)) / 3.0;
        let got = aggregated_density(&s, &b, &p).unwrap();
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
    }

    #[test]
    fn empty_bank_is_error() {
        assert!(aggregated_density(&[], &unit_box(1), &[0.0]).is_err());
        assert!(smoothed_regret(&[0.0], 0.1, &[], &unit_box(1), &Diagnostics::default()).is_err());
    }

    #[test]
    fn weight_is_one_when_target_equals_proposal() {
        let yh = vec![0.5, -0.5];
        let s = [RegretSample::own(
            vec![0.8, -0.1],
            4.0,
            normal(yh.clone(), 0.3),
        )];
        let w = importance_weight(
            &yh,
            &s[0].y_hat,
            0.3,
            &s,
            &unit_box(2),
            &Diagnostics::default(),
        )
        .unwrap();
        assert!((w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn far_sample_has_negligible_weight() {
        let s = [RegretSample::own(vec![0.0], 1.0, Origin::Lhs)];
        let w = importance_weight(
            &[8.0],
            &[0.0],
            0.5,
            &s,
            &unit_box(1),
            &Diagnostics::default(),
        )
        .unwrap();
        assert!(w < 1e-50);
    }

    #[test]
    fn three_sample_weight_by_hand() {
        let s = vec![
            RegretSample::own(vec![0.0], 1.0, normal(vec![0.0], 1.0)),
            RegretSample::own(vec![1.0], 2.0, normal(vec![1.0], 0.5)),
            RegretSample::own(vec![-1.0], 3.0, Origin::Lhs),
        ];
        let pdf = |x: f64, m: f64, sd: f64| {
            (-(x - m).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
        };
        let yp = 1.0;
        let q = (pdf(yp, 0.0, 1.0) + pdf(yp, 1.0, 0.5) + 1.0 / 20.0) / 3.0;
        let expected = pdf(yp, 0.2, 0.4) / q;
        let got = importance_weight(
            &[0.2],
            &[yp],
            0.4,
            &s,
            &unit_box(1),
            &Diagnostics::default(),
        )
        .unwrap();
        assert!((got - expected).abs() < 1e-12 * expected.max(1.0));
    }

    #[test]
    fn underflow_is_counted() {
        let narrow = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let s = [RegretSample::own(vec![5.0], 1.0, Origin::Lhs)];
        let diag = Diagnostics::default();
        let w = importance_weight(&[5.0], &[5.0], 1.0, &s, &narrow, &diag).unwrap();
        assert_eq!(w, 0.0);
        assert_eq!(diag.underflows(), 1);
    }

    #[test]
    fn single_sample_returns_its_regret() {
        let s = [RegretSample::own(vec![0.4], 3.0, normal(vec![0.0], 1.0))];
        let r = smoothed_regret(&[0.0], 0.5, &s, &unit_box(1), &Diagnostics::default()).unwrap();
        assert!((r.value - 3.0).abs() < 1e-12);
        assert!((r.weight_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_averages() {
        let s = [
            RegretSample::own(vec![-1.0], 1.0, Origin::Lhs),
            RegretSample::own(vec![1.0], 3.0, Origin::Lhs),
        ];
        let r = smoothed_regret(&[0.0], 0.7, &s, &unit_box(1), &Diagnostics::default()).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_weights_fall_back_to_nearest() {
        let narrow = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let s = [
            RegretSample::own(vec![5.0], 1.0, Origin::Lhs),
            RegretSample::own(vec![7.0], 9.0, Origin::Lhs),
        ];
        let diag = Diagnostics::default();
        let r = smoothed_regret(&[6.5], 0.1, &s, &narrow, &diag).unwrap();
        assert!(r.low_confidence);
        assert_eq!(r.value, 9.0);
        assert_eq!(diag.low_confidence_count(), 1);
    }

    #[test]
    fn batched_targets_match_single_queries() {
        let mut rng = rng_from(&[12]);
        let b = unit_box(3);
        let s: Vec<RegretSample> = (0..30)
            .map(|k| {
                let p: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let origin = if k % 3 == 0 {
                    Origin::Lhs
                } else {
                    normal(vec![0.0; 3], 1.5)
                };
                RegretSample::own(p, k as f64, origin)
            })
            .collect();
        let diag = Diagnostics::default();
        let batch = smoothed_targets(0.8, &s, &b, &diag).unwrap();
        for (t, smp) in batch.iter().zip(&s) {
            let single = smoothed_regret(&smp.y_hat, 0.8, &s, &b, &diag).unwrap();
            assert!((t.value - single.value).abs() < 1e-12);
        }
    }

    #[test]
    fn jsonl_dump_has_one_line_per_sample() {
        let mut bank = SampleBank::new(
            2,
            unit_box(1),
            NormStats {
                mean: vec![0.0],
                std: vec![1.0],
            },
        );
        bank.examples[1].push(RegretSample::own(vec![0.5], 2.0, Origin::Lhs));
        bank.examples[1].push(RegretSample::own(vec![0.1], 1.0, normal(vec![0.0], 0.1)));
        let mut out = Vec::new();
        bank.dump_jsonl(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(v["example_id"], 1);
        assert_eq!(v["origin"]["kind"], "lhs");
    }
}
