//! 0-1 knapsack by dynamic programming over integerized weights.

use crate::error::{ForgeError, Result};

/// Weights and capacity are multiplied by this factor and rounded before the DP.
pub const WEIGHT_SCALE: f64 = 1000.0;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Maximize `values . z` subject to `weights . z <= capacity`, `z` binary.
///
/// Among optimal selections the lexicographically smallest `z` is returned
/// (an item is left out whenever leaving it out is still optimal). Inputs are
/// expected non-negative; weights are scaled by [`WEIGHT_SCALE`] and rounded,
/// then divided by their common divisor, which leaves the feasible set
/// unchanged.
pub fn solve(values: &[f64], weights: &[f64], capacity: f64) -> Result<Vec<f64>> {
    let n = values.len();
    if weights.len() != n {
        return Err(ForgeError::Shape {
            expected: n,
            got: weights.len(),
        });
    }
    if values.iter().chain(weights).any(|v| !v.is_finite()) || capacity.is_nan() {
        return Err(ForgeError::NonFinite("knapsack parameters"));
    }

    let mut w: Vec<u64> = weights
        .iter()
        .map(|&wi| (wi.max(0.0) * WEIGHT_SCALE).round() as u64)
        .collect();
    let total: u64 = w.iter().sum();
    let mut cap = ((capacity.max(0.0) * WEIGHT_SCALE).round() as u64).min(total);

    let g = w.iter().fold(0, |acc, &wi| gcd(acc, wi));
    if g > 1 {
        w.iter_mut().for_each(|wi| *wi /= g);
        cap /= g;
    }
    let cap = usize::try_from(cap)
        .map_err(|_| ForgeError::Solver("knapsack capacity too large".into()))?;
    let width = cap + 1;

    // best[c]: optimum over items j.. with capacity c; items are added from
    // the last to the first so reconstruction can run forward.
    let mut best = vec![0.0f64; width];
    let mut take = vec![0u64; (n * width).div_ceil(64)];
    for j in (0..n).rev() {
        let wj = w[j] as usize;
        let vj = values[j];
        if vj <= 0.0 || wj > cap {
            continue;
        }
        let row = j * width;
        for c in (wj..width).rev() {
            let cand = best[c - wj] + vj;
            if cand > best[c] {
                best[c] = cand;
                let bit = row + c;
                take[bit / 64] |= 1 << (bit % 64);
            }
        }
    }

    let mut z = vec![0.0; n];
    let mut c = cap;
    for (j, zj) in z.iter_mut().enumerate() {
        let bit = j * width + c;
        if take[bit / 64] & (1 << (bit % 64)) != 0 {
            *zj = 1.0;
            c -= w[j] as usize;
        }
    }
    Ok(z)
}
