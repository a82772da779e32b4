//! Descriptive statistics and the one-tailed Mann-Whitney U test.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest `n·m` handled by exact enumeration.
pub const EXACT_LIMIT: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MannWhitney {
    /// Pairs with `x > y`, ties counting one half.
    pub u: f64,
    /// `P(U ≤ u)` under the null; small when `x` tends to be smaller than `y`.
    pub p: f64,
    pub exact: bool,
}

fn check(x: &[f64], y: &[f64]) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("Mann-Whitney U needs two nonempty samples"));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::invalid("Mann-Whitney U samples contain NaN"));
    }
    Ok(())
}

pub fn u_statistic(x: &[f64], y: &[f64]) -> f64 {
    let mut u = 0.0;
    for a in x {
        for b in y {
            if a > b {
                u += 1.0;
            } else if a == b {
                u += 0.5;
            }
        }
    }
    u
}

/// Midranks (1-based) of the pooled sample and the tie group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Exact null distribution of U over every equally likely assignment of the
/// pooled values to the first sample, with ties at midranks.
pub fn mann_whitney_u_exact(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    check(x, y)?;
    let n = x.len();
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, _) = midranks(&pooled);
    // doubled midranks are integers
    let r2: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = r2.iter().sum();
    // counts[k][s]: subsets of size k with doubled rank sum s
    let mut counts = vec![vec![0f64; max_sum + 1]; n + 1];
    counts[0][0] = 1.0;
    for (seen, &r) in r2.iter().enumerate() {
        for k in (1..=n.min(seen + 1)).rev() {
            let (lo, hi) = counts.split_at_mut(k);
            for s in (r..=max_sum).rev() {
                hi[0][s] += lo[k - 1][s - r];
            }
        }
    }
    let total: f64 = counts[n].iter().sum();
    let u = u_statistic(x, y);
    // U = R_x − n(n+1)/2, so 2U + n(n+1) is the doubled rank sum
    let obs = (2.0 * u).round() as usize + n * (n + 1);
    let below: f64 = counts[n][..=obs.min(max_sum)].iter().sum();
    Ok(MannWhitney {
        u,
        p: (below / total).min(1.0),
        exact: true,
    })
}

/// Normal approximation with tie-corrected variance and continuity correction.
pub fn mann_whitney_u_normal(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    check(x, y)?;
    let (n, m) = (x.len() as f64, y.len() as f64);
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (_, ties) = midranks(&pooled);
    let big_n = n + m;
    let tie_sum: f64 = ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum();
    let var = if big_n > 1.0 {
        n * m / 12.0 * ((big_n + 1.0) - tie_sum / (big_n * (big_n - 1.0)))
    } else {
        0.0
    };
    let u = u_statistic(x, y);
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = (u - n * m / 2.0 + 0.5) / var.sqrt();
        Normal::standard().cdf(z)
    };
    Ok(MannWhitney { u, p, exact: false })
}

/// One-tailed test of `x` being stochastically smaller than `y`: exact for
/// `n·m ≤ 64`, normal approximation otherwise.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    check(x, y)?;
    if x.len() * y.len() <= EXACT_LIMIT {
        mann_whitney_u_exact(x, y)
    } else {
        mann_whitney_u_normal(x, y)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1 denominator).
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return f64::NAN;
    }
    let mu = mean(v);
    (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len() / 2;
    if s.len() % 2 == 1 {
        s[k]
    } else {
        0.5 * (s[k - 1] + s[k])
    }
}
