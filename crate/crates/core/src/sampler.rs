//! Smoothed empirical item distributions and O(1) categorical sampling.
//!
//! [`build_distribution`] raises per-item counts to a fractional power gamma
//! and renormalizes: gamma = 1 keeps the empirical distribution, gamma = 0
//! flattens it to uniform. [`AliasTable`] preprocesses a distribution into
//! paired (probability, alias) tables so a draw costs one uniform index and
//! one uniform real. [`sample_negatives`] layers rejection on top to produce
//! duplicate-free negative sets that avoid an exclusion set.

use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

/// Item distribution obtained by raising counts to the power `gamma` and
/// renormalizing.
#[derive(Debug, Clone)]
pub struct SampledDistribution {
    gamma: f64,
    probs: Vec<f64>,
}

impl SampledDistribution {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Number of items with positive probability.
    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|&&p| p > 0.0).count()
    }
}

/// probs[i] = counts[i]^gamma / sum_j counts[j]^gamma.
///
/// gamma = 0 yields the uniform distribution over the whole vocabulary
/// (0^0 taken as 1), gamma = 1 the exact normalized counts; both edge cases
/// bypass `powf` so they are exact.
pub fn build_distribution(counts: &[u64], gamma: f64) -> Result<SampledDistribution> {
    if counts.is_empty() {
        return Err(Error::InvalidArg("build_distribution: empty counts".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidArg(format!("gamma {gamma} outside [0, 1]")));
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::InvalidArg(
            "build_distribution: all counts zero".into(),
        ));
    }

    let weights: Vec<f64> = if gamma == 0.0 {
        vec![1.0; counts.len()]
    } else if gamma == 1.0 {
        counts.iter().map(|&c| c as f64).collect()
    } else {
        counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { (c as f64).powf(gamma) })
            .collect()
    };
    let total: f64 = weights.iter().sum();
    let probs = weights.into_iter().map(|w| w / total).collect();
    Ok(SampledDistribution { gamma, probs })
}

/// Alias method tables: a draw picks a uniform slot `i`, then returns `i`
/// with probability `prob[i]` and `alias[i]` otherwise.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

/// Builds alias tables with the two-worklist (small/large) construction in
/// O(n).
pub fn build_alias(dist: &SampledDistribution) -> AliasTable {
    let n = dist.len();
    let mut scaled: Vec<f64> = dist.probs().iter().map(|&p| p * n as f64).collect();
    let mut prob = vec![1.0; n];
    let mut alias: Vec<usize> = (0..n).collect();

    let mut small: Vec<usize> = Vec::new();
    let mut large: Vec<usize> = Vec::new();
    for (i, &s) in scaled.iter().enumerate() {
        if s < 1.0 {
            small.push(i);
        } else {
            large.push(i);
        }
    }

    while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
        small.pop();
        large.pop();
        prob[s] = scaled[s];
        alias[s] = l;
        scaled[l] -= 1.0 - scaled[s];
        if scaled[l] < 1.0 {
            small.push(l);
        } else {
            large.push(l);
        }
    }
    // Leftovers in either list sit at (numerically) full slots.
    for &i in small.iter().chain(large.iter()) {
        prob[i] = 1.0;
        alias[i] = i;
    }

    AliasTable { prob, alias }
}

impl AliasTable {
    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn prob(&self) -> &[f64] {
        &self.prob
    }

    pub fn alias(&self) -> &[usize] {
        &self.alias
    }

    /// One draw: exactly one uniform index and one uniform real.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        let i = rng.random_range(0..self.prob.len());
        let u: f64 = rng.random();
        if u < self.prob[i] {
            i
        } else {
            self.alias[i]
        }
    }

    /// Probability the table assigns to `i` under its own sampling scheme;
    /// used by the reconstruction-invariant tests.
    pub fn reconstructed_prob(&self, i: usize) -> f64 {
        let n = self.prob.len() as f64;
        let mut p = self.prob[i];
        for (j, &a) in self.alias.iter().enumerate() {
            if a == i && j != i {
                p += 1.0 - self.prob[j];
            }
        }
        p / n
    }
}

/// Draws `k` distinct item indices from `table`, none of them in `exclude`,
/// by rejection sampling. Gives up with an error after `1000 * k` attempts.
pub fn sample_negatives(
    table: &AliasTable,
    k: usize,
    exclude: &HashSet<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(k);
    let mut seen: HashSet<usize> = HashSet::with_capacity(k * 2);
    let max_attempts = 1000usize.saturating_mul(k.max(1));
    let mut attempts = 0;
    while out.len() < k {
        if attempts >= max_attempts {
            return Err(Error::Infeasible(format!(
                "could not draw {k} negatives (got {}) after {attempts} attempts; \
                 exclusion set of {} may cover the support",
                out.len(),
                exclude.len()
            )));
        }
        attempts += 1;
        let item = table.sample(rng);
        if exclude.contains(&item) || seen.contains(&item) {
            continue;
        }
        seen.insert(item);
        out.push(item);
    }
    Ok(out)
}
