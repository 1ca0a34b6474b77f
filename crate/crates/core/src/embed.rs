//! Skip-gram item embeddings with negative sampling.
//!
//! Sequences are a user's raw, temporally ordered action stream (duplicates
//! included). A window slides over each sequence, co-occurring pairs get a
//! logistic pull together, and sampled noise items get pushed apart. The
//! resulting target vectors are frozen: downstream models only ever see them
//! through the read-only [`EmbeddingTable::vector`] accessor.
//!
//! File format (word2vec text): first line `N d`, then one line per item,
//! `item_id v1 .. vd`, space-separated, 9 significant digits.

use crate::corpus::UserHistory;
use crate::numkit::{dot, log_logistic, logistic};
use crate::sampler::{build_alias, build_distribution, sample_negatives, AliasTable};
use crate::{rng, Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Frozen item vectors. Target vectors are the published representation;
/// context vectors exist only during training and are not serialized.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    target: Vec<f64>,
    context: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, ids: Vec<String>) -> Self {
        let n = ids.len();
        EmbeddingTable {
            dim,
            ids,
            target: vec![0.0; n * dim],
            context: vec![0.0; n * dim],
        }
    }

    /// Builds a table directly from flat target vectors (row per item).
    pub fn from_vectors(dim: usize, ids: Vec<String>, targets: Vec<f64>) -> Result<Self> {
        if targets.len() != ids.len() * dim {
            return Err(Error::Shape(format!(
                "embedding storage {} does not match {} items x dim {}",
                targets.len(),
                ids.len(),
                dim
            )));
        }
        let n = ids.len();
        Ok(EmbeddingTable {
            dim,
            ids,
            target: targets,
            context: vec![0.0; n * dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, item: usize) -> &str {
        &self.ids[item]
    }

    /// The published (target) vector for an item.
    pub fn vector(&self, item: usize) -> &[f64] {
        &self.target[item * self.dim..(item + 1) * self.dim]
    }

    fn target_mut(&mut self, item: usize) -> &mut [f64] {
        &mut self.target[item * self.dim..(item + 1) * self.dim]
    }

    fn context_vec(&self, item: usize) -> &[f64] {
        &self.context[item * self.dim..(item + 1) * self.dim]
    }

    fn context_mut(&mut self, item: usize) -> &mut [f64] {
        &mut self.context[item * self.dim..(item + 1) * self.dim]
    }

    pub fn all_finite(&self) -> bool {
        self.target.iter().all(|v| v.is_finite()) && self.context.iter().all(|v| v.is_finite())
    }

    /// Writes the table in word2vec text format (target vectors only).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for item in 0..self.len() {
            write!(w, "{}", self.ids[item])?;
            for v in self.vector(item) {
                write!(w, " {v:.8e}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<EmbeddingTable> {
        let label = path.display().to_string();
        let mut lines = BufReader::new(File::open(path)?).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(&label, 1, "missing header"))??;
        let mut hp = header.split_whitespace();
        let (n, d) = match (hp.next(), hp.next(), hp.next()) {
            (Some(n), Some(d), None) => (
                n.parse::<usize>()
                    .map_err(|_| Error::parse(&label, 1, "bad item count"))?,
                d.parse::<usize>()
                    .map_err(|_| Error::parse(&label, 1, "bad dimension"))?,
            ),
            _ => return Err(Error::parse(&label, 1, "header must be `N d`")),
        };
        let mut ids = Vec::with_capacity(n);
        let mut target = Vec::with_capacity(n * d);
        for lineno in 2..(n + 2) {
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(&label, lineno, "fewer rows than header declares"))??;
            let mut parts = line.split_whitespace();
            let id = parts
                .next()
                .ok_or_else(|| Error::parse(&label, lineno, "empty row"))?;
            ids.push(id.to_string());
            let mut got = 0;
            for p in parts {
                let v: f64 = p
                    .parse()
                    .map_err(|_| Error::parse(&label, lineno, format!("bad float `{p}`")))?;
                target.push(v);
                got += 1;
            }
            if got != d {
                return Err(Error::parse(
                    &label,
                    lineno,
                    format!("expected {d} components, found {got}"),
                ));
            }
        }
        if lines.next().is_some() {
            return Err(Error::parse(
                &label,
                n + 2,
                "more rows than header declares",
            ));
        }
        Ok(EmbeddingTable {
            dim: d,
            ids,
            target,
            context: vec![0.0; n * d],
        })
    }
}

/// Skip-gram training hyperparameters.
#[derive(Debug, Clone)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    /// Negative samples per positive pair.
    pub negatives: usize,
    /// Smoothing exponent for the noise distribution.
    pub gamma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 64,
            window: 5,
            negatives: 5,
            gamma: 0.75,
            learning_rate: 0.025,
            epochs: 5,
            seed: 1,
        }
    }
}

impl SkipGramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.negatives == 0 || self.epochs == 0 {
            return Err(Error::InvalidArg(
                "skip-gram: dim, window, negatives, and epochs must be >= 1".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidArg(
                "skip-gram: learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Enumerates (center, context) pairs within the sliding window. Pairs whose
/// two positions hold the same item index are dropped.
pub fn extract_pairs(sequence: &[usize], window: usize) -> Vec<(usize, usize)> {
    assert!(window >= 1, "window must be >= 1");
    let mut pairs = Vec::new();
    for (t, &center) in sequence.iter().enumerate() {
        let lo = t.saturating_sub(window);
        let hi = (t + window).min(sequence.len().saturating_sub(1));
        for (j, &context) in sequence.iter().enumerate().take(hi + 1).skip(lo) {
            if j == t {
                continue;
            }
            if context != center {
                pairs.push((center, context));
            }
        }
    }
    pairs
}

/// One SGD step on `-[log s(x_c . ctx_o) + sum_n log(1 - s(x_c . ctx_n))]`.
/// Returns the loss at the pre-update parameters.
pub fn sg_step(
    table: &mut EmbeddingTable,
    center: usize,
    context: usize,
    negatives: &[usize],
    lr: f64,
) -> f64 {
    debug_assert!(negatives.iter().all(|&n| n != context));
    let dim = table.dim;
    let mut center_grad = vec![0.0; dim];
    let mut loss = 0.0;

    // Positive pair: d/dz of -log s(z) is s(z) - 1.
    {
        let z = dot(table.vector(center), table.context_vec(context));
        loss -= log_logistic(z);
        let coef = logistic(z) - 1.0;
        let (xc, ctx) = (
            table.vector(center).to_vec(),
            table.context_vec(context).to_vec(),
        );
        for i in 0..dim {
            center_grad[i] += coef * ctx[i];
        }
        let ctx_slot = table.context_mut(context);
        for i in 0..dim {
            ctx_slot[i] -= lr * coef * xc[i];
        }
    }

    // Negatives: d/dz of -log(1 - s(z)) is s(z).
    for &neg in negatives {
        let z = dot(table.vector(center), table.context_vec(neg));
        loss -= log_logistic(-z);
        let coef = logistic(z);
        let (xc, ctx) = (
            table.vector(center).to_vec(),
            table.context_vec(neg).to_vec(),
        );
        for i in 0..dim {
            center_grad[i] += coef * ctx[i];
        }
        let ctx_slot = table.context_mut(neg);
        for i in 0..dim {
            ctx_slot[i] -= lr * coef * xc[i];
        }
    }

    let target = table.target_mut(center);
    for i in 0..dim {
        target[i] -= lr * center_grad[i];
    }
    loss
}

/// Trains embeddings over user action sequences.
///
/// Targets start uniform in [-0.5/d, 0.5/d], contexts at zero; the learning
/// rate decays linearly from `learning_rate` to `learning_rate / 100` over
/// all steps. Noise items come from the smoothed count distribution,
/// excluding only the positive context of each pair. Deterministic given the
/// seed.
pub fn train_embeddings(
    histories: &[UserHistory],
    counts: &[u64],
    ids: Vec<String>,
    config: &SkipGramConfig,
) -> Result<EmbeddingTable> {
    config.validate()?;
    if ids.is_empty() {
        return Err(Error::Empty("train_embeddings: empty vocabulary".into()));
    }
    if ids.len() != counts.len() {
        return Err(Error::Shape(format!(
            "train_embeddings: {} ids vs {} counts",
            ids.len(),
            counts.len()
        )));
    }

    let mut table = EmbeddingTable::new(config.dim, ids);
    let mut init_rng = rng::seeded(rng::derive(config.seed, 0x3e6d));
    let scale = 0.5 / config.dim as f64;
    for v in table.target.iter_mut() {
        *v = (init_rng.random::<f64>() * 2.0 - 1.0) * scale;
    }

    let dist = build_distribution(counts, config.gamma)?;
    let alias = build_alias(&dist);

    let total_pairs: usize = histories
        .iter()
        .map(|h| pair_count(h.events.len(), config.window))
        .sum::<usize>()
        .saturating_mul(config.epochs);
    let lr_max = config.learning_rate;
    let lr_min = lr_max / 100.0;

    let mut step = 0usize;
    let mut order: Vec<usize> = (0..histories.len()).collect();
    let mut epoch_rng = rng::seeded(rng::derive(config.seed, 0x5a1e));
    for _epoch in 0..config.epochs {
        order.shuffle(&mut epoch_rng);
        for &u in &order {
            let sequence: Vec<usize> = histories[u].events.iter().map(|e| e.item).collect();
            for (center, context) in extract_pairs(&sequence, config.window) {
                let lr = if total_pairs > 1 {
                    lr_max - (lr_max - lr_min) * step as f64 / (total_pairs - 1) as f64
                } else {
                    lr_max
                };
                let exclude: HashSet<usize> = [context].into_iter().collect();
                let negatives = draw_negatives(&alias, config.negatives, &exclude, &mut epoch_rng);
                sg_step(&mut table, center, context, &negatives, lr);
                step += 1;
            }
        }
    }

    if !table.all_finite() {
        return Err(Error::NonFinite("embedding table after training".into()));
    }
    Ok(table)
}

/// Upper bound on window pairs (exact when the sequence has no repeated
/// adjacent items); only used to scale the learning-rate decay.
fn pair_count(len: usize, window: usize) -> usize {
    (0..len)
        .map(|t| {
            let lo = t.saturating_sub(window);
            let hi = (t + window).min(len.saturating_sub(1));
            hi - lo
        })
        .sum()
}

fn draw_negatives(
    alias: &AliasTable,
    k: usize,
    exclude: &HashSet<usize>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<usize> {
    // A vocabulary this small cannot supply k distinct negatives; degrade to
    // however many are available rather than failing mid-epoch.
    match sample_negatives(alias, k, exclude, rng) {
        Ok(n) => n,
        Err(_) => {
            let mut k = k;
            loop {
                k -= 1;
                if k == 0 {
                    return Vec::new();
                }
                if let Ok(n) = sample_negatives(alias, k, exclude, rng) {
                    return n;
                }
            }
        }
    }
}
