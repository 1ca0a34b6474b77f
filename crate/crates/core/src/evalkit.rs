//! Sampled-candidate ranking evaluation.
//!
//! Each test user gets a candidate pool: their held-out test items plus
//! negatives drawn from a smoothed training distribution, excluding
//! everything the user ever touched. Every model ranks the identical pools
//! (paired evaluation), metrics are binary-relevance NDCG and Recall@K, and
//! model gaps are tested with a paired bootstrap over users.
//!
//! Pools for a grid of negative-pool sizes are nested (each larger pool
//! extends the smaller one), which makes "more negatives is a strictly
//! harder problem" hold exactly per user rather than just in expectation.

use crate::baselines::{weighted_user_vector, DanParams, WeightedSumParams};
use crate::corpus::{HistoryEvent, TestPair};
use crate::embed::EmbeddingTable;
use crate::numkit::{cosine, dot, logistic};
use crate::sampler::{build_alias, sample_negatives, SampledDistribution};
use crate::{attncf, rng, AttentionParams, Error, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Anything that can score candidate items for a user given their
/// training-period events.
pub trait Scorer: Sync {
    fn score_candidates(
        &self,
        history: &[HistoryEvent],
        now: i64,
        candidates: &[usize],
    ) -> Result<Vec<f64>>;
}

/// One user's ranking problem: held-out positives plus sampled negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    pub user_id: String,
    /// Index into the `TestPair` slice the pool was built from.
    pub pair_index: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl CandidatePool {
    /// Positives first, then negatives; ranking order never depends on this.
    pub fn candidates(&self) -> Vec<usize> {
        self.positives
            .iter()
            .chain(&self.negatives)
            .copied()
            .collect()
    }
}

/// All pools for one (gamma, n_negatives) evaluation setting.
#[derive(Debug, Clone)]
pub struct PoolSet {
    pub gamma: f64,
    pub n_negatives: usize,
    pub seed: u64,
    pub pools: Vec<CandidatePool>,
    /// Users dropped because their exclusion set left too few items.
    pub skipped: usize,
}

/// Builds nested pools for every size in `n_grid`: per user one maximal
/// negative sequence is drawn and each smaller pool takes its prefix.
/// Negatives exclude the user's full interaction set (train and test).
pub fn build_pool_grid(
    pairs: &[TestPair],
    dist: &SampledDistribution,
    n_grid: &[usize],
    seed: u64,
) -> Result<Vec<PoolSet>> {
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(Error::InvalidArg("pool grid sizes must be >= 1".into()));
    }
    let n_max = *n_grid.iter().max().unwrap();
    let alias = build_alias(dist);

    let mut drawn: Vec<Option<(usize, Vec<usize>)>> = Vec::with_capacity(pairs.len());
    for (idx, pair) in pairs.iter().enumerate() {
        let mut exclude: HashSet<usize> = pair.train_events.iter().map(|e| e.item).collect();
        exclude.extend(pair.test_items.iter().copied());
        let mut user_rng = rng::seeded(rng::derive(seed, idx as u64));
        match sample_negatives(&alias, n_max, &exclude, &mut user_rng) {
            Ok(negs) => drawn.push(Some((idx, negs))),
            Err(_) => drawn.push(None),
        }
    }
    let skipped = drawn.iter().filter(|d| d.is_none()).count();

    let mut out = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let pools: Vec<CandidatePool> = drawn
            .iter()
            .flatten()
            .map(|(idx, negs)| CandidatePool {
                user_id: pairs[*idx].user_id.clone(),
                pair_index: *idx,
                positives: pairs[*idx].test_items.clone(),
                negatives: negs[..n].to_vec(),
            })
            .collect();
        out.push(PoolSet {
            gamma: dist.gamma(),
            n_negatives: n,
            seed,
            pools,
            skipped,
        });
    }
    Ok(out)
}

/// Single-size convenience wrapper over [`build_pool_grid`].
pub fn build_pools(
    pairs: &[TestPair],
    dist: &SampledDistribution,
    n_negatives: usize,
    seed: u64,
) -> Result<PoolSet> {
    Ok(build_pool_grid(pairs, dist, &[n_negatives], seed)?
        .pop()
        .unwrap())
}

/// Binary-relevance NDCG: DCG sums 1/log2(p+1) over the 1-based positions
/// of relevant items, normalized by the ideal ordering's DCG.
pub fn ndcg(ranked: &[usize], relevant: &HashSet<usize>) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let mut dcg = 0.0;
    for (pos0, item) in ranked.iter().enumerate() {
        if relevant.contains(item) {
            dcg += 1.0 / ((pos0 + 2) as f64).log2();
        }
    }
    let ideal: f64 = (1..=relevant.len())
        .map(|p| 1.0 / ((p + 1) as f64).log2())
        .sum();
    dcg / ideal
}

/// Fraction of the relevant items appearing in the top K.
pub fn recall_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|i| relevant.contains(i))
        .count();
    hits as f64 / relevant.len() as f64
}

/// Sorts candidates by descending score, ties broken by ascending item
/// index; fully deterministic.
pub fn rank_candidates(scores: &[f64], candidates: &[usize]) -> Vec<usize> {
    debug_assert_eq!(scores.len(), candidates.len());
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(candidates[a].cmp(&candidates[b]))
    });
    order.into_iter().map(|i| candidates[i]).collect()
}

/// Scores and ranks one pool with one model.
pub fn rank_pool(
    scorer: &dyn Scorer,
    history: &[HistoryEvent],
    now: i64,
    pool: &CandidatePool,
) -> Result<Vec<usize>> {
    let candidates = pool.candidates();
    let scores = scorer.score_candidates(history, now, &candidates)?;
    if scores.len() != candidates.len() {
        return Err(Error::Shape(format!(
            "scorer returned {} scores for {} candidates",
            scores.len(),
            candidates.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("candidate scores".into()));
    }
    Ok(rank_candidates(&scores, &candidates))
}

/// Per-model metrics over one pool set.
#[derive(Debug, Clone, Serialize)]
pub struct ModelMetrics {
    pub model: String,
    /// Attention depth, for depth-ablation reporting; None for baselines.
    pub depth: Option<u32>,
    pub mean_ndcg: f64,
    /// Mean Recall@K per K.
    pub mean_recall: BTreeMap<usize, f64>,
    pub ndcg_per_user: Vec<f64>,
    pub recall_per_user: BTreeMap<usize, Vec<f64>>,
}

/// Metrics for every model on one (gamma, n_negatives) setting; per-user
/// vectors are aligned across models because all models rank identical
/// pools.
#[derive(Debug, Clone, Serialize)]
pub struct SettingReport {
    pub gamma: f64,
    pub n_negatives: usize,
    pub pool_seed: u64,
    pub n_users: usize,
    pub skipped_users: usize,
    pub k_grid: Vec<usize>,
    pub models: Vec<ModelMetrics>,
}

/// Full evaluation output across settings.
#[derive(Debug, Clone, Serialize, Default)]
pub struct MetricsReport {
    pub settings: Vec<SettingReport>,
}

/// A named model with optional depth metadata for reporting.
pub struct EvalModel<'a> {
    pub name: String,
    pub depth: Option<u32>,
    pub scorer: &'a dyn Scorer,
}

/// Evaluates every model on identical pools. `now` is the boundary
/// timestamp recency-sensitive scorers measure age against. Deterministic
/// for any thread count (per-user work is pure; reduction is ordered).
pub fn evaluate(
    models: &[EvalModel<'_>],
    pairs: &[TestPair],
    pools: &PoolSet,
    k_grid: &[usize],
    now: i64,
    threads: usize,
) -> Result<SettingReport> {
    if models.is_empty() {
        return Err(Error::InvalidArg("evaluate: no models given".into()));
    }
    if k_grid.is_empty() || k_grid.contains(&0) {
        return Err(Error::InvalidArg(
            "evaluate: K grid entries must be >= 1".into(),
        ));
    }
    if pools.pools.is_empty() {
        return Err(Error::Empty(format!(
            "no candidate pools to evaluate ({} users were skipped); shrink n_negatives or grow the vocabulary",
            pools.skipped
        )));
    }
    let mut report = SettingReport {
        gamma: pools.gamma,
        n_negatives: pools.n_negatives,
        pool_seed: pools.seed,
        n_users: pools.pools.len(),
        skipped_users: pools.skipped,
        k_grid: k_grid.to_vec(),
        models: Vec::with_capacity(models.len()),
    };

    for model in models {
        let per_pool = |pool: &CandidatePool| -> Result<(f64, Vec<f64>)> {
            let pair = &pairs[pool.pair_index];
            let ranked = rank_pool(model.scorer, &pair.train_events, now, pool)?;
            let relevant: HashSet<usize> = pool.positives.iter().copied().collect();
            let n = ndcg(&ranked, &relevant);
            let recalls: Vec<f64> = k_grid
                .iter()
                .map(|&k| recall_at_k(&ranked, &relevant, k))
                .collect();
            Ok((n, recalls))
        };
        let rows: Result<Vec<(f64, Vec<f64>)>> = if threads > 1 {
            pools.pools.par_iter().map(per_pool).collect()
        } else {
            pools.pools.iter().map(per_pool).collect()
        };
        let rows = rows?;

        let n_users = rows.len().max(1) as f64;
        let ndcg_per_user: Vec<f64> = rows.iter().map(|(n, _)| *n).collect();
        let mut recall_per_user: BTreeMap<usize, Vec<f64>> = k_grid
            .iter()
            .map(|&k| (k, Vec::with_capacity(rows.len())))
            .collect();
        for (_, recalls) in &rows {
            for (&k, r) in k_grid.iter().zip(recalls) {
                recall_per_user.get_mut(&k).unwrap().push(*r);
            }
        }
        let mean_recall: BTreeMap<usize, f64> = recall_per_user
            .iter()
            .map(|(&k, v)| (k, v.iter().sum::<f64>() / n_users))
            .collect();
        report.models.push(ModelMetrics {
            model: model.name.clone(),
            depth: model.depth,
            mean_ndcg: ndcg_per_user.iter().sum::<f64>() / n_users,
            mean_recall,
            ndcg_per_user,
            recall_per_user,
        });
    }
    Ok(report)
}

/// Two-sided paired bootstrap p-value for the mean difference between two
/// aligned per-user metric vectors. Resamples users with replacement,
/// centers the bootstrap distribution at the observed mean difference, and
/// counts excursions at least as extreme; the (1 + count) / (n + 1)
/// correction keeps p > 0.
pub fn paired_significance(a: &[f64], b: &[f64], n_resamples: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "paired_significance: {} vs {} users",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() || n_resamples == 0 {
        return Err(Error::InvalidArg(
            "paired_significance needs users and resamples".into(),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    let observed = diffs.iter().sum::<f64>() / n as f64;

    let mut rng = rng::seeded(seed);
    let mut extreme = 0usize;
    for _ in 0..n_resamples {
        let mut acc = 0.0;
        for _ in 0..n {
            acc += diffs[rng.random_range(0..n)];
        }
        let resampled = acc / n as f64;
        if (resampled - observed).abs() >= observed.abs() {
            extreme += 1;
        }
    }
    Ok((1 + extreme) as f64 / (n_resamples + 1) as f64)
}

/// Writes the JSON report plus one CSV per figure family into `dir`:
/// NDCG against pool size and sampling distribution, Recall@K, and the
/// depth ablation (rows for models carrying a depth tag). CSV columns are
/// `model,gamma,n_negatives,metric,k,value` throughout.
pub fn emit_report(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let json_path = dir.join("report.json");
    let mut w = BufWriter::new(File::create(&json_path)?);
    serde_json::to_writer_pretty(&mut w, report)
        .map_err(|e| Error::Format(format!("report serialization: {e}")))?;
    w.write_all(b"\n")?;
    w.flush()?;
    written.push(json_path);

    let header = "model,gamma,n_negatives,metric,k,value\n";

    let ndcg_path = dir.join("fig_ndcg.csv");
    {
        let mut w = BufWriter::new(File::create(&ndcg_path)?);
        w.write_all(header.as_bytes())?;
        for s in &report.settings {
            for m in &s.models {
                writeln!(
                    w,
                    "{},{},{},ndcg,,{:.6}",
                    m.model, s.gamma, s.n_negatives, m.mean_ndcg
                )?;
            }
        }
        w.flush()?;
    }
    written.push(ndcg_path);

    let recall_path = dir.join("fig_recall.csv");
    {
        let mut w = BufWriter::new(File::create(&recall_path)?);
        w.write_all(header.as_bytes())?;
        for s in &report.settings {
            for m in &s.models {
                for (k, v) in &m.mean_recall {
                    writeln!(
                        w,
                        "{},{},{},recall,{},{:.6}",
                        m.model, s.gamma, s.n_negatives, k, v
                    )?;
                }
            }
        }
        w.flush()?;
    }
    written.push(recall_path);

    let depth_path = dir.join("fig_depth.csv");
    {
        let mut w = BufWriter::new(File::create(&depth_path)?);
        w.write_all(header.as_bytes())?;
        for s in &report.settings {
            for m in s.models.iter().filter(|m| m.depth.is_some()) {
                writeln!(
                    w,
                    "{},{},{},ndcg,,{:.6}",
                    m.model, s.gamma, s.n_negatives, m.mean_ndcg
                )?;
                for (k, v) in &m.mean_recall {
                    writeln!(
                        w,
                        "{},{},{},recall,{},{:.6}",
                        m.model, s.gamma, s.n_negatives, k, v
                    )?;
                }
            }
        }
        w.flush()?;
    }
    written.push(depth_path);

    Ok(written)
}

// ---------------------------------------------------------------------------
// Scorer wrappers
// ---------------------------------------------------------------------------

/// Non-personalized frequency ranking.
pub struct PopularityScorer {
    counts: Vec<u64>,
}

impl PopularityScorer {
    pub fn new(counts: Vec<u64>) -> Self {
        PopularityScorer { counts }
    }
}

impl Scorer for PopularityScorer {
    fn score_candidates(
        &self,
        _history: &[HistoryEvent],
        _now: i64,
        candidates: &[usize],
    ) -> Result<Vec<f64>> {
        Ok(candidates.iter().map(|&c| self.counts[c] as f64).collect())
    }
}

/// Cosine similarity to the most recent history item.
pub struct LastItemScorer<'a> {
    table: &'a EmbeddingTable,
}

impl<'a> LastItemScorer<'a> {
    pub fn new(table: &'a EmbeddingTable) -> Self {
        LastItemScorer { table }
    }
}

impl Scorer for LastItemScorer<'_> {
    fn score_candidates(
        &self,
        history: &[HistoryEvent],
        _now: i64,
        candidates: &[usize],
    ) -> Result<Vec<f64>> {
        let last = history
            .last()
            .ok_or_else(|| Error::InvalidArg("last-item scorer on empty history".into()))?;
        let v = self.table.vector(last.item);
        Ok(candidates
            .iter()
            .map(|&c| cosine(v, self.table.vector(c)))
            .collect())
    }
}

/// Cosine similarity to the recency/action weighted history average.
pub struct WeightedSumScorer<'a> {
    table: &'a EmbeddingTable,
    params: WeightedSumParams,
}

impl<'a> WeightedSumScorer<'a> {
    pub fn new(table: &'a EmbeddingTable, params: WeightedSumParams) -> Self {
        WeightedSumScorer { table, params }
    }
}

impl Scorer for WeightedSumScorer<'_> {
    fn score_candidates(
        &self,
        history: &[HistoryEvent],
        now: i64,
        candidates: &[usize],
    ) -> Result<Vec<f64>> {
        let user = weighted_user_vector(self.table, history, &self.params, now)?;
        Ok(candidates
            .iter()
            .map(|&c| cosine(&user, self.table.vector(c)))
            .collect())
    }
}

/// Deep averaging network scorer; the feedforward stack runs once per user.
pub struct DanScorer<'a> {
    table: &'a EmbeddingTable,
    params: &'a DanParams,
}

impl<'a> DanScorer<'a> {
    pub fn new(table: &'a EmbeddingTable, params: &'a DanParams) -> Self {
        DanScorer { table, params }
    }
}

impl Scorer for DanScorer<'_> {
    fn score_candidates(
        &self,
        history: &[HistoryEvent],
        _now: i64,
        candidates: &[usize],
    ) -> Result<Vec<f64>> {
        let items: Vec<usize> = history.iter().map(|e| e.item).collect();
        let user = crate::baselines::mean_history_vector(self.table, &items)?;
        let projected = crate::baselines::dan_project(self.params, &user);
        Ok(candidates
            .iter()
            .map(|&c| logistic(dot(&projected, self.table.vector(c))))
            .collect())
    }
}

/// Attention model scorer with per-user history caching and the
/// most-recent-items cap.
pub struct AttnScorer<'a> {
    table: &'a EmbeddingTable,
    params: &'a AttentionParams,
    history_cap: usize,
}

impl<'a> AttnScorer<'a> {
    pub fn new(table: &'a EmbeddingTable, params: &'a AttentionParams, history_cap: usize) -> Self {
        AttnScorer {
            table,
            params,
            history_cap,
        }
    }
}

impl Scorer for AttnScorer<'_> {
    fn score_candidates(
        &self,
        history: &[HistoryEvent],
        _now: i64,
        candidates: &[usize],
    ) -> Result<Vec<f64>> {
        // Distinct items, most recent first, truncated to the cap.
        let mut seen = HashSet::new();
        let mut items = Vec::new();
        for e in history.iter().rev() {
            if seen.insert(e.item) {
                items.push(e.item);
                if items.len() == self.history_cap {
                    break;
                }
            }
        }
        attncf::score_batch(self.params, &items, candidates, self.table)
    }
}
