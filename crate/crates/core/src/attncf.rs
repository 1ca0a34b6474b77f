//! K-layer attention ranker over a user's observed items.
//!
//! A query item's embedding is mapped to an initial state; each layer
//! compares transformed history items against the current state, takes the
//! softmax-weighted combination of (differently) transformed history items,
//! and adds it to the state. A shared weight vector reduces the final state
//! to a logistic score. Item embeddings are frozen throughout: the backward
//! pass produces gradients for the attention parameters only.
//!
//! History items are treated as a set: duplicates collapse and scoring is
//! exactly invariant to input order (items are canonicalized by ascending
//! index before any arithmetic).
//!
//! Training follows a plateau schedule: minibatch Adam with per-batch
//! negative sampling, holdout assessments every `eval_period` updates, the
//! learning rate cut by `lr_decay` after `plateau_patience` consecutive
//! non-improving assessments, and termination after `max_reductions` cuts.

use crate::corpus::{self, SplitInstance};
use crate::embed::EmbeddingTable;
use crate::numkit::{
    axpy, clip_global_norm, dot, log_logistic, logistic, matvec, orthogonal_init, outer_acc,
    softmax_in_place, Adam,
};
use crate::sampler::{build_alias, build_distribution, sample_negatives, AliasTable};
use crate::{rng, Error, Result};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const CHECKPOINT_MAGIC: &[u8; 6] = b"ATNCF1";

/// All trainable parameters, stored as one flat buffer in declaration order:
/// query map `B_h`, `c_h`; per layer `B_f`, `c_f`, `B_g`, `c_g`; score
/// vector `w`. The flat layout is what Adam, gradient clipping, checkpoints,
/// and the finite-difference checker operate on.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    input_dim: usize,
    hidden_dim: usize,
    depth: usize,
    data: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, depth: usize) -> Self {
        let n = Self::param_count(input_dim, hidden_dim, depth);
        AttentionParams {
            input_dim,
            hidden_dim,
            depth,
            data: vec![0.0; n],
        }
    }

    /// Orthogonal init for every weight matrix; biases and the score vector
    /// start at zero.
    pub fn init(input_dim: usize, hidden_dim: usize, depth: usize, seed: u64) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim, depth);
        let mut r = rng::seeded(seed);
        let mat = orthogonal_init(hidden_dim, input_dim, &mut r);
        p.block_mut(p.b_h_off()).copy_from_slice(mat.as_slice());
        for k in 0..depth {
            let mat = orthogonal_init(hidden_dim, input_dim, &mut r);
            p.block_mut(p.b_f_off(k)).copy_from_slice(mat.as_slice());
            let mat = orthogonal_init(hidden_dim, input_dim, &mut r);
            p.block_mut(p.b_g_off(k)).copy_from_slice(mat.as_slice());
        }
        p
    }

    pub fn param_count(input_dim: usize, hidden_dim: usize, depth: usize) -> usize {
        let mat = hidden_dim * input_dim;
        mat + hidden_dim + depth * 2 * (mat + hidden_dim) + hidden_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn mat_len(&self) -> usize {
        self.hidden_dim * self.input_dim
    }

    fn b_h_off(&self) -> (usize, usize) {
        (0, self.mat_len())
    }

    fn c_h_off(&self) -> (usize, usize) {
        (self.mat_len(), self.hidden_dim)
    }

    fn layer_base(&self, k: usize) -> usize {
        self.mat_len() + self.hidden_dim + k * 2 * (self.mat_len() + self.hidden_dim)
    }

    fn b_f_off(&self, k: usize) -> (usize, usize) {
        (self.layer_base(k), self.mat_len())
    }

    fn c_f_off(&self, k: usize) -> (usize, usize) {
        (self.layer_base(k) + self.mat_len(), self.hidden_dim)
    }

    fn b_g_off(&self, k: usize) -> (usize, usize) {
        (
            self.layer_base(k) + self.mat_len() + self.hidden_dim,
            self.mat_len(),
        )
    }

    fn c_g_off(&self, k: usize) -> (usize, usize) {
        (
            self.layer_base(k) + 2 * self.mat_len() + self.hidden_dim,
            self.hidden_dim,
        )
    }

    fn w_off(&self) -> (usize, usize) {
        (self.layer_base(self.depth), self.hidden_dim)
    }

    fn block(&self, off: (usize, usize)) -> &[f64] {
        &self.data[off.0..off.0 + off.1]
    }

    fn block_mut(&mut self, off: (usize, usize)) -> &mut [f64] {
        &mut self.data[off.0..off.0 + off.1]
    }

    pub fn b_h(&self) -> &[f64] {
        self.block(self.b_h_off())
    }

    pub fn c_h(&self) -> &[f64] {
        self.block(self.c_h_off())
    }

    pub fn b_f(&self, k: usize) -> &[f64] {
        self.block(self.b_f_off(k))
    }

    pub fn c_f(&self, k: usize) -> &[f64] {
        self.block(self.c_f_off(k))
    }

    pub fn b_g(&self, k: usize) -> &[f64] {
        self.block(self.b_g_off(k))
    }

    pub fn c_g(&self, k: usize) -> &[f64] {
        self.block(self.c_g_off(k))
    }

    pub fn w(&self) -> &[f64] {
        self.block(self.w_off())
    }

    /// Coordinate indices of the `c_f` blocks. The loss is exactly invariant
    /// to these parameters (a softmax over scores all shifted by `c_f . z`),
    /// so their analytic gradient is identically zero; gradient-check
    /// harnesses treat them separately from directions with real curvature.
    pub fn flat_direction_indices(&self) -> HashSet<usize> {
        let mut out = HashSet::new();
        for k in 0..self.depth {
            let (start, len) = self.c_f_off(k);
            out.extend(start..start + len);
        }
        out
    }

    /// Binary checkpoint: magic, little-endian u32 header (d, d', K), then
    /// the flat parameters as little-endian f64 in declaration order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        for v in [
            self.input_dim as u32,
            self.hidden_dim as u32,
            self.depth as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a checkpoint, rejecting magic/shape corruption and an input
    /// dimension that does not match the embedding table it will be used
    /// with.
    pub fn load(path: &Path, expected_input_dim: usize) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!(
                "{}: bad magic bytes",
                path.display()
            )));
        }
        let mut u32buf = [0u8; 4];
        let mut header = [0usize; 3];
        for h in header.iter_mut() {
            r.read_exact(&mut u32buf)
                .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
            *h = u32::from_le_bytes(u32buf) as usize;
        }
        let [d, dh, depth] = header;
        if d == 0 || dh == 0 {
            return Err(Error::Format(format!(
                "{}: zero dimension in header",
                path.display()
            )));
        }
        if d != expected_input_dim {
            return Err(Error::Shape(format!(
                "{}: checkpoint input dim {} does not match embedding dim {}",
                path.display(),
                d,
                expected_input_dim
            )));
        }
        let n = Self::param_count(d, dh, depth);
        let mut data = vec![0.0; n];
        let mut f64buf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut f64buf)
                .map_err(|_| Error::Format(format!("{}: truncated parameters", path.display())))?;
            *v = f64::from_le_bytes(f64buf);
        }
        if r.read(&mut f64buf)? != 0 {
            return Err(Error::Format(format!("{}: trailing bytes", path.display())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{}: checkpoint parameters",
                path.display()
            )));
        }
        Ok(AttentionParams {
            input_dim: d,
            hidden_dim: dh,
            depth,
            data,
        })
    }
}

/// Everything the forward pass produced: the canonical (sorted, distinct)
/// history items, per-layer attention distributions, the state sequence
/// z^0..z^K, and the final logistic score.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub items: Vec<usize>,
    pub attention: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    pub score: f64,
}

/// Sorted distinct item indices: the canonical summation order that makes
/// scores exactly permutation invariant.
pub fn canonical_items(history: &[usize]) -> Vec<usize> {
    let mut items: Vec<usize> = history.to_vec();
    items.sort_unstable();
    items.dedup();
    items
}

/// Query-independent per-layer transforms of the history items, shared
/// across every candidate scored against the same history.
struct HistoryCache {
    items: Vec<usize>,
    /// Per layer, `m * hidden_dim` transformed key vectors f_k(x_i).
    f: Vec<Vec<f64>>,
    /// Per layer, `m * hidden_dim` transformed value vectors g_k(x_i).
    g: Vec<Vec<f64>>,
}

impl HistoryCache {
    fn build(params: &AttentionParams, history: &[usize], table: &EmbeddingTable) -> Result<Self> {
        let items = canonical_items(history);
        if items.is_empty() {
            return Err(Error::InvalidArg(
                "attention forward requires a non-empty history".into(),
            ));
        }
        for &i in &items {
            if i >= table.len() {
                return Err(Error::InvalidArg(format!(
                    "history item {i} outside vocabulary"
                )));
            }
        }
        let (d, dh) = (params.input_dim, params.hidden_dim);
        let mut f = Vec::with_capacity(params.depth);
        let mut g = Vec::with_capacity(params.depth);
        for k in 0..params.depth {
            let mut fk = Vec::with_capacity(items.len() * dh);
            let mut gk = Vec::with_capacity(items.len() * dh);
            for &item in &items {
                let x = table.vector(item);
                let mut fv = matvec(params.b_f(k), dh, d, x);
                axpy(&mut fv, 1.0, params.c_f(k));
                fk.extend_from_slice(&fv);
                let mut gv = matvec(params.b_g(k), dh, d, x);
                axpy(&mut gv, 1.0, params.c_g(k));
                gk.extend_from_slice(&gv);
            }
            f.push(fk);
            g.push(gk);
        }
        Ok(HistoryCache { items, f, g })
    }

    fn f_vec(&self, k: usize, i: usize, dh: usize) -> &[f64] {
        &self.f[k][i * dh..(i + 1) * dh]
    }

    fn g_vec(&self, k: usize, i: usize, dh: usize) -> &[f64] {
        &self.g[k][i * dh..(i + 1) * dh]
    }
}

fn forward_cached(
    params: &AttentionParams,
    cache: &HistoryCache,
    query: usize,
    table: &EmbeddingTable,
) -> Result<ForwardTrace> {
    if query >= table.len() {
        return Err(Error::InvalidArg(format!(
            "query item {query} outside vocabulary"
        )));
    }
    if table.dim() != params.input_dim {
        return Err(Error::Shape(format!(
            "embedding dim {} does not match model input dim {}",
            table.dim(),
            params.input_dim
        )));
    }
    let (d, dh) = (params.input_dim, params.hidden_dim);
    let m = cache.items.len();

    let mut z = matvec(params.b_h(), dh, d, table.vector(query));
    axpy(&mut z, 1.0, params.c_h());

    let mut states = Vec::with_capacity(params.depth + 1);
    states.push(z.clone());
    let mut attention = Vec::with_capacity(params.depth);

    for k in 0..params.depth {
        let mut weights: Vec<f64> = (0..m).map(|i| dot(cache.f_vec(k, i, dh), &z)).collect();
        softmax_in_place(&mut weights);
        let mut next = z.clone();
        for (i, &p) in weights.iter().enumerate() {
            axpy(&mut next, p, cache.g_vec(k, i, dh));
        }
        attention.push(weights);
        states.push(next.clone());
        z = next;
    }

    let score = logistic(dot(params.w(), &z));
    Ok(ForwardTrace {
        items: cache.items.clone(),
        attention,
        states,
        score,
    })
}

/// Scores a query item against a history. The history is any list of item
/// indices; duplicates collapse and order is irrelevant.
pub fn forward(
    params: &AttentionParams,
    history: &[usize],
    query: usize,
    table: &EmbeddingTable,
) -> Result<ForwardTrace> {
    let cache = HistoryCache::build(params, history, table)?;
    forward_cached(params, &cache, query, table)
}

/// Gradient accumulation against a trace, with `d_presigmoid` = dLoss/dy
/// where y = w . z^K (the stable form losses feed directly).
fn backward_cached(
    params: &AttentionParams,
    cache: &HistoryCache,
    trace: &ForwardTrace,
    query: usize,
    table: &EmbeddingTable,
    d_presigmoid: f64,
    grads: &mut AttentionParams,
) {
    let (d, dh) = (params.input_dim, params.hidden_dim);
    let m = cache.items.len();
    let z_final = trace.states.last().expect("trace has at least z^0");

    // w branch.
    axpy(grads.block_mut(grads.w_off()), d_presigmoid, z_final);

    // dL/dz^K
    let mut delta: Vec<f64> = params.w().iter().map(|&wv| d_presigmoid * wv).collect();

    for k in (0..params.depth).rev() {
        let p = &trace.attention[k];
        let z_prev = &trace.states[k];

        // Value branch: z^k += sum_i p_i g_k(x_i).
        // grad B_g += delta (sum_i p_i x_i)^T ; grad c_g += delta.
        let mut px = vec![0.0; d];
        for (i, &item) in cache.items.iter().enumerate() {
            axpy(&mut px, p[i], table.vector(item));
        }
        outer_acc(grads.block_mut(grads.b_g_off(k)), &delta, &px);
        axpy(grads.block_mut(grads.c_g_off(k)), 1.0, &delta);

        // Attention branch. dL/dp_i = delta . g_i, softmax backward gives
        // ds_i = p_i (dp_i - sum_j p_j dp_j).
        let dp: Vec<f64> = (0..m).map(|i| dot(&delta, cache.g_vec(k, i, dh))).collect();
        let mixed: f64 = p.iter().zip(&dp).map(|(&pi, &di)| pi * di).sum();
        let ds: Vec<f64> = (0..m).map(|i| p[i] * (dp[i] - mixed)).collect();

        // s_i = f_k(x_i) . z^{k-1}:
        // grad B_f += z_prev (sum_i ds_i x_i)^T. The c_f gradient is
        // (sum_i ds_i) z_prev with sum_i ds_i identically zero (softmax is
        // shift invariant), so nothing is accumulated for it.
        let mut dsx = vec![0.0; d];
        for (i, &item) in cache.items.iter().enumerate() {
            axpy(&mut dsx, ds[i], table.vector(item));
        }
        outer_acc(grads.block_mut(grads.b_f_off(k)), z_prev, &dsx);

        // dL/dz^{k-1}: residual path plus the attention keys.
        for (i, &dsi) in ds.iter().enumerate() {
            axpy(&mut delta, dsi, cache.f_vec(k, i, dh));
        }
    }

    // z^0 = B_h x_q + c_h.
    outer_acc(
        grads.block_mut(grads.b_h_off()),
        &delta,
        table.vector(query),
    );
    axpy(grads.block_mut(grads.c_h_off()), 1.0, &delta);
}

/// Analytic gradients of the scalar score with respect to every parameter,
/// scaled by `upstream` = dLoss/dScore. The embedding table receives no
/// gradient.
pub fn backward(
    params: &AttentionParams,
    trace: &ForwardTrace,
    history: &[usize],
    query: usize,
    table: &EmbeddingTable,
    upstream: f64,
) -> Result<AttentionParams> {
    let cache = HistoryCache::build(params, history, table)?;
    debug_assert_eq!(
        cache.items, trace.items,
        "trace does not match this history"
    );
    let mut grads = AttentionParams::zeros(params.input_dim, params.hidden_dim, params.depth);
    let r = trace.score;
    backward_cached(
        params,
        &cache,
        trace,
        query,
        table,
        upstream * r * (1.0 - r),
        &mut grads,
    );
    Ok(grads)
}

/// Balanced multi-label loss over one instance:
/// `-[ mean_{q in F} log r(q, O) / 2 + mean_{q in N} log(1 - r(q, O)) / 2 ]`,
/// with gradients accumulated over every query term.
pub fn instance_loss(
    params: &AttentionParams,
    instance: &SplitInstance,
    negatives: &[usize],
    table: &EmbeddingTable,
) -> Result<(f64, AttentionParams)> {
    if instance.future.is_empty() || negatives.is_empty() {
        return Err(Error::InvalidArg(
            "instance_loss needs non-empty future and negative sets".into(),
        ));
    }
    let fset: HashSet<usize> = instance.future.iter().copied().collect();
    if negatives.iter().any(|n| fset.contains(n)) {
        return Err(Error::InvalidArg("negatives overlap the future set".into()));
    }
    let cache = HistoryCache::build(params, &instance.observed, table)?;
    let mut grads = AttentionParams::zeros(params.input_dim, params.hidden_dim, params.depth);
    let mut loss = 0.0;

    let pos_w = 1.0 / (2.0 * instance.future.len() as f64);
    for &q in &instance.future {
        let trace = forward_cached(params, &cache, q, table)?;
        let y = dot(params.w(), trace.states.last().unwrap());
        loss -= pos_w * log_logistic(y);
        // d/dy of -w log sigma(y) = -w (1 - sigma(y))
        backward_cached(
            params,
            &cache,
            &trace,
            q,
            table,
            -pos_w * (1.0 - trace.score),
            &mut grads,
        );
    }
    let neg_w = 1.0 / (2.0 * negatives.len() as f64);
    for &q in negatives {
        let trace = forward_cached(params, &cache, q, table)?;
        let y = dot(params.w(), trace.states.last().unwrap());
        loss -= neg_w * log_logistic(-y);
        // d/dy of -w log(1 - sigma(y)) = w sigma(y)
        backward_cached(
            params,
            &cache,
            &trace,
            q,
            table,
            neg_w * trace.score,
            &mut grads,
        );
    }
    Ok((loss, grads))
}

/// Loss only (no gradient work); used for holdout assessments.
pub fn instance_loss_value(
    params: &AttentionParams,
    instance: &SplitInstance,
    negatives: &[usize],
    table: &EmbeddingTable,
) -> Result<f64> {
    if instance.future.is_empty() || negatives.is_empty() {
        return Err(Error::InvalidArg(
            "instance_loss needs non-empty future and negative sets".into(),
        ));
    }
    let cache = HistoryCache::build(params, &instance.observed, table)?;
    let mut loss = 0.0;
    let pos_w = 1.0 / (2.0 * instance.future.len() as f64);
    for &q in &instance.future {
        let trace = forward_cached(params, &cache, q, table)?;
        loss -= pos_w * log_logistic(dot(params.w(), trace.states.last().unwrap()));
    }
    let neg_w = 1.0 / (2.0 * negatives.len() as f64);
    for &q in negatives {
        let trace = forward_cached(params, &cache, q, table)?;
        loss -= neg_w * log_logistic(-dot(params.w(), trace.states.last().unwrap()));
    }
    Ok(loss)
}

/// Scores many candidates against one history, computing the per-layer
/// history transforms once. Equals per-candidate [`forward`] exactly.
pub fn score_batch(
    params: &AttentionParams,
    history: &[usize],
    candidates: &[usize],
    table: &EmbeddingTable,
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let cache = HistoryCache::build(params, history, table)?;
    candidates
        .iter()
        .map(|&q| forward_cached(params, &cache, q, table).map(|t| t.score))
        .collect()
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Hyperparameters shared by the attention model and the DAN baseline
/// (which trains with the identical procedure).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Consecutive non-improving assessments before a learning-rate cut.
    pub plateau_patience: usize,
    pub lr_decay: f64,
    /// Learning-rate cuts before training stops.
    pub max_reductions: usize,
    /// Updates between holdout assessments; 0 picks
    /// `max(50, n_train / batch / 10)`.
    pub eval_period: usize,
    /// Holdout items per training instance (consumed by the instance
    /// builder upstream of `train`).
    pub n_future: usize,
    pub n_negatives: usize,
    /// Smoothing exponent of the negative-sampling distribution.
    pub gamma: f64,
    pub seed: u64,
    /// Keep only this many most-recent observed items per instance.
    pub history_cap: usize,
    pub holdout_fraction: f64,
    pub holdout_cap: usize,
    /// Hard stop on update count (0 = unlimited); a desk-scale safety net on
    /// top of the plateau termination rule.
    pub max_updates: usize,
    /// When true, negatives avoid the observed set as well as the future
    /// set. Off by default: only the future set is excluded.
    pub exclude_observed: bool,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 0.002,
            plateau_patience: 5,
            lr_decay: 0.8,
            max_reductions: 20,
            eval_period: 0,
            n_future: 10,
            n_negatives: 100,
            gamma: 0.75,
            seed: 1,
            history_cap: 200,
            holdout_fraction: 0.05,
            holdout_cap: 2000,
            max_updates: 0,
            exclude_observed: false,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.plateau_patience == 0
            || self.max_reductions == 0
            || self.n_future == 0
            || self.n_negatives == 0
            || self.history_cap == 0
            || self.holdout_cap == 0
            || self.threads == 0
        {
            return Err(Error::InvalidArg(
                "train config: counts must be >= 1".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidArg(
                "train config: learning rate must be positive".into(),
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(Error::InvalidArg(
                "train config: lr decay must be in (0, 1)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArg(
                "train config: gamma must be in [0, 1]".into(),
            ));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::InvalidArg(
                "train config: holdout fraction must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Plateau learning-rate schedule: cut the rate by `decay` after `patience`
/// consecutive non-improving observations, stop after `max_reductions` cuts.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    lr: f64,
    decay: f64,
    patience: usize,
    max_reductions: usize,
    best: f64,
    consecutive_bad: usize,
    reductions: usize,
}

/// What one holdout observation did to the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlateauAction {
    Improved,
    NoImprovement,
    Reduced { new_lr: f64, exhausted: bool },
}

impl PlateauSchedule {
    pub fn new(lr: f64, decay: f64, patience: usize, max_reductions: usize) -> Self {
        PlateauSchedule {
            lr,
            decay,
            patience,
            max_reductions,
            best: f64::INFINITY,
            consecutive_bad: 0,
            reductions: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn reductions(&self) -> usize {
        self.reductions
    }

    /// Feeds one holdout objective value; improvement means strictly below
    /// the best seen so far.
    pub fn observe(&mut self, loss: f64) -> PlateauAction {
        if loss < self.best {
            self.best = loss;
            self.consecutive_bad = 0;
            return PlateauAction::Improved;
        }
        self.consecutive_bad += 1;
        if self.consecutive_bad < self.patience {
            return PlateauAction::NoImprovement;
        }
        self.consecutive_bad = 0;
        self.reductions += 1;
        self.lr *= self.decay;
        PlateauAction::Reduced {
            new_lr: self.lr,
            exhausted: self.reductions >= self.max_reductions,
        }
    }
}

/// One entry in the training log.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent {
    Assessment {
        update: usize,
        holdout_loss: f64,
        improved: bool,
    },
    LrReduced {
        update: usize,
        new_lr: f64,
        reduction: usize,
    },
    Terminated {
        update: usize,
        reductions: usize,
    },
    MaxUpdatesReached {
        update: usize,
    },
}

/// Chronological record of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub events: Vec<TrainEvent>,
    pub initial_lr: f64,
    pub initial_holdout_loss: f64,
    pub best_holdout_loss: f64,
    pub final_update: usize,
}

impl TrainLog {
    /// The learning rate over time: the initial value followed by each
    /// reduced value in order.
    pub fn lr_sequence(&self) -> Vec<f64> {
        let mut seq = vec![self.initial_lr];
        for e in &self.events {
            if let TrainEvent::LrReduced { new_lr, .. } = e {
                seq.push(*new_lr);
            }
        }
        seq
    }

    pub fn n_reductions(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, TrainEvent::LrReduced { .. }))
            .count()
    }

    pub fn terminated_by_plateau(&self) -> bool {
        self.events
            .iter()
            .any(|e| matches!(e, TrainEvent::Terminated { .. }))
    }
}

/// A model the shared minibatch/plateau engine can train: flat parameters
/// plus a balanced instance loss with gradients.
pub trait TrainableRanker: Clone + Send + Sync {
    fn flat(&self) -> &[f64];
    fn flat_mut(&mut self) -> &mut [f64];
    fn loss_grad(
        &self,
        observed: &[usize],
        future: &[usize],
        negatives: &[usize],
        table: &EmbeddingTable,
    ) -> Result<(f64, Vec<f64>)>;
    fn loss_value(
        &self,
        observed: &[usize],
        future: &[usize],
        negatives: &[usize],
        table: &EmbeddingTable,
    ) -> Result<f64>;
}

impl TrainableRanker for AttentionParams {
    fn flat(&self) -> &[f64] {
        &self.data
    }

    fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn loss_grad(
        &self,
        observed: &[usize],
        future: &[usize],
        negatives: &[usize],
        table: &EmbeddingTable,
    ) -> Result<(f64, Vec<f64>)> {
        let inst = SplitInstance {
            user_id: String::new(),
            observed: observed.to_vec(),
            future: future.to_vec(),
        };
        let (loss, grads) = instance_loss(self, &inst, negatives, table)?;
        Ok((loss, grads.data))
    }

    fn loss_value(
        &self,
        observed: &[usize],
        future: &[usize],
        negatives: &[usize],
        table: &EmbeddingTable,
    ) -> Result<f64> {
        let inst = SplitInstance {
            user_id: String::new(),
            observed: observed.to_vec(),
            future: future.to_vec(),
        };
        instance_loss_value(self, &inst, negatives, table)
    }
}

/// Keeps the `cap` most recent entries of an observed-item list (the list is
/// ordered oldest first).
fn cap_tail(items: &[usize], cap: usize) -> &[usize] {
    if items.len() > cap {
        &items[items.len() - cap..]
    } else {
        items
    }
}

/// Trains any [`TrainableRanker`] with minibatch Adam under the plateau
/// schedule. Returns the parameters with the best holdout loss and the
/// training log. Deterministic given the config seed (parallel gradient
/// maps reduce in fixed instance order).
pub fn train_ranker<M: TrainableRanker>(
    mut model: M,
    instances: &[SplitInstance],
    table: &EmbeddingTable,
    config: &TrainConfig,
) -> Result<(M, TrainLog)> {
    config.validate()?;
    if instances.len() < 2 {
        return Err(Error::InvalidArg(
            "training needs at least one training and one holdout instance".into(),
        ));
    }

    let (train_idx, holdout_idx) = corpus::holdout_partition(
        instances.len(),
        config.holdout_fraction,
        config.holdout_cap,
        rng::derive(config.seed, 0x401d),
    );
    let eval_period = if config.eval_period > 0 {
        config.eval_period
    } else {
        (train_idx.len() / config.batch_size / 10).max(50)
    };

    // Smoothed sampling distribution from per-instance item presence.
    let mut counts = vec![0u64; table.len()];
    for inst in instances {
        let mut seen = HashSet::new();
        for &i in inst.observed.iter().chain(&inst.future) {
            if seen.insert(i) {
                counts[i] += 1;
            }
        }
    }
    let dist = build_distribution(&counts, config.gamma)?;
    let alias = build_alias(&dist);

    // Fixed holdout negatives keep assessments comparable across time.
    let mut holdout_rng = rng::seeded(rng::derive(config.seed, 0x407e));
    let holdout: Vec<(&SplitInstance, Vec<usize>)> = holdout_idx
        .iter()
        .map(|&i| {
            let inst = &instances[i];
            let negs = draw_instance_negatives(&alias, inst, config, &mut holdout_rng)?;
            Ok((inst, negs))
        })
        .collect::<Result<_>>()?;

    let eval_holdout = |model: &M| -> Result<f64> {
        let losses: Result<Vec<f64>> = if config.threads > 1 {
            holdout
                .par_iter()
                .map(|(inst, negs)| {
                    model.loss_value(
                        cap_tail(&inst.observed, config.history_cap),
                        &inst.future,
                        negs,
                        table,
                    )
                })
                .collect()
        } else {
            holdout
                .iter()
                .map(|(inst, negs)| {
                    model.loss_value(
                        cap_tail(&inst.observed, config.history_cap),
                        &inst.future,
                        negs,
                        table,
                    )
                })
                .collect()
        };
        let losses = losses?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    };

    let n_params = model.flat().len();
    let mut adam = Adam::new(n_params, config.learning_rate);
    let mut schedule = PlateauSchedule::new(
        config.learning_rate,
        config.lr_decay,
        config.plateau_patience,
        config.max_reductions,
    );
    let mut log = TrainLog {
        initial_lr: config.learning_rate,
        initial_holdout_loss: eval_holdout(&model)?,
        best_holdout_loss: f64::INFINITY,
        ..TrainLog::default()
    };

    let mut best = model.clone();
    let mut order = train_idx.clone();
    let mut epoch_rng = rng::seeded(rng::derive(config.seed, 0x3b0c));
    let mut neg_rng = rng::seeded(rng::derive(config.seed, 0x9e90));
    let mut update = 0usize;

    'training: loop {
        order.shuffle(&mut epoch_rng);
        for batch in order.chunks(config.batch_size) {
            // Negatives are resampled per minibatch, serially, so parallel
            // gradient evaluation cannot perturb the random stream.
            let batch_negs: Vec<Vec<usize>> = batch
                .iter()
                .map(|&i| draw_instance_negatives(&alias, &instances[i], config, &mut neg_rng))
                .collect::<Result<_>>()?;

            let per_instance: Result<Vec<(f64, Vec<f64>)>> = if config.threads > 1 {
                batch
                    .par_iter()
                    .zip(batch_negs.par_iter())
                    .map(|(&i, negs)| {
                        let inst = &instances[i];
                        model.loss_grad(
                            cap_tail(&inst.observed, config.history_cap),
                            &inst.future,
                            negs,
                            table,
                        )
                    })
                    .collect()
            } else {
                batch
                    .iter()
                    .zip(batch_negs.iter())
                    .map(|(&i, negs)| {
                        let inst = &instances[i];
                        model.loss_grad(
                            cap_tail(&inst.observed, config.history_cap),
                            &inst.future,
                            negs,
                            table,
                        )
                    })
                    .collect()
            };
            let per_instance = per_instance?;

            let scale = 1.0 / batch.len() as f64;
            let mut grad = vec![0.0; n_params];
            let mut batch_loss = 0.0;
            for (loss, g) in &per_instance {
                batch_loss += loss * scale;
                axpy(&mut grad, scale, g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!("batch loss at update {update}")));
            }

            clip_global_norm(&mut grad, 10.0);
            adam.step(model.flat_mut(), &grad)?;
            update += 1;

            if update.is_multiple_of(eval_period) {
                let hl = eval_holdout(&model)?;
                if !hl.is_finite() {
                    return Err(Error::NonFinite(format!("holdout loss at update {update}")));
                }
                let action = schedule.observe(hl);
                log.events.push(TrainEvent::Assessment {
                    update,
                    holdout_loss: hl,
                    improved: action == PlateauAction::Improved,
                });
                match action {
                    PlateauAction::Improved => {
                        best = model.clone();
                        log.best_holdout_loss = hl;
                    }
                    PlateauAction::NoImprovement => {}
                    PlateauAction::Reduced { new_lr, exhausted } => {
                        adam.set_lr(new_lr);
                        log.events.push(TrainEvent::LrReduced {
                            update,
                            new_lr,
                            reduction: schedule.reductions(),
                        });
                        if exhausted {
                            log.events.push(TrainEvent::Terminated {
                                update,
                                reductions: schedule.reductions(),
                            });
                            break 'training;
                        }
                    }
                }
            }

            if config.max_updates > 0 && update >= config.max_updates {
                log.events.push(TrainEvent::MaxUpdatesReached { update });
                break 'training;
            }
        }
    }

    log.final_update = update;
    if log.best_holdout_loss.is_infinite() {
        // No assessment ever improved on +inf (cannot happen with finite
        // losses), or training stopped before the first assessment.
        best = model;
        log.best_holdout_loss = log.initial_holdout_loss;
    }
    Ok((best, log))
}

fn draw_instance_negatives(
    alias: &AliasTable,
    instance: &SplitInstance,
    config: &TrainConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<usize>> {
    let mut exclude: HashSet<usize> = instance.future.iter().copied().collect();
    if config.exclude_observed {
        exclude.extend(instance.observed.iter().copied());
    }
    sample_negatives(alias, config.n_negatives, &exclude, rng)
}

/// Trains a fresh attention model (orthogonal matrices, zero biases and
/// score vector) on the given instances.
pub fn train(
    instances: &[SplitInstance],
    table: &EmbeddingTable,
    depth: usize,
    hidden_dim: usize,
    config: &TrainConfig,
) -> Result<(AttentionParams, TrainLog)> {
    if depth == 0 || hidden_dim == 0 {
        return Err(Error::InvalidArg(
            "attention model needs depth >= 1 and hidden dim >= 1".into(),
        ));
    }
    let params = AttentionParams::init(
        table.dim(),
        hidden_dim,
        depth,
        rng::derive(config.seed, 0xa77),
    );
    train_ranker(params, instances, table, config)
}

/// Summary of a full-model gradient check.
///
/// `max_rel_error` covers coordinates with real curvature;
/// `max_flat_abs_numeric` is the largest central-difference magnitude seen
/// on the provably-zero-gradient `c_f` coordinates, where relative error
/// against an exact analytic zero would only measure floating-point noise
/// (see [`AttentionParams::flat_direction_indices`]).
#[derive(Debug, Clone)]
pub struct GradCheckSummary {
    pub max_rel_error: f64,
    pub max_flat_abs_numeric: f64,
    pub n_checked: usize,
    pub n_flat_checked: usize,
}

/// Checks analytic instance-loss gradients against central differences on
/// random models and instances.
pub fn gradient_check(
    depth: usize,
    input_dim: usize,
    hidden_dim: usize,
    history_len: usize,
    n_instances: usize,
    coords_per_instance: usize,
    seed: u64,
) -> Result<GradCheckSummary> {
    use rand::Rng;
    let mut master = rng::seeded(seed);
    let mut summary = GradCheckSummary {
        max_rel_error: 0.0,
        max_flat_abs_numeric: 0.0,
        n_checked: 0,
        n_flat_checked: 0,
    };

    for _ in 0..n_instances {
        let n_items = history_len + 8;
        let ids: Vec<String> = (0..n_items).map(|i| format!("i{i}")).collect();
        let flat: Vec<f64> = (0..n_items * input_dim)
            .map(|_| master.random::<f64>() * 2.0 - 1.0)
            .collect();
        let table = EmbeddingTable::from_vectors(input_dim, ids, flat)?;

        let mut params = AttentionParams::init(input_dim, hidden_dim, depth, master.random());
        // Jitter every parameter away from its init so biases and w are
        // active directions.
        for v in params.flat_mut().iter_mut() {
            *v += 0.3 * (master.random::<f64>() - 0.5);
        }

        let instance = SplitInstance {
            user_id: "gradcheck".into(),
            observed: (0..history_len).collect(),
            future: vec![history_len, history_len + 1],
        };
        let negatives = vec![history_len + 2, history_len + 3, history_len + 4];

        let (_, analytic) = instance_loss(&params, &instance, &negatives, &table)?;
        let flat_dirs = params.flat_direction_indices();

        let n = params.n_params();
        let mut coords: Vec<usize> = (0..n).collect();
        coords.shuffle(&mut master);
        coords.truncate(coords_per_instance.min(n));

        let epsilon = 1e-5;
        let mut work = params.flat().to_vec();
        for &c in &coords {
            let orig = work[c];
            work[c] = orig + epsilon;
            let plus = loss_at(&params, &work, &instance, &negatives, &table)?;
            work[c] = orig - epsilon;
            let minus = loss_at(&params, &work, &instance, &negatives, &table)?;
            work[c] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let g = analytic.flat()[c];
            if flat_dirs.contains(&c) {
                debug_assert_eq!(g, 0.0);
                summary.max_flat_abs_numeric = summary.max_flat_abs_numeric.max(numeric.abs());
                summary.n_flat_checked += 1;
            } else {
                let rel = (g - numeric).abs() / (g.abs() + numeric.abs()).max(1e-8);
                summary.max_rel_error = summary.max_rel_error.max(rel);
                summary.n_checked += 1;
            }
        }
    }
    Ok(summary)
}

fn loss_at(
    template: &AttentionParams,
    flat: &[f64],
    instance: &SplitInstance,
    negatives: &[usize],
    table: &EmbeddingTable,
) -> Result<f64> {
    let probe = AttentionParams {
        input_dim: template.input_dim,
        hidden_dim: template.hidden_dim,
        depth: template.depth,
        data: flat.to_vec(),
    };
    instance_loss_value(&probe, instance, negatives, table)
}
