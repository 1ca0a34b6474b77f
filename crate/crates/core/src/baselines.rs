//! The four comparison rankers: popularity, last item, a tunable weighted
//! sum of history embeddings, and a deep averaging network (DAN).
//!
//! The weighted-sum baseline's five free parameters (one recency decay rate
//! plus four action-type weights) are tuned with [`cma_es_optimize`]; the
//! DAN trains with exactly the attention model's minibatch/plateau engine,
//! swapping in its own forward/backward.

use crate::attncf::{train_ranker, TrainConfig, TrainLog, TrainableRanker};
use crate::corpus::{Action, HistoryEvent, SplitInstance};
use crate::embed::EmbeddingTable;
use crate::numkit::{
    axpy, cosine, dot, log_logistic, logistic, matvec, matvec_t, orthogonal_init, outer_acc,
};
use crate::{rng, Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

// ---------------------------------------------------------------------------
// Popularity and last item
// ---------------------------------------------------------------------------

/// Ranks candidates by descending training-data frequency; ties break by
/// ascending item index.
pub fn popularity_rank(counts: &[u64], candidates: &[usize]) -> Vec<usize> {
    let mut ranked = candidates.to_vec();
    ranked.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    ranked
}

/// Cosine similarity between the query and the last item the user touched.
pub fn last_item_score(
    table: &EmbeddingTable,
    history: &[HistoryEvent],
    query: usize,
) -> Result<f64> {
    let last = history
        .last()
        .ok_or_else(|| Error::InvalidArg("last_item_score on empty history".into()))?;
    Ok(cosine(table.vector(last.item), table.vector(query)))
}

// ---------------------------------------------------------------------------
// Weighted sum
// ---------------------------------------------------------------------------

/// Free parameters of the weighted-sum user vector: exponential recency
/// decay times a per-action-type weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSumParams {
    /// Decay rate per second of age; 0 disables recency weighting.
    pub recency_decay: f64,
    /// Weight per action type, indexed by [`Action::index`].
    pub action_weights: [f64; 4],
}

impl Default for WeightedSumParams {
    fn default() -> Self {
        WeightedSumParams {
            recency_decay: 0.0,
            action_weights: [1.0; 4],
        }
    }
}

impl WeightedSumParams {
    pub fn validate(&self) -> Result<()> {
        if self.recency_decay < 0.0 || self.action_weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidArg(
                "weighted sum parameters must be nonnegative".into(),
            ));
        }
        if self.action_weights.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidArg(
                "at least one action weight must be positive".into(),
            ));
        }
        Ok(())
    }

    /// key=value text, one parameter per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "recency_decay={:.17e}", self.recency_decay)?;
        for (action, weight) in Action::ALL.iter().zip(&self.action_weights) {
            writeln!(w, "w_{}={:.17e}", action.as_str(), weight)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<WeightedSumParams> {
        let label = path.display().to_string();
        let mut params = WeightedSumParams::default();
        let mut seen = HashSet::new();
        for (lineno, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            let n = lineno + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(&label, n, "expected key=value"))?;
            let value: f64 = value
                .parse()
                .map_err(|_| Error::parse(&label, n, format!("bad float `{value}`")))?;
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(&label, n, format!("duplicate key `{key}`")));
            }
            match key {
                "recency_decay" => params.recency_decay = value,
                _ => {
                    let action = key
                        .strip_prefix("w_")
                        .and_then(Action::parse)
                        .ok_or_else(|| Error::parse(&label, n, format!("unknown key `{key}`")))?;
                    params.action_weights[action.index()] = value;
                }
            }
        }
        params.validate()?;
        Ok(params)
    }
}

/// Recency- and action-weighted average of history item embeddings.
///
/// Weights are normalized against the most recent event's decay factor, so
/// arbitrarily large decay rates degrade gracefully to the last event's item
/// vector instead of underflowing to 0/0. Events are summed in a canonical
/// (timestamp, item, action) order, making the result exactly invariant to
/// permutations of the input.
pub fn weighted_user_vector(
    table: &EmbeddingTable,
    history: &[HistoryEvent],
    params: &WeightedSumParams,
    now: i64,
) -> Result<Vec<f64>> {
    params.validate()?;
    if history.is_empty() {
        return Err(Error::InvalidArg(
            "weighted_user_vector on empty history".into(),
        ));
    }
    let mut events: Vec<&HistoryEvent> = history.iter().collect();
    events.sort_by_key(|e| (e.timestamp, e.item, e.action.index()));

    // Ages are taken relative to the newest event: the common factor
    // exp(-decay * (now - newest)) cancels in the normalization, so `now`
    // drops out and the exponentials stay in range for arbitrarily large
    // decay rates.
    let newest = events.iter().map(|e| e.timestamp).max().unwrap();
    let _ = now;
    let mut acc = vec![0.0; table.dim()];
    let mut total = 0.0;
    for e in &events {
        let age = (newest - e.timestamp) as f64;
        let w = params.action_weights[e.action.index()] * (-params.recency_decay * age).exp();
        if w > 0.0 {
            axpy(&mut acc, w, table.vector(e.item));
            total += w;
        }
    }
    if total <= 0.0 {
        return Err(Error::InvalidArg(
            "weighted_user_vector: every event weight underflowed to zero".into(),
        ));
    }
    for v in acc.iter_mut() {
        *v /= total;
    }
    Ok(acc)
}

/// Cosine between the weighted user vector and the query embedding.
pub fn weighted_sum_score(
    table: &EmbeddingTable,
    history: &[HistoryEvent],
    params: &WeightedSumParams,
    now: i64,
    query: usize,
) -> Result<f64> {
    let user = weighted_user_vector(table, history, params, now)?;
    Ok(cosine(&user, table.vector(query)))
}

// ---------------------------------------------------------------------------
// CMA-ES
// ---------------------------------------------------------------------------

/// Options for [`cma_es_optimize`]. Dimension is taken from `initial_mean`.
#[derive(Debug, Clone)]
pub struct CmaOptions {
    pub initial_mean: Vec<f64>,
    pub sigma0: f64,
    /// Candidates per generation; `None` picks `4 + floor(3 ln dim)`.
    pub population: Option<usize>,
    pub iterations: usize,
    pub seed: u64,
}

impl CmaOptions {
    pub fn new(initial_mean: Vec<f64>, iterations: usize, seed: u64) -> Self {
        CmaOptions {
            initial_mean,
            sigma0: 0.5,
            population: None,
            iterations,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CmaResult {
    pub best: Vec<f64>,
    pub best_value: f64,
    /// Running best objective after each generation (non-increasing).
    pub best_per_iteration: Vec<f64>,
}

/// Minimizes a black-box objective with (mu/mu_w, lambda) CMA-ES: weighted
/// recombination, cumulative step-size adaptation, and rank-one plus rank-mu
/// covariance updates under the standard Hansen parameterization. The best
/// evaluated point (including the initial mean) is tracked elitistically.
/// Non-finite objective values discard the candidate via a large penalty.
/// Deterministic given the seed.
pub fn cma_es_optimize<F>(objective: F, options: &CmaOptions) -> Result<CmaResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = options.initial_mean.len();
    if dim == 0 {
        return Err(Error::InvalidArg(
            "cma_es_optimize: dimension must be >= 1".into(),
        ));
    }
    if !options.sigma0.is_finite() || options.sigma0 <= 0.0 {
        return Err(Error::InvalidArg(
            "cma_es_optimize: sigma0 must be positive".into(),
        ));
    }
    let n = dim as f64;
    let lambda = options
        .population
        .unwrap_or(4 + (3.0 * n.ln()).floor() as usize)
        .max(2);
    let mu = lambda / 2;

    // Recombination weights and effective selection mass.
    let raw: Vec<f64> = (0..mu)
        .map(|i| (mu as f64 + 0.5).ln() - ((i + 1) as f64).ln())
        .collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    // Hansen's default learning rates.
    let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
    let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
    let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
    let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
    let c_mu = (2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff)).min(1.0 - c_1);
    let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

    let mut mean = DVector::from_column_slice(&options.initial_mean);
    let mut sigma = options.sigma0;
    let mut cov: DMatrix<f64> = DMatrix::identity(dim, dim);
    let mut p_sigma: DVector<f64> = DVector::zeros(dim);
    let mut p_c: DVector<f64> = DVector::zeros(dim);
    let mut rng = rng::seeded(options.seed);

    let penalized = |x: &[f64]| -> f64 {
        let v = objective(x);
        if v.is_finite() {
            v
        } else {
            f64::MAX / 4.0
        }
    };

    let mut best = options.initial_mean.clone();
    let mut best_value = penalized(&best);
    let mut best_per_iteration = Vec::with_capacity(options.iterations);

    for gen in 0..options.iterations {
        // C = B D^2 B^T; sampling uses B D, the sigma path uses B D^-1 B^T.
        let eigen = SymmetricEigen::new(cov.clone());
        let sqrt_vals = eigen.eigenvalues.map(|v| v.max(1e-30).sqrt());
        let bd = &eigen.eigenvectors * DMatrix::from_diagonal(&sqrt_vals);
        let inv_sqrt = &eigen.eigenvectors
            * DMatrix::from_diagonal(&sqrt_vals.map(|v| 1.0 / v))
            * eigen.eigenvectors.transpose();

        let candidates: Vec<DVector<f64>> = (0..lambda)
            .map(|_| {
                let z = DVector::from_iterator(
                    dim,
                    (0..dim).map(|_| {
                        let s: f64 = StandardNormal.sample(&mut rng);
                        s
                    }),
                );
                &mean + sigma * &bd * z
            })
            .collect();

        let values: Vec<f64> = candidates
            .par_iter()
            .map(|c| penalized(c.as_slice()))
            .collect();

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| {
            values[a]
                .partial_cmp(&values[b])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        if values[order[0]] < best_value {
            best_value = values[order[0]];
            best = candidates[order[0]].as_slice().to_vec();
        }
        best_per_iteration.push(best_value);

        let old_mean = mean.clone();
        let mut new_mean = DVector::zeros(dim);
        for (w, &idx) in weights.iter().zip(&order) {
            new_mean += *w * &candidates[idx];
        }
        let mean_shift = (&new_mean - &old_mean) / sigma;

        p_sigma = (1.0 - c_sigma) * &p_sigma
            + (c_sigma * (2.0 - c_sigma) * mu_eff).sqrt() * &inv_sqrt * &mean_shift;
        let ps_norm = p_sigma.norm();
        let decay_h = 1.0 - (1.0 - c_sigma).powi(2 * (gen as i32 + 1));
        let h_sigma = if ps_norm / decay_h.sqrt() < (1.4 + 2.0 / (n + 1.0)) * chi_n {
            1.0
        } else {
            0.0
        };

        p_c = (1.0 - c_c) * &p_c + h_sigma * (c_c * (2.0 - c_c) * mu_eff).sqrt() * &mean_shift;

        let mut rank_mu = DMatrix::zeros(dim, dim);
        for (w, &idx) in weights.iter().zip(&order) {
            let y = (&candidates[idx] - &old_mean) / sigma;
            rank_mu += *w * &y * y.transpose();
        }
        let delta_h = (1.0 - h_sigma) * c_c * (2.0 - c_c);
        cov = (1.0 - c_1 - c_mu + c_1 * delta_h) * cov
            + c_1 * &p_c * p_c.transpose()
            + c_mu * rank_mu;
        cov = (&cov + cov.transpose()) * 0.5;

        sigma *= ((c_sigma / d_sigma) * (ps_norm / chi_n - 1.0)).exp();
        sigma = sigma.clamp(1e-30, 1e8);
        mean = new_mean;

        if mean.iter().any(|v| !v.is_finite()) || !sigma.is_finite() {
            return Err(Error::NonFinite(format!(
                "cma-es state at generation {gen}"
            )));
        }
    }

    Ok(CmaResult {
        best,
        best_value,
        best_per_iteration,
    })
}

// ---------------------------------------------------------------------------
// Deep averaging network
// ---------------------------------------------------------------------------

const DAN_MAGIC: &[u8; 6] = b"DANCF1";

/// Feedforward stack mapping the averaged history vector back into embedding
/// space: `n_hidden` ReLU layers of `hidden_dim` units, then a linear output
/// layer of width `input_dim`. The relevance score is
/// `sigma(mu(mean history vector) . x_query)`; the sigmoid shares the
/// attention model's logistic loss machinery and leaves rankings unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct DanParams {
    input_dim: usize,
    hidden_dim: usize,
    n_hidden: usize,
    data: Vec<f64>,
}

impl DanParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize, n_hidden: usize) -> Self {
        let n = Self::param_count(input_dim, hidden_dim, n_hidden);
        DanParams {
            input_dim,
            hidden_dim,
            n_hidden,
            data: vec![0.0; n],
        }
    }

    /// Orthogonal weights, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, n_hidden: usize, seed: u64) -> Self {
        let mut p = Self::zeros(input_dim, hidden_dim, n_hidden);
        let mut r = rng::seeded(seed);
        for layer in 0..p.n_layers() {
            let (rows, cols) = p.layer_shape(layer);
            let m = orthogonal_init(rows, cols, &mut r);
            let (off, len) = p.weight_off(layer);
            p.data[off..off + len].copy_from_slice(m.as_slice());
        }
        p
    }

    pub fn param_count(input_dim: usize, hidden_dim: usize, n_hidden: usize) -> usize {
        let mut total = 0;
        let mut inp = input_dim;
        for _ in 0..n_hidden {
            total += hidden_dim * inp + hidden_dim;
            inp = hidden_dim;
        }
        total + input_dim * inp + input_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn n_hidden(&self) -> usize {
        self.n_hidden
    }

    /// Linear layers including the output layer.
    pub fn n_layers(&self) -> usize {
        self.n_hidden + 1
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

    fn layer_shape(&self, layer: usize) -> (usize, usize) {
        let inp = if layer == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        };
        let out = if layer == self.n_hidden {
            self.input_dim
        } else {
            self.hidden_dim
        };
        (out, inp)
    }

    fn layer_base(&self, layer: usize) -> usize {
        let mut off = 0;
        for l in 0..layer {
            let (rows, cols) = self.layer_shape(l);
            off += rows * cols + rows;
        }
        off
    }

    fn weight_off(&self, layer: usize) -> (usize, usize) {
        let (rows, cols) = self.layer_shape(layer);
        (self.layer_base(layer), rows * cols)
    }

    fn bias_off(&self, layer: usize) -> (usize, usize) {
        let (rows, cols) = self.layer_shape(layer);
        (self.layer_base(layer) + rows * cols, rows)
    }

    fn weight(&self, layer: usize) -> &[f64] {
        let (off, len) = self.weight_off(layer);
        &self.data[off..off + len]
    }

    fn bias(&self, layer: usize) -> &[f64] {
        let (off, len) = self.bias_off(layer);
        &self.data[off..off + len]
    }

    /// Checkpoint format mirrors the attention model's with its own magic:
    /// header is (input_dim, hidden_dim, n_hidden) as little-endian u32.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(DAN_MAGIC)?;
        for v in [
            self.input_dim as u32,
            self.hidden_dim as u32,
            self.n_hidden as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path, expected_input_dim: usize) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format(format!("{}: truncated header", path.display())))?;
        if &magic != DAN_MAGIC {
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
        let [d, dh, n_hidden] = header;
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
        let n = Self::param_count(d, dh, n_hidden);
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
        Ok(DanParams {
            input_dim: d,
            hidden_dim: dh,
            n_hidden,
            data,
        })
    }
}

/// Mean of distinct history item vectors, summed in ascending item order.
pub fn mean_history_vector(table: &EmbeddingTable, history: &[usize]) -> Result<Vec<f64>> {
    let mut items: Vec<usize> = history.to_vec();
    items.sort_unstable();
    items.dedup();
    if items.is_empty() {
        return Err(Error::InvalidArg(
            "mean_history_vector on empty history".into(),
        ));
    }
    let mut acc = vec![0.0; table.dim()];
    for &i in &items {
        if i >= table.len() {
            return Err(Error::InvalidArg(format!(
                "history item {i} outside vocabulary"
            )));
        }
        axpy(&mut acc, 1.0, table.vector(i));
    }
    let inv = 1.0 / items.len() as f64;
    for v in acc.iter_mut() {
        *v *= inv;
    }
    Ok(acc)
}

/// Layer activations of the feedforward stack, kept for the backward pass.
struct DanTrace {
    /// Post-activation output of each layer; index 0 is the input.
    acts: Vec<Vec<f64>>,
}

fn dan_forward(params: &DanParams, input: &[f64]) -> DanTrace {
    let mut acts = Vec::with_capacity(params.n_layers() + 1);
    acts.push(input.to_vec());
    let mut x = input.to_vec();
    for layer in 0..params.n_layers() {
        let (rows, cols) = params.layer_shape(layer);
        let mut y = matvec(params.weight(layer), rows, cols, &x);
        axpy(&mut y, 1.0, params.bias(layer));
        if layer < params.n_hidden {
            for v in y.iter_mut() {
                *v = v.max(0.0);
            }
        }
        acts.push(y.clone());
        x = y;
    }
    DanTrace { acts }
}

/// Accumulates parameter gradients for upstream d(loss)/d(mu output).
fn dan_backward(params: &DanParams, trace: &DanTrace, d_out: &[f64], grads: &mut DanParams) {
    let mut delta = d_out.to_vec();
    for layer in (0..params.n_layers()).rev() {
        let (rows, cols) = params.layer_shape(layer);
        if layer < params.n_hidden {
            // ReLU gate on this layer's (post-activation) output.
            for (dv, &a) in delta.iter_mut().zip(&trace.acts[layer + 1]) {
                if a <= 0.0 {
                    *dv = 0.0;
                }
            }
        }
        let input = &trace.acts[layer];
        {
            let (off, len) = grads.weight_off(layer);
            outer_acc(&mut grads.data[off..off + len], &delta, input);
        }
        {
            let (off, len) = grads.bias_off(layer);
            axpy(&mut grads.data[off..off + len], 1.0, &delta);
        }
        delta = matvec_t(params.weight(layer), rows, cols, &delta);
    }
}

/// Runs the feedforward stack on an already-averaged user vector.
pub fn dan_project(params: &DanParams, user_vector: &[f64]) -> Vec<f64> {
    let trace = dan_forward(params, user_vector);
    trace.acts.last().unwrap().clone()
}

/// `sigma(mu(mean history vector) . x_query)`.
pub fn dan_score(
    params: &DanParams,
    table: &EmbeddingTable,
    history: &[usize],
    query: usize,
) -> Result<f64> {
    if table.dim() != params.input_dim {
        return Err(Error::Shape(format!(
            "embedding dim {} does not match DAN input dim {}",
            table.dim(),
            params.input_dim
        )));
    }
    if query >= table.len() {
        return Err(Error::InvalidArg(format!(
            "query item {query} outside vocabulary"
        )));
    }
    let user = mean_history_vector(table, history)?;
    let projected = dan_project(params, &user);
    Ok(logistic(dot(&projected, table.vector(query))))
}

impl TrainableRanker for DanParams {
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
        if future.is_empty() || negatives.is_empty() {
            return Err(Error::InvalidArg(
                "DAN loss needs non-empty future and negative sets".into(),
            ));
        }
        let user = mean_history_vector(table, observed)?;
        let trace = dan_forward(self, &user);
        let mu_out = trace.acts.last().unwrap().clone();

        // The network runs once per instance; every query only contributes
        // a rank-one term d(loss)/d(mu_out) = dy * x_q.
        let mut loss = 0.0;
        let mut d_out = vec![0.0; self.input_dim];
        let pos_w = 1.0 / (2.0 * future.len() as f64);
        for &q in future {
            let y = dot(&mu_out, table.vector(q));
            loss -= pos_w * log_logistic(y);
            axpy(&mut d_out, -pos_w * (1.0 - logistic(y)), table.vector(q));
        }
        let neg_w = 1.0 / (2.0 * negatives.len() as f64);
        for &q in negatives {
            let y = dot(&mu_out, table.vector(q));
            loss -= neg_w * log_logistic(-y);
            axpy(&mut d_out, neg_w * logistic(y), table.vector(q));
        }

        let mut grads = DanParams::zeros(self.input_dim, self.hidden_dim, self.n_hidden);
        dan_backward(self, &trace, &d_out, &mut grads);
        Ok((loss, grads.data))
    }

    fn loss_value(
        &self,
        observed: &[usize],
        future: &[usize],
        negatives: &[usize],
        table: &EmbeddingTable,
    ) -> Result<f64> {
        if future.is_empty() || negatives.is_empty() {
            return Err(Error::InvalidArg(
                "DAN loss needs non-empty future and negative sets".into(),
            ));
        }
        let user = mean_history_vector(table, observed)?;
        let trace = dan_forward(self, &user);
        let mu_out = trace.acts.last().unwrap();
        let mut loss = 0.0;
        let pos_w = 1.0 / (2.0 * future.len() as f64);
        for &q in future {
            loss -= pos_w * log_logistic(dot(mu_out, table.vector(q)));
        }
        let neg_w = 1.0 / (2.0 * negatives.len() as f64);
        for &q in negatives {
            loss -= neg_w * log_logistic(-dot(mu_out, table.vector(q)));
        }
        Ok(loss)
    }
}

/// Trains a fresh DAN with the shared minibatch/plateau engine.
pub fn dan_train(
    instances: &[SplitInstance],
    table: &EmbeddingTable,
    hidden_dim: usize,
    n_hidden: usize,
    config: &TrainConfig,
) -> Result<(DanParams, TrainLog)> {
    if hidden_dim == 0 {
        return Err(Error::InvalidArg("DAN needs hidden dim >= 1".into()));
    }
    let params = DanParams::init(
        table.dim(),
        hidden_dim,
        n_hidden,
        rng::derive(config.seed, 0xda2),
    );
    train_ranker(params, instances, table, config)
}

/// Finite-difference check of the DAN instance-loss gradients.
pub fn dan_gradient_check(
    input_dim: usize,
    hidden_dim: usize,
    n_hidden: usize,
    history_len: usize,
    n_instances: usize,
    coords_per_instance: usize,
    seed: u64,
) -> Result<crate::numkit::GradCheckReport> {
    use rand::seq::SliceRandom;
    use rand::Rng;
    let mut master = rng::seeded(seed);
    let mut worst = crate::numkit::GradCheckReport {
        n_checked: 0,
        max_rel_error: 0.0,
        worst_coord: 0,
        tolerance: 1e-5,
    };

    for _ in 0..n_instances {
        let n_items = history_len + 8;
        let ids: Vec<String> = (0..n_items).map(|i| format!("i{i}")).collect();
        let flat: Vec<f64> = (0..n_items * input_dim)
            .map(|_| master.random::<f64>() * 2.0 - 1.0)
            .collect();
        let table = EmbeddingTable::from_vectors(input_dim, ids, flat)?;

        let mut params = DanParams::init(input_dim, hidden_dim, n_hidden, master.random());
        for v in params.flat_mut().iter_mut() {
            *v += 0.3 * (master.random::<f64>() - 0.5);
        }

        let observed: Vec<usize> = (0..history_len).collect();
        let future = vec![history_len, history_len + 1];
        let negatives = vec![history_len + 2, history_len + 3, history_len + 4];

        let (_, analytic) = params.loss_grad(&observed, &future, &negatives, &table)?;

        let mut coords: Vec<usize> = (0..params.n_params()).collect();
        coords.shuffle(&mut master);
        coords.truncate(coords_per_instance.min(params.n_params()));

        let epsilon = 1e-5;
        let mut work = params.flat().to_vec();
        for &c in &coords {
            let orig = work[c];
            work[c] = orig + epsilon;
            let plus = dan_loss_at(&params, &work, &observed, &future, &negatives, &table)?;
            work[c] = orig - epsilon;
            let minus = dan_loss_at(&params, &work, &observed, &future, &negatives, &table)?;
            work[c] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let rel = (analytic[c] - numeric).abs() / (analytic[c].abs() + numeric.abs()).max(1e-8);
            if rel > worst.max_rel_error {
                worst.max_rel_error = rel;
                worst.worst_coord = c;
            }
            worst.n_checked += 1;
        }
    }
    Ok(worst)
}

fn dan_loss_at(
    template: &DanParams,
    flat: &[f64],
    observed: &[usize],
    future: &[usize],
    negatives: &[usize],
    table: &EmbeddingTable,
) -> Result<f64> {
    let probe = DanParams {
        input_dim: template.input_dim,
        hidden_dim: template.hidden_dim,
        n_hidden: template.n_hidden,
        data: flat.to_vec(),
    };
    probe.loss_value(observed, future, negatives, table)
}
