//! Subcommand implementations.
//!
//! Every command validates its configuration before any side effect, drops
//! a `.partial` marker in the output directory while running, and refreshes
//! `manifest.json` on success.

use crate::config::{ModelKind, RunConfig};
use crate::manifest::{write_manifest, PartialMarker, RunLog};
use crate::CliError;
use attnrec::attncf::{self, AttentionParams, TrainEvent, TrainLog};
use attnrec::baselines::{
    cma_es_optimize, dan_gradient_check, dan_train, CmaOptions, DanParams, WeightedSumParams,
};
use attnrec::corpus::{self, HistoryEvent, SplitInstance, SynthConfig, UserHistory, Vocabulary};
use attnrec::embed::{self, EmbeddingTable, SkipGramConfig};
use attnrec::evalkit::{
    self, build_pool_grid, paired_significance, AttnScorer, DanScorer, EvalModel, LastItemScorer,
    MetricsReport, PopularityScorer, WeightedSumScorer,
};
use attnrec::numkit::{cosine, dot, finite_diff_check, log_logistic, logistic};
use attnrec::sampler::{build_alias, build_distribution, sample_negatives};
use attnrec::{rng, Error};
use serde_json::json;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

const SEED_SYNTH: u64 = 0x01;
const SEED_EMBED: u64 = 0x02;
const SEED_ATTN: u64 = 0x03;
const SEED_DAN: u64 = 0x04;
const SEED_WS: u64 = 0x05;
const SEED_POOLS: u64 = 0x06;
const SEED_TUNE_POOLS: u64 = 0x07;
const SEED_SIG: u64 = 0x08;

/// Artifact names a run may produce, for manifest checksumming. Training
/// logs are deterministic (no wall-clock content); `run.log.jsonl` is not
/// and stays out of the manifest.
fn artifact_names(config: &RunConfig) -> Vec<String> {
    let mut names: Vec<String> = [
        "interactions.tsv",
        "vocab.tsv",
        "embeddings.vec",
        "attn.ckpt",
        "attn.train.jsonl",
        "dan.ckpt",
        "dan.train.jsonl",
        "ws.params",
        "report.json",
        "fig_ndcg.csv",
        "fig_recall.csv",
        "fig_depth.csv",
        "significance.csv",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for &k in &config.attn_depth_grid {
        names.push(format!("attn_k{k}.ckpt"));
        names.push(format!("attn_k{k}.train.jsonl"));
    }
    names
}

fn finish(config: &RunConfig, marker: PartialMarker) -> Result<(), CliError> {
    let names = artifact_names(config);
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    write_manifest(&config.out_dir, &config.config_hash(), config.seed, &refs)?;
    marker.complete()
}

fn log_file_path(config: &RunConfig) -> PathBuf {
    config
        .log_path
        .clone()
        .unwrap_or_else(|| config.artifact("interactions.tsv"))
}

fn load_corpus(config: &RunConfig) -> Result<(Vocabulary, Vec<UserHistory>), CliError> {
    let path = log_file_path(config);
    if !path.exists() {
        return Err(CliError::Data(format!(
            "interaction log {} not found (set corpus.log or run `synth` first)",
            path.display()
        )));
    }
    Ok(corpus::ingest(
        &path,
        config.min_user_events,
        config.min_item_count,
    )?)
}

fn resolve_boundary(config: &RunConfig, histories: &[UserHistory]) -> Result<i64, CliError> {
    if let Some(b) = config.boundary {
        return Ok(b);
    }
    let (mut lo, mut hi) = (i64::MAX, i64::MIN);
    for h in histories {
        for e in &h.events {
            lo = lo.min(e.timestamp);
            hi = hi.max(e.timestamp);
        }
    }
    if lo > hi {
        return Err(CliError::Data("corpus has no events".into()));
    }
    Ok(lo + (((hi - lo + 1) as f64) * config.boundary_fraction).round() as i64)
}

fn load_table(config: &RunConfig) -> Result<EmbeddingTable, CliError> {
    let path = config.artifact("embeddings.vec");
    if !path.exists() {
        return Err(CliError::Data(format!(
            "{} not found (run `embed` first)",
            path.display()
        )));
    }
    Ok(EmbeddingTable::load(&path)?)
}

/// Training instances from the train-period histories, with the observed
/// events kept alongside for recency-aware tuning.
fn build_instances(
    histories: &[UserHistory],
    n_future: usize,
) -> Vec<(Vec<HistoryEvent>, SplitInstance)> {
    histories
        .iter()
        .filter_map(|h| corpus::temporal_split_with_events(h, n_future))
        .collect()
}

/// Items indexed against one vocabulary can be scored against embeddings
/// trained on the same vocabulary only; this guards stale artifacts.
fn check_vocab_alignment(vocab: &Vocabulary, table: &EmbeddingTable) -> Result<(), CliError> {
    if vocab.len() != table.len() {
        return Err(CliError::Usage(format!(
            "embedding table has {} items but the corpus vocabulary has {}; re-run `embed`",
            table.len(),
            vocab.len()
        )));
    }
    for i in 0..vocab.len() {
        if vocab.id(i) != table.id(i) {
            return Err(CliError::Usage(format!(
                "embedding table item {} is `{}` but the vocabulary has `{}`; re-run `embed`",
                i,
                table.id(i),
                vocab.id(i)
            )));
        }
    }
    Ok(())
}

pub fn cmd_synth(config: &RunConfig, log: &mut RunLog) -> Result<(), CliError> {
    let marker = PartialMarker::begin(&config.out_dir)?;
    let synth = SynthConfig {
        n_users: config.synth_users,
        n_items: config.synth_items,
        n_clusters: config.synth_clusters,
        events_per_user: config.synth_events_per_user,
        concentration: config.synth_concentration,
        seed: rng::derive(config.seed, SEED_SYNTH),
    };
    let (vocab, histories) = corpus::synth_generate(&synth)?;
    let path = config.artifact("interactions.tsv");
    corpus::write_log(&histories, &vocab, &path)?;
    let n_events: usize = histories.iter().map(|h| h.events.len()).sum();
    log.event(
        "synth",
        "written",
        json!({ "path": path.display().to_string(), "users": histories.len(), "events": n_events }),
    );
    finish(config, marker)
}

pub fn cmd_ingest(config: &RunConfig, log: &mut RunLog) -> Result<(), CliError> {
    let marker = PartialMarker::begin(&config.out_dir)?;
    let (vocab, histories) = load_corpus(config)?;
    vocab.save(&config.artifact("vocab.tsv"))?;
    let n_events: usize = histories.iter().map(|h| h.events.len()).sum();
    log.event(
        "ingest",
        "done",
        json!({ "users": histories.len(), "items": vocab.len(), "events": n_events }),
    );
    finish(config, marker)
}

pub fn cmd_embed(config: &RunConfig, log: &mut RunLog) -> Result<(), CliError> {
    let marker = PartialMarker::begin(&config.out_dir)?;
    let (vocab, histories) = load_corpus(config)?;
    let sg = SkipGramConfig {
        dim: config.embed_dim,
        window: config.embed_window,
        negatives: config.embed_negatives,
        gamma: config.embed_gamma,
        learning_rate: config.embed_learning_rate,
        epochs: config.embed_epochs,
        seed: rng::derive(config.seed, SEED_EMBED),
    };
    let ids: Vec<String> = (0..vocab.len()).map(|i| vocab.id(i).to_string()).collect();
    let table = embed::train_embeddings(&histories, vocab.counts(), ids, &sg)?;
    let path = config.artifact("embeddings.vec");
    table.save(&path)?;
    log.event(
        "embed",
        "written",
        json!({ "path": path.display().to_string(), "items": table.len(), "dim": table.dim() }),
    );
    finish(config, marker)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainModel {
    Attn,
    Dan,
}

fn dump_train_log(path: &PathBuf, log: &TrainLog) -> Result<(), CliError> {
    let mut w = BufWriter::new(
        File::create(path).map_err(|e| CliError::Data(format!("write {}: {e}", path.display())))?,
    );
    let mut emit = |value: serde_json::Value| -> std::io::Result<()> { writeln!(w, "{value}") };
    emit(json!({
        "event": "start",
        "initial_lr": log.initial_lr,
        "initial_holdout_loss": log.initial_holdout_loss,
    }))
    .map_err(|e| CliError::Data(e.to_string()))?;
    for event in &log.events {
        let value = match event {
            TrainEvent::Assessment {
                update,
                holdout_loss,
                improved,
            } => json!({
                "event": "assessment", "update": update,
                "holdout_loss": holdout_loss, "improved": improved,
            }),
            TrainEvent::LrReduced {
                update,
                new_lr,
                reduction,
            } => json!({
                "event": "lr_reduced", "update": update,
                "new_lr": new_lr, "reduction": reduction,
            }),
            TrainEvent::Terminated { update, reductions } => json!({
                "event": "terminated", "update": update, "reductions": reductions,
            }),
            TrainEvent::MaxUpdatesReached { update } => json!({
                "event": "max_updates_reached", "update": update,
            }),
        };
        emit(value).map_err(|e| CliError::Data(e.to_string()))?;
    }
    emit(json!({
        "event": "finished",
        "final_update": log.final_update,
        "best_holdout_loss": log.best_holdout_loss,
    }))
    .map_err(|e| CliError::Data(e.to_string()))?;
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

pub fn cmd_train(config: &RunConfig, log: &mut RunLog, model: TrainModel) -> Result<(), CliError> {
    let marker = PartialMarker::begin(&config.out_dir)?;
    let (vocab, histories) = load_corpus(config)?;
    let table = load_table(config)?;
    check_vocab_alignment(&vocab, &table)?;
    let boundary = resolve_boundary(config, &histories)?;
    let (train_histories, _) = corpus::train_test_split(&histories, boundary);
    let instances: Vec<SplitInstance> = build_instances(&train_histories, config.n_future)
        .into_iter()
        .map(|(_, i)| i)
        .collect();
    log.event(
        "train",
        "instances",
        json!({ "model": format!("{model:?}"), "count": instances.len(), "boundary": boundary }),
    );
    if instances.len() < 2 {
        return Err(CliError::Data(format!(
            "only {} training instances after splitting; need at least 2",
            instances.len()
        )));
    }

    match model {
        TrainModel::Attn => {
            let mut depths = vec![(config.attn_depth, "attn".to_string())];
            for &k in &config.attn_depth_grid {
                if k != config.attn_depth {
                    depths.push((k, format!("attn_k{k}")));
                }
            }
            for (depth, name) in depths {
                let train_cfg = config.train_config(rng::derive(SEED_ATTN, depth as u64));
                let (params, tlog) =
                    attncf::train(&instances, &table, depth, config.attn_hidden, &train_cfg)?;
                params.save(&config.artifact(&format!("{name}.ckpt")))?;
                dump_train_log(&config.artifact(&format!("{name}.train.jsonl")), &tlog)?;
                log.event(
                    "train",
                    "model_done",
                    json!({
                        "model": name, "depth": depth,
                        "updates": tlog.final_update,
                        "best_holdout_loss": tlog.best_holdout_loss,
                        "lr_reductions": tlog.n_reductions(),
                    }),
                );
            }
        }
        TrainModel::Dan => {
            let train_cfg = config.train_config(SEED_DAN);
            let (params, tlog) = dan_train(
                &instances,
                &table,
                config.dan_hidden,
                config.dan_layers,
                &train_cfg,
            )?;
            params.save(&config.artifact("dan.ckpt"))?;
            dump_train_log(&config.artifact("dan.train.jsonl"), &tlog)?;
            log.event(
                "train",
                "model_done",
                json!({
                    "model": "dan",
                    "updates": tlog.final_update,
                    "best_holdout_loss": tlog.best_holdout_loss,
                    "lr_reductions": tlog.n_reductions(),
                }),
            );
        }
    }
    finish(config, marker)
}

/// Decodes an unconstrained CMA-ES point into nonnegative weighted-sum
/// parameters: exponentials for the action weights, and a decay rate scaled
/// so that x = 0 means "one decay constant across the training time span".
fn decode_ws(x: &[f64], time_span: f64) -> WeightedSumParams {
    let base_rate = 1.0 / time_span.max(1.0);
    WeightedSumParams {
        recency_decay: x[0].clamp(-30.0, 30.0).exp() * base_rate,
        action_weights: [
            x[1].clamp(-30.0, 30.0).exp(),
            x[2].clamp(-30.0, 30.0).exp(),
            x[3].clamp(-30.0, 30.0).exp(),
            x[4].clamp(-30.0, 30.0).exp(),
        ],
    }
}

pub fn cmd_tune_ws(config: &RunConfig, log: &mut RunLog) -> Result<(), CliError> {
    let marker = PartialMarker::begin(&config.out_dir)?;
    let (vocab, histories) = load_corpus(config)?;
    let table = load_table(config)?;
    check_vocab_alignment(&vocab, &table)?;
    let boundary = resolve_boundary(config, &histories)?;
    let (train_histories, _) = corpus::train_test_split(&histories, boundary);

    let mut cases = build_instances(&train_histories, config.n_future);
    if cases.is_empty() {
        return Err(CliError::Data("no tuning instances after splitting".into()));
    }
    // Deterministic subsample of tuning users.
    let keep = rng::choose_subset(
        cases.len(),
        config.ws_tune_users.max(1),
        rng::derive(config.seed, SEED_WS),
    );
    cases = keep.into_iter().map(|i| cases[i].clone()).collect();

    // Fixed tuning pools: negatives per case from the training distribution,
    // excluding the case's observed and future items.
    let presence = corpus::user_presence_counts(&train_histories, vocab.len());
    let dist = build_distribution(&presence, config.train_gamma)?;
    let alias = build_alias(&dist);
    let mut pool_rng = rng::seeded(rng::derive(config.seed, SEED_TUNE_POOLS));
    let mut pools = Vec::with_capacity(cases.len());
    for (_, instance) in &cases {
        let exclude: HashSet<usize> = instance
            .observed
            .iter()
            .chain(&instance.future)
            .copied()
            .collect();
        let negatives =
            sample_negatives(&alias, config.ws_tune_negatives, &exclude, &mut pool_rng)?;
        let mut candidates = instance.future.clone();
        candidates.extend(negatives);
        pools.push(candidates);
    }

    let span = {
        let (mut lo, mut hi) = (i64::MAX, i64::MIN);
        for (events, _) in &cases {
            for e in events {
                lo = lo.min(e.timestamp);
                hi = hi.max(e.timestamp);
            }
        }
        (hi - lo).max(1) as f64
    };

    let objective = |x: &[f64]| -> f64 {
        let params = decode_ws(x, span);
        let mut total = 0.0;
        for ((events, instance), candidates) in cases.iter().zip(&pools) {
            let user =
                match attnrec::baselines::weighted_user_vector(&table, events, &params, boundary) {
                    Ok(v) => v,
                    Err(_) => return f64::NAN,
                };
            let scores: Vec<f64> = candidates
                .iter()
                .map(|&c| cosine(&user, table.vector(c)))
                .collect();
            let ranked = evalkit::rank_candidates(&scores, candidates);
            let relevant: HashSet<usize> = instance.future.iter().copied().collect();
            total += evalkit::ndcg(&ranked, &relevant);
        }
        -(total / cases.len() as f64)
    };

    let initial = vec![0.0; 5];
    let initial_objective = objective(&initial);
    let opts = CmaOptions {
        initial_mean: initial,
        sigma0: config.ws_sigma0,
        population: config.ws_population,
        iterations: config.ws_iterations,
        seed: rng::derive(config.seed, SEED_WS ^ 0xff),
    };
    let result = cma_es_optimize(objective, &opts)?;
    let params = decode_ws(&result.best, span);
    params.save(&config.artifact("ws.params"))?;
    log.event(
        "tune-ws",
        "done",
        json!({
            "cases": cases.len(),
            "initial_ndcg": -initial_objective,
            "tuned_ndcg": -result.best_value,
            "recency_decay": params.recency_decay,
            "action_weights": params.action_weights.to_vec(),
        }),
    );
    finish(config, marker)
}

/// Loaded model artifacts, living long enough to borrow scorers from.
struct LoadedModels {
    popularity_counts: Vec<u64>,
    attn: Vec<(String, u32, AttentionParams)>,
    dan: Option<DanParams>,
    ws: Option<WeightedSumParams>,
}

fn load_models(
    config: &RunConfig,
    vocab: &Vocabulary,
    train_histories: &[UserHistory],
    table: &EmbeddingTable,
    log: &mut RunLog,
) -> Result<LoadedModels, CliError> {
    let mut counts = vec![0u64; vocab.len()];
    for h in train_histories {
        for e in &h.events {
            counts[e.item] += 1;
        }
    }
    let mut loaded = LoadedModels {
        popularity_counts: counts,
        attn: Vec::new(),
        dan: None,
        ws: None,
    };
    for kind in &config.eval_models {
        match kind {
            ModelKind::Popularity | ModelKind::LastItem => {}
            ModelKind::WeightedSum => {
                let path = config.artifact("ws.params");
                loaded.ws = Some(if path.exists() {
                    WeightedSumParams::load(&path)?
                } else {
                    log.event(
                        "evaluate",
                        "ws_defaults",
                        json!({ "reason": "ws.params missing; using untuned defaults" }),
                    );
                    WeightedSumParams::default()
                });
            }
            ModelKind::Dan => {
                let path = config.artifact("dan.ckpt");
                if !path.exists() {
                    return Err(CliError::Data(format!(
                        "{} not found (run `train --model dan` first)",
                        path.display()
                    )));
                }
                loaded.dan = Some(DanParams::load(&path, table.dim())?);
            }
            ModelKind::Attn => {
                let path = config.artifact("attn.ckpt");
                if !path.exists() {
                    return Err(CliError::Data(format!(
                        "{} not found (run `train --model attn` first)",
                        path.display()
                    )));
                }
                loaded.attn.push((
                    "attn".to_string(),
                    config.attn_depth as u32,
                    AttentionParams::load(&path, table.dim())?,
                ));
                for &k in &config.attn_depth_grid {
                    if k == config.attn_depth {
                        continue;
                    }
                    let path = config.artifact(&format!("attn_k{k}.ckpt"));
                    if path.exists() {
                        loaded.attn.push((
                            format!("attn_k{k}"),
                            k as u32,
                            AttentionParams::load(&path, table.dim())?,
                        ));
                    }
                }
            }
        }
    }
    Ok(loaded)
}

pub fn cmd_evaluate(config: &RunConfig, log: &mut RunLog) -> Result<(), CliError> {
    let marker = PartialMarker::begin(&config.out_dir)?;
    let (vocab, histories) = load_corpus(config)?;
    let table = load_table(config)?;
    check_vocab_alignment(&vocab, &table)?;
    let boundary = resolve_boundary(config, &histories)?;
    let (train_histories, test_pairs) = corpus::train_test_split(&histories, boundary);
    if test_pairs.is_empty() {
        return Err(CliError::Data(
            "no test users after the boundary split".into(),
        ));
    }
    log.event(
        "evaluate",
        "split",
        json!({ "boundary": boundary, "train_users": train_histories.len(), "test_users": test_pairs.len() }),
    );

    let loaded = load_models(config, &vocab, &train_histories, &table, log)?;
    let presence = corpus::user_presence_counts(&train_histories, vocab.len());

    // Scorer wrappers; order follows eval.models, attn depth variants last.
    let popularity = PopularityScorer::new(loaded.popularity_counts.clone());
    let last_item = LastItemScorer::new(&table);
    let ws = loaded.ws.clone().map(|p| WeightedSumScorer::new(&table, p));
    let dan = loaded.dan.as_ref().map(|p| DanScorer::new(&table, p));
    let attn: Vec<(String, u32, AttnScorer)> = loaded
        .attn
        .iter()
        .map(|(name, depth, params)| {
            (
                name.clone(),
                *depth,
                AttnScorer::new(&table, params, config.history_cap),
            )
        })
        .collect();

    let mut models: Vec<EvalModel> = Vec::new();
    for kind in &config.eval_models {
        match kind {
            ModelKind::Popularity => models.push(EvalModel {
                name: "popularity".into(),
                depth: None,
                scorer: &popularity,
            }),
            ModelKind::LastItem => models.push(EvalModel {
                name: "last_item".into(),
                depth: None,
                scorer: &last_item,
            }),
            ModelKind::WeightedSum => models.push(EvalModel {
                name: "weighted_sum".into(),
                depth: None,
                scorer: ws.as_ref().expect("loaded above"),
            }),
            ModelKind::Dan => models.push(EvalModel {
                name: "dan".into(),
                depth: None,
                scorer: dan.as_ref().expect("loaded above"),
            }),
            ModelKind::Attn => {
                for (name, depth, scorer) in &attn {
                    models.push(EvalModel {
                        name: name.clone(),
                        depth: Some(*depth),
                        scorer,
                    });
                }
            }
        }
    }

    let mut report = MetricsReport::default();
    for &gamma in &config.eval_gammas {
        let dist = build_distribution(&presence, gamma)?;
        let pool_seed = rng::derive(config.seed, SEED_POOLS ^ gamma.to_bits());
        let sets = build_pool_grid(&test_pairs, &dist, &config.eval_n_negatives, pool_seed)?;
        for set in sets {
            log.event(
                "evaluate",
                "pools",
                json!({ "gamma": gamma, "n_negatives": set.n_negatives, "users": set.pools.len(), "skipped": set.skipped }),
            );
            let setting = evalkit::evaluate(
                &models,
                &test_pairs,
                &set,
                &config.eval_k_grid,
                boundary,
                config.threads,
            )?;
            for m in &setting.models {
                log.event(
                    "evaluate",
                    "metrics",
                    json!({ "gamma": gamma, "n_negatives": set.n_negatives, "model": m.model, "mean_ndcg": m.mean_ndcg }),
                );
            }
            report.settings.push(setting);
        }
    }

    evalkit::emit_report(&report, &config.out_dir)?;
    write_significance(config, &report)?;
    finish(config, marker)
}

/// Paired-bootstrap p-values on mean NDCG for every model pair, per
/// evaluation setting.
fn write_significance(config: &RunConfig, report: &MetricsReport) -> Result<(), CliError> {
    let path = config.artifact("significance.csv");
    let mut w = BufWriter::new(
        File::create(&path)
            .map_err(|e| CliError::Data(format!("write {}: {e}", path.display())))?,
    );
    writeln!(
        w,
        "gamma,n_negatives,model_a,model_b,mean_ndcg_a,mean_ndcg_b,p_value"
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    for setting in &report.settings {
        for (i, a) in setting.models.iter().enumerate() {
            for b in setting.models.iter().skip(i + 1) {
                let p = paired_significance(
                    &a.ndcg_per_user,
                    &b.ndcg_per_user,
                    config.bootstrap_resamples,
                    rng::derive(config.seed, SEED_SIG),
                )?;
                writeln!(
                    w,
                    "{},{},{},{},{:.6},{:.6},{:.6}",
                    setting.gamma,
                    setting.n_negatives,
                    a.model,
                    b.model,
                    a.mean_ndcg,
                    b.mean_ndcg,
                    p
                )
                .map_err(|e| CliError::Data(e.to_string()))?;
            }
        }
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

pub fn cmd_pipeline(config: &RunConfig, log: &mut RunLog) -> Result<(), CliError> {
    if config.log_path.is_none() {
        cmd_synth(config, log)?;
    }
    cmd_ingest(config, log)?;
    cmd_embed(config, log)?;
    if config.eval_models.contains(&ModelKind::Attn) {
        cmd_train(config, log, TrainModel::Attn)?;
    }
    if config.eval_models.contains(&ModelKind::Dan) {
        cmd_train(config, log, TrainModel::Dan)?;
    }
    if config.eval_models.contains(&ModelKind::WeightedSum) {
        cmd_tune_ws(config, log)?;
    }
    cmd_evaluate(config, log)?;
    log.event(
        "pipeline",
        "done",
        json!({ "out_dir": config.out_dir.display().to_string() }),
    );
    Ok(())
}

pub fn cmd_grad_check(config: &RunConfig, log: &mut RunLog) -> Result<(), CliError> {
    let mut failed = false;

    // Kernel sanity: quadratic and logistic scalar models.
    let params: Vec<f64> = (0..16).map(|i| (i as f64) * 0.31 - 2.0).collect();
    let grad = params.clone();
    let quad = finite_diff_check(
        |p| 0.5 * dot(p, p),
        &params,
        &grad,
        1e-5,
        1e-7,
        64,
        &mut rng::seeded(1),
    );
    log.event(
        "grad-check",
        "numkit_quadratic",
        json!({ "max_rel_error": quad.max_rel_error }),
    );
    failed |= !quad.passed();

    let x = vec![0.8];
    let lgrad = vec![logistic(0.8) - 1.0];
    let lgc = finite_diff_check(
        |p| -log_logistic(p[0]),
        &x,
        &lgrad,
        1e-5,
        1e-7,
        4,
        &mut rng::seeded(2),
    );
    log.event(
        "grad-check",
        "numkit_logistic",
        json!({ "max_rel_error": lgc.max_rel_error }),
    );
    failed |= !lgc.passed();

    for depth in [1usize, 3] {
        let summary = attncf::gradient_check(
            depth,
            8,
            6,
            5,
            10,
            25,
            rng::derive(config.seed, depth as u64),
        )?;
        log.event(
            "grad-check",
            "attention",
            json!({
                "depth": depth,
                "coords": summary.n_checked,
                "max_rel_error": summary.max_rel_error,
                "flat_coords": summary.n_flat_checked,
                "max_flat_abs_numeric": summary.max_flat_abs_numeric,
            }),
        );
        failed |= summary.max_rel_error >= 1e-5 || summary.max_flat_abs_numeric >= 1e-8;
    }

    let dan = dan_gradient_check(8, 16, 2, 6, 10, 25, rng::derive(config.seed, 99))?;
    log.event(
        "grad-check",
        "dan",
        json!({ "coords": dan.n_checked, "max_rel_error": dan.max_rel_error }),
    );
    failed |= dan.max_rel_error >= 1e-5;

    if failed {
        return Err(CliError::Numeric(
            "gradient check exceeded tolerance".into(),
        ));
    }
    log.event("grad-check", "passed", json!({}));
    Ok(())
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArg(_) | Error::Shape(_) => CliError::Usage(e.to_string()),
            Error::NonFinite(_) => CliError::Numeric(e.to_string()),
            Error::Io(_)
            | Error::Parse { .. }
            | Error::Empty(_)
            | Error::Infeasible(_)
            | Error::Format(_) => CliError::Data(e.to_string()),
        }
    }
}
