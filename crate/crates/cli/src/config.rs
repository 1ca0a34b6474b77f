//! Sectioned key=value run configuration.
//!
//! A run is described by one static file plus `--set section.key=value`
//! overrides; precedence is flags > file > defaults. Every key is validated
//! up front and unknown sections or keys are rejected before any work
//! starts.

use attnrec::attncf::TrainConfig;
use attnrec::rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Raw (section, key) -> value pairs, before typing.
#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    values: BTreeMap<(String, String), String>,
}

impl RawConfig {
    pub fn parse_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut raw = RawConfig::default();
        let mut section = String::new();
        for (lineno, line) in text.lines().enumerate() {
            let n = lineno + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    CliError::Usage(format!(
                        "{}:{n}: unterminated section header",
                        path.display()
                    ))
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{}:{n}: expected key = value", path.display()))
            })?;
            if section.is_empty() {
                return Err(CliError::Usage(format!(
                    "{}:{n}: key before any [section]",
                    path.display()
                )));
            }
            raw.values.insert(
                (section.clone(), key.trim().to_string()),
                value.trim().to_string(),
            );
        }
        Ok(raw)
    }

    /// Applies one `section.key=value` override.
    pub fn apply_set(&mut self, spec: &str) -> Result<(), CliError> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set {spec}: expected section.key=value")))?;
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| CliError::Usage(format!("--set {spec}: expected section.key=value")))?;
        self.values.insert(
            (section.trim().to_string(), key.trim().to_string()),
            value.trim().to_string(),
        );
        Ok(())
    }
}

fn fnv64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Typed pull of one key; deletes it from the raw map so leftovers can be
/// reported as unknown.
struct Extractor {
    values: BTreeMap<(String, String), String>,
}

impl Extractor {
    fn take(&mut self, section: &str, key: &str) -> Option<String> {
        self.values.remove(&(section.to_string(), key.to_string()))
    }

    fn parse<T: std::str::FromStr>(
        &mut self,
        section: &str,
        key: &str,
        default: T,
    ) -> Result<T, CliError> {
        match self.take(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                CliError::Usage(format!("config {section}.{key}: cannot parse `{v}`"))
            }),
        }
    }

    fn parse_list<T: std::str::FromStr>(
        &mut self,
        section: &str,
        key: &str,
        default: Vec<T>,
    ) -> Result<Vec<T>, CliError> {
        match self.take(section, key) {
            None => Ok(default),
            Some(v) if v.trim().is_empty() => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|part| {
                    part.trim().parse().map_err(|_| {
                        CliError::Usage(format!("config {section}.{key}: cannot parse `{part}`"))
                    })
                })
                .collect(),
        }
    }
}

/// Which models an evaluation run scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Popularity,
    LastItem,
    WeightedSum,
    Dan,
    Attn,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "popularity" => Ok(ModelKind::Popularity),
            "last_item" => Ok(ModelKind::LastItem),
            "weighted_sum" => Ok(ModelKind::WeightedSum),
            "dan" => Ok(ModelKind::Dan),
            "attn" => Ok(ModelKind::Attn),
            other => Err(format!("unknown model `{other}`")),
        }
    }
}

/// Fully typed and validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: usize,

    pub log_path: Option<PathBuf>,
    pub min_user_events: usize,
    pub min_item_count: usize,
    pub boundary: Option<i64>,
    pub boundary_fraction: f64,

    pub synth_users: usize,
    pub synth_items: usize,
    pub synth_clusters: usize,
    pub synth_events_per_user: usize,
    pub synth_concentration: f64,

    pub embed_dim: usize,
    pub embed_window: usize,
    pub embed_negatives: usize,
    pub embed_gamma: f64,
    pub embed_learning_rate: f64,
    pub embed_epochs: usize,

    pub attn_depth: usize,
    pub attn_hidden: usize,
    pub attn_depth_grid: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub plateau_patience: usize,
    pub lr_decay: f64,
    pub max_reductions: usize,
    pub eval_period: usize,
    pub n_future: usize,
    pub n_negatives: usize,
    pub train_gamma: f64,
    pub history_cap: usize,
    pub holdout_fraction: f64,
    pub holdout_cap: usize,
    pub max_updates: usize,
    pub exclude_observed: bool,

    pub dan_hidden: usize,
    pub dan_layers: usize,

    pub ws_iterations: usize,
    pub ws_population: Option<usize>,
    pub ws_sigma0: f64,
    pub ws_tune_negatives: usize,
    pub ws_tune_users: usize,

    pub eval_models: Vec<ModelKind>,
    pub eval_gammas: Vec<f64>,
    pub eval_n_negatives: Vec<usize>,
    pub eval_k_grid: Vec<usize>,
    pub bootstrap_resamples: usize,

    digest: u64,
}

impl RunConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self, CliError> {
        // Hash the canonical key=value listing before extraction consumes it.
        let mut canonical = String::new();
        for ((section, key), value) in &raw.values {
            let _ = writeln!(canonical, "{section}.{key}={value}");
        }
        let digest = fnv64(canonical.as_bytes());

        let mut ex = Extractor { values: raw.values };

        let config = RunConfig {
            seed: ex.parse("run", "seed", 42u64)?,
            out_dir: PathBuf::from(
                ex.take("run", "out_dir")
                    .unwrap_or_else(|| "run-out".into()),
            ),
            threads: ex.parse("run", "threads", 1usize)?,

            log_path: ex.take("corpus", "log").map(PathBuf::from),
            min_user_events: ex.parse("corpus", "min_user_events", 3usize)?,
            min_item_count: ex.parse("corpus", "min_item_count", 2usize)?,
            boundary: match ex.take("corpus", "boundary") {
                None => None,
                Some(v) => Some(v.parse().map_err(|_| {
                    CliError::Usage(format!("config corpus.boundary: cannot parse `{v}`"))
                })?),
            },
            boundary_fraction: ex.parse("corpus", "boundary_fraction", 0.8f64)?,

            synth_users: ex.parse("synth", "users", 2000usize)?,
            synth_items: ex.parse("synth", "items", 500usize)?,
            synth_clusters: ex.parse("synth", "clusters", 10usize)?,
            synth_events_per_user: ex.parse("synth", "events_per_user", 40usize)?,
            synth_concentration: ex.parse("synth", "concentration", 0.4f64)?,

            embed_dim: ex.parse("embed", "dim", 64usize)?,
            embed_window: ex.parse("embed", "window", 5usize)?,
            embed_negatives: ex.parse("embed", "negatives", 5usize)?,
            embed_gamma: ex.parse("embed", "gamma", 0.75f64)?,
            embed_learning_rate: ex.parse("embed", "learning_rate", 0.025f64)?,
            embed_epochs: ex.parse("embed", "epochs", 5usize)?,

            attn_depth: ex.parse("attn", "depth", 10usize)?,
            attn_hidden: ex.parse("attn", "hidden", 128usize)?,
            attn_depth_grid: ex.parse_list("attn", "depth_grid", Vec::new())?,
            batch_size: ex.parse("attn", "batch", 64usize)?,
            learning_rate: ex.parse("attn", "learning_rate", 0.002f64)?,
            plateau_patience: ex.parse("attn", "patience", 5usize)?,
            lr_decay: ex.parse("attn", "lr_decay", 0.8f64)?,
            max_reductions: ex.parse("attn", "max_reductions", 20usize)?,
            eval_period: ex.parse("attn", "eval_period", 0usize)?,
            n_future: ex.parse("attn", "n_future", 10usize)?,
            n_negatives: ex.parse("attn", "n_negatives", 100usize)?,
            train_gamma: ex.parse("attn", "gamma", 0.75f64)?,
            history_cap: ex.parse("attn", "history_cap", 200usize)?,
            holdout_fraction: ex.parse("attn", "holdout_fraction", 0.05f64)?,
            holdout_cap: ex.parse("attn", "holdout_cap", 2000usize)?,
            max_updates: ex.parse("attn", "max_updates", 0usize)?,
            exclude_observed: ex.parse("attn", "exclude_observed", false)?,

            dan_hidden: ex.parse("dan", "hidden", 128usize)?,
            dan_layers: ex.parse("dan", "layers", 2usize)?,

            ws_iterations: ex.parse("ws", "iterations", 40usize)?,
            ws_population: match ex.parse("ws", "population", 0usize)? {
                0 => None,
                n => Some(n),
            },
            ws_sigma0: ex.parse("ws", "sigma0", 0.5f64)?,
            ws_tune_negatives: ex.parse("ws", "tune_negatives", 50usize)?,
            ws_tune_users: ex.parse("ws", "tune_users", 300usize)?,

            eval_models: ex.parse_list(
                "eval",
                "models",
                vec![
                    ModelKind::Popularity,
                    ModelKind::LastItem,
                    ModelKind::WeightedSum,
                    ModelKind::Dan,
                    ModelKind::Attn,
                ],
            )?,
            eval_gammas: ex.parse_list("eval", "gammas", vec![1.0, 0.75, 0.0])?,
            eval_n_negatives: ex.parse_list("eval", "n_negatives", vec![100, 500, 1000])?,
            eval_k_grid: ex.parse_list("eval", "k_grid", vec![1, 5, 10, 20, 50])?,
            bootstrap_resamples: ex.parse("eval", "bootstrap_resamples", 2000usize)?,

            digest,
        };

        if let Some(((section, key), _)) = ex.values.into_iter().next() {
            return Err(CliError::Usage(format!(
                "config: unknown key {section}.{key}"
            )));
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: &str| Err(CliError::Usage(format!("config: {msg}")));
        if self.threads == 0 {
            return bad("run.threads must be >= 1");
        }
        if self.min_user_events == 0 || self.min_item_count == 0 {
            return bad("corpus thresholds must be >= 1");
        }
        if !(0.0 < self.boundary_fraction && self.boundary_fraction < 1.0) {
            return bad("corpus.boundary_fraction must be in (0, 1)");
        }
        if self.synth_clusters > self.synth_items {
            return bad("synth.clusters cannot exceed synth.items");
        }
        if self.attn_depth == 0 || self.attn_hidden == 0 {
            return bad("attn.depth and attn.hidden must be >= 1");
        }
        if self.dan_hidden == 0 {
            return bad("dan.hidden must be >= 1");
        }
        for &g in self
            .eval_gammas
            .iter()
            .chain([&self.train_gamma, &self.embed_gamma])
        {
            if !(0.0..=1.0).contains(&g) {
                return bad("gamma values must be in [0, 1]");
            }
        }
        if self.eval_models.is_empty() {
            return bad("eval.models must list at least one model");
        }
        if self.eval_gammas.is_empty()
            || self.eval_n_negatives.is_empty()
            || self.eval_k_grid.is_empty()
        {
            return bad("eval grids must be non-empty");
        }
        if self.eval_k_grid.contains(&0) || self.eval_n_negatives.contains(&0) {
            return bad("eval grid entries must be >= 1");
        }
        if self.bootstrap_resamples == 0 {
            return bad("eval.bootstrap_resamples must be >= 1");
        }
        // Train-config invariants are shared with the library validator.
        self.train_config(0)
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    /// Assembles the shared training configuration; `salt` decorrelates the
    /// seed streams of independently trained models.
    pub fn train_config(&self, salt: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            plateau_patience: self.plateau_patience,
            lr_decay: self.lr_decay,
            max_reductions: self.max_reductions,
            eval_period: self.eval_period,
            n_future: self.n_future,
            n_negatives: self.n_negatives,
            gamma: self.train_gamma,
            seed: rng::derive(self.seed, salt),
            history_cap: self.history_cap,
            holdout_fraction: self.holdout_fraction,
            holdout_cap: self.holdout_cap,
            max_updates: self.max_updates,
            exclude_observed: self.exclude_observed,
            threads: self.threads,
        }
    }

    /// FNV-1a hash of the canonical section.key=value listing (defaults
    /// excluded), recorded in the run manifest.
    pub fn config_hash(&self) -> String {
        format!("{:016x}", self.digest)
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}
