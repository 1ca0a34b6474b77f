//! Interaction logs, vocabularies, temporal splits, and synthetic corpora.
//!
//! Ingestion maps opaque string item ids to dense indices; everything
//! downstream speaks indices. Histories are immutable once built and safe to
//! share across threads.
//!
//! Log file format: UTF-8 text, one event per line,
//! `user_id<TAB>item_id<TAB>action<TAB>timestamp`; lines starting with `#`
//! are ignored.

use crate::{rng, Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// The four implicit-feedback action types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Purchase,
    View,
    StreamVideo,
    StreamMusic,
}

impl Action {
    pub const ALL: [Action; 4] = [
        Action::Purchase,
        Action::View,
        Action::StreamVideo,
        Action::StreamMusic,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Action::Purchase => "purchase",
            Action::View => "view",
            Action::StreamVideo => "stream_video",
            Action::StreamMusic => "stream_music",
        }
    }

    pub fn parse(s: &str) -> Option<Action> {
        match s {
            "purchase" => Some(Action::Purchase),
            "view" => Some(Action::View),
            "stream_video" => Some(Action::StreamVideo),
            "stream_music" => Some(Action::StreamMusic),
            _ => None,
        }
    }

    /// Dense index into per-action weight arrays.
    pub fn index(&self) -> usize {
        match self {
            Action::Purchase => 0,
            Action::View => 1,
            Action::StreamVideo => 2,
            Action::StreamMusic => 3,
        }
    }
}

/// A raw log record, before item ids are interned.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionEvent {
    pub user_id: String,
    pub item_id: String,
    pub action: Action,
    pub timestamp: i64,
}

/// One interaction in index space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistoryEvent {
    pub item: usize,
    pub action: Action,
    pub timestamp: i64,
}

/// A user's events, ascending by timestamp (ties keep input order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserHistory {
    pub user_id: String,
    pub events: Vec<HistoryEvent>,
}

impl UserHistory {
    /// Distinct item indices in first-occurrence order.
    pub fn distinct_items(&self) -> Vec<usize> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for e in &self.events {
            if seen.insert(e.item) {
                out.push(e.item);
            }
        }
        out
    }
}

/// Bidirectional item-id/index map with post-filter interaction counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
}

impl Vocabulary {
    fn new() -> Self {
        Vocabulary {
            ids: Vec::new(),
            index: HashMap::new(),
            counts: Vec::new(),
        }
    }

    fn intern(&mut self, id: &str) -> usize {
        if let Some(&i) = self.index.get(id) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), i);
        self.counts.push(0);
        i
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn count(&self, index: usize) -> u64 {
        self.counts[index]
    }

    /// Per-item interaction counts (event occurrences after filtering).
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Writes `index<TAB>item_id<TAB>count` lines, index-ascending.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (i, (id, c)) in self.ids.iter().zip(&self.counts).enumerate() {
            writeln!(w, "{i}\t{id}\t{c}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let label = path.display().to_string();
        let reader = BufReader::new(File::open(path)?);
        let mut vocab = Vocabulary::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let n = lineno + 1;
            let mut parts = line.split('\t');
            let (idx, id, count) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), Some(c), None) => (a, b, c),
                _ => {
                    return Err(Error::parse(
                        &label,
                        n,
                        "expected index<TAB>item_id<TAB>count",
                    ))
                }
            };
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::parse(&label, n, format!("bad index `{idx}`")))?;
            if idx != vocab.len() {
                return Err(Error::parse(&label, n, format!("index {idx} out of order")));
            }
            let count: u64 = count
                .parse()
                .map_err(|_| Error::parse(&label, n, format!("bad count `{count}`")))?;
            let interned = vocab.intern(id);
            vocab.counts[interned] = count;
        }
        Ok(vocab)
    }
}

/// One training instance: a user's earlier (observed) and later (future)
/// distinct items, disjoint by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitInstance {
    pub user_id: String,
    pub observed: Vec<usize>,
    pub future: Vec<usize>,
}

/// One evaluation case from the train/test boundary split: the user's
/// training-period events plus the distinct new items they touched in the
/// test period.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestPair {
    pub user_id: String,
    pub train_events: Vec<HistoryEvent>,
    pub test_items: Vec<usize>,
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

fn parse_line(label: &str, lineno: usize, line: &str) -> Result<InteractionEvent> {
    let mut parts = line.split('\t');
    let (user, item, action, ts) = match (
        parts.next(),
        parts.next(),
        parts.next(),
        parts.next(),
        parts.next(),
    ) {
        (Some(a), Some(b), Some(c), Some(d), None) => (a, b, c, d),
        _ => {
            return Err(Error::parse(
                label,
                lineno,
                "expected user_id<TAB>item_id<TAB>action<TAB>timestamp",
            ))
        }
    };
    if user.is_empty() || item.is_empty() {
        return Err(Error::parse(label, lineno, "empty user or item id"));
    }
    let action = Action::parse(action)
        .ok_or_else(|| Error::parse(label, lineno, format!("unknown action `{action}`")))?;
    let timestamp: i64 = ts
        .parse()
        .map_err(|_| Error::parse(label, lineno, format!("bad timestamp `{ts}`")))?;
    if timestamp < 0 {
        return Err(Error::parse(label, lineno, "negative timestamp"));
    }
    Ok(InteractionEvent {
        user_id: user.to_string(),
        item_id: item.to_string(),
        action,
        timestamp,
    })
}

/// Reads an interaction log, drops rare items and sparse users, and returns
/// the vocabulary plus per-user time-sorted histories.
///
/// Items with fewer than `min_item_count` occurrences and users with fewer
/// than `min_user_events` surviving events are removed; the two filters are
/// iterated to a fixed point so re-ingesting the written output of `ingest`
/// reproduces identical structures. Counts reflect post-filter frequencies.
pub fn ingest(
    path: &Path,
    min_user_events: usize,
    min_item_count: usize,
) -> Result<(Vocabulary, Vec<UserHistory>)> {
    let label = path.display().to_string();
    let reader = BufReader::new(File::open(path)?);
    ingest_reader(reader, &label, min_user_events, min_item_count)
}

pub fn ingest_reader(
    reader: impl BufRead,
    label: &str,
    min_user_events: usize,
    min_item_count: usize,
) -> Result<(Vocabulary, Vec<UserHistory>)> {
    let mut events: Vec<InteractionEvent> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        events.push(parse_line(label, lineno + 1, &line)?);
    }

    // Group by user in first-appearance order; stable sort keeps input order
    // on timestamp ties.
    let mut user_order: Vec<String> = Vec::new();
    let mut by_user: HashMap<String, Vec<InteractionEvent>> = HashMap::new();
    for ev in events {
        if !by_user.contains_key(&ev.user_id) {
            user_order.push(ev.user_id.clone());
        }
        by_user.entry(ev.user_id.clone()).or_default().push(ev);
    }
    let mut users: Vec<(String, Vec<InteractionEvent>)> = user_order
        .into_iter()
        .map(|u| {
            let mut evs = by_user.remove(&u).unwrap();
            evs.sort_by_key(|e| e.timestamp);
            (u, evs)
        })
        .collect();

    // Iterate the (item-count, user-event) filters to a fixed point.
    loop {
        let mut item_counts: HashMap<&str, u64> = HashMap::new();
        for (_, evs) in &users {
            for e in evs {
                *item_counts.entry(e.item_id.as_str()).or_default() += 1;
            }
        }
        let dropped_items: HashSet<String> = item_counts
            .iter()
            .filter(|(_, &c)| (c as usize) < min_item_count)
            .map(|(id, _)| id.to_string())
            .collect();

        let mut changed = !dropped_items.is_empty();
        if changed {
            for (_, evs) in users.iter_mut() {
                evs.retain(|e| !dropped_items.contains(&e.item_id));
            }
        }
        let before = users.len();
        users.retain(|(_, evs)| evs.len() >= min_user_events);
        changed |= users.len() != before;
        if !changed {
            break;
        }
    }

    if users.is_empty() {
        return Err(Error::Empty(format!(
            "no users left after filtering (min_user_events={min_user_events}, min_item_count={min_item_count})"
        )));
    }

    // Index assignment by first appearance in the surviving event stream.
    let mut vocab = Vocabulary::new();
    let mut histories = Vec::with_capacity(users.len());
    for (user_id, evs) in users {
        let events = evs
            .into_iter()
            .map(|e| {
                let item = vocab.intern(&e.item_id);
                vocab.counts[item] += 1;
                HistoryEvent {
                    item,
                    action: e.action,
                    timestamp: e.timestamp,
                }
            })
            .collect();
        histories.push(UserHistory { user_id, events });
    }
    Ok((vocab, histories))
}

/// Writes histories back out in the ingestion log format (users in slice
/// order, events in time order). Inverse of [`ingest`] up to filtering.
pub fn write_log(histories: &[UserHistory], vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for h in histories {
        for e in &h.events {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                h.user_id,
                vocab.id(e.item),
                e.action.as_str(),
                e.timestamp
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// Temporally partitions one history into observed and future item sets.
///
/// The future side takes the most recent events covering exactly `n_future`
/// distinct items; the observed side is every distinct earlier item not also
/// in the future set (future wins overlaps). Returns `None` (skip) when the
/// history has fewer than `n_future + 1` distinct items.
pub fn temporal_split(history: &UserHistory, n_future: usize) -> Option<SplitInstance> {
    temporal_split_with_events(history, n_future).map(|(_, instance)| instance)
}

/// [`temporal_split`] plus the observed-side events themselves (everything
/// strictly before the future window), which recency-aware scorers need.
pub fn temporal_split_with_events(
    history: &UserHistory,
    n_future: usize,
) -> Option<(Vec<HistoryEvent>, SplitInstance)> {
    assert!(n_future >= 1, "n_future must be at least 1");
    let events = &history.events;

    // Walk backwards until n_future distinct items are covered.
    let mut future_set: HashSet<usize> = HashSet::new();
    let mut cut = events.len();
    for (i, e) in events.iter().enumerate().rev() {
        if future_set.len() == n_future && !future_set.contains(&e.item) {
            break;
        }
        future_set.insert(e.item);
        cut = i;
        debug_assert!(future_set.len() <= n_future);
    }
    if future_set.len() < n_future {
        return None;
    }

    let mut observed = Vec::new();
    let mut seen = HashSet::new();
    for e in &events[..cut] {
        if !future_set.contains(&e.item) && seen.insert(e.item) {
            observed.push(e.item);
        }
    }
    if observed.is_empty() {
        return None;
    }

    // Future items in chronological first-occurrence order.
    let mut future = Vec::new();
    let mut seen_f = HashSet::new();
    for e in &events[cut..] {
        if future_set.contains(&e.item) && seen_f.insert(e.item) {
            future.push(e.item);
        }
    }

    // Observed-side events drop future items entirely (future wins
    // overlaps), mirroring the id-level rule.
    let observed_events: Vec<HistoryEvent> = events[..cut]
        .iter()
        .filter(|e| !future_set.contains(&e.item))
        .copied()
        .collect();
    Some((
        observed_events,
        SplitInstance {
            user_id: history.user_id.clone(),
            observed,
            future,
        },
    ))
}

/// Splits histories at a boundary timestamp: training events strictly before
/// it, test items are the distinct at-or-after items the user never touched
/// during training. Users without training events are dropped entirely;
/// users without (new) test items keep their training side but produce no
/// test pair.
pub fn train_test_split(
    histories: &[UserHistory],
    boundary: i64,
) -> (Vec<UserHistory>, Vec<TestPair>) {
    let mut train = Vec::new();
    let mut pairs = Vec::new();
    for h in histories {
        let split_at = h.events.partition_point(|e| e.timestamp < boundary);
        if split_at == 0 {
            continue;
        }
        let train_events: Vec<HistoryEvent> = h.events[..split_at].to_vec();
        let train_items: HashSet<usize> = train_events.iter().map(|e| e.item).collect();

        let mut test_items = Vec::new();
        let mut seen = HashSet::new();
        for e in &h.events[split_at..] {
            if !train_items.contains(&e.item) && seen.insert(e.item) {
                test_items.push(e.item);
            }
        }

        train.push(UserHistory {
            user_id: h.user_id.clone(),
            events: train_events.clone(),
        });
        if !test_items.is_empty() {
            pairs.push(TestPair {
                user_id: h.user_id.clone(),
                train_events,
                test_items,
            });
        }
    }
    (train, pairs)
}

/// Per-item count of users with at least one interaction, over `n_items`
/// vocabulary slots. This is the count the smoothed sampling distribution is
/// built from.
pub fn user_presence_counts(histories: &[UserHistory], n_items: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_items];
    for h in histories {
        let mut seen = HashSet::new();
        for e in &h.events {
            if seen.insert(e.item) {
                counts[e.item] += 1;
            }
        }
    }
    counts
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

/// Parameters for planted-cluster synthetic data.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_clusters: usize,
    pub events_per_user: usize,
    /// Symmetric Dirichlet concentration for per-user cluster preferences.
    pub concentration: f64,
    pub seed: u64,
}

/// Generates a corpus with planted cluster structure: items are partitioned
/// evenly into clusters, each user draws cluster preferences from a
/// symmetric Dirichlet, and events pick a cluster by preference then an item
/// uniformly within it. Timestamps are strictly increasing per user and
/// interleave users on a shared timeline so boundary splits cut every user
/// at the same event index. Deterministic given the seed.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Vocabulary, Vec<UserHistory>)> {
    if cfg.n_users == 0 || cfg.n_items == 0 || cfg.n_clusters == 0 || cfg.events_per_user == 0 {
        return Err(Error::InvalidArg(
            "synth_generate: all sizes must be >= 1".into(),
        ));
    }
    if cfg.n_clusters > cfg.n_items {
        return Err(Error::InvalidArg(format!(
            "synth_generate: {} clusters over {} items",
            cfg.n_clusters, cfg.n_items
        )));
    }
    if !cfg.concentration.is_finite() || cfg.concentration <= 0.0 {
        return Err(Error::InvalidArg(
            "synth_generate: concentration must be positive".into(),
        ));
    }

    let mut vocab = Vocabulary::new();
    let width = (cfg.n_items as f64).log10().ceil().max(1.0) as usize;
    for i in 0..cfg.n_items {
        vocab.intern(&format!("item{i:0width$}"));
    }
    // Item -> cluster by even partition: cluster c owns [c*per, (c+1)*per).
    let cluster_of = |item: usize| (item * cfg.n_clusters / cfg.n_items).min(cfg.n_clusters - 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_clusters];
    for item in 0..cfg.n_items {
        members[cluster_of(item)].push(item);
    }

    let gamma_dist = Gamma::new(cfg.concentration, 1.0)
        .map_err(|e| Error::InvalidArg(format!("dirichlet concentration: {e}")))?;
    let uwidth = (cfg.n_users as f64).log10().ceil().max(1.0) as usize;

    let mut histories = Vec::with_capacity(cfg.n_users);
    for u in 0..cfg.n_users {
        let mut rng = rng::seeded(rng::derive(cfg.seed, u as u64));
        // Dirichlet draw via normalized gammas.
        let mut prefs: Vec<f64> = (0..cfg.n_clusters)
            .map(|_| gamma_dist.sample(&mut rng))
            .collect();
        let total: f64 = prefs.iter().sum();
        if total <= 0.0 {
            // Tiny concentration can underflow every gamma draw; fall back
            // to a single random preferred cluster.
            let c = rng.random_range(0..cfg.n_clusters);
            prefs = vec![0.0; cfg.n_clusters];
            prefs[c] = 1.0;
        } else {
            for p in prefs.iter_mut() {
                *p /= total;
            }
        }
        let mut cum = prefs.clone();
        for i in 1..cum.len() {
            cum[i] += cum[i - 1];
        }

        let mut events = Vec::with_capacity(cfg.events_per_user);
        for j in 0..cfg.events_per_user {
            let r: f64 = rng.random();
            let c = cum.partition_point(|&x| x < r).min(cfg.n_clusters - 1);
            let item = members[c][rng.random_range(0..members[c].len())];
            let action = Action::ALL[rng.random_range(0..Action::ALL.len())];
            let timestamp = (j * cfg.n_users + u) as i64;
            vocab.counts[item] += 1;
            events.push(HistoryEvent {
                item,
                action,
                timestamp,
            });
        }
        histories.push(UserHistory {
            user_id: format!("user{u:0uwidth$}"),
            events,
        });
    }
    Ok((vocab, histories))
}

/// Deterministically selects a holdout subset of indices (for early-stopping
/// instance sets and tuning subsets).
pub fn holdout_partition(
    n: usize,
    fraction: f64,
    cap: usize,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let k = ((n as f64 * fraction).round() as usize)
        .clamp(1, cap.max(1))
        .min(n.saturating_sub(1).max(1));
    let holdout = idx[..k].to_vec();
    let rest = idx[k..].to_vec();
    (rest, holdout)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn ev(item: usize, t: i64) -> HistoryEvent {
        HistoryEvent {
            item,
            action: Action::View,
            timestamp: t,
        }
    }

    fn ingest_str(
        s: &str,
        min_user: usize,
        min_item: usize,
    ) -> Result<(Vocabulary, Vec<UserHistory>)> {
        ingest_reader(Cursor::new(s.to_string()), "test.tsv", min_user, min_item)
    }

    #[test]
    fn ingest_identity_case() {
        let (vocab, hist) = ingest_str(
            "u1\ta\tview\t3\nu1\tb\tpurchase\t1\nu1\tc\tstream_music\t2\n",
            1,
            1,
        )
        .unwrap();
        assert_eq!(hist.len(), 1);
        let ts: Vec<i64> = hist[0].events.iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![1, 2, 3]);
        assert_eq!(vocab.len(), 3);
    }

    #[test]
    fn ingest_sorts_descending_input() {
        let (_, hist) =
            ingest_str("u\ta\tview\t30\nu\tb\tview\t20\nu\tc\tview\t10\n", 1, 1).unwrap();
        let ts: Vec<i64> = hist[0].events.iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![10, 20, 30]);
    }

    #[test]
    fn ingest_drops_rare_items() {
        let input = "u1\ta\tview\t1\nu1\tb\tview\t2\nu2\ta\tview\t3\nu2\tsingleton\tview\t4\nu2\tb\tview\t5\n";
        let (vocab, hist) = ingest_str(input, 1, 2).unwrap();
        assert!(vocab.index_of("singleton").is_none());
        for h in &hist {
            assert!(h.events.iter().all(|e| vocab.id(e.item) != "singleton"));
        }
    }

    #[test]
    fn ingest_filters_to_fixed_point() {
        // After dropping user u2 (too few events), item `b` falls below the
        // item threshold and must disappear too.
        let input = "u1\ta\tview\t1\nu1\ta\tview\t2\nu1\tb\tview\t3\nu2\tb\tview\t4\n";
        let (vocab, hist) = ingest_str(input, 2, 2).unwrap();
        assert_eq!(hist.len(), 1);
        assert!(vocab.index_of("b").is_none());
        assert_eq!(vocab.index_of("a"), Some(0));
        assert_eq!(vocab.count(0), 2);
    }

    #[test]
    fn ingest_reports_malformed_line_number() {
        let err = ingest_str("u\ta\tview\t1\nbogus line\n", 1, 1).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_bad_fields() {
        assert!(ingest_str("u\ta\tdance\t1\n", 1, 1).is_err());
        assert!(ingest_str("u\ta\tview\t-5\n", 1, 1).is_err());
        assert!(ingest_str("\ta\tview\t1\n", 1, 1).is_err());
        assert!(ingest_str("u\ta\tview\txyz\n", 1, 1).is_err());
    }

    #[test]
    fn ingest_empty_after_filter_errors() {
        assert!(matches!(
            ingest_str("u\ta\tview\t1\n", 5, 1),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn ingest_ignores_comments_and_blank_lines() {
        let (_, hist) = ingest_str("# header\n\nu\ta\tview\t1\n", 1, 1).unwrap();
        assert_eq!(hist[0].events.len(), 1);
    }

    #[test]
    fn ingest_roundtrip_is_idempotent() {
        let input = "u1\ta\tview\t1\nu1\tb\tpurchase\t2\nu1\ta\tstream_video\t3\n\
                     u2\tb\tview\t4\nu2\ta\tview\t5\nu2\tc\tview\t6\nu2\tb\tview\t7\n";
        let (v1, h1) = ingest_str(input, 3, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.tsv");
        write_log(&h1, &v1, &path).unwrap();
        let (v2, h2) = ingest(&path, 3, 2).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn vocab_save_load_roundtrip() {
        let (vocab, _) = ingest_str("u\ta\tview\t1\nu\tb\tview\t2\nu\ta\tview\t3\n", 1, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        vocab.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(vocab, loaded);
    }

    #[test]
    fn temporal_split_definition_case() {
        let events: Vec<HistoryEvent> = (0..15).map(|i| ev(i, i as i64)).collect();
        let h = UserHistory {
            user_id: "u".into(),
            events,
        };
        let s = temporal_split(&h, 10).unwrap();
        assert_eq!(s.observed, (0..5).collect::<Vec<_>>());
        assert_eq!(s.future, (5..15).collect::<Vec<_>>());
    }

    #[test]
    fn temporal_split_boundary_skip() {
        let events: Vec<HistoryEvent> = (0..10).map(|i| ev(i, i as i64)).collect();
        let h = UserHistory {
            user_id: "u".into(),
            events,
        };
        assert!(temporal_split(&h, 10).is_none());
    }

    #[test]
    fn temporal_split_dedup_rule() {
        // items [a, b, a, c], n_future = 1 -> future [c], observed [a, b]
        let h = UserHistory {
            user_id: "u".into(),
            events: vec![ev(0, 0), ev(1, 1), ev(0, 2), ev(2, 3)],
        };
        let s = temporal_split(&h, 1).unwrap();
        assert_eq!(s.future, vec![2]);
        assert_eq!(s.observed, vec![0, 1]);
    }

    #[test]
    fn temporal_split_future_wins_overlap() {
        // items [a, b, c, a]: the trailing `a` pulls a into the future set,
        // removing it from observed.
        let h = UserHistory {
            user_id: "u".into(),
            events: vec![ev(0, 0), ev(1, 1), ev(2, 2), ev(0, 3)],
        };
        let s = temporal_split(&h, 2).unwrap();
        assert_eq!(s.future, vec![2, 0]);
        assert_eq!(s.observed, vec![1]);
        let fs: HashSet<usize> = s.future.iter().copied().collect();
        assert!(s.observed.iter().all(|i| !fs.contains(i)));
    }

    #[test]
    fn train_test_split_removes_previously_seen() {
        // x before and after the boundary -> not a test item.
        let h = UserHistory {
            user_id: "u".into(),
            events: vec![ev(0, 0), ev(1, 5), ev(0, 10), ev(2, 11)],
        };
        let (train, pairs) = train_test_split(&[h], 10);
        assert_eq!(train.len(), 1);
        assert_eq!(train[0].events.len(), 2);
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].test_items, vec![2]);
    }

    #[test]
    fn train_test_split_excludes_users_without_test_side() {
        let h = UserHistory {
            user_id: "u".into(),
            events: vec![ev(0, 0), ev(1, 1)],
        };
        let (train, pairs) = train_test_split(&[h], 10);
        assert_eq!(train.len(), 1);
        assert!(pairs.is_empty());
    }

    #[test]
    fn train_test_split_boundary_is_half_open() {
        // An event exactly at the boundary lands on the test side.
        let h = UserHistory {
            user_id: "u".into(),
            events: vec![ev(0, 5), ev(1, 10)],
        };
        let (train, pairs) = train_test_split(&[h], 10);
        assert_eq!(train[0].events.len(), 1);
        assert_eq!(pairs[0].test_items, vec![1]);
    }

    #[test]
    fn train_test_split_drops_users_with_no_training_events() {
        let h = UserHistory {
            user_id: "u".into(),
            events: vec![ev(0, 20)],
        };
        let (train, pairs) = train_test_split(&[h], 10);
        assert!(train.is_empty());
        assert!(pairs.is_empty());
    }

    #[test]
    fn synth_is_reproducible() {
        let cfg = SynthConfig {
            n_users: 20,
            n_items: 30,
            n_clusters: 3,
            events_per_user: 15,
            concentration: 0.5,
            seed: 42,
        };
        let (v1, h1) = synth_generate(&cfg).unwrap();
        let (v2, h2) = synth_generate(&cfg).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(h1, h2);
    }

    #[test]
    fn synth_validates_sizes() {
        let bad = SynthConfig {
            n_users: 1,
            n_items: 2,
            n_clusters: 3,
            events_per_user: 1,
            concentration: 1.0,
            seed: 0,
        };
        assert!(synth_generate(&bad).is_err());
    }

    #[test]
    fn synth_single_cluster_covers_all_items() {
        let cfg = SynthConfig {
            n_users: 10,
            n_items: 12,
            n_clusters: 1,
            events_per_user: 30,
            concentration: 1.0,
            seed: 7,
        };
        let (vocab, _) = synth_generate(&cfg).unwrap();
        assert_eq!(vocab.len(), 12);
    }

    #[test]
    fn synth_timestamps_strictly_increase_per_user() {
        let cfg = SynthConfig {
            n_users: 5,
            n_items: 10,
            n_clusters: 2,
            events_per_user: 8,
            concentration: 1.0,
            seed: 3,
        };
        let (_, hist) = synth_generate(&cfg).unwrap();
        for h in &hist {
            for w in h.events.windows(2) {
                assert!(w[0].timestamp < w[1].timestamp);
            }
        }
    }

    #[test]
    fn synth_high_concentration_is_uniform_over_clusters() {
        // Monte Carlo against the analytic uniform limit: with very large
        // concentration every user's preferences are ~uniform, so per-cluster
        // usage over 10^5 events should match 1/n_clusters with L1 < 0.02.
        let cfg = SynthConfig {
            n_users: 500,
            n_items: 100,
            n_clusters: 5,
            events_per_user: 200,
            concentration: 1e6,
            seed: 11,
        };
        let (_, hist) = synth_generate(&cfg).unwrap();
        let mut cluster_counts = vec![0u64; cfg.n_clusters];
        let per = cfg.n_items / cfg.n_clusters;
        let mut total = 0u64;
        for h in &hist {
            for e in &h.events {
                cluster_counts[e.item / per] += 1;
                total += 1;
            }
        }
        assert_eq!(total as usize, cfg.n_users * cfg.events_per_user);
        let l1: f64 = cluster_counts
            .iter()
            .map(|&c| (c as f64 / total as f64 - 1.0 / cfg.n_clusters as f64).abs())
            .sum();
        assert!(l1 < 0.02, "L1 {l1}");
    }

    #[test]
    fn user_presence_counts_count_users_not_events() {
        let h1 = UserHistory {
            user_id: "a".into(),
            events: vec![ev(0, 0), ev(0, 1), ev(1, 2)],
        };
        let h2 = UserHistory {
            user_id: "b".into(),
            events: vec![ev(0, 0)],
        };
        let counts = user_presence_counts(&[h1, h2], 3);
        assert_eq!(counts, vec![2, 1, 0]);
    }

    #[test]
    fn holdout_partition_is_disjoint_and_complete() {
        let (rest, hold) = holdout_partition(100, 0.05, 2000, 9);
        assert_eq!(rest.len() + hold.len(), 100);
        assert_eq!(hold.len(), 5);
        let all: HashSet<usize> = rest.iter().chain(hold.iter()).copied().collect();
        assert_eq!(all.len(), 100);
    }

    proptest::proptest! {
        #[test]
        fn split_instance_invariants(
            items in proptest::collection::vec(0usize..12, 2..40),
            n_future in 1usize..5,
        ) {
            let events: Vec<HistoryEvent> =
                items.iter().enumerate().map(|(i, &it)| ev(it, i as i64)).collect();
            let h = UserHistory { user_id: "u".into(), events };
            let distinct = h.distinct_items().len();
            match temporal_split(&h, n_future) {
                None => proptest::prop_assert!(distinct < n_future + 1),
                Some(s) => {
                    proptest::prop_assert_eq!(s.future.len(), n_future);
                    proptest::prop_assert!(!s.observed.is_empty());
                    let f: HashSet<usize> = s.future.iter().copied().collect();
                    let o: HashSet<usize> = s.observed.iter().copied().collect();
                    proptest::prop_assert!(f.is_disjoint(&o));
                }
            }
        }

        #[test]
        fn train_test_split_never_leaks_training_items(
            items in proptest::collection::vec(0usize..8, 1..30),
            boundary in 0i64..30,
        ) {
            let events: Vec<HistoryEvent> =
                items.iter().enumerate().map(|(i, &it)| ev(it, i as i64)).collect();
            let h = UserHistory { user_id: "u".into(), events };
            let (_, pairs) = train_test_split(&[h], boundary);
            for p in &pairs {
                let train_items: HashSet<usize> = p.train_events.iter().map(|e| e.item).collect();
                proptest::prop_assert!(p.test_items.iter().all(|i| !train_items.contains(i)));
            }
        }
    }
}
