//! Raw log parsing, sessionization, frequency filtering and the
//! train/validation/test split.
//!
//! Interactions are grouped per user and UTC calendar day. Items seen fewer
//! than `min_item_count` times in the whole raw log are dropped before any
//! grouping, and day-groups shorter than `min_session_len` are discarded. The
//! last item of a retained group becomes the held-out target.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user_id: String,
    pub item_id: String,
    pub timestamp: i64,
}

impl Interaction {
    pub fn day(&self) -> i64 {
        self.timestamp.div_euclid(SECONDS_PER_DAY)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMetadata {
    pub item: String,
    #[serde(default)]
    pub brand: Option<String>,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub also_bought: Vec<String>,
    #[serde(default)]
    pub also_viewed: Vec<String>,
    #[serde(default)]
    pub bought_together: Vec<String>,
}

impl ItemMetadata {
    fn dedup(mut self) -> Self {
        for list in [
            &mut self.categories,
            &mut self.also_bought,
            &mut self.also_viewed,
            &mut self.bought_together,
        ] {
            let mut seen = HashSet::new();
            list.retain(|id| seen.insert(id.clone()));
        }
        self
    }
}

/// An anonymous session: ordered prefix plus the held-out next item.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub user_id: String,
    pub items: Vec<String>,
    pub target: String,
}

impl Session {
    pub fn last_item(&self) -> &str {
        self.items.last().expect("session prefix is never empty")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Session>,
    pub validation: Vec<Session>,
    pub test: Vec<Session>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every item mentioned by any split, in first-seen order
    /// (train, then validation, then test).
    pub fn vocabulary(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut vocab = Vec::new();
        for s in self.train.iter().chain(&self.validation).chain(&self.test) {
            for item in s.items.iter().chain(std::iter::once(&s.target)) {
                if seen.insert(item.as_str()) {
                    vocab.push(item.clone());
                }
            }
        }
        vocab
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionizeSummary {
    pub raw_interactions: usize,
    pub dropped_rare_interactions: usize,
    pub retained_items: usize,
    pub day_groups: usize,
    pub dropped_short_groups: usize,
    pub sessions: usize,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_interactions(path: impl AsRef<Path>) -> Result<Vec<Interaction>> {
    let path = path.as_ref();
    parse_interactions_str(&read_to_string(path)?, path)
}

pub fn parse_interactions_str(text: &str, origin: &Path) -> Result<Vec<Interaction>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            message,
        };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let (user, item) = (fields[0].trim(), fields[1].trim());
        if user.is_empty() || item.is_empty() {
            return Err(err("empty user or item id".into()));
        }
        let timestamp: i64 = fields[2]
            .trim()
            .parse()
            .map_err(|e| err(format!("bad timestamp {:?}: {e}", fields[2])))?;
        if timestamp < 0 {
            return Err(err(format!("negative timestamp {timestamp}")));
        }
        out.push(Interaction {
            user_id: user.to_string(),
            item_id: item.to_string(),
            timestamp,
        });
    }
    Ok(out)
}

pub fn parse_metadata(path: impl AsRef<Path>) -> Result<Vec<ItemMetadata>> {
    let path = path.as_ref();
    parse_metadata_str(&read_to_string(path)?, path)
}

pub fn parse_metadata_str(text: &str, origin: &Path) -> Result<Vec<ItemMetadata>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let meta: ItemMetadata = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        if meta.item.is_empty() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                message: "empty item id".into(),
            });
        }
        out.push(meta.dedup());
    }
    Ok(out)
}

/// Group interactions into per-user, per-UTC-day sessions.
pub fn sessionize(
    interactions: &[Interaction],
    min_item_count: usize,
    min_session_len: usize,
) -> (Vec<Session>, SessionizeSummary) {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for it in interactions {
        *counts.entry(it.item_id.as_str()).or_default() += 1;
    }
    let mut kept: Vec<&Interaction> = interactions
        .iter()
        .filter(|it| counts[it.item_id.as_str()] >= min_item_count)
        .collect();
    let mut summary = SessionizeSummary {
        raw_interactions: interactions.len(),
        dropped_rare_interactions: interactions.len() - kept.len(),
        retained_items: counts.values().filter(|&&c| c >= min_item_count).count(),
        ..Default::default()
    };

    // stable: equal timestamps keep input order
    kept.sort_by(|a, b| (&a.user_id, a.timestamp).cmp(&(&b.user_id, b.timestamp)));

    let mut sessions = Vec::new();
    let min_len = min_session_len.max(2);
    for group in kept.chunk_by(|a, b| a.user_id == b.user_id && a.day() == b.day()) {
        summary.day_groups += 1;
        if group.len() < min_len {
            summary.dropped_short_groups += 1;
            continue;
        }
        let (last, prefix) = group.split_last().expect("group is nonempty");
        sessions.push(Session {
            id: format!("{}@{}", last.user_id, last.day()),
            user_id: last.user_id.clone(),
            items: prefix.iter().map(|it| it.item_id.clone()).collect(),
            target: last.item_id.clone(),
        });
    }
    summary.sessions = sessions.len();
    (sessions, summary)
}

/// Sizes for `n` elements under `ratios`: floor each share, then hand the
/// remainder out by largest fractional part (earlier split wins ties).
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        // guard against 74.99999999 style representation error
        *s = (e + 1e-9).floor() as usize;
    }
    let mut remainder = n.saturating_sub(sizes.iter().sum());
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remainder == 0 {
            break;
        }
        sizes[i] += 1;
        remainder -= 1;
    }
    sizes
}

pub fn split_sessions(sessions: &[Session], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if sessions.len() < 3 {
        return Err(Error::Data(format!(
            "need at least 3 sessions to split, got {}",
            sessions.len()
        )));
    }
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let mut order: Vec<usize> = (0..sessions.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let [n_train, n_val, _] = split_sizes(sessions.len(), ratios);
    let pick = |idx: &[usize]| idx.iter().map(|&i| sessions[i].clone()).collect::<Vec<_>>();
    Ok(DatasetSplit {
        train: pick(&order[..n_train]),
        validation: pick(&order[n_train..n_train + n_val]),
        test: pick(&order[n_train + n_val..]),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ix(user: &str, item: &str, ts: i64) -> Interaction {
        Interaction {
            user_id: user.into(),
            item_id: item.into(),
            timestamp: ts,
        }
    }

    fn origin() -> &'static Path {
        Path::new("mem.tsv")
    }

    #[test]
    fn parses_single_line() {
        let got = parse_interactions_str("u1\ti1\t100", origin()).unwrap();
        assert_eq!(got, vec![ix("u1", "i1", 100)]);
    }

    #[test]
    fn missing_field_reports_line() {
        let err = parse_interactions_str("u1\ti1", origin()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = parse_interactions_str("u1\ti1\t1\nu2\ti2\tx\n", origin()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn preserves_order_and_handles_empty() {
        let got = parse_interactions_str("a\tx\t3\nb\ty\t1\nc\tz\t2\n", origin()).unwrap();
        let users: Vec<_> = got.iter().map(|i| i.user_id.as_str()).collect();
        assert_eq!(users, ["a", "b", "c"]);
        assert!(parse_interactions_str("", origin()).unwrap().is_empty());
    }

    #[test]
    fn rejects_negative_timestamp() {
        assert!(parse_interactions_str("u\ti\t-5", origin()).is_err());
    }

    #[test]
    fn metadata_absent_keys_are_empty_and_lists_dedup() {
        let text = r#"{"item":"p1","categories":["c1","c1","c2"]}
{"item":"p2","brand":"b","also_bought":["x"],"also_viewed":["y","y"],"bought_together":["p1"]}"#;
        let meta = parse_metadata_str(text, origin()).unwrap();
        assert_eq!(meta[0].brand, None);
        assert_eq!(meta[0].categories, ["c1", "c2"]);
        assert!(meta[0].also_bought.is_empty());
        assert_eq!(meta[1].also_viewed, ["y"]);
        assert!(parse_metadata_str("{\"brand\":\"b\"}", origin()).is_err());
    }

    /// Items a, b, c repeated enough to survive the frequency filter.
    fn frequent_background() -> Vec<Interaction> {
        let mut v = Vec::new();
        for k in 0..5 {
            for item in ["a", "b", "c"] {
                v.push(ix("bg", item, 1_000_000 + k * SECONDS_PER_DAY));
            }
        }
        v
    }

    #[test]
    fn single_day_groups_with_last_item_holdout() {
        let mut log = frequent_background();
        let day = 20_000 * SECONDS_PER_DAY;
        log.push(ix("u1", "a", day + 10 * 3600));
        log.push(ix("u1", "b", day + 11 * 3600));
        log.push(ix("u1", "c", day + 12 * 3600));
        let (sessions, _) = sessionize(&log, 5, 2);
        let u1: Vec<_> = sessions.iter().filter(|s| s.user_id == "u1").collect();
        assert_eq!(u1.len(), 1);
        assert_eq!(u1[0].items, ["a", "b"]);
        assert_eq!(u1[0].target, "c");
    }

    #[test]
    fn rare_items_never_appear() {
        let mut log = frequent_background();
        for k in 0..4 {
            log.push(ix("u2", "x", 5_000_000 + k * SECONDS_PER_DAY));
            log.push(ix("u2", "a", 5_000_000 + k * SECONDS_PER_DAY + 1));
            log.push(ix("u2", "b", 5_000_000 + k * SECONDS_PER_DAY + 2));
        }
        let (sessions, summary) = sessionize(&log, 5, 2);
        assert_eq!(summary.dropped_rare_interactions, 4);
        for s in &sessions {
            assert!(s.items.iter().all(|i| i != "x") && s.target != "x");
        }
    }

    #[test]
    fn one_interaction_per_day_is_dropped() {
        let mut log = frequent_background();
        for k in 0..3 {
            log.push(ix("u3", "a", 9_000_000 + k * SECONDS_PER_DAY));
        }
        let (sessions, _) = sessionize(&log, 5, 2);
        assert!(sessions.iter().all(|s| s.user_id != "u3"));
    }

    #[test]
    fn length_two_group_keeps_one_item_prefix() {
        let mut log = frequent_background();
        log.push(ix("u4", "a", 100));
        log.push(ix("u4", "b", 200));
        let (sessions, _) = sessionize(&log, 5, 2);
        let s = sessions.iter().find(|s| s.user_id == "u4").unwrap();
        assert_eq!(s.items, ["a"]);
        assert_eq!(s.target, "b");
    }

    #[test]
    fn day_boundary_splits_sessions() {
        let mut log = frequent_background();
        let midnight = 30_000 * SECONDS_PER_DAY;
        for (item, t) in [("a", -20), ("b", -10), ("c", 10), ("a", 20)] {
            log.push(ix("u5", item, midnight + t));
        }
        let (sessions, _) = sessionize(&log, 5, 2);
        let u5: Vec<_> = sessions.iter().filter(|s| s.user_id == "u5").collect();
        assert_eq!(u5.len(), 2);
    }

    fn dummy_sessions(n: usize) -> Vec<Session> {
        (0..n)
            .map(|i| Session {
                id: format!("s{i}"),
                user_id: "u".into(),
                items: vec!["a".into(), "b".into()],
                target: "c".into(),
            })
            .collect()
    }

    #[test]
    fn split_hundred_sessions() {
        let split = split_sessions(&dummy_sessions(100), [0.75, 0.10, 0.15], 7).unwrap();
        assert_eq!(
            (split.train.len(), split.validation.len(), split.test.len()),
            (75, 10, 15)
        );
    }

    #[test]
    fn split_twenty_sessions() {
        // 15, 2, 3 by hand: 0.75·20, 0.10·20, 0.15·20 are all integral
        assert_eq!(split_sizes(20, [0.75, 0.10, 0.15]), [15, 2, 3]);
        // 0.75·7=5.25, 0.1·7=0.7, 0.15·7=1.05 → floors 5,0,1 and the spare goes to val
        assert_eq!(split_sizes(7, [0.75, 0.10, 0.15]), [5, 1, 1]);
    }

    #[test]
    fn split_is_deterministic_and_rejects_tiny_inputs() {
        let s = dummy_sessions(50);
        let a = split_sessions(&s, [0.75, 0.10, 0.15], 3).unwrap();
        let b = split_sessions(&s, [0.75, 0.10, 0.15], 3).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        assert!(split_sessions(&dummy_sessions(2), [0.75, 0.10, 0.15], 3).is_err());
        assert!(split_sessions(&s, [0.5, 0.1, 0.1], 3).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_sessions(n in 3usize..300, seed in any::<u64>()) {
            let sessions = dummy_sessions(n);
            let split = split_sessions(&sessions, [0.75, 0.10, 0.15], seed).unwrap();
            prop_assert_eq!(split.len(), n);
            let mut ids: Vec<_> = split.train.iter().chain(&split.validation).chain(&split.test)
                .map(|s| s.id.clone()).collect();
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
            for (got, r) in [(split.train.len(), 0.75), (split.validation.len(), 0.10), (split.test.len(), 0.15)] {
                prop_assert!((got as f64 - r * n as f64).abs() <= 1.0);
            }
        }

        #[test]
        fn sessions_respect_frequency_and_day(
            raw in proptest::collection::vec((0u8..4, 0u8..8, 0i64..(5 * SECONDS_PER_DAY)), 0..200)
        ) {
            let log: Vec<_> = raw.iter()
                .map(|(u, i, t)| ix(&format!("u{u}"), &format!("i{i}"), *t))
                .collect();
            let (sessions, _) = sessionize(&log, 5, 2);
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for it in &log { *counts.entry(&it.item_id).or_default() += 1; }
            for s in &sessions {
                prop_assert!(!s.items.is_empty());
                for item in s.items.iter().chain(std::iter::once(&s.target)) {
                    prop_assert!(counts[item.as_str()] >= 5);
                }
            }
        }
    }
}
