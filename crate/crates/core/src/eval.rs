//! Ranking metrics and the evaluation loop.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::{beam_search, recommend, ActionPolicy, RankedRecommendation};
use crate::kg::{EntityId, KnowledgeGraph};
use crate::train::{PreparedSession, StartPoint};

/// 1 iff `target` is among the first `k` items.
pub fn hr_at_k(ranked: &[EntityId], target: EntityId, k: usize) -> f64 {
    if ranked.iter().take(k).any(|&e| e == target) {
        1.0
    } else {
        0.0
    }
}

/// `1/log₂(pos+1)` for the 1-based position of `target` within the top `k`.
pub fn ndcg_at_k(ranked: &[EntityId], target: EntityId, k: usize) -> f64 {
    match ranked.iter().take(k).position(|&e| e == target) {
        Some(i) => 1.0 / ((i + 2) as f64).log2(),
        None => 0.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub widths: Vec<usize>,
    pub ks: Vec<usize>,
    pub start: StartPoint,
    pub exclude_seen: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            widths: vec![100, 1],
            ks: vec![5, 10, 20],
            start: StartPoint::LastItem,
            exclude_seen: false,
        }
    }
}

impl EvalConfig {
    pub fn max_k(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    /// 1-based position of the target in the list, if present.
    pub position: Option<usize>,
    pub skipped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ks: Vec<usize>,
    /// Percent, aligned with `ks`.
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub hits: Vec<usize>,
    pub sessions: usize,
    pub skipped: usize,
    pub fingerprint: String,
    pub seed: u64,
}

impl MetricsReport {
    pub fn hr_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.hr[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.ndcg[i])
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>6} {:>8} {:>8}", "K", "HR@K", "NDCG@K");
        for (i, k) in self.ks.iter().enumerate() {
            let _ = writeln!(out, "{:>6} {:>8.2} {:>8.2}", k, self.hr[i], self.ndcg[i]);
        }
        let _ = writeln!(out, "sessions={} skipped={}", self.sessions, self.skipped);
        out
    }
}

/// Top-`k` list for one session, or `None` when the session cannot start.
pub fn rank_session(
    policy: &mut dyn ActionPolicy,
    g: &KnowledgeGraph,
    session: &PreparedSession,
    config: &EvalConfig,
    k: usize,
) -> Result<Option<RankedRecommendation>> {
    let paths = match beam_search(policy, g, session, config.start, &config.widths) {
        Ok(p) => p,
        Err(Error::ColdStart(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let exclude: &[EntityId] = if config.exclude_seen { &session.items } else { &[] };
    Ok(Some(recommend(&paths, g, k, exclude)))
}

/// Mean HR/NDCG over `sessions` in percent. Sessions that cannot be
/// ranked count as misses.
pub fn evaluate(
    policy: &mut dyn ActionPolicy,
    g: &KnowledgeGraph,
    sessions: &[PreparedSession],
    config: &EvalConfig,
) -> Result<(MetricsReport, Vec<SessionRecord>)> {
    if sessions.is_empty() {
        return Err(Error::Data("test set is empty".into()));
    }
    if config.ks.is_empty() || config.ks.contains(&0) {
        return Err(Error::Config("K values must be positive".into()));
    }
    let mut hr = vec![0.0; config.ks.len()];
    let mut ndcg = vec![0.0; config.ks.len()];
    let mut hits = vec![0; config.ks.len()];
    let mut records = Vec::with_capacity(sessions.len());
    let mut skipped = 0;
    for s in sessions {
        let ranked = match (s.target, rank_session(policy, g, s, config, config.max_k())?) {
            (Some(t), Some(r)) => Some((t, r.item_ids())),
            _ => None,
        };
        let Some((target, list)) = ranked else {
            skipped += 1;
            records.push(SessionRecord {
                session_id: s.id.clone(),
                position: None,
                skipped: true,
            });
            continue;
        };
        for (i, &k) in config.ks.iter().enumerate() {
            let h = hr_at_k(&list, target, k);
            hr[i] += h;
            hits[i] += h as usize;
            ndcg[i] += ndcg_at_k(&list, target, k);
        }
        records.push(SessionRecord {
            session_id: s.id.clone(),
            position: list.iter().position(|&e| e == target).map(|p| p + 1),
            skipped: false,
        });
    }
    let n = sessions.len() as f64;
    Ok((
        MetricsReport {
            ks: config.ks.clone(),
            hr: hr.iter().map(|v| 100.0 * v / n).collect(),
            ndcg: ndcg.iter().map(|v| 100.0 * v / n).collect(),
            hits,
            sessions: sessions.len(),
            skipped,
            fingerprint: String::new(),
            seed: 0,
        },
        records,
    ))
}
