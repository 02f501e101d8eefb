//! Probabilistic beam search over graph paths, top-K aggregation and
//! explanation rendering.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Action, EntityId, EntityKind, KnowledgeGraph, Relation};
use crate::linalg::log_softmax;
use crate::mdp::{action_distribution, state_vector, step, SemanticPath, State};
use crate::model::ReksModel;
use crate::train::{PreparedSession, StartPoint};
use crate::transe::EmbeddingTable;

/// Anything that assigns log-probabilities to the legal actions of a state.
pub trait ActionPolicy {
    fn begin_session(&mut self, session: &PreparedSession) -> Result<()>;
    fn action_log_probs(&mut self, state: &State, actions: &[Action]) -> Result<Vec<f64>>;
}

/// The trained network, evaluated without dropout.
pub struct ModelPolicy<'a> {
    pub model: &'a ReksModel,
    pub table: &'a EmbeddingTable,
    session_vec: Vec<f64>,
}

impl<'a> ModelPolicy<'a> {
    pub fn new(model: &'a ReksModel, table: &'a EmbeddingTable) -> Self {
        ModelPolicy {
            model,
            table,
            session_vec: Vec::new(),
        }
    }
}

impl ActionPolicy for ModelPolicy<'_> {
    fn begin_session(&mut self, session: &PreparedSession) -> Result<()> {
        let rows: Vec<&[f64]> = session.items.iter().map(|&e| self.table.entity(e)).collect();
        self.session_vec = self.model.encoder.encode(&rows)?;
        Ok(())
    }

    fn action_log_probs(&mut self, state: &State, actions: &[Action]) -> Result<Vec<f64>> {
        let sv = state_vector(state, &self.session_vec, &self.model.policy, self.table)?;
        Ok(action_distribution(&sv, actions, &self.model.policy, self.table)?.log_probs)
    }
}

/// Softmax over i.i.d. standard-uniform logits drawn per decision.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl ActionPolicy for RandomPolicy {
    fn begin_session(&mut self, _session: &PreparedSession) -> Result<()> {
        Ok(())
    }

    fn action_log_probs(&mut self, _state: &State, actions: &[Action]) -> Result<Vec<f64>> {
        if actions.is_empty() {
            return Err(Error::DeadEnd);
        }
        let logits: Vec<f64> = actions.iter().map(|_| self.rng.gen::<f64>()).collect();
        Ok(log_softmax(&logits))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPath {
    pub path: SemanticPath,
    pub step_probs: Vec<f64>,
    /// Product of `step_probs`.
    pub probability: f64,
}

impl ScoredPath {
    pub fn terminal(&self) -> EntityId {
        self.path.end()
    }
}

/// Keeps, at hop `t`, the `widths[t]` most probable actions of every open
/// branch (ties in action order). Branches that hit a dead end before the
/// last hop are dropped.
pub fn beam_search(
    policy: &mut dyn ActionPolicy,
    g: &KnowledgeGraph,
    session: &PreparedSession,
    start: StartPoint,
    widths: &[usize],
) -> Result<Vec<ScoredPath>> {
    let Some(start_entity) = session.start(start) else {
        return Err(Error::ColdStart(session.id.clone()));
    };
    if session.items.is_empty() {
        return Err(Error::ColdStart(session.id.clone()));
    }
    policy.begin_session(session)?;
    let mut beam = vec![(State::initial(g, start_entity)?, Vec::<f64>::new())];
    for &width in widths {
        let mut next = Vec::new();
        for (state, probs) in beam {
            let actions = state.legal_actions(g)?;
            if actions.is_empty() {
                continue;
            }
            let lp = policy.action_log_probs(&state, &actions)?;
            let mut order: Vec<usize> = (0..actions.len()).collect();
            order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]));
            for &i in order.iter().take(width) {
                let mut p = probs.clone();
                p.push(lp[i].exp());
                next.push((step(g, &state, actions[i])?, p));
            }
        }
        beam = next;
    }
    Ok(beam
        .into_iter()
        .map(|(state, step_probs)| ScoredPath {
            probability: step_probs.iter().product(),
            path: state.path,
            step_probs,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub item: EntityId,
    pub score: f64,
    pub explanation: ScoredPath,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedRecommendation {
    pub items: Vec<Recommendation>,
}

impl RankedRecommendation {
    pub fn item_ids(&self) -> Vec<EntityId> {
        self.items.iter().map(|r| r.item).collect()
    }
}

/// Sums path probabilities per product terminal and keeps the top `k`.
/// Each item is explained by its most probable path (first one on ties).
pub fn recommend(paths: &[ScoredPath], g: &KnowledgeGraph, k: usize, exclude: &[EntityId]) -> RankedRecommendation {
    let mut by_item: HashMap<EntityId, (f64, usize)> = HashMap::new();
    for (i, p) in paths.iter().enumerate() {
        let item = p.terminal();
        if !g.is_product(item) || exclude.contains(&item) {
            continue;
        }
        let entry = by_item.entry(item).or_insert((0.0, i));
        entry.0 += p.probability;
        if p.probability > paths[entry.1].probability {
            entry.1 = i;
        }
    }
    let mut items: Vec<Recommendation> = by_item
        .into_iter()
        .map(|(item, (score, best))| Recommendation {
            item,
            score,
            explanation: paths[best].clone(),
        })
        .collect();
    items.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.item.cmp(&b.item)));
    items.truncate(k);
    RankedRecommendation { items }
}

fn entity_token(g: &KnowledgeGraph, id: EntityId, labels: Option<&HashMap<EntityId, String>>) -> String {
    if let Some(label) = labels.and_then(|l| l.get(&id)) {
        return label.clone();
    }
    match g.kind(id) {
        Some(kind) => format!("{kind}:{}", id.0),
        None => format!("unknown:{}", id.0),
    }
}

/// `e0 -[r1]-> e1 -[r2]-> e2`; entities without a label print as
/// `kind:index`.
pub fn render_explanation(g: &KnowledgeGraph, path: &SemanticPath, labels: Option<&HashMap<EntityId, String>>) -> String {
    let mut out = entity_token(g, path.start, labels);
    for &(r, e) in &path.hops {
        out.push_str(&format!(" -[{}]-> {}", r.name(), entity_token(g, e, labels)));
    }
    out
}

/// Inverse of `render_explanation`. Labels take precedence over the
/// `kind:index` form; the parsed path must be valid in `g`.
pub fn parse_explanation(g: &KnowledgeGraph, text: &str, labels: Option<&HashMap<EntityId, String>>) -> Result<SemanticPath> {
    let reverse: HashMap<&str, EntityId> = labels
        .map(|l| l.iter().map(|(&id, s)| (s.as_str(), id)).collect())
        .unwrap_or_default();
    let entity = |tok: &str| -> Result<EntityId> {
        if let Some(&id) = reverse.get(tok) {
            return Ok(id);
        }
        let bad = || Error::Data(format!("unrecognised entity token {tok:?}"));
        let (kind, idx) = tok.rsplit_once(':').ok_or_else(bad)?;
        let kind = EntityKind::from_name(kind).ok_or_else(bad)?;
        let id = EntityId(idx.parse().map_err(|_| bad())?);
        if g.kind(id) != Some(kind) {
            return Err(bad());
        }
        Ok(id)
    };
    let mut parts = text.split(" -[");
    let first = parts.next().ok_or_else(|| Error::Data("empty explanation".into()))?;
    let mut path = SemanticPath::new(entity(first.trim())?);
    for part in parts {
        let (rel, rest) = part
            .split_once("]-> ")
            .ok_or_else(|| Error::Data(format!("malformed hop {part:?}")))?;
        let rel = Relation::from_name(rel).ok_or_else(|| Error::Data(format!("unknown relation {rel:?}")))?;
        path.hops.push((rel, entity(rest.trim())?));
    }
    if !path.is_valid_in(g) {
        return Err(Error::Data(format!("explanation {text:?} is not a path of the graph")));
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed log-probabilities by action order, for exact expectations.
    struct Scripted;

    impl ActionPolicy for Scripted {
        fn begin_session(&mut self, _s: &PreparedSession) -> Result<()> {
            Ok(())
        }
        fn action_log_probs(&mut self, _state: &State, actions: &[Action]) -> Result<Vec<f64>> {
            let logits: Vec<f64> = (0..actions.len()).map(|i| -(i as f64)).collect();
            Ok(log_softmax(&logits))
        }
    }

    fn graph() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        let p: Vec<_> = (0..4).map(|i| g.add_entity(EntityKind::Product, &format!("p{i}"))).collect();
        let b = g.add_entity(EntityKind::Brand, "b");
        let c = g.add_entity(EntityKind::Category, "c");
        g.add_bidirectional(p[0], Relation::ProducedBy, b).unwrap();
        g.add_bidirectional(p[1], Relation::ProducedBy, b).unwrap();
        g.add_bidirectional(p[0], Relation::BelongTo, c).unwrap();
        g.add_bidirectional(p[2], Relation::BelongTo, c).unwrap();
        g.add_bidirectional(p[3], Relation::BelongTo, c).unwrap();
        g.add_edge(p[0], Relation::CoOccur, p[3]).unwrap();
        g
    }

    fn session() -> PreparedSession {
        PreparedSession {
            id: "u@1".into(),
            user: None,
            items: vec![EntityId(0)],
            last_item: Some(EntityId(0)),
            target: Some(EntityId(1)),
        }
    }

    #[test]
    fn greedy_beam_is_a_single_path() {
        let g = graph();
        let paths = beam_search(&mut Scripted, &g, &session(), StartPoint::LastItem, &[1, 1]).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].path.start, EntityId(0));
        assert!(paths[0].path.is_valid_in(&g));
    }

    #[test]
    fn wide_beam_starts_at_last_item_and_multiplies_probs() {
        let g = graph();
        let paths = beam_search(&mut Scripted, &g, &session(), StartPoint::LastItem, &[100, 100]).unwrap();
        assert!(!paths.is_empty());
        for p in &paths {
            assert_eq!(p.path.start, EntityId(0));
            assert_eq!(p.step_probs.len(), 2);
            assert!((p.probability - p.step_probs[0] * p.step_probs[1]).abs() < 1e-15);
            assert!(p.probability > 0.0 && p.probability <= 1.0);
        }
    }

    #[test]
    fn cold_start_is_signalled() {
        let g = graph();
        let mut s = session();
        s.last_item = None;
        let err = beam_search(&mut Scripted, &g, &s, StartPoint::LastItem, &[1, 1]).unwrap_err();
        assert!(matches!(err, Error::ColdStart(_)));
    }

    fn sp(terminal: usize, p: f64) -> ScoredPath {
        ScoredPath {
            path: SemanticPath {
                start: EntityId(0),
                hops: vec![(Relation::CoOccur, EntityId(terminal))],
            },
            step_probs: vec![p],
            probability: p,
        }
    }

    #[test]
    fn recommend_sums_and_explains_with_max_path() {
        let g = graph();
        let paths = [sp(1, 0.1), sp(2, 0.25), sp(1, 0.2), sp(4, 0.9)];
        let rec = recommend(&paths, &g, 10, &[]);
        assert_eq!(rec.item_ids(), vec![EntityId(1), EntityId(2)]);
        assert!((rec.items[0].score - 0.3).abs() < 1e-12);
        assert_eq!(rec.items[0].explanation.probability, 0.2);
        assert_eq!(recommend(&paths, &g, 1, &[]).item_ids(), vec![EntityId(1)]);
        assert_eq!(recommend(&paths, &g, 10, &[EntityId(1)]).item_ids(), vec![EntityId(2)]);
        assert!(recommend(&[sp(4, 0.5)], &g, 5, &[]).items.is_empty());
    }

    #[test]
    fn recommend_breaks_ties_by_index() {
        let g = graph();
        let rec = recommend(&[sp(3, 0.2), sp(2, 0.2)], &g, 5, &[]);
        assert_eq!(rec.item_ids(), vec![EntityId(2), EntityId(3)]);
    }

    #[test]
    fn explanation_round_trip() {
        let g = graph();
        let path = SemanticPath {
            start: EntityId(0),
            hops: vec![(Relation::ProducedBy, EntityId(4)), (Relation::ProducedBy, EntityId(1))],
        };
        let text = render_explanation(&g, &path, None);
        assert_eq!(text, "product:0 -[produced_by]-> brand:4 -[produced_by]-> product:1");
        assert_eq!(parse_explanation(&g, &text, None).unwrap(), path);

        let labels: HashMap<EntityId, String> = [(EntityId(0), "lipstick".to_string())].into();
        let text = render_explanation(&g, &path, Some(&labels));
        assert_eq!(text, "lipstick -[produced_by]-> brand:4 -[produced_by]-> product:1");
        assert_eq!(parse_explanation(&g, &text, Some(&labels)).unwrap(), path);
        assert!(parse_explanation(&g, "product:0 -[also_bought]-> product:1", None).is_err());
    }
}
