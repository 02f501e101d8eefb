//! Typed knowledge graph over users, products, brands, categories and
//! related products.
//!
//! Metadata and purchase relations are stored in both directions; `co_occur`
//! edges come from consecutive items of training sessions and are directed.
//! Entity indices are dense and assigned in first-seen order.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ItemMetadata, Session};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    User,
    Product,
    Brand,
    Category,
    RelatedProduct,
}

impl EntityKind {
    pub const ALL: [EntityKind; 5] = [
        EntityKind::User,
        EntityKind::Product,
        EntityKind::Brand,
        EntityKind::Category,
        EntityKind::RelatedProduct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EntityKind::User => "user",
            EntityKind::Product => "product",
            EntityKind::Brand => "brand",
            EntityKind::Category => "category",
            EntityKind::RelatedProduct => "related_product",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Purchase,
    ProducedBy,
    BelongTo,
    AlsoBought,
    AlsoViewed,
    BoughtTogether,
    CoOccur,
}

impl Relation {
    pub const ALL: [Relation; 7] = [
        Relation::Purchase,
        Relation::ProducedBy,
        Relation::BelongTo,
        Relation::AlsoBought,
        Relation::AlsoViewed,
        Relation::BoughtTogether,
        Relation::CoOccur,
    ];
    pub const COUNT: usize = 7;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Purchase => "purchase",
            Relation::ProducedBy => "produced_by",
            Relation::BelongTo => "belong_to",
            Relation::AlsoBought => "also_bought",
            Relation::AlsoViewed => "also_viewed",
            Relation::BoughtTogether => "bought_together",
            Relation::CoOccur => "co_occur",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == name)
    }

    pub fn is_bidirectional(self) -> bool {
        self != Relation::CoOccur
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub usize);

impl EntityId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub kind: EntityKind,
    pub name: String,
}

/// One outgoing edge: the relation taken and the entity reached.
pub type Action = (Relation, EntityId);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: Relation,
    pub tail: EntityId,
}

#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    entities: Vec<Entity>,
    lookup: HashMap<(EntityKind, String), EntityId>,
    triples: BTreeSet<Triple>,
    adjacency: Vec<Vec<Action>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub entities: BTreeMap<String, usize>,
    pub relations: BTreeMap<String, usize>,
    pub total_entities: usize,
    pub total_triples: usize,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn entity(&self, id: EntityId) -> Result<&Entity> {
        self.entities.get(id.0).ok_or(Error::UnknownEntity(id.0))
    }

    pub fn entities(&self) -> impl Iterator<Item = (EntityId, &Entity)> {
        self.entities.iter().enumerate().map(|(i, e)| (EntityId(i), e))
    }

    pub fn kind(&self, id: EntityId) -> Option<EntityKind> {
        self.entities.get(id.0).map(|e| e.kind)
    }

    pub fn is_product(&self, id: EntityId) -> bool {
        self.kind(id) == Some(EntityKind::Product)
    }

    pub fn find(&self, kind: EntityKind, name: &str) -> Option<EntityId> {
        self.lookup.get(&(kind, name.to_string())).copied()
    }

    pub fn product(&self, name: &str) -> Option<EntityId> {
        self.find(EntityKind::Product, name)
    }

    /// Returns the existing id for `(kind, name)` or appends a new entity.
    pub fn add_entity(&mut self, kind: EntityKind, name: &str) -> EntityId {
        if let Some(&id) = self.lookup.get(&(kind, name.to_string())) {
            return id;
        }
        let id = EntityId(self.entities.len());
        self.entities.push(Entity {
            kind,
            name: name.to_string(),
        });
        self.lookup.insert((kind, name.to_string()), id);
        self.adjacency.push(Vec::new());
        id
    }

    /// Inserts one directed edge; duplicates collapse. Returns whether it was new.
    pub fn add_edge(&mut self, head: EntityId, relation: Relation, tail: EntityId) -> Result<bool> {
        for id in [head, tail] {
            self.entity(id)?;
        }
        let triple = Triple {
            head,
            relation,
            tail,
        };
        if !self.triples.insert(triple) {
            return Ok(false);
        }
        let adj = &mut self.adjacency[head.0];
        let pos = adj.partition_point(|&a| a < (relation, tail));
        adj.insert(pos, (relation, tail));
        Ok(true)
    }

    pub fn add_bidirectional(&mut self, a: EntityId, relation: Relation, b: EntityId) -> Result<()> {
        self.add_edge(a, relation, b)?;
        self.add_edge(b, relation, a)?;
        Ok(())
    }

    pub fn contains(&self, head: EntityId, relation: Relation, tail: EntityId) -> bool {
        self.triples.contains(&Triple {
            head,
            relation,
            tail,
        })
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    /// Full out-neighborhood sorted by (relation, tail).
    pub fn out_edges(&self, entity: EntityId) -> Result<&[Action]> {
        self.adjacency
            .get(entity.0)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownEntity(entity.0))
    }

    /// Outgoing actions whose tail has not been visited, in (relation, tail) order.
    pub fn neighbors(&self, entity: EntityId, visited: &[EntityId]) -> Result<Vec<Action>> {
        Ok(self
            .out_edges(entity)?
            .iter()
            .filter(|(_, t)| !visited.contains(t))
            .copied()
            .collect())
    }

    pub fn stats(&self) -> GraphStats {
        let mut stats = GraphStats {
            total_entities: self.entities.len(),
            total_triples: self.triples.len(),
            ..Default::default()
        };
        for k in EntityKind::ALL {
            stats.entities.insert(k.name().into(), 0);
        }
        for r in Relation::ALL {
            stats.relations.insert(r.name().into(), 0);
        }
        for e in &self.entities {
            *stats.entities.get_mut(e.kind.name()).unwrap() += 1;
        }
        for t in &self.triples {
            *stats.relations.get_mut(t.relation.name()).unwrap() += 1;
        }
        stats
    }

    pub fn token(&self, id: EntityId) -> String {
        match self.entities.get(id.0) {
            Some(e) => format!("{}:{}", e.kind, e.name),
            None => format!("?:{}", id.0),
        }
    }

    /// `index<TAB>kind<TAB>name`, one entity per line in index order.
    pub fn write_entities(&self, path: &Path, fingerprint: &str) -> Result<()> {
        let mut out = format!("# fingerprint={fingerprint}\n");
        for (i, e) in self.entities.iter().enumerate() {
            out.push_str(&format!("{i}\t{}\t{}\n", e.kind, e.name));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// `head_kind:head_id<TAB>relation<TAB>tail_kind:tail_id`, sorted by triple.
    pub fn write_triples(&self, path: &Path, fingerprint: &str) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(w, "# fingerprint={fingerprint}").map_err(io)?;
        for t in &self.triples {
            writeln!(w, "{}\t{}\t{}", self.token(t.head), t.relation, self.token(t.tail)).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(entities_path: &Path, triples_path: &Path) -> Result<Self> {
        let mut g = KnowledgeGraph::new();
        let text = fs::read_to_string(entities_path).map_err(|e| Error::io(entities_path, e))?;
        for (n, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let parse_err = |m: &str| Error::Parse {
                path: entities_path.into(),
                line: n + 1,
                message: m.into(),
            };
            let mut parts = line.splitn(3, '\t');
            let (Some(idx), Some(kind), Some(name)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(parse_err("expected index, kind, name"));
            };
            let kind = EntityKind::from_name(kind).ok_or_else(|| parse_err("unknown entity kind"))?;
            let id = g.add_entity(kind, name);
            if idx.parse::<usize>().ok() != Some(id.0) {
                return Err(parse_err("entity indices must be dense and in order"));
            }
        }
        let text = fs::read_to_string(triples_path).map_err(|e| Error::io(triples_path, e))?;
        for (n, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let parse_err = |m: String| Error::Parse {
                path: triples_path.into(),
                line: n + 1,
                message: m,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_err("expected 3 tab-separated fields".into()));
            }
            let resolve = |tok: &str| -> Result<EntityId> {
                let (kind, name) = tok
                    .split_once(':')
                    .ok_or_else(|| parse_err(format!("bad entity token {tok:?}")))?;
                let kind = EntityKind::from_name(kind).ok_or_else(|| parse_err(format!("bad kind {kind:?}")))?;
                g.find(kind, name)
                    .ok_or_else(|| parse_err(format!("entity {tok:?} missing from entity table")))
            };
            let head = resolve(fields[0])?;
            let tail = resolve(fields[2])?;
            let rel = Relation::from_name(fields[1])
                .ok_or_else(|| parse_err(format!("unknown relation {:?}", fields[1])))?;
            g.add_edge(head, rel, tail)?;
        }
        Ok(g)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildSummary {
    pub skipped_metadata_rows: usize,
    pub skipped_self_pairs: usize,
}

/// Builds the graph from training sessions and item metadata.
///
/// `vocabulary` is the retained item set; every vocabulary item becomes a
/// product entity even if it only occurs outside the training split.
/// Metadata rows for items outside the vocabulary are ignored, while list
/// entries that name an unknown item become `related_product` entities.
pub fn build_graph(
    train: &[Session],
    vocabulary: &[String],
    metadata: &[ItemMetadata],
    user_info: bool,
) -> Result<(KnowledgeGraph, BuildSummary)> {
    let mut g = KnowledgeGraph::new();
    let mut summary = BuildSummary::default();
    for item in vocabulary {
        g.add_entity(EntityKind::Product, item);
    }
    let vocab: HashSet<&str> = vocabulary.iter().map(String::as_str).collect();

    for meta in metadata {
        let Some(product) = g.product(&meta.item) else {
            summary.skipped_metadata_rows += 1;
            continue;
        };
        if let Some(brand) = &meta.brand {
            let b = g.add_entity(EntityKind::Brand, brand);
            g.add_bidirectional(product, Relation::ProducedBy, b)?;
        }
        for c in &meta.categories {
            let c = g.add_entity(EntityKind::Category, c);
            g.add_bidirectional(product, Relation::BelongTo, c)?;
        }
        for (rel, list) in [
            (Relation::AlsoBought, &meta.also_bought),
            (Relation::AlsoViewed, &meta.also_viewed),
            (Relation::BoughtTogether, &meta.bought_together),
        ] {
            for other in list {
                let kind = if vocab.contains(other.as_str()) {
                    EntityKind::Product
                } else {
                    EntityKind::RelatedProduct
                };
                let o = g.add_entity(kind, other);
                if o != product {
                    g.add_bidirectional(product, rel, o)?;
                }
            }
        }
    }

    for session in train {
        let mut seq = Vec::with_capacity(session.items.len() + 1);
        for item in session.items.iter().chain(std::iter::once(&session.target)) {
            let id = g.product(item).ok_or_else(|| {
                Error::Data(format!("session {} item {item:?} is not in the vocabulary", session.id))
            })?;
            seq.push(id);
        }
        for w in seq.windows(2) {
            if w[0] == w[1] {
                summary.skipped_self_pairs += 1;
                continue;
            }
            g.add_edge(w[0], Relation::CoOccur, w[1])?;
        }
        if user_info {
            let u = g.add_entity(EntityKind::User, &session.user_id);
            for &p in &seq {
                g.add_bidirectional(u, Relation::Purchase, p)?;
            }
        }
    }
    Ok((g, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(items: &[&str], target: &str) -> Session {
        Session {
            id: "s".into(),
            user_id: "u1".into(),
            items: items.iter().map(|s| s.to_string()).collect(),
            target: target.into(),
        }
    }

    fn vocab(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn metadata_edges_are_bidirectional() {
        let meta = vec![ItemMetadata {
            item: "p1".into(),
            categories: vec!["c1".into()],
            ..Default::default()
        }];
        let (g, _) = build_graph(&[], &vocab(&["p1"]), &meta, true).unwrap();
        let p1 = g.product("p1").unwrap();
        let c1 = g.find(EntityKind::Category, "c1").unwrap();
        assert!(g.contains(p1, Relation::BelongTo, c1));
        assert!(g.contains(c1, Relation::BelongTo, p1));
        assert_eq!(g.stats().relations["belong_to"], 2);
    }

    #[test]
    fn co_occur_is_directed_and_includes_target() {
        let train = vec![session(&["p1", "p2"], "p3")];
        let (g, _) = build_graph(&train, &vocab(&["p1", "p2", "p3"]), &[], false).unwrap();
        let [p1, p2, p3] = ["p1", "p2", "p3"].map(|p| g.product(p).unwrap());
        assert!(g.contains(p1, Relation::CoOccur, p2));
        assert!(g.contains(p2, Relation::CoOccur, p3));
        assert!(!g.contains(p2, Relation::CoOccur, p1));
        assert!(!g.contains(p3, Relation::CoOccur, p2));
        assert_eq!(g.num_triples(), 2);
    }

    #[test]
    fn only_training_sessions_create_co_occur() {
        // test sessions are simply not passed in; their items stay isolated products
        let (g, _) = build_graph(&[], &vocab(&["p1", "p2"]), &[], true).unwrap();
        assert_eq!(g.stats().relations["co_occur"], 0);
        assert_eq!(g.stats().entities["product"], 2);
    }

    #[test]
    fn repeated_pairs_collapse() {
        let train = vec![session(&["a"], "b"), session(&["a"], "b"), session(&["a"], "b")];
        let (g, _) = build_graph(&train, &vocab(&["a", "b"]), &[], false).unwrap();
        assert_eq!(g.stats().relations["co_occur"], 1);
    }

    #[test]
    fn user_info_flag_controls_purchase_edges() {
        let train = vec![session(&["a"], "b")];
        let (with, _) = build_graph(&train, &vocab(&["a", "b"]), &[], true).unwrap();
        let (without, _) = build_graph(&train, &vocab(&["a", "b"]), &[], false).unwrap();
        assert_eq!(with.stats().relations["purchase"], 4);
        assert_eq!(with.stats().entities["user"], 1);
        assert_eq!(without.stats().relations["purchase"], 0);
        assert_eq!(without.stats().entities["user"], 0);
    }

    #[test]
    fn unknown_related_items_become_related_products() {
        let meta = vec![ItemMetadata {
            item: "p1".into(),
            also_bought: vec!["zzz".into(), "p2".into()],
            ..Default::default()
        }];
        let (g, _) = build_graph(&[], &vocab(&["p1", "p2"]), &meta, false).unwrap();
        assert!(g.find(EntityKind::RelatedProduct, "zzz").is_some());
        assert!(g.find(EntityKind::RelatedProduct, "p2").is_none());
        let p1 = g.product("p1").unwrap();
        let p2 = g.product("p2").unwrap();
        assert!(g.contains(p2, Relation::AlsoBought, p1));
    }

    #[test]
    fn session_item_outside_vocabulary_is_an_error() {
        let train = vec![session(&["a"], "ghost")];
        assert!(matches!(
            build_graph(&train, &vocab(&["a"]), &[], false),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn neighbors_exclude_visited_in_sorted_order() {
        let mut g = KnowledgeGraph::new();
        let e = g.add_entity(EntityKind::Product, "e");
        let a = g.add_entity(EntityKind::Product, "a");
        let b = g.add_entity(EntityKind::Brand, "b");
        g.add_edge(e, Relation::ProducedBy, b).unwrap();
        g.add_edge(e, Relation::CoOccur, a).unwrap();
        g.add_edge(e, Relation::AlsoBought, a).unwrap();
        assert_eq!(
            g.neighbors(e, &[]).unwrap(),
            vec![(Relation::ProducedBy, b), (Relation::AlsoBought, a), (Relation::CoOccur, a)]
        );
        assert_eq!(g.neighbors(e, &[a]).unwrap(), vec![(Relation::ProducedBy, b)]);
        assert!(g.neighbors(e, &[a, b]).unwrap().is_empty());
        assert!(g.neighbors(EntityId(99), &[]).is_err());
    }

    #[test]
    fn empty_graph_stats_are_zero() {
        let s = KnowledgeGraph::new().stats();
        assert!(s.entities.values().all(|&c| c == 0));
        assert!(s.relations.values().all(|&c| c == 0));
        assert_eq!(s.relations.len(), 7);
    }

    #[test]
    fn tsv_round_trip() {
        let meta = vec![ItemMetadata {
            item: "p1".into(),
            brand: Some("b:1".into()),
            also_viewed: vec!["r9".into()],
            ..Default::default()
        }];
        let train = vec![session(&["p1"], "p2")];
        let (g, _) = build_graph(&train, &vocab(&["p1", "p2"]), &meta, true).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (ep, tp) = (dir.path().join("e.tsv"), dir.path().join("t.tsv"));
        g.write_entities(&ep, "fp").unwrap();
        g.write_triples(&tp, "fp").unwrap();
        let back = KnowledgeGraph::load(&ep, &tp).unwrap();
        assert_eq!(back.stats(), g.stats());
        assert!(g.triples().eq(back.triples()));
        let line = fs::read_to_string(&tp).unwrap();
        assert!(line.contains("product:p1\tproduced_by\tbrand:b:1"));
    }
}
