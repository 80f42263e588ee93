//! Typed medical knowledge graph.
//!
//! Ingested once from JSON-Lines records and immutable afterwards. Each line
//! is either `{"entity": {"id", "name", "kind", "aliases"?, "rarity_weight"?}}`
//! or `{"edge": {"src", "rel", "dst"}}`. Edges may precede the entities they
//! reference; they are resolved when the stream closes.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntityKind {
    Disease,
    Symptom,
    LabTest,
    ImagingFinding,
    Drug,
    Mechanism,
    Anatomy,
    Contraindication,
}

impl EntityKind {
    pub const ALL: [EntityKind; 8] = [
        EntityKind::Disease,
        EntityKind::Symptom,
        EntityKind::LabTest,
        EntityKind::ImagingFinding,
        EntityKind::Drug,
        EntityKind::Mechanism,
        EntityKind::Anatomy,
        EntityKind::Contraindication,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Disease => "Disease",
            EntityKind::Symptom => "Symptom",
            EntityKind::LabTest => "LabTest",
            EntityKind::ImagingFinding => "ImagingFinding",
            EntityKind::Drug => "Drug",
            EntityKind::Mechanism => "Mechanism",
            EntityKind::Anatomy => "Anatomy",
            EntityKind::Contraindication => "Contraindication",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EntityKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::BadKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    HasSymptom,
    DiagnosedBy,
    ImagedAs,
    TreatedBy,
    HasMechanism,
    ContraindicatedWith,
    LocatedIn,
    Causes,
}

impl Relation {
    pub const ALL: [Relation; 8] = [
        Relation::HasSymptom,
        Relation::DiagnosedBy,
        Relation::ImagedAs,
        Relation::TreatedBy,
        Relation::HasMechanism,
        Relation::ContraindicatedWith,
        Relation::LocatedIn,
        Relation::Causes,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::HasSymptom => "has_symptom",
            Relation::DiagnosedBy => "diagnosed_by",
            Relation::ImagedAs => "imaged_as",
            Relation::TreatedBy => "treated_by",
            Relation::HasMechanism => "has_mechanism",
            Relation::ContraindicatedWith => "contraindicated_with",
            Relation::LocatedIn => "located_in",
            Relation::Causes => "causes",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Relation::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::BadKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub name: String,
    pub kind: EntityKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
    /// Explicit rarity override; when absent the inverse-degree score applies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rarity_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub rel: Relation,
    pub dst: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
    Both,
}

/// One line of the ingestion stream.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Record {
    Entity(RawEntity),
    Edge(RawEdge),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawEntity {
    pub id: String,
    pub name: String,
    pub kind: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub rarity_weight: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawEdge {
    pub src: String,
    pub rel: String,
    pub dst: String,
}

/// Edge with resolved endpoint indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct EdgeIx {
    pub src: usize,
    pub rel: Relation,
    pub dst: usize,
}

#[derive(Debug, Clone)]
pub struct Graph {
    entities: Vec<Entity>,
    index: HashMap<String, usize>,
    edges: Vec<Edge>,
    edge_ix: Vec<EdgeIx>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
}

/// Result of ingestion: the graph plus bookkeeping.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub graph: Graph,
    pub duplicate_edges_dropped: usize,
}

/// Loads a graph file.
pub fn ingest_graph(path: &Path) -> Result<Ingested> {
    let reader = crate::jsonl::open(path)?;
    Graph::ingest(reader, &path.display().to_string())
}

impl Graph {
    /// Parses a JSON-Lines stream and builds the graph.
    pub fn ingest<R: BufRead>(reader: R, source: &str) -> Result<Ingested> {
        let records: Vec<Record> = crate::jsonl::read_from(reader, source)?;
        Graph::from_records(records)
    }

    pub fn from_records<I: IntoIterator<Item = Record>>(records: I) -> Result<Ingested> {
        let mut entities = Vec::new();
        let mut index = HashMap::new();
        let mut pending = Vec::new();
        for record in records {
            match record {
                Record::Entity(raw) => {
                    let kind: EntityKind = raw.kind.parse()?;
                    if let Some(w) = raw.rarity_weight {
                        if !(w.is_finite() && w >= 0.0) {
                            return Err(Error::Precondition(format!(
                                "rarity_weight of `{}` must be finite and nonnegative",
                                raw.id
                            )));
                        }
                    }
                    if index.contains_key(&raw.id) {
                        return Err(Error::DuplicateEntityId(raw.id));
                    }
                    index.insert(raw.id.clone(), entities.len());
                    entities.push(Entity {
                        id: raw.id,
                        name: raw.name,
                        kind,
                        aliases: raw.aliases,
                        rarity_weight: raw.rarity_weight,
                    });
                }
                Record::Edge(raw) => {
                    let rel: Relation = raw.rel.parse()?;
                    pending.push(Edge {
                        src: raw.src,
                        rel,
                        dst: raw.dst,
                    });
                }
            }
        }

        let mut seen = HashSet::new();
        let mut edges = Vec::new();
        let mut edge_ix = Vec::new();
        let mut out_adj = vec![Vec::new(); entities.len()];
        let mut in_adj = vec![Vec::new(); entities.len()];
        let mut duplicates = 0;
        for edge in pending {
            let src = *index
                .get(&edge.src)
                .ok_or_else(|| Error::UnknownEntityRef(edge.src.clone()))?;
            let dst = *index
                .get(&edge.dst)
                .ok_or_else(|| Error::UnknownEntityRef(edge.dst.clone()))?;
            if !seen.insert((src, edge.rel, dst)) {
                duplicates += 1;
                continue;
            }
            let e = edges.len();
            out_adj[src].push(e);
            in_adj[dst].push(e);
            edge_ix.push(EdgeIx {
                src,
                rel: edge.rel,
                dst,
            });
            edges.push(edge);
        }
        if duplicates > 0 {
            log::warn!("dropped {duplicates} duplicate edges during ingestion");
        }

        let mut graph = Graph {
            entities,
            index,
            edges,
            edge_ix,
            out_adj,
            in_adj,
        };
        graph.sort_adjacency();
        Ok(Ingested {
            graph,
            duplicate_edges_dropped: duplicates,
        })
    }

    fn sort_adjacency(&mut self) {
        let edges = &self.edge_ix;
        let ents = &self.entities;
        for list in &mut self.out_adj {
            list.sort_by(|&a, &b| {
                (edges[a].rel, &ents[edges[a].dst].id).cmp(&(edges[b].rel, &ents[edges[b].dst].id))
            });
        }
        for list in &mut self.in_adj {
            list.sort_by(|&a, &b| {
                (edges[a].rel, &ents[edges[a].src].id).cmp(&(edges[b].rel, &ents[edges[b].src].id))
            });
        }
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Entities in ingestion order.
    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.index.get(id).map(|&i| &self.entities[i])
    }

    pub fn contains_edge(&self, src: &str, rel: Relation, dst: &str) -> bool {
        match (self.index.get(src), self.index.get(dst)) {
            (Some(&s), Some(&d)) => self.out_adj[s]
                .iter()
                .any(|&e| self.edge_ix[e].rel == rel && self.edge_ix[e].dst == d),
            _ => false,
        }
    }

    pub(crate) fn index_of(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownEntityRef(id.to_string()))
    }

    pub(crate) fn entity_at(&self, ix: usize) -> &Entity {
        &self.entities[ix]
    }

    pub(crate) fn edge_at(&self, e: usize) -> EdgeIx {
        self.edge_ix[e]
    }

    pub(crate) fn edge_record(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    pub(crate) fn out_edges(&self, ix: usize) -> &[usize] {
        &self.out_adj[ix]
    }

    pub(crate) fn in_edges(&self, ix: usize) -> &[usize] {
        &self.in_adj[ix]
    }

    /// Total degree (in + out).
    pub fn degree(&self, id: &str) -> Result<usize> {
        let ix = self.index_of(id)?;
        Ok(self.degree_at(ix))
    }

    pub(crate) fn degree_at(&self, ix: usize) -> usize {
        self.out_adj[ix].len() + self.in_adj[ix].len()
    }

    /// Incident edges and the entity at the far end, sorted by
    /// `(relation, neighbor id)`; for `Both`, outgoing precede incoming on ties.
    pub fn neighbors(
        &self,
        id: &str,
        rel_filter: Option<&[Relation]>,
        direction: Direction,
    ) -> Result<Vec<(&Edge, &Entity)>> {
        let ix = self.index_of(id)?;
        let keep = |rel: Relation| rel_filter.is_none_or(|set| set.contains(&rel));
        let mut found: Vec<(Relation, &str, u8, usize)> = Vec::new();
        if matches!(direction, Direction::Out | Direction::Both) {
            for &e in &self.out_adj[ix] {
                let edge = self.edge_ix[e];
                if keep(edge.rel) {
                    found.push((edge.rel, &self.entities[edge.dst].id, 0, e));
                }
            }
        }
        if matches!(direction, Direction::In | Direction::Both) {
            for &e in &self.in_adj[ix] {
                let edge = self.edge_ix[e];
                // self-loops were already listed as outgoing
                if direction == Direction::Both && edge.src == edge.dst {
                    continue;
                }
                if keep(edge.rel) {
                    found.push((edge.rel, &self.entities[edge.src].id, 1, e));
                }
            }
        }
        found.sort();
        Ok(found
            .into_iter()
            .map(|(_, other, _, e)| {
                let other = &self.entities[self.index[other]];
                (&self.edges[e], other)
            })
            .collect())
    }

    /// Rarity of an entity: the explicit `rarity_weight` when present,
    /// otherwise `1 / (1 + degree)`.
    pub fn rarity_score(&self, id: &str) -> Result<f64> {
        let ix = self.index_of(id)?;
        Ok(self.rarity_at(ix))
    }

    pub(crate) fn rarity_at(&self, ix: usize) -> f64 {
        match self.entities[ix].rarity_weight {
            Some(w) => w,
            None => 1.0 / (1.0 + self.degree_at(ix) as f64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Ingested> {
        Graph::ingest(text.as_bytes(), "inline")
    }

    const TWO: &str = r#"{"entity": {"id": "d1", "name": "Gout", "kind": "Disease"}}
{"entity": {"id": "s1", "name": "Joint pain", "kind": "Symptom"}}
{"edge": {"src": "d1", "rel": "has_symptom", "dst": "s1"}}
"#;

    #[test]
    fn minimal_graph() {
        let g = parse(TWO).unwrap();
        assert_eq!(g.graph.entity_count(), 2);
        assert_eq!(g.graph.edge_count(), 1);
        assert_eq!(g.duplicate_edges_dropped, 0);
    }

    #[test]
    fn unknown_edge_endpoint() {
        let text = TWO.replace(r#""dst": "s1""#, r#""dst": "s9""#);
        match parse(&text) {
            Err(Error::UnknownEntityRef(id)) => assert_eq!(id, "s9"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn edges_may_precede_entities() {
        let mut lines: Vec<&str> = TWO.lines().collect();
        lines.rotate_right(1);
        let g = parse(&lines.join("\n")).unwrap();
        assert_eq!(g.graph.edge_count(), 1);
    }

    #[test]
    fn bad_kind_and_relation() {
        let text = TWO.replace("Symptom", "Feeling");
        assert!(matches!(parse(&text), Err(Error::BadKind(k)) if k == "Feeling"));
        let text = TWO.replace("has_symptom", "resembles");
        assert!(matches!(parse(&text), Err(Error::BadKind(k)) if k == "resembles"));
    }

    #[test]
    fn duplicate_ids_and_edges() {
        let text = format!("{TWO}{}", r#"{"entity": {"id": "d1", "name": "Other", "kind": "Drug"}}"#);
        assert!(matches!(parse(&text), Err(Error::DuplicateEntityId(id)) if id == "d1"));

        let text = format!("{TWO}{}", r#"{"edge": {"src": "d1", "rel": "has_symptom", "dst": "s1"}}"#);
        let g = parse(&text).unwrap();
        assert_eq!(g.graph.edge_count(), 1);
        assert_eq!(g.duplicate_edges_dropped, 1);
    }

    #[test]
    fn unknown_field_is_a_parse_error() {
        let text = r#"{"entity": {"id": "d1", "name": "Gout", "kind": "Disease", "colour": "red"}}"#;
        assert!(matches!(parse(text), Err(Error::CorpusParse { line: 1, .. })));
    }

    #[test]
    fn neighbor_queries() {
        let text = format!(
            "{TWO}{}\n{}\n",
            r#"{"entity": {"id": "x", "name": "Isolated", "kind": "Anatomy"}}"#,
            r#"{"entity": {"id": "r1", "name": "Colchicine", "kind": "Drug"}}"#
        ) + r#"{"edge": {"src": "d1", "rel": "treated_by", "dst": "r1"}}"#;
        let g = parse(&text).unwrap().graph;
        let out = g.neighbors("d1", None, Direction::Out).unwrap();
        let ids: Vec<_> = out.iter().map(|(_, e)| e.id.as_str()).collect();
        assert_eq!(ids, ["s1", "r1"]);
        let only = g
            .neighbors("d1", Some(&[Relation::TreatedBy]), Direction::Out)
            .unwrap();
        assert_eq!(only.len(), 1);
        assert!(g.neighbors("x", None, Direction::Both).unwrap().is_empty());
        assert_eq!(g.neighbors("s1", None, Direction::In).unwrap().len(), 1);
        assert!(g.neighbors("s1", None, Direction::Out).unwrap().is_empty());
        assert!(matches!(
            g.neighbors("zzz", None, Direction::Out),
            Err(Error::UnknownEntityRef(_))
        ));
    }

    #[test]
    fn rarity() {
        let text = format!(
            "{TWO}{}",
            r#"{"entity": {"id": "x", "name": "Isolated", "kind": "Anatomy", "rarity_weight": 7.5}}"#
        );
        let g = parse(&text).unwrap().graph;
        assert_eq!(g.rarity_score("d1").unwrap(), 0.5);
        assert_eq!(g.rarity_score("x").unwrap(), 7.5);

        let mut lines = vec![r#"{"entity": {"id": "hub", "name": "Hub", "kind": "Disease"}}"#.to_string()];
        for i in 0..3 {
            lines.push(format!(r#"{{"entity": {{"id": "s{i}", "name": "S{i}", "kind": "Symptom"}}}}"#));
            lines.push(format!(r#"{{"edge": {{"src": "hub", "rel": "has_symptom", "dst": "s{i}"}}}}"#));
        }
        lines.push(r#"{"entity": {"id": "lone", "name": "Lone", "kind": "Drug"}}"#.to_string());
        let g = parse(&lines.join("\n")).unwrap().graph;
        assert_eq!(g.rarity_score("hub").unwrap(), 0.25);
        assert_eq!(g.rarity_score("lone").unwrap(), 1.0);
    }
}
