//! Prior industrial knowledge graph: entities, typed relations and directed
//! triples, loaded from a JSON document and validated before use.
//!
//! The graph is immutable once built. Adjacency is precomputed per head entity
//! and ordered by relation distance, then by tail id, so every traversal sees
//! the same edge order regardless of how the file listed its triples.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("failed to read graph file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed graph document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid graph: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
}

/// Physical entities are devices, streams and substances; variables are data
/// entities that may be bound to a dataset column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Device,
    Stream,
    Substance,
    Variable,
}

impl EntityKind {
    pub fn is_physical(self) -> bool {
        !matches!(self, EntityKind::Variable)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Device => "device",
            EntityKind::Stream => "stream",
            EntityKind::Substance => "substance",
            EntityKind::Variable => "variable",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EntityKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "device" => Ok(EntityKind::Device),
            "stream" => Ok(EntityKind::Stream),
            "substance" => Ok(EntityKind::Substance),
            "variable" => Ok(EntityKind::Variable),
            other => Err(format!("unknown entity kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityDecl {
    pub id: String,
    pub kind: EntityKind,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationDecl {
    pub name: String,
    pub d: f64,
    pub o: i64,
}

/// `[head, relation, tail]` as it appears in the file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripleDecl(pub String, pub String, pub String);

/// On-disk graph document. Parsing only checks shape; [`validate_document`]
/// checks references and parameter ranges.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub entities: Vec<EntityDecl>,
    pub relations: Vec<RelationDecl>,
    pub triples: Vec<TripleDecl>,
}

impl GraphDocument {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph document serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.errors {
            writeln!(f, "error: {e}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        write!(
            f,
            "{} error(s), {} warning(s)",
            self.errors.len(),
            self.warnings.len()
        )
    }
}

pub fn validate_document(doc: &GraphDocument) -> ValidationReport {
    let mut report = ValidationReport::default();

    if doc.entities.is_empty() {
        report.errors.push("no entities".to_string());
    }

    let mut ids = HashSet::new();
    let mut columns: HashMap<&str, &str> = HashMap::new();
    for e in &doc.entities {
        if e.id.is_empty() {
            report.errors.push("entity with empty id".to_string());
        } else if !ids.insert(e.id.as_str()) {
            report.errors.push(format!("duplicate entity id `{}`", e.id));
        }
        match (&e.kind, &e.column) {
            (EntityKind::Variable, None) => report
                .warnings
                .push(format!("variable `{}` has no column binding", e.id)),
            (EntityKind::Variable, Some(col)) => {
                if let Some(prev) = columns.insert(col.as_str(), e.id.as_str()) {
                    report.errors.push(format!(
                        "column `{col}` bound to both `{prev}` and `{}`",
                        e.id
                    ));
                }
            }
            (kind, Some(_)) => report.errors.push(format!(
                "{kind} entity `{}` must not carry a column binding",
                e.id
            )),
            _ => {}
        }
    }

    let mut relations = HashSet::new();
    for r in &doc.relations {
        if r.name.is_empty() {
            report.errors.push("relation with empty name".to_string());
        } else if !relations.insert(r.name.as_str()) {
            report.errors.push(format!("duplicate relation `{}`", r.name));
        }
        if !(r.d.is_finite() && r.d >= 0.0) {
            report.errors.push(format!(
                "relation `{}` has invalid distance {} (must be finite and >= 0)",
                r.name, r.d
            ));
        }
        if r.o < 0 {
            report.errors.push(format!(
                "relation `{}` has negative priority offset {}",
                r.name, r.o
            ));
        }
    }

    let mut seen = HashSet::new();
    let mut touched = HashSet::new();
    let mut used_relations = HashSet::new();
    for t in &doc.triples {
        let TripleDecl(h, r, tl) = t;
        let mut dangling = Vec::new();
        if !ids.contains(h.as_str()) {
            dangling.push(format!("head `{h}`"));
        }
        if !relations.contains(r.as_str()) {
            dangling.push(format!("relation `{r}`"));
        }
        if !ids.contains(tl.as_str()) {
            dangling.push(format!("tail `{tl}`"));
        }
        if !dangling.is_empty() {
            report.errors.push(format!(
                "triple ({h}, {r}, {tl}) references undeclared {}",
                dangling.join(", ")
            ));
        }
        if !seen.insert(t) {
            report
                .errors
                .push(format!("duplicate triple ({h}, {r}, {tl})"));
        }
        if h == tl {
            report
                .warnings
                .push(format!("self-loop triple ({h}, {r}, {tl})"));
        }
        touched.insert(h.as_str());
        touched.insert(tl.as_str());
        used_relations.insert(r.as_str());
    }

    for e in &doc.entities {
        if !touched.contains(e.id.as_str()) {
            report
                .warnings
                .push(format!("entity `{}` appears in no triple", e.id));
        }
    }
    for r in &doc.relations {
        if !used_relations.contains(r.name.as_str()) {
            report
                .warnings
                .push(format!("relation `{}` is never used", r.name));
        }
    }

    report
}

pub type EntityIdx = usize;
pub type RelationIdx = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: String,
    pub kind: EntityKind,
    pub label: String,
    pub column: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationType {
    pub name: String,
    /// Attenuation distance.
    pub distance: f64,
    /// Rounds a tail waits before it may propagate.
    pub priority_offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub relation: RelationIdx,
    pub tail: EntityIdx,
}

#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    name: Option<String>,
    entities: Vec<Entity>,
    relations: Vec<RelationType>,
    triples: Vec<(EntityIdx, RelationIdx, EntityIdx)>,
    by_id: HashMap<String, EntityIdx>,
    out_index: Vec<Vec<Edge>>,
}

impl KnowledgeGraph {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GraphError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| GraphError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut doc = GraphDocument::from_json(&text)?;
        if doc.name.is_none() {
            doc.name = path
                .file_name()
                .and_then(|s| s.to_str())
                .map(|s| s.trim_end_matches(".json").trim_end_matches(".kg").to_string());
        }
        Self::from_document(doc)
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        Self::from_document(GraphDocument::from_json(text)?)
    }

    pub fn from_document(doc: GraphDocument) -> Result<Self, GraphError> {
        let report = validate_document(&doc);
        if !report.is_ok() {
            return Err(GraphError::Invalid(report.errors));
        }
        for w in &report.warnings {
            log::debug!("graph: {w}");
        }

        let entities: Vec<Entity> = doc
            .entities
            .into_iter()
            .map(|e| Entity {
                id: e.id,
                kind: e.kind,
                label: e.label,
                column: e.column,
            })
            .collect();
        let by_id: HashMap<String, EntityIdx> = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect();
        let relations: Vec<RelationType> = doc
            .relations
            .into_iter()
            .map(|r| RelationType {
                name: r.name,
                distance: r.d,
                priority_offset: r.o as u64,
            })
            .collect();
        let rel_by_name: HashMap<&str, RelationIdx> = relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.name.as_str(), i))
            .collect();

        let triples: Vec<_> = doc
            .triples
            .iter()
            .map(|TripleDecl(h, r, t)| (by_id[h], rel_by_name[r.as_str()], by_id[t]))
            .collect();

        let mut out_index = vec![Vec::new(); entities.len()];
        for &(h, r, t) in &triples {
            out_index[h].push(Edge {
                relation: r,
                tail: t,
            });
        }
        for edges in &mut out_index {
            edges.sort_by(|a, b| {
                relations[a.relation]
                    .distance
                    .total_cmp(&relations[b.relation].distance)
                    .then_with(|| entities[a.tail].id.cmp(&entities[b.tail].id))
                    .then_with(|| relations[a.relation].name.cmp(&relations[b.relation].name))
            });
        }

        Ok(Self {
            name: doc.name,
            entities,
            relations,
            triples,
            by_id,
            out_index,
        })
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity(&self, idx: EntityIdx) -> &Entity {
        &self.entities[idx]
    }

    pub fn relations(&self) -> &[RelationType] {
        &self.relations
    }

    pub fn relation(&self, idx: RelationIdx) -> &RelationType {
        &self.relations[idx]
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn index_of(&self, id: &str) -> Result<EntityIdx, GraphError> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownEntity(id.to_string()))
    }

    pub fn count_kind(&self, kind: EntityKind) -> usize {
        self.entities.iter().filter(|e| e.kind == kind).count()
    }

    pub fn count_relation(&self, name: &str) -> usize {
        self.triples
            .iter()
            .filter(|(_, r, _)| self.relations[*r].name == name)
            .count()
    }

    /// Outgoing edges of `idx`, ascending by relation distance then tail id.
    pub fn edges_from(&self, idx: EntityIdx) -> &[Edge] {
        &self.out_index[idx]
    }

    pub fn out_edges(&self, id: &str) -> Result<Vec<(&RelationType, &str)>, GraphError> {
        let idx = self.index_of(id)?;
        Ok(self.out_index[idx]
            .iter()
            .map(|e| (&self.relations[e.relation], self.entities[e.tail].id.as_str()))
            .collect())
    }

    /// Variable entities carrying a column binding, in declaration order.
    pub fn bound_variables(&self) -> impl Iterator<Item = (EntityIdx, &Entity)> {
        self.entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == EntityKind::Variable && e.column.is_some())
    }

    pub fn validate(&self) -> ValidationReport {
        validate_document(&self.to_document())
    }

    pub fn to_document(&self) -> GraphDocument {
        GraphDocument {
            name: self.name.clone(),
            entities: self
                .entities
                .iter()
                .map(|e| EntityDecl {
                    id: e.id.clone(),
                    kind: e.kind,
                    label: e.label.clone(),
                    column: e.column.clone(),
                })
                .collect(),
            relations: self
                .relations
                .iter()
                .map(|r| RelationDecl {
                    name: r.name.clone(),
                    d: r.distance,
                    o: r.priority_offset as i64,
                })
                .collect(),
            triples: self
                .triples
                .iter()
                .map(|&(h, r, t)| {
                    TripleDecl(
                        self.entities[h].id.clone(),
                        self.relations[r].name.clone(),
                        self.entities[t].id.clone(),
                    )
                })
                .collect(),
        }
    }
}
