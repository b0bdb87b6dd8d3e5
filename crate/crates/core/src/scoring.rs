//! Root-cause scoring and ranking.
//!
//! Each candidate is treated as the fault origin: a ripple is propagated from
//! it and the resulting quantities on the measured variables are compared to
//! the observed contribution rates by cosine similarity.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{ContributionVector, NormalizationOrder, RbcStatistic};
use crate::kgraph::{EntityIdx, EntityKind, GraphError, KnowledgeGraph};
use crate::rfpa::{self, RfpaError, RfpaParams};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("contribution roster is empty")]
    EmptyRoster,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Rfpa(#[from] RfpaError),
    #[error("invalid scoring option: {0}")]
    Option(String),
    #[error("malformed report: {0}")]
    Report(#[from] serde_json::Error),
}

pub fn default_candidate_kinds() -> Vec<EntityKind> {
    vec![EntityKind::Variable, EntityKind::Stream, EntityKind::Device]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringOptions {
    /// Seed quantity for candidates without a positive contribution.
    pub constant_s0: f64,
    /// Drop the candidate's own entry from both vectors before the cosine.
    pub exclude_self: bool,
    pub candidate_kinds: Vec<EntityKind>,
}

impl Default for ScoringOptions {
    fn default() -> Self {
        Self {
            constant_s0: 1.0,
            exclude_self: false,
            candidate_kinds: default_candidate_kinds(),
        }
    }
}

/// Cosine similarity, 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Contribution vector resolved against a graph, ready to score candidates.
#[derive(Debug, Clone)]
pub struct Scorer<'g> {
    graph: &'g KnowledgeGraph,
    params: RfpaParams,
    options: ScoringOptions,
    roster: Vec<EntityIdx>,
    cont: Vec<f64>,
}

impl<'g> Scorer<'g> {
    pub fn new(
        graph: &'g KnowledgeGraph,
        params: RfpaParams,
        contributions: &ContributionVector,
        options: ScoringOptions,
    ) -> Result<Self, ScoringError> {
        if contributions.is_empty() {
            return Err(ScoringError::EmptyRoster);
        }
        if !(options.constant_s0 > 0.0 && options.constant_s0.is_finite()) {
            return Err(ScoringError::Option(format!(
                "constant_s0 must be positive, got {}",
                options.constant_s0
            )));
        }
        params.validate()?;
        let roster = contributions
            .roster()
            .iter()
            .map(|id| graph.index_of(id))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            graph,
            params,
            options,
            roster,
            cont: contributions.scores().to_vec(),
        })
    }

    fn seed(&self, candidate: EntityIdx) -> f64 {
        match self.roster.iter().position(|&r| r == candidate) {
            Some(pos) if self.cont[pos] > 0.0 => self.cont[pos],
            _ => self.options.constant_s0,
        }
    }

    pub fn score_idx(&self, candidate: EntityIdx) -> Result<f64, ScoringError> {
        let s_0 = self.seed(candidate);
        let result = rfpa::propagate(self.graph, &self.params, candidate, s_0)?;
        let aligned = rfpa::aligned_sequence(&result, &self.roster);
        if self.options.exclude_self {
            let (a, c): (Vec<f64>, Vec<f64>) = aligned
                .iter()
                .zip(&self.cont)
                .zip(&self.roster)
                .filter(|(_, &r)| r != candidate)
                .map(|((&a, &c), _)| (a, c))
                .unzip();
            Ok(cosine(&a, &c))
        } else {
            Ok(cosine(&aligned, &self.cont))
        }
    }

    pub fn score(&self, candidate: &str) -> Result<f64, ScoringError> {
        self.score_idx(self.graph.index_of(candidate)?)
    }

    pub fn candidates(&self) -> Vec<EntityIdx> {
        self.graph
            .entities()
            .iter()
            .enumerate()
            .filter(|(_, e)| self.options.candidate_kinds.contains(&e.kind))
            .map(|(i, _)| i)
            .collect()
    }

    /// Scores every candidate (in parallel on the current rayon pool) and
    /// sorts descending, ties by id ascending.
    pub fn rank(&self) -> Result<Vec<RankEntry>, ScoringError> {
        let scored = self
            .candidates()
            .into_par_iter()
            .map(|i| {
                let e = self.graph.entity(i);
                self.score_idx(i).map(|score| RankEntry {
                    id: e.id.clone(),
                    label: e.label.clone(),
                    kind: e.kind,
                    score,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(sort_entries(scored))
    }
}

pub fn sort_entries(mut entries: Vec<RankEntry>) -> Vec<RankEntry> {
    entries.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    entries
}

pub fn root_score(
    graph: &KnowledgeGraph,
    params: &RfpaParams,
    contributions: &ContributionVector,
    candidate: &str,
    options: &ScoringOptions,
) -> Result<f64, ScoringError> {
    Scorer::new(graph, *params, contributions, options.clone())?.score(candidate)
}

pub fn rank_all(
    graph: &KnowledgeGraph,
    params: &RfpaParams,
    contributions: &ContributionVector,
    options: &ScoringOptions,
) -> Result<RootCauseRanking, ScoringError> {
    let scorer = Scorer::new(graph, *params, contributions, options.clone())?;
    let ranking = scorer.rank()?;
    Ok(RootCauseRanking {
        graph: graph.name().unwrap_or("graph").to_string(),
        params: RankingParams {
            rfpa: *params,
            scoring: options.clone(),
            r_pc: None,
        },
        window: None,
        ranking,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub id: String,
    pub label: String,
    pub kind: EntityKind,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingParams {
    #[serde(flatten)]
    pub rfpa: RfpaParams,
    #[serde(flatten)]
    pub scoring: ScoringOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_pc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowInfo {
    pub fault_start: usize,
    pub length: usize,
    pub statistic: RbcStatistic,
    pub normalization: NormalizationOrder,
}

/// Serialized as the JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootCauseRanking {
    pub graph: String,
    pub params: RankingParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowInfo>,
    pub ranking: Vec<RankEntry>,
}

impl RootCauseRanking {
    pub fn variables(&self) -> impl Iterator<Item = &RankEntry> {
        self.ranking.iter().filter(|e| e.kind == EntityKind::Variable)
    }

    pub fn physical(&self) -> impl Iterator<Item = &RankEntry> {
        self.ranking.iter().filter(|e| e.kind.is_physical())
    }

    pub fn from_json(text: &str) -> Result<Self, ScoringError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportMode {
    #[default]
    Text,
    Json,
}

/// Text mode: two side-by-side top-k columns, variables and physical
/// entities. Json mode: the full ranking with metadata.
pub fn format_report(ranking: &RootCauseRanking, top_k: usize, mode: ReportMode) -> String {
    match mode {
        ReportMode::Json => {
            let mut s = serde_json::to_string_pretty(ranking).expect("ranking serializes");
            s.push('\n');
            s
        }
        ReportMode::Text => format_text(ranking, top_k.max(1)),
    }
}

fn format_text(ranking: &RootCauseRanking, top_k: usize) -> String {
    let vars: Vec<&RankEntry> = ranking.variables().take(top_k).collect();
    let phys: Vec<&RankEntry> = ranking.physical().take(top_k).collect();
    let right_title = if ranking.params.scoring.candidate_kinds.contains(&EntityKind::Substance) {
        "Stream, Device and Substance"
    } else {
        "Stream and Device"
    };
    let lw = vars.iter().map(|e| e.label.len()).max().unwrap_or(0).max("Variable".len());
    let rw = phys.iter().map(|e| e.label.len()).max().unwrap_or(0).max(right_title.len());

    let mut out = String::new();
    let _ = writeln!(out, "graph: {}", ranking.graph);
    if let Some(w) = &ranking.window {
        let _ = writeln!(out, "window: samples [{}, {})", w.fault_start, w.fault_start + w.length);
    }
    let _ = writeln!(
        out,
        "{:>4}  {:<lw$}  {:>7}  {:<rw$}  {:>7}",
        "Rank", "Variable", "Score", right_title, "Score"
    );
    for i in 0..vars.len().max(phys.len()) {
        let (l, ls) = match vars.get(i) {
            Some(e) => (e.label.as_str(), format!("{:.5}", e.score)),
            None => ("", String::new()),
        };
        let (r, rs) = match phys.get(i) {
            Some(e) => (e.label.as_str(), format!("{:.5}", e.score)),
            None => ("", String::new()),
        };
        let line = format!("{:>4}  {l:<lw$}  {ls:>7}  {r:<rw$}  {rs:>7}", i + 1);
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const STAR: &str = r#"{
        "entities": [
            {"id": "D", "kind": "device", "label": "Device"},
            {"id": "S", "kind": "stream", "label": "Stream"},
            {"id": "M", "kind": "substance", "label": "Stuff"},
            {"id": "v1", "kind": "variable", "label": "v1", "column": "v1"},
            {"id": "v2", "kind": "variable", "label": "v2", "column": "v2"},
            {"id": "v3", "kind": "variable", "label": "v3", "column": "v3"}
        ],
        "relations": [
            {"name": "State", "d": 1, "o": 1},
            {"name": "Output", "d": 3, "o": 5},
            {"name": "Contain", "d": 5, "o": 8}
        ],
        "triples": [
            ["D", "State", "v1"], ["D", "State", "v2"], ["S", "Output", "D"],
            ["S", "State", "v3"], ["S", "Contain", "M"]
        ]
    }"#;

    fn cont(scores: &[f64]) -> ContributionVector {
        ContributionVector::new(vec!["v1".into(), "v2".into(), "v3".into()], scores.to_vec())
    }

    #[test]
    fn cosine_edge_cases() {
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 3.0]), 0.0);
    }

    #[test]
    fn leaf_variable_with_one_hot_contribution_scores_one() {
        let g = KnowledgeGraph::from_json(STAR).unwrap();
        let s = root_score(&g, &RfpaParams::default(), &cont(&[0.0, 1.0, 0.0]), "v2", &ScoringOptions::default())
            .unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_support_scores_zero() {
        let g = KnowledgeGraph::from_json(STAR).unwrap();
        // v1 is a leaf: its ripple never reaches v3
        let s = root_score(&g, &RfpaParams::default(), &cont(&[0.0, 0.0, 1.0]), "v1", &ScoringOptions::default())
            .unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn substance_excluded_by_default() {
        let g = KnowledgeGraph::from_json(STAR).unwrap();
        let r = rank_all(&g, &RfpaParams::default(), &cont(&[0.5, 0.3, 0.2]), &ScoringOptions::default()).unwrap();
        assert_eq!(r.ranking.len(), 5);
        assert!(r.ranking.iter().all(|e| e.kind != EntityKind::Substance));
        let opts = ScoringOptions {
            candidate_kinds: vec![EntityKind::Substance],
            ..ScoringOptions::default()
        };
        let r = rank_all(&g, &RfpaParams::default(), &cont(&[0.5, 0.3, 0.2]), &opts).unwrap();
        assert_eq!(r.ranking.len(), 1);
    }

    #[test]
    fn ties_ordered_by_id() {
        let g = KnowledgeGraph::from_json(STAR).unwrap();
        // v1 and v2 are symmetric leaves with equal contribution
        let r = rank_all(&g, &RfpaParams::default(), &cont(&[0.4, 0.4, 0.2]), &ScoringOptions::default()).unwrap();
        let pos = |id: &str| r.ranking.iter().position(|e| e.id == id).unwrap();
        let (a, b) = (&r.ranking[pos("v1")], &r.ranking[pos("v2")]);
        assert_eq!(a.score.to_bits(), b.score.to_bits());
        assert_eq!(pos("v1") + 1, pos("v2"));
    }

    #[test]
    fn empty_roster_and_unknown_candidate() {
        let g = KnowledgeGraph::from_json(STAR).unwrap();
        let empty = ContributionVector::new(vec![], vec![]);
        assert!(matches!(
            root_score(&g, &RfpaParams::default(), &empty, "D", &ScoringOptions::default()),
            Err(ScoringError::EmptyRoster)
        ));
        assert!(matches!(
            root_score(&g, &RfpaParams::default(), &cont(&[1.0, 0.0, 0.0]), "nope", &ScoringOptions::default()),
            Err(ScoringError::Graph(_))
        ));
    }

    #[test]
    fn exclude_self_drops_candidate_entry() {
        let g = KnowledgeGraph::from_json(STAR).unwrap();
        let opts = ScoringOptions {
            exclude_self: true,
            ..ScoringOptions::default()
        };
        // leaf v2 reaches only itself; without its entry nothing is left
        let s = root_score(&g, &RfpaParams::default(), &cont(&[0.2, 0.6, 0.2]), "v2", &opts).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn text_report_truncates_without_padding() {
        let g = KnowledgeGraph::from_json(STAR).unwrap();
        let r = rank_all(&g, &RfpaParams::default(), &cont(&[0.5, 0.3, 0.2]), &ScoringOptions::default()).unwrap();
        let text = format_report(&r, 50, ReportMode::Text);
        // header lines + max(3 variables, 2 physical)
        assert_eq!(text.lines().count(), 2 + 3);
        let text = format_report(&r, 1, ReportMode::Text);
        assert_eq!(text.lines().count(), 2 + 1);
        assert!(text.contains("Stream and Device"));
    }

    #[test]
    fn json_report_round_trips_exactly() {
        let g = KnowledgeGraph::from_json(STAR).unwrap();
        let r = rank_all(&g, &RfpaParams::default(), &cont(&[0.51, 0.29, 0.2]), &ScoringOptions::default()).unwrap();
        let back = RootCauseRanking::from_json(&format_report(&r, 3, ReportMode::Json)).unwrap();
        assert_eq!(back, r);
    }
}
