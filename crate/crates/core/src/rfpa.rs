//! Ripple fault propagation.
//!
//! A fault quantity is injected at a hypothesized root and spread along the
//! graph's directed edges in priority order. Each emission from a head carries
//! the head's accumulated quantity divided by the number of receipts it has
//! had, attenuated by `exp(-sigma * d)` of the relation. The tail becomes a
//! source itself `o` rounds later. A node initiates at most `p_max` rounds, and
//! emissions smaller than `ratio * s_0` are dropped.
//!
//! Queue order is `(priority, insertion sequence)`, so runs are bit-for-bit
//! reproducible.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kgraph::{EntityIdx, GraphError, KnowledgeGraph, RelationIdx};

#[derive(Debug, Error)]
pub enum RfpaError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid propagation parameter: {0}")]
    Param(String),
    #[error("initial fault quantity must be positive and finite, got {0}")]
    InitialQuantity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Only the source starts with `s_0`.
    #[default]
    SeedOnly,
    /// Every entity starts with `s_0`.
    Baseline,
}

pub const DEFAULT_SIGMA_R: f64 = 0.1;
pub const DEFAULT_P_MAX: u32 = 3;
pub const DEFAULT_DELTA_S_MIN_RATIO: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfpaParams {
    pub sigma_r: f64,
    pub p_max: u32,
    pub delta_s_min_ratio: f64,
    pub init_mode: InitMode,
}

impl Default for RfpaParams {
    fn default() -> Self {
        Self {
            sigma_r: DEFAULT_SIGMA_R,
            p_max: DEFAULT_P_MAX,
            delta_s_min_ratio: DEFAULT_DELTA_S_MIN_RATIO,
            init_mode: InitMode::SeedOnly,
        }
    }
}

impl RfpaParams {
    pub fn validate(&self) -> Result<(), RfpaError> {
        if !(self.sigma_r > 0.0 && self.sigma_r.is_finite()) {
            return Err(RfpaError::Param(format!("sigma_r must be > 0, got {}", self.sigma_r)));
        }
        if self.p_max < 1 {
            return Err(RfpaError::Param("p_max must be >= 1".into()));
        }
        if !(self.delta_s_min_ratio > 0.0 && self.delta_s_min_ratio < 1.0) {
            return Err(RfpaError::Param(format!(
                "delta_s_min_ratio must lie in (0, 1), got {}",
                self.delta_s_min_ratio
            )));
        }
        Ok(())
    }

    /// Path attenuation `exp(-sigma_r * d)`.
    pub fn attenuation(&self, distance: f64) -> f64 {
        (-self.sigma_r * distance).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    Pop {
        priority: u64,
        entity: EntityIdx,
        quantity: f64,
    },
    Edge {
        priority: u64,
        head: EntityIdx,
        relation: RelationIdx,
        tail: EntityIdx,
        delta: f64,
        tail_quantity: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub source: EntityIdx,
    pub s_0: f64,
    /// Final fault quantity per entity, in graph order.
    pub quantities: Vec<f64>,
    pub received: Vec<u32>,
    pub initiated: Vec<u32>,
    pub pops: usize,
    pub max_priority: u64,
}

impl PropagationResult {
    pub fn quantity(&self, idx: EntityIdx) -> f64 {
        self.quantities[idx]
    }
}

/// Priority queue that keeps at most `p_max - initiated` live entries per
/// entity. Any further entry could only pop after the entity has used up its
/// initiation budget, so it is dropped on arrival (or the latest-ordered live
/// entry is, when the newcomer sorts earlier).
struct RippleQueue {
    heap: BinaryHeap<Reverse<(u64, u64, EntityIdx)>>,
    live: Vec<BTreeSet<(u64, u64)>>,
    seq: u64,
}

impl RippleQueue {
    fn new(n: usize) -> Self {
        Self {
            heap: BinaryHeap::new(),
            live: vec![BTreeSet::new(); n],
            seq: 0,
        }
    }

    fn push(&mut self, entity: EntityIdx, priority: u64, budget: u32) {
        let key = (priority, self.seq);
        self.seq += 1;
        let slots = &mut self.live[entity];
        slots.insert(key);
        if slots.len() > budget as usize {
            let dropped = slots.pop_last();
            if dropped == Some(key) {
                return;
            }
        }
        self.heap.push(Reverse((key.0, key.1, entity)));
    }

    fn pop(&mut self) -> Option<(EntityIdx, u64)> {
        while let Some(Reverse((priority, seq, entity))) = self.heap.pop() {
            if self.live[entity].remove(&(priority, seq)) {
                return Some((entity, priority));
            }
        }
        None
    }
}

pub fn propagate(
    graph: &KnowledgeGraph,
    params: &RfpaParams,
    source: EntityIdx,
    s_0: f64,
) -> Result<PropagationResult, RfpaError> {
    propagate_traced(graph, params, source, s_0, |_| {})
}

pub fn propagate_from(
    graph: &KnowledgeGraph,
    params: &RfpaParams,
    source: &str,
    s_0: f64,
) -> Result<PropagationResult, RfpaError> {
    let idx = graph.index_of(source)?;
    propagate(graph, params, idx, s_0)
}

pub fn propagate_traced<F>(
    graph: &KnowledgeGraph,
    params: &RfpaParams,
    source: EntityIdx,
    s_0: f64,
    mut observe: F,
) -> Result<PropagationResult, RfpaError>
where
    F: FnMut(&TraceEvent),
{
    params.validate()?;
    if !(s_0 > 0.0 && s_0.is_finite()) {
        return Err(RfpaError::InitialQuantity(s_0));
    }
    let n = graph.len();
    if source >= n {
        return Err(RfpaError::Graph(GraphError::UnknownEntity(format!("#{source}"))));
    }

    let (mut s, mut received) = match params.init_mode {
        InitMode::SeedOnly => {
            let mut s = vec![0.0; n];
            let mut r = vec![0u32; n];
            s[source] = s_0;
            r[source] = 1;
            (s, r)
        }
        InitMode::Baseline => (vec![s_0; n], vec![1u32; n]),
    };
    let mut initiated = vec![0u32; n];
    let threshold = params.delta_s_min_ratio * s_0;
    let attenuation: Vec<f64> = graph
        .relations()
        .iter()
        .map(|r| params.attenuation(r.distance))
        .collect();

    let mut queue = RippleQueue::new(n);
    queue.push(source, 0, params.p_max);
    let mut pops = 0usize;
    let mut max_priority = 0u64;

    while let Some((head, priority)) = queue.pop() {
        pops += 1;
        max_priority = max_priority.max(priority);
        initiated[head] += 1;
        observe(&TraceEvent::Pop {
            priority,
            entity: head,
            quantity: s[head],
        });
        if initiated[head] > params.p_max {
            continue;
        }
        for edge in graph.edges_from(head) {
            // read at emission time: a self-loop updates the head mid-loop
            let delta = s[head] / f64::from(received[head]) * attenuation[edge.relation];
            if delta < threshold {
                continue;
            }
            let tail = edge.tail;
            s[tail] += delta;
            received[tail] += 1;
            let child = priority + graph.relation(edge.relation).priority_offset;
            observe(&TraceEvent::Edge {
                priority,
                head,
                relation: edge.relation,
                tail,
                delta,
                tail_quantity: s[tail],
            });
            queue.push(tail, child, params.p_max - initiated[tail].min(params.p_max));
        }
    }

    Ok(PropagationResult {
        source,
        s_0,
        quantities: s,
        received,
        initiated,
        pops,
        max_priority,
    })
}

/// Quantities of `roster` entities, in roster order.
pub fn aligned_sequence(result: &PropagationResult, roster: &[EntityIdx]) -> Vec<f64> {
    roster.iter().map(|&i| result.quantities[i]).collect()
}

/// Resolves entity ids, then aligns.
pub fn aligned_sequence_by_id(
    graph: &KnowledgeGraph,
    result: &PropagationResult,
    roster: &[String],
) -> Result<Vec<f64>, RfpaError> {
    let idx = roster
        .iter()
        .map(|id| graph.index_of(id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aligned_sequence(result, &idx))
}

pub const TRACE_HEADER: &str = "seq\tpriority\thead\trelation\ttail\tdelta_s\ts_tail";

/// Runs a propagation and renders its event log as TSV. Pop events carry `-`
/// for relation and tail, and the popped entity's quantity in `s_tail`.
pub fn trace_tsv(
    graph: &KnowledgeGraph,
    params: &RfpaParams,
    source: EntityIdx,
    s_0: f64,
) -> Result<(String, PropagationResult), RfpaError> {
    let mut out = String::new();
    out.push_str(TRACE_HEADER);
    out.push('\n');
    let mut seq = 0usize;
    let result = propagate_traced(graph, params, source, s_0, |ev| {
        match ev {
            TraceEvent::Pop {
                priority,
                entity,
                quantity,
            } => {
                let _ = writeln!(
                    out,
                    "{seq}\t{priority}\t{}\t-\t-\t-\t{quantity}",
                    graph.entity(*entity).id
                );
            }
            TraceEvent::Edge {
                priority,
                head,
                relation,
                tail,
                delta,
                tail_quantity,
            } => {
                let _ = writeln!(
                    out,
                    "{seq}\t{priority}\t{}\t{}\t{}\t{delta}\t{tail_quantity}",
                    graph.entity(*head).id,
                    graph.relation(*relation).name,
                    graph.entity(*tail).id
                );
            }
        }
        seq += 1;
    })?;
    Ok((out, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(text: &str) -> KnowledgeGraph {
        KnowledgeGraph::from_json(text).unwrap()
    }

    const CHAIN: &str = r#"{
        "entities": [
            {"id": "A", "kind": "device", "label": "A"},
            {"id": "B", "kind": "device", "label": "B"}
        ],
        "relations": [{"name": "r", "d": 1, "o": 1}],
        "triples": [["A", "r", "B"]]
    }"#;

    #[test]
    fn isolated_node_keeps_its_seed() {
        let g = graph(r#"{"entities": [{"id": "A", "kind": "device", "label": "A"}],
                          "relations": [], "triples": []}"#);
        let r = propagate_from(&g, &RfpaParams::default(), "A", 2.5).unwrap();
        assert_eq!(r.quantities, vec![2.5]);
        assert_eq!(r.pops, 1);
    }

    #[test]
    fn chain_attenuates_once() {
        let g = graph(CHAIN);
        let p = RfpaParams::default();
        let r = propagate_from(&g, &p, "A", 1.0).unwrap();
        assert!((r.quantities[1] - 0.904_837_418_035_959_6).abs() < 1e-15);
        assert_eq!(r.quantities[0], 1.0);
        assert_eq!(r.pops, 2);
        assert_eq!(r.max_priority, 1);
    }

    #[test]
    fn baseline_mode_starts_everyone_at_s0() {
        let g = graph(CHAIN);
        let p = RfpaParams {
            init_mode: InitMode::Baseline,
            ..RfpaParams::default()
        };
        let r = propagate_from(&g, &p, "A", 1.0).unwrap();
        assert_eq!(r.quantities[0], 1.0);
        assert!((r.quantities[1] - (1.0 + (-0.1f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn threshold_skips_weak_edges() {
        let g = graph(CHAIN);
        let p = RfpaParams {
            sigma_r: 20.0,
            ..RfpaParams::default()
        };
        let r = propagate_from(&g, &p, "A", 1.0).unwrap();
        assert_eq!(r.quantities[1], 0.0);
        assert_eq!(r.pops, 1);
    }

    #[test]
    fn cycle_is_capped_by_p_max() {
        let g = graph(r#"{
            "entities": [
                {"id": "A", "kind": "device", "label": "A"},
                {"id": "B", "kind": "device", "label": "B"}
            ],
            "relations": [{"name": "r", "d": 0, "o": 1}],
            "triples": [["A", "r", "B"], ["B", "r", "A"]]
        }"#);
        for p_max in 1..5 {
            let p = RfpaParams { p_max, ..RfpaParams::default() };
            let r = propagate_from(&g, &p, "A", 1.0).unwrap();
            assert!(r.initiated.iter().all(|&c| c <= p_max));
            assert!(r.pops <= (p_max as usize + 1) * g.len() + 1);
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let g = graph(CHAIN);
        let p = RfpaParams::default();
        assert!(matches!(propagate_from(&g, &p, "Z", 1.0), Err(RfpaError::Graph(_))));
        assert!(matches!(propagate_from(&g, &p, "A", 0.0), Err(RfpaError::InitialQuantity(_))));
        assert!(matches!(propagate_from(&g, &p, "A", -1.0), Err(RfpaError::InitialQuantity(_))));
        let bad = RfpaParams { sigma_r: 0.0, ..p };
        assert!(propagate_from(&g, &bad, "A", 1.0).is_err());
        let bad = RfpaParams { p_max: 0, ..p };
        assert!(propagate_from(&g, &bad, "A", 1.0).is_err());
        let bad = RfpaParams { delta_s_min_ratio: 1.0, ..p };
        assert!(propagate_from(&g, &bad, "A", 1.0).is_err());
    }

    #[test]
    fn zero_distance_does_not_attenuate() {
        assert_eq!(RfpaParams::default().attenuation(0.0), 1.0);
        let a = RfpaParams::default().attenuation(3.0);
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn aligned_sequence_projects_and_permutes() {
        let r = PropagationResult {
            source: 0,
            s_0: 1.0,
            quantities: vec![0.9, 0.5, 0.2],
            received: vec![1, 1, 1],
            initiated: vec![1, 1, 1],
            pops: 3,
            max_priority: 1,
        };
        assert_eq!(aligned_sequence(&r, &[1, 2]), vec![0.5, 0.2]);
        assert_eq!(aligned_sequence(&r, &[2, 1]), vec![0.2, 0.5]);
        assert!(aligned_sequence(&r, &[]).is_empty());
    }

    #[test]
    fn trace_of_chain_has_one_edge_event() {
        let g = graph(CHAIN);
        let (tsv, _) = trace_tsv(&g, &RfpaParams::default(), 0, 1.0).unwrap();
        let lines: Vec<&str> = tsv.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("1\t0\tA\tr\tB\t0.9048374180359595"));
    }
}
