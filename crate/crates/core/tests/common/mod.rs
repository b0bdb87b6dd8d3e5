#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rootkgd::features::{DataMatrix, PcaModel};
use rootkgd::kgraph::{
    EntityDecl, EntityKind, GraphDocument, KnowledgeGraph, RelationDecl, TripleDecl,
};
use rootkgd::rfpa::{InitMode, RfpaParams};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Eigenvalues are
/// returned in descending order with matching eigenvector columns.
pub fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Sample covariance of z-scored columns, computed directly from the data.
pub fn standardized_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = x.shape();
    let mut z = x.clone();
    for j in 0..n {
        let mean = (0..m).map(|i| x[(i, j)]).sum::<f64>() / m as f64;
        let var = (0..m).map(|i| (x[(i, j)] - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let sd = var.sqrt();
        for i in 0..m {
            z[(i, j)] = (x[(i, j)] - mean) / sd;
        }
    }
    DMatrix::from_fn(n, n, |a, b| (0..m).map(|i| z[(i, a)] * z[(i, b)]).sum::<f64>() / (m - 1) as f64)
}

/// Rows drawn from `k` latent factors mixed into `n` columns plus noise,
/// with random column offsets and scales.
pub fn latent_data(rng: &mut ChaCha8Rng, m: usize, n: usize, k: usize, noise: f64) -> DataMatrix {
    let mix = DMatrix::from_fn(k, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let offset: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let scale: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..5.0)).collect();
    let f = DMatrix::from_fn(m, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let e = DMatrix::from_fn(m, n, |_, _| noise * rng.sample::<f64, _>(StandardNormal));
    let raw = f * mix + e;
    let values = DMatrix::from_fn(m, n, |i, j| offset[j] + scale[j] * raw[(i, j)]);
    let cols = (0..n).map(|j| format!("c{j}")).collect();
    DataMatrix::new(cols, values).unwrap()
}

pub fn random_model(rng: &mut ChaCha8Rng, n: usize) -> (PcaModel, DataMatrix) {
    let k = rng.gen_range(1..=n.min(4));
    let m = rng.gen_range(3 * n..6 * n).max(40);
    let r_pc = rng.gen_range(0.3..0.95);
    let noise = rng.gen_range(0.2..1.0);
    let data = latent_data(rng, m, n, k, noise);
    (PcaModel::fit(&data, r_pc).unwrap(), data)
}

/// Random graph with `n` entities and up to `e` distinct triples over a few
/// relation types.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, e: usize) -> KnowledgeGraph {
    let kinds = [EntityKind::Device, EntityKind::Stream, EntityKind::Substance, EntityKind::Variable];
    let entities = (0..n)
        .map(|i| EntityDecl {
            id: format!("e{i}"),
            kind: kinds[rng.gen_range(0..kinds.len())],
            label: format!("E{i}"),
            column: None,
        })
        .collect();
    let n_rel = rng.gen_range(1..=4);
    let relations = (0..n_rel)
        .map(|r| RelationDecl {
            name: format!("r{r}"),
            d: if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..20.0) },
            o: rng.gen_range(0..6),
        })
        .collect();
    let mut seen = BTreeSet::new();
    let mut triples = Vec::new();
    for _ in 0..e {
        let t = (rng.gen_range(0..n), rng.gen_range(0..n_rel), rng.gen_range(0..n));
        if seen.insert(t) {
            triples.push(TripleDecl(format!("e{}", t.0), format!("r{}", t.1), format!("e{}", t.2)));
        }
    }
    let doc = GraphDocument { name: None, entities, relations, triples };
    KnowledgeGraph::from_document(doc).unwrap()
}

pub struct LiteralRun {
    pub quantities: HashMap<String, f64>,
    pub pops: usize,
    pub pushes: usize,
}

/// Propagation executed exactly as stated: every push is queued, entries pop
/// in (priority, push order), an entity expands only while its pop count is
/// within `p_max`. Works from the document, not the graph's adjacency.
pub fn literal_rfpa(graph: &KnowledgeGraph, params: &RfpaParams, source: &str, s0: f64) -> LiteralRun {
    let doc = graph.to_document();
    let rel: HashMap<&str, &RelationDecl> = doc.relations.iter().map(|r| (r.name.as_str(), r)).collect();
    let mut adj: HashMap<&str, Vec<(f64, &str, &str)>> = HashMap::new();
    for TripleDecl(h, r, t) in &doc.triples {
        adj.entry(h.as_str()).or_default().push((rel[r.as_str()].d, t.as_str(), r.as_str()));
    }
    for edges in adj.values_mut() {
        edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)).then(a.2.cmp(b.2)));
    }
    let mut s: HashMap<String, f64> = HashMap::new();
    let mut recv: HashMap<String, u32> = HashMap::new();
    match params.init_mode {
        InitMode::SeedOnly => {
            for e in &doc.entities {
                s.insert(e.id.clone(), 0.0);
                recv.insert(e.id.clone(), 0);
            }
            s.insert(source.to_string(), s0);
            recv.insert(source.to_string(), 1);
        }
        InitMode::Baseline => {
            for e in &doc.entities {
                s.insert(e.id.clone(), s0);
                recv.insert(e.id.clone(), 1);
            }
        }
    }
    let mut pops_of: HashMap<String, u32> = HashMap::new();
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0i64, 0usize, source.to_string())));
    let mut pushes = 1usize;
    let mut pops = 0usize;
    let threshold = params.delta_s_min_ratio * s0;
    while let Some(Reverse((prio, _, head))) = heap.pop() {
        pops += 1;
        let c = pops_of.entry(head.clone()).or_insert(0);
        *c += 1;
        if *c > params.p_max {
            continue;
        }
        let edges = adj.get(head.as_str()).cloned().unwrap_or_default();
        for (d, tail, r) in edges {
            let delta = s[&head] / f64::from(recv[&head]) * (-params.sigma_r * d).exp();
            if delta < threshold {
                continue;
            }
            *s.get_mut(tail).unwrap() += delta;
            *recv.get_mut(tail).unwrap() += 1;
            heap.push(Reverse((prio + rel[r].o, pushes, tail.to_string())));
            pushes += 1;
        }
    }
    LiteralRun { quantities: s, pops, pushes }
}
