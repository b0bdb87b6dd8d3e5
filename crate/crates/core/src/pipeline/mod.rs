//! End-to-end orchestration: fit a monitoring model on normal data, compute
//! fault contributions, and rank root-cause candidates on the graph.

mod config;

pub use config::{DiagnosisConfig, DEFAULT_CONSTANT_S0, DEFAULT_R_PC, DEFAULT_TOP_K};

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{contribution_rate, ContributionVector, DataMatrix, FeatureError, PcaModel};
use crate::kgraph::{EntityKind, GraphDocument, GraphError, KnowledgeGraph, ValidationReport};
use crate::rfpa::{trace_tsv, RfpaError};
use crate::scoring::{rank_all, RootCauseRanking, ScoringError, WindowInfo};
use crate::synth::{
    generate_plant, simulate, FaultInjection, FaultKind, PlantModel, PlantSpec, SynthError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Rfpa(#[from] RfpaError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{0}")]
    Binding(String),
}

impl PipelineError {
    /// 2 for unparseable input or configuration, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Graph(GraphError::Parse(_))
            | PipelineError::Feature(FeatureError::Csv(_)) => 2,
            _ => 1,
        }
    }
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf, PipelineError> {
    p.as_ref()
        .ok_or_else(|| PipelineError::Config(format!("{what} is required")))
}

/// `(csv column, entity id)` pairs, in graph declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Bindings {
    pub pairs: Vec<(String, String)>,
    /// Came from the config rather than the graph's own `column` fields.
    pub explicit: bool,
}

impl Bindings {
    pub fn entity_for(&self, column: &str) -> Option<&str> {
        self.pairs.iter().find(|(c, _)| c == column).map(|(_, e)| e.as_str())
    }
}

pub fn resolve_bindings(
    graph: &KnowledgeGraph,
    cfg: &DiagnosisConfig,
) -> Result<Bindings, PipelineError> {
    let Some(map) = &cfg.column_bindings else {
        let pairs = graph
            .bound_variables()
            .map(|(_, e)| (e.column.clone().unwrap_or_default(), e.id.clone()))
            .collect();
        return Ok(Bindings { pairs, explicit: false });
    };
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(map.len());
    for (col, id) in map {
        let idx = graph
            .index_of(id)
            .map_err(|_| PipelineError::Binding(format!("column `{col}` is bound to unknown entity `{id}`")))?;
        if graph.entity(idx).kind != EntityKind::Variable {
            return Err(PipelineError::Binding(format!(
                "column `{col}` is bound to `{id}`, which is not a variable"
            )));
        }
        if !seen.insert(id.as_str()) {
            return Err(PipelineError::Binding(format!("entity `{id}` is bound to more than one column")));
        }
        pairs.push((idx, col.clone(), id.clone()));
    }
    pairs.sort_by_key(|p| p.0);
    Ok(Bindings {
        pairs: pairs.into_iter().map(|(_, c, e)| (c, e)).collect(),
        explicit: true,
    })
}

/// Columns of `header` that enter the model, in header order. Graph-derived
/// bindings whose column is absent are dropped from the run; explicit
/// bindings and `model_columns` must be present.
pub fn model_roster(
    header: &[String],
    bindings: &Bindings,
    model_columns: &[String],
) -> Result<Vec<String>, PipelineError> {
    let present: HashSet<&str> = header.iter().map(String::as_str).collect();
    let mut wanted: HashSet<&str> = HashSet::new();
    for (col, id) in &bindings.pairs {
        if present.contains(col.as_str()) {
            wanted.insert(col);
        } else if bindings.explicit {
            return Err(FeatureError::MissingColumn(col.clone()).into());
        } else {
            log::info!("variable `{id}` has no column `{col}` in this dataset; excluded from the run");
        }
    }
    for col in model_columns {
        if !present.contains(col.as_str()) {
            return Err(FeatureError::MissingColumn(col.clone()).into());
        }
        wanted.insert(col);
    }
    let ignored: Vec<&str> = header
        .iter()
        .map(String::as_str)
        .filter(|c| !wanted.contains(c))
        .collect();
    if !ignored.is_empty() {
        log::warn!("ignoring unbound columns: {}", ignored.join(", "));
    }
    let roster: Vec<String> = header.iter().filter(|c| wanted.contains(c.as_str())).cloned().collect();
    if roster.is_empty() {
        return Err(PipelineError::Binding("no dataset column is bound to a graph variable".into()));
    }
    Ok(roster)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitSummary {
    pub n_vars: usize,
    pub n_pc: usize,
    pub retained_variance: f64,
}

impl FitSummary {
    pub fn of(model: &PcaModel) -> Self {
        Self {
            n_vars: model.n_vars(),
            n_pc: model.n_pc(),
            retained_variance: model.retained_variance(),
        }
    }
}

pub fn fit_on(
    graph: &KnowledgeGraph,
    normal: &DataMatrix,
    cfg: &DiagnosisConfig,
) -> Result<PcaModel, PipelineError> {
    let bindings = resolve_bindings(graph, cfg)?;
    let roster = model_roster(normal.columns(), &bindings, &cfg.model_columns)?;
    Ok(PcaModel::fit(&normal.select(&roster)?, cfg.r_pc)?)
}

/// Fits on `normal_data_path` and writes the model to `model_path`.
pub fn cmd_fit(cfg: &DiagnosisConfig) -> Result<(PcaModel, FitSummary), PipelineError> {
    cfg.validate()?;
    let graph = KnowledgeGraph::load(require(&cfg.graph_path, "graph path")?)?;
    let normal = DataMatrix::read_csv(require(&cfg.normal_data_path, "normal data path")?)?;
    let out = require(&cfg.model_path, "model path")?;
    let model = fit_on(&graph, &normal, cfg)?;
    model.save(out)?;
    let summary = FitSummary::of(&model);
    Ok((model, summary))
}

/// Contribution rate over the configured window, moved from dataset
/// columns to entity ids and renormalized over the bound variables.
pub fn contributions_on(
    graph: &KnowledgeGraph,
    model: &PcaModel,
    fault: &DataMatrix,
    cfg: &DiagnosisConfig,
) -> Result<ContributionVector, PipelineError> {
    let start = cfg
        .fault_start
        .ok_or_else(|| PipelineError::Config("fault_start is required".into()))?;
    let window = fault.window(start, cfg.window)?;
    let rate = contribution_rate(model, &window, cfg.rbc_statistic, cfg.normalization_order)?;
    let bindings = resolve_bindings(graph, cfg)?;
    let bound = rate.rebind(|col| bindings.entity_for(col).map(str::to_string));
    if bound.is_empty() {
        return Err(PipelineError::Binding("no model column is bound to a graph variable".into()));
    }
    if bound.scores().iter().sum::<f64>() <= 0.0 {
        return Err(FeatureError::AllZero.into());
    }
    Ok(bound.normalized())
}

pub fn diagnose_on(
    graph: &KnowledgeGraph,
    model: &PcaModel,
    fault: &DataMatrix,
    cfg: &DiagnosisConfig,
) -> Result<RootCauseRanking, PipelineError> {
    cfg.validate()?;
    let cont = contributions_on(graph, model, fault, cfg)?;
    let mut ranking = rank_all(graph, &cfg.rfpa_params(), &cont, &cfg.scoring_options())?;
    ranking.params.r_pc = Some(model.r_pc());
    ranking.window = Some(WindowInfo {
        fault_start: cfg.fault_start.unwrap_or_default(),
        length: cfg.window,
        statistic: cfg.rbc_statistic,
        normalization: cfg.normalization_order,
    });
    Ok(ranking)
}

/// Loads the model from `model_path` if set, otherwise fits one on
/// `normal_data_path`.
pub fn cmd_diagnose(cfg: &DiagnosisConfig) -> Result<RootCauseRanking, PipelineError> {
    cfg.validate()?;
    let graph = KnowledgeGraph::load(require(&cfg.graph_path, "graph path")?)?;
    let model = match (&cfg.model_path, &cfg.normal_data_path) {
        (Some(m), _) => PcaModel::load(m)?,
        (None, Some(n)) => fit_on(&graph, &DataMatrix::read_csv(n)?, cfg)?,
        (None, None) => {
            return Err(PipelineError::Config(
                "either a model path or a normal data path is required".into(),
            ))
        }
    };
    let fault = DataMatrix::read_csv(require(&cfg.fault_data_path, "fault data path")?)?;
    diagnose_on(&graph, &model, &fault, cfg)
}

pub fn cmd_trace(cfg: &DiagnosisConfig, source: &str, s_0: f64) -> Result<String, PipelineError> {
    cfg.validate()?;
    let graph = KnowledgeGraph::load(require(&cfg.graph_path, "graph path")?)?;
    let (tsv, _) = trace_tsv(&graph, &cfg.rfpa_params(), graph.index_of(source)?, s_0)?;
    Ok(tsv)
}

/// Parses the file and validates it without building the graph, so every
/// problem is reported at once.
pub fn cmd_validate(path: impl AsRef<Path>) -> Result<ValidationReport, PipelineError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    let doc = GraphDocument::from_json(&text)?;
    Ok(crate::kgraph::validate_document(&doc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub spec: PlantSpec,
    /// Variable or device id; a random variable is drawn when absent.
    pub root: Option<String>,
    pub kind: FaultKind,
    pub magnitude: f64,
    pub normal_samples: usize,
    pub fault_samples: usize,
    pub fault_start: usize,
    pub fault_duration: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            spec: PlantSpec::default(),
            root: None,
            kind: FaultKind::Step,
            magnitude: 10.0,
            normal_samples: 2000,
            fault_samples: 300,
            fault_start: 100,
            fault_duration: 200,
        }
    }
}

/// Ground truth for a generated case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub injection: FaultInjection,
    pub root_kind: EntityKind,
    /// Device owning the root variable (the root itself for a device fault).
    pub owner: String,
    pub normal_samples: usize,
    pub fault_samples: usize,
    pub plant: PlantModel,
}

pub struct SynthCase {
    pub graph: KnowledgeGraph,
    pub normal: DataMatrix,
    pub fault: DataMatrix,
    pub manifest: SynthManifest,
}

pub fn synth_case(opts: &SynthOptions) -> Result<SynthCase, PipelineError> {
    let seed = opts.spec.seed;
    let (graph, plant) = generate_plant(&opts.spec)?;
    let root = match &opts.root {
        Some(r) => r.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
            plant.columns().choose(&mut rng).cloned().expect("plant has variables")
        }
    };
    let root_idx = graph.index_of(&root)?;
    let root_kind = graph.entity(root_idx).kind;
    let owner = match root_kind {
        EntityKind::Variable => plant.owner(&root).map(str::to_string),
        EntityKind::Device => Some(root.clone()),
        _ => None,
    }
    .ok_or_else(|| PipelineError::Config(format!("fault root `{root}` must be a variable or a device")))?;
    let injection = FaultInjection {
        root,
        kind: opts.kind,
        magnitude: opts.magnitude,
        start: opts.fault_start,
        duration: opts.fault_duration,
    };
    let normal = simulate(&plant, opts.normal_samples, None, seed.wrapping_add(1))?;
    let fault = simulate(&plant, opts.fault_samples, Some(&injection), seed.wrapping_add(2))?;
    Ok(SynthCase {
        graph,
        normal,
        fault,
        manifest: SynthManifest {
            seed,
            injection,
            root_kind,
            owner,
            normal_samples: opts.normal_samples,
            fault_samples: opts.fault_samples,
            plant,
        },
    })
}

pub const SYNTH_GRAPH_FILE: &str = "graph.kg.json";
pub const SYNTH_NORMAL_FILE: &str = "normal.csv";
pub const SYNTH_FAULT_FILE: &str = "fault.csv";
pub const SYNTH_MANIFEST_FILE: &str = "manifest.json";
pub const SYNTH_CONFIG_FILE: &str = "config.json";

/// Writes graph, datasets, manifest and a ready-to-run config into `dir`.
pub fn write_synth_case(case: &SynthCase, dir: impl AsRef<Path>) -> Result<(), PipelineError> {
    let dir = dir.as_ref();
    let io = |e: std::io::Error| PipelineError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join(SYNTH_GRAPH_FILE), case.graph.to_document().to_json_pretty()).map_err(io)?;
    case.normal.write_csv(dir.join(SYNTH_NORMAL_FILE))?;
    case.fault.write_csv(dir.join(SYNTH_FAULT_FILE))?;
    let manifest = serde_json::to_string_pretty(&case.manifest).expect("manifest serializes");
    std::fs::write(dir.join(SYNTH_MANIFEST_FILE), manifest).map_err(io)?;
    let cfg = DiagnosisConfig {
        graph_path: Some(SYNTH_GRAPH_FILE.into()),
        normal_data_path: Some(SYNTH_NORMAL_FILE.into()),
        fault_data_path: Some(SYNTH_FAULT_FILE.into()),
        fault_start: Some(case.manifest.injection.start),
        ..DiagnosisConfig::default()
    };
    std::fs::write(dir.join(SYNTH_CONFIG_FILE), cfg.to_json_pretty()).map_err(io)?;
    Ok(())
}
