use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::features::{NormalizationOrder, RbcStatistic, DEFAULT_WINDOW};
use crate::kgraph::EntityKind;
use crate::rfpa::{InitMode, RfpaParams, DEFAULT_DELTA_S_MIN_RATIO, DEFAULT_P_MAX, DEFAULT_SIGMA_R};
use crate::scoring::{default_candidate_kinds, ScoringOptions};

pub const DEFAULT_R_PC: f64 = 0.5;
pub const DEFAULT_TOP_K: usize = 10;
pub const DEFAULT_CONSTANT_S0: f64 = 1.0;

/// Everything a diagnosis run needs. Missing keys take the defaults below;
/// relative paths in a config file are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosisConfig {
    pub graph_path: Option<PathBuf>,
    pub normal_data_path: Option<PathBuf>,
    pub fault_data_path: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    /// CSV column -> Variable entity id. When absent, each Variable's own
    /// `column` field is used.
    pub column_bindings: Option<BTreeMap<String, String>>,
    /// Extra CSV columns that enter the PCA model without a graph entity.
    pub model_columns: Vec<String>,
    pub r_pc: f64,
    pub sigma_r: f64,
    pub p_max: u32,
    pub delta_s_min_ratio: f64,
    pub init_mode: InitMode,
    pub fault_start: Option<usize>,
    pub window: usize,
    pub rbc_statistic: RbcStatistic,
    pub normalization_order: NormalizationOrder,
    pub constant_s0: f64,
    pub exclude_self: bool,
    pub candidate_filter: Vec<EntityKind>,
    pub top_k: usize,
}

impl Default for DiagnosisConfig {
    fn default() -> Self {
        Self {
            graph_path: None,
            normal_data_path: None,
            fault_data_path: None,
            model_path: None,
            column_bindings: None,
            model_columns: Vec::new(),
            r_pc: DEFAULT_R_PC,
            sigma_r: DEFAULT_SIGMA_R,
            p_max: DEFAULT_P_MAX,
            delta_s_min_ratio: DEFAULT_DELTA_S_MIN_RATIO,
            init_mode: InitMode::SeedOnly,
            fault_start: None,
            window: DEFAULT_WINDOW,
            rbc_statistic: RbcStatistic::Spe,
            normalization_order: NormalizationOrder::PerSample,
            constant_s0: DEFAULT_CONSTANT_S0,
            exclude_self: false,
            candidate_filter: default_candidate_kinds(),
            top_k: DEFAULT_TOP_K,
        }
    }
}

impl DiagnosisConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.graph_path,
            &mut self.normal_data_path,
            &mut self.fault_data_path,
            &mut self.model_path,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn rfpa_params(&self) -> RfpaParams {
        RfpaParams {
            sigma_r: self.sigma_r,
            p_max: self.p_max,
            delta_s_min_ratio: self.delta_s_min_ratio,
            init_mode: self.init_mode,
        }
    }

    pub fn scoring_options(&self) -> ScoringOptions {
        ScoringOptions {
            constant_s0: self.constant_s0,
            exclude_self: self.exclude_self,
            candidate_kinds: self.candidate_filter.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.window < 1 {
            return Err(PipelineError::Config("window must be >= 1".into()));
        }
        if !(self.r_pc > 0.0 && self.r_pc <= 1.0) {
            return Err(PipelineError::Config(format!("r_pc must lie in (0, 1], got {}", self.r_pc)));
        }
        if !(self.constant_s0 > 0.0 && self.constant_s0.is_finite()) {
            return Err(PipelineError::Config("constant_s0 must be positive".into()));
        }
        if self.candidate_filter.is_empty() {
            return Err(PipelineError::Config("candidate_filter is empty".into()));
        }
        self.rfpa_params()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(DiagnosisConfig::from_json("{}").unwrap(), DiagnosisConfig::default());
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(DiagnosisConfig::from_json(r#"{"sigma": 0.1}"#).is_err());
    }

    #[test]
    fn every_parameter_is_settable() {
        let text = r#"{
            "graph_path": "g.json", "normal_data_path": "n.csv", "fault_data_path": "f.csv",
            "model_path": "m.json", "column_bindings": {"a": "x1"}, "model_columns": ["b"],
            "r_pc": 0.5, "sigma_r": 0.2, "p_max": 5, "delta_s_min_ratio": 0.001,
            "init_mode": "baseline", "fault_start": 160, "window": 50, "rbc_statistic": "t2",
            "normalization_order": "post_average", "constant_s0": 2.0, "exclude_self": true,
            "candidate_filter": ["device"], "top_k": 3
        }"#;
        let c = DiagnosisConfig::from_json(text).unwrap();
        assert_eq!(c.p_max, 5);
        assert_eq!(c.init_mode, InitMode::Baseline);
        assert_eq!(c.rbc_statistic, RbcStatistic::T2);
        assert_eq!(c.normalization_order, NormalizationOrder::PostAverage);
        assert_eq!(c.candidate_filter, vec![EntityKind::Device]);
        assert_eq!(c.fault_start, Some(160));
        let back = DiagnosisConfig::from_json(&c.to_json_pretty()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let mut c = DiagnosisConfig::from_json(r#"{"graph_path": "g.json", "model_path": "/abs/m.json"}"#).unwrap();
        c.resolve_paths(Path::new("/data/run"));
        assert_eq!(c.graph_path.unwrap(), PathBuf::from("/data/run/g.json"));
        assert_eq!(c.model_path.unwrap(), PathBuf::from("/abs/m.json"));
    }
}
