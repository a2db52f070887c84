//! Run configuration: one JSON document, optionally patched by `--set`
//! overrides before it is parsed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use nnmut_core::operators::OperatorKind;
use nnmut_core::search::SearchConfig;
use nnmut_core::spectral::{DEFAULT_BINS, DEFAULT_SAMPLE_FRACTION, DEFAULT_UPPER_PERCENTILE};
use nnmut_core::stats::{WeakDirection, DEFAULT_KEEP_FRACTION, DEFAULT_RSE_THRESHOLD};
use nnmut_core::{
    Activation, KillThresholds, LayerSpec, ModelGraph, OperatorConfig, SearchedParam, Task,
    TrainingConfig,
};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    pub subject: Subject,
    pub originals: Originals,
    #[serde(default)]
    pub search: SearchDefaults,
    #[serde(default)]
    pub thresholds: KillThresholds,
    pub operators: Vec<OperatorRun>,
    #[serde(default)]
    pub weak: WeakConfig,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub persist: Persist,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subject {
    pub model: ModelSpec,
    pub data: DataSource,
    /// Correctness tolerance for regression subjects.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Mlp {
        inputs: usize,
        hidden: Vec<usize>,
        outputs: usize,
        #[serde(default = "relu")]
        activation: Activation,
        #[serde(default = "classification")]
        task: Task,
    },
    Layers {
        input_shape: Vec<usize>,
        #[serde(default = "classification")]
        task: Task,
        layers: Vec<LayerSpec>,
    },
}

fn relu() -> Activation {
    Activation::Relu
}

fn classification() -> Task {
    Task::Classification
}

impl ModelSpec {
    pub fn graph(&self) -> nnmut_core::Result<ModelGraph> {
        match self {
            ModelSpec::Mlp {
                inputs,
                hidden,
                outputs,
                activation,
                task,
            } => ModelGraph::mlp(*inputs, hidden, *outputs, *activation, *task),
            ModelSpec::Layers {
                input_shape,
                task,
                layers,
            } => ModelGraph::new(input_shape.clone(), *task, layers.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Gaussian blobs around the unit circle.
    Blobs {
        classes: usize,
        per_class: usize,
        spread: f64,
    },
    /// `0.5 sin(pi x1) + 0.5 x2^2` plus noise.
    Regression { n: usize, noise: f64 },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    /// Datasets previously written by `nnmut train` or an exporter.
    Directory { train: PathBuf, test: PathBuf },
}

/// Exactly one of `training` and `directory`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Originals {
    pub m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingConfig>,
    /// Directory of pre-trained models, one subdirectory per instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchDefaults {
    pub k_max: usize,
    pub rse_threshold: f64,
    pub precision: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
    pub lb: f64,
    pub ub: f64,
}

impl Default for SearchDefaults {
    fn default() -> Self {
        SearchDefaults {
            k_max: 5,
            rse_threshold: DEFAULT_RSE_THRESHOLD,
            precision: 5e-4,
            timeout_secs: None,
            lb: 0.0,
            ub: 1.0,
        }
    }
}

/// One operator to search; unset fields take operator defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorRun {
    pub operator: OperatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub searched_param: Option<SearchedParam>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inhibition: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_scope: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ub: Option<f64>,
}

impl OperatorRun {
    pub fn new(operator: OperatorKind) -> Self {
        OperatorRun {
            operator,
            searched_param: None,
            ratio: None,
            inhibition: None,
            noise_sigma: None,
            layer_scope: None,
            lb: None,
            ub: None,
        }
    }

    pub fn name(&self) -> String {
        self.operator.to_string()
    }

    pub fn search_config(
        &self,
        defaults: &SearchDefaults,
        thresholds: KillThresholds,
        tau: Option<f32>,
    ) -> SearchConfig {
        let mut op = OperatorConfig::new(self.operator);
        if let Some(r) = self.ratio {
            op.ratio = r;
        }
        if let Some(l) = self.inhibition {
            op.inhibition = Some(l);
        }
        if let Some(s) = self.noise_sigma {
            op.noise_sigma = Some(s);
        }
        op.layer_scope = self.layer_scope.clone();
        let param = self
            .searched_param
            .unwrap_or(self.operator.default_searched_param());
        op.searched_param = Some(param);
        let mut sc = SearchConfig::new(op, param);
        sc.lb = self.lb.unwrap_or(defaults.lb);
        sc.ub = self.ub.unwrap_or(defaults.ub);
        sc.k_max = defaults.k_max;
        sc.rse_threshold = defaults.rse_threshold;
        sc.precision = defaults.precision;
        sc.timeout_secs = defaults.timeout_secs;
        sc.thresholds = thresholds;
        sc.tau = tau;
        sc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakConfig {
    pub keep_fraction: f64,
    pub direction: WeakDirection,
}

impl Default for WeakConfig {
    fn default() -> Self {
        WeakConfig {
            keep_fraction: DEFAULT_KEEP_FRACTION,
            direction: WeakDirection::KeepEasy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    pub enabled: bool,
    pub bins: usize,
    pub upper_percentile: f64,
    pub sample_fraction: f64,
    /// Layer indices; defaults to the last hidden layer.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<usize>>,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig {
            enabled: true,
            bins: DEFAULT_BINS,
            upper_percentile: DEFAULT_UPPER_PERCENTILE,
            sample_fraction: DEFAULT_SAMPLE_FRACTION,
            layers: None,
        }
    }
}

/// Which archived mutant instances are written as model files. Every
/// instance can be regenerated from the seeds in `entry.json`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Persist {
    #[default]
    All,
    /// Only the last (hardest) entry of each archive.
    Hardest,
    None,
}

impl RunConfig {
    /// Parse `text`, apply `key.path=value` overrides, and validate.
    pub fn from_json_str(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc: Value = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.originals.m < 2 {
            return bad("m >= 2 required".into());
        }
        match (&self.originals.training, &self.originals.directory) {
            (Some(t), None) => t.validate().map_err(|e| CliError::Config(e.to_string()))?,
            (None, Some(d)) => {
                if !d.is_dir() {
                    return bad(format!(
                        "originals directory {} does not exist",
                        d.display()
                    ));
                }
            }
            _ => return bad("originals need exactly one of `training` and `directory`".into()),
        }
        let graph = self
            .subject
            .model
            .graph()
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        if graph.task == Task::Regression && !self.subject.tau.is_some_and(|t| t > 0.0) {
            return bad("regression subjects need a positive `subject.tau`".into());
        }
        match &self.subject.data {
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    if !p.is_file() {
                        return bad(format!("data file {} does not exist", p.display()));
                    }
                }
            }
            DataSource::Directory { train, test } => {
                for p in [train, test] {
                    if !p.is_dir() {
                        return bad(format!("data directory {} does not exist", p.display()));
                    }
                }
            }
            DataSource::Blobs { classes, .. } if graph.output_len() < *classes => {
                return bad(format!(
                    "{classes} classes but the model has {} outputs",
                    graph.output_len()
                ));
            }
            _ => {}
        }
        if self.operators.is_empty() {
            return bad("no operators configured".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for op in &self.operators {
            if !names.insert(op.name()) {
                return bad(format!("operator {} listed twice", op.name()));
            }
            let sc = op.search_config(&self.search, self.thresholds, self.subject.tau);
            sc.validate()
                .map_err(|e| CliError::Config(format!("{}: {e}", op.name())))?;
            sc.operator
                .validate(&graph)
                .map_err(|e| CliError::Config(format!("{}: {e}", op.name())))?;
        }
        if !(self.weak.keep_fraction > 0.0 && self.weak.keep_fraction < 1.0) {
            return bad("weak.keep_fraction must be in (0, 1)".into());
        }
        if self.spectral.bins < 2 {
            return bad("spectral.bins must be >= 2".into());
        }
        if !(self.spectral.sample_fraction > 0.0 && self.spectral.sample_fraction <= 1.0) {
            return bad("spectral.sample_fraction must be in (0, 1]".into());
        }
        Ok(())
    }
}

/// Set `a.b.0.c=value` in `doc`. The value is parsed as JSON when possible
/// and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| {
                    CliError::Config(format!("`{part}` in `{path}` is not an index"))
                })?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| {
                    CliError::Config(format!("index {idx} out of range ({len}) in `{path}`"))
                })?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(CliError::Config(format!("`{path}` descends into a scalar"))),
        };
    }
    Err(CliError::Config("empty override path".into()))
}
