//! Run configuration: one JSON document, optionally patched by `--set`.

use std::path::{Path, PathBuf};

use glam_core::contamination::DEFAULT_NGRAM;
use glam_core::data::{ClassifierOptions, MixtureSpec, DEFAULT_PARETO_ALPHA};
use glam_core::model::ModelConfig;
use glam_core::rng::SeedStream;
use glam_core::trainer::{CheckpointPolicy, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random substream.
    pub seed: u64,
    /// Name of a published size ("0.1B/64E", ...); exclusive with `model`.
    #[serde(default)]
    pub model_preset: Option<String>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default = "default_train")]
    pub train: TrainConfig,
    #[serde(default)]
    pub checkpoint: CheckpointPolicy,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub contamination: ContaminationSection,
    #[serde(default)]
    pub shard: ShardSection,
    #[serde(default)]
    pub energy: EnergySection,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_train() -> TrainConfig {
    TrainConfig::new(100)
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Training documents (JSON lines).
    pub train_path: Option<PathBuf>,
    /// Curated positives for the quality classifier.
    pub curated_path: Option<PathBuf>,
    /// Web negatives for the quality classifier.
    pub web_path: Option<PathBuf>,
    /// Documents to filter or mix; defaults to `web_path` for filtering.
    pub input_path: Option<PathBuf>,
    pub mixture: MixtureSpec,
    pub mix_count: usize,
    pub pareto_alpha: f64,
    pub classifier: ClassifierSection,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            train_path: None,
            curated_path: None,
            web_path: None,
            input_path: None,
            mixture: MixtureSpec::default(),
            mix_count: 1000,
            pareto_alpha: DEFAULT_PARETO_ALPHA,
            classifier: ClassifierSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub hash_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let d = ClassifierOptions::default();
        Self { hash_dim: d.hash_dim, epochs: d.epochs, lr: d.lr, l2: d.l2 }
    }
}

impl ClassifierSection {
    pub fn options(&self, seed: u64) -> ClassifierOptions {
        ClassifierOptions { hash_dim: self.hash_dim, epochs: self.epochs, lr: self.lr, l2: self.l2, seed }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Task files (header line, then examples).
    pub tasks: Vec<PathBuf>,
    /// Model to evaluate; a freshly initialized one when absent.
    pub checkpoint: Option<PathBuf>,
    pub beam_width: usize,
    pub max_new_tokens: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            tasks: Vec::new(),
            checkpoint: None,
            beam_width: glam_core::eval::DEFAULT_BEAM_WIDTH,
            max_new_tokens: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContaminationSection {
    pub n: usize,
    pub datasets: Vec<DatasetRef>,
}

impl Default for ContaminationSection {
    fn default() -> Self {
        Self { n: DEFAULT_NGRAM, datasets: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRef {
    pub name: String,
    #[serde(default = "default_split")]
    pub split: String,
    /// Task file whose evaluation examples are checked.
    pub path: PathBuf,
    /// Overrides the section-wide n.
    #[serde(default)]
    pub n: Option<usize>,
}

fn default_split() -> String {
    "validation".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShardSection {
    pub mesh_x: usize,
    pub mesh_y: usize,
    pub bytes_per_element: u64,
}

impl Default for ShardSection {
    fn default() -> Self {
        Self { mesh_x: 1, mesh_y: 1, bytes_per_element: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySection {
    pub chips: f64,
    pub watts_per_chip: f64,
    pub hours: f64,
    pub pue: f64,
    pub tco2e_per_mwh: f64,
    /// Another run's consumption, for a ratio in the report.
    pub reference_mwh: Option<f64>,
}

impl Default for EnergySection {
    fn default() -> Self {
        Self {
            chips: 0.0,
            watts_per_chip: glam_core::cost::TPU_V4_WATTS,
            hours: 0.0,
            pue: 1.0,
            tco2e_per_mwh: 0.0,
            reference_mwh: None,
        }
    }
}

/// Writes `value` at a dotted `path`, creating only the final key.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> CliResult<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::UnknownKey(path.to_owned()));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        node = match node {
            Value::Object(map) => {
                let child = map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
                if child.is_null() {
                    *child = Value::Object(Default::default());
                }
                child
            }
            _ => return Err(CliError::UnknownKey(path.to_owned())),
        };
    }
    match node {
        Value::Object(map) => {
            map.insert(keys[keys.len() - 1].to_owned(), value);
            Ok(())
        }
        _ => Err(CliError::UnknownKey(path.to_owned())),
    }
}

/// `KEY=VALUE` with VALUE parsed as JSON, or taken as a string if it is not.
pub fn parse_override(s: &str) -> CliResult<(String, Value)> {
    let (k, v) =
        s.split_once('=').ok_or_else(|| CliError::InvalidConfig(format!("--set expects KEY=VALUE, got {s:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_owned()));
    Ok((k.to_owned(), value))
}

impl RunConfig {
    /// Reads the config file (or an empty document), applies overrides, and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>, out: Option<&Path>) -> CliResult<Self> {
        let mut root = match path {
            Some(p) => {
                if !p.exists() {
                    return Err(CliError::MissingFile(p.to_owned()));
                }
                serde_json::from_str(&std::fs::read_to_string(p)?)?
            }
            None => Value::Object(Default::default()),
        };
        if !root.is_object() {
            return Err(CliError::InvalidConfig("configuration must be a JSON object".into()));
        }
        for o in overrides {
            let (k, v) = parse_override(o)?;
            set_path(&mut root, &k, v)?;
        }
        if let Some(s) = seed {
            set_path(&mut root, "seed", Value::from(s))?;
        }
        if let Some(o) = out {
            set_path(&mut root, "out_dir", Value::from(o.to_string_lossy().into_owned()))?;
        }
        let cfg: RunConfig = serde_json::from_value(root)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.model.is_some() && self.model_preset.is_some() {
            return Err(CliError::InvalidConfig("give either model or model_preset, not both".into()));
        }
        if let Some(m) = &self.model {
            m.validate().map_err(|e| CliError::InvalidConfig(e.to_string()))?;
        }
        if let Some(p) = &self.model_preset {
            if ModelConfig::preset(p).is_none() {
                return Err(CliError::InvalidConfig(format!(
                    "unknown model preset {p:?}; expected one of {:?}",
                    ModelConfig::PRESETS
                )));
            }
        }
        self.data.mixture.validate().map_err(|e| CliError::InvalidConfig(e.to_string()))?;
        if !(self.data.pareto_alpha > 0.0) {
            return Err(CliError::InvalidConfig(format!(
                "pareto_alpha must be positive, got {}",
                self.data.pareto_alpha
            )));
        }
        if self.contamination.n < 2 || self.contamination.datasets.iter().any(|d| d.n.is_some_and(|n| n < 2)) {
            return Err(CliError::InvalidConfig("contamination n must be at least 2".into()));
        }
        if self.train.total_steps == 0 {
            return Err(CliError::InvalidConfig("train.total_steps must be positive".into()));
        }
        for p in self.paths() {
            if !p.exists() {
                return Err(CliError::MissingFile(p.clone()));
            }
        }
        Ok(())
    }

    fn paths(&self) -> Vec<&PathBuf> {
        let d = &self.data;
        [&d.train_path, &d.curated_path, &d.web_path, &d.input_path, &self.eval.checkpoint]
            .into_iter()
            .flatten()
            .chain(&self.eval.tasks)
            .chain(self.contamination.datasets.iter().map(|d| &d.path))
            .collect()
    }

    /// The configured model, or an error if none was given.
    pub fn model_config(&self) -> CliResult<ModelConfig> {
        match (&self.model, &self.model_preset) {
            (Some(m), _) => Ok(m.clone()),
            (None, Some(p)) => Ok(ModelConfig::preset(p).expect("validated preset")),
            (None, None) => Err(CliError::InvalidConfig("no model or model_preset configured".into())),
        }
    }

    pub fn seeds(&self) -> SeedStream {
        SeedStream::new(self.seed)
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> CliResult<&'a PathBuf> {
        path.as_ref().ok_or_else(|| CliError::InvalidConfig(format!("{key} is required for this command")))
    }
}
