//! Experiment configuration: a human-editable TOML document mirroring the
//! harness's knobs. Unknown keys are rejected; `--override key=value` edits
//! apply to the parsed document before validation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::NOISE_AMPLITUDE;
use crate::error::{Error, Result};
use crate::network::{hex_digest, LayerSpec, NetworkSpec, TaskId};
use crate::pipeline::{AugmentMode, TrainConfig};

/// One task of the benchmark: its id, grade count, and generated volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub id: String,
    pub grades: usize,
    /// Examples generated per grade before the 50/25/25 split.
    pub n_per_grade: usize,
}

/// Trunk geometry; the trunk is conv/relu/pool blocks followed by a final
/// conv/relu/global-average-pool and a dense layer to `feature_dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub trunk_channels: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { trunk_channels: vec![8, 8, 16], feature_dim: 32 }
    }
}

/// Training knobs shared by every cell of an experiment; per-cell temperature
/// and per-task counts are supplied by the runners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub temperature: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: AugmentMode,
    pub offline_copies: usize,
    pub apply_t_to_hard: bool,
    pub t_squared_compensation: bool,
    /// Warm-start the multi-task network from the pre-trained single-task
    /// trunk instead of a fresh initialization.
    pub warm_start: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            temperature: 3.0,
            learning_rate: 2e-3,
            epochs: 12,
            batch_size: 16,
            augment: AugmentMode::Online,
            offline_copies: 1,
            apply_t_to_hard: false,
            t_squared_compensation: false,
            warm_start: false,
        }
    }
}

impl TrainSettings {
    /// Concrete per-run config.
    pub fn train_config(
        &self,
        seed: u64,
        temperature: f64,
        per_task_counts: BTreeMap<TaskId, usize>,
        native_only: bool,
    ) -> TrainConfig {
        TrainConfig {
            temperature,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            per_task_counts,
            seed,
            augment: self.augment,
            offline_copies: self.offline_copies,
            apply_t_to_hard: self.apply_t_to_hard,
            t_squared_compensation: self.t_squared_compensation,
            native_only_supervision: native_only,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Temperatures at which the 2x2 {synergic labels} x {multi-task} grid runs.
    pub t_grid: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { t_grid: vec![1.0, 3.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub t_grid: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { t_grid: vec![1.0, 3.0, 5.0, 8.0, 10.0, 20.0, 50.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatioConfig {
    /// Auxiliary-task training counts; the primary task keeps its full set.
    pub auxiliary_counts: Vec<usize>,
}

impl Default for RatioConfig {
    fn default() -> Self {
        Self { auxiliary_counts: vec![60, 150, 300, 450, 600] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NtaskConfig {
    /// Per-class caps applied to every task's training split; each cap is
    /// compared single-task vs. SALL.
    pub per_class_caps: Vec<usize>,
}

impl Default for NtaskConfig {
    fn default() -> Self {
        Self { per_class_caps: vec![1500, 3000] }
    }
}

/// Root configuration of the experiment harness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Fraction of lesion kinds shared between the first two tasks.
    pub overlap: f64,
    /// Square image side in pixels.
    pub image_size: usize,
    /// Generator noise amplitude.
    pub noise_amplitude: f64,
    pub tasks: Vec<TaskConfig>,
    pub network: NetworkConfig,
    pub train: TrainSettings,
    pub ablation: AblationConfig,
    pub sweep: SweepConfig,
    pub ratio: RatioConfig,
    pub ntask: NtaskConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs"),
            seeds: vec![0, 1, 2],
            overlap: 0.6,
            image_size: 64,
            noise_amplitude: NOISE_AMPLITUDE,
            tasks: vec![
                TaskConfig { id: "taska".into(), grades: 4, n_per_grade: 300 },
                TaskConfig { id: "taskb".into(), grades: 4, n_per_grade: 300 },
            ],
            network: NetworkConfig::default(),
            train: TrainSettings::default(),
            ablation: AblationConfig::default(),
            sweep: SweepConfig::default(),
            ratio: RatioConfig::default(),
            ntask: NtaskConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Load with `key=value` overrides applied to the TOML document (dotted
    /// keys address nested tables, e.g. `train.epochs=4`).
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => toml::to_string(&ExperimentConfig::default())
                .map_err(|e| Error::Config(e.to_string()))?,
        };
        let mut doc: toml::Value =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        for entry in overrides {
            let (key, value) = entry.split_once('=').ok_or_else(|| {
                Error::Config(format!("override '{entry}' is not of the form key=value"))
            })?;
            apply_override(&mut doc, key.trim(), value.trim())?;
        }
        let cfg: ExperimentConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds list is empty".into()));
        }
        if self.tasks.len() < 2 || self.tasks.len() > 3 {
            return Err(Error::Config(format!(
                "{} tasks configured; the benchmark supports 2 or 3",
                self.tasks.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::Config(format!("overlap {} outside [0,1]", self.overlap)));
        }
        if self.image_size < 16 {
            return Err(Error::Config(format!("image_size {} too small", self.image_size)));
        }
        for t in &self.tasks {
            if t.grades < 2 {
                return Err(Error::Config(format!("task '{}' needs >= 2 grades", t.id)));
            }
            if t.n_per_grade < 4 {
                return Err(Error::Config(format!(
                    "task '{}' needs >= 4 examples per grade to split",
                    t.id
                )));
            }
        }
        if self.tasks.len() == 3 && self.tasks[2].grades != 2 {
            return Err(Error::Config(
                "the third task must be binary (normal vs. diseased)".into(),
            ));
        }
        if self.network.trunk_channels.is_empty() {
            return Err(Error::Config("trunk_channels is empty".into()));
        }
        Ok(())
    }

    /// Stable fingerprint carried by every artifact this config produces.
    pub fn fingerprint(&self) -> String {
        let encoded = serde_json::to_string(self).expect("config serializes");
        hex_digest(encoded.as_bytes())[..16].to_string()
    }

    /// Network spec over the given heads.
    pub fn network_spec(&self, heads: Vec<(TaskId, usize)>) -> NetworkSpec {
        let mut trunk = Vec::new();
        let n = self.network.trunk_channels.len();
        for (i, &ch) in self.network.trunk_channels.iter().enumerate() {
            trunk.push(LayerSpec::Conv { out_channels: ch, kernel: 3, stride: 1, padding: 1 });
            trunk.push(LayerSpec::Relu);
            if i + 1 < n {
                trunk.push(LayerSpec::MaxPool { size: 2 });
            } else {
                trunk.push(LayerSpec::GlobalAvgPool);
            }
        }
        trunk.push(LayerSpec::Dense { out_dim: self.network.feature_dim });
        trunk.push(LayerSpec::Relu);
        NetworkSpec {
            input_shape: [3, self.image_size, self.image_size],
            trunk,
            heads: heads
                .into_iter()
                .map(|(task, classes)| crate::network::HeadSpec { task, classes })
                .collect(),
        }
    }

    pub fn task_ids(&self) -> Vec<TaskId> {
        self.tasks.iter().map(|t| TaskId::new(t.id.clone())).collect()
    }
}

fn apply_override(doc: &mut toml::Value, key: &str, value: &str) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key '{key}'")));
    }
    let mut node = doc;
    for part in &parts[..parts.len() - 1] {
        node = node
            .as_table_mut()
            .and_then(|t| t.get_mut(*part))
            .ok_or_else(|| Error::Config(format!("unknown config table '{part}' in '{key}'")))?;
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("'{key}' does not address a table entry")))?;
    let leaf = parts[parts.len() - 1];
    // Parse the value as TOML, falling back to a string literal.
    let parsed: toml::Value = match format!("x = {value}").parse::<toml::Table>() {
        Ok(t) => t["x"].clone(),
        Err(_) => toml::Value::String(value.to_string()),
    };
    table.insert(leaf.to_string(), parsed);
    Ok(())
}
