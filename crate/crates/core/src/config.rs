//! Experiment documents: one JSON file holding every knob of a run.
//!
//! Precedence, lowest first: struct defaults, the config file, then
//! command-line flags (`--seed`, `--ablate`, dotted `KEY=VALUE` overrides).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    /// Independent trials (fresh unseen draw and model seed) per setting
    /// when evaluating without a checkpoint.
    pub trials: usize,
    /// Unseen classes per trial; unset means the corpus split size.
    pub n_unseen: Option<usize>,
    /// Cluster count for discovery; unset means the number of unseen classes.
    pub discover_k: Option<usize>,
    /// Random-emission draws per video for the caption chance rate.
    pub caption_chance_draws: usize,
    /// Also write per-trial rows as CSV next to the JSON report.
    pub write_csv: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { trials: 5, n_unseen: None, discover_k: None, caption_chance_draws: 20, write_csv: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: SyntheticSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    /// Directory of an existing corpus; unset means generate from `data`.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// Shorthand keys accepted by [`ExperimentConfig::set`] and sweeps.
const ALIASES: &[(&str, &[&str])] = &[
    ("paired_fraction", &["train.paired_fraction"]),
    ("unpaired_pool", &["data.unpaired_videos", "data.unpaired_texts"]),
];

impl ExperimentConfig {
    pub fn with_seed(seed: u64) -> Self {
        let mut c = Self {
            seed,
            data: SyntheticSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            data_dir: None,
            out_dir: None,
        };
        c.propagate_seed();
        c
    }

    /// Parses a document. `seed_flag` stands in for a missing `seed` key and
    /// overrides a present one.
    pub fn from_json(text: &str, seed_flag: Option<u64>) -> Result<Self> {
        let mut doc: Value = serde_json::from_str(text)?;
        let obj = doc
            .as_object_mut()
            .ok_or_else(|| Error::Config("config document must be a JSON object".into()))?;
        match (obj.contains_key("seed"), seed_flag) {
            (_, Some(s)) => {
                obj.insert("seed".into(), Value::from(s));
            }
            (false, None) => return Err(Error::Config("missing required key `seed`".into())),
            (true, None) => {}
        }
        let mut c: Self = serde_json::from_value(doc)?;
        c.propagate_seed();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path, seed_flag: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text, seed_flag)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.eval.trials == 0 {
            return Err(Error::Config("eval.trials must be positive".into()));
        }
        if self.eval.discover_k == Some(0) {
            return Err(Error::Config("eval.discover_k must be positive".into()));
        }
        Ok(())
    }

    fn propagate_seed(&mut self) {
        self.data.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.propagate_seed();
    }

    /// Sets a dotted key (`train.schedule.learning_rate`) or alias. The
    /// value is read as JSON, falling back to a bare string.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let paths: Vec<&str> = match ALIASES.iter().find(|(a, _)| *a == key) {
            Some((_, targets)) => targets.to_vec(),
            None => vec![key],
        };
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut doc = serde_json::to_value(&*self)?;
        for path in paths {
            let slot = doc
                .pointer_mut(&format!("/{}", path.replace('.', "/")))
                .ok_or_else(|| Error::Config(format!("unknown config key `{path}`")))?;
            *slot = value.clone();
        }
        let mut next: Self = serde_json::from_value(doc)
            .map_err(|e| Error::Config(format!("bad value {raw:?} for `{key}`: {e}")))?;
        next.propagate_seed();
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// Applies `--ablate` terms to the training section.
    pub fn ablate(&mut self, terms: &str) -> Result<()> {
        for t in terms.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            self.train.ablate(t)?;
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 over the compact serialization, hex encoded.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }
}

/// A `KEY=V1,V2,...` sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<String>,
}

impl Sweep {
    pub fn parse(spec: &str) -> Result<Self> {
        let (key, vals) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("sweep {spec:?} is not KEY=V1,V2,...")))?;
        let values: Vec<String> = vals.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if key.trim().is_empty() || values.is_empty() {
            return Err(Error::Config(format!("sweep {spec:?} needs a key and at least one value")));
        }
        Ok(Self { key: key.trim().to_string(), values })
    }

    /// One config per value, validated eagerly.
    pub fn expand(&self, base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
        self.values
            .iter()
            .map(|v| {
                let mut c = base.clone();
                c.set(&self.key, v)?;
                Ok(c)
            })
            .collect()
    }
}
