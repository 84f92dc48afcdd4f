//! Protocol drivers shared by the CLI: evaluating a saved model and
//! running repeated train-then-evaluate trials.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{draw_unseen, generate_synthetic, split_classes, Corpus, EvalView, PairedSample};
use crate::error::{Error, Result};
use crate::eval::{caption_protocol, discover_raw, discover_with_model, mean_std, zero_shot_classify};
use crate::model::{ModelDims, MultimodalModel};
use crate::tensor::Tensor;
use crate::trainer::{parallel_map, rng_stream, train, SPLIT_STREAM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Zeroshot,
    Discover,
    Caption,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Zeroshot => "zeroshot",
            Protocol::Discover => "discover",
            Protocol::Caption => "caption",
        }
    }

    /// Names of the `primary`, `secondary` and `baseline` metric slots.
    pub fn metric_names(self) -> [&'static str; 3] {
        match self {
            Protocol::Zeroshot => ["unseen_accuracy", "all_accuracy", ""],
            Protocol::Discover => ["model_accuracy", "", "raw_feature_accuracy"],
            Protocol::Caption => ["token_overlap", "", "chance_overlap"],
        }
    }
}

/// Metrics of one evaluated model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub primary: Option<f64>,
    pub secondary: Option<f64>,
    pub baseline: Option<f64>,
    /// Per-class accuracy (zero-shot) or per-cluster label (discovery).
    pub per_class: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub seed: u64,
    pub unseen: Vec<i32>,
    pub metrics: Metrics,
    pub diverged: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

fn summarize(values: impl Iterator<Item = Option<f64>>) -> Option<Summary> {
    let xs: Vec<f64> = values.flatten().collect();
    if xs.is_empty() {
        return None;
    }
    let (mean, std) = mean_std(&xs);
    Some(Summary { mean, std, n: xs.len() })
}

/// The JSON document written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub config_hash: String,
    pub seed: u64,
    pub checkpoint: Option<String>,
    pub metric_names: [String; 3],
    pub trials: Vec<Trial>,
    pub primary: Option<Summary>,
    pub secondary: Option<Summary>,
    pub baseline: Option<Summary>,
    pub divergences: usize,
    pub config: ExperimentConfig,
}

impl EvalReport {
    pub fn new(protocol: Protocol, config: &ExperimentConfig, checkpoint: Option<String>, trials: Vec<Trial>) -> Self {
        Self {
            protocol,
            config_hash: config.hash(),
            seed: config.seed,
            checkpoint,
            metric_names: protocol.metric_names().map(String::from),
            primary: summarize(trials.iter().map(|t| t.metrics.primary)),
            secondary: summarize(trials.iter().map(|t| t.metrics.secondary)),
            baseline: summarize(trials.iter().map(|t| t.metrics.baseline)),
            divergences: trials.iter().filter(|t| t.diverged.is_some()).count(),
            trials,
            config: config.clone(),
        }
    }

    /// One row per trial.
    pub fn to_csv(&self) -> String {
        let col = |i: usize, fallback: &str| {
            if self.metric_names[i].is_empty() { fallback.to_string() } else { self.metric_names[i].clone() }
        };
        let mut out = format!(
            "protocol,trial,seed,unseen,{},{},{},diverged\n",
            col(0, "primary"),
            col(1, "secondary"),
            col(2, "baseline")
        );
        for t in &self.trials {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.protocol.name(),
                t.index,
                t.seed,
                t.unseen.iter().map(i32::to_string).collect::<Vec<_>>().join(" "),
                opt(t.metrics.primary),
                opt(t.metrics.secondary),
                opt(t.metrics.baseline),
                t.diverged.is_some()
            ));
        }
        out
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Corpus from `dir` when given, else generated from the config.
pub fn load_or_generate(config: &ExperimentConfig, dir: Option<&Path>) -> Result<Corpus<f64>> {
    match dir.or(config.data_dir.as_deref()) {
        Some(d) => Corpus::load_dir(d),
        None => Ok(generate_synthetic::<f64>(&config.data)?.0),
    }
}

pub fn corpus_dims(corpus: &Corpus<f64>) -> Result<ModelDims> {
    if corpus.paired.is_empty() {
        return Err(Error::Config("corpus has no paired samples".into()));
    }
    Ok(ModelDims { video_dim: corpus.video_dim(), text_dim: corpus.text_dim() })
}

/// Runs one protocol on `model` over the eval view's unseen classes.
pub fn evaluate(
    protocol: Protocol,
    model: &MultimodalModel<f64>,
    corpus: &Corpus<f64>,
    eval: &EvalView<f64>,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Metrics> {
    let videos: Vec<(i32, &Tensor<f64>)> = eval.withheld.iter().map(|s| (s.class, &s.video)).collect();
    let mut m = Metrics::default();
    match protocol {
        Protocol::Zeroshot => {
            let sentences: Vec<(i32, &Tensor<f64>)> = eval.class_sentences.iter().map(|(c, t)| (*c, t)).collect();
            let unseen = zero_shot_classify(model, &videos, &sentences, &eval.unseen)?;
            let all = zero_shot_classify(model, &videos, &sentences, &corpus.classes())?;
            m.primary = Some(unseen.accuracy);
            m.secondary = Some(all.accuracy);
            m.per_class = unseen.per_class.iter().map(|(c, a)| (c.to_string(), *a)).collect();
        }
        Protocol::Discover => {
            let k = config.eval.discover_k.unwrap_or(eval.unseen.len());
            let learned = discover_with_model(model, &videos, k, seed)?;
            let raw = discover_raw(&videos, k, seed)?;
            m.primary = Some(learned.accuracy);
            m.baseline = Some(raw.accuracy);
            for (i, l) in learned.cluster_labels.iter().enumerate() {
                m.per_class.insert(format!("cluster{i}"), l.map(f64::from).unwrap_or(f64::NAN));
            }
        }
        Protocol::Caption => {
            let samples: Vec<&PairedSample<f64>> = eval.withheld.iter().collect();
            let r = caption_protocol(model, &samples, &corpus.vocab, config.eval.caption_chance_draws, seed)?;
            m.primary = Some(r.mean_score);
            m.baseline = Some(r.chance);
        }
    }
    Ok(m)
}

/// Evaluates a saved model on the corpus split.
pub fn evaluate_checkpoint(
    protocol: Protocol,
    model: &MultimodalModel<f64>,
    corpus: &Corpus<f64>,
    config: &ExperimentConfig,
) -> Result<Trial> {
    let (_, eval) = split_classes(corpus, &corpus.unseen)?;
    let metrics = evaluate(protocol, model, corpus, &eval, config, config.seed)?;
    Ok(Trial { index: 0, seed: config.seed, unseen: corpus.unseen.clone(), metrics, diverged: None })
}

/// Trial `index` uses seed `config.seed + index` for its unseen-class draw,
/// initialisation and batching. Divergence is recorded, not raised.
pub fn run_trial(protocol: Protocol, corpus: &Corpus<f64>, config: &ExperimentConfig, index: usize) -> Result<Trial> {
    let seed = config.seed.wrapping_add(index as u64);
    let n_unseen = config.eval.n_unseen.unwrap_or(corpus.unseen.len());
    let unseen = draw_unseen(&corpus.classes(), n_unseen, &mut rng_stream(seed, SPLIT_STREAM + 1));
    let (view, eval) = split_classes(corpus, &unseen)?;
    let mut train_cfg = config.train.clone();
    train_cfg.seed = seed;
    match train(&view, &config.model, &train_cfg) {
        Ok(out) => {
            let metrics = evaluate(protocol, &out.model, corpus, &eval, config, seed)?;
            Ok(Trial { index, seed, unseen, metrics, diverged: None })
        }
        Err(Error::Diverged { epoch, batch, detail }) => Ok(Trial {
            index,
            seed,
            unseen,
            metrics: Metrics::default(),
            diverged: Some(format!("epoch {epoch}, batch {batch}: {detail}")),
        }),
        Err(e) => Err(e),
    }
}

/// `config.eval.trials` trials on worker threads, merged by trial index.
pub fn run_trials(protocol: Protocol, corpus: &Corpus<f64>, config: &ExperimentConfig) -> Result<Vec<Trial>> {
    let indices: Vec<usize> = (0..config.eval.trials).collect();
    parallel_map(&indices, |&i| run_trial(protocol, corpus, config, i)).into_iter().collect()
}

/// Sweep CSV: one row per swept value with the metric summaries.
pub fn sweep_csv(key: &str, rows: &[(String, EvalReport)]) -> String {
    let mut out = String::from("key,value,protocol,primary_metric,primary_mean,primary_std,baseline_mean,divergences,trials\n");
    for (value, r) in rows {
        let (pm, ps) = r.primary.as_ref().map(|s| (s.mean.to_string(), s.std.to_string())).unwrap_or_default();
        let bm = r.baseline.as_ref().map(|s| s.mean.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{key},{value},{},{},{pm},{ps},{bm},{},{}\n",
            r.protocol.name(),
            r.metric_names[0],
            r.divergences,
            r.trials.len()
        ));
    }
    out
}
