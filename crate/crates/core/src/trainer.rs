//! Two-phase training: paired-only initialisation of generators and
//! discriminators, then alternating paired, unpaired-generator and
//! discriminator updates.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversarial::{discriminator_losses, generator_losses, AdversarialReport, AdversarialWeights, DiscriminatorSet};
use crate::autodiff::{Tape, Var};
use crate::data::{draw_unseen, split_classes, Corpus, PairedSample, TrainView};
use crate::error::{Error, Result};
use crate::eval::{mean_std, zero_shot_classify};
use crate::model::{BoundModel, ModelConfig, ModelDims, MultimodalModel};
use crate::objectives::{paired_objective, unpaired_objective, CanonicalLengths, LossReport, LossWeights, PairedBatch};
use crate::optim::{LrSchedule, SgdState};
use crate::params::Bound;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub init_epochs: usize,
    pub main_epochs: usize,
    pub batch_size: usize,
    /// Share of each second-phase batch drawn from the paired pool.
    pub paired_fraction: f64,
    pub schedule: LrSchedule,
    pub loss: LossWeights,
    pub adversarial: AdversarialWeights,
    pub lengths: CanonicalLengths,
    /// Draw from the unpaired pools in the second phase.
    pub use_unpaired: bool,
    /// Add the cycle term (weighted as in `loss`) to the generator update
    /// on unpaired data.
    pub unpaired_cycle: bool,
    /// Paired samples held out for a per-epoch validation loss.
    pub validation_fraction: f64,
    /// Supplied by the experiment seed, not by config documents.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            init_epochs: 50,
            main_epochs: 200,
            batch_size: 16,
            paired_fraction: 0.5,
            schedule: LrSchedule::default(),
            loss: LossWeights::default(),
            adversarial: AdversarialWeights::default(),
            lengths: CanonicalLengths::default(),
            use_unpaired: true,
            unpaired_cycle: false,
            validation_fraction: 0.0,
            seed: 0,
        }
    }
}

/// Term names accepted by [`TrainConfig::ablate`].
pub const ABLATABLE: &[&str] = &["recons", "joint", "triplet", "cross", "cycle", "latent", "video", "text", "adversarial", "unpaired"];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.paired_fraction) {
            return Err(Error::Config(format!("paired_fraction {} outside [0, 1]", self.paired_fraction)));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config(format!("validation_fraction {} outside [0, 1)", self.validation_fraction)));
        }
        if self.lengths.video == 0 || self.lengths.text == 0 {
            return Err(Error::Config("canonical lengths must be positive".into()));
        }
        self.schedule.validate()?;
        self.loss.validate()?;
        self.adversarial.validate()
    }

    /// Switches off one loss or discriminator term.
    pub fn ablate(&mut self, term: &str) -> Result<()> {
        match term {
            "recons" => self.loss.recons = 0.0,
            "joint" => {
                if !self.loss.use_triplet_instead_of_joint {
                    self.loss.alpha_joint = 0.0
                }
            }
            "triplet" => {
                if self.loss.use_triplet_instead_of_joint {
                    self.loss.alpha_joint = 0.0
                }
            }
            "cross" => self.loss.alpha_cross = 0.0,
            "cycle" => self.loss.alpha_cycle = 0.0,
            "latent" => self.adversarial.latent = 0.0,
            "video" => self.adversarial.video = 0.0,
            "text" => self.adversarial.text = 0.0,
            "adversarial" => self.adversarial = AdversarialWeights::off(),
            "unpaired" => self.use_unpaired = false,
            other => {
                return Err(Error::Config(format!("unknown ablation term {other:?}; valid: {}", ABLATABLE.join(","))))
            }
        }
        Ok(())
    }

    /// Paired samples per second-phase batch.
    pub fn paired_per_batch(&self) -> usize {
        ((self.paired_fraction * self.batch_size as f64).ceil() as usize).min(self.batch_size)
    }
}

/// One optimisation step's worth of pool indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub paired: Vec<usize>,
    pub videos: Vec<usize>,
    pub texts: Vec<usize>,
}

/// Endless shuffled pass over a pool; reshuffles on wraparound.
#[derive(Debug, Clone)]
struct Cursor {
    order: Vec<usize>,
    pos: usize,
}

impl Cursor {
    fn new(n: usize) -> Self {
        Self { order: (0..n).collect(), pos: n }
    }

    fn take(&mut self, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Epoch batch planner. An epoch is one pass over the paired pool; the
/// unpaired pools are drawn with wraparound.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n_paired: usize,
    videos: Cursor,
    texts: Cursor,
}

impl BatchSampler {
    pub fn new(n_paired: usize, n_videos: usize, n_texts: usize) -> Self {
        Self { n_paired, videos: Cursor::new(n_videos), texts: Cursor::new(n_texts) }
    }

    fn has_unpaired(&self) -> bool {
        !self.videos.order.is_empty() || !self.texts.order.is_empty()
    }

    /// Plans one epoch. With `mixed` false, or when both unpaired pools are
    /// empty, every batch is entirely paired.
    pub fn epoch(&mut self, config: &TrainConfig, mixed: bool, rng: &mut ChaCha8Rng) -> Vec<BatchPlan> {
        let mixed = mixed && self.has_unpaired();
        let (n_p, n_u) = if mixed {
            let p = config.paired_per_batch();
            (p, config.batch_size - p)
        } else {
            (config.batch_size, 0)
        };
        let mut order: Vec<usize> = (0..self.n_paired).collect();
        order.shuffle(rng);
        let steps = if n_p > 0 { self.n_paired.div_ceil(n_p) } else { self.n_paired.div_ceil(config.batch_size) };
        let mut plans = Vec::with_capacity(steps);
        for s in 0..steps {
            let paired = if n_p > 0 { order[s * n_p..((s + 1) * n_p).min(order.len())].to_vec() } else { Vec::new() };
            let videos = self.videos.take(n_u, rng);
            let texts = self.texts.take(n_u, rng);
            plans.push(BatchPlan { paired, videos, texts });
        }
        plans
    }
}

/// One second-phase epoch of batches over `view`, from fresh cursors.
pub fn make_batches<T>(view: &TrainView<T>, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<BatchPlan> {
    let (nv, nt) = if config.use_unpaired { (view.unpaired_videos.len(), view.unpaired_texts.len()) } else { (0, 0) };
    BatchSampler::new(view.paired.len(), nv, nt).epoch(config, true, rng)
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: u8,
    pub lr: f64,
    pub batches: usize,
    /// Batch means of the paired objective.
    pub paired: LossReport,
    /// Batch means of the unpaired cycle term.
    pub unpaired: LossReport,
    pub generator: AdversarialReport,
    pub discriminator: AdversarialReport,
    pub validation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolAccess {
    pub paired: usize,
    pub unpaired_videos: usize,
    pub unpaired_texts: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
    /// Wall-clock seconds per epoch, kept apart from the records so the
    /// records stay reproducible.
    pub wall_seconds: Vec<f64>,
    /// Pool reads in the first and second phase.
    pub access: [PoolAccess; 2],
}

impl TrainLog {
    /// One JSON object per epoch.
    pub fn to_ndjson(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn timing_ndjson(&self) -> String {
        self.wall_seconds
            .iter()
            .enumerate()
            .map(|(i, w)| format!("{{\"epoch\":{},\"wall_seconds\":{w}}}\n", i + 1))
            .collect()
    }
}

pub struct TrainOutcome<T> {
    pub model: MultimodalModel<T>,
    pub discriminators: DiscriminatorSet<T>,
    pub log: TrainLog,
}

/// Separate random streams so that, e.g., switching the adversarial terms
/// off leaves the model initialisation and batch order unchanged.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub const MODEL_STREAM: u64 = 0;
pub const DISC_STREAM: u64 = 1;
pub const BATCH_STREAM: u64 = 2;
pub const SPLIT_STREAM: u64 = 3;

struct Accum<R> {
    sum: R,
    n: usize,
}

fn add_report(a: &mut LossReport, b: &LossReport) {
    a.total += b.total;
    a.recons += b.recons;
    a.joint += b.joint;
    a.triplet += b.triplet;
    a.cross += b.cross;
    a.cycle += b.cycle;
}

fn scale_report(a: &LossReport, k: f64) -> LossReport {
    LossReport {
        total: a.total * k,
        recons: a.recons * k,
        joint: a.joint * k,
        triplet: a.triplet * k,
        cross: a.cross * k,
        cycle: a.cycle * k,
    }
}

fn add_adv(a: &mut AdversarialReport, b: &AdversarialReport) {
    a.latent += b.latent;
    a.video += b.video;
    a.text += b.text;
    a.accuracy += b.accuracy;
}

fn scale_adv(a: &AdversarialReport, k: f64) -> AdversarialReport {
    AdversarialReport { latent: a.latent * k, video: a.video * k, text: a.text * k, accuracy: a.accuracy * k }
}

impl Accum<LossReport> {
    fn mean(&self) -> LossReport {
        if self.n == 0 { LossReport::default() } else { scale_report(&self.sum, 1.0 / self.n as f64) }
    }
}

impl Accum<AdversarialReport> {
    fn mean(&self) -> AdversarialReport {
        if self.n == 0 { AdversarialReport::default() } else { scale_adv(&self.sum, 1.0 / self.n as f64) }
    }
}

fn diverged(epoch: usize, batch: usize, stage: &str, e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged { epoch, batch, detail: format!("{stage}: non-finite value in {op}") },
        other => other,
    }
}

fn check_finite<T: Scalar>(tape: &Tape<T>, loss: Var, what: &str) -> Result<()> {
    if tape.value(loss).all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op: what.to_string() })
    }
}

/// Gradient step on the generators for the loss built by `f`; the
/// discriminators are bound frozen.
fn generator_step<T: Scalar, R>(
    model: &mut MultimodalModel<T>,
    discs: &DiscriminatorSet<T>,
    opt: &mut SgdState<T>,
    f: impl FnOnce(&mut Tape<T>, &BoundModel<'_, T>, &Bound) -> Result<(Var, R)>,
) -> Result<R> {
    let mut tape = Tape::new();
    let (grads, report) = {
        let bm = model.bind(&mut tape, true);
        let db = tape.bind(&discs.params, false);
        let (loss, report) = f(&mut tape, &bm, &db)?;
        check_finite(&tape, loss, "generator loss")?;
        let mut adj = tape.backward(loss)?;
        (bm.gradients(&mut adj), report)
    };
    opt.step(&mut model.params, &grads)?;
    Ok(report)
}

fn discriminator_step<T: Scalar>(
    model: &MultimodalModel<T>,
    discs: &mut DiscriminatorSet<T>,
    opt: &mut SgdState<T>,
    videos: &[&Tensor<T>],
    texts: &[&Tensor<T>],
    config: &TrainConfig,
) -> Result<AdversarialReport> {
    let mut tape = Tape::new();
    let (grads, report) = {
        let bm = model.bind(&mut tape, false);
        let db = tape.bind(&discs.params, true);
        let (loss, report) =
            discriminator_losses(&mut tape, &bm, discs, &db, videos, texts, &config.adversarial, config.lengths)?;
        check_finite(&tape, loss, "discriminator loss")?;
        let mut adj = tape.backward(loss)?;
        (db.gradients(&discs.params, &mut adj), report)
    };
    opt.step(&mut discs.params, &grads)?;
    Ok(report)
}

fn batch_of<'a, T: Scalar>(pool: &'a [PairedSample<T>], idx: &[usize]) -> PairedBatch<'a, T> {
    PairedBatch {
        videos: idx.iter().map(|&i| &pool[i].video).collect(),
        texts: idx.iter().map(|&i| &pool[i].text).collect(),
        classes: idx.iter().map(|&i| pool[i].class).collect(),
    }
}

/// Mean paired objective over `pool` with the model frozen.
pub fn paired_loss_on<T: Scalar>(
    model: &MultimodalModel<T>,
    pool: &[PairedSample<T>],
    config: &TrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for chunk in (0..pool.len()).collect::<Vec<_>>().chunks(config.batch_size) {
        let mut tape = Tape::new();
        let bm = model.bind(&mut tape, false);
        let (_, report) = paired_objective(&mut tape, &bm, &batch_of(pool, chunk), &config.loss, config.lengths)?;
        total += report.total * chunk.len() as f64;
        n += chunk.len();
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Builds a model and discriminators for `view` from the seed's streams.
pub fn initialise<T: Scalar>(
    model_config: &ModelConfig,
    dims: ModelDims,
    config: &TrainConfig,
) -> Result<(MultimodalModel<T>, DiscriminatorSet<T>)> {
    let model = MultimodalModel::new(model_config.clone(), dims, &mut rng_stream(config.seed, MODEL_STREAM))?;
    let discs = DiscriminatorSet::new(
        model_config.embed_dim,
        dims.video_dim,
        dims.text_dim,
        &mut rng_stream(config.seed, DISC_STREAM),
    );
    Ok((model, discs))
}

/// Runs both phases on `view`.
pub fn train<T: Scalar>(view: &TrainView<T>, model_config: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if view.paired.is_empty() {
        return Err(Error::Config("training view has no paired samples".into()));
    }
    let dims = ModelDims { video_dim: view.paired[0].video.cols(), text_dim: view.paired[0].text.cols() };
    let (mut model, mut discs) = initialise::<T>(model_config, dims, config)?;

    let mut split_rng = rng_stream(config.seed, SPLIT_STREAM);
    let (train_pool, val_pool): (Vec<PairedSample<T>>, Vec<PairedSample<T>>) = if config.validation_fraction > 0.0 {
        let mut idx: Vec<usize> = (0..view.paired.len()).collect();
        idx.shuffle(&mut split_rng);
        let n_val = ((config.validation_fraction * idx.len() as f64).ceil() as usize).min(idx.len() - 1);
        let (val, tr) = idx.split_at(n_val);
        (tr.iter().map(|&i| view.paired[i].clone()).collect(), val.iter().map(|&i| view.paired[i].clone()).collect())
    } else {
        (view.paired.clone(), Vec::new())
    };

    let (nv, nt) = if config.use_unpaired { (view.unpaired_videos.len(), view.unpaired_texts.len()) } else { (0, 0) };
    let mut sampler = BatchSampler::new(train_pool.len(), nv, nt);
    let mut rng = rng_stream(config.seed, BATCH_STREAM);
    let mut model_opt = SgdState::new(config.schedule, &model.params);
    let mut disc_opt = SgdState::new(config.schedule, &discs.params);
    let adversarial = config.adversarial.any();
    let mut log = TrainLog::default();

    let total_epochs = config.init_epochs + config.main_epochs;
    for epoch in 0..total_epochs {
        let started = Instant::now();
        let phase2 = epoch >= config.init_epochs;
        let phase_epoch = if phase2 { epoch - config.init_epochs } else { epoch };
        model_opt.epoch = phase_epoch;
        disc_opt.epoch = phase_epoch;
        let access = &mut log.access[phase2 as usize];
        let plans = sampler.epoch(config, phase2, &mut rng);
        let mut paired_acc = Accum { sum: LossReport::default(), n: 0 };
        let mut unpaired_acc = Accum { sum: LossReport::default(), n: 0 };
        let mut gen_acc = Accum { sum: AdversarialReport::default(), n: 0 };
        let mut disc_acc = Accum { sum: AdversarialReport::default(), n: 0 };
        let g_epoch = epoch + 1;

        for (b, plan) in plans.iter().enumerate() {
            access.paired += plan.paired.len();
            access.unpaired_videos += plan.videos.len();
            access.unpaired_texts += plan.texts.len();
            let batch = batch_of(&train_pool, &plan.paired);
            let u_videos: Vec<&Tensor<T>> = plan.videos.iter().map(|&i| &view.unpaired_videos[i]).collect();
            let u_texts: Vec<&Tensor<T>> = plan.texts.iter().map(|&i| &view.unpaired_texts[i]).collect();

            if !batch.is_empty() {
                let r = generator_step(&mut model, &discs, &mut model_opt, |tape, bm, _| {
                    paired_objective(tape, bm, &batch, &config.loss, config.lengths)
                })
                .map_err(|e| diverged(g_epoch, b, "paired update", e))?;
                add_report(&mut paired_acc.sum, &r);
                paired_acc.n += 1;
            }

            let has_unpaired = !u_videos.is_empty() || !u_texts.is_empty();
            let cycle = config.unpaired_cycle && config.loss.alpha_cycle > 0.0;
            if has_unpaired && (adversarial || cycle) {
                let (g, u) = generator_step(&mut model, &discs, &mut model_opt, |tape, bm, db| {
                    let (adv, g) = if adversarial {
                        generator_losses(tape, bm, &discs, db, &u_videos, &u_texts, &config.adversarial, config.lengths)?
                    } else {
                        (tape.constant(Tensor::scalar(T::zero())), AdversarialReport::default())
                    };
                    let (aux, u) = if cycle {
                        unpaired_objective(tape, bm, &u_videos, &u_texts, &config.loss, config.lengths)?
                    } else {
                        (tape.constant(Tensor::scalar(T::zero())), LossReport::default())
                    };
                    Ok((tape.add(adv, aux)?, (g, u)))
                })
                .map_err(|e| diverged(g_epoch, b, "unpaired update", e))?;
                add_adv(&mut gen_acc.sum, &g);
                gen_acc.n += 1;
                add_report(&mut unpaired_acc.sum, &u);
                unpaired_acc.n += 1;
            }

            if adversarial {
                let mut videos: Vec<&Tensor<T>> = batch.videos.clone();
                videos.extend(&u_videos);
                let mut texts: Vec<&Tensor<T>> = batch.texts.clone();
                texts.extend(&u_texts);
                let r = discriminator_step(&model, &mut discs, &mut disc_opt, &videos, &texts, config)
                    .map_err(|e| diverged(g_epoch, b, "discriminator update", e))?;
                add_adv(&mut disc_acc.sum, &r);
                disc_acc.n += 1;
            }
        }

        let validation = if val_pool.is_empty() {
            None
        } else {
            let v = paired_loss_on(&model, &val_pool, config).map_err(|e| diverged(g_epoch, 0, "validation", e))?;
            if !v.is_finite() {
                return Err(Error::Diverged { epoch: g_epoch, batch: 0, detail: "validation loss is not finite".into() });
            }
            Some(v)
        };
        log.records.push(EpochRecord {
            epoch: g_epoch,
            phase: if phase2 { 2 } else { 1 },
            lr: model_opt.effective_lr(),
            batches: plans.len(),
            paired: paired_acc.mean(),
            unpaired: unpaired_acc.mean(),
            generator: gen_acc.mean(),
            discriminator: disc_acc.mean(),
            validation,
        });
        log.wall_seconds.push(started.elapsed().as_secs_f64());
    }
    Ok(TrainOutcome { model, discriminators: discs, log })
}

/// Worker count: `XMODAL_THREADS` if set, else the machine's parallelism.
pub fn worker_threads() -> usize {
    std::env::var("XMODAL_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs `f` over `items` on at most [`worker_threads`] threads, keeping
/// input order in the output.
pub fn parallel_map<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> O + Sync + Send) -> Vec<O> {
    let threads = worker_threads().min(items.len().max(1));
    if threads <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

/// One named configuration of an ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub name: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub unseen: Vec<i32>,
    /// `None` when training diverged.
    pub unseen_accuracy: Option<f64>,
    pub all_accuracy: Option<f64>,
    pub diverged: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub unseen_mean: f64,
    pub unseen_std: f64,
    pub all_mean: f64,
    pub all_std: f64,
    pub divergences: usize,
    pub trials: Vec<TrialResult>,
}

impl AblationRow {
    fn from_trials(name: String, trials: Vec<TrialResult>) -> Self {
        let unseen: Vec<f64> = trials.iter().filter_map(|t| t.unseen_accuracy).collect();
        let all: Vec<f64> = trials.iter().filter_map(|t| t.all_accuracy).collect();
        let (unseen_mean, unseen_std) = mean_std(&unseen);
        let (all_mean, all_std) = mean_std(&all);
        let divergences = trials.iter().filter(|t| t.diverged.is_some()).count();
        Self { name, unseen_mean, unseen_std, all_mean, all_std, divergences, trials }
    }
}

/// Trains and evaluates one trial: a fresh unseen-class draw from `seed`,
/// training on the rest, zero-shot accuracy on the withheld classes.
pub fn run_trial<T: Scalar>(corpus: &Corpus<T>, cfg: &AblationConfig, seed: u64, n_unseen: usize) -> Result<TrialResult> {
    let unseen = draw_unseen(&corpus.classes(), n_unseen, &mut rng_stream(seed, SPLIT_STREAM + 1));
    let (view, eval) = split_classes(corpus, &unseen)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    match train(&view, &cfg.model, &train_cfg) {
        Ok(out) => {
            let videos: Vec<(i32, &Tensor<T>)> = eval.withheld.iter().map(|s| (s.class, &s.video)).collect();
            let sentences: Vec<(i32, &Tensor<T>)> = eval.class_sentences.iter().map(|(c, t)| (*c, t)).collect();
            let unseen_r = zero_shot_classify(&out.model, &videos, &sentences, &eval.unseen)?;
            let all_classes = corpus.classes();
            let all_r = zero_shot_classify(&out.model, &videos, &sentences, &all_classes)?;
            Ok(TrialResult {
                seed,
                unseen,
                unseen_accuracy: Some(unseen_r.accuracy),
                all_accuracy: Some(all_r.accuracy),
                diverged: None,
            })
        }
        Err(Error::Diverged { epoch, batch, detail }) => Ok(TrialResult {
            seed,
            unseen,
            unseen_accuracy: None,
            all_accuracy: None,
            diverged: Some(format!("epoch {epoch}, batch {batch}: {detail}")),
        }),
        Err(e) => Err(e),
    }
}

/// Runs every config on every seed and tabulates mean and std of the
/// unseen-class and seen+unseen accuracies.
pub fn ablation_run<T: Scalar>(
    corpus: &Corpus<T>,
    configs: &[AblationConfig],
    seeds: &[u64],
    n_unseen: usize,
) -> Result<Vec<AblationRow>> {
    let jobs: Vec<(usize, u64)> = (0..configs.len()).flat_map(|c| seeds.iter().map(move |&s| (c, s))).collect();
    let results = parallel_map(&jobs, |&(c, s)| run_trial(corpus, &configs[c], s, n_unseen));
    let mut rows = Vec::with_capacity(configs.len());
    let mut it = results.into_iter();
    for cfg in configs {
        let trials = it.by_ref().take(seeds.len()).collect::<Result<Vec<_>>>()?;
        rows.push(AblationRow::from_trials(cfg.name.clone(), trials));
    }
    Ok(rows)
}
