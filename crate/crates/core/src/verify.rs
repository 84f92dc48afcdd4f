//! Self-check battery behind `xmodal verify`: finite-difference gradient
//! checks of every loss, the filter-bank scalar oracle, unit-norm and
//! nearest-neighbour agreement of embeddings, and run determinism.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversarial::{discriminator_losses, generator_losses, AdversarialWeights, DiscriminatorSet};
use crate::attention::{build_filter_bank, FilterParams};
use crate::autodiff::{Tape, Var};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{encode_features, generate_synthetic, split_classes, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{nearest_class, nearest_class_cosine};
use crate::gradcheck::{analytic_gradient, compare_with_finite_differences};
use crate::model::{BoundModel, Embedding, ModelConfig, ModelDims, MultimodalModel};
use crate::objectives::{
    cross_loss, cycle_loss, joint_loss, paired_objective, recons_loss, triplet_loss, unpaired_objective,
    CanonicalLengths, LossWeights, PairedBatch,
};
use crate::params::{Bound, ParamStore};
use crate::tensor::Tensor;
use crate::trainer::{train, TrainConfig};

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-6;
/// Coordinates probed per gradient-check instance.
pub const FD_BUDGET: usize = 120;

/// Every gradient check, by name. The first group differentiates with
/// respect to the encoders/decoders, the `disc_*` group with respect to
/// the discriminators.
pub const GRADIENT_CHECKS: &[&str] = &[
    "recons",
    "joint",
    "triplet",
    "cross",
    "cycle",
    "paired_total",
    "unpaired_cycle",
    "gen_latent",
    "gen_video",
    "gen_text",
    "gen_non_saturating",
    "disc_latent",
    "disc_video",
    "disc_text",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<36} measured={:.3e} tolerance={:.1e} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

fn line(name: impl Into<String>, measured: f64, tolerance: f64, detail: impl Into<String>) -> CheckLine {
    CheckLine { name: name.into(), measured, tolerance, passed: measured <= tolerance, detail: detail.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random tiny-model instances per gradient check.
    pub instances: usize,
    /// Gradient check whose analytic gradient is deliberately corrupted.
    pub fault: Option<String>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 0, instances: 20, fault: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub lines: Vec<CheckLine>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }

    pub fn failures(&self) -> Vec<&CheckLine> {
        self.lines.iter().filter(|l| !l.passed).collect()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        let failed = self.failures().len();
        write!(f, "{} checks, {} failed", self.lines.len(), failed)
    }
}

/// A tiny random model, discriminators and batch for gradient checks.
pub struct Fixture {
    pub model: MultimodalModel<f64>,
    pub discs: DiscriminatorSet<f64>,
    pub videos: Vec<Tensor<f64>>,
    pub texts: Vec<Tensor<f64>>,
    pub classes: Vec<i32>,
    pub lens: CanonicalLengths,
}

impl Fixture {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = ModelConfig { hidden_dim: 4, n_filters: 2, embed_dim: 3, fc_hidden: Some([5, 4, 3]), ..Default::default() };
        let dims = ModelDims { video_dim: 3, text_dim: 2 };
        let mut model = MultimodalModel::new(config, dims, &mut rng)?;
        // move filters off their tiled start and give biases a positive
        // offset so no instance starts with an all-dead layer
        let ids: Vec<_> = model.params.iter().map(|(id, name, _)| (id, name.to_string())).collect();
        for (id, name) in ids {
            let range = if name.ends_with("centers") || name.ends_with("widths") {
                -0.3..0.3
            } else if name.ends_with(".b") {
                0.05..0.3
            } else {
                continue;
            };
            for x in model.params.get_mut(id).data_mut() {
                *x += rng.random_range(range.clone());
            }
        }
        let discs = DiscriminatorSet::new(3, 3, 2, &mut rng);
        let seq = |dim: usize, rng: &mut ChaCha8Rng| {
            let len = rng.random_range(2..=5);
            Tensor::from_fn(len, dim, |_, _| rng.random_range(-1.0..1.0))
        };
        let videos = (0..3).map(|_| seq(3, &mut rng)).collect();
        let texts = (0..3).map(|_| seq(2, &mut rng)).collect();
        Ok(Self { model, discs, videos, texts, classes: vec![0, 1, 0], lens: CanonicalLengths { video: 4, text: 3 } })
    }

    fn batch(&self) -> PairedBatch<'_, f64> {
        PairedBatch { videos: self.videos.iter().collect(), texts: self.texts.iter().collect(), classes: self.classes.clone() }
    }

    fn bound_model<'a>(&'a self, bound: &Bound) -> BoundModel<'a, f64> {
        BoundModel { model: &self.model, bound: bound.clone() }
    }

    /// Scalar loss named by `check`, differentiable in the parameter store
    /// that [`Fixture::params_for`] returns.
    pub fn loss(&self, check: &str, tape: &mut Tape<f64>, b: &Bound) -> Result<Var> {
        let batch = self.batch();
        let vs: Vec<&Tensor<f64>> = self.videos.iter().collect();
        let ts: Vec<&Tensor<f64>> = self.texts.iter().collect();
        let weights = LossWeights { alpha_joint: 0.7, alpha_cross: 1.3, alpha_cycle: 0.4, ..Default::default() };
        let one = |latent, video, text, ns| AdversarialWeights { latent, video, text, non_saturating: ns };
        if let Some(role) = check.strip_prefix("disc_") {
            let frozen = self.model.bind(tape, false);
            let w = match role {
                "latent" => one(1.0, 0.0, 0.0, false),
                "video" => one(0.0, 1.0, 0.0, false),
                _ => one(0.0, 0.0, 1.0, false),
            };
            return Ok(discriminator_losses(tape, &frozen, &self.discs, b, &vs, &ts, &w, self.lens)?.0);
        }
        let m = self.bound_model(b);
        match check {
            "recons" => recons_loss(tape, &m, &batch),
            "joint" => joint_loss(tape, &m, &batch),
            "triplet" => triplet_loss(tape, &m, &batch, 0.2),
            "cross" => cross_loss(tape, &m, &batch),
            "cycle" => cycle_loss(tape, &m, &vs, &ts, self.lens),
            "paired_total" => Ok(paired_objective(tape, &m, &batch, &weights, self.lens)?.0),
            "unpaired_cycle" => Ok(unpaired_objective(tape, &m, &vs, &ts, &weights, self.lens)?.0),
            gen => {
                let w = match gen {
                    "gen_latent" => one(1.0, 0.0, 0.0, false),
                    "gen_video" => one(0.0, 1.0, 0.0, false),
                    "gen_text" => one(0.0, 0.0, 1.0, false),
                    _ => one(1.0, 1.0, 1.0, true),
                };
                let db = tape.bind(&self.discs.params, false);
                Ok(generator_losses(tape, &m, &self.discs, &db, &vs, &ts, &w, self.lens)?.0)
            }
        }
    }

    pub fn params_for(&self, check: &str) -> &ParamStore<f64> {
        if check.starts_with("disc_") {
            &self.discs.params
        } else {
            &self.model.params
        }
    }
}

/// Worst relative error of one named gradient check over `instances`
/// fixtures. With `corrupt`, coordinate 0 of every analytic gradient is
/// shifted before comparison.
pub fn gradient_check(check: &str, seed: u64, instances: usize, corrupt: bool) -> Result<CheckLine> {
    let mut worst = 0.0f64;
    let mut coords = 0;
    for i in 0..instances {
        let fx = Fixture::new(seed.wrapping_mul(1000).wrapping_add(i as u64))?;
        let params = fx.params_for(check);
        let loss = |tape: &mut Tape<f64>, b: &Bound| fx.loss(check, tape, b);
        let mut analytic = analytic_gradient(params, &loss)?;
        if corrupt {
            analytic[0] += 0.05 * analytic[0].abs().max(1.0);
        }
        let r = compare_with_finite_differences(params, &analytic, FD_STEP, Some(FD_BUDGET), &loss)?;
        worst = worst.max(r.max_rel_error);
        coords += r.coords_checked;
    }
    Ok(line(format!("grad/{check}"), worst, GRAD_TOLERANCE, format!("({instances} instances, {coords} coords)")))
}

/// Direct per-entry evaluation of the Gaussian filter formula.
pub fn filter_oracle(centers_raw: &[f64], widths_raw: &[f64], len: usize) -> Vec<Vec<f64>> {
    centers_raw
        .iter()
        .zip(widths_raw)
        .map(|(&c, &w)| {
            let g = 0.5 * len as f64 * (c + 1.0);
            let sigma = (1.0 + w.exp()).ln() + 1e-3;
            let logits: Vec<f64> = (0..len).map(|t| -((t as f64 - g).powi(2)) / (2.0 * sigma * sigma)).collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|x| x / z).collect()
        })
        .collect()
}

fn filter_checks(seed: u64, cases: usize) -> Result<Vec<CheckLine>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf11e);
    let (mut worst, mut worst_row) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let n = rng.random_range(1..=6);
        let len = rng.random_range(1..=200);
        let centers: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let widths: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let bank = build_filter_bank(&FilterParams { centers_raw: centers.clone(), widths_raw: widths.clone() }, len)?;
        for (r, want) in filter_oracle(&centers, &widths, len).iter().enumerate() {
            let got = bank.weights.row_slice(r);
            for (a, b) in got.iter().zip(want) {
                worst = worst.max((a - b).abs());
            }
            worst_row = worst_row.max((got.iter().sum::<f64>() - 1.0).abs());
        }
    }
    Ok(vec![
        line("filter/oracle", worst, 1e-12, format!("({cases} random banks)")),
        line("filter/row_sums", worst_row, 1e-6, format!("({cases} random banks)")),
    ])
}

fn random_model(seed: u64) -> Result<MultimodalModel<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig { hidden_dim: 8, embed_dim: 6, ..Default::default() };
    MultimodalModel::new(config, ModelDims { video_dim: 5, text_dim: 4 }, &mut rng)
}

fn embedding_checks(seed: u64, encodes: usize, eval_sets: usize) -> Result<Vec<CheckLine>> {
    let model = random_model(seed ^ 0xe4b)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x40e);
    let mut worst_norm = 0.0f64;
    for i in 0..encodes {
        let len = rng.random_range(1..=100);
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let (dim, video) = if i % 2 == 0 { (5, true) } else { (4, false) };
        let seq = Tensor::from_fn(len, dim, |_, _| scale * rng.random_range(-1.0..1.0));
        let z = if video { model.encode_video(&seq)? } else { model.encode_text(&seq)? };
        worst_norm = worst_norm.max((z.norm() - 1.0).abs());
    }
    let mut disagreements = 0;
    for _ in 0..eval_sets {
        let n_targets = rng.random_range(2..=8);
        let targets: Vec<(i32, Embedding<f64>)> = (0..n_targets)
            .map(|c| {
                let seq = Tensor::from_fn(rng.random_range(1..=12), 4, |_, _| rng.random_range(-1.0..1.0));
                Ok((c as i32, model.encode_text(&seq)?))
            })
            .collect::<Result<_>>()?;
        for _ in 0..10 {
            let seq = Tensor::from_fn(rng.random_range(1..=20), 5, |_, _| rng.random_range(-1.0..1.0));
            let z = model.encode_video(&seq)?;
            if nearest_class(z.values(), &targets) != nearest_class_cosine(z.values(), &targets) {
                disagreements += 1;
            }
        }
    }
    Ok(vec![
        line("embedding/unit_norm", worst_norm, 1e-5, format!("({encodes} encodes)")),
        line("embedding/euclid_cosine_nn", disagreements as f64, 0.0, format!("({eval_sets} eval sets)")),
    ])
}

fn determinism_checks(seed: u64) -> Result<Vec<CheckLine>> {
    let spec = SyntheticSpec {
        seed,
        n_seen_classes: 3,
        n_unseen_classes: 2,
        samples_per_class: 4,
        unpaired_videos: 6,
        unpaired_texts: 6,
        ..Default::default()
    };
    let corpus_bytes = || -> Result<Vec<u8>> {
        let (c, _) = generate_synthetic::<f64>(&spec)?;
        let v: Vec<(i32, &Tensor<f64>)> = c.paired.iter().map(|s| (s.class, &s.video)).collect();
        let t: Vec<(i32, &Tensor<f64>)> = c.paired.iter().map(|s| (s.class, &s.text)).collect();
        Ok([encode_features(&v), encode_features(&t)].concat())
    };
    let same_corpus = corpus_bytes()? == corpus_bytes()?;

    let (corpus, _) = generate_synthetic::<f64>(&spec)?;
    let (view, _) = split_classes(&corpus, &corpus.unseen)?;
    let model_cfg = ModelConfig { hidden_dim: 6, embed_dim: 4, ..Default::default() };
    let train_cfg = TrainConfig { init_epochs: 1, main_epochs: 1, batch_size: 4, seed, ..Default::default() };
    let run = || -> Result<(Vec<u8>, String)> {
        let out = train(&view, &model_cfg, &train_cfg)?;
        Ok((save_checkpoint(&out.model), out.log.to_ndjson()?))
    };
    let (a, b) = (run()?, run()?);
    let same_run = a == b;

    let dims = ModelDims { video_dim: corpus.video_dim(), text_dim: corpus.text_dim() };
    let back: MultimodalModel<f64> = load_checkpoint(&a.0, &model_cfg, dims)?;
    let same_ckpt = save_checkpoint(&back) == a.0;

    let flag = |ok: bool| if ok { 0.0 } else { 1.0 };
    Ok(vec![
        line("determinism/corpus_bytes", flag(same_corpus), 0.0, "(two generations, same seed)"),
        line("determinism/train_run", flag(same_run), 0.0, "(checkpoint and log bytes, two runs)"),
        line("determinism/checkpoint_round_trip", flag(same_ckpt), 0.0, "(save, load, save)"),
    ])
}

/// Runs the whole battery.
pub fn run_verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    if let Some(f) = opts.fault.as_deref() {
        if !GRADIENT_CHECKS.contains(&f) {
            return Err(Error::Config(format!("unknown gradient check `{f}`; expected one of {}", GRADIENT_CHECKS.join(", "))));
        }
    }
    let mut report = VerifyReport::default();
    for &check in GRADIENT_CHECKS {
        let corrupt = opts.fault.as_deref() == Some(check);
        report.lines.push(gradient_check(check, opts.seed, opts.instances, corrupt)?);
    }
    report.lines.extend(filter_checks(opts.seed, 1000)?);
    report.lines.extend(embedding_checks(opts.seed, 1000, 100)?);
    report.lines.extend(determinism_checks(opts.seed)?);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_agrees_on_a_symmetric_row() {
        let rows = filter_oracle(&[0.0], &[0.5], 5);
        assert!((rows[0][1] - rows[0][4]).abs() < 1e-15);
        assert!((rows[0][2] - rows[0][3]).abs() < 1e-15);
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let l = gradient_check("joint", 1, 2, true).unwrap();
        assert!(!l.passed, "{l}");
        let l = gradient_check("joint", 1, 2, false).unwrap();
        assert!(l.passed, "{l}");
    }

    #[test]
    fn every_check_builds() {
        let fx = Fixture::new(5).unwrap();
        for &c in GRADIENT_CHECKS {
            let mut tape = Tape::new();
            let b = tape.bind(fx.params_for(c), true);
            let l = fx.loss(c, &mut tape, &b).unwrap();
            assert!(tape.value(l).item().is_finite(), "{c}");
        }
    }
}
