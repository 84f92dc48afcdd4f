//! Synthetic corpora with a known latent class structure, file formats
//! for precomputed features, and seen/unseen class splits.
//!
//! Every class is a point `c` in a latent space. A video is a sequence of
//! rows `A_v (c + e_t) + B_v s + b_v`, where `e_t` is fresh noise per
//! timestep and `s` is a per-clip nuisance factor (think scene or camera)
//! that carries no class information. A sentence is a sequence of word
//! rows `A_t (c + e_l) + b_t`. The maps are shared by all classes, seen or
//! not, so structure learned on seen classes transfers to unseen ones.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Reader;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{sq_dist, Tensor};

pub const FEATURE_MAGIC: &[u8; 4] = b"MMEF";
pub const FEATURE_VERSION: u16 = 1;
/// Class id written for samples without a class.
pub const NO_CLASS: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnpairedDistribution {
    /// Latents drawn from the same distribution as the classes.
    Matched,
    /// Latents drawn from a distribution with a shifted mean.
    Unrelated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub latent_dim: usize,
    pub n_seen_classes: usize,
    pub n_unseen_classes: usize,
    pub samples_per_class: usize,
    /// Inclusive range of video lengths.
    pub video_len: [usize; 2],
    pub video_dim: usize,
    /// Inclusive range of sentence lengths.
    pub text_len: [usize; 2],
    pub text_dim: usize,
    pub noise_sigma: f64,
    /// Multiplier on every feature map and bias.
    pub feature_scale: f64,
    pub nuisance_dim: usize,
    pub nuisance_sigma: f64,
    pub unpaired_videos: usize,
    pub unpaired_texts: usize,
    /// Number of latent points the unpaired samples are drawn around.
    pub unpaired_classes: usize,
    pub unpaired_distribution: UnpairedDistribution,
    /// Mean offset (per latent coordinate) of the unrelated distribution.
    pub unrelated_shift: f64,
    pub sentences_per_class: usize,
    /// Lattice levels per latent axis for the token vocabulary.
    pub vocab_levels: usize,
    /// Distance between lattice levels; the default places three levels at
    /// the optimal quantizer of a unit Gaussian.
    pub vocab_spacing: f64,
    /// Supplied by the experiment seed, not by config documents.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            latent_dim: 4,
            n_seen_classes: 8,
            n_unseen_classes: 5,
            samples_per_class: 40,
            video_len: [8, 24],
            video_dim: 16,
            text_len: [5, 12],
            text_dim: 12,
            noise_sigma: 0.3,
            feature_scale: 1.0,
            nuisance_dim: 4,
            nuisance_sigma: 2.0,
            unpaired_videos: 0,
            unpaired_texts: 0,
            unpaired_classes: 16,
            unpaired_distribution: UnpairedDistribution::Matched,
            unrelated_shift: 3.0,
            sentences_per_class: 1,
            vocab_levels: 3,
            vocab_spacing: 1.224,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn n_classes(&self) -> usize {
        self.n_seen_classes + self.n_unseen_classes
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if self.video_dim == 0 || self.text_dim == 0 {
            return bad("feature widths must be positive");
        }
        if self.n_unseen_classes < 2 {
            return bad("n_unseen_classes must be at least 2");
        }
        if self.n_seen_classes == 0 || self.samples_per_class == 0 {
            return bad("need at least one seen class with samples");
        }
        if self.video_len[0] == 0 || self.video_len[0] > self.video_len[1] {
            return bad("video_len must be a non-empty range of positive lengths");
        }
        if self.text_len[0] == 0 || self.text_len[0] > self.text_len[1] {
            return bad("text_len must be a non-empty range of positive lengths");
        }
        if !(self.feature_scale > 0.0 && self.feature_scale.is_finite()) {
            return bad("feature_scale must be positive");
        }
        if !(self.noise_sigma >= 0.0 && self.nuisance_sigma >= 0.0) {
            return bad("noise levels must be non-negative");
        }
        if self.sentences_per_class == 0 || self.vocab_levels == 0 || self.unpaired_classes == 0 {
            return bad("sentences_per_class, vocab_levels and unpaired_classes must be positive");
        }
        let vocab = (self.vocab_levels as f64).powi(self.latent_dim as i32);
        if vocab > 1e6 {
            return bad("vocabulary lattice exceeds one million tokens");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample<T> {
    pub video: Tensor<T>,
    pub text: Tensor<T>,
    pub class: i32,
}

/// Token table for nearest-word decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab<T> {
    pub tokens: Vec<String>,
    pub embeddings: Vec<Vec<T>>,
}

impl<T: Scalar> Vocab<T> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Nearest token by Euclidean distance; ties go to the
    /// lexicographically smallest token.
    pub fn nearest(&self, row: &[T]) -> usize {
        let mut best = 0;
        let mut best_d = T::infinity();
        for (i, e) in self.embeddings.iter().enumerate() {
            let d = sq_dist(e, row);
            if d < best_d || (d == best_d && self.tokens[i] < self.tokens[best]) {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Tokens of the nearest vocabulary entries, one per row.
    pub fn tokens_for(&self, seq: &Tensor<T>) -> Vec<String> {
        (0..seq.rows()).map(|r| self.tokens[self.nearest(seq.row_slice(r))].clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus<T> {
    pub paired: Vec<PairedSample<T>>,
    pub unpaired_videos: Vec<Tensor<T>>,
    pub unpaired_texts: Vec<Tensor<T>>,
    /// One or more reference sentences per class.
    pub class_sentences: Vec<(i32, Tensor<T>)>,
    pub vocab: Vocab<T>,
    pub seen: Vec<i32>,
    pub unseen: Vec<i32>,
}

impl<T: Scalar> Corpus<T> {
    pub fn classes(&self) -> Vec<i32> {
        let set: BTreeSet<i32> = self.seen.iter().chain(&self.unseen).copied().collect();
        set.into_iter().collect()
    }

    pub fn video_dim(&self) -> usize {
        self.paired.first().map(|s| s.video.cols()).unwrap_or(0)
    }

    pub fn text_dim(&self) -> usize {
        self.paired.first().map(|s| s.text.cols()).unwrap_or(0)
    }
}

/// Ground truth of a synthetic corpus, for oracles.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub class_latents: BTreeMap<i32, Vec<f64>>,
    /// `video_dim x latent_dim`.
    pub video_map: DMatrix<f64>,
    /// `video_dim x nuisance_dim`.
    pub nuisance_map: DMatrix<f64>,
    pub video_bias: Vec<f64>,
    pub text_map: DMatrix<f64>,
    pub text_bias: Vec<f64>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect()
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    gt: &'a GroundTruth,
}

impl Generator<'_> {
    fn video<T: Scalar>(&self, rng: &mut ChaCha8Rng, latent: &[f64]) -> Tensor<T> {
        let s = self.spec;
        let len = rng.random_range(s.video_len[0]..=s.video_len[1]);
        let nuisance = gaussian_vec(rng, s.nuisance_dim, 1.0);
        let offset: Vec<f64> = (0..s.video_dim)
            .map(|i| {
                let n: f64 = (0..s.nuisance_dim).map(|j| self.gt.nuisance_map[(i, j)] * nuisance[j]).sum();
                self.gt.video_bias[i] + s.nuisance_sigma * n
            })
            .collect();
        self.rows(rng, len, latent, &self.gt.video_map, &offset)
    }

    fn text<T: Scalar>(&self, rng: &mut ChaCha8Rng, latent: &[f64]) -> Tensor<T> {
        let s = self.spec;
        let len = rng.random_range(s.text_len[0]..=s.text_len[1]);
        self.rows(rng, len, latent, &self.gt.text_map, &self.gt.text_bias)
    }

    fn rows<T: Scalar>(
        &self,
        rng: &mut ChaCha8Rng,
        len: usize,
        latent: &[f64],
        map: &DMatrix<f64>,
        offset: &[f64],
    ) -> Tensor<T> {
        let sigma = self.spec.noise_sigma;
        let mut data = Vec::with_capacity(len * map.nrows());
        for _ in 0..len {
            let noise = gaussian_vec(rng, latent.len(), 1.0);
            let point: Vec<f64> = latent.iter().zip(&noise).map(|(c, e)| c + sigma * e).collect();
            for i in 0..map.nrows() {
                let x: f64 = (0..point.len()).map(|j| map[(i, j)] * point[j]).sum();
                data.push(stored(x + offset[i]));
            }
        }
        Tensor::new(vec![len, map.nrows()], data).expect("generated shape")
    }
}

/// Feature and vocabulary files hold `f32`, so generated values are
/// rounded to it and a saved corpus reloads unchanged.
fn stored<T: Scalar>(x: f64) -> T {
    T::of(x as f32 as f64)
}

fn lattice_vocab<T: Scalar>(spec: &SyntheticSpec, gt: &GroundTruth) -> Vocab<T> {
    let levels = spec.vocab_levels;
    let d = spec.latent_dim;
    let total = levels.pow(d as u32);
    let mut tokens = Vec::with_capacity(total);
    let mut embeddings = Vec::with_capacity(total);
    let mid = (levels as f64 - 1.0) / 2.0;
    for idx in 0..total {
        let mut digits = vec![0usize; d];
        let mut k = idx;
        for slot in digits.iter_mut().rev() {
            *slot = k % levels;
            k /= levels;
        }
        let point: Vec<f64> = digits.iter().map(|&g| (g as f64 - mid) * spec.vocab_spacing).collect();
        let name: String = std::iter::once('w')
            .chain(digits.iter().map(|&g| char::from_digit(g as u32, 36).unwrap()))
            .collect();
        let emb = (0..spec.text_dim)
            .map(|i| {
                let x: f64 = (0..d).map(|j| gt.text_map[(i, j)] * point[j]).sum();
                stored(x + gt.text_bias[i])
            })
            .collect();
        tokens.push(name);
        embeddings.push(emb);
    }
    Vocab { tokens, embeddings }
}

/// Draws a corpus from `spec` (deterministic in `spec.seed`).
///
/// Noise enters through standard-normal draws scaled by `noise_sigma`, so
/// two specs differing only in `noise_sigma` share every random draw.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<(Corpus<T>, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.latent_dim;
    let fs = spec.feature_scale;
    let video_map = gaussian_matrix(&mut rng, spec.video_dim, k, fs * (1.0 / k as f64).sqrt());
    let nuisance_map =
        gaussian_matrix(&mut rng, spec.video_dim, spec.nuisance_dim, fs * (1.0 / spec.nuisance_dim.max(1) as f64).sqrt());
    let video_bias = gaussian_vec(&mut rng, spec.video_dim, 0.5 * fs);
    let text_map = gaussian_matrix(&mut rng, spec.text_dim, k, fs * (1.0 / k as f64).sqrt());
    let text_bias = gaussian_vec(&mut rng, spec.text_dim, 0.5 * fs);

    let n_classes = spec.n_classes();
    let mut class_latents = BTreeMap::new();
    for c in 0..n_classes {
        class_latents.insert(c as i32, gaussian_vec(&mut rng, k, 1.0));
    }
    let shift = match spec.unpaired_distribution {
        UnpairedDistribution::Matched => 0.0,
        UnpairedDistribution::Unrelated => spec.unrelated_shift,
    };
    let unpaired_latents: Vec<Vec<f64>> = (0..spec.unpaired_classes)
        .map(|_| gaussian_vec(&mut rng, k, 1.0).into_iter().map(|x| x + shift).collect())
        .collect();
    let mut ids: Vec<i32> = (0..n_classes as i32).collect();
    ids.shuffle(&mut rng);
    let mut unseen: Vec<i32> = ids[..spec.n_unseen_classes].to_vec();
    let mut seen: Vec<i32> = ids[spec.n_unseen_classes..].to_vec();
    unseen.sort_unstable();
    seen.sort_unstable();

    let gt = GroundTruth { class_latents, video_map, nuisance_map, video_bias, text_map, text_bias };
    let gen = Generator { spec, gt: &gt };

    let mut paired = Vec::with_capacity(n_classes * spec.samples_per_class);
    for (&class, latent) in &gt.class_latents {
        for _ in 0..spec.samples_per_class {
            let video = gen.video(&mut rng, latent);
            let text = gen.text(&mut rng, latent);
            paired.push(PairedSample { video, text, class });
        }
    }
    let mut class_sentences = Vec::new();
    for (&class, latent) in &gt.class_latents {
        for _ in 0..spec.sentences_per_class {
            class_sentences.push((class, gen.text(&mut rng, latent)));
        }
    }
    let unpaired_videos = (0..spec.unpaired_videos)
        .map(|_| {
            let c = rng.random_range(0..unpaired_latents.len());
            gen.video(&mut rng, &unpaired_latents[c])
        })
        .collect();
    let unpaired_texts = (0..spec.unpaired_texts)
        .map(|_| {
            let c = rng.random_range(0..unpaired_latents.len());
            gen.text(&mut rng, &unpaired_latents[c])
        })
        .collect();
    let vocab = lattice_vocab(spec, &gt);
    let corpus = Corpus { paired, unpaired_videos, unpaired_texts, class_sentences, vocab, seen, unseen };
    Ok((corpus, gt))
}

impl GroundTruth {
    /// Recovers a video's class latent by least squares through the
    /// known maps and returns the nearest candidate class.
    pub fn linear_oracle_class<T: Scalar>(&self, video: &Tensor<T>, candidates: &[i32]) -> i32 {
        let k = self.video_map.ncols();
        let stacked = DMatrix::from_fn(self.video_map.nrows(), k + self.nuisance_map.ncols(), |i, j| {
            if j < k { self.video_map[(i, j)] } else { self.nuisance_map[(i, j - k)] }
        });
        let pinv = stacked.pseudo_inverse(1e-10).expect("pseudo-inverse");
        let mean = video.mean_rows();
        let x = nalgebra::DVector::from_fn(self.video_bias.len(), |i, _| mean.data()[i].as_f64() - self.video_bias[i]);
        let latent = pinv * x;
        let est: Vec<f64> = latent.iter().take(k).copied().collect();
        let mut best = candidates[0];
        let mut best_d = f64::INFINITY;
        for &c in candidates {
            let d = sq_dist(&self.class_latents[&c], &est);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        best
    }
}

/// Training view: paired samples of seen classes plus the unpaired pools.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainView<T> {
    pub paired: Vec<PairedSample<T>>,
    pub unpaired_videos: Vec<Tensor<T>>,
    pub unpaired_texts: Vec<Tensor<T>>,
    pub classes: Vec<i32>,
}

/// Evaluation view: withheld samples and class sentences.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalView<T> {
    /// Paired samples of the unseen classes.
    pub withheld: Vec<PairedSample<T>>,
    pub unseen: Vec<i32>,
    pub seen: Vec<i32>,
    pub class_sentences: Vec<(i32, Tensor<T>)>,
}

impl<T: Scalar> EvalView<T> {
    pub fn sentences_for(&self, allowed: &[i32]) -> Vec<(i32, &Tensor<T>)> {
        self.class_sentences.iter().filter(|(c, _)| allowed.contains(c)).map(|(c, t)| (*c, t)).collect()
    }
}

/// Withholds every paired sample of the `unseen` classes from training.
pub fn split_classes<T: Scalar>(corpus: &Corpus<T>, unseen: &[i32]) -> Result<(TrainView<T>, EvalView<T>)> {
    let all = corpus.classes();
    if unseen.is_empty() {
        return Err(Error::Config("unseen class set is empty".into()));
    }
    let unseen_set: HashSet<i32> = unseen.iter().copied().collect();
    if let Some(c) = unseen.iter().find(|c| !all.contains(c)) {
        return Err(Error::Config(format!("unseen class {c} is not in the corpus")));
    }
    if all.iter().all(|c| unseen_set.contains(c)) {
        return Err(Error::Config("unseen set covers every class; nothing left to train on".into()));
    }
    let mut unseen_sorted: Vec<i32> = unseen_set.iter().copied().collect();
    unseen_sorted.sort_unstable();
    let seen: Vec<i32> = all.iter().copied().filter(|c| !unseen_set.contains(c)).collect();
    let (withheld, paired): (Vec<_>, Vec<_>) =
        corpus.paired.iter().cloned().partition(|s| unseen_set.contains(&s.class));
    let train = TrainView {
        paired,
        unpaired_videos: corpus.unpaired_videos.clone(),
        unpaired_texts: corpus.unpaired_texts.clone(),
        classes: seen.clone(),
    };
    let eval = EvalView { withheld, unseen: unseen_sorted, seen, class_sentences: corpus.class_sentences.clone() };
    Ok((train, eval))
}

/// Draws `k` distinct unseen classes.
pub fn draw_unseen<R: Rng>(classes: &[i32], k: usize, rng: &mut R) -> Vec<i32> {
    let mut ids = classes.to_vec();
    ids.shuffle(rng);
    let mut out = ids[..k.min(ids.len())].to_vec();
    out.sort_unstable();
    out
}

// ---------------------------------------------------------------------------
// file formats
// ---------------------------------------------------------------------------

pub fn encode_features<T: Scalar>(seqs: &[(i32, &Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(seqs.len() as u32).to_le_bytes());
    for (class, t) in seqs {
        out.extend_from_slice(&class.to_le_bytes());
        out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for &x in t.data() {
            out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_features<T: Scalar>(bytes: &[u8]) -> Result<Vec<(i32, Tensor<T>)>> {
    let mut r = Reader::new(bytes);
    r.header(FEATURE_MAGIC, FEATURE_VERSION, "feature file")?;
    let count = r.u32("sequence count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let class = r.i32("class id")?;
        let len = r.u32("length")? as usize;
        let dim = r.u32("dim")? as usize;
        let need = len * dim * 4;
        if r.remaining() < need {
            return Err(Error::Format(format!(
                "sequence {i}: header promises {len}x{dim} values ({need} bytes), found {} bytes",
                r.remaining()
            )));
        }
        let raw = r.take(need, "payload")?;
        let data = raw.chunks_exact(4).map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect();
        out.push((class, Tensor::new(vec![len, dim], data)?));
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after {count} sequences", r.remaining())));
    }
    Ok(out)
}

pub fn save_features<T: Scalar>(path: &Path, seqs: &[(i32, &Tensor<T>)]) -> Result<()> {
    fs::write(path, encode_features(seqs))?;
    Ok(())
}

pub fn load_features<T: Scalar>(path: &Path) -> Result<Vec<(i32, Tensor<T>)>> {
    decode_features(&fs::read(path)?)
}

pub fn format_vocab<T: Scalar>(vocab: &Vocab<T>) -> String {
    let mut s = String::new();
    for (tok, emb) in vocab.tokens.iter().zip(&vocab.embeddings) {
        s.push_str(tok);
        for x in emb {
            s.push(' ');
            s.push_str(&format!("{}", x.as_f64() as f32));
        }
        s.push('\n');
    }
    s
}

pub fn parse_vocab<T: Scalar>(text: &str) -> Result<Vocab<T>> {
    let mut tokens = Vec::new();
    let mut embeddings = Vec::new();
    let mut seen = HashSet::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let tok = parts.next().unwrap().to_string();
        let values: Vec<T> = parts
            .map(|p| {
                p.parse::<f32>()
                    .map(|x| T::of(x as f64))
                    .map_err(|_| Error::Parse { line: line_no, detail: format!("bad float {p:?}") })
            })
            .collect::<Result<_>>()?;
        match width {
            None if values.is_empty() => {
                return Err(Error::Parse { line: line_no, detail: "token has no embedding values".into() })
            }
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    detail: format!("expected {w} floats, found {}", values.len()),
                })
            }
            _ => {}
        }
        if !seen.insert(tok.clone()) {
            return Err(Error::Parse { line: line_no, detail: format!("duplicate token {tok:?}") });
        }
        tokens.push(tok);
        embeddings.push(values);
    }
    Ok(Vocab { tokens, embeddings })
}

pub fn save_vocab<T: Scalar>(path: &Path, vocab: &Vocab<T>) -> Result<()> {
    fs::write(path, format_vocab(vocab))?;
    Ok(())
}

pub fn load_vocab<T: Scalar>(path: &Path) -> Result<Vocab<T>> {
    parse_vocab(&fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub seen: Vec<i32>,
    pub unseen: Vec<i32>,
}

pub const PAIRED_VIDEOS: &str = "paired_videos.mmef";
pub const PAIRED_TEXTS: &str = "paired_texts.mmef";
pub const UNPAIRED_VIDEOS: &str = "unpaired_videos.mmef";
pub const UNPAIRED_TEXTS: &str = "unpaired_texts.mmef";
pub const CLASS_SENTENCES: &str = "class_sentences.mmef";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const SPLIT_FILE: &str = "split.json";

impl<T: Scalar> Corpus<T> {
    /// Writes every file of the corpus into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let videos: Vec<_> = self.paired.iter().map(|s| (s.class, &s.video)).collect();
        let texts: Vec<_> = self.paired.iter().map(|s| (s.class, &s.text)).collect();
        save_features(&dir.join(PAIRED_VIDEOS), &videos)?;
        save_features(&dir.join(PAIRED_TEXTS), &texts)?;
        let uv: Vec<_> = self.unpaired_videos.iter().map(|t| (NO_CLASS, t)).collect();
        let ut: Vec<_> = self.unpaired_texts.iter().map(|t| (NO_CLASS, t)).collect();
        save_features(&dir.join(UNPAIRED_VIDEOS), &uv)?;
        save_features(&dir.join(UNPAIRED_TEXTS), &ut)?;
        let cs: Vec<_> = self.class_sentences.iter().map(|(c, t)| (*c, t)).collect();
        save_features(&dir.join(CLASS_SENTENCES), &cs)?;
        save_vocab(&dir.join(VOCAB_FILE), &self.vocab)?;
        let split = SplitFile { seen: self.seen.clone(), unseen: self.unseen.clone() };
        fs::write(dir.join(SPLIT_FILE), serde_json::to_string_pretty(&split)? + "\n")?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let videos = load_features::<T>(&dir.join(PAIRED_VIDEOS))?;
        let texts = load_features::<T>(&dir.join(PAIRED_TEXTS))?;
        if videos.len() != texts.len() {
            return Err(Error::Format(format!("{} paired videos but {} paired texts", videos.len(), texts.len())));
        }
        let paired = videos
            .into_iter()
            .zip(texts)
            .enumerate()
            .map(|(i, ((cv, video), (ct, text)))| {
                if cv != ct {
                    return Err(Error::Format(format!("paired sample {i}: class {cv} vs {ct}")));
                }
                Ok(PairedSample { video, text, class: cv })
            })
            .collect::<Result<_>>()?;
        let optional = |name: &str| -> Result<Vec<Tensor<T>>> {
            let p = dir.join(name);
            if p.exists() { Ok(load_features(&p)?.into_iter().map(|(_, t)| t).collect()) } else { Ok(Vec::new()) }
        };
        let split: SplitFile = serde_json::from_str(&fs::read_to_string(dir.join(SPLIT_FILE))?)?;
        Ok(Corpus {
            paired,
            unpaired_videos: optional(UNPAIRED_VIDEOS)?,
            unpaired_texts: optional(UNPAIRED_TEXTS)?,
            class_sentences: load_features(&dir.join(CLASS_SENTENCES))?,
            vocab: load_vocab(&dir.join(VOCAB_FILE))?,
            seen: split.seen,
            unseen: split.unseen,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            n_seen_classes: 5,
            n_unseen_classes: 5,
            samples_per_class: 6,
            latent_dim: 4,
            unpaired_videos: 5,
            unpaired_texts: 7,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn noise_free_classes_are_constant() {
        let spec = SyntheticSpec { noise_sigma: 0.0, nuisance_sigma: 0.0, ..small() };
        let (c, _) = generate_synthetic::<f64>(&spec).unwrap();
        let of_class: Vec<_> = c.paired.iter().filter(|s| s.class == 0).collect();
        let row0 = of_class[0].video.row_slice(0).to_vec();
        for s in &of_class {
            for r in 0..s.video.rows() {
                assert_eq!(s.video.row_slice(r), row0.as_slice());
            }
        }
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let (a, _) = generate_synthetic::<f64>(&small()).unwrap();
        let (b, _) = generate_synthetic::<f64>(&small()).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate_synthetic::<f64>(&SyntheticSpec { seed: 10, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn degenerate_specs_rejected() {
        assert!(generate_synthetic::<f64>(&SyntheticSpec { latent_dim: 0, ..small() }).is_err());
        assert!(generate_synthetic::<f64>(&SyntheticSpec { n_unseen_classes: 1, ..small() }).is_err());
    }

    #[test]
    fn split_set_arithmetic() {
        let (c, _) = generate_synthetic::<f64>(&small()).unwrap();
        assert!(split_classes(&c, &[]).is_err());
        let (train, eval) = split_classes(&c, &c.unseen).unwrap();
        let train_classes: BTreeSet<i32> = train.paired.iter().map(|s| s.class).collect();
        assert_eq!(train_classes.into_iter().collect::<Vec<_>>(), c.seen);
        assert!(train.paired.iter().all(|s| !c.unseen.contains(&s.class)));
        assert_eq!(train.paired.len() + eval.withheld.len(), c.paired.len());
        assert!(split_classes(&c, &c.classes()).is_err());
    }

    #[test]
    fn truncated_feature_payload() {
        let t = Tensor::<f64>::from_fn(3, 2, |r, c| (r + c) as f64);
        let bytes = encode_features(&[(1, &t)]);
        let err = decode_features::<f64>(&bytes[..bytes.len() - 4]).unwrap_err().to_string();
        assert!(err.contains("3x2") && err.contains("found"), "{err}");
    }

    #[test]
    fn feature_magic_checked() {
        let t = Tensor::<f64>::row(vec![1.0]);
        let mut bytes = encode_features(&[(1, &t)]);
        bytes[1] = b'X';
        assert!(decode_features::<f64>(&bytes).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn vocab_errors_carry_line_numbers() {
        let err = parse_vocab::<f64>("a 1 2\nb 1 2 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_vocab::<f64>("a 1 2\na 3 4\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn vocab_nearest_tie_breaks_lexicographically() {
        let v = Vocab { tokens: vec!["b".into(), "a".into()], embeddings: vec![vec![1.0], vec![-1.0]] };
        assert_eq!(v.tokens[v.nearest(&[0.0])], "a");
        assert_eq!(v.tokens[v.nearest(&[0.9])], "b");
    }
}
