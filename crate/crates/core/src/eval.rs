//! Evaluation protocols: zero-shot nearest-sentence classification,
//! k-means activity discovery with cluster voting, and nearest-word
//! captioning.

use std::collections::{BTreeMap, HashMap};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{PairedSample, Vocab};
use crate::error::{Error, Result};
use crate::model::{Embedding, MultimodalModel};
use crate::scalar::Scalar;
use crate::tensor::{sq_dist, Tensor};

pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotResult {
    pub predictions: Vec<i32>,
    pub labels: Vec<i32>,
    pub accuracy: f64,
    pub per_class: BTreeMap<i32, f64>,
}

/// Class of the nearest target; equal distances go to the lowest class id.
pub fn nearest_class<T: Scalar>(z: &[T], targets: &[(i32, Embedding<T>)]) -> i32 {
    let mut best: Option<(T, i32)> = None;
    for (c, e) in targets {
        let d = sq_dist(z, e.values());
        best = match best {
            Some((bd, bc)) if d > bd || (d == bd && *c >= bc) => Some((bd, bc)),
            _ => Some((d, *c)),
        };
    }
    best.expect("at least one target").1
}

/// Same as [`nearest_class`] but ranking by cosine similarity.
pub fn nearest_class_cosine<T: Scalar>(z: &[T], targets: &[(i32, Embedding<T>)]) -> i32 {
    let norm = |x: &[T]| x.iter().map(|&a| a * a).sum::<T>().sqrt();
    let nz = norm(z);
    let mut best: Option<(T, i32)> = None;
    for (c, e) in targets {
        let dot: T = z.iter().zip(e.values()).map(|(&a, &b)| a * b).sum();
        let s = dot / (nz * norm(e.values()));
        best = match best {
            Some((bs, bc)) if s < bs || (s == bs && *c >= bc) => Some((bs, bc)),
            _ => Some((s, *c)),
        };
    }
    best.expect("at least one target").1
}

fn accuracy_of(predictions: &[i32], labels: &[i32]) -> (f64, BTreeMap<i32, f64>) {
    let mut per: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
    for (&p, &l) in predictions.iter().zip(labels) {
        let e = per.entry(l).or_default();
        e.1 += 1;
        if p == l {
            e.0 += 1;
        }
    }
    let right: usize = per.values().map(|e| e.0).sum();
    let acc = if labels.is_empty() { 0.0 } else { right as f64 / labels.len() as f64 };
    (acc, per.into_iter().map(|(c, (r, n))| (c, r as f64 / n as f64)).collect())
}

/// Zero-shot classification on precomputed embeddings. Only sentences of
/// `allowed` classes are candidates.
pub fn zero_shot_from_embeddings<T: Scalar>(
    videos: &[(i32, Embedding<T>)],
    sentences: &[(i32, Embedding<T>)],
    allowed: &[i32],
) -> Result<ZeroShotResult> {
    let targets: Vec<(i32, Embedding<T>)> =
        sentences.iter().filter(|(c, _)| allowed.contains(c)).cloned().collect();
    if let Some(c) = allowed.iter().find(|c| !targets.iter().any(|(t, _)| t == *c)) {
        return Err(Error::Config(format!("no class sentence for allowed class {c}")));
    }
    let predictions: Vec<i32> = videos.iter().map(|(_, z)| nearest_class(z.values(), &targets)).collect();
    let labels: Vec<i32> = videos.iter().map(|(c, _)| *c).collect();
    let (accuracy, per_class) = accuracy_of(&predictions, &labels);
    Ok(ZeroShotResult { predictions, labels, accuracy, per_class })
}

/// Embeds videos and class sentences, then labels each video with the
/// class of its nearest sentence.
pub fn zero_shot_classify<T: Scalar>(
    model: &MultimodalModel<T>,
    videos: &[(i32, &Tensor<T>)],
    sentences: &[(i32, &Tensor<T>)],
    allowed: &[i32],
) -> Result<ZeroShotResult> {
    if allowed.is_empty() {
        return Err(Error::Config("allowed class set is empty".into()));
    }
    let vids: Vec<Tensor<T>> = videos.iter().map(|(_, v)| (*v).clone()).collect();
    let zv = model.embed_videos(&vids)?;
    let kept: Vec<&(i32, &Tensor<T>)> = sentences.iter().filter(|(c, _)| allowed.contains(c)).collect();
    let texts: Vec<Tensor<T>> = kept.iter().map(|(_, t)| (*t).clone()).collect();
    let zt = model.embed_texts(&texts)?;
    let v: Vec<(i32, Embedding<T>)> = videos.iter().map(|(c, _)| *c).zip(zv).collect();
    let s: Vec<(i32, Embedding<T>)> = kept.iter().map(|(c, _)| *c).zip(zt).collect();
    zero_shot_from_embeddings(&v, &s, allowed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub objective_trace: Vec<f64>,
}

fn nearest_centroid(x: &[f64], centroids: &[Vec<f64>], usable: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best = None;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        if !usable(j) {
            continue;
        }
        let d = sq_dist(x, c);
        if d < best_d {
            best = Some(j);
            best_d = d;
        }
    }
    best
}

fn plus_plus_seeds(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centroids.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            Err(_) => rng.random_range(0..points.len()),
        };
        centroids.push(points[next].clone());
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding. A cluster that loses all its
/// members keeps its previous centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 || points.len() < k {
        return Err(Error::Config(format!("k-means needs 1 <= k <= points ({k} vs {})", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::shape("kmeans", "points differ in dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(points, k, &mut rng);
    let mut assignments = vec![0; points.len()];
    let mut trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITER {
        let mut objective = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            *a = nearest_centroid(p, &centroids, |_| true).unwrap();
            objective += sq_dist(p, &centroids[*a]);
        }
        trace.push(objective);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            shift = shift.max(sq_dist(&new, &centroids[j]).sqrt());
            centroids[j] = new;
        }
        if shift <= KMEANS_TOL {
            break;
        }
    }
    Ok(KMeans { centroids, assignments, objective_trace: trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub k: usize,
    pub assignments: Vec<usize>,
    /// Voted label per cluster; `None` for clusters with no members.
    pub cluster_labels: Vec<Option<i32>>,
    pub predictions: Vec<i32>,
    pub accuracy: f64,
}

/// Clusters `fit`, lets each cluster vote the majority label of its members
/// (ties to the lowest label), then labels every `test` point with the vote
/// of its nearest labeled centroid.
pub fn discover_clusters(fit: &[(i32, Vec<f64>)], test: &[(i32, Vec<f64>)], k: usize, seed: u64) -> Result<ClusterResult> {
    let points: Vec<Vec<f64>> = fit.iter().map(|(_, p)| p.clone()).collect();
    let km = kmeans(&points, k, seed)?;
    let mut votes: Vec<BTreeMap<i32, usize>> = vec![BTreeMap::new(); k];
    for (&a, (label, _)) in km.assignments.iter().zip(fit) {
        *votes[a].entry(*label).or_default() += 1;
    }
    let cluster_labels: Vec<Option<i32>> = votes
        .iter()
        .map(|v| v.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(l, _)| *l))
        .collect();
    let predictions: Vec<i32> = test
        .iter()
        .map(|(_, p)| {
            let j = nearest_centroid(p, &km.centroids, |j| cluster_labels[j].is_some()).unwrap();
            cluster_labels[j].unwrap()
        })
        .collect();
    let labels: Vec<i32> = test.iter().map(|(l, _)| *l).collect();
    let (accuracy, _) = accuracy_of(&predictions, &labels);
    Ok(ClusterResult { k, assignments: km.assignments, cluster_labels, predictions, accuracy })
}

/// Alternating split of a labeled list into fit and test halves.
pub fn alternate_split<X: Clone>(items: &[(i32, X)]) -> (Vec<(i32, X)>, Vec<(i32, X)>) {
    let fit = items.iter().step_by(2).cloned().collect();
    let test = items.iter().skip(1).step_by(2).cloned().collect();
    (fit, test)
}

/// Discovery on learned video embeddings.
pub fn discover_with_model<T: Scalar>(
    model: &MultimodalModel<T>,
    videos: &[(i32, &Tensor<T>)],
    k: usize,
    seed: u64,
) -> Result<ClusterResult> {
    let seqs: Vec<Tensor<T>> = videos.iter().map(|(_, v)| (*v).clone()).collect();
    let z = model.embed_videos(&seqs)?;
    let feats: Vec<(i32, Vec<f64>)> =
        videos.iter().zip(z).map(|((c, _), e)| (*c, e.values().iter().map(|x| x.as_f64()).collect())).collect();
    let (fit, test) = alternate_split(&feats);
    discover_clusters(&fit, &test, k, seed)
}

/// Discovery on raw video features, averaged over time.
pub fn discover_raw<T: Scalar>(videos: &[(i32, &Tensor<T>)], k: usize, seed: u64) -> Result<ClusterResult> {
    let feats: Vec<(i32, Vec<f64>)> =
        videos.iter().map(|(c, v)| (*c, v.mean_rows().data().iter().map(|x| x.as_f64()).collect())).collect();
    let (fit, test) = alternate_split(&feats);
    discover_clusters(&fit, &test, k, seed)
}

/// Decodes `G_T(E_V(v))` to `out_len` rows and maps each row to its
/// nearest vocabulary token.
pub fn caption_video<T: Scalar>(
    model: &MultimodalModel<T>,
    video: &Tensor<T>,
    vocab: &Vocab<T>,
    out_len: usize,
) -> Result<Vec<String>> {
    if vocab.is_empty() {
        return Err(Error::Config("vocabulary is empty".into()));
    }
    let z = model.encode_video(video)?;
    let rows = model.decode_text(&z, out_len)?;
    Ok(vocab.tokens_for(&rows))
}

/// `|multiset(pred) ∩ multiset(reference)| / |reference|`.
pub fn token_overlap_score(predicted: &[String], reference: &[String]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Config("reference caption is empty".into()));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut hit = 0;
    for t in predicted {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                hit += 1;
            }
        }
    }
    Ok(hit as f64 / reference.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionResult {
    pub scores: Vec<f64>,
    pub mean_score: f64,
    /// Mean score of uniformly random token emission of the same length.
    pub chance: f64,
    pub examples: Vec<(i32, Vec<String>, Vec<String>)>,
}

/// Captions every sample's video at its sentence length and scores it
/// against the nearest-vocabulary tokens of the paired sentence.
pub fn caption_protocol<T: Scalar>(
    model: &MultimodalModel<T>,
    samples: &[&PairedSample<T>],
    vocab: &Vocab<T>,
    chance_draws: usize,
    seed: u64,
) -> Result<CaptionResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(samples.len());
    let mut chance = 0.0;
    let mut examples = Vec::new();
    for s in samples {
        let reference = vocab.tokens_for(&s.text);
        let pred = caption_video(model, &s.video, vocab, s.text.rows())?;
        scores.push(token_overlap_score(&pred, &reference)?);
        for _ in 0..chance_draws {
            let random: Vec<String> =
                (0..reference.len()).map(|_| vocab.tokens[rng.random_range(0..vocab.len())].clone()).collect();
            chance += token_overlap_score(&random, &reference)?;
        }
        if examples.len() < 5 {
            examples.push((s.class, pred, reference));
        }
    }
    let n = samples.len().max(1) as f64;
    let mean_score = scores.iter().sum::<f64>() / n;
    let chance = chance / (n * chance_draws.max(1) as f64);
    Ok(CaptionResult { scores, mean_score, chance, examples })
}

/// Mean and (population) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}
