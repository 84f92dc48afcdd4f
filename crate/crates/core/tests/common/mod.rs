#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use xmodal::attention::WIDTH_FLOOR;
use xmodal::data::SyntheticSpec;
use xmodal::model::{ModelConfig, ModelDims, MultimodalModel};
use xmodal::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_seq(rng: &mut ChaCha8Rng, len: usize, dim: usize, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(len, dim, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig { hidden_dim: 4, n_filters: 2, embed_dim: 3, fc_hidden: Some([5, 4, 3]), ..Default::default() }
}

pub const TINY_DIMS: ModelDims = ModelDims { video_dim: 3, text_dim: 2 };

/// A tiny model with positive biases so no ReLU layer starts dead.
pub fn tiny_model(seed: u64) -> MultimodalModel<f64> {
    let mut r = rng(seed);
    let mut m = MultimodalModel::new(tiny_config(), TINY_DIMS, &mut r).unwrap();
    let ids: Vec<_> = m.params.iter().map(|(id, name, _)| (id, name.to_string())).collect();
    for (id, name) in ids {
        if name.ends_with(".b") {
            for x in m.params.get_mut(id).data_mut() {
                *x += r.random_range(0.05..0.3);
            }
        }
    }
    m
}

/// `n` videos and texts of random lengths for the tiny model.
pub fn tiny_batch(seed: u64, n: usize) -> (Vec<Tensor<f64>>, Vec<Tensor<f64>>, Vec<i32>) {
    let mut r = rng(seed);
    let videos = (0..n).map(|_| {
        let len = r.random_range(2..=5);
        random_seq(&mut r, len, TINY_DIMS.video_dim, 1.0)
    });
    let videos: Vec<_> = videos.collect();
    let texts: Vec<_> = (0..n)
        .map(|_| {
            let len = r.random_range(2..=5);
            random_seq(&mut r, len, TINY_DIMS.text_dim, 1.0)
        })
        .collect();
    let classes = (0..n as i32).map(|i| i % 2).collect();
    (videos, texts, classes)
}

/// A small corpus that trains in well under a second.
pub fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_seen_classes: 4,
        n_unseen_classes: 2,
        samples_per_class: 6,
        video_len: [3, 6],
        video_dim: 6,
        text_len: [2, 4],
        text_dim: 5,
        latent_dim: 3,
        nuisance_dim: 2,
        seed,
        ..Default::default()
    }
}

pub fn small_model_config() -> ModelConfig {
    ModelConfig { hidden_dim: 8, n_filters: 2, embed_dim: 4, ..Default::default() }
}

pub fn frobenius(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Gaussian weights evaluated entry by entry in log space, then normalised.
pub fn filter_oracle(centers_raw: &[f64], widths_raw: &[f64], len: usize) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    for (c, w) in centers_raw.iter().zip(widths_raw) {
        let center = len as f64 * (c + 1.0) / 2.0;
        let sigma = w.exp().ln_1p() + WIDTH_FLOOR;
        let log_w: Vec<f64> = (0..len).map(|t| -(t as f64 - center).powi(2) / (2.0 * sigma.powi(2))).collect();
        let peak = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = log_w.iter().map(|l| (l - peak).exp()).sum();
        rows.push(log_w.iter().map(|l| (l - peak).exp() / denom).collect());
    }
    rows
}
