mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use common::{rng, small_model_config, small_spec};
use xmodal::data::{generate_synthetic, split_classes, SyntheticSpec};
use xmodal::eval::{
    caption_video, discover_clusters, kmeans, nearest_class, nearest_class_cosine, zero_shot_classify,
    zero_shot_from_embeddings,
};
use xmodal::model::Embedding;
use xmodal::objectives::LossWeights;
use xmodal::tensor::Tensor;
use xmodal::trainer::{train, TrainConfig};

fn unit(r: &mut impl Rng, dim: usize) -> Embedding<f64> {
    let v: Vec<f64> = (0..dim).map(|_| r.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Embedding(v.into_iter().map(|x| x / n).collect())
}

/// Distance to every target, smallest first, class id breaking ties.
fn brute_force_nearest(z: &[f64], targets: &[(i32, Embedding<f64>)]) -> i32 {
    let mut scored: Vec<(f64, i32)> = targets
        .iter()
        .map(|(c, e)| (z.iter().zip(e.values()).map(|(a, b)| (a - b).powi(2)).sum(), *c))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored[0].1
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn euclidean_and_cosine_rankings_agree(seed in any::<u64>(), dim in 2usize..16, n_targets in 1usize..12) {
        let mut r = rng(seed);
        let targets: Vec<(i32, Embedding<f64>)> = (0..n_targets as i32).map(|c| (c, unit(&mut r, dim))).collect();
        for _ in 0..20 {
            let z = unit(&mut r, dim);
            let e = nearest_class(z.values(), &targets);
            prop_assert_eq!(e, nearest_class_cosine(z.values(), &targets));
            prop_assert_eq!(e, brute_force_nearest(z.values(), &targets));
        }
    }

    #[test]
    fn zero_shot_ignores_presentation_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let sentences: Vec<(i32, Embedding<f64>)> = (0..5).map(|c| (c, unit(&mut r, 6))).collect();
        let videos: Vec<(i32, Embedding<f64>)> = (0..30).map(|i| (i % 5, unit(&mut r, 6))).collect();
        let allowed = [0, 2, 3, 4];
        let base = zero_shot_from_embeddings(&videos, &sentences, &allowed).unwrap();
        let mut order: Vec<usize> = (0..videos.len()).collect();
        order.shuffle(&mut r);
        let shuffled_v: Vec<_> = order.iter().map(|&i| videos[i].clone()).collect();
        let mut shuffled_s = sentences.clone();
        shuffled_s.reverse();
        let mut allowed_rev = allowed;
        allowed_rev.reverse();
        let other = zero_shot_from_embeddings(&shuffled_v, &shuffled_s, &allowed_rev).unwrap();
        prop_assert_eq!(other.accuracy, base.accuracy);
        prop_assert_eq!(&other.per_class, &base.per_class);
        for (k, &i) in order.iter().enumerate() {
            prop_assert_eq!(other.predictions[k], base.predictions[i]);
        }
    }

    #[test]
    fn kmeans_objective_never_rises(seed in any::<u64>(), k in 1usize..6, n in 6usize..60) {
        let mut r = rng(seed);
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| r.sample(StandardNormal)).collect()).collect();
        let km = kmeans(&points, k, seed).unwrap();
        for w in km.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", km.objective_trace);
        }
        prop_assert_eq!(km.assignments.len(), n);
        prop_assert!(km.assignments.iter().all(|&a| a < k));
        prop_assert_eq!(kmeans(&points, k, seed).unwrap(), km);
    }
}

#[test]
fn voting_is_deterministic_under_seed() {
    let mut r = rng(11);
    let labeled: Vec<(i32, Vec<f64>)> = (0..80)
        .map(|i| {
            let c = i % 4;
            (c, (0..3).map(|d| if d == (c % 3) as usize { 3.0 } else { 0.0 } + r.sample::<f64, _>(StandardNormal)).collect())
        })
        .collect();
    let (fit, test) = labeled.split_at(40);
    let a = discover_clusters(fit, test, 4, 5).unwrap();
    let b = discover_clusters(fit, test, 4, 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn captions_use_only_vocabulary_tokens() {
    let (corpus, _) = generate_synthetic::<f64>(&small_spec(3)).unwrap();
    let model = xmodal::model::MultimodalModel::new(
        small_model_config(),
        xmodal::model::ModelDims { video_dim: corpus.video_dim(), text_dim: corpus.text_dim() },
        &mut rng(1),
    )
    .unwrap();
    for s in &corpus.paired {
        let caption = caption_video(&model, &s.video, &corpus.vocab, s.text.rows()).unwrap();
        assert_eq!(caption.len(), s.text.rows());
        assert!(caption.iter().all(|t| corpus.vocab.tokens.contains(t)));
    }
}

#[test]
fn an_overfit_model_classifies_its_training_classes() {
    let spec = SyntheticSpec {
        n_seen_classes: 4,
        n_unseen_classes: 2,
        samples_per_class: 10,
        noise_sigma: 0.1,
        nuisance_sigma: 0.0,
        ..small_spec(21)
    };
    let (corpus, _) = generate_synthetic::<f64>(&spec).unwrap();
    let (view, _) = split_classes(&corpus, &corpus.unseen).unwrap();
    let cfg = TrainConfig {
        init_epochs: 0,
        main_epochs: 40,
        batch_size: 8,
        use_unpaired: false,
        adversarial: xmodal::adversarial::AdversarialWeights::off(),
        loss: LossWeights { use_triplet_instead_of_joint: true, ..Default::default() },
        seed: 2,
        ..Default::default()
    };
    let out = train(&view, &small_model_config(), &cfg).unwrap();
    let videos: Vec<(i32, &Tensor<f64>)> = view.paired.iter().map(|s| (s.class, &s.video)).collect();
    let sentences: Vec<(i32, &Tensor<f64>)> = corpus.class_sentences.iter().map(|(c, t)| (*c, t)).collect();
    let r = zero_shot_classify(&out.model, &videos, &sentences, &view.classes).unwrap();
    assert!(r.accuracy >= 0.95, "seen-class accuracy {}", r.accuracy);
}
