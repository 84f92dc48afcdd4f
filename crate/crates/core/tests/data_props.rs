mod common;

use proptest::prelude::*;

use common::{random_seq, rng, small_spec};
use xmodal::data::{
    decode_features, draw_unseen, encode_features, format_vocab, generate_synthetic, parse_vocab, split_classes, Corpus,
    SplitFile, SyntheticSpec, UnpairedDistribution, SPLIT_FILE,
};
use xmodal::tensor::Tensor;

fn oracle_accuracy(spec: &SyntheticSpec) -> f64 {
    let (corpus, gt) = generate_synthetic::<f64>(spec).unwrap();
    let classes = corpus.classes();
    let right = corpus.paired.iter().filter(|s| gt.linear_oracle_class(&s.video, &classes) == s.class).count();
    right as f64 / corpus.paired.len() as f64
}

#[test]
fn training_view_never_sees_unseen_classes() {
    let (corpus, _) = generate_synthetic::<f64>(&small_spec(1)).unwrap();
    for seed in 0..20 {
        let unseen = draw_unseen(&corpus.classes(), 2, &mut rng(seed));
        let (train, eval) = split_classes(&corpus, &unseen).unwrap();
        assert!(train.paired.iter().all(|s| !unseen.contains(&s.class)));
        assert!(eval.withheld.iter().all(|s| unseen.contains(&s.class)));
        assert_eq!(train.paired.len() + eval.withheld.len(), corpus.paired.len());
        assert!(train.classes.iter().all(|c| !unseen.contains(c)));
    }
}

#[test]
fn generation_is_seeded_and_latents_are_distinct() {
    let a = generate_synthetic::<f64>(&small_spec(5)).unwrap();
    let b = generate_synthetic::<f64>(&small_spec(5)).unwrap();
    let c = generate_synthetic::<f64>(&small_spec(6)).unwrap();
    assert_eq!(a.0, b.0);
    assert_ne!(a.0.paired, c.0.paired);
    for (class, la) in &a.1.class_latents {
        assert_ne!(la, &c.1.class_latents[class]);
    }
    let latents: Vec<&Vec<f64>> = a.1.class_latents.values().collect();
    for i in 0..latents.len() {
        for j in i + 1..latents.len() {
            let d: f64 = latents[i].iter().zip(latents[j]).map(|(x, y)| (x - y).powi(2)).sum();
            assert!(d > 0.0);
        }
    }
}

#[test]
fn oracle_accuracy_falls_as_noise_rises() {
    let base = SyntheticSpec { samples_per_class: 60, ..SyntheticSpec { seed: 3, ..Default::default() } };
    let accs: Vec<f64> = [0.0, 0.3, 0.6, 1.0, 1.5, 2.5]
        .iter()
        .map(|&noise_sigma| oracle_accuracy(&SyntheticSpec { noise_sigma, ..base.clone() }))
        .collect();
    for w in accs.windows(2) {
        assert!(w[1] <= w[0], "{accs:?}");
    }
    assert!(accs[0] > 0.99, "{accs:?}");
    assert!(accs[5] < accs[0], "{accs:?}");
}

#[test]
fn unpaired_pools_have_the_requested_sizes() {
    let spec = SyntheticSpec { unpaired_videos: 12, unpaired_texts: 9, ..small_spec(2) };
    let (matched, _) = generate_synthetic::<f64>(&spec).unwrap();
    assert_eq!((matched.unpaired_videos.len(), matched.unpaired_texts.len()), (12, 9));
    assert!(matched.unpaired_videos.iter().all(|v| v.cols() == spec.video_dim));
    let unrelated = SyntheticSpec { unpaired_distribution: UnpairedDistribution::Unrelated, ..spec.clone() };
    let (other, _) = generate_synthetic::<f64>(&unrelated).unwrap();
    assert_eq!(other.paired, matched.paired, "unpaired settings must not disturb the paired draws");
    assert_ne!(other.unpaired_videos, matched.unpaired_videos);
}

#[test]
fn corpus_directory_round_trips() {
    let spec = SyntheticSpec { unpaired_videos: 5, unpaired_texts: 4, ..small_spec(8) };
    let (corpus, _) = generate_synthetic::<f64>(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    corpus.save_dir(dir.path()).unwrap();
    let back = Corpus::<f64>::load_dir(dir.path()).unwrap();
    assert_eq!(back, corpus);
    let split: SplitFile = serde_json::from_str(&std::fs::read_to_string(dir.path().join(SPLIT_FILE)).unwrap()).unwrap();
    assert_eq!(split.unseen.len(), spec.n_unseen_classes);
}

#[test]
fn vocabulary_text_round_trips() {
    let (corpus, _) = generate_synthetic::<f64>(&small_spec(4)).unwrap();
    let text = format_vocab(&corpus.vocab);
    assert_eq!(parse_vocab::<f64>(&text).unwrap(), corpus.vocab);
    assert_eq!(corpus.vocab.len(), 27);
}

proptest! {
    #[test]
    fn f32_feature_values_round_trip_bit_exactly(
        shapes in prop::collection::vec((1usize..30, 1usize..10, -5i32..50), 0..8),
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let seqs: Vec<(i32, Tensor<f64>)> =
            shapes.iter().map(|&(len, dim, class)| (class, random_seq(&mut r, len, dim, 3.0).map(|x| x as f32 as f64))).collect();
        let borrowed: Vec<(i32, &Tensor<f64>)> = seqs.iter().map(|(c, t)| (*c, t)).collect();
        let back = decode_features::<f64>(&encode_features(&borrowed)).unwrap();
        prop_assert_eq!(back, seqs);
    }

    #[test]
    fn unseen_draws_are_distinct_members(k in 1usize..13, seed in any::<u64>()) {
        let classes: Vec<i32> = (0..13).collect();
        let drawn = draw_unseen(&classes, k, &mut rng(seed));
        prop_assert_eq!(drawn.len(), k);
        prop_assert!(drawn.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(drawn.iter().all(|c| classes.contains(c)));
    }
}
