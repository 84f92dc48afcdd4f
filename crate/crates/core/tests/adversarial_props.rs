mod common;

use proptest::prelude::*;

use common::{rng, tiny_batch, tiny_model};
use xmodal::adversarial::{discriminator_losses, generator_losses, AdversarialReport, AdversarialWeights, DiscriminatorSet};
use xmodal::autodiff::Tape;
use xmodal::model::MultimodalModel;
use xmodal::objectives::CanonicalLengths;
use xmodal::optim::{LrSchedule, SgdState};
use xmodal::params::ParamStore;
use xmodal::tensor::Tensor;

const LENS: CanonicalLengths = CanonicalLengths { video: 4, text: 3 };

struct Setup {
    model: MultimodalModel<f64>,
    discs: DiscriminatorSet<f64>,
    videos: Vec<Tensor<f64>>,
    texts: Vec<Tensor<f64>>,
}

fn setup(seed: u64) -> Setup {
    let model = tiny_model(seed);
    let discs = DiscriminatorSet::new(3, 3, 2, &mut rng(seed + 1));
    let (videos, texts, _) = tiny_batch(seed + 2, 4);
    Setup { model, discs, videos, texts }
}

fn refs(xs: &[Tensor<f64>]) -> Vec<&Tensor<f64>> {
    xs.iter().collect()
}

fn sgd(lr: f64, store: &ParamStore<f64>) -> SgdState<f64> {
    SgdState::new(LrSchedule { learning_rate: lr, momentum: 0.0, decay_period: 0, decay_factor: 1.0 }, store)
}

/// One discriminator update with the generators bound frozen; returns
/// the loss before the step and the generator gradients it produced.
fn d_step(s: &mut Setup, w: &AdversarialWeights, lr: f64) -> (f64, Vec<Tensor<f64>>) {
    let (vs, ts) = (refs(&s.videos), refs(&s.texts));
    let mut tape = Tape::new();
    let bm = s.model.bind(&mut tape, false);
    let db = tape.bind(&s.discs.params, true);
    let (loss, _) = discriminator_losses(&mut tape, &bm, &s.discs, &db, &vs, &ts, w, LENS).unwrap();
    let before = tape.value(loss).item();
    let mut adj = tape.backward(loss).unwrap();
    let model_grads = bm.gradients(&mut adj);
    let grads = db.gradients(&s.discs.params, &mut adj);
    sgd(lr, &s.discs.params).step(&mut s.discs.params, &grads).unwrap();
    (before, model_grads)
}

fn g_step(s: &mut Setup, w: &AdversarialWeights, lr: f64) -> (f64, Vec<Tensor<f64>>) {
    let (vs, ts) = (refs(&s.videos), refs(&s.texts));
    let mut tape = Tape::new();
    let (before, grads, disc_grads) = {
        let bm = s.model.bind(&mut tape, true);
        let db = tape.bind(&s.discs.params, false);
        let (loss, _) = generator_losses(&mut tape, &bm, &s.discs, &db, &vs, &ts, w, LENS).unwrap();
        let before = tape.value(loss).item();
        let mut adj = tape.backward(loss).unwrap();
        (before, bm.gradients(&mut adj), db.gradients(&s.discs.params, &mut adj))
    };
    sgd(lr, &s.model.params).step(&mut s.model.params, &grads).unwrap();
    (before, disc_grads)
}

fn d_loss(s: &Setup, w: &AdversarialWeights) -> (f64, AdversarialReport) {
    let mut tape = Tape::new();
    let bm = s.model.bind(&mut tape, false);
    let db = tape.bind(&s.discs.params, false);
    let (l, r) = discriminator_losses(&mut tape, &bm, &s.discs, &db, &refs(&s.videos), &refs(&s.texts), w, LENS).unwrap();
    (tape.value(l).item(), r)
}

fn g_loss(s: &Setup, w: &AdversarialWeights) -> (f64, AdversarialReport) {
    let mut tape = Tape::new();
    let bm = s.model.bind(&mut tape, false);
    let db = tape.bind(&s.discs.params, false);
    let (l, r) = generator_losses(&mut tape, &bm, &s.discs, &db, &refs(&s.videos), &refs(&s.texts), w, LENS).unwrap();
    (tape.value(l).item(), r)
}

fn all_zero(gs: &[Tensor<f64>]) -> bool {
    gs.iter().all(|g| g.data().iter().all(|&x| x == 0.0))
}

#[test]
fn updates_touch_only_their_own_side() {
    for seed in 0..10 {
        let w = AdversarialWeights::default();
        let mut s = setup(seed);
        let model_before = s.model.params.clone();
        let discs_before = s.discs.params.clone();
        let (_, model_grads) = d_step(&mut s, &w, 0.05);
        assert!(all_zero(&model_grads));
        assert_eq!(s.model.params, model_before, "discriminator step moved the generators");
        assert_ne!(s.discs.params, discs_before);

        let discs_mid = s.discs.params.clone();
        let (_, disc_grads) = g_step(&mut s, &w, 0.05);
        assert!(all_zero(&disc_grads));
        assert_eq!(s.discs.params, discs_mid, "generator step moved the discriminators");
        assert_ne!(s.model.params, model_before);
    }
}

#[test]
fn small_steps_descend_their_own_objective() {
    for non_saturating in [false, true] {
        for seed in 0..10 {
            let w = AdversarialWeights { non_saturating, ..Default::default() };
            let mut s = setup(seed);
            let (before, _) = d_step(&mut s, &w, 1e-3);
            assert!(d_loss(&s, &w).0 < before, "seed {seed}: discriminator loss rose");
            let (before, _) = g_step(&mut s, &w, 1e-3);
            assert!(g_loss(&s, &w).0 < before, "seed {seed} ns={non_saturating}: generator loss rose");
        }
    }
}

#[test]
fn saturated_discriminators_stay_finite() {
    for scale in [1e2, 1e4, -1e4] {
        let w = AdversarialWeights::default();
        let mut s = setup(3);
        for p in s.discs.params.values_mut() {
            *p = p.map(|x| x * scale);
        }
        let (d, _) = d_loss(&s, &w);
        let (g, _) = g_loss(&s, &w);
        assert!(d.is_finite() && g.is_finite(), "scale {scale}: {d} {g}");
        let (g_ns, _) = g_loss(&s, &AdversarialWeights { non_saturating: true, ..w });
        assert!(g_ns.is_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn loss_signs(seed in any::<u64>()) {
        let s = setup(seed);
        let w = AdversarialWeights::default();
        let (d, dr) = d_loss(&s, &w);
        prop_assert!(d >= 0.0);
        prop_assert!(dr.latent >= 0.0 && dr.video >= 0.0 && dr.text >= 0.0);
        let (g, gr) = g_loss(&s, &w);
        prop_assert!(g < 0.0);
        prop_assert!(gr.latent < 0.0 && gr.video < 0.0 && gr.text < 0.0);
        let (g, _) = g_loss(&s, &AdversarialWeights { non_saturating: true, ..w });
        prop_assert!(g >= 0.0);
    }
}
