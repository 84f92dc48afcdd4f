//! Discriminators and adversarial losses for unpaired data.
//!
//! `D_z` separates text embeddings (label 1) from video embeddings
//! (label 0). `D_V` separates real videos from videos decoded out of text
//! embeddings; `D_T` does the same for text. Sequence discriminators see
//! the temporal mean of their input.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::CrossModal;
use crate::objectives::CanonicalLengths;
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DISC_HIDDEN: usize = 64;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscRole {
    Latent,
    Video,
    Text,
}

/// Two leaky-ReLU hidden layers and a sigmoid head.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub role: DiscRole,
    pub input_dim: usize,
    w: [ParamId; 3],
    b: [ParamId; 3],
}

impl Discriminator {
    fn new<T: Scalar, R: Rng>(role: DiscRole, input_dim: usize, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let dims = [input_dim, DISC_HIDDEN, DISC_HIDDEN, 1];
        let name = match role {
            DiscRole::Latent => "d_z",
            DiscRole::Video => "d_v",
            DiscRole::Text => "d_t",
        };
        let mut w = [ParamId(0); 3];
        let mut b = [ParamId(0); 3];
        for i in 0..3 {
            let std = (2.0 / dims[i] as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("valid std");
            let t = Tensor::from_fn(dims[i], dims[i + 1], |_, _| T::of(normal.sample(rng)));
            w[i] = store.add(format!("{name}.l{i}.w"), t);
            b[i] = store.add(format!("{name}.l{i}.b"), Tensor::zeros(&[1, dims[i + 1]]));
        }
        Self { role, input_dim, w, b }
    }

    /// Probability in (0, 1) that `x` is "real". Sequences are mean-pooled.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bound: &Bound, x: Var) -> Result<Var> {
        let x = match self.role {
            DiscRole::Latent => x,
            DiscRole::Video | DiscRole::Text => tape.mean_rows(x)?,
        };
        if tape.value(x).len() != self.input_dim {
            return Err(Error::shape("discriminator", format!("{:?} into width {}", tape.value(x).shape(), self.input_dim)));
        }
        let mut h = x;
        for i in 0..3 {
            h = tape.matmul(h, bound.var(self.w[i]))?;
            h = tape.add_row(h, bound.var(self.b[i]))?;
            if i < 2 {
                h = tape.leaky_relu(h, T::of(LEAKY_SLOPE))?;
            }
        }
        tape.sigmoid(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorSet<T> {
    pub params: ParamStore<T>,
    pub latent: Discriminator,
    pub video: Discriminator,
    pub text: Discriminator,
}

impl<T: Scalar> DiscriminatorSet<T> {
    pub fn new<R: Rng>(embed_dim: usize, video_dim: usize, text_dim: usize, rng: &mut R) -> Self {
        let mut params = ParamStore::new();
        let latent = Discriminator::new(DiscRole::Latent, embed_dim, &mut params, rng);
        let video = Discriminator::new(DiscRole::Video, video_dim, &mut params, rng);
        let text = Discriminator::new(DiscRole::Text, text_dim, &mut params, rng);
        Self { params, latent, video, text }
    }
}

/// Which adversarial terms are active and how they are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversarialWeights {
    pub latent: f64,
    pub video: f64,
    pub text: f64,
    /// Use `-log D(fake)` generator losses instead of `log(1 - D(fake))`.
    pub non_saturating: bool,
}

impl Default for AdversarialWeights {
    fn default() -> Self {
        Self { latent: 1.0, video: 1.0, text: 1.0, non_saturating: false }
    }
}

impl AdversarialWeights {
    pub fn off() -> Self {
        Self { latent: 0.0, video: 0.0, text: 0.0, non_saturating: false }
    }

    pub fn any(&self) -> bool {
        self.latent > 0.0 || self.video > 0.0 || self.text > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if [self.latent, self.video, self.text].iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("adversarial weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Scalar values of the three latent/video/text terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AdversarialReport {
    pub latent: f64,
    pub video: f64,
    pub text: f64,
    /// Fraction of real/fake decisions the discriminators got right.
    pub accuracy: f64,
}

/// `log(1 - p)` with the log clamp.
fn log_one_minus<T: Scalar>(tape: &mut Tape<T>, p: Var) -> Result<Var> {
    let q = tape.scale(p, -T::one())?;
    let q = tape.add_scalar(q, T::one())?;
    tape.log(q)
}

fn mean_of<T: Scalar>(tape: &mut Tape<T>, xs: &[Var]) -> Result<Var> {
    if xs.is_empty() {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let s = tape.concat_rows(xs)?;
    tape.mean(s)
}

/// Everything the adversarial losses read from the generators.
struct GeneratorOutputs {
    zv: Vec<Var>,
    zt: Vec<Var>,
    real_v: Vec<Var>,
    real_t: Vec<Var>,
    fake_v: Vec<Var>,
    fake_t: Vec<Var>,
}

fn generator_outputs<T: Scalar, M: CrossModal<T>>(
    tape: &mut Tape<T>,
    model: &M,
    videos: &[&Tensor<T>],
    texts: &[&Tensor<T>],
    lens: CanonicalLengths,
    need_fakes: (bool, bool),
) -> Result<GeneratorOutputs> {
    let mut out = GeneratorOutputs {
        zv: Vec::new(),
        zt: Vec::new(),
        real_v: Vec::new(),
        real_t: Vec::new(),
        fake_v: Vec::new(),
        fake_t: Vec::new(),
    };
    for v in videos {
        let x = tape.constant((*v).clone());
        let z = model.encode_video(tape, x)?;
        if need_fakes.1 {
            out.fake_t.push(model.decode_text(tape, z, lens.text)?);
        }
        out.real_v.push(x);
        out.zv.push(z);
    }
    for t in texts {
        let x = tape.constant((*t).clone());
        let z = model.encode_text(tape, x)?;
        if need_fakes.0 {
            out.fake_v.push(model.decode_video(tape, z, lens.video)?);
        }
        out.real_t.push(x);
        out.zt.push(z);
    }
    Ok(out)
}

fn probs<T: Scalar>(tape: &mut Tape<T>, d: &Discriminator, b: &Bound, xs: &[Var]) -> Result<Vec<Var>> {
    xs.iter().map(|&x| d.forward(tape, b, x)).collect()
}

fn neg_log_mean<T: Scalar>(tape: &mut Tape<T>, ps: &[Var]) -> Result<Var> {
    let logs: Vec<Var> = ps.iter().map(|&p| tape.log(p)).collect::<Result<_>>()?;
    let m = mean_of(tape, &logs)?;
    tape.scale(m, -T::one())
}

fn neg_log1m_mean<T: Scalar>(tape: &mut Tape<T>, ps: &[Var]) -> Result<Var> {
    let logs: Vec<Var> = ps.iter().map(|&p| log_one_minus(tape, p)).collect::<Result<_>>()?;
    let m = mean_of(tape, &logs)?;
    tape.scale(m, -T::one())
}

fn weighted_total<T: Scalar>(tape: &mut Tape<T>, parts: &[(f64, Var)]) -> Result<Var> {
    let scaled: Vec<Var> = parts.iter().map(|&(w, v)| tape.scale(v, T::of(w))).collect::<Result<_>>()?;
    if scaled.is_empty() {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let s = tape.concat_rows(&scaled)?;
    tape.sum(s)
}

fn count_correct<T: Scalar>(tape: &Tape<T>, real: &[Var], fake: &[Var]) -> (usize, usize) {
    let half = T::of(0.5);
    let r = real.iter().filter(|&&p| tape.value(p).item() > half).count();
    let f = fake.iter().filter(|&&p| tape.value(p).item() <= half).count();
    (r + f, real.len() + fake.len())
}

/// Discriminator losses. Bind `model` frozen so no gradient reaches the
/// generators; `discs` should be bound trainable.
///
/// `L_Dz = -log D_z(E_T(t)) - log(1 - D_z(E_V(v)))`,
/// `L_DV = -log D_V(v) - log(1 - D_V(G_V(E_T(t))))`,
/// `L_DT = -log D_T(t) - log(1 - D_T(G_T(E_V(v))))`,
/// each expectation a mean over the supplied (possibly unpaired) lists.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_losses<T: Scalar, M: CrossModal<T>>(
    tape: &mut Tape<T>,
    model: &M,
    discs: &DiscriminatorSet<T>,
    bound: &Bound,
    videos: &[&Tensor<T>],
    texts: &[&Tensor<T>],
    weights: &AdversarialWeights,
    lens: CanonicalLengths,
) -> Result<(Var, AdversarialReport)> {
    let g = generator_outputs(tape, model, videos, texts, lens, (weights.video > 0.0, weights.text > 0.0))?;
    let mut parts = Vec::new();
    let mut report = AdversarialReport::default();
    let (mut right, mut total) = (0, 0);
    if weights.latent > 0.0 {
        let real = probs(tape, &discs.latent, bound, &g.zt)?;
        let fake = probs(tape, &discs.latent, bound, &g.zv)?;
        let a = neg_log_mean(tape, &real)?;
        let b = neg_log1m_mean(tape, &fake)?;
        let l = tape.add(a, b)?;
        report.latent = tape.value(l).item().as_f64();
        parts.push((weights.latent, l));
        let (r, n) = count_correct(tape, &real, &fake);
        right += r;
        total += n;
    }
    if weights.video > 0.0 {
        let real = probs(tape, &discs.video, bound, &g.real_v)?;
        let fake = probs(tape, &discs.video, bound, &g.fake_v)?;
        let a = neg_log_mean(tape, &real)?;
        let b = neg_log1m_mean(tape, &fake)?;
        let l = tape.add(a, b)?;
        report.video = tape.value(l).item().as_f64();
        parts.push((weights.video, l));
        let (r, n) = count_correct(tape, &real, &fake);
        right += r;
        total += n;
    }
    if weights.text > 0.0 {
        let real = probs(tape, &discs.text, bound, &g.real_t)?;
        let fake = probs(tape, &discs.text, bound, &g.fake_t)?;
        let a = neg_log_mean(tape, &real)?;
        let b = neg_log1m_mean(tape, &fake)?;
        let l = tape.add(a, b)?;
        report.text = tape.value(l).item().as_f64();
        parts.push((weights.text, l));
        let (r, n) = count_correct(tape, &real, &fake);
        right += r;
        total += n;
    }
    report.accuracy = if total == 0 { 0.0 } else { right as f64 / total as f64 };
    let loss = weighted_total(tape, &parts)?;
    Ok((loss, report))
}

/// Generator losses. Bind `model` trainable and `bound` (the
/// discriminators) frozen.
///
/// `L_Gz = log D_z(E_T(t)) + log(1 - D_z(E_V(v)))`,
/// `L_GV = log(1 - D_V(G_V(E_T(t))))`, `L_GT = log(1 - D_T(G_T(E_V(v))))`.
#[allow(clippy::too_many_arguments)]
pub fn generator_losses<T: Scalar, M: CrossModal<T>>(
    tape: &mut Tape<T>,
    model: &M,
    discs: &DiscriminatorSet<T>,
    bound: &Bound,
    videos: &[&Tensor<T>],
    texts: &[&Tensor<T>],
    weights: &AdversarialWeights,
    lens: CanonicalLengths,
) -> Result<(Var, AdversarialReport)> {
    let g = generator_outputs(tape, model, videos, texts, lens, (weights.video > 0.0, weights.text > 0.0))?;
    let mut parts = Vec::new();
    let mut report = AdversarialReport::default();
    let ns = weights.non_saturating;
    if weights.latent > 0.0 {
        let pt = probs(tape, &discs.latent, bound, &g.zt)?;
        let pv = probs(tape, &discs.latent, bound, &g.zv)?;
        let l = if ns {
            // text embeddings should look like video and vice versa
            let a = neg_log1m_mean(tape, &pt)?;
            let b = neg_log_mean(tape, &pv)?;
            tape.add(a, b)?
        } else {
            let a = neg_log_mean(tape, &pt)?;
            let b = neg_log1m_mean(tape, &pv)?;
            let s = tape.add(a, b)?;
            tape.scale(s, -T::one())?
        };
        report.latent = tape.value(l).item().as_f64();
        parts.push((weights.latent, l));
    }
    for (w, d, fakes, slot) in [
        (weights.video, &discs.video, &g.fake_v, &mut report.video),
        (weights.text, &discs.text, &g.fake_t, &mut report.text),
    ] {
        if w > 0.0 {
            let p = probs(tape, d, bound, fakes)?;
            let l = if ns {
                neg_log_mean(tape, &p)?
            } else {
                let m = neg_log1m_mean(tape, &p)?;
                tape.scale(m, -T::one())?
            };
            *slot = tape.value(l).item().as_f64();
            parts.push((w, l));
        }
    }
    let loss = weighted_total(tape, &parts)?;
    Ok((loss, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Identity;

    impl CrossModal<f64> for Identity {
        fn encode_video(&self, _: &mut Tape<f64>, s: Var) -> Result<Var> {
            Ok(s)
        }
        fn encode_text(&self, _: &mut Tape<f64>, s: Var) -> Result<Var> {
            Ok(s)
        }
        fn decode_video(&self, _: &mut Tape<f64>, z: Var, _: usize) -> Result<Var> {
            Ok(z)
        }
        fn decode_text(&self, _: &mut Tape<f64>, z: Var, _: usize) -> Result<Var> {
            Ok(z)
        }
    }

    /// Discriminators whose last layer is zeroed output exactly 0.5.
    fn neutral(dim: usize) -> DiscriminatorSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = DiscriminatorSet::new(dim, dim, dim, &mut rng);
        for disc in [&d.latent.clone(), &d.video.clone(), &d.text.clone()] {
            for id in [disc.w[2], disc.b[2]] {
                d.params.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
            }
        }
        d
    }

    #[test]
    fn neutral_discriminators() {
        let d = neutral(2);
        let v = Tensor::row(vec![0.3, -0.2]);
        let t = Tensor::row(vec![-0.5, 0.1]);
        let w = AdversarialWeights::default();
        let lens = CanonicalLengths::default();
        let mut tape = Tape::new();
        let b = tape.bind(&d.params, false);
        let (_, r) = discriminator_losses(&mut tape, &Identity, &d, &b, &[&v], &[&t], &w, lens).unwrap();
        let ln4 = 2.0 * 2f64.ln();
        for x in [r.latent, r.video, r.text] {
            assert!((x - ln4).abs() < 1e-12);
        }
        let (_, g) = generator_losses(&mut tape, &Identity, &d, &b, &[&v], &[&t], &w, lens).unwrap();
        assert!((g.latent - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((g.video - 0.5f64.ln()).abs() < 1e-12);
        assert!((g.text - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_discriminator_loss_is_bounded_by_clamp() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::scalar(1.0));
        let l = log_one_minus(&mut tape, p).unwrap();
        assert!((tape.value(l).item() - crate::autodiff::LOG_CLAMP.ln()).abs() < 1e-9);
        let q = tape.constant(Tensor::scalar(1e-12));
        let l = log_one_minus(&mut tape, q).unwrap();
        assert!(tape.value(l).item().abs() < 1e-11);
    }

    #[test]
    fn generator_video_loss_decreases_as_fakes_fool() {
        let mut prev = f64::INFINITY;
        for p in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let mut tape = Tape::<f64>::new();
            let pv = tape.constant(Tensor::scalar(p));
            let l = log_one_minus(&mut tape, pv).unwrap();
            let x = tape.value(l).item();
            assert!(x < prev && x < 0.0);
            prev = x;
        }
    }
}
