//! Paired training objectives: reconstruction, joint, cross-domain,
//! cycle, triplet, and their weighted sum.
//!
//! Sequence distances are Euclidean norms over the flattened
//! `len x dim` difference divided by the sequence length; every loss is
//! averaged over the batch.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::CrossModal;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// Coefficient of the reconstruction term; 0 drops it.
    pub recons: f64,
    pub alpha_joint: f64,
    pub alpha_cross: f64,
    pub alpha_cycle: f64,
    pub triplet_margin: f64,
    /// Swap the joint term for the triplet term (weighted by `alpha_joint`).
    pub use_triplet_instead_of_joint: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recons: 1.0,
            alpha_joint: 1.0,
            alpha_cross: 1.0,
            alpha_cycle: 1.0,
            triplet_margin: 0.2,
            use_triplet_instead_of_joint: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.recons, self.alpha_joint, self.alpha_cross, self.alpha_cycle, self.triplet_margin];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Lengths of the intermediate sequences inside the cycle loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CanonicalLengths {
    pub video: usize,
    pub text: usize,
}

impl Default for CanonicalLengths {
    fn default() -> Self {
        Self { video: 16, text: 10 }
    }
}

/// Component values of one evaluation of the paired objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub recons: f64,
    pub joint: f64,
    pub triplet: f64,
    pub cross: f64,
    pub cycle: f64,
}

/// A batch of paired sequences with their class ids.
#[derive(Debug, Clone)]
pub struct PairedBatch<'a, T> {
    pub videos: Vec<&'a Tensor<T>>,
    pub texts: Vec<&'a Tensor<T>>,
    pub classes: Vec<i32>,
}

impl<'a, T: Scalar> PairedBatch<'a, T> {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    /// Index of the first text after `i` (cyclically) from another class.
    pub fn negative_for(&self, i: usize) -> Option<usize> {
        let n = self.len();
        (1..n).map(|k| (i + k) % n).find(|&j| self.classes[j] != self.classes[i])
    }
}

/// `||a - b|| / len` for `len x dim` sequences.
pub fn sequence_distance<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let len = tape.value(b).rows();
    let d = tape.sub(a, b)?;
    let n = tape.norm(d)?;
    tape.scale(n, T::one() / T::from_usize(len).unwrap())
}

fn squared_distance<T: Scalar>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let s = tape.square(d)?;
    tape.sum(s)
}

fn batch_mean<T: Scalar>(tape: &mut Tape<T>, terms: &[Var]) -> Result<Var> {
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let stacked = tape.concat_rows(terms)?;
    tape.mean(stacked)
}

fn check_batch<T: Scalar>(batch: &PairedBatch<'_, T>) -> Result<()> {
    if batch.is_empty() || batch.videos.len() != batch.texts.len() || batch.classes.len() != batch.videos.len() {
        return Err(Error::shape("paired batch", "videos, texts and classes must be non-empty and aligned"));
    }
    Ok(())
}

/// Encoded sample shared across loss terms.
struct Encoded {
    v: Var,
    t: Var,
    zv: Var,
    zt: Var,
    v_len: usize,
    t_len: usize,
}

fn encode_pair<T: Scalar, M: CrossModal<T>>(
    tape: &mut Tape<T>,
    model: &M,
    v: &Tensor<T>,
    t: &Tensor<T>,
) -> Result<Encoded> {
    let vv = tape.constant(v.clone());
    let tv = tape.constant(t.clone());
    let zv = model.encode_video(tape, vv)?;
    let zt = model.encode_text(tape, tv)?;
    Ok(Encoded { v: vv, t: tv, zv, zt, v_len: v.rows(), t_len: t.rows() })
}

fn recons_term<T: Scalar, M: CrossModal<T>>(tape: &mut Tape<T>, m: &M, e: &Encoded) -> Result<Var> {
    let v_hat = m.decode_video(tape, e.zv, e.v_len)?;
    let t_hat = m.decode_text(tape, e.zt, e.t_len)?;
    let a = sequence_distance(tape, v_hat, e.v)?;
    let b = sequence_distance(tape, t_hat, e.t)?;
    tape.add(a, b)
}

fn joint_term<T: Scalar>(tape: &mut Tape<T>, e: &Encoded) -> Result<Var> {
    let d = tape.sub(e.zv, e.zt)?;
    tape.norm(d)
}

fn cross_term<T: Scalar, M: CrossModal<T>>(tape: &mut Tape<T>, m: &M, e: &Encoded) -> Result<Var> {
    let t_hat = m.decode_text(tape, e.zv, e.t_len)?;
    let v_hat = m.decode_video(tape, e.zt, e.v_len)?;
    let a = sequence_distance(tape, t_hat, e.t)?;
    let b = sequence_distance(tape, v_hat, e.v)?;
    tape.add(a, b)
}

/// Text round trip through video space plus video round trip through text.
fn cycle_halves<T: Scalar, M: CrossModal<T>>(
    tape: &mut Tape<T>,
    m: &M,
    v: Option<(Var, Var, usize)>,
    t: Option<(Var, Var, usize)>,
    lens: CanonicalLengths,
) -> Result<Vec<Var>> {
    let mut parts = Vec::with_capacity(2);
    if let Some((tv, zt, t_len)) = t {
        let v_mid = m.decode_video(tape, zt, lens.video)?;
        let z_mid = m.encode_video(tape, v_mid)?;
        let t_back = m.decode_text(tape, z_mid, t_len)?;
        parts.push(sequence_distance(tape, t_back, tv)?);
    }
    if let Some((vv, zv, v_len)) = v {
        let t_mid = m.decode_text(tape, zv, lens.text)?;
        let z_mid = m.encode_text(tape, t_mid)?;
        let v_back = m.decode_video(tape, z_mid, v_len)?;
        parts.push(sequence_distance(tape, v_back, vv)?);
    }
    Ok(parts)
}

fn cycle_term<T: Scalar, M: CrossModal<T>>(
    tape: &mut Tape<T>,
    m: &M,
    e: &Encoded,
    lens: CanonicalLengths,
) -> Result<Var> {
    let parts = cycle_halves(tape, m, Some((e.v, e.zv, e.v_len)), Some((e.t, e.zt, e.t_len)), lens)?;
    tape.add(parts[0], parts[1])
}

fn triplet_term<T: Scalar>(tape: &mut Tape<T>, zv: Var, zt_pos: Var, zt_neg: Var, margin: f64) -> Result<Var> {
    let pos = squared_distance(tape, zv, zt_pos)?;
    let neg = squared_distance(tape, zv, zt_neg)?;
    let d = tape.sub(pos, neg)?;
    let d = tape.add_scalar(d, T::of(margin))?;
    tape.relu(d)
}

fn per_sample<T: Scalar, M: CrossModal<T>>(
    tape: &mut Tape<T>,
    model: &M,
    batch: &PairedBatch<'_, T>,
    f: impl Fn(&mut Tape<T>, &M, &Encoded) -> Result<Var>,
) -> Result<Var> {
    check_batch(batch)?;
    let mut terms = Vec::with_capacity(batch.len());
    for (v, t) in batch.videos.iter().zip(&batch.texts) {
        let e = encode_pair(tape, model, v, t)?;
        terms.push(f(tape, model, &e)?);
    }
    batch_mean(tape, &terms)
}

pub fn recons_loss<T: Scalar, M: CrossModal<T>>(tape: &mut Tape<T>, model: &M, batch: &PairedBatch<'_, T>) -> Result<Var> {
    per_sample(tape, model, batch, recons_term)
}

pub fn joint_loss<T: Scalar, M: CrossModal<T>>(tape: &mut Tape<T>, model: &M, batch: &PairedBatch<'_, T>) -> Result<Var> {
    per_sample(tape, model, batch, |tape, _, e| joint_term(tape, e))
}

pub fn cross_loss<T: Scalar, M: CrossModal<T>>(tape: &mut Tape<T>, model: &M, batch: &PairedBatch<'_, T>) -> Result<Var> {
    per_sample(tape, model, batch, cross_term)
}

/// Cycle loss over independent video and text lists; no pairing is used.
pub fn cycle_loss<T: Scalar, M: CrossModal<T>>(
    tape: &mut Tape<T>,
    model: &M,
    videos: &[&Tensor<T>],
    texts: &[&Tensor<T>],
    lens: CanonicalLengths,
) -> Result<Var> {
    let mut text_terms = Vec::with_capacity(texts.len());
    for t in texts {
        let tv = tape.constant((*t).clone());
        let zt = model.encode_text(tape, tv)?;
        text_terms.extend(cycle_halves(tape, model, None, Some((tv, zt, t.rows())), lens)?);
    }
    let mut video_terms = Vec::with_capacity(videos.len());
    for v in videos {
        let vv = tape.constant((*v).clone());
        let zv = model.encode_video(tape, vv)?;
        video_terms.extend(cycle_halves(tape, model, Some((vv, zv, v.rows())), None, lens)?);
    }
    let a = batch_mean(tape, &text_terms)?;
    let b = batch_mean(tape, &video_terms)?;
    tape.add(a, b)
}

/// Weighted cycle term over unpaired lists: video-list mean plus
/// text-list mean. Needs no pairing and no class labels.
pub fn unpaired_objective<T: Scalar, M: CrossModal<T>>(
    tape: &mut Tape<T>,
    model: &M,
    videos: &[&Tensor<T>],
    texts: &[&Tensor<T>],
    w: &LossWeights,
    lens: CanonicalLengths,
) -> Result<(Var, LossReport)> {
    let mut report = LossReport::default();
    if w.alpha_cycle <= 0.0 || (videos.is_empty() && texts.is_empty()) {
        return Ok((tape.constant(Tensor::scalar(T::zero())), report));
    }
    let (mut cv, mut ct) = (Vec::new(), Vec::new());
    for v in videos {
        let x = tape.constant((*v).clone());
        let z = model.encode_video(tape, x)?;
        cv.extend(cycle_halves(tape, model, Some((x, z, v.rows())), None, lens)?);
    }
    for t in texts {
        let x = tape.constant((*t).clone());
        let z = model.encode_text(tape, x)?;
        ct.extend(cycle_halves(tape, model, None, Some((x, z, t.rows())), lens)?);
    }
    let mv = batch_mean(tape, &cv)?;
    let mt = batch_mean(tape, &ct)?;
    let s = tape.add(mv, mt)?;
    report.cycle = tape.value(s).item().as_f64();
    let total = tape.scale(s, T::of(w.alpha_cycle))?;
    report.total = tape.value(total).item().as_f64();
    Ok((total, report))
}

/// `mean max(0, |zv - zt+|^2 - |zv - zt-|^2 + margin)`; negatives are
/// texts of a different class from the same batch. Samples with no
/// such text contribute zero.
pub fn triplet_loss<T: Scalar, M: CrossModal<T>>(
    tape: &mut Tape<T>,
    model: &M,
    batch: &PairedBatch<'_, T>,
    margin: f64,
) -> Result<Var> {
    check_batch(batch)?;
    let enc: Vec<Encoded> = batch
        .videos
        .iter()
        .zip(&batch.texts)
        .map(|(v, t)| encode_pair(tape, model, v, t))
        .collect::<Result<_>>()?;
    triplet_from_encoded(tape, batch, &enc, margin)
}

fn triplet_from_encoded<T: Scalar>(
    tape: &mut Tape<T>,
    batch: &PairedBatch<'_, T>,
    enc: &[Encoded],
    margin: f64,
) -> Result<Var> {
    let mut terms = Vec::with_capacity(enc.len());
    for (i, e) in enc.iter().enumerate() {
        match batch.negative_for(i) {
            Some(j) => terms.push(triplet_term(tape, e.zv, e.zt, enc[j].zt, margin)?),
            None => terms.push(tape.constant(Tensor::scalar(T::zero()))),
        }
    }
    batch_mean(tape, &terms)
}

/// Weighted paired objective. Terms with zero weight are skipped and
/// reported as zero.
pub fn paired_objective<T: Scalar, M: CrossModal<T>>(
    tape: &mut Tape<T>,
    model: &M,
    batch: &PairedBatch<'_, T>,
    w: &LossWeights,
    lens: CanonicalLengths,
) -> Result<(Var, LossReport)> {
    check_batch(batch)?;
    let enc: Vec<Encoded> = batch
        .videos
        .iter()
        .zip(&batch.texts)
        .map(|(v, t)| encode_pair(tape, model, v, t))
        .collect::<Result<_>>()?;
    let mut weighted: Vec<Var> = Vec::new();
    let mut report = LossReport::default();
    let mut add = |tape: &mut Tape<T>, weight: f64, comp: Var, slot: &mut f64| -> Result<()> {
        *slot = tape.value(comp).item().as_f64();
        weighted.push(tape.scale(comp, T::of(weight))?);
        Ok(())
    };
    let each = |tape: &mut Tape<T>, f: &dyn Fn(&mut Tape<T>, &Encoded) -> Result<Var>| -> Result<Var> {
        let terms: Vec<Var> = enc.iter().map(|e| f(tape, e)).collect::<Result<_>>()?;
        batch_mean(tape, &terms)
    };
    if w.recons > 0.0 {
        let c = each(tape, &|tape, e| recons_term(tape, model, e))?;
        add(tape, w.recons, c, &mut report.recons)?;
    }
    if w.alpha_joint > 0.0 {
        if w.use_triplet_instead_of_joint {
            let c = triplet_from_encoded(tape, batch, &enc, w.triplet_margin)?;
            add(tape, w.alpha_joint, c, &mut report.triplet)?;
        } else {
            let c = each(tape, &|tape, e| joint_term(tape, e))?;
            add(tape, w.alpha_joint, c, &mut report.joint)?;
        }
    }
    if w.alpha_cross > 0.0 {
        let c = each(tape, &|tape, e| cross_term(tape, model, e))?;
        add(tape, w.alpha_cross, c, &mut report.cross)?;
    }
    if w.alpha_cycle > 0.0 {
        let c = each(tape, &|tape, e| cycle_term(tape, model, e, lens))?;
        add(tape, w.alpha_cycle, c, &mut report.cycle)?;
    }
    let total = if weighted.is_empty() {
        tape.constant(Tensor::scalar(T::zero()))
    } else {
        let stacked = tape.concat_rows(&weighted)?;
        tape.sum(stacked)?
    };
    report.total = tape.value(total).item().as_f64();
    Ok((total, report))
}
