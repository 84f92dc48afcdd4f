//! Video and text encoder/decoder networks.
//!
//! Encoder: per-timestep projection with ReLU, temporal pooling to a
//! fixed `N x h` block, four fully connected layers, L2 normalization.
//! Decoder: the same stack in reverse. With `tie_fc_weights` the decoder
//! reuses the transposed encoder weight matrices and keeps its own
//! biases. Attention filters are never shared between the two sides.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{filter_bank_on_tape, pool_on_tape, FilterParams, PoolKind};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Added to the norm before normalizing an embedding.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Attention,
    Max,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Width of the per-timestep projection.
    pub hidden_dim: usize,
    pub n_filters: usize,
    pub embed_dim: usize,
    /// Widths of the first three FC layers. Unset: geometric interpolation
    /// between the pooled size and `embed_dim`.
    pub fc_hidden: Option<[usize; 3]>,
    pub pooling: Pooling,
    pub tie_fc_weights: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            n_filters: 4,
            embed_dim: 32,
            fc_hidden: None,
            pooling: Pooling::Attention,
            tie_fc_weights: true,
        }
    }
}

impl ModelConfig {
    pub fn pooled_rows(&self) -> usize {
        match self.pooling {
            Pooling::Attention => self.n_filters,
            Pooling::Max | Pooling::Sum => 1,
        }
    }

    /// The five layer boundaries `[pooled, h1, h2, h3, embed]`.
    pub fn fc_dims(&self) -> [usize; 5] {
        let first = self.pooled_rows() * self.hidden_dim;
        let last = self.embed_dim;
        let mid = self.fc_hidden.unwrap_or_else(|| {
            let ratio = last as f64 / first as f64;
            let at = |k: i32| ((first as f64) * ratio.powf(k as f64 / 4.0)).round().max(1.0) as usize;
            [at(1), at(2), at(3)]
        });
        [first, mid[0], mid[1], mid[2], last]
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.n_filters == 0 || self.embed_dim == 0 {
            return Err(Error::Config("hidden_dim, n_filters and embed_dim must be positive".into()));
        }
        if let Some(h) = self.fc_hidden {
            if h.contains(&0) {
                return Err(Error::Config("fc_hidden widths must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Per-timestep feature widths of the two modalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub video_dim: usize,
    pub text_dim: usize,
}

/// Configuration of one modality's encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub n_filters: usize,
    pub fc_dims: [usize; 4],
    pub pooling: Pooling,
}

/// Parameter handles for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderDecoderPair {
    pub config: EncoderConfig,
    hidden_dim: usize,
    tie_fc_weights: bool,
    proj_w: ParamId,
    proj_b: ParamId,
    enc_centers: ParamId,
    enc_widths: ParamId,
    fc_w: [ParamId; 4],
    fc_b: [ParamId; 4],
    dec_fc_w: Option<[ParamId; 4]>,
    dec_fc_b: [ParamId; 4],
    dec_centers: ParamId,
    dec_widths: ParamId,
    back_w: ParamId,
    back_b: ParamId,
}

fn init_weight<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, gain: f64) -> Tensor<T> {
    let normal = Normal::new(0.0, (gain / rows as f64).sqrt()).expect("valid std");
    Tensor::from_fn(rows, cols, |_, _| T::of(normal.sample(rng)))
}

impl EncoderDecoderPair {
    fn new<T: Scalar, R: Rng>(
        prefix: &str,
        input_dim: usize,
        cfg: &ModelConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Self {
        let h = cfg.hidden_dim;
        let dims = cfg.fc_dims();
        let filters = FilterParams::<T>::tiled(cfg.n_filters);
        let proj_w = store.add(format!("{prefix}.proj.w"), init_weight(rng, input_dim, h, 2.0));
        let proj_b = store.add(format!("{prefix}.proj.b"), Tensor::zeros(&[1, h]));
        let enc_centers = store.add(format!("{prefix}.enc.centers"), Tensor::row(filters.centers_raw.clone()));
        let enc_widths = store.add(format!("{prefix}.enc.widths"), Tensor::row(filters.widths_raw.clone()));
        let mut fc_w = [ParamId(0); 4];
        let mut fc_b = [ParamId(0); 4];
        for i in 0..4 {
            let gain = if i < 3 { 2.0 } else { 1.0 };
            fc_w[i] = store.add(format!("{prefix}.fc{i}.w"), init_weight(rng, dims[i], dims[i + 1], gain));
            fc_b[i] = store.add(format!("{prefix}.fc{i}.b"), Tensor::zeros(&[1, dims[i + 1]]));
        }
        // decoder layer k inverts encoder layer 3 - k
        let dec_fc_w = if cfg.tie_fc_weights {
            None
        } else {
            let mut w = [ParamId(0); 4];
            for (k, slot) in w.iter_mut().enumerate() {
                let i = 3 - k;
                let gain = if k < 3 { 2.0 } else { 1.0 };
                *slot = store.add(format!("{prefix}.dec{k}.w"), init_weight(rng, dims[i + 1], dims[i], gain));
            }
            Some(w)
        };
        let mut dec_fc_b = [ParamId(0); 4];
        for (k, slot) in dec_fc_b.iter_mut().enumerate() {
            *slot = store.add(format!("{prefix}.dec{k}.b"), Tensor::zeros(&[1, dims[3 - k]]));
        }
        let dec_centers = store.add(format!("{prefix}.dec.centers"), Tensor::row(filters.centers_raw.clone()));
        let dec_widths = store.add(format!("{prefix}.dec.widths"), Tensor::row(filters.widths_raw));
        let back_w = store.add(format!("{prefix}.back.w"), init_weight(rng, h, input_dim, 1.0));
        let back_b = store.add(format!("{prefix}.back.b"), Tensor::zeros(&[1, input_dim]));
        Self {
            config: EncoderConfig {
                input_dim,
                n_filters: cfg.n_filters,
                fc_dims: [dims[1], dims[2], dims[3], dims[4]],
                pooling: cfg.pooling,
            },
            hidden_dim: h,
            tie_fc_weights: cfg.tie_fc_weights,
            proj_w,
            proj_b,
            enc_centers,
            enc_widths,
            fc_w,
            fc_b,
            dec_fc_w,
            dec_fc_b,
            dec_centers,
            dec_widths,
            back_w,
            back_b,
        }
    }

    /// Parameters owned by the decoder FC stack.
    pub fn decoder_fc_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.dec_fc_b.to_vec();
        if let Some(w) = self.dec_fc_w {
            ids.extend(w);
        }
        ids
    }

    pub fn encoder_filter_params(&self) -> (ParamId, ParamId) {
        (self.enc_centers, self.enc_widths)
    }

    /// Sequence (`T x input_dim`) to unit-norm embedding (`1 x embed_dim`).
    pub fn encode<T: Scalar>(&self, tape: &mut Tape<T>, b: &Bound, seq: Var) -> Result<Var> {
        let shape = tape.value(seq).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.config.input_dim || shape[0] == 0 {
            return Err(Error::shape(
                "encode",
                format!("expected T x {}, got {shape:?}", self.config.input_dim),
            ));
        }
        let len = shape[0];
        let x = tape.matmul(seq, b.var(self.proj_w))?;
        let x = tape.add_row(x, b.var(self.proj_b))?;
        let hidden = tape.relu(x)?;
        let pooled = match self.config.pooling {
            Pooling::Attention => {
                let bank = filter_bank_on_tape(tape, b.var(self.enc_centers), b.var(self.enc_widths), len)?;
                tape.matmul(bank, hidden)?
            }
            Pooling::Max => pool_on_tape(tape, PoolKind::Max, hidden)?,
            Pooling::Sum => pool_on_tape(tape, PoolKind::Sum, hidden)?,
        };
        let width = tape.value(pooled).len();
        let mut y = tape.reshape(pooled, &[1, width])?;
        for i in 0..4 {
            y = tape.matmul(y, b.var(self.fc_w[i]))?;
            y = tape.add_row(y, b.var(self.fc_b[i]))?;
            if i < 3 {
                y = tape.relu(y)?;
            }
        }
        let n = tape.norm(y)?;
        let n = tape.add_scalar(n, T::of(NORM_EPS))?;
        tape.div_scalar(y, n)
    }

    /// Embedding (`1 x embed_dim`) to a `out_len x input_dim` sequence.
    pub fn decode<T: Scalar>(&self, tape: &mut Tape<T>, b: &Bound, z: Var, out_len: usize) -> Result<Var> {
        if out_len == 0 {
            return Err(Error::shape("decode", "output length must be at least 1"));
        }
        let mut y = z;
        for k in 0..4 {
            y = match self.dec_fc_w {
                Some(ws) => tape.matmul(y, b.var(ws[k]))?,
                None => tape.matmul_nt(y, b.var(self.fc_w[3 - k]))?,
            };
            y = tape.add_row(y, b.var(self.dec_fc_b[k]))?;
            if k < 3 {
                y = tape.relu(y)?;
            }
        }
        let h = self.hidden_dim;
        let hidden = match self.config.pooling {
            Pooling::Attention => {
                let pooled = tape.reshape(y, &[self.config.n_filters, h])?;
                let bank = filter_bank_on_tape(tape, b.var(self.dec_centers), b.var(self.dec_widths), out_len)?;
                tape.matmul_tn(bank, pooled)?
            }
            Pooling::Max | Pooling::Sum => {
                let ones = tape.constant(Tensor::filled(&[out_len, 1], T::one()));
                tape.matmul(ones, y)?
            }
        };
        let x = tape.matmul(hidden, b.var(self.back_w))?;
        tape.add_row(x, b.var(self.back_b))
    }

    pub fn ties_fc_weights(&self) -> bool {
        self.tie_fc_weights
    }
}

/// Unit-norm vector in the shared space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T>(pub Vec<T>);

impl<T: Scalar> Embedding<T> {
    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn norm(&self) -> T {
        self.0.iter().map(|&x| x * x).sum::<T>().sqrt()
    }
}

/// The four networks: video/text encoders and decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalModel<T> {
    pub config: ModelConfig,
    pub dims: ModelDims,
    pub params: ParamStore<T>,
    pub video: EncoderDecoderPair,
    pub text: EncoderDecoderPair,
}

impl<T: Scalar> MultimodalModel<T> {
    pub fn new<R: Rng>(config: ModelConfig, dims: ModelDims, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if dims.video_dim == 0 || dims.text_dim == 0 {
            return Err(Error::Config("feature widths must be positive".into()));
        }
        let mut params = ParamStore::new();
        let video = EncoderDecoderPair::new("video", dims.video_dim, &config, &mut params, rng);
        let text = EncoderDecoderPair::new("text", dims.text_dim, &config, &mut params, rng);
        Ok(Self { config, dims, params, video, text })
    }

    /// Binds parameters onto `tape`; frozen binds receive no gradients.
    pub fn bind<'a>(&'a self, tape: &mut Tape<T>, trainable: bool) -> BoundModel<'a, T> {
        BoundModel { model: self, bound: tape.bind(&self.params, trainable) }
    }

    pub fn embed_videos(&self, seqs: &[Tensor<T>]) -> Result<Vec<Embedding<T>>> {
        self.embed_with(seqs, |m, tape, v| m.encode_video(tape, v))
    }

    pub fn embed_texts(&self, seqs: &[Tensor<T>]) -> Result<Vec<Embedding<T>>> {
        self.embed_with(seqs, |m, tape, v| m.encode_text(tape, v))
    }

    fn embed_with(
        &self,
        seqs: &[Tensor<T>],
        f: impl Fn(&BoundModel<'_, T>, &mut Tape<T>, Var) -> Result<Var>,
    ) -> Result<Vec<Embedding<T>>> {
        let mut tape = Tape::new();
        let bm = self.bind(&mut tape, false);
        seqs.iter()
            .map(|s| {
                let x = tape.constant(s.clone());
                let z = f(&bm, &mut tape, x)?;
                Ok(Embedding(tape.value(z).data().to_vec()))
            })
            .collect()
    }

    pub fn encode_video(&self, seq: &Tensor<T>) -> Result<Embedding<T>> {
        Ok(self.embed_videos(std::slice::from_ref(seq))?.remove(0))
    }

    pub fn encode_text(&self, seq: &Tensor<T>) -> Result<Embedding<T>> {
        Ok(self.embed_texts(std::slice::from_ref(seq))?.remove(0))
    }

    pub fn decode_video(&self, z: &Embedding<T>, out_len: usize) -> Result<Tensor<T>> {
        self.decode_with(z, out_len, |m, tape, z, n| m.decode_video(tape, z, n))
    }

    pub fn decode_text(&self, z: &Embedding<T>, out_len: usize) -> Result<Tensor<T>> {
        self.decode_with(z, out_len, |m, tape, z, n| m.decode_text(tape, z, n))
    }

    fn decode_with(
        &self,
        z: &Embedding<T>,
        out_len: usize,
        f: impl Fn(&BoundModel<'_, T>, &mut Tape<T>, Var, usize) -> Result<Var>,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bm = self.bind(&mut tape, false);
        let zv = tape.constant(Tensor::row(z.0.clone()));
        let out = f(&bm, &mut tape, zv, out_len)?;
        Ok(tape.value(out).clone())
    }
}

/// Operations the training objectives need from a cross-modal model.
///
/// Sequences are `len x dim` tape values; embeddings are `1 x embed_dim`.
pub trait CrossModal<T: Scalar> {
    fn encode_video(&self, tape: &mut Tape<T>, seq: Var) -> Result<Var>;
    fn encode_text(&self, tape: &mut Tape<T>, seq: Var) -> Result<Var>;
    fn decode_video(&self, tape: &mut Tape<T>, z: Var, out_len: usize) -> Result<Var>;
    fn decode_text(&self, tape: &mut Tape<T>, z: Var, out_len: usize) -> Result<Var>;
}

/// A model whose parameters live on a particular tape.
pub struct BoundModel<'a, T> {
    pub model: &'a MultimodalModel<T>,
    pub bound: Bound,
}

impl<T: Scalar> BoundModel<'_, T> {
    pub fn gradients(&self, adj: &mut crate::autodiff::Adjoints<T>) -> Vec<Tensor<T>> {
        self.bound.gradients(&self.model.params, adj)
    }
}

impl<T: Scalar> CrossModal<T> for BoundModel<'_, T> {
    fn encode_video(&self, tape: &mut Tape<T>, seq: Var) -> Result<Var> {
        self.model.video.encode(tape, &self.bound, seq)
    }

    fn encode_text(&self, tape: &mut Tape<T>, seq: Var) -> Result<Var> {
        self.model.text.encode(tape, &self.bound, seq)
    }

    fn decode_video(&self, tape: &mut Tape<T>, z: Var, out_len: usize) -> Result<Var> {
        self.model.video.decode(tape, &self.bound, z, out_len)
    }

    fn decode_text(&self, tape: &mut Tape<T>, z: Var, out_len: usize) -> Result<Var> {
        self.model.text.decode(tape, &self.bound, z, out_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(cfg: ModelConfig) -> MultimodalModel<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        MultimodalModel::new(cfg, ModelDims { video_dim: 5, text_dim: 4 }, &mut rng).unwrap()
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig { hidden_dim: 6, embed_dim: 4, ..Default::default() }
    }

    #[test]
    fn geometric_fc_dims() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.fc_dims(), [256, 152, 91, 54, 32]);
    }

    #[test]
    fn encoder_output_is_unit_norm() {
        let m = tiny(small_cfg());
        let seq = Tensor::from_fn(7, 5, |r, c| ((r * 3 + c) as f64).sin());
        let z = m.encode_video(&seq).unwrap();
        assert!((z.norm() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn wrong_feature_width_rejected() {
        let m = tiny(small_cfg());
        assert!(m.encode_video(&Tensor::zeros(&[3, 4])).is_err());
    }

    #[test]
    fn decode_shapes() {
        let m = tiny(small_cfg());
        let seq = Tensor::from_fn(6, 4, |r, c| (r as f64 - c as f64) * 0.1);
        let z = m.encode_text(&seq).unwrap();
        assert_eq!(m.decode_text(&z, 1).unwrap().shape(), &[1, 4]);
        assert_eq!(m.decode_text(&z, 6).unwrap().shape(), seq.shape());
        assert!(m.decode_text(&z, 0).is_err());
    }

    #[test]
    fn tied_decoder_owns_only_biases() {
        let m = tiny(small_cfg());
        let dims = small_cfg().fc_dims();
        let bias_count: usize = dims[..4].iter().sum();
        let owned: usize = m.video.decoder_fc_params().iter().map(|&id| m.params.get(id).len()).sum();
        assert_eq!(owned, bias_count);
        let untied = tiny(ModelConfig { tie_fc_weights: false, ..small_cfg() });
        let owned: usize = untied.video.decoder_fc_params().iter().map(|&id| untied.params.get(id).len()).sum();
        assert!(owned > bias_count);
    }

    #[test]
    fn pooling_variants_encode_and_decode() {
        for pooling in [Pooling::Max, Pooling::Sum] {
            let m = tiny(ModelConfig { pooling, ..small_cfg() });
            let seq = Tensor::from_fn(5, 5, |r, c| ((r + 2 * c) as f64).cos());
            let z = m.encode_video(&seq).unwrap();
            assert!((z.norm() - 1.0).abs() < 1e-5);
            assert_eq!(m.decode_video(&z, 3).unwrap().shape(), &[3, 5]);
        }
    }
}
