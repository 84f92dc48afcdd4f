//! Gaussian temporal attention filters.
//!
//! A bank of `N` Gaussians maps a `T x D` sequence of any length to a
//! fixed `N x D` summary. Filter `n` is centred at `0.5 * T * (c_n + 1)`
//! for an unconstrained raw centre `c_n`, so the same parameters adapt to
//! every sequence length. Widths pass through softplus plus a small floor
//! to stay positive. Rows are normalized to sum to one.

use serde::{Deserialize, Serialize};

use crate::autodiff::{gaussian_rows, softplus, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Lower bound added to every filter width.
pub const WIDTH_FLOOR: f64 = 1e-3;

/// Initial width of every filter.
pub const INITIAL_WIDTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams<T> {
    pub centers_raw: Vec<T>,
    pub widths_raw: Vec<T>,
}

impl<T: Scalar> FilterParams<T> {
    /// `n` filters tiling `(-1, 1)` with width [`INITIAL_WIDTH`].
    pub fn tiled(n: usize) -> Self {
        let centers_raw = (0..n)
            .map(|i| T::of(-1.0 + (2 * i + 1) as f64 / n as f64))
            .collect();
        // inverse softplus of (INITIAL_WIDTH - WIDTH_FLOOR)
        let w = ((INITIAL_WIDTH - WIDTH_FLOOR).exp() - 1.0).ln();
        Self { centers_raw, widths_raw: vec![T::of(w); n] }
    }

    pub fn len(&self) -> usize {
        self.centers_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers_raw.is_empty()
    }

    pub fn centers(&self, seq_len: usize) -> Vec<T> {
        let half = T::of(0.5 * seq_len as f64);
        self.centers_raw.iter().map(|&c| half * (c + T::one())).collect()
    }

    pub fn widths(&self) -> Vec<T> {
        self.widths_raw.iter().map(|&w| softplus(w) + T::of(WIDTH_FLOOR)).collect()
    }
}

/// Materialized `N x T` filter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<T> {
    pub weights: Tensor<T>,
    pub params: FilterParams<T>,
}

impl<T: Scalar> FilterBank<T> {
    pub fn seq_len(&self) -> usize {
        self.weights.cols()
    }

    pub fn n_filters(&self) -> usize {
        self.weights.rows()
    }

    /// Wraps an explicit matrix, e.g. for selection or averaging filters.
    pub fn from_weights(weights: Tensor<T>) -> Self {
        Self { weights, params: FilterParams { centers_raw: Vec::new(), widths_raw: Vec::new() } }
    }
}

pub fn build_filter_bank<T: Scalar>(params: &FilterParams<T>, seq_len: usize) -> Result<FilterBank<T>> {
    if seq_len == 0 {
        return Err(Error::shape("build_filter_bank", "sequence length must be at least 1"));
    }
    if params.is_empty() || params.centers_raw.len() != params.widths_raw.len() {
        return Err(Error::shape("build_filter_bank", "need matching, non-empty centre and width vectors"));
    }
    let weights = gaussian_rows(&params.centers(seq_len), &params.widths(), seq_len);
    if !weights.all_finite() {
        return Err(Error::NonFinite { op: "build_filter_bank".into() });
    }
    Ok(FilterBank { weights, params: params.clone() })
}

/// `F * seq`: `N x T` by `T x D`.
pub fn apply_filters<T: Scalar>(bank: &FilterBank<T>, seq: &Tensor<T>) -> Result<Tensor<T>> {
    if seq.rows() != bank.seq_len() {
        return Err(Error::shape(
            "apply_filters",
            format!("bank built for length {}, sequence has {}", bank.seq_len(), seq.rows()),
        ));
    }
    bank.weights.matmul(seq)
}

/// `F^T * pooled`: `T x N` by `N x D`.
pub fn apply_transposed<T: Scalar>(bank: &FilterBank<T>, pooled: &Tensor<T>) -> Result<Tensor<T>> {
    if pooled.rows() != bank.n_filters() {
        return Err(Error::shape(
            "apply_transposed",
            format!("bank has {} filters, pooled has {} rows", bank.n_filters(), pooled.rows()),
        ));
    }
    bank.weights.transpose().matmul(pooled)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Sum,
}

/// Elementwise max or sum over the time axis, `1 x D`.
pub fn pool_baseline<T: Scalar>(kind: PoolKind, seq: &Tensor<T>) -> Tensor<T> {
    let (r, c) = (seq.rows(), seq.cols());
    let mut out = seq.row_slice(0).to_vec();
    for i in 1..r {
        for (o, &x) in out.iter_mut().zip(seq.row_slice(i)) {
            *o = match kind {
                PoolKind::Max => o.max(x),
                PoolKind::Sum => *o + x,
            };
        }
    }
    debug_assert_eq!(out.len(), c);
    Tensor::row(out)
}

/// Tape form of [`build_filter_bank`]; `centers` and `widths` are `1 x N`.
pub fn filter_bank_on_tape<T: Scalar>(tape: &mut Tape<T>, centers: Var, widths: Var, seq_len: usize) -> Result<Var> {
    tape.gaussian_bank(centers, widths, seq_len, T::of(WIDTH_FLOOR))
}

/// Tape form of [`pool_baseline`].
pub fn pool_on_tape<T: Scalar>(tape: &mut Tape<T>, kind: PoolKind, seq: Var) -> Result<Var> {
    match kind {
        PoolKind::Max => tape.max_rows(seq),
        PoolKind::Sum => tape.sum_rows(seq),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::params::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct per-entry evaluation of the filter formula.
    fn scalar_oracle(centers_raw: &[f64], widths_raw: &[f64], t_len: usize) -> Vec<Vec<f64>> {
        centers_raw
            .iter()
            .zip(widths_raw)
            .map(|(&c, &w)| {
                let g = 0.5 * t_len as f64 * (c + 1.0);
                let sigma = (1.0 + w.exp()).ln() + WIDTH_FLOOR;
                let raw: Vec<f64> = (0..t_len)
                    .map(|t| (-((t as f64 - g).powi(2)) / (2.0 * sigma * sigma)).exp())
                    .collect();
                let z: f64 = raw.iter().sum();
                raw.iter().map(|x| x / z).collect()
            })
            .collect()
    }

    #[test]
    fn centred_filter_is_symmetric() {
        let p = FilterParams::<f64> { centers_raw: vec![0.0], widths_raw: vec![0.3] };
        let b = build_filter_bank(&p, 5).unwrap();
        assert_eq!(p.centers(5)[0], 2.5);
        let w = &b.weights;
        assert!((w.at(0, 2) - w.at(0, 3)).abs() < 1e-15);
        assert!((w.at(0, 1) - w.at(0, 4)).abs() < 1e-15);
    }

    #[test]
    fn left_edge_filter_peaks_at_zero() {
        let p = FilterParams { centers_raw: vec![-1.0], widths_raw: vec![-4.0] };
        let b = build_filter_bank(&p, 5).unwrap();
        let row = b.weights.row_slice(0);
        assert!(row.iter().all(|&x| x <= row[0]));
        assert!(row[0] > 0.99);
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.random_range(1..6);
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
            let p = FilterParams { centers_raw: c.clone(), widths_raw: w.clone() };
            let b = build_filter_bank(&p, 7).unwrap();
            let oracle = scalar_oracle(&c, &w, 7);
            for (i, row) in oracle.iter().enumerate() {
                for (t, &x) in row.iter().enumerate() {
                    assert!((b.weights.at(i, t) - x).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn selection_and_averaging() {
        let seq = Tensor::<f64>::from_fn(4, 3, |r, c| (r * 10 + c) as f64);
        let mut sel = Tensor::zeros(&[2, 4]);
        sel.data_mut()[2] = 1.0;
        sel.data_mut()[4..].iter_mut().for_each(|x| *x = 0.25);
        let out = apply_filters(&FilterBank::from_weights(sel), &seq).unwrap();
        assert_eq!(out.row_slice(0), seq.row_slice(2));
        assert_eq!(out.row_slice(1), seq.mean_rows().data());
    }

    #[test]
    fn transposed_identity_and_zero() {
        let pooled = Tensor::<f64>::from_fn(3, 2, |r, c| (r + c) as f64 - 1.0);
        let eye = FilterBank::from_weights(Tensor::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.0 }));
        assert_eq!(apply_transposed(&eye, &pooled).unwrap(), pooled);
        let p = FilterParams::<f64>::tiled(3);
        let bank = build_filter_bank(&p, 6).unwrap();
        let out = apply_transposed(&bank, &Tensor::zeros(&[3, 2])).unwrap();
        assert_eq!(out.shape(), &[6, 2]);
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let bank = build_filter_bank(&FilterParams::<f64>::tiled(4), 5).unwrap();
        assert!(apply_filters(&bank, &Tensor::zeros(&[6, 2])).is_err());
        assert!(apply_transposed(&bank, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn pooling_baselines() {
        let seq = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.0]]).unwrap();
        assert_eq!(pool_baseline(PoolKind::Max, &seq).data(), &[3.0, 2.0]);
        assert_eq!(pool_baseline(PoolKind::Sum, &seq).data(), &[4.0, 2.0]);
        let one = Tensor::<f64>::row(vec![5.0, -1.0]);
        assert_eq!(pool_baseline(PoolKind::Max, &one), one);
        assert_eq!(pool_baseline(PoolKind::Sum, &one), one);
    }

    #[test]
    fn filter_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for len in [1usize, 3, 9] {
            let mut p = ParamStore::<f64>::new();
            let c = p.add("c", Tensor::row((0..3).map(|_| rng.random_range(-1.0..1.0)).collect()));
            let w = p.add("w", Tensor::row((0..3).map(|_| rng.random_range(-0.5..1.5)).collect()));
            let seq = Tensor::from_fn(len, 2, |_, _| rng.random_range(-1.0..1.0));
            let mix = Tensor::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
            let r = grad_check(&p, 1e-5, None, |tape, b| {
                let bank = filter_bank_on_tape(tape, b.var(c), b.var(w), len)?;
                let s = tape.constant(seq.clone());
                let pooled = tape.matmul(bank, s)?;
                let m = tape.constant(mix.clone());
                let prod = tape.mul(pooled, m)?;
                tape.sum(prod)
            })
            .unwrap();
            assert!(r.max_rel_error < 1e-4, "len {len}: {r:?}");
        }
    }
}
