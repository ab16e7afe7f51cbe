//! Dense and batch-normalization layers plus the elementwise activations.
//!
//! Batches are `samples x features` matrices. Each layer has an explicit
//! forward that returns whatever its backward needs.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::{NamedTensor, Parameters, TensorMap};
use crate::error::{Error, Result};
use crate::rng::Stream;

/// `y = W x + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    /// He-style init: weights ~ N(0, 2 / fan_in), zero bias.
    pub fn init(n_in: usize, n_out: usize, rng: &mut Stream) -> Self {
        let normal = Normal::new(0.0, (2.0 / n_in as f64).sqrt()).expect("finite std");
        Dense {
            weight: Array2::from_shape_simple_fn((n_out, n_in), || normal.sample(rng)),
            bias: Array1::zeros(n_out),
        }
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense { weight: Array2::zeros((n_out, n_in)), bias: Array1::zeros(n_out) }
    }

    pub fn n_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_in() {
            return Err(Error::ShapeMismatch(format!("dense layer expects {} inputs, got {}", self.n_in(), x.ncols())));
        }
        Ok(x.dot(&self.weight.t()) + &self.bias)
    }

    /// Accumulates parameter gradients into `grad`, returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.weight += &dy.t().dot(&x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

/// Per-feature batch normalization with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

/// What the backward pass of a train-mode normalization needs.
#[derive(Debug, Clone)]
pub struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Batch moments observed in train mode, folded into the running averages
/// by [`BatchNorm::update_running`].
#[derive(Debug, Clone)]
pub struct BnMoments {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        BatchNorm {
            scale: Array1::ones(width),
            shift: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn width(&self) -> usize {
        self.scale.len()
    }

    /// Normalizes with the batch's own mean and population variance.
    pub fn forward_train(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, BnCache, BnMoments)> {
        let b = x.nrows();
        if b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = &x - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
        let inv_std = var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
        let xhat = centered * &inv_std;
        let y = &xhat * &self.scale + &self.shift;
        Ok((y, BnCache { xhat, inv_std }, BnMoments { mean, var }))
    }

    pub fn update_running(&mut self, m: &BnMoments) {
        let mo = self.momentum;
        Zip::from(&mut self.running_mean).and(&m.mean).for_each(|r, &v| *r = mo * *r + (1.0 - mo) * v);
        Zip::from(&mut self.running_var).and(&m.var).for_each(|r, &v| *r = mo * *r + (1.0 - mo) * v);
    }

    /// Normalizes with the running statistics only.
    pub fn forward_infer(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
        (&x - &self.running_mean) * &(inv_std * &self.scale) + &self.shift
    }

    pub fn backward(&self, cache: &BnCache, dy: ArrayView2<f64>, grad: &mut BatchNorm) -> Array2<f64> {
        let b = dy.nrows() as f64;
        grad.scale += &(&dy * &cache.xhat).sum_axis(Axis(0));
        grad.shift += &dy.sum_axis(Axis(0));
        let dxhat = &dy * &self.scale;
        let sum_d = dxhat.sum_axis(Axis(0));
        let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let mut dx = dxhat * b - &sum_d - &(&cache.xhat * &sum_dx);
        dx *= &(&cache.inv_std / b);
        dx
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Subgradient at 0 is taken as 0.
pub fn relu_backward(pre: &Array2<f64>, dy: &mut Array2<f64>) {
    Zip::from(dy).and(pre).for_each(|d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
}

/// Inverted-dropout mask: each unit kept with probability `1 - rate` and
/// scaled by `1 / (1 - rate)`. `None` when `rate == 0`.
pub fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut Stream) -> Option<Array2<f64>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { 0.0 } else { keep }))
}

/// Train-mode dropout (identity when `rate == 0`). Inference never drops.
pub fn dropout(x: &Array2<f64>, rate: f64, rng: &mut Stream) -> Array2<f64> {
    match dropout_mask(x.dim(), rate, rng) {
        Some(m) => x * &m,
        None => x.clone(),
    }
}

pub fn softmax(y: &[f64]) -> Vec<f64> {
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = y.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Row-wise softmax over consecutive blocks of `width` columns.
pub fn softmax_blocks(y: &Array2<f64>, width: usize) -> Array2<f64> {
    let mut out = y.as_standard_layout().into_owned();
    for mut row in out.rows_mut() {
        for chunk in row.as_slice_mut().expect("standard layout").chunks_mut(width) {
            let s = softmax(chunk);
            chunk.copy_from_slice(&s);
        }
    }
    out
}

/// Backward of [`softmax_blocks`] given its output `s`.
pub fn softmax_blocks_backward(s: &Array2<f64>, ds: &Array2<f64>, width: usize) -> Array2<f64> {
    let (s, ds) = (s.as_standard_layout(), ds.as_standard_layout());
    let mut dy = Array2::zeros(s.dim());
    for ((s_row, ds_row), mut dy_row) in s.rows().into_iter().zip(ds.rows()).zip(dy.rows_mut()) {
        let (s_row, ds_row) = (s_row.as_slice().unwrap(), ds_row.as_slice().unwrap());
        let dy_row = dy_row.as_slice_mut().unwrap();
        for ((sc, dc), yc) in s_row.chunks(width).zip(ds_row.chunks(width)).zip(dy_row.chunks_mut(width)) {
            let dot: f64 = sc.iter().zip(dc).map(|(a, b)| a * b).sum();
            for ((y, a), b) in yc.iter_mut().zip(sc).zip(dc) {
                *y = a * (b - dot);
            }
        }
    }
    dy
}

pub fn sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

/// Backward of the elementwise sigmoid given its output `s`.
pub fn sigmoid_backward(s: &Array2<f64>, ds: &Array2<f64>) -> Array2<f64> {
    let mut out = ds.clone();
    Zip::from(&mut out).and(s).for_each(|d, &v| *d *= v * (1.0 - v));
    out
}

impl Parameters for Dense {
    fn trainable(&self) -> Vec<&[f64]> {
        vec![self.weight.as_slice().unwrap(), self.bias.as_slice().unwrap()]
    }

    fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.as_slice_mut().unwrap(), self.bias.as_slice_mut().unwrap()]
    }

    fn export(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        out.push(NamedTensor::matrix(format!("{prefix}.weight"), &self.weight));
        out.push(NamedTensor::vector(format!("{prefix}.bias"), &self.bias));
    }

    fn import(&mut self, prefix: &str, tensors: &TensorMap) -> Result<()> {
        tensors.load_matrix(&format!("{prefix}.weight"), &mut self.weight)?;
        tensors.load_vector(&format!("{prefix}.bias"), &mut self.bias)
    }
}

/// Scale and shift are trainable; the running moments are state only.
impl Parameters for BatchNorm {
    fn trainable(&self) -> Vec<&[f64]> {
        vec![self.scale.as_slice().unwrap(), self.shift.as_slice().unwrap()]
    }

    fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.scale.as_slice_mut().unwrap(), self.shift.as_slice_mut().unwrap()]
    }

    fn export(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        for (name, v) in [("scale", &self.scale), ("shift", &self.shift), ("running_mean", &self.running_mean), ("running_var", &self.running_var)] {
            out.push(NamedTensor::vector(format!("{prefix}.{name}"), v));
        }
    }

    fn import(&mut self, prefix: &str, tensors: &TensorMap) -> Result<()> {
        tensors.load_vector(&format!("{prefix}.scale"), &mut self.scale)?;
        tensors.load_vector(&format!("{prefix}.shift"), &mut self.shift)?;
        tensors.load_vector(&format!("{prefix}.running_mean"), &mut self.running_mean)?;
        tensors.load_vector(&format!("{prefix}.running_var"), &mut self.running_var)?;
        if self.running_var.iter().any(|v| *v < 0.0) {
            return Err(Error::Format(format!("{prefix}: negative running variance")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use proptest::prelude::*;

    use super::*;
    use crate::rng::stream;

    #[test]
    fn dense_identity_and_hand_case() {
        let d = Dense { weight: Array2::eye(3), bias: Array1::zeros(3) };
        let x = array![[1.0, -2.0, 3.5]];
        assert_eq!(d.forward(x.view()).unwrap(), x);
        let d = Dense { weight: array![[1.0, 2.0]], bias: array![3.0] };
        assert_eq!(d.forward(array![[1.0, 1.0]].view()).unwrap(), array![[6.0]]);
        assert!(d.forward(array![[1.0]].view()).is_err());
    }

    #[test]
    fn bn_hand_case() {
        let mut bn = BatchNorm::new(1);
        bn.epsilon = 0.0;
        let (y, _, m) = bn.forward_train(array![[1.0], [3.0]].view()).unwrap();
        assert_eq!(y, array![[-1.0], [1.0]]);
        assert_eq!(m.mean[0], 2.0);
        assert_eq!(m.var[0], 1.0);
        bn.scale[0] = 0.0;
        bn.shift[0] = 0.7;
        let (y, _, _) = bn.forward_train(array![[1.0], [3.0], [-4.0]].view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.7));
        assert!(matches!(bn.forward_train(array![[1.0]].view()), Err(Error::BatchTooSmall(1))));
    }

    #[test]
    fn bn_infer_is_batch_independent() {
        let mut bn = BatchNorm::new(2);
        bn.running_mean = array![0.3, -1.0];
        bn.running_var = array![2.0, 0.5];
        let one = bn.forward_infer(array![[1.0, 2.0]].view());
        let many = bn.forward_infer(Array2::from_shape_fn((7, 2), |(_, j)| [1.0, 2.0][j]).view());
        for row in many.rows() {
            assert_eq!(row, one.row(0));
        }
    }

    #[test]
    fn running_stats_move_by_momentum() {
        let mut bn = BatchNorm::new(1);
        let (_, _, m) = bn.forward_train(array![[1.0], [3.0]].view()).unwrap();
        bn.update_running(&m);
        assert!((bn.running_mean[0] - 0.02).abs() < 1e-15);
        assert!((bn.running_var[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn relu_cases() {
        let x = array![[-1.0, 0.0, 2.0]];
        assert_eq!(relu(&x), array![[0.0, 0.0, 2.0]]);
        let mut d = array![[5.0, 5.0, 5.0]];
        relu_backward(&x, &mut d);
        assert_eq!(d, array![[0.0, 0.0, 5.0]]);
    }

    #[test]
    fn dropout_identity_cases_and_mean() {
        let x = Array2::from_elem((4, 5), 1.5);
        assert_eq!(dropout(&x, 0.0, &mut stream(0, 0, 0)), x);
        let ones = Array2::from_elem((1, 10_000), 1.0);
        let rate = 0.3;
        let out = dropout(&ones, rate, &mut stream(1, 2, 3));
        let mean = out.mean().unwrap();
        // per-unit std of the scaled Bernoulli is sqrt(rate / (1 - rate))
        let sigma = (rate / (1.0 - rate)).sqrt() / 100.0;
        assert!((mean - 1.0).abs() < 3.0 * sigma, "{mean}");
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
        let s = softmax(&[1.0, 0.0]);
        let e = std::f64::consts::E;
        assert!((s[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((s[0] - 0.7311).abs() < 1e-4 && (s[1] - 0.2689).abs() < 1e-4);
        let big = softmax(&[1000.0, 999.0]);
        assert!((big[0] - s[0]).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_cases() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1.0) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-16);
        assert!((sigmoid(1.0) - 0.7311).abs() < 1e-4);
        assert_eq!(sigmoid(1e4), 1.0);
        assert_eq!(sigmoid(-1e4), 0.0);
    }

    proptest! {
        #[test]
        fn softmax_is_simplex_and_shift_invariant(y in prop::collection::vec(-30.0f64..30.0, 1..10), c in -50.0f64..50.0) {
            let s = softmax(&y);
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
            let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
            for (a, b) in s.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn sigmoid_open_interval(y in -30.0f64..30.0) {
            let s = sigmoid(y);
            prop_assert!(s > 0.0 && s < 1.0);
        }
    }
}
