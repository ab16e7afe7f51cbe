//! Centralized and distributed allocation networks built from basic modules.
//!
//! Both take a batch of normalized gain tensors (one row per sample, the
//! `(k, rx, tx)` flattening) and produce relaxed outputs for training or
//! hard allocations for deployment.

pub mod bundle;
mod centralized;
mod distributed;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use centralized::{CentralizedCache, CentralizedModel};
pub use distributed::{DistributedCache, DistributedModel};

use crate::channel::ChannelSample;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::nn::{NamedTensor, Parameters, TensorMap};
use crate::objective::{Allocation, SoftOutputs};
use crate::rng::Stream;
use crate::stats::{preprocess, DatasetStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Centralized,
    Distributed,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Centralized => "centralized",
            ModelKind::Distributed => "distributed",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centralized" => Ok(ModelKind::Centralized),
            "distributed" => Ok(ModelKind::Distributed),
            other => Err(Error::InvalidConfig(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Depth, width and dropout shared by every basic module of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub n_units: usize,
    pub hidden_width: usize,
    pub dropout_rate: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { n_units: 4, hidden_width: 64, dropout_rate: 0.05 }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.n_units < 1 || self.hidden_width < 1 {
            return Err(Error::InvalidConfig("architecture needs at least one unit of width >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

/// How the distributed model treats its feedback and broadcast bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitMode {
    /// Continuous sigmoid values flow downstream.
    Soft,
    /// Bits are thresholded at 0.5 before anyone else sees them.
    Hard,
}

/// Relaxed outputs for a batch, one row per sample. Power and channel
/// columns are `N` consecutive blocks of `N_P` and `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutputs {
    pub power: Array2<f64>,
    pub channel: Array2<f64>,
    /// `B x N*B_F`, distributed only.
    pub feedback: Option<Array2<f64>>,
    /// `B x B_B`, distributed only.
    pub broadcast: Option<Array2<f64>>,
}

impl BatchOutputs {
    pub fn n_rows(&self) -> usize {
        self.power.nrows()
    }

    pub fn zeros_like(&self) -> Self {
        BatchOutputs {
            power: Array2::zeros(self.power.dim()),
            channel: Array2::zeros(self.channel.dim()),
            feedback: self.feedback.as_ref().map(|f| Array2::zeros(f.dim())),
            broadcast: self.broadcast.as_ref().map(|b| Array2::zeros(b.dim())),
        }
    }

    /// Row `b` reshaped into per-pair outputs.
    pub fn sample(&self, b: usize, n_tps: usize) -> SoftOutputs {
        let reshape = |m: &Array2<f64>| {
            let row = m.row(b).to_owned();
            let width = row.len() / n_tps;
            row.into_shape_with_order((n_tps, width)).expect("block layout")
        };
        SoftOutputs {
            power_probs: reshape(&self.power),
            channel_probs: reshape(&self.channel),
            feedback: self.feedback.as_ref().map(reshape),
            broadcast: self.broadcast.as_ref().map(|m| m.row(b).to_owned()),
        }
    }

    /// Writes per-pair gradients for row `b`, the inverse of [`Self::sample`].
    pub fn set_sample(&mut self, b: usize, grad: &SoftOutputs) {
        let flat = |m: &Array2<f64>| m.iter().copied().collect::<Vec<f64>>();
        self.power.row_mut(b).assign(&ndarray::Array1::from(flat(&grad.power_probs)));
        self.channel.row_mut(b).assign(&ndarray::Array1::from(flat(&grad.channel_probs)));
        if let (Some(dst), Some(src)) = (self.feedback.as_mut(), grad.feedback.as_ref()) {
            dst.row_mut(b).assign(&ndarray::Array1::from(flat(src)));
        }
        if let (Some(dst), Some(src)) = (self.broadcast.as_mut(), grad.broadcast.as_ref()) {
            dst.row_mut(b).assign(src);
        }
    }

    /// Argmax per block (smallest index on ties), canonicalized.
    pub fn decide(&self, n_tps: usize) -> Vec<Allocation> {
        let np = self.power.ncols() / n_tps;
        let k = self.channel.ncols() / n_tps;
        (0..self.n_rows())
            .map(|b| {
                let power_idx = (0..n_tps).map(|i| argmax(self.power.slice(s![b, i * np..(i + 1) * np]).iter())).collect();
                let channel_idx = (0..n_tps).map(|i| argmax(self.channel.slice(s![b, i * k..(i + 1) * k]).iter())).collect();
                Allocation::new(channel_idx, power_idx)
            })
            .collect()
    }
}

fn argmax<'a>(values: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, &v) in values.enumerate() {
        if v > best.1 {
            best = (j, v);
        }
    }
    best.0
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Centralized(CentralizedModel),
    Distributed(DistributedModel),
}

/// Train-mode activations of either model.
#[derive(Debug, Clone)]
pub enum ForwardCache {
    Centralized(CentralizedCache),
    Distributed(DistributedCache),
}

impl Model {
    pub fn init(kind: ModelKind, arch: Architecture, config: &SystemConfig, rng: &mut Stream) -> Result<Model> {
        config.validate()?;
        arch.validate()?;
        Ok(match kind {
            ModelKind::Centralized => Model::Centralized(CentralizedModel::init(arch, config, rng)?),
            ModelKind::Distributed => Model::Distributed(DistributedModel::init(arch, config, rng)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Centralized(_) => ModelKind::Centralized,
            Model::Distributed(_) => ModelKind::Distributed,
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Model::Centralized(m) => m.architecture(),
            Model::Distributed(m) => m.architecture(),
        }
    }

    pub fn n_tps(&self) -> usize {
        match self {
            Model::Centralized(m) => m.n_tps,
            Model::Distributed(m) => m.n_tps,
        }
    }

    /// Checks that the model was built for this scenario's dimensions.
    pub fn check_config(&self, config: &SystemConfig) -> Result<()> {
        let (n, k, np) = match self {
            Model::Centralized(m) => (m.n_tps, m.n_channels, m.n_levels),
            Model::Distributed(m) => (m.n_tps, m.n_channels, m.n_levels),
        };
        let bits_ok = match self {
            Model::Centralized(_) => true,
            Model::Distributed(m) => m.bf_bits == config.bf_bits && m.bb_bits == config.bb_bits,
        };
        if (n, k, np) != (config.n_tps, config.n_channels, config.n_power_levels) || !bits_ok {
            return Err(Error::ShapeMismatch(format!(
                "model is for N={n}, K={k}, N_P={np}; config is N={}, K={}, N_P={}",
                config.n_tps, config.n_channels, config.n_power_levels
            )));
        }
        Ok(())
    }

    /// Same shapes, all zero; the gradient accumulator for [`Model::backward`].
    pub fn zeros_like(&self) -> Model {
        match self {
            Model::Centralized(m) => Model::Centralized(m.zeros_like()),
            Model::Distributed(m) => Model::Distributed(m.zeros_like()),
        }
    }

    /// Train-mode soft forward: batch statistics, active dropout. Running
    /// statistics are untouched; see [`Model::update_running`].
    pub fn forward_train(&self, x: ArrayView2<f64>, rng: &mut Stream) -> Result<(BatchOutputs, ForwardCache)> {
        Ok(match self {
            Model::Centralized(m) => {
                let (o, c) = m.forward_train(x, rng)?;
                (o, ForwardCache::Centralized(c))
            }
            Model::Distributed(m) => {
                let (o, c) = m.forward_train(x, rng)?;
                (o, ForwardCache::Distributed(c))
            }
        })
    }

    pub fn update_running(&mut self, cache: &ForwardCache) {
        match (self, cache) {
            (Model::Centralized(m), ForwardCache::Centralized(c)) => m.update_running(c),
            (Model::Distributed(m), ForwardCache::Distributed(c)) => m.update_running(c),
            _ => panic!("cache does not belong to this model kind"),
        }
    }

    /// Accumulates parameter gradients of `dL/d(outputs)` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, d_out: &BatchOutputs, grad: &mut Model) {
        match (self, cache, grad) {
            (Model::Centralized(m), ForwardCache::Centralized(c), Model::Centralized(g)) => m.backward(c, d_out, g),
            (Model::Distributed(m), ForwardCache::Distributed(c), Model::Distributed(g)) => m.backward(c, d_out, g),
            _ => panic!("cache or gradient does not belong to this model kind"),
        }
    }

    /// Inference-mode relaxed outputs. The distributed model thresholds its
    /// bits in [`BitMode::Hard`]; the centralized model ignores `bits`.
    pub fn infer(&self, x: ArrayView2<f64>, bits: BitMode) -> Result<BatchOutputs> {
        match self {
            Model::Centralized(m) => m.infer(x),
            Model::Distributed(m) => m.infer(x, bits),
        }
    }

    /// Hard allocations for a batch of normalized inputs.
    pub fn decide(&self, x: ArrayView2<f64>) -> Result<Vec<Allocation>> {
        Ok(self.infer(x, BitMode::Hard)?.decide(self.n_tps()))
    }

    /// Hard allocation for one raw sample, preprocessing included.
    pub fn decide_sample(&self, sample: &ChannelSample, stats: &DatasetStats) -> Result<Allocation> {
        let x = preprocess(sample, stats)?;
        let x = ArrayView2::from_shape((1, x.len()), &x).expect("one row");
        Ok(self.decide(x)?.pop().expect("one row in, one decision out"))
    }
}

impl Parameters for Model {
    fn trainable(&self) -> Vec<&[f64]> {
        match self {
            Model::Centralized(m) => m.trainable(),
            Model::Distributed(m) => m.trainable(),
        }
    }

    fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Model::Centralized(m) => m.trainable_mut(),
            Model::Distributed(m) => m.trainable_mut(),
        }
    }

    fn export(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        match self {
            Model::Centralized(m) => m.export(prefix, out),
            Model::Distributed(m) => m.export(prefix, out),
        }
    }

    fn import(&mut self, prefix: &str, tensors: &TensorMap) -> Result<()> {
        match self {
            Model::Centralized(m) => m.import(prefix, tensors),
            Model::Distributed(m) => m.import(prefix, tensors),
        }
    }
}

/// `prefix.name`, or `name` alone for an empty prefix.
pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn argmax_prefers_first_maximum() {
        assert_eq!(argmax([0.2, 0.4, 0.4].iter()), 1);
        assert_eq!(argmax([0.25; 4].iter()), 0);
    }

    #[test]
    fn decide_canonicalizes_idle() {
        let out = BatchOutputs {
            power: array![[0.9, 0.1, 0.3, 0.7]],
            channel: array![[0.1, 0.9, 0.6, 0.4]],
            feedback: None,
            broadcast: None,
        };
        let a = out.decide(2);
        assert_eq!(a, vec![Allocation { channel_idx: vec![0, 0], power_idx: vec![0, 1] }]);
    }

    #[test]
    fn sample_roundtrips_through_set_sample() {
        let out = BatchOutputs {
            power: array![[0.0, 1.0, 2.0, 3.0], [4.0, 5.0, 6.0, 7.0]],
            channel: array![[1.0, 2.0], [3.0, 4.0]],
            feedback: Some(array![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], [0.0; 6]]),
            broadcast: Some(array![[9.0], [8.0]]),
        };
        let s = out.sample(1, 2);
        assert_eq!(s.power_probs, array![[4.0, 5.0], [6.0, 7.0]]);
        assert_eq!(s.broadcast.as_ref().unwrap(), &array![8.0]);
        let mut back = out.zeros_like();
        back.set_sample(0, &out.sample(0, 2));
        back.set_sample(1, &s);
        assert_eq!(back, out);
    }
}
