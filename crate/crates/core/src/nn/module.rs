//! The residual "basic module": a stack of FC -> BN -> ReLU -> dropout
//! units whose first-unit output is added to the BN output of every later
//! unit of matching width.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::layers::{dropout_mask, relu, relu_backward, BatchNorm, BnCache, BnMoments, Dense};
use super::params::{NamedTensor, Parameters, TensorMap};
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasicModuleSpec {
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub n_units: usize,
    pub hidden_width: usize,
    pub dropout_rate: f64,
    /// When set, the last unit stops after BN (plus residual) and emits raw
    /// logits; otherwise it is a full FC -> BN -> ReLU -> dropout unit.
    pub linear_head: bool,
}

impl BasicModuleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_units < 1 || self.n_inputs < 1 || self.n_outputs < 1 || self.hidden_width < 1 {
            return Err(Error::InvalidConfig(format!("basic module widths and depth must be >= 1: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn unit_width(&self, u: usize) -> usize {
        if u + 1 == self.n_units {
            self.n_outputs
        } else {
            self.hidden_width
        }
    }

    /// Whether unit `u` receives the first unit's output.
    pub fn has_residual(&self, u: usize) -> bool {
        u > 0 && self.unit_width(u) == self.hidden_width
    }

    fn is_linear(&self, u: usize) -> bool {
        self.linear_head && u + 1 == self.n_units
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub fc: Dense,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasicModule {
    pub spec: BasicModuleSpec,
    pub units: Vec<Unit>,
}

/// Activations kept by a train-mode forward for the backward pass.
#[derive(Debug, Clone)]
pub struct ModuleCache {
    inputs: Vec<Array2<f64>>,
    bn: Vec<BnCache>,
    pre_act: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    moments: Vec<BnMoments>,
}

impl BasicModule {
    pub fn init(spec: BasicModuleSpec, rng: &mut Stream) -> Result<Self> {
        spec.validate()?;
        let mut n_in = spec.n_inputs;
        let units = (0..spec.n_units)
            .map(|u| {
                let w = spec.unit_width(u);
                let unit = Unit { fc: Dense::init(n_in, w, rng), bn: BatchNorm::new(w) };
                n_in = w;
                unit
            })
            .collect();
        Ok(BasicModule { spec, units })
    }

    /// Same shapes, every tensor zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let units = self
            .units
            .iter()
            .map(|u| {
                let mut bn = BatchNorm::new(u.bn.width());
                bn.scale.fill(0.0);
                bn.running_var.fill(0.0);
                Unit { fc: Dense::zeros(u.fc.n_in(), u.fc.n_out()), bn }
            })
            .collect();
        BasicModule { spec: self.spec, units }
    }

    pub fn forward_infer(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut h = x.to_owned();
        let mut first: Option<Array2<f64>> = None;
        for (u, unit) in self.units.iter().enumerate() {
            let mut z = unit.bn.forward_infer(unit.fc.forward(h.view())?.view());
            if self.spec.has_residual(u) {
                z += first.as_ref().expect("unit 0 ran");
            }
            h = if self.spec.is_linear(u) { z } else { relu(&z) };
            if u == 0 {
                first = Some(h.clone());
            }
        }
        Ok(h)
    }

    /// Train-mode forward. Running BN statistics are folded in before
    /// returning.
    pub fn forward_train(&mut self, x: ArrayView2<f64>, rng: &mut Stream) -> Result<(Array2<f64>, ModuleCache)> {
        let (out, cache) = self.forward_train_pure(x, rng)?;
        self.update_running(&cache);
        Ok((out, cache))
    }

    /// Folds the batch moments recorded in `cache` into the running
    /// statistics.
    pub fn update_running(&mut self, cache: &ModuleCache) {
        for (unit, m) in self.units.iter_mut().zip(&cache.moments) {
            unit.bn.update_running(m);
        }
    }

    /// Train-mode forward without touching the running statistics.
    pub fn forward_train_pure(&self, x: ArrayView2<f64>, rng: &mut Stream) -> Result<(Array2<f64>, ModuleCache)> {
        let n = self.units.len();
        let mut cache = ModuleCache {
            inputs: Vec::with_capacity(n),
            bn: Vec::with_capacity(n),
            pre_act: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
            moments: Vec::with_capacity(n),
        };
        let mut h = x.to_owned();
        let mut first: Option<Array2<f64>> = None;
        for (u, unit) in self.units.iter().enumerate() {
            let fc_out = unit.fc.forward(h.view())?;
            let (mut z, bn_cache, moments) = unit.bn.forward_train(fc_out.view())?;
            if self.spec.has_residual(u) {
                z += first.as_ref().expect("unit 0 ran");
            }
            cache.inputs.push(h);
            cache.bn.push(bn_cache);
            cache.moments.push(moments);
            h = if self.spec.is_linear(u) {
                cache.masks.push(None);
                z.clone()
            } else {
                let mut a = relu(&z);
                let mask = dropout_mask(a.dim(), self.spec.dropout_rate, rng);
                if let Some(m) = &mask {
                    a *= m;
                }
                cache.masks.push(mask);
                a
            };
            cache.pre_act.push(z);
            if u == 0 {
                first = Some(h.clone());
            }
        }
        Ok((h, cache))
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, cache: &ModuleCache, dout: Array2<f64>, grad: &mut BasicModule) -> Array2<f64> {
        let mut d = dout;
        let mut d_first: Option<Array2<f64>> = None;
        for u in (0..self.units.len()).rev() {
            if !self.spec.is_linear(u) {
                if let Some(m) = &cache.masks[u] {
                    d *= m;
                }
                relu_backward(&cache.pre_act[u], &mut d);
            }
            if self.spec.has_residual(u) {
                match &mut d_first {
                    Some(acc) => *acc += &d,
                    None => d_first = Some(d.clone()),
                }
            }
            let (unit, g) = (&self.units[u], &mut grad.units[u]);
            let d_fc = unit.bn.backward(&cache.bn[u], d.view(), &mut g.bn);
            d = unit.fc.backward(cache.inputs[u].view(), d_fc.view(), &mut g.fc);
            if u == 1 {
                if let Some(extra) = d_first.take() {
                    d += &extra;
                }
            }
        }
        d
    }
}

impl Parameters for BasicModule {
    fn trainable(&self) -> Vec<&[f64]> {
        self.units.iter().flat_map(|u| u.fc.trainable().into_iter().chain(u.bn.trainable())).collect()
    }

    fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        self.units.iter_mut().flat_map(|u| u.fc.trainable_mut().into_iter().chain(u.bn.trainable_mut())).collect()
    }

    fn export(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        for (i, u) in self.units.iter().enumerate() {
            u.fc.export(&format!("{prefix}.unit{i}.fc"), out);
            u.bn.export(&format!("{prefix}.unit{i}.bn"), out);
        }
    }

    fn import(&mut self, prefix: &str, tensors: &TensorMap) -> Result<()> {
        for (i, u) in self.units.iter_mut().enumerate() {
            u.fc.import(&format!("{prefix}.unit{i}.fc"), tensors)?;
            u.bn.import(&format!("{prefix}.unit{i}.bn"), tensors)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::rng::stream;

    fn spec(n_units: usize, linear_head: bool) -> BasicModuleSpec {
        BasicModuleSpec { n_inputs: 3, n_outputs: 2, n_units, hidden_width: 4, dropout_rate: 0.0, linear_head }
    }

    fn random_batch(b: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, 77, 0);
        Array2::from_shape_simple_fn((b, n), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn single_unit_is_plain_stack() {
        let mut rng = stream(1, 0, 0);
        let m = BasicModule::init(spec(1, false), &mut rng).unwrap();
        let x = random_batch(5, 3, 2);
        let (y, _) = m.forward_train_pure(x.view(), &mut rng).unwrap();
        let u = &m.units[0];
        let (z, _, _) = u.bn.forward_train(u.fc.forward(x.view()).unwrap().view()).unwrap();
        assert_eq!(y, relu(&z));
    }

    #[test]
    fn zeroed_second_unit_passes_residual_through() {
        let mut rng = stream(1, 0, 0);
        let s = BasicModuleSpec { n_outputs: 4, ..spec(2, true) };
        let mut m = BasicModule::init(s, &mut rng).unwrap();
        m.units[1].fc.weight.fill(0.0);
        m.units[1].fc.bias.fill(0.0);
        m.units[1].bn.scale.fill(1.0);
        m.units[1].bn.shift.fill(0.0);
        let x = random_batch(6, 3, 3);
        let (y, cache) = m.forward_train_pure(x.view(), &mut rng).unwrap();
        // unit 2's BN sees a zero input, so its pre-ReLU output is unit 1's output
        let u0 = &m.units[0];
        let (z0, _, _) = u0.bn.forward_train(u0.fc.forward(x.view()).unwrap().view()).unwrap();
        assert_eq!(cache.pre_act[1], relu(&z0));
        assert_eq!(y, relu(&z0));
    }

    #[test]
    fn mismatched_head_skips_residual() {
        let s = spec(3, false);
        assert!(!s.has_residual(0));
        assert!(s.has_residual(1));
        assert!(!s.has_residual(2));
        let s = BasicModuleSpec { n_outputs: 4, ..s };
        assert!(s.has_residual(2));
    }

    #[test]
    fn infer_is_deterministic_and_batch_independent() {
        let mut rng = stream(4, 0, 0);
        let mut m = BasicModule::init(BasicModuleSpec { dropout_rate: 0.5, ..spec(3, true) }, &mut rng).unwrap();
        for _ in 0..5 {
            m.forward_train(random_batch(8, 3, 9).view(), &mut rng).unwrap();
        }
        let x = random_batch(10, 3, 5);
        let all = m.forward_infer(x.view()).unwrap();
        for i in 0..10 {
            let one = m.forward_infer(x.slice(ndarray::s![i..i + 1, ..])).unwrap();
            assert_eq!(one.row(0), all.row(i));
        }
        assert_eq!(m.forward_infer(x.view()).unwrap(), all);
    }

    #[test]
    fn rejects_bad_spec() {
        let mut rng = stream(0, 0, 0);
        assert!(BasicModule::init(BasicModuleSpec { n_units: 0, ..spec(1, true) }, &mut rng).is_err());
        assert!(BasicModule::init(BasicModuleSpec { dropout_rate: 1.0, ..spec(1, true) }, &mut rng).is_err());
    }
}
