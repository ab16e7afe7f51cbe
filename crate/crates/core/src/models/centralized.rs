use ndarray::{Array2, ArrayView2};

use super::{join, Architecture, BatchOutputs};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::nn::layers::{softmax_blocks, softmax_blocks_backward};
use crate::nn::{BasicModule, BasicModuleSpec, ModuleCache, NamedTensor, Parameters, TensorMap};
use crate::rng::Stream;

/// Sees the whole normalized tensor; one module picks power levels, the
/// other picks channels, each as `N` softmax blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedModel {
    pub n_tps: usize,
    pub n_channels: usize,
    pub n_levels: usize,
    pub bdp: BasicModule,
    pub bdc: BasicModule,
}

#[derive(Debug, Clone)]
pub struct CentralizedCache {
    bdp: ModuleCache,
    bdc: ModuleCache,
    power: Array2<f64>,
    channel: Array2<f64>,
}

pub(super) fn head_spec(arch: Architecture, n_inputs: usize, n_outputs: usize) -> BasicModuleSpec {
    BasicModuleSpec {
        n_inputs,
        n_outputs,
        n_units: arch.n_units,
        hidden_width: arch.hidden_width,
        dropout_rate: arch.dropout_rate,
        linear_head: true,
    }
}

impl CentralizedModel {
    pub fn init(arch: Architecture, config: &SystemConfig, rng: &mut Stream) -> Result<Self> {
        let (n, k, np) = (config.n_tps, config.n_channels, config.n_power_levels);
        let n_in = config.gains_len();
        Ok(CentralizedModel {
            n_tps: n,
            n_channels: k,
            n_levels: np,
            bdp: BasicModule::init(head_spec(arch, n_in, n * np), rng)?,
            bdc: BasicModule::init(head_spec(arch, n_in, n * k), rng)?,
        })
    }

    pub fn architecture(&self) -> Architecture {
        let s = self.bdp.spec;
        Architecture { n_units: s.n_units, hidden_width: s.hidden_width, dropout_rate: s.dropout_rate }
    }

    pub fn zeros_like(&self) -> Self {
        CentralizedModel {
            n_tps: self.n_tps,
            n_channels: self.n_channels,
            n_levels: self.n_levels,
            bdp: self.bdp.zeros_like(),
            bdc: self.bdc.zeros_like(),
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.bdp.spec.n_inputs {
            return Err(Error::ShapeMismatch(format!(
                "centralized model expects {} inputs per sample, got {}",
                self.bdp.spec.n_inputs,
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward_train(&self, x: ArrayView2<f64>, rng: &mut Stream) -> Result<(BatchOutputs, CentralizedCache)> {
        self.check_input(&x)?;
        let (yp, bdp) = self.bdp.forward_train_pure(x, rng)?;
        let (yc, bdc) = self.bdc.forward_train_pure(x, rng)?;
        let power = softmax_blocks(&yp, self.n_levels);
        let channel = softmax_blocks(&yc, self.n_channels);
        let out = BatchOutputs { power: power.clone(), channel: channel.clone(), feedback: None, broadcast: None };
        Ok((out, CentralizedCache { bdp, bdc, power, channel }))
    }

    pub fn update_running(&mut self, cache: &CentralizedCache) {
        self.bdp.update_running(&cache.bdp);
        self.bdc.update_running(&cache.bdc);
    }

    pub fn backward(&self, cache: &CentralizedCache, d_out: &BatchOutputs, grad: &mut CentralizedModel) {
        let dyp = softmax_blocks_backward(&cache.power, &d_out.power, self.n_levels);
        self.bdp.backward(&cache.bdp, dyp, &mut grad.bdp);
        let dyc = softmax_blocks_backward(&cache.channel, &d_out.channel, self.n_channels);
        self.bdc.backward(&cache.bdc, dyc, &mut grad.bdc);
    }

    pub fn infer(&self, x: ArrayView2<f64>) -> Result<BatchOutputs> {
        self.check_input(&x)?;
        let power = softmax_blocks(&self.bdp.forward_infer(x)?, self.n_levels);
        let channel = softmax_blocks(&self.bdc.forward_infer(x)?, self.n_channels);
        Ok(BatchOutputs { power, channel, feedback: None, broadcast: None })
    }
}

impl Parameters for CentralizedModel {
    fn trainable(&self) -> Vec<&[f64]> {
        let mut v = self.bdp.trainable();
        v.extend(self.bdc.trainable());
        v
    }

    fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.bdp.trainable_mut();
        v.extend(self.bdc.trainable_mut());
        v
    }

    fn export(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.bdp.export(&join(prefix, "bdp"), out);
        self.bdc.export(&join(prefix, "bdc"), out);
    }

    fn import(&mut self, prefix: &str, tensors: &TensorMap) -> Result<()> {
        self.bdp.import(&join(prefix, "bdp"), tensors)?;
        self.bdc.import(&join(prefix, "bdc"), tensors)
    }
}
