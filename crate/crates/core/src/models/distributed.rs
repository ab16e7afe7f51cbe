//! One feedback round: every pair encodes its local view into `B_F` bits,
//! the BS encodes its own view plus all feedback into `B_B` broadcast bits,
//! and every pair then decides from its local view plus the broadcast.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::centralized::head_spec;
use super::{join, Architecture, BatchOutputs, BitMode};
use crate::channel::local_indices;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::nn::layers::{sigmoid, sigmoid_backward, softmax_blocks, softmax_blocks_backward};
use crate::nn::{BasicModule, ModuleCache, NamedTensor, Parameters, TensorMap};
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedModel {
    pub n_tps: usize,
    pub n_channels: usize,
    pub n_levels: usize,
    pub bf_bits: usize,
    pub bb_bits: usize,
    /// Per pair: local view -> feedback logits.
    pub bdf: Vec<BasicModule>,
    /// BS: own view plus all feedback -> broadcast logits.
    pub bdn: BasicModule,
    /// Per pair: local view plus broadcast -> power logits.
    pub bdp: Vec<BasicModule>,
    /// Per pair: local view plus broadcast -> channel logits.
    pub bdc: Vec<BasicModule>,
}

#[derive(Debug, Clone)]
pub struct DistributedCache {
    bdf: Vec<ModuleCache>,
    feedback: Vec<Array2<f64>>,
    bdn: ModuleCache,
    broadcast: Array2<f64>,
    bdp: Vec<ModuleCache>,
    bdc: Vec<ModuleCache>,
    power: Vec<Array2<f64>>,
    channel: Vec<Array2<f64>>,
}

fn sigmoid_all(y: &Array2<f64>) -> Array2<f64> {
    y.mapv(sigmoid)
}

fn threshold(b: &Array2<f64>) -> Array2<f64> {
    b.mapv(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

impl DistributedModel {
    pub fn init(arch: Architecture, config: &SystemConfig, rng: &mut Stream) -> Result<Self> {
        let (n, k, np) = (config.n_tps, config.n_channels, config.n_power_levels);
        let (bf, bb, local) = (config.bf_bits, config.bb_bits, config.local_len());
        let bdf = (0..n).map(|_| BasicModule::init(head_spec(arch, local, bf), rng)).collect::<Result<_>>()?;
        let bdn = BasicModule::init(head_spec(arch, local + n * bf, bb), rng)?;
        let bdp = (0..n).map(|_| BasicModule::init(head_spec(arch, local + bb, np), rng)).collect::<Result<_>>()?;
        let bdc = (0..n).map(|_| BasicModule::init(head_spec(arch, local + bb, k), rng)).collect::<Result<_>>()?;
        Ok(DistributedModel { n_tps: n, n_channels: k, n_levels: np, bf_bits: bf, bb_bits: bb, bdf, bdn, bdp, bdc })
    }

    pub fn architecture(&self) -> Architecture {
        let s = self.bdn.spec;
        Architecture { n_units: s.n_units, hidden_width: s.hidden_width, dropout_rate: s.dropout_rate }
    }

    pub fn zeros_like(&self) -> Self {
        let zeros = |v: &[BasicModule]| v.iter().map(BasicModule::zeros_like).collect();
        DistributedModel {
            bdf: zeros(&self.bdf),
            bdn: self.bdn.zeros_like(),
            bdp: zeros(&self.bdp),
            bdc: zeros(&self.bdc),
            ..*self
        }
    }

    fn local_len(&self) -> usize {
        self.n_channels * (self.n_tps + 1)
    }

    /// Splits a batch of full tensors into each node's local view; entry 0
    /// is the BS, entry `i + 1` is pair `i`.
    fn local_views(&self, x: ArrayView2<f64>) -> Result<Vec<Array2<f64>>> {
        let full = self.n_channels * (self.n_tps + 1) * (self.n_tps + 1);
        if x.ncols() != full {
            return Err(Error::ShapeMismatch(format!("distributed model expects {full} inputs per sample, got {}", x.ncols())));
        }
        Ok((0..=self.n_tps)
            .map(|node| {
                let idx: Vec<usize> = local_indices(self.n_tps, self.n_channels, node).collect();
                x.select(Axis(1), &idx)
            })
            .collect())
    }

    pub fn forward_train(&self, x: ArrayView2<f64>, rng: &mut Stream) -> Result<(BatchOutputs, DistributedCache)> {
        let views = self.local_views(x)?;
        let n = self.n_tps;

        // pairs -> BS
        let mut bdf = Vec::with_capacity(n);
        let mut feedback = Vec::with_capacity(n);
        for i in 0..n {
            let (y, c) = self.bdf[i].forward_train_pure(views[i + 1].view(), rng)?;
            feedback.push(sigmoid_all(&y));
            bdf.push(c);
        }

        // BS -> pairs
        let mut bs_in = vec![views[0].view()];
        bs_in.extend(feedback.iter().map(|b| b.view()));
        let (y, bdn) = self.bdn.forward_train_pure(concatenate(Axis(1), &bs_in).expect("same batch").view(), rng)?;
        let broadcast = sigmoid_all(&y);

        let mut bdp = Vec::with_capacity(n);
        let mut bdc = Vec::with_capacity(n);
        let mut power = Vec::with_capacity(n);
        let mut channel = Vec::with_capacity(n);
        for i in 0..n {
            let tp_in = concatenate(Axis(1), &[views[i + 1].view(), broadcast.view()]).expect("same batch");
            let (yp, cp) = self.bdp[i].forward_train_pure(tp_in.view(), rng)?;
            let (yc, cc) = self.bdc[i].forward_train_pure(tp_in.view(), rng)?;
            power.push(softmax_blocks(&yp, self.n_levels));
            channel.push(softmax_blocks(&yc, self.n_channels));
            bdp.push(cp);
            bdc.push(cc);
        }

        let out = BatchOutputs {
            power: stack(&power),
            channel: stack(&channel),
            feedback: Some(stack(&feedback)),
            broadcast: Some(broadcast.clone()),
        };
        Ok((out, DistributedCache { bdf, feedback, bdn, broadcast, bdp, bdc, power, channel }))
    }

    pub fn update_running(&mut self, cache: &DistributedCache) {
        for (m, c) in self.bdf.iter_mut().zip(&cache.bdf) {
            m.update_running(c);
        }
        self.bdn.update_running(&cache.bdn);
        for (m, c) in self.bdp.iter_mut().zip(&cache.bdp) {
            m.update_running(c);
        }
        for (m, c) in self.bdc.iter_mut().zip(&cache.bdc) {
            m.update_running(c);
        }
    }

    pub fn backward(&self, cache: &DistributedCache, d_out: &BatchOutputs, grad: &mut DistributedModel) {
        let (n, np, k, bf, local) = (self.n_tps, self.n_levels, self.n_channels, self.bf_bits, self.local_len());
        let mut d_broadcast = match &d_out.broadcast {
            Some(d) => d.clone(),
            None => Array2::zeros(cache.broadcast.dim()),
        };
        for i in 0..n {
            let dp = d_out.power.slice(s![.., i * np..(i + 1) * np]).to_owned();
            let dx = self.bdp[i].backward(&cache.bdp[i], softmax_blocks_backward(&cache.power[i], &dp, np), &mut grad.bdp[i]);
            d_broadcast += &dx.slice(s![.., local..]);
            let dc = d_out.channel.slice(s![.., i * k..(i + 1) * k]).to_owned();
            let dx = self.bdc[i].backward(&cache.bdc[i], softmax_blocks_backward(&cache.channel[i], &dc, k), &mut grad.bdc[i]);
            d_broadcast += &dx.slice(s![.., local..]);
        }
        let dy = sigmoid_backward(&cache.broadcast, &d_broadcast);
        let dz = self.bdn.backward(&cache.bdn, dy, &mut grad.bdn);
        for i in 0..n {
            let mut db = dz.slice(s![.., local + i * bf..local + (i + 1) * bf]).to_owned();
            if let Some(d) = &d_out.feedback {
                db += &d.slice(s![.., i * bf..(i + 1) * bf]);
            }
            let dy = sigmoid_backward(&cache.feedback[i], &db);
            self.bdf[i].backward(&cache.bdf[i], dy, &mut grad.bdf[i]);
        }
    }

    /// Inference-mode forward. In hard mode only thresholded bits cross
    /// node boundaries; the returned feedback/broadcast are the pre-threshold
    /// sigmoid values.
    pub fn infer(&self, x: ArrayView2<f64>, bits: BitMode) -> Result<BatchOutputs> {
        let views = self.local_views(x)?;
        let n = self.n_tps;
        let send = |b: &Array2<f64>| match bits {
            BitMode::Soft => b.clone(),
            BitMode::Hard => threshold(b),
        };

        let mut feedback = Vec::with_capacity(n);
        for i in 0..n {
            feedback.push(sigmoid_all(&self.bdf[i].forward_infer(views[i + 1].view())?));
        }
        let sent: Vec<Array2<f64>> = feedback.iter().map(send).collect();
        let mut bs_in = vec![views[0].view()];
        bs_in.extend(sent.iter().map(|b| b.view()));
        let broadcast = sigmoid_all(&self.bdn.forward_infer(concatenate(Axis(1), &bs_in).expect("same batch").view())?);
        let received = send(&broadcast);

        let mut power = Vec::with_capacity(n);
        let mut channel = Vec::with_capacity(n);
        for i in 0..n {
            let tp_in = concatenate(Axis(1), &[views[i + 1].view(), received.view()]).expect("same batch");
            power.push(softmax_blocks(&self.bdp[i].forward_infer(tp_in.view())?, self.n_levels));
            channel.push(softmax_blocks(&self.bdc[i].forward_infer(tp_in.view())?, self.n_channels));
        }
        Ok(BatchOutputs {
            power: stack(&power),
            channel: stack(&channel),
            feedback: Some(stack(&feedback)),
            broadcast: Some(broadcast),
        })
    }
}

fn stack(blocks: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(1), &views).expect("same batch")
}

impl Parameters for DistributedModel {
    fn trainable(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        self.bdf.iter().for_each(|m| v.extend(m.trainable()));
        v.extend(self.bdn.trainable());
        self.bdp.iter().for_each(|m| v.extend(m.trainable()));
        self.bdc.iter().for_each(|m| v.extend(m.trainable()));
        v
    }

    fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        self.bdf.iter_mut().for_each(|m| v.extend(m.trainable_mut()));
        v.extend(self.bdn.trainable_mut());
        self.bdp.iter_mut().for_each(|m| v.extend(m.trainable_mut()));
        self.bdc.iter_mut().for_each(|m| v.extend(m.trainable_mut()));
        v
    }

    fn export(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        for (i, m) in self.bdf.iter().enumerate() {
            m.export(&join(prefix, &format!("tp{i}.bdf")), out);
        }
        self.bdn.export(&join(prefix, "bs.bdn"), out);
        for (i, m) in self.bdp.iter().enumerate() {
            m.export(&join(prefix, &format!("tp{i}.bdp")), out);
        }
        for (i, m) in self.bdc.iter().enumerate() {
            m.export(&join(prefix, &format!("tp{i}.bdc")), out);
        }
    }

    fn import(&mut self, prefix: &str, tensors: &TensorMap) -> Result<()> {
        for (i, m) in self.bdf.iter_mut().enumerate() {
            m.import(&join(prefix, &format!("tp{i}.bdf")), tensors)?;
        }
        self.bdn.import(&join(prefix, "bs.bdn"), tensors)?;
        for (i, m) in self.bdp.iter_mut().enumerate() {
            m.import(&join(prefix, &format!("tp{i}.bdp")), tensors)?;
        }
        for (i, m) in self.bdc.iter_mut().enumerate() {
            m.import(&join(prefix, &format!("tp{i}.bdc")), tensors)?;
        }
        Ok(())
    }
}
