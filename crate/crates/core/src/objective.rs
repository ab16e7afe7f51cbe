//! Spectral efficiency, energy efficiency and CUE QoS arithmetic.
//!
//! Hard allocations and relaxed network outputs both reduce to an
//! [`Effective`] plan: a per-pair channel weight matrix and a per-pair
//! transmit power. The rate formulas only ever see that plan, so a one-hot
//! relaxed output scores exactly like the matching hard allocation.

use ndarray::{Array1, Array2};

use crate::channel::ChannelSample;
use crate::config::SystemConfig;
use crate::error::{Error, Result};

/// Hard per-pair decision. Idle is `power_idx == 0`, and in canonical form an
/// idle pair always reports `channel_idx == 0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Allocation {
    pub channel_idx: Vec<usize>,
    pub power_idx: Vec<usize>,
}

impl Allocation {
    /// Canonicalizes as it builds.
    pub fn new(channel_idx: Vec<usize>, power_idx: Vec<usize>) -> Self {
        let mut a = Allocation { channel_idx, power_idx };
        a.canonicalize();
        a
    }

    pub fn idle(n_tps: usize) -> Self {
        Allocation { channel_idx: vec![0; n_tps], power_idx: vec![0; n_tps] }
    }

    pub fn n_tps(&self) -> usize {
        self.channel_idx.len()
    }

    pub fn canonicalize(&mut self) {
        for (c, p) in self.channel_idx.iter_mut().zip(&self.power_idx) {
            if *p == 0 {
                *c = 0;
            }
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.channel_idx.iter().zip(&self.power_idx).all(|(c, p)| *p != 0 || *c == 0)
    }

    pub fn check(&self, config: &SystemConfig) -> Result<()> {
        if self.channel_idx.len() != config.n_tps || self.power_idx.len() != config.n_tps {
            return Err(Error::ShapeMismatch(format!(
                "allocation covers {} pairs, config has {}",
                self.channel_idx.len(),
                config.n_tps
            )));
        }
        if self.channel_idx.iter().any(|&c| c >= config.n_channels)
            || self.power_idx.iter().any(|&p| p >= config.n_power_levels)
        {
            return Err(Error::ShapeMismatch("allocation index out of range".into()));
        }
        Ok(())
    }
}

/// Relaxed outputs for one sample: softmax rows over power levels and
/// channels, plus the feedback/broadcast sigmoids of the distributed model.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftOutputs {
    /// `N x N_P`
    pub power_probs: Array2<f64>,
    /// `N x K`
    pub channel_probs: Array2<f64>,
    /// `N x B_F`
    pub feedback: Option<Array2<f64>>,
    /// `B_B`
    pub broadcast: Option<Array1<f64>>,
}

impl SoftOutputs {
    /// One-hot outputs reproducing a hard allocation.
    pub fn one_hot(alloc: &Allocation, config: &SystemConfig) -> Self {
        let n = alloc.n_tps();
        let mut power_probs = Array2::zeros((n, config.n_power_levels));
        let mut channel_probs = Array2::zeros((n, config.n_channels));
        for i in 0..n {
            power_probs[[i, alloc.power_idx[i]]] = 1.0;
            channel_probs[[i, alloc.channel_idx[i]]] = 1.0;
        }
        SoftOutputs { power_probs, channel_probs, feedback: None, broadcast: None }
    }

    /// Every relaxed value, in the order power, channel, feedback, broadcast.
    pub fn relaxed_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.power_probs
            .iter()
            .chain(self.channel_probs.iter())
            .chain(self.feedback.iter().flat_map(|f| f.iter()))
            .chain(self.broadcast.iter().flat_map(|b| b.iter()))
            .copied()
    }

    pub fn check(&self, config: &SystemConfig) -> Result<()> {
        let (n, k, np) = (config.n_tps, config.n_channels, config.n_power_levels);
        if self.power_probs.dim() != (n, np) || self.channel_probs.dim() != (n, k) {
            return Err(Error::ShapeMismatch(format!(
                "soft outputs are {:?} / {:?}, expected ({n}, {np}) / ({n}, {k})",
                self.power_probs.dim(),
                self.channel_probs.dim()
            )));
        }
        Ok(())
    }
}

/// Channel weights `a[i][k]` and transmit powers `p[i]` in watts.
#[derive(Debug, Clone, PartialEq)]
pub struct Effective {
    pub assign: Array2<f64>,
    pub power: Vec<f64>,
}

/// Anything that can be scored by the rate formulas.
pub trait Decision {
    fn effective(&self, config: &SystemConfig) -> Result<Effective>;
}

impl Decision for Allocation {
    fn effective(&self, config: &SystemConfig) -> Result<Effective> {
        self.check(config)?;
        let mut assign = Array2::zeros((config.n_tps, config.n_channels));
        for (i, &c) in self.channel_idx.iter().enumerate() {
            assign[[i, c]] = 1.0;
        }
        let power = self.power_idx.iter().map(|&j| config.power_levels[j]).collect();
        Ok(Effective { assign, power })
    }
}

impl Decision for SoftOutputs {
    /// Training relaxation: `p_i = sum_j P_j * p_hat_ij`, channel weights are
    /// the softmax outputs themselves.
    fn effective(&self, config: &SystemConfig) -> Result<Effective> {
        self.check(config)?;
        let power = self
            .power_probs
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(&config.power_levels).map(|(q, p)| q * p).sum())
            .collect();
        Ok(Effective { assign: self.channel_probs.clone(), power })
    }
}

/// Per-pair, per-channel SE and per-channel CUE SE for one plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    /// `N x K`; for a hard plan only the chosen channel is non-zero.
    pub d2d: Array2<f64>,
    /// `K`
    pub cue: Vec<f64>,
}

impl Rates {
    pub fn d2d_per_tp(&self) -> Vec<f64> {
        self.d2d.rows().into_iter().map(|r| r.sum()).collect()
    }

    pub fn sum_d2d(&self) -> f64 {
        self.d2d_per_tp().iter().sum()
    }
}

/// Rates under `eff`. The accumulation order here is mirrored by the
/// exhaustive search so both produce bit-identical values.
pub fn rates(sample: &ChannelSample, eff: &Effective, config: &SystemConfig) -> Result<Rates> {
    sample.check_dims(config)?;
    let (n, k_count) = (config.n_tps, config.n_channels);
    if eff.assign.dim() != (n, k_count) || eff.power.len() != n {
        return Err(Error::ShapeMismatch("effective plan does not match config".into()));
    }
    let n0w = config.noise_power();
    let pc = config.p_cue_watts;
    let mut d2d = Array2::zeros((n, k_count));
    let mut cue = Vec::with_capacity(k_count);
    for k in 0..k_count {
        for i in 0..n {
            let rx = i + 1;
            let mut den = n0w;
            for l in 0..n {
                if l != i {
                    den += sample.gain(k, rx, l + 1) * eff.assign[[l, k]] * eff.power[l];
                }
            }
            den += sample.gain(k, rx, 0) * pc;
            let signal = sample.gain(k, rx, rx) * eff.assign[[i, k]] * eff.power[i];
            d2d[[i, k]] = (1.0 + signal / den).log2();
        }
        let mut den = n0w;
        for l in 0..n {
            den += sample.gain(k, 0, l + 1) * eff.assign[[l, k]] * eff.power[l];
        }
        cue.push((1.0 + sample.gain(k, 0, 0) * pc / den).log2());
    }
    Ok(Rates { d2d, cue })
}

/// Per-pair SE in bits/s/Hz.
pub fn se_d2d(sample: &ChannelSample, decision: &impl Decision, config: &SystemConfig) -> Result<Vec<f64>> {
    let eff = decision.effective(config)?;
    Ok(rates(sample, &eff, config)?.d2d_per_tp())
}

/// Per-channel CUE SE in bits/s/Hz.
pub fn se_cue(sample: &ChannelSample, decision: &impl Decision, config: &SystemConfig) -> Result<Vec<f64>> {
    let eff = decision.effective(config)?;
    Ok(rates(sample, &eff, config)?.cue)
}

/// Per-channel QoS check `SE_0^k >= SE_thr`.
pub fn qos_ok(sample: &ChannelSample, decision: &impl Decision, config: &SystemConfig) -> Result<Vec<bool>> {
    Ok(se_cue(sample, decision, config)?.into_iter().map(|se| se >= config.se_threshold).collect())
}

/// Per-pair EE, `SE_i / (p_i + P_CIR)`, in bits/s/Hz/W.
pub fn ee_d2d(sample: &ChannelSample, decision: &impl Decision, config: &SystemConfig) -> Result<Vec<f64>> {
    let eff = decision.effective(config)?;
    let se = rates(sample, &eff, config)?.d2d_per_tp();
    ee_from_se(&se, &eff.power, config)
}

pub(crate) fn ee_from_se(se: &[f64], power: &[f64], config: &SystemConfig) -> Result<Vec<f64>> {
    se.iter()
        .zip(power)
        .map(|(s, p)| {
            let den = p + config.p_cir_watts;
            if den > 0.0 {
                Ok(s / den)
            } else {
                Err(Error::InvalidConfig("EE needs p_cir_watts > 0 when a pair is idle".into()))
            }
        })
        .collect()
}
