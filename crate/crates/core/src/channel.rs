//! Topology placement, path loss, and Rayleigh block fading.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Path gain is evaluated no closer than this distance.
pub const MIN_DISTANCE_M: f64 = 1.0;

const MAX_PLACEMENT_TRIES: usize = 10_000;

pub type Point = [f64; 2];

fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Node positions for one snapshot. The base station sits at the centre of
/// the square; CUE `k` owns channel `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub bs_pos: Point,
    pub cue_pos: Vec<Point>,
    pub tp_tx_pos: Vec<Point>,
    pub tp_rx_pos: Vec<Point>,
}

impl Topology {
    /// Position of transmitter `tx` (0 = CUE of channel `k`, i = D2D tx i).
    fn tx_pos(&self, k: usize, tx: usize) -> Point {
        if tx == 0 {
            self.cue_pos[k]
        } else {
            self.tp_tx_pos[tx - 1]
        }
    }

    /// Position of receiver `rx` (0 = BS, i = D2D rx i).
    fn rx_pos(&self, rx: usize) -> Point {
        if rx == 0 {
            self.bs_pos
        } else {
            self.tp_rx_pos[rx - 1]
        }
    }
}

fn uniform_point(side: f64, rng: &mut Stream) -> Point {
    [rng.random::<f64>() * side, rng.random::<f64>() * side]
}

pub fn sample_topology(config: &SystemConfig, rng: &mut Stream) -> Topology {
    let side = config.area_side_m;
    let radius = config.pair_max_dist_m;
    let cue_pos = (0..config.n_channels).map(|_| uniform_point(side, rng)).collect();
    let mut tp_tx_pos = Vec::with_capacity(config.n_tps);
    let mut tp_rx_pos = Vec::with_capacity(config.n_tps);
    for _ in 0..config.n_tps {
        let tx = uniform_point(side, rng);
        let rx = (0..MAX_PLACEMENT_TRIES)
            .find_map(|_| {
                // Uniform in the disc: radius ~ R sqrt(u).
                let r = radius * rng.random::<f64>().sqrt();
                let theta = std::f64::consts::TAU * rng.random::<f64>();
                let p = [tx[0] + r * theta.cos(), tx[1] + r * theta.sin()];
                let inside = (0.0..=side).contains(&p[0]) && (0.0..=side).contains(&p[1]);
                inside.then_some(p)
            })
            .expect("receiver placement exceeded retry cap");
        tp_tx_pos.push(tx);
        tp_rx_pos.push(rx);
    }
    Topology { bs_pos: [side / 2.0, side / 2.0], cue_pos, tp_tx_pos, tp_rx_pos }
}

/// Distance-dependent linear gain `10^-c * d^-alpha`, with `d` floored at
/// [`MIN_DISTANCE_M`].
pub fn path_gain(distance_m: f64, config: &SystemConfig) -> f64 {
    let d = distance_m.max(MIN_DISTANCE_M);
    10f64.powf(-config.pl_coeff_log10) * d.powf(-config.pl_exponent)
}

/// Flat indices of `h[k][node][tx]` for every channel and transmitter, the
/// gains `node` measures at its own receiver. Node 0 is the BS.
pub fn local_indices(n_tps: usize, n_channels: usize, node: usize) -> impl Iterator<Item = usize> {
    let n1 = n_tps + 1;
    (0..n_channels).flat_map(move |k| (0..n1).map(move |tx| (k * n1 + node) * n1 + tx))
}

/// One realization of every link gain, stored as `h[k][rx][tx]` in row-major
/// order. Receiver 0 is the BS, transmitter 0 is the CUE of channel `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    n_tps: usize,
    n_channels: usize,
    gains: Vec<f64>,
}

impl ChannelSample {
    pub fn new(n_tps: usize, n_channels: usize, gains: Vec<f64>) -> Result<Self> {
        let expected = n_channels * (n_tps + 1) * (n_tps + 1);
        if gains.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "expected {expected} gains for N={n_tps}, K={n_channels}, got {}",
                gains.len()
            )));
        }
        if let Some(bad) = gains.iter().find(|g| !(g.is_finite() && **g > 0.0)) {
            return Err(Error::ShapeMismatch(format!("gain {bad} is not finite and positive")));
        }
        Ok(ChannelSample { n_tps, n_channels, gains })
    }

    pub fn n_tps(&self) -> usize {
        self.n_tps
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    #[inline]
    pub fn index(&self, k: usize, rx: usize, tx: usize) -> usize {
        let n1 = self.n_tps + 1;
        (k * n1 + rx) * n1 + tx
    }

    #[inline]
    pub fn gain(&self, k: usize, rx: usize, tx: usize) -> f64 {
        self.gains[self.index(k, rx, tx)]
    }

    /// Indices into the flat gain vector of what `node` measures at its own
    /// receiver: `h[k][node][tx]` for every channel and transmitter.
    pub fn local_indices(&self, node: usize) -> impl Iterator<Item = usize> {
        local_indices(self.n_tps, self.n_channels, node)
    }

    pub fn local_csi(&self, node: usize) -> Vec<f64> {
        self.local_indices(node).map(|i| self.gains[i]).collect()
    }

    pub fn check_dims(&self, config: &SystemConfig) -> Result<()> {
        if self.n_tps != config.n_tps || self.n_channels != config.n_channels {
            return Err(Error::ShapeMismatch(format!(
                "sample is N={}, K={}; config is N={}, K={}",
                self.n_tps, self.n_channels, config.n_tps, config.n_channels
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> ChannelSample {
        ChannelSample {
            n_tps: self.n_tps,
            n_channels: self.n_channels,
            gains: self.gains.iter().map(|g| g * c).collect(),
        }
    }
}

pub fn sample_channel(topology: &Topology, config: &SystemConfig, rng: &mut Stream) -> ChannelSample {
    let n1 = config.n_tps + 1;
    let mut gains = Vec::with_capacity(config.gains_len());
    for k in 0..config.n_channels {
        for rx in 0..n1 {
            for tx in 0..n1 {
                let d = distance(topology.tx_pos(k, tx), topology.rx_pos(rx));
                let fading: f64 = Exp1.sample(rng);
                // Gains stay strictly positive so log10 is always defined.
                gains.push(path_gain(d, config) * fading.max(f64::MIN_POSITIVE));
            }
        }
    }
    ChannelSample { n_tps: config.n_tps, n_channels: config.n_channels, gains }
}

/// Sample `index` of the dataset defined by `config.master_seed`.
pub fn generate_sample(config: &SystemConfig, index: u64) -> ChannelSample {
    let mut topo_rng = rng::stream(config.master_seed, rng::domain::TOPOLOGY, index);
    let mut fade_rng = rng::stream(config.master_seed, rng::domain::FADING, index);
    let topology = sample_topology(config, &mut topo_rng);
    sample_channel(&topology, config, &mut fade_rng)
}

/// `count` samples, generated in parallel; identical for any thread count.
pub fn generate_dataset(config: &SystemConfig, count: usize) -> Vec<ChannelSample> {
    (0..count as u64).into_par_iter().map(|i| generate_sample(config, i)).collect()
}
