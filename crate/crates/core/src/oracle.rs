//! Exhaustive search over every joint (channel, power level) strategy.
//!
//! Per pair the options are the canonical idle plus every (channel, nonzero
//! level) pair, `K (N_P - 1) + 1` in total. Candidates are numbered in mixed
//! radix with pair 0 as the most significant digit, so the candidate index
//! order is the lexicographic order of the `(channel_idx, power_idx)` vector
//! and "smallest index among maximizers" is the tie-break.

use rand::Rng;
use rayon::prelude::*;

use crate::channel::ChannelSample;
use crate::config::{Objective, SystemConfig};
use crate::error::{Error, Result};
use crate::objective::{rates, Allocation, Decision};
use crate::rng::Stream;

pub const DEFAULT_BUDGET: u128 = 10_000_000;

/// Number of distinct canonical joint strategies, `(K (N_P - 1) + 1)^N`.
/// Saturates at `u128::MAX`.
pub fn enumerate_count(config: &SystemConfig) -> u128 {
    let per_tp = (config.n_channels * config.n_power_levels.saturating_sub(1) + 1) as u128;
    per_tp.checked_pow(config.n_tps as u32).unwrap_or(u128::MAX)
}

/// Oracle output for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub sample_id: usize,
    pub optimal: Allocation,
    pub feasible: bool,
    pub optimal_sum_se: f64,
}

#[derive(Debug, Clone, Copy)]
struct TpOption {
    channel: usize,
    level: usize,
    watts: f64,
}

fn per_tp_options(config: &SystemConfig) -> Vec<TpOption> {
    let mut opts = vec![TpOption { channel: 0, level: 0, watts: 0.0 }];
    for channel in 0..config.n_channels {
        for level in 1..config.n_power_levels {
            opts.push(TpOption { channel, level, watts: config.power_levels[level] });
        }
    }
    opts
}

/// Decode candidate `index` into an allocation.
pub fn candidate(config: &SystemConfig, index: u128) -> Allocation {
    let opts = per_tp_options(config);
    let radix = opts.len() as u128;
    let mut digits = vec![0usize; config.n_tps];
    let mut rest = index;
    for d in digits.iter_mut().rev() {
        *d = (rest % radix) as usize;
        rest /= radix;
    }
    Allocation {
        channel_idx: digits.iter().map(|&d| opts[d].channel).collect(),
        power_idx: digits.iter().map(|&d| opts[d].level).collect(),
    }
}

/// Exhaustive maximizer of the sum SE or sum EE subject to CUE QoS on
/// every channel.
#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    pub objective: Objective,
    pub budget: u128,
}

impl Default for Oracle {
    fn default() -> Self {
        Oracle { objective: Objective::SumSe, budget: DEFAULT_BUDGET }
    }
}

/// Scratch state for scanning a contiguous candidate range.
struct Scanner<'a> {
    sample: &'a ChannelSample,
    config: &'a SystemConfig,
    objective: Objective,
    opts: Vec<TpOption>,
    cue_den: Vec<f64>,
}

impl<'a> Scanner<'a> {
    fn new(sample: &'a ChannelSample, config: &'a SystemConfig, objective: Objective) -> Self {
        Scanner {
            sample,
            config,
            objective,
            opts: per_tp_options(config),
            cue_den: vec![0.0; config.n_channels],
        }
    }

    /// Objective value of the candidate, or `None` if it violates QoS.
    /// Accumulation order matches [`crate::objective::rates`].
    fn score(&mut self, digits: &[usize]) -> Option<f64> {
        let (h, cfg) = (self.sample, self.config);
        let n0w = cfg.noise_power();
        let pc = cfg.p_cue_watts;
        for (k, den) in self.cue_den.iter_mut().enumerate() {
            *den = n0w;
            for (l, &d) in digits.iter().enumerate() {
                let o = self.opts[d];
                if o.channel == k {
                    *den += h.gain(k, 0, l + 1) * o.watts;
                }
            }
            let se0 = (1.0 + h.gain(k, 0, 0) * pc / *den).log2();
            if !(se0 >= cfg.se_threshold) {
                return None;
            }
        }
        let mut total = 0.0;
        for (i, &di) in digits.iter().enumerate() {
            let oi = self.opts[di];
            if oi.level == 0 {
                continue;
            }
            let (k, rx) = (oi.channel, i + 1);
            let mut den = n0w;
            for (l, &dl) in digits.iter().enumerate() {
                let ol = self.opts[dl];
                if l != i && ol.channel == k {
                    den += h.gain(k, rx, l + 1) * ol.watts;
                }
            }
            den += h.gain(k, rx, 0) * pc;
            let se = (1.0 + h.gain(k, rx, rx) * oi.watts / den).log2();
            total += match self.objective {
                Objective::SumSe => se,
                Objective::SumEe => se / (oi.watts + cfg.p_cir_watts),
            };
        }
        Some(total)
    }

    /// Best `(value, index)` over `[start, end)`; earliest index wins ties.
    fn scan(&mut self, start: u128, end: u128) -> Option<(f64, u128)> {
        let radix = self.opts.len();
        let n = self.config.n_tps;
        let mut digits = vec![0usize; n];
        let mut rest = start;
        for d in digits.iter_mut().rev() {
            *d = (rest % radix as u128) as usize;
            rest /= radix as u128;
        }
        let mut best: Option<(f64, u128)> = None;
        let mut idx = start;
        while idx < end {
            if let Some(v) = self.score(&digits) {
                if best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, idx));
                }
            }
            idx += 1;
            for d in digits.iter_mut().rev() {
                *d += 1;
                if *d < radix {
                    break;
                }
                *d = 0;
            }
        }
        best
    }
}

fn better(a: Option<(f64, u128)>, b: Option<(f64, u128)>) -> Option<(f64, u128)> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(x), Some(y)) => {
            if y.0 > x.0 || (y.0 == x.0 && y.1 < x.1) {
                Some(y)
            } else {
                Some(x)
            }
        }
    }
}

const PAR_CHUNK: u128 = 1 << 15;

impl Oracle {
    pub fn new(objective: Objective) -> Self {
        Oracle { objective, ..Oracle::default() }
    }

    fn check_budget(&self, config: &SystemConfig) -> Result<u128> {
        let count = enumerate_count(config);
        if count > self.budget {
            return Err(Error::BudgetExceeded { count, cap: self.budget });
        }
        Ok(count)
    }

    fn finish(&self, sample_id: usize, sample: &ChannelSample, config: &SystemConfig, best: Option<(f64, u128)>) -> Result<LabeledSample> {
        let (optimal, feasible) = match best {
            Some((_, idx)) => (candidate(config, idx), true),
            None => (Allocation::idle(config.n_tps), false),
        };
        let optimal_sum_se = rates(sample, &optimal.effective(config)?, config)?.sum_d2d();
        Ok(LabeledSample { sample_id, optimal, feasible, optimal_sum_se })
    }

    /// Single-threaded scan of every candidate.
    pub fn solve(&self, sample_id: usize, sample: &ChannelSample, config: &SystemConfig) -> Result<LabeledSample> {
        sample.check_dims(config)?;
        let count = self.check_budget(config)?;
        let best = Scanner::new(sample, config, self.objective).scan(0, count);
        self.finish(sample_id, sample, config, best)
    }

    /// Same result as [`Oracle::solve`], with the candidate range split
    /// across the rayon pool.
    pub fn solve_parallel(&self, sample_id: usize, sample: &ChannelSample, config: &SystemConfig) -> Result<LabeledSample> {
        sample.check_dims(config)?;
        let count = self.check_budget(config)?;
        let chunks = count.div_ceil(PAR_CHUNK) as u64;
        let best = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let start = c as u128 * PAR_CHUNK;
                let end = (start + PAR_CHUNK).min(count);
                Scanner::new(sample, config, self.objective).scan(start, end)
            })
            .reduce(|| None, better);
        self.finish(sample_id, sample, config, best)
    }

    /// Labels a whole dataset, parallel across samples.
    pub fn label_all(&self, samples: &[ChannelSample], config: &SystemConfig) -> Result<Vec<LabeledSample>> {
        self.check_budget(config)?;
        samples.par_iter().enumerate().map(|(i, s)| self.solve(i, s, config)).collect()
    }
}

/// Uniform independent channel and level per pair, canonicalized.
pub fn random_allocation(config: &SystemConfig, rng: &mut Stream) -> Allocation {
    let mut channel_idx = Vec::with_capacity(config.n_tps);
    let mut power_idx = Vec::with_capacity(config.n_tps);
    for _ in 0..config.n_tps {
        channel_idx.push(rng.random_range(0..config.n_channels));
        power_idx.push(rng.random_range(0..config.n_power_levels.max(1)));
    }
    Allocation::new(channel_idx, power_idx)
}
