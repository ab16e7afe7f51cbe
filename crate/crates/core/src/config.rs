//! Scenario constants shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the allocator maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Sum spectral efficiency of the D2D pairs.
    SumSe,
    /// Sum energy efficiency, SE / (p + P_CIR).
    SumEe,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::SumSe => "sum-se",
            Objective::SumEe => "sum-ee",
        }
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum-se" | "se" => Ok(Objective::SumSe),
            "sum-ee" | "ee" => Ok(Objective::SumEe),
            other => Err(Error::InvalidConfig(format!("unknown objective {other:?}"))),
        }
    }
}

/// Cellular cell with `n_channels` uplink channels, one CUE per channel, and
/// `n_tps` D2D transmit pairs reusing them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub n_tps: usize,
    pub n_channels: usize,
    pub n_power_levels: usize,
    /// Watts, ascending, first entry zero and last entry `p_max_watts`.
    pub power_levels: Vec<f64>,
    pub p_max_watts: f64,
    pub p_cue_watts: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_w_per_hz: f64,
    pub se_threshold: f64,
    pub bf_bits: usize,
    pub bb_bits: usize,
    pub area_side_m: f64,
    pub pair_max_dist_m: f64,
    pub pl_coeff_log10: f64,
    pub pl_exponent: f64,
    pub p_cir_watts: f64,
    pub master_seed: u64,
}

/// Evenly spaced levels from 0 to `p_max` inclusive.
pub fn uniform_power_levels(n_levels: usize, p_max: f64) -> Vec<f64> {
    if n_levels < 2 {
        return vec![0.0; n_levels];
    }
    let step = (n_levels - 1) as f64;
    (0..n_levels)
        .map(|j| if j + 1 == n_levels { p_max } else { p_max * j as f64 / step })
        .collect()
}

impl Default for SystemConfig {
    /// The reference scenario: 3 pairs, 3 channels, 8 levels up to 200 mW,
    /// 10 MHz, -173 dBm/Hz, 100 m square, 30 m pair radius.
    fn default() -> Self {
        let p_max = 0.2;
        SystemConfig {
            n_tps: 3,
            n_channels: 3,
            n_power_levels: 8,
            power_levels: uniform_power_levels(8, p_max),
            p_max_watts: p_max,
            p_cue_watts: p_max,
            bandwidth_hz: 10e6,
            // -173 dBm/Hz
            noise_psd_w_per_hz: 10f64.powf(-20.3),
            se_threshold: 0.0,
            bf_bits: 12,
            bb_bits: 24,
            area_side_m: 100.0,
            pair_max_dist_m: 30.0,
            pl_coeff_log10: 3.453,
            pl_exponent: 3.8,
            p_cir_watts: 0.5,
            master_seed: 1,
        }
    }
}

impl SystemConfig {
    /// Same scenario with a different grid size; power levels are re-spread
    /// uniformly over `[0, p_max_watts]`.
    pub fn with_dims(mut self, n_tps: usize, n_channels: usize, n_power_levels: usize) -> Self {
        self.n_tps = n_tps;
        self.n_channels = n_channels;
        self.n_power_levels = n_power_levels;
        self.power_levels = uniform_power_levels(n_power_levels, self.p_max_watts);
        self
    }

    pub fn noise_power(&self) -> f64 {
        self.noise_psd_w_per_hz * self.bandwidth_hz
    }

    /// Number of gains in one channel realization, K(N+1)^2.
    pub fn gains_len(&self) -> usize {
        self.n_channels * (self.n_tps + 1) * (self.n_tps + 1)
    }

    /// Number of gains one node observes, K(N+1).
    pub fn local_len(&self) -> usize {
        self.n_channels * (self.n_tps + 1)
    }

    /// Bits exchanged in one distributed round, N*B_F + B_B.
    pub fn feedback_payload_bits(&self) -> usize {
        self.n_tps * self.bf_bits + self.bb_bits
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_tps < 1 || self.n_channels < 1 {
            return bad("n_tps and n_channels must be at least 1".into());
        }
        if self.n_power_levels < 2 {
            return bad("n_power_levels must be at least 2".into());
        }
        if self.bf_bits < 1 || self.bb_bits < 1 {
            return bad("bf_bits and bb_bits must be at least 1".into());
        }
        if self.power_levels.len() != self.n_power_levels {
            return bad(format!(
                "power_levels has {} entries, n_power_levels is {}",
                self.power_levels.len(),
                self.n_power_levels
            ));
        }
        if self.power_levels[0] != 0.0 {
            return bad("power_levels must start at 0".into());
        }
        if self.power_levels.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("power_levels must be strictly ascending".into());
        }
        if *self.power_levels.last().unwrap() != self.p_max_watts {
            return bad("last power level must equal p_max_watts".into());
        }
        if !(self.noise_power() > 0.0) || !self.noise_power().is_finite() {
            return bad("noise power N0*W must be positive".into());
        }
        if !(self.p_cue_watts >= 0.0) || !(self.p_cir_watts >= 0.0) {
            return bad("p_cue_watts and p_cir_watts must be non-negative".into());
        }
        if !(self.se_threshold >= 0.0) {
            return bad("se_threshold must be non-negative".into());
        }
        if !(self.area_side_m > 0.0) || !(self.pair_max_dist_m >= 0.0) {
            return bad("area_side_m must be positive and pair_max_dist_m non-negative".into());
        }
        if self.pair_max_dist_m > self.area_side_m * std::f64::consts::SQRT_2 {
            return bad("pair_max_dist_m exceeds the area diagonal".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_matches_reference_levels() {
        let cfg = SystemConfig::default();
        cfg.validate().unwrap();
        let mw: Vec<f64> = cfg.power_levels.iter().map(|p| p * 1e3).collect();
        let listed = [0.0, 28.57, 57.14, 85.71, 114.28, 142.85, 171.42, 200.0];
        for (got, want) in mw.iter().zip(listed) {
            assert!((got - want).abs() < 0.01, "{got} vs {want}");
        }
        assert_eq!(cfg.feedback_payload_bits(), 60);
        assert_eq!(cfg.gains_len(), 48);
    }

    #[test]
    fn rejects_bad_levels() {
        let mut cfg = SystemConfig::default();
        cfg.power_levels[3] = cfg.power_levels[2];
        assert!(cfg.validate().is_err());
        let mut cfg = SystemConfig::default();
        cfg.power_levels[0] = 0.01;
        assert!(cfg.validate().is_err());
        let mut cfg = SystemConfig::default();
        cfg.n_power_levels = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = SystemConfig::default();
        cfg.noise_psd_w_per_hz = 0.0;
        assert!(cfg.validate().is_err());
    }
}
