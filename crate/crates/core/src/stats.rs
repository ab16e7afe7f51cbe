//! Per-entry log-domain statistics and input normalization.

use ndarray::Array2;

use crate::channel::ChannelSample;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-6;

/// Mean and population standard deviation of `log10 h` for every entry of
/// the gain tensor, in the same `(k, rx, tx)` order as [`ChannelSample`].
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub n_tps: usize,
    pub n_channels: usize,
    pub mean_log10: Vec<f64>,
    pub std_log10: Vec<f64>,
}

pub fn compute_stats(samples: &[ChannelSample]) -> Result<DatasetStats> {
    if samples.len() < 2 {
        return Err(Error::EmptyDataset { needed: 2, got: samples.len() });
    }
    let (n_tps, n_channels) = (samples[0].n_tps(), samples[0].n_channels());
    let len = samples[0].gains().len();
    if samples.iter().any(|s| s.n_tps() != n_tps || s.n_channels() != n_channels) {
        return Err(Error::ShapeMismatch("samples disagree on N or K".into()));
    }
    let m = samples.len() as f64;
    let mut mean = vec![0.0; len];
    for s in samples {
        for (acc, g) in mean.iter_mut().zip(s.gains()) {
            *acc += g.log10();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0.0; len];
    for s in samples {
        for ((acc, g), mu) in var.iter_mut().zip(s.gains()).zip(&mean) {
            let d = g.log10() - mu;
            *acc += d * d;
        }
    }
    let std_log10 = var.into_iter().map(|v| (v / m).sqrt().max(STD_FLOOR)).collect();
    Ok(DatasetStats { n_tps, n_channels, mean_log10: mean, std_log10 })
}

impl DatasetStats {
    pub fn len(&self) -> usize {
        self.mean_log10.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_log10.is_empty()
    }

    fn check(&self, sample: &ChannelSample) -> Result<()> {
        if sample.n_tps() != self.n_tps || sample.n_channels() != self.n_channels {
            return Err(Error::ShapeMismatch(format!(
                "stats are for N={}, K={}; sample is N={}, K={}",
                self.n_tps,
                self.n_channels,
                sample.n_tps(),
                sample.n_channels()
            )));
        }
        Ok(())
    }
}

/// `(log10 h - mean) / std`, elementwise.
pub fn preprocess(sample: &ChannelSample, stats: &DatasetStats) -> Result<Vec<f64>> {
    stats.check(sample)?;
    Ok(sample
        .gains()
        .iter()
        .zip(stats.mean_log10.iter().zip(&stats.std_log10))
        .map(|(g, (mu, sd))| (g.log10() - mu) / sd)
        .collect())
}

/// Preprocess a batch into a `samples x K(N+1)^2` matrix.
pub fn preprocess_batch<'a, I>(samples: I, stats: &DatasetStats) -> Result<Array2<f64>>
where
    I: IntoIterator<Item = &'a ChannelSample>,
{
    let mut data = Vec::new();
    let mut rows = 0;
    for s in samples {
        data.extend(preprocess(s, stats)?);
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, stats.len()), data).expect("row length matches stats"))
}
