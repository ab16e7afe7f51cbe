//! On-disk formats for datasets, statistics and labels.
//!
//! All three share one header: the 8-byte magic `D2DRA\0\x01\0` followed by
//! little-endian `u32` fields `N`, `K`, `sample_count`.
//!
//! * dataset: then `K (N+1)^2` little-endian `f64` gains per sample in
//!   `(k, rx, tx)` row-major order;
//! * stats: `sample_count = 0`, then the `mean_log10` tensor and the
//!   `std_log10` tensor in the same order;
//! * labels: per sample a `u8` feasible flag then, per pair, `u8`
//!   channel index and `u8` power index in canonical form.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::channel::ChannelSample;
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::objective::{rates, Allocation, Decision};
use crate::oracle::LabeledSample;
use crate::stats::DatasetStats;

pub const DATA_MAGIC: [u8; 8] = *b"D2DRA\x00\x01\x00";
const HEADER_LEN: usize = 8 + 12;

/// Writes through a sibling temp file and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::Format(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn header(out: &mut Vec<u8>, n: usize, k: usize, count: usize) {
    out.extend_from_slice(&DATA_MAGIC);
    for v in [n, k, count] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn header(&mut self) -> Result<(usize, usize, usize)> {
        if self.take(8)? != DATA_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        Ok((self.u32()? as usize, self.u32()? as usize, self.u32()? as usize))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn check_header(n: usize, k: usize) -> Result<()> {
    if n == 0 || k == 0 {
        return Err(Error::Format(format!("invalid dimensions N={n}, K={k}")));
    }
    Ok(())
}

/// Dataset header plus gains; every sample must have the same N and K.
pub fn encode_dataset(samples: &[ChannelSample], n_tps: usize, n_channels: usize) -> Result<Vec<u8>> {
    let len = n_channels * (n_tps + 1) * (n_tps + 1);
    let mut out = Vec::with_capacity(HEADER_LEN + samples.len() * len * 8);
    header(&mut out, n_tps, n_channels, samples.len());
    for s in samples {
        if s.n_tps() != n_tps || s.n_channels() != n_channels {
            return Err(Error::ShapeMismatch("dataset samples disagree on N or K".into()));
        }
        for g in s.gains() {
            out.extend_from_slice(&g.to_le_bytes());
        }
    }
    Ok(out)
}

pub struct Dataset {
    pub n_tps: usize,
    pub n_channels: usize,
    pub samples: Vec<ChannelSample>,
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    let (n, k, count) = r.header()?;
    check_header(n, k)?;
    let len = k * (n + 1) * (n + 1);
    let samples = (0..count)
        .map(|_| ChannelSample::new(n, k, r.f64s(len)?))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(Dataset { n_tps: n, n_channels: k, samples })
}

pub fn encode_stats(stats: &DatasetStats) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + stats.len() * 16);
    header(&mut out, stats.n_tps, stats.n_channels, 0);
    for v in stats.mean_log10.iter().chain(&stats.std_log10) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_stats(bytes: &[u8]) -> Result<DatasetStats> {
    let mut r = Reader::new(bytes);
    let (n, k, count) = r.header()?;
    check_header(n, k)?;
    if count != 0 {
        return Err(Error::Format("stats file must have sample_count = 0".into()));
    }
    let len = k * (n + 1) * (n + 1);
    let mean_log10 = r.f64s(len)?;
    let std_log10 = r.f64s(len)?;
    r.finish()?;
    if std_log10.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Format("stats std entries must be positive".into()));
    }
    Ok(DatasetStats { n_tps: n, n_channels: k, mean_log10, std_log10 })
}

pub fn encode_labels(labels: &[LabeledSample], n_tps: usize, n_channels: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + labels.len() * (1 + 2 * n_tps));
    header(&mut out, n_tps, n_channels, labels.len());
    for l in labels {
        if l.optimal.n_tps() != n_tps || !l.optimal.is_canonical() {
            return Err(Error::Format(format!("label {} is not a canonical {n_tps}-pair allocation", l.sample_id)));
        }
        out.push(l.feasible as u8);
        for (c, p) in l.optimal.channel_idx.iter().zip(&l.optimal.power_idx) {
            let (c, p) = (u8::try_from(*c), u8::try_from(*p));
            let (Ok(c), Ok(p)) = (c, p) else {
                return Err(Error::Format("label index does not fit in u8".into()));
            };
            out.extend_from_slice(&[c, p]);
        }
    }
    Ok(out)
}

/// Raw label records: `(feasible, allocation)` per sample.
pub fn decode_labels(bytes: &[u8]) -> Result<(usize, usize, Vec<(bool, Allocation)>)> {
    let mut r = Reader::new(bytes);
    let (n, k, count) = r.header()?;
    check_header(n, k)?;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let feasible = match r.u8()? {
            0 => false,
            1 => true,
            other => return Err(Error::Format(format!("label {i}: feasible flag {other}"))),
        };
        let mut channel_idx = Vec::with_capacity(n);
        let mut power_idx = Vec::with_capacity(n);
        for _ in 0..n {
            channel_idx.push(r.u8()? as usize);
            power_idx.push(r.u8()? as usize);
        }
        let a = Allocation { channel_idx, power_idx };
        if !a.is_canonical() {
            return Err(Error::Format(format!("label {i} is not canonical")));
        }
        out.push((feasible, a));
    }
    r.finish()?;
    Ok((n, k, out))
}

/// Rebuilds full labels against the dataset they were computed for.
pub fn attach_labels(records: Vec<(bool, Allocation)>, samples: &[ChannelSample], config: &SystemConfig) -> Result<Vec<LabeledSample>> {
    if records.len() != samples.len() {
        return Err(Error::ShapeMismatch(format!("{} labels for {} samples", records.len(), samples.len())));
    }
    records
        .into_iter()
        .zip(samples)
        .enumerate()
        .map(|(sample_id, ((feasible, optimal), s))| {
            let optimal_sum_se = rates(s, &optimal.effective(config)?, config)?.sum_d2d();
            Ok(LabeledSample { sample_id, optimal, feasible, optimal_sum_se })
        })
        .collect()
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

pub fn read_stats(path: &Path) -> Result<DatasetStats> {
    decode_stats(&fs::read(path)?)
}
