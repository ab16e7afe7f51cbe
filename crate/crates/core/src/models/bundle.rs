//! Model bundle: a directory holding the parameter file, a `key = value`
//! manifest, and the dataset statistics the model was trained against.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Architecture, Model, ModelKind};
use crate::config::{Objective, SystemConfig};
use crate::error::{Error, Result};
use crate::io::{decode_stats, sha256_hex, write_atomic};
use crate::nn::layers::{BN_EPSILON, BN_MOMENTUM};
use crate::nn::params::{decode_tensors, encode_tensors, tensor_map};
use crate::nn::Parameters;
use crate::rng::stream;
use crate::stats::DatasetStats;

pub const PARAMS_FILE: &str = "model.params";
pub const MANIFEST_FILE: &str = "model.manifest";
pub const STATS_FILE: &str = "stats.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub kind: ModelKind,
    pub objective: Objective,
    pub n_tps: usize,
    pub n_channels: usize,
    pub n_power_levels: usize,
    pub bf_bits: usize,
    pub bb_bits: usize,
    pub arch: Architecture,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub master_seed: u64,
    pub train_seed: u64,
    pub stats_sha256: String,
}

impl Manifest {
    pub fn new(model: &Model, objective: Objective, config: &SystemConfig, train_seed: u64, stats_bytes: &[u8]) -> Self {
        Manifest {
            kind: model.kind(),
            objective,
            n_tps: config.n_tps,
            n_channels: config.n_channels,
            n_power_levels: config.n_power_levels,
            bf_bits: config.bf_bits,
            bb_bits: config.bb_bits,
            arch: model.architecture(),
            bn_epsilon: BN_EPSILON,
            bn_momentum: BN_MOMENTUM,
            master_seed: config.master_seed,
            train_seed,
            stats_sha256: sha256_hex(stats_bytes),
        }
    }

    pub fn to_text(&self) -> String {
        let rows: [(&str, String); 15] = [
            ("kind", self.kind.as_str().into()),
            ("objective", self.objective.as_str().into()),
            ("n_tps", self.n_tps.to_string()),
            ("n_channels", self.n_channels.to_string()),
            ("n_power_levels", self.n_power_levels.to_string()),
            ("bf_bits", self.bf_bits.to_string()),
            ("bb_bits", self.bb_bits.to_string()),
            ("n_units", self.arch.n_units.to_string()),
            ("hidden_width", self.arch.hidden_width.to_string()),
            ("dropout_rate", self.arch.dropout_rate.to_string()),
            ("bn_epsilon", self.bn_epsilon.to_string()),
            ("bn_momentum", self.bn_momentum.to_string()),
            ("master_seed", self.master_seed.to_string()),
            ("train_seed", self.train_seed.to_string()),
            ("stats_sha256", self.stats_sha256.clone()),
        ];
        rows.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("manifest line {line:?}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| map.get(k).ok_or_else(|| Error::Format(format!("manifest is missing {k}")));
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Format(format!("manifest {k} = {v:?}")))
        }
        let m = Manifest {
            kind: get("kind")?.parse()?,
            objective: get("objective")?.parse()?,
            n_tps: num("n_tps", get("n_tps")?)?,
            n_channels: num("n_channels", get("n_channels")?)?,
            n_power_levels: num("n_power_levels", get("n_power_levels")?)?,
            bf_bits: num("bf_bits", get("bf_bits")?)?,
            bb_bits: num("bb_bits", get("bb_bits")?)?,
            arch: Architecture {
                n_units: num("n_units", get("n_units")?)?,
                hidden_width: num("hidden_width", get("hidden_width")?)?,
                dropout_rate: num("dropout_rate", get("dropout_rate")?)?,
            },
            bn_epsilon: num("bn_epsilon", get("bn_epsilon")?)?,
            bn_momentum: num("bn_momentum", get("bn_momentum")?)?,
            master_seed: num("master_seed", get("master_seed")?)?,
            train_seed: num("train_seed", get("train_seed")?)?,
            stats_sha256: get("stats_sha256")?.clone(),
        };
        if map.len() != 15 {
            return Err(Error::Format("manifest has unknown keys".into()));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub model: Model,
    pub manifest: Manifest,
    pub stats: DatasetStats,
}

pub fn save_bundle(dir: &Path, model: &Model, manifest: &Manifest, stats_bytes: &[u8]) -> Result<()> {
    let mut tensors = Vec::new();
    model.export("", &mut tensors);
    write_atomic(&dir.join(PARAMS_FILE), &encode_tensors(&tensors)?)?;
    write_atomic(&dir.join(MANIFEST_FILE), manifest.to_text().as_bytes())?;
    write_atomic(&dir.join(STATS_FILE), stats_bytes)?;
    Ok(())
}

/// Loads a bundle and checks it against `config` and its own stats file.
pub fn load_bundle(dir: &Path, config: &SystemConfig) -> Result<Bundle> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::MissingDependency(format!("no model bundle at {}", dir.display())));
    }
    let manifest = Manifest::parse(&fs::read_to_string(manifest_path)?)?;
    let stats_bytes = fs::read(dir.join(STATS_FILE))?;
    if sha256_hex(&stats_bytes) != manifest.stats_sha256 {
        return Err(Error::Format("bundle stats checksum does not match manifest".into()));
    }
    let stats = decode_stats(&stats_bytes)?;
    let dims = (manifest.n_tps, manifest.n_channels, manifest.n_power_levels, manifest.bf_bits, manifest.bb_bits);
    if dims != (config.n_tps, config.n_channels, config.n_power_levels, config.bf_bits, config.bb_bits) {
        return Err(Error::ShapeMismatch(format!("bundle dimensions {dims:?} do not match the configuration")));
    }
    if manifest.bn_epsilon != BN_EPSILON || manifest.bn_momentum != BN_MOMENTUM {
        return Err(Error::Format("bundle batch-norm constants differ from this build".into()));
    }
    // shapes come from a throwaway init; every tensor is then overwritten
    let mut model = Model::init(manifest.kind, manifest.arch, config, &mut stream(0, 0, 0))?;
    let tensors = tensor_map(decode_tensors(&fs::read(dir.join(PARAMS_FILE))?)?);
    let mut expected = Vec::new();
    model.export("", &mut expected);
    if expected.len() != tensors.0.len() {
        return Err(Error::Format(format!("bundle has {} tensors, model needs {}", tensors.0.len(), expected.len())));
    }
    model.import("", &tensors)?;
    Ok(Bundle { model, manifest, stats })
}
