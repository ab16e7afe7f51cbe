//! Sectioned `key = value` run configuration (`[system]`, `[train]`,
//! `[eval]`), with dotted overrides applied before validation.

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::config::{uniform_power_levels, SystemConfig};
use crate::error::{Error, Result};
use crate::evaluation::Scheme;
use crate::oracle::DEFAULT_BUDGET;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub schemes: Vec<String>,
    /// Largest candidate count the exhaustive search may scan per sample.
    pub oracle_budget: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { schemes: vec!["oracle".into(), "random".into()], oracle_budget: DEFAULT_BUDGET as u64 }
    }
}

impl EvalConfig {
    pub fn schemes(&self) -> Result<Vec<Scheme>> {
        self.schemes.iter().map(|s| s.parse()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

fn parse_value(raw: &str) -> Value {
    // bare words that are not TOML literals are taken as strings
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

impl RunConfig {
    /// Parses `text`, applies `section.key=value` overrides in order, fills
    /// an omitted power grid uniformly, and validates.
    pub fn parse_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: Table = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        for o in overrides {
            let (path, raw) = o.split_once('=').ok_or_else(|| Error::InvalidConfig(format!("override {o:?} is not key=value")))?;
            let (section, key) = path
                .trim()
                .split_once('.')
                .ok_or_else(|| Error::InvalidConfig(format!("override key {path:?} needs a section, e.g. system.n_tps")))?;
            let entry = table.entry(section.to_string()).or_insert_with(|| Value::Table(Table::new()));
            let Value::Table(t) = entry else {
                return Err(Error::InvalidConfig(format!("{section} is not a section")));
            };
            t.insert(key.to_string(), parse_value(raw.trim()));
        }
        if let Some(Value::Table(sys)) = table.get_mut("system") {
            if !sys.contains_key("power_levels") {
                let d = SystemConfig::default();
                let n = sys.get("n_power_levels").and_then(Value::as_integer).map_or(d.n_power_levels, |v| v.max(0) as usize);
                let p = sys.get("p_max_watts").and_then(Value::as_float).unwrap_or(d.p_max_watts);
                sys.insert("power_levels".into(), Value::Array(uniform_power_levels(n, p).into_iter().map(Value::Float).collect()));
            }
        }
        let cfg: RunConfig = Table::try_into(table).map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, &[])
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.train.validate()?;
        self.eval.schemes()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::config::Objective;
    use crate::models::ModelKind;

    #[test]
    fn empty_text_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn default_roundtrips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("[system]\nn_tpz = 3\n").is_err());
        assert!(RunConfig::parse("[extra]\na = 1\n").is_err());
        assert!(RunConfig::parse_with("", &["train.nope=1".into()]).is_err());
    }

    #[test]
    fn overrides_win_and_respread_levels() {
        let c = RunConfig::parse_with(
            "[system]\nn_tps = 4\n",
            &["system.n_tps=2".into(), "system.n_power_levels=4".into(), "train.mode=distributed".into(), "train.objective=sum-ee".into()],
        )
        .unwrap();
        assert_eq!(c.system.n_tps, 2);
        assert_eq!(c.system.power_levels.len(), 4);
        assert_eq!(c.train.mode, ModelKind::Distributed);
        assert_eq!(c.train.objective, Objective::SumEe);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(RunConfig::parse("[train]\nzeta_ct = 2.0\n"), Err(Error::InvalidConfig(_))));
        assert!(matches!(RunConfig::parse("[eval]\nschemes = [\"best\"]\n"), Err(Error::InvalidConfig(_))));
        assert!(matches!(RunConfig::parse("[system]\nn_power_levels = 3\npower_levels = [0.0, 0.2]\n"), Err(Error::InvalidConfig(_))));
    }

    proptest! {
        #[test]
        fn print_parse_roundtrip(
            n in 1usize..6, k in 1usize..5, np in 2usize..9,
            thr in 0.0f64..4.0, zeta in 0.0f64..=1.0, lr in 1e-7f64..1e-1, seed in any::<u32>(),
        ) {
            let mut c = RunConfig::default();
            c.system = c.system.clone().with_dims(n, k, np);
            c.system.se_threshold = thr;
            c.system.master_seed = seed as u64;
            c.train.zeta_ct = zeta;
            c.train.lr_ft = lr;
            c.eval.schemes = vec!["naive".into()];
            prop_assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        }
    }
}
