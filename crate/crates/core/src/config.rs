//! Run configuration: TOML file layered over a named preset.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adversary::AdversaryConfig;
use crate::classifier::{ThresholdParams, TrainOptions};
use crate::consensus::ProtocolParams;
use crate::error::{Error, Result};
use crate::net::NetConfig;
use crate::reliability::{AgreementRule, ReliabilityParams};
use crate::workload::WorkloadConfig;

pub const SEED_ENV: &str = "HYBRIDCHAIN_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcedTie {
    #[default]
    Reject,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub m: usize,
    pub f: usize,
    pub mu1: f64,
    pub mu2: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub cadence: u64,
    /// Score validators with the XOR of own and majority verdicts instead
    /// of their agreement.
    #[serde(default)]
    pub xor_reliability: bool,
    #[serde(default)]
    pub forced_tie: ForcedTie,
    #[serde(default)]
    pub train: TrainOptions,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            m: 60,
            f: 4,
            mu1: 1.0,
            mu2: 0.5,
            zeta1: 0.98,
            zeta2: 0.9,
            cadence: 20,
            xor_reliability: false,
            forced_tie: ForcedTie::Reject,
            train: TrainOptions::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn params(&self) -> ProtocolParams {
        ProtocolParams {
            m: self.m,
            f: self.f,
            thresholds: ThresholdParams { mu1: self.mu1, mu2: self.mu2 },
            reliability: ReliabilityParams { zeta1: self.zeta1, zeta2: self.zeta2 },
            cadence: self.cadence,
            agreement: if self.xor_reliability { AgreementRule::LiteralXor } else { AgreementRule::Agreement },
            train: self.train,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    pub training_size: usize,
    pub heldout_size: usize,
    /// Load weights from this file instead of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PathBuf>,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { training_size: 10_000, heldout_size: 5_000, weights: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workload: WorkloadConfig,
    pub net: NetConfig,
    #[serde(default)]
    pub adversary: AdversaryConfig,
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 60 validators, 600 transactions per minute.
    #[default]
    Desk,
    /// 1000 validators, 6000 transactions per minute.
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::config(format!("unknown preset `{other}` (expected desk or paper)"))),
        }
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let desk = RunConfig {
            seed: 1,
            workload: WorkloadConfig { gamma: 600.0, duration: 5.0, ..Default::default() },
            net: NetConfig::default(),
            adversary: AdversaryConfig::default(),
            protocol: ProtocolConfig::default(),
            bootstrap: BootstrapConfig::default(),
            output_dir: None,
        };
        match preset {
            Preset::Desk => desk,
            Preset::Paper => RunConfig {
                workload: WorkloadConfig { gamma: 6000.0, genesis: 512, ..desk.workload },
                protocol: ProtocolConfig { m: 1000, f: 45, ..desk.protocol },
                ..desk
            },
        }
    }

    /// Parses `text` as overrides on top of `preset`. Unknown keys are
    /// rejected and the result is validated.
    pub fn from_toml(text: &str, preset: Preset) -> Result<Self> {
        let overrides: toml::Table = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        Self::from_overrides(overrides, preset)
    }

    pub fn from_overrides(overrides: toml::Table, preset: Preset) -> Result<Self> {
        let mut base = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::config(e.to_string()))?;
        merge(&mut base, overrides);
        let cfg: RunConfig = base.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Preset) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, preset)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Applies the seed environment override, if set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("{SEED_ENV} must be an unsigned integer, got `{raw}`")))?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.workload.validate()?;
        self.net.validate()?;
        self.protocol.params().validate()?;
        self.adversary.validate(self.protocol.m)?;
        let train = &self.protocol.train;
        if !(train.reg >= 0.0 && train.step > 0.0 && train.iterations >= 1) {
            return Err(Error::config("protocol.train needs reg >= 0, step > 0 and iterations >= 1"));
        }
        let dishonest = self.adversary.dishonest_count(self.protocol.m);
        if dishonest > 0 && self.adversary.withholds() && self.protocol.f < 1 {
            return Err(Error::config("withholding adversaries need f >= 1"));
        }
        if self.bootstrap.weights.is_none() && (self.bootstrap.training_size < 2 || self.bootstrap.heldout_size < 1) {
            return Err(Error::config("bootstrap.training_size must be >= 2 and heldout_size >= 1"));
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        RunConfig::preset(Preset::Desk).validate().unwrap();
        let large = RunConfig::preset(Preset::Paper);
        large.validate().unwrap();
        assert_eq!(large.protocol.m, 1000);
        assert_eq!(large.workload.gamma, 6000.0);
        assert_eq!(large.protocol.params().lambda(), 10);
    }

    #[test]
    fn overrides_layer_on_the_preset() {
        let cfg = RunConfig::from_toml("seed = 9\n[protocol]\nf = 2\n[adversary]\ntau = 0.1\n", Preset::Desk).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.protocol.f, 2);
        assert_eq!(cfg.protocol.m, 60);
        assert_eq!(cfg.adversary.tau, 0.1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[protocol]\nlambda = 3\n", Preset::Desk).is_err());
        assert!(RunConfig::from_toml("colour = 1\n", Preset::Desk).is_err());
    }

    #[test]
    fn f_bound_message() {
        let err = RunConfig::from_toml("[protocol]\nm = 10\nf = 5\n", Preset::Desk).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("floor(M/2) - 1"));
    }

    #[test]
    fn dump_and_load_round_trip() {
        let mut cfg = RunConfig::preset(Preset::Paper);
        cfg.workload.drain_minutes = Some(0.5);
        cfg.adversary.targets = Some(vec![1, 2]);
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text, Preset::Desk).unwrap(), cfg);
    }
}
