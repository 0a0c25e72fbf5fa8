// SPDX-License-Identifier: Apache-2.0

//! The versioned run configuration shared by every CLI subcommand.

use serde::{Deserialize, Serialize};

use crate::codegen::CodegenConfig;
use crate::estimator::EstimatorConfig;
use crate::fixed_point::FixedSpec;
use crate::pruning::PruneSchedule;
use crate::scan::ScanConfig;
use crate::trainer::{QuantizerSpec, SyntheticConfig, TrainingConfig};

pub const CONFIG_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Fraction of samples used for training; the rest is held out.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.75,
            seed: 1,
        }
    }
}

/// Network built when no model is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub name: String,
    pub hidden: Vec<usize>,
    pub init_seed: u64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            name: "jet".into(),
            hidden: vec![64, 32, 32],
            init_seed: 3,
        }
    }
}

/// Input, accumulator and result formats applied to every layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatapathConfig {
    pub input: FixedSpec,
    pub accumulator: FixedSpec,
    pub result: FixedSpec,
}

impl Default for DatapathConfig {
    fn default() -> Self {
        let s = ScanConfig::default();
        Self {
            input: s.input_spec,
            accumulator: s.accumulator_spec,
            result: s.result_spec,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub bits: Vec<u32>,
    #[serde(default)]
    pub qat_from_float: bool,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            bits: ScanConfig::default().bits,
            qat_from_float: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub config_version: String,
    /// Overrides the training, split and initialization seeds when set.
    pub seed: Option<u64>,
    pub training: TrainingConfig,
    pub synthetic: SyntheticConfig,
    pub split: SplitConfig,
    pub architecture: ArchitectureConfig,
    /// Quantizer for `qat` and for QAP retraining.
    pub quantizer: QuantizerSpec,
    pub prune: PruneSchedule,
    pub scan: ScanSection,
    /// Formats used for quantized training, scans and fixed evaluation.
    pub datapath: DatapathConfig,
    pub estimator: EstimatorConfig,
    /// Reuse factors for the estimate sweep; empty keeps each layer's own.
    pub reuse: Vec<u32>,
    pub codegen: CodegenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION.into(),
            seed: None,
            training: TrainingConfig::default(),
            synthetic: SyntheticConfig::default(),
            split: SplitConfig::default(),
            architecture: ArchitectureConfig::default(),
            quantizer: QuantizerSpec::fixed(6, 1),
            prune: PruneSchedule::default(),
            scan: ScanSection::default(),
            datapath: DatapathConfig::default(),
            estimator: EstimatorConfig::default(),
            reuse: Vec::new(),
            codegen: CodegenConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses a config document; unknown fields are rejected with their
    /// path.
    pub fn parse(text: &str) -> Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| format!("config `{}`: {}", e.path(), e.inner()))?;
        if cfg.config_version != CONFIG_VERSION {
            return Err(format!(
                "config `config_version`: unsupported version `{}` (expected `{CONFIG_VERSION}`)",
                cfg.config_version
            ));
        }
        Ok(cfg)
    }

    /// Pushes `seed` into every seeded component.
    pub fn resolve_seed(&mut self) {
        if let Some(s) = self.seed {
            self.training.seed = s;
            self.split.seed = s;
            self.architecture.init_seed = s;
        }
    }

    pub fn scan_config(&self) -> ScanConfig {
        ScanConfig {
            bits: self.scan.bits.clone(),
            training: self.training.clone(),
            input_spec: self.datapath.input,
            accumulator_spec: self.datapath.accumulator,
            result_spec: self.datapath.result,
            qat_from_float: self.scan.qat_from_float,
        }
    }
}
