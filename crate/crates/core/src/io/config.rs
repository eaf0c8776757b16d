use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{generate_synthetic, load_dataset, Dataset, DatasetFormat, SyntheticSpec};
use crate::arch::{ArchSpec, GateMode};
use crate::error::{Error, Result};
use crate::kernels::DEFAULT_GRAM_CAP;
use crate::numerics::InitScheme;
use crate::paths::DEFAULT_PATH_BUDGET;
use crate::train::{OptimizerConfig, Regime, TrainConfig};

/// Everything one invocation of the binary needs. Every field has a
/// default, so an empty document is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; datasets, initialisation and Monte-Carlo draws derive
    /// from it.
    pub seed: u64,
    /// Directory for reports and artifacts (created on demand).
    pub out_dir: PathBuf,
    /// Architecture for `train` and `kernel`.
    pub arch: ArchSpec,
    pub dataset: DatasetConfig,
    pub train: TrainSection,
    pub verify: VerifyConfig,
    pub kernel: KernelConfig,
    pub experiment: ExperimentSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            arch: ArchSpec::fc(3, 4, 16).with_heads(2),
            dataset: DatasetConfig::default(),
            train: TrainSection::default(),
            verify: VerifyConfig::default(),
            kernel: KernelConfig::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

/// Where the data comes from. A `file` takes precedence over `synthetic`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub synthetic: SyntheticSpec,
    pub file: Option<PathBuf>,
    pub format: DatasetFormat,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            synthetic: SyntheticSpec::Blobs {
                classes: 2,
                dims: 2,
            },
            file: None,
            format: DatasetFormat::Csv { header: false },
            n_train: 400,
            n_test: 400,
        }
    }
}

impl DatasetConfig {
    /// Train and test sets. Synthetic data is drawn in one batch of
    /// `n_train + n_test` points from `seed`; file data takes its first
    /// `n_train` rows for training and the rest for testing.
    pub fn load(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        match &self.file {
            Some(path) => load_dataset(path, self.format)?.split(self.n_train),
            None => generate_synthetic(&self.synthetic, self.n_train + self.n_test, seed)?
                .split(self.n_train),
        }
    }
}

/// [`TrainConfig`] minus the architecture and seed, which live at the top
/// level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub regime: Regime,
    pub routing: Vec<usize>,
    pub const_one: bool,
    pub gate_mode: Option<GateMode>,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub pretrain_epochs: Option<usize>,
    pub init: InitScheme,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::new(ArchSpec::default(), Regime::Dnn);
        Self {
            regime: base.regime,
            routing: base.routing,
            const_one: base.const_one,
            gate_mode: base.gate_mode,
            optimizer: base.optimizer,
            epochs: base.epochs,
            batch_size: base.batch_size,
            pretrain_epochs: base.pretrain_epochs,
            init: base.init,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, arch: &ArchSpec, seed: u64) -> TrainConfig {
        TrainConfig {
            arch: arch.clone(),
            regime: self.regime,
            routing: self.routing.clone(),
            const_one: self.const_one,
            gate_mode: self.gate_mode,
            optimizer: self.optimizer.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            pretrain_epochs: self.pretrain_epochs,
            init: self.init,
            seed,
        }
    }
}

/// Sizes and switches for `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub paths: bool,
    pub kernels: bool,
    pub mc: bool,
    pub gradients: bool,
    pub self_gating: bool,
    pub psd: bool,
    /// Architectures every enabled check runs on.
    pub archs: Vec<ArchSpec>,
    /// Random inputs per architecture.
    pub probes: usize,
    /// Largest path count enumerated; bigger requests are skipped.
    pub path_budget: u64,
    pub mc_samples: usize,
    /// Random input pairs per architecture for the Monte-Carlo check.
    pub mc_trials: usize,
    /// Largest tolerated fraction of Monte-Carlo trials outside three
    /// standard errors.
    pub mc_outlier_fraction: f64,
    /// Scales the sampling sigma away from the one the target assumes.
    /// Anything but 1 should make the Monte-Carlo check fail.
    pub sigma_scale: f64,
    /// Random parameter draws per architecture and regime.
    pub grad_configs: usize,
    pub gram_points: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            paths: true,
            kernels: true,
            mc: true,
            gradients: true,
            self_gating: true,
            psd: true,
            archs: vec![
                ArchSpec::fc(3, 3, 8),
                ArchSpec::conv_gap(6, 1, 3, 3, 2),
                ArchSpec::res(3, 1, 2, 4),
            ],
            probes: 6,
            path_budget: DEFAULT_PATH_BUDGET as u64,
            mc_samples: 200,
            mc_trials: 8,
            mc_outlier_fraction: 0.25,
            sigma_scale: 1.0,
            grad_configs: 3,
            gram_points: 24,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// Neural path kernel from the hard gates of the ReLU network.
    Npk,
    /// Value-weight NTK of the ReLU network.
    Ntk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramFormat {
    Csv,
    Binary,
    Both,
}

/// Gram matrix emitted by `kernel`, over the first `points` training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub points: usize,
    pub format: GramFormat,
    pub cap: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            kind: KernelKind::Npk,
            points: 64,
            format: GramFormat::Both,
            cap: DEFAULT_GRAM_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    /// Every gate-layer ordering of a DLGN, per seed.
    PermutationSweep,
    /// DGN and DLGN with data vs all-ones value input, per seed.
    ConstantOne,
    /// Monte-Carlo NTK deviation from its target as width grows.
    WidthSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: ExperimentName,
    /// Seeds are `seed, seed + 1, ...`.
    pub seeds: usize,
    /// Widths for `width-sweep`.
    pub widths: Vec<usize>,
    /// Depth and input width for `width-sweep`.
    pub sweep_depth: usize,
    pub sweep_d_in: usize,
    /// Input pairs per width for `width-sweep`.
    pub sweep_pairs: usize,
    pub mc_samples: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: ExperimentName::PermutationSweep,
            seeds: 5,
            widths: vec![16, 64, 256],
            sweep_depth: 3,
            sweep_d_in: 4,
            sweep_pairs: 4,
            mc_samples: 200,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies `key=value` overrides. Keys are dotted paths into the
    /// document (`train.epochs`, `arch.family.width`); values are TOML
    /// literals, and anything that does not parse as one is taken as a
    /// string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, value) = raw
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {raw:?} is not key=value")))?;
            set_dotted(&mut doc, key.trim(), parse_literal(value.trim()))?;
        }
        doc.try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }
}

fn parse_literal(text: &str) -> toml::Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn set_dotted(doc: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key {key:?}")));
    }
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut table = doc;
    for part in parents {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key {key:?}: {part} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::Family;

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(
            ExperimentConfig::from_toml("").unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn default_round_trips() {
        let c = ExperimentConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = ExperimentConfig::default()
            .with_overrides(&[
                "train.epochs=7",
                "train.regime=DLGN",
                "arch.family.width = 5",
                "verify.sigma_scale=1.5",
                "out_dir=results",
                "train.routing=[1,0]",
            ])
            .unwrap();
        assert_eq!(c.train.epochs, 7);
        assert_eq!(c.train.regime, Regime::Dlgn);
        assert_eq!(c.arch.family, Family::Fc { depth: 4, width: 5 });
        assert_eq!(c.verify.sigma_scale, 1.5);
        assert_eq!(c.out_dir, PathBuf::from("results"));
        assert_eq!(c.train.routing, vec![1, 0]);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        let c = ExperimentConfig::default();
        for bad in [
            "train.epochs",
            "train.epochs=-1",
            "nonsense=1",
            "seed.x=1",
            "train..epochs=1",
        ] {
            assert!(
                matches!(c.with_overrides(&[bad]), Err(Error::Config(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("[train]\nepoch = 3\n").is_err());
    }

    #[test]
    fn synthetic_split_sizes() {
        let d = DatasetConfig {
            n_train: 30,
            n_test: 20,
            ..DatasetConfig::default()
        };
        let (a, b) = d.load(1).unwrap();
        assert_eq!((a.len(), b.len()), (30, 20));
    }
}
