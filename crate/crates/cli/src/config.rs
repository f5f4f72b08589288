use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use emg_snn::bench::{default_coefficients, Runnable};
use emg_snn::encoder::EncoderConfig;
use emg_snn::hw::{HwConfig, MappingGrid};
use emg_snn::rsnn::{NeuronParams, Topology};
use emg_snn::signal::SynthConfig;
use emg_snn::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

/// Configuration problems: unreadable or malformed files, unknown keys,
/// out-of-range values. Mapped to exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory of recording files; synthetic data is generated when unset.
    pub dir: Option<PathBuf>,
    pub per_class: usize,
    pub synth: SynthConfig,
    pub window_len: usize,
    pub stride: usize,
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            per_class: 100,
            synth: SynthConfig::default(),
            window_len: 200,
            stride: 200,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub batch_sizes: Vec<usize>,
    pub repeats: usize,
    pub runnable: Runnable,
    /// Windows whose operations are counted.
    pub count_windows: usize,
    /// Joules per operation, keyed by energy category.
    pub energy_coefficients: BTreeMap<String, f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_sizes: vec![1, 50],
            repeats: 5,
            runnable: Runnable::Full,
            count_windows: 10,
            energy_coefficients: default_coefficients(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds synthetic data, the train/test split and weight initialization.
    pub seed: u64,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub topology: Topology,
    pub neuron: NeuronParams,
    pub train: TrainConfig,
    pub hw: HwConfig,
    pub bench: BenchConfig,
    pub mapping: MappingGrid,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(seed) = seed {
            self.seed = seed;
            self.train.seed = seed;
        }
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let lib = |r: emg_snn::Result<()>| r.map_err(|e| ConfigError(e.to_string()));
        lib(self.data.synth.validate())?;
        lib(self.encoder.validate())?;
        lib(self.topology.validate())?;
        lib(self.neuron.validate())?;
        lib(self.train.validate())?;
        lib(self.hw.validate())?;
        let d = &self.data;
        if d.per_class == 0 || d.window_len < 2 || d.stride == 0 {
            return Err(ConfigError(
                "data: per_class and stride must be >= 1, window_len >= 2".into(),
            ));
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return Err(ConfigError("data: test_fraction must lie in (0, 1)".into()));
        }
        let channels = d.synth.channels * self.encoder.neurons_per_channel();
        if d.dir.is_none() && channels != self.topology.n_in {
            return Err(ConfigError(format!(
                "topology.n_in = {} but the encoder produces {channels} input rows",
                self.topology.n_in
            )));
        }
        let b = &self.bench;
        if b.batch_sizes.is_empty() || b.batch_sizes.contains(&0) || b.repeats == 0 {
            return Err(ConfigError(
                "bench: batch sizes and repeats must be >= 1".into(),
            ));
        }
        if self.mapping.tau_a.is_empty() || self.mapping.beta.is_empty() {
            return Err(ConfigError("mapping: grid axes must be non-empty".into()));
        }
        Ok(())
    }
}
