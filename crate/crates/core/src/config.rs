//! Pipeline configuration, read from a TOML file. Command-line flags are
//! applied on top by the caller.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::beamformer::BeamformConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::masknet::{IbmConfig, Topology, TrainConfig};
use crate::metrics::MaskWeighting;
use crate::simulator::{ArrayGeometry, CorpusConfig, MixingConfig, SimuSetConfig};
use crate::stft::StftConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for scene rendering and model initialization.
    pub seed: u64,
    /// Files processed in parallel by `simulate` and `evaluate`.
    pub jobs: usize,
    pub stft: StftConfig,
    pub features: FeatureConfig,
    /// Hidden layer widths of the mask estimator.
    pub hidden: Vec<usize>,
    pub ibm: IbmConfig,
    pub train: TrainConfig,
    pub mixing: MixingConfig,
    pub corpus: CorpusConfig,
    pub beamform: BeamformConfig,
    pub geometry: ArrayGeometry,
    pub simulate: SimuSetConfig,
    pub sdri_weighting: MaskWeighting,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            jobs: 1,
            stft: StftConfig::default(),
            features: FeatureConfig::default(),
            hidden: vec![1024; 3],
            ibm: IbmConfig::default(),
            train: TrainConfig::default(),
            mixing: MixingConfig::default(),
            corpus: CorpusConfig::default(),
            beamform: BeamformConfig::default(),
            geometry: ArrayGeometry::default(),
            simulate: SimuSetConfig::default(),
            sdri_weighting: MaskWeighting::Linear,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::format("config", format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("config", e.to_string()))
    }

    /// Replaces every seed in the configuration.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.mixing.seed = seed;
        self.beamform.seed = seed;
    }

    pub fn topology(&self) -> Topology {
        Topology { features: self.features, hidden: self.hidden.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.features.base_dim == 0 || self.features.base_dim > self.stft.fft_bins() {
            return Err(Error::invalid(format!(
                "feature base_dim {} must lie in 1..={} (STFT bins)",
                self.features.base_dim,
                self.stft.fft_bins()
            )));
        }
        if self.ibm.bins != self.features.base_dim {
            return Err(Error::invalid(format!(
                "IBM covers {} bins but the estimator emits {}",
                self.ibm.bins, self.features.base_dim
            )));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        if self.jobs == 0 {
            return Err(Error::invalid("jobs must be at least 1"));
        }
        if !(self.mixing.snr_std_db >= 0.0 && self.mixing.snr_mean_db.is_finite()) {
            return Err(Error::invalid("SNR distribution parameters are invalid"));
        }
        if !(self.beamform.delta_loading >= 0.0 && self.beamform.power_iter_tol > 0.0) {
            return Err(Error::invalid("beamformer loading and tolerance must be positive"));
        }
        self.train.validate()?;
        self.geometry.validate()
    }
}
