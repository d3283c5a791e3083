//! Run configuration: built-in defaults, overlaid by a JSON file, overlaid
//! by command-line flags.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use spex_core::mixsim::SimulationConfig;
use spex_core::net::{Mode, NetConfig, ScalePreset};
use spex_core::stft::StftConfig;
use spex_core::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub mode: Mode,
    /// `desk` or `paper`; individual sizes below override the preset.
    pub preset: ScalePreset,
    pub aux_hidden: Option<usize>,
    pub mask_hidden: Option<usize>,
    pub embed_dim: Option<usize>,
    pub n_sublayers: Option<usize>,
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            mode: Mode::Concat,
            preset: ScalePreset::Desk,
            aux_hidden: None,
            mask_hidden: None,
            embed_dim: None,
            n_sublayers: None,
        }
    }
}

impl NetSection {
    pub fn resolve(&self, n_bins: usize) -> NetConfig {
        let mut c = match self.preset {
            ScalePreset::Paper => NetConfig::paper(self.mode),
            ScalePreset::Desk | ScalePreset::Custom => NetConfig::desk(self.mode),
        };
        c.n_bins = n_bins;
        let overrides = [
            (self.aux_hidden, &mut c.aux_hidden),
            (self.mask_hidden, &mut c.mask_hidden),
            (self.embed_dim, &mut c.embed_dim),
            (self.n_sublayers, &mut c.n_sublayers),
        ];
        let mut custom = false;
        for (value, slot) in overrides {
            if let Some(v) = value {
                *slot = v;
                custom = true;
            }
        }
        if custom {
            c.scale_preset = ScalePreset::Custom;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n: usize,
    pub snr_lo: f64,
    pub snr_hi: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        let d = SimulationConfig::default();
        Self {
            n: d.n,
            snr_lo: d.snr_lo,
            snr_hi: d.snr_hi,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub stft: StftConfig,
    pub net: NetSection,
    pub train: TrainConfig,
    pub simulate: SimulateSection,
}

impl RunConfig {
    /// Defaults, or the given file laid over them.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn net_config(&self) -> NetConfig {
        self.net.resolve(self.stft.n_bins())
    }

    /// Check every section before any work starts.
    pub fn validate(&self) -> spex_core::Result<()> {
        self.stft.validate()?;
        self.net_config().validate()?;
        self.train.validate()?;
        if !(self.simulate.snr_lo <= self.simulate.snr_hi) {
            return Err(spex_core::Error::InvalidConfig(format!(
                "snr range [{}, {}] is empty",
                self.simulate.snr_lo, self.simulate.snr_hi
            )));
        }
        Ok(())
    }
}
