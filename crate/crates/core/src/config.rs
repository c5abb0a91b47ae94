//! Model and run configuration, JSON schema and named presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aec::AecConfig;
use crate::dsp::StftConfig;
use crate::error::{Error, Result};
use crate::freq::{bands_for_ratio, Scale};
use crate::time::check_ratio;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqMethod {
    None,
    FixedErb,
    FixedMel,
    TrainableMel,
}

impl FreqMethod {
    pub fn fixed_scale(self) -> Option<Scale> {
        match self {
            FreqMethod::FixedErb => Some(Scale::Erb),
            FreqMethod::FixedMel => Some(Scale::Mel),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreqConfig {
    pub method: FreqMethod,
    pub ratio: usize,
    /// Scale each fixed triangle to unit sum.
    pub normalize: bool,
}

impl Default for FreqConfig {
    fn default() -> Self {
        Self {
            method: FreqMethod::None,
            ratio: 1,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub ratio: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self { ratio: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostNetConfig {
    pub enabled: bool,
    pub bands: usize,
    pub gru_hidden: usize,
    /// Channels per band produced by the decompression layer.
    pub decomp_channels: usize,
    /// Hidden width of the stacked 1×1 convolutions.
    pub conv_hidden: usize,
}

impl Default for PostNetConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            bands: 80,
            gru_hidden: 80,
            decomp_channels: 2,
            conv_hidden: 320,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Input signals (microphone, reference, linear-AEC error).
    pub signals: usize,
    pub feature_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Blocks, counted from the first, that carry a time-axis GRU.
    pub gru_count: usize,
    pub kernel_time: usize,
    pub kernel_freq: usize,
    /// Feed-forward width after each attention layer, 0 disables it.
    pub ffn_dim: usize,
    pub freq: FreqConfig,
    pub time: TimeConfig,
    pub postnet: PostNetConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            signals: 3,
            feature_dim: 48,
            blocks: 4,
            heads: 4,
            gru_count: 1,
            kernel_time: 3,
            kernel_freq: 3,
            ffn_dim: 0,
            freq: FreqConfig::default(),
            time: TimeConfig::default(),
            postnet: PostNetConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self, num_bins: usize) -> Result<()> {
        if self.signals == 0 || self.feature_dim == 0 {
            return Err(Error::config("signals and feature_dim must be positive"));
        }
        if self.heads == 0 || !self.feature_dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "feature_dim {} is not divisible by heads {}",
                self.feature_dim, self.heads
            )));
        }
        if self.gru_count > self.blocks {
            return Err(Error::config("gru_count exceeds the number of blocks"));
        }
        if self.kernel_time == 0 || self.kernel_freq.is_multiple_of(2) {
            return Err(Error::config("kernel_time must be >= 1 and kernel_freq odd"));
        }
        check_ratio(self.freq.ratio, "frequency")?;
        check_ratio(self.time.ratio, "time")?;
        match self.freq.method {
            FreqMethod::None if self.freq.ratio != 1 => {
                return Err(Error::config("frequency ratio needs a compression method"));
            }
            FreqMethod::None => {}
            _ => {
                bands_for_ratio(num_bins, self.freq.ratio)?;
            }
        }
        if self.freq.method.fixed_scale().is_some() && self.time.ratio != 1 {
            return Err(Error::config(
                "fixed filterbanks take magnitudes and cannot follow skip prediction",
            ));
        }
        let pn = &self.postnet;
        if pn.enabled
            && (pn.bands == 0
                || pn.bands > num_bins
                || pn.gru_hidden == 0
                || pn.decomp_channels == 0
                || pn.conv_hidden == 0)
        {
            return Err(Error::config("postnet sizes must be positive and bands <= bins"));
        }
        Ok(())
    }

    /// Band count the network body runs on.
    pub fn body_rows(&self, num_bins: usize) -> usize {
        match self.freq.method {
            FreqMethod::None => num_bins,
            _ => num_bins / self.freq.ratio,
        }
    }
}

/// Everything needed to run the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub stft: StftConfig,
    #[serde(default)]
    pub aec: AecConfig,
    #[serde(default)]
    pub model: ModelConfig,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            stft: StftConfig::default(),
            aec: AecConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.aec.validate()?;
        self.model.validate(self.stft.num_bins())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let cfg = Self {
            model: preset_model(name)?,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_ratio(s: &str, name: &str) -> Result<usize> {
    let r: usize = s
        .parse()
        .map_err(|_| Error::config(format!("preset `{name}`: bad ratio `{s}`")))?;
    check_ratio(r, "preset")?;
    Ok(r)
}

/// Model settings of a named preset.
///
/// `uncompressed`, `fixed-erb-Q`, `fixed-mel-Q`, `trainmel-Q`,
/// `skippred-Q`, `skippred-Q-postnet`, `dualpath-QtxQf` (with PostNet).
pub fn preset_model(name: &str) -> Result<ModelConfig> {
    let mut m = ModelConfig::default();
    let unknown = || Error::config(format!("unknown preset `{name}`"));
    if name == "uncompressed" {
        return Ok(m);
    }
    if let Some(q) = name.strip_prefix("fixed-erb-") {
        m.freq = FreqConfig {
            method: FreqMethod::FixedErb,
            ratio: parse_ratio(q, name)?,
            normalize: false,
        };
    } else if let Some(q) = name.strip_prefix("fixed-mel-") {
        m.freq = FreqConfig {
            method: FreqMethod::FixedMel,
            ratio: parse_ratio(q, name)?,
            normalize: false,
        };
    } else if let Some(q) = name.strip_prefix("trainmel-") {
        m.freq = FreqConfig {
            method: FreqMethod::TrainableMel,
            ratio: parse_ratio(q, name)?,
            normalize: false,
        };
    } else if let Some(rest) = name.strip_prefix("skippred-") {
        let (q, post) = match rest.strip_suffix("-postnet") {
            Some(q) => (q, true),
            None => (rest, false),
        };
        m.time.ratio = parse_ratio(q, name)?;
        m.postnet.enabled = post;
    } else if let Some(rest) = name.strip_prefix("dualpath-") {
        let (qt, qf) = rest.split_once('x').ok_or_else(unknown)?;
        m.time.ratio = parse_ratio(qt, name)?;
        m.freq = FreqConfig {
            method: FreqMethod::TrainableMel,
            ratio: parse_ratio(qf, name)?,
            normalize: false,
        };
        m.postnet.enabled = true;
    } else {
        return Err(unknown());
    }
    Ok(m)
}

/// Names of the presets shipped for the compression families.
pub fn preset_names() -> Vec<String> {
    let qs = [2, 4, 8, 16, 32];
    let mut v = vec!["uncompressed".to_string()];
    for q in qs {
        v.push(format!("fixed-erb-{q}"));
        v.push(format!("fixed-mel-{q}"));
        v.push(format!("trainmel-{q}"));
        v.push(format!("skippred-{q}"));
        v.push(format!("skippred-{q}-postnet"));
    }
    for qt in [2, 4, 8] {
        for qf in [2, 4, 8] {
            v.push(format!("dualpath-{qt}x{qf}"));
        }
    }
    v
}
