//! Analytic parameter and multiply-accumulate accounting.
//!
//! Conventions: a dense `in → out` map costs `in·out` MACs per position,
//! a depthwise `kt×kf` tap set `kt·kf` per channel and position, a GRU step
//! `3h(i + h)`, and linear attention `4E² + 2·(E/heads)²·heads` per
//! element. Biases, norms, activations and residual adds cost nothing.
//! Layers inside the time-compressed region run at `fps / r`.

use serde::{Deserialize, Serialize};

use crate::config::{FreqMethod, ModelConfig, PostNetConfig};
use crate::dsp::StftConfig;
use crate::error::Result;
use crate::freq::{bands_for_ratio, build_band_layout, FixedFilterBank};
use crate::model::CONV_LAYERS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub params: u64,
    /// MACs per execution of the layer.
    pub macs_per_frame: u64,
    /// Executions per second of audio.
    pub frames_per_second: f64,
    pub macs_per_second: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub layers: Vec<LayerCost>,
    pub params: u64,
    pub macs_per_second: f64,
    /// `macs_per_second` divided by the input frame rate.
    pub macs_per_frame: f64,
    pub frames_per_second: f64,
}

impl ComplexityReport {
    fn from_layers(layers: Vec<LayerCost>, fps: f64) -> Self {
        let params = layers.iter().map(|l| l.params).sum();
        let macs_per_second = layers.iter().map(|l| l.macs_per_second).sum();
        Self {
            layers,
            params,
            macs_per_second,
            macs_per_frame: macs_per_second / fps,
            frames_per_second: fps,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `base / self` in MACs per second.
    pub fn compression_ratio(&self, base: &ComplexityReport) -> f64 {
        base.macs_per_second / self.macs_per_second
    }
}

struct Acc {
    layers: Vec<LayerCost>,
}

impl Acc {
    fn push(&mut self, name: impl Into<String>, params: usize, macs: usize, fps: f64) {
        self.layers.push(LayerCost {
            name: name.into(),
            params: params as u64,
            macs_per_frame: macs as u64,
            frames_per_second: fps,
            macs_per_second: macs as f64 * fps,
        });
    }
}

fn dense_params(i: usize, o: usize) -> usize {
    i * o + o
}

fn postnet_layers(acc: &mut Acc, pn: &PostNetConfig, f: usize, fps: f64) {
    let (b, h, k, hc) = (pn.bands, pn.gru_hidden, pn.decomp_channels, pn.conv_hidden);
    // every bin feeds exactly one band, two log-power channels per bin
    acc.push("postnet.comp", 2 * f + b, 2 * f, fps);
    acc.push("postnet.gru", 3 * h * (b + h) + 6 * h, 3 * h * (b + h), fps);
    acc.push("postnet.decomp", dense_params(h, b * k), h * b * k, fps);
    acc.push("postnet.conv1", dense_params(k, hc), b * k * hc, fps);
    acc.push("postnet.act", 1, 0, fps);
    acc.push("postnet.conv2", dense_params(hc, 1), b * hc, fps);
    acc.push("postnet.fc", dense_params(b, f), b * f, fps);
}

/// Report for the PostNet alone.
pub fn postnet_report(pn: &PostNetConfig, stft: &StftConfig) -> ComplexityReport {
    let fps = stft.frames_per_second();
    let mut acc = Acc { layers: Vec::new() };
    postnet_layers(&mut acc, pn, stft.num_bins(), fps);
    ComplexityReport::from_layers(acc.layers, fps)
}

pub fn count(cfg: &ModelConfig, stft: &StftConfig) -> Result<ComplexityReport> {
    let f = stft.num_bins();
    cfg.validate(f)?;
    let fps = stft.frames_per_second();
    let (c, e, r) = (cfg.signals, cfg.feature_dim, cfg.time.ratio);
    let slow = fps / r as f64;
    let n = cfg.body_rows(f);
    let mut acc = Acc { layers: Vec::new() };
    let trainable = cfg.freq.method == FreqMethod::TrainableMel;

    if r > 1 {
        let out = if trainable { 2 * c } else { e };
        acc.push("skip", dense_params(2 * c * r, out), 2 * c * r * out * f, slow);
    }
    let mut fixed_bank = None;
    match cfg.freq.method {
        FreqMethod::None => {
            if r == 1 {
                acc.push("input", dense_params(2 * c, e), 2 * c * e * f, fps);
            }
        }
        FreqMethod::FixedErb | FreqMethod::FixedMel => {
            let scale = cfg.freq.method.fixed_scale().expect("fixed");
            let bank = FixedFilterBank::new(
                build_band_layout(scale, f, bands_for_ratio(f, cfg.freq.ratio)?)?,
                cfg.freq.normalize,
            )?;
            acc.push("freq.compress", 0, c * bank.nonzeros(), fps);
            acc.push("input", dense_params(c, e), c * e * n, fps);
            fixed_bank = Some(bank);
        }
        FreqMethod::TrainableMel => {
            acc.push("freq.compress", f * 2 * c * e + n * e, f * 2 * c * e, slow);
        }
    }

    let conv_params = cfg.kernel_time * cfg.kernel_freq * e + e + dense_params(e, e) + 3 * e;
    let conv_macs = n * (cfg.kernel_time * cfg.kernel_freq * e + e * e);
    for i in 0..CONV_LAYERS {
        acc.push(format!("enc.{i}"), conv_params, conv_macs, slow);
    }
    let dh = e / cfg.heads;
    let mut attn_params = 4 * dense_params(e, e) + 2 * e;
    let mut attn_macs = 4 * e * e + 2 * dh * dh * cfg.heads;
    if cfg.ffn_dim > 0 {
        attn_params += dense_params(e, cfg.ffn_dim) + dense_params(cfg.ffn_dim, e) + 2 * e;
        attn_macs += 2 * e * cfg.ffn_dim;
    }
    for i in 0..cfg.blocks {
        acc.push(format!("block.{i}.attn_f"), attn_params, n * attn_macs, slow);
        if i < cfg.gru_count {
            acc.push(format!("block.{i}.gru"), 3 * e * (2 * e) + 6 * e, n * 3 * e * (2 * e), slow);
        }
        acc.push(format!("block.{i}.attn_t"), attn_params, n * attn_macs, slow);
    }
    for i in 0..CONV_LAYERS {
        acc.push(format!("dec.{i}"), conv_params, conv_macs, slow);
    }

    let out_in = match (&fixed_bank, trainable) {
        (Some(bank), _) => {
            acc.push("freq.decompress", 0, e * bank.num_bands() * f, fps);
            e
        }
        (None, true) => {
            acc.push("freq.decompress", dense_params(e, 4 * c * f), e * 4 * c * f, slow);
            4 * c
        }
        (None, false) => e,
    };
    acc.push("output", dense_params(out_in, 2 * c), out_in * 2 * c * f, fps);
    if cfg.postnet.enabled {
        postnet_layers(&mut acc, &cfg.postnet, f, fps);
    }
    Ok(ComplexityReport::from_layers(acc.layers, fps))
}
