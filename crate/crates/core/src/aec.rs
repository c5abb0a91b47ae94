//! Frequency-domain state-space (Kalman) linear echo canceller.
//!
//! Each bin carries `taps` complex weights over the most recent reference
//! frames, with an independent (diagonal) error covariance per tap. The
//! weights follow a random walk driven by `process_noise`; the observation
//! noise is a recursively smoothed estimate of the a priori error power,
//! floored at `obs_noise_floor`.

use realfft::num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::dsp::{istft, StftConfig, StreamingAnalyzer, TfMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AecConfig {
    /// Reference frames per bin (echo tail = taps × hop).
    pub taps: usize,
    pub process_noise: f32,
    pub obs_noise_floor: f32,
    /// Initial per-tap state covariance.
    pub initial_cov: f32,
    /// Smoothing factor of the observation-noise estimate.
    pub noise_smoothing: f32,
}

impl Default for AecConfig {
    fn default() -> Self {
        Self {
            taps: 10,
            process_noise: 1e-5,
            obs_noise_floor: 1e-8,
            initial_cov: 0.1,
            noise_smoothing: 0.5,
        }
    }
}

impl AecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 {
            return Err(Error::config("aec.taps must be at least 1"));
        }
        if !(self.process_noise >= 0.0 && self.obs_noise_floor > 0.0 && self.initial_cov >= 0.0) {
            return Err(Error::config(
                "aec noise parameters must be non-negative (obs_noise_floor positive)",
            ));
        }
        if !(0.0..1.0).contains(&self.noise_smoothing) {
            return Err(Error::config("aec.noise_smoothing must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Per-stream canceller state.
#[derive(Debug, Clone)]
pub struct AecState {
    cfg: AecConfig,
    bins: usize,
    /// `[f * taps + k]`, tap `k` multiplies the reference from `k` frames ago.
    weights: Vec<Complex32>,
    state_cov: Vec<f32>,
    ref_history: Vec<Complex32>,
    noise_psd: Vec<f32>,
    gain_scratch: Vec<f32>,
}

impl AecState {
    pub fn new(cfg: AecConfig, bins: usize) -> Result<Self> {
        cfg.validate()?;
        let n = bins * cfg.taps;
        Ok(Self {
            cfg,
            bins,
            weights: vec![Complex32::new(0.0, 0.0); n],
            state_cov: vec![cfg.initial_cov; n],
            ref_history: vec![Complex32::new(0.0, 0.0); n],
            noise_psd: vec![cfg.obs_noise_floor; bins],
            gain_scratch: vec![0.0; cfg.taps],
        })
    }

    pub fn config(&self) -> &AecConfig {
        &self.cfg
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn weights(&self) -> &[Complex32] {
        &self.weights
    }

    pub fn state_cov(&self) -> &[f32] {
        &self.state_cov
    }

    /// Consumes one microphone and one reference frame, returns the error
    /// frame `d - Σ_k W[f,k] · x[t-k, f]` computed with the prior weights.
    pub fn step(&mut self, d: &[Complex32], x: &[Complex32]) -> Result<Vec<Complex32>> {
        let mut out = vec![Complex32::new(0.0, 0.0); self.bins];
        self.step_into(d, x, &mut out, None)?;
        Ok(out)
    }

    /// Like [`step`](Self::step) but also reports the normalized gains
    /// `P|X|^2 / (Σ P|X|^2 + Φ)` for each `[f * taps + k]` when asked.
    pub fn step_into(
        &mut self,
        d: &[Complex32],
        x: &[Complex32],
        out: &mut [Complex32],
        mut gains: Option<&mut [f32]>,
    ) -> Result<()> {
        if d.len() != self.bins || x.len() != self.bins || out.len() != self.bins {
            return Err(Error::shape(format!(
                "aec expects {} bins, got d={} x={} out={}",
                self.bins,
                d.len(),
                x.len(),
                out.len()
            )));
        }
        let taps = self.cfg.taps;
        let q = self.cfg.process_noise;
        let beta = self.cfg.noise_smoothing;
        let floor = self.cfg.obs_noise_floor;
        for f in 0..self.bins {
            let base = f * taps;
            let hist = &mut self.ref_history[base..base + taps];
            hist.rotate_right(1);
            hist[0] = x[f];
            let w = &mut self.weights[base..base + taps];
            let p = &mut self.state_cov[base..base + taps];

            let mut echo = Complex32::new(0.0, 0.0);
            for k in 0..taps {
                echo += w[k] * hist[k];
            }
            let e = d[f] - echo;
            out[f] = e;

            let mut px = 0.0f32;
            for k in 0..taps {
                p[k] += q;
                px += p[k] * hist[k].norm_sqr();
            }
            if px == 0.0 {
                // No excitation: nothing to learn in this bin.
                continue;
            }
            let phi = (beta * self.noise_psd[f] + (1.0 - beta) * e.norm_sqr()).max(floor);
            self.noise_psd[f] = phi;
            let denom = px + phi;
            for k in 0..taps {
                let xk = hist[k];
                let gain = p[k] / denom;
                w[k] += xk.conj() * e * gain;
                let g = gain * xk.norm_sqr();
                self.gain_scratch[k] = g;
                p[k] *= 1.0 - g;
            }
            if let Some(g) = gains.as_deref_mut() {
                g[base..base + taps].copy_from_slice(&self.gain_scratch);
            }
        }
        Ok(())
    }
}

/// Frame-domain LAEC over whole signals: returns the error frames.
pub fn aec_frames(d: &TfMap, x: &TfMap, cfg: AecConfig) -> Result<TfMap> {
    if d.data.shape() != x.data.shape() || d.signals() != 1 {
        return Err(Error::shape("aec_frames expects two single-signal maps of equal shape"));
    }
    let mut state = AecState::new(cfg, d.bins())?;
    let mut out = TfMap::zeros(1, d.frames(), d.bins());
    let mut buf = vec![Complex32::new(0.0, 0.0); d.bins()];
    for t in 0..d.frames() {
        let df: Vec<Complex32> = d.data.slice(ndarray::s![0, t, ..]).to_vec();
        let xf: Vec<Complex32> = x.data.slice(ndarray::s![0, t, ..]).to_vec();
        state.step_into(&df, &xf, &mut buf, None)?;
        out.data.slice_mut(ndarray::s![0, t, ..]).assign(&ndarray::ArrayView1::from(&buf));
    }
    Ok(out)
}

/// Pads `d` and `x` to a common whole-frame length.
pub(crate) fn align_inputs(d: &[f32], x: &[f32], stft: &StftConfig) -> (Vec<f32>, Vec<f32>) {
    let n = stft.padded_len(d.len().max(x.len()));
    let mut dp = d.to_vec();
    dp.resize(n, 0.0);
    let mut xp = x.to_vec();
    xp.resize(n, 0.0);
    (dp, xp)
}

/// STFT → per-frame [`AecState::step`] → iSTFT. Output length equals `d`.
pub fn aec_process(d: &[f32], x: &[f32], cfg: AecConfig, stft: &StftConfig) -> Result<Vec<f32>> {
    if d.is_empty() {
        return Err(Error::EmptyInput("microphone signal is empty".into()));
    }
    let (dp, xp) = align_inputs(d, x, stft);
    let mut an_d = StreamingAnalyzer::new(stft);
    let mut an_x = StreamingAnalyzer::new(stft);
    let fd = an_d.push(&dp);
    let fx = an_x.push(&xp);
    let dm = TfMap::from_frames(&fd, stft.num_bins())?;
    let xm = TfMap::from_frames(&fx, stft.num_bins())?;
    let e = aec_frames(&dm, &xm, cfg)?;
    let mut y = istft(&e, stft)?;
    y.truncate(d.len());
    Ok(y)
}
