//! Causal STFT analysis/synthesis and log-power features.
//!
//! Frame `t` covers samples `[t * hop, t * hop + window_len)`. Analysis and
//! synthesis both use a periodic square-root Hann window, so their product
//! is a Hann window that overlap-adds to a constant at 50% overlap.

use std::sync::Arc;

use ndarray::{Array3, ArrayView2, Axis};
use realfft::num_complex::Complex32;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor added before taking logarithms of power or magnitude sums.
pub const LOG_EPS: f32 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftSettings {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftSettings {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window_len: 320,
            hop: 160,
            fft_size: 320,
        }
    }
}

/// Validated STFT parameters plus the precomputed window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StftSettings", into = "StftSettings")]
pub struct StftConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    window: Vec<f64>,
    /// Overlap-add gain of analysis·synthesis windows.
    ola_gain: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::try_from(StftSettings::default()).expect("default STFT settings are valid")
    }
}

impl TryFrom<StftSettings> for StftConfig {
    type Error = Error;

    fn try_from(s: StftSettings) -> Result<Self> {
        Self::new(s.sample_rate, s.window_len, s.hop, s.fft_size)
    }
}

impl From<StftConfig> for StftSettings {
    fn from(c: StftConfig) -> Self {
        StftSettings {
            sample_rate: c.sample_rate,
            window_len: c.window_len,
            hop: c.hop,
            fft_size: c.fft_size,
        }
    }
}

impl StftConfig {
    pub fn new(sample_rate: u32, window_len: usize, hop: usize, fft_size: usize) -> Result<Self> {
        if sample_rate == 0 || window_len == 0 || hop == 0 {
            return Err(Error::config("STFT sizes must be positive"));
        }
        if fft_size < window_len {
            return Err(Error::config(format!(
                "fft_size {fft_size} is smaller than window_len {window_len}"
            )));
        }
        if !window_len.is_multiple_of(hop) {
            return Err(Error::config(format!(
                "hop {hop} does not divide window_len {window_len}"
            )));
        }
        let window: Vec<f64> = (0..window_len)
            .map(|n| {
                let phase = 2.0 * std::f64::consts::PI * n as f64 / window_len as f64;
                (0.5 - 0.5 * phase.cos()).sqrt()
            })
            .collect();
        let overlap = window_len / hop;
        // Σ_k w[n + k·hop]^2 is constant in n for a periodic Hann.
        let ola_gain = (0..overlap).map(|k| window[k * hop].powi(2)).sum::<f64>();
        let cfg = Self {
            sample_rate,
            window_len,
            hop,
            fft_size,
            window,
            ola_gain,
        };
        let dev = cfg.cola_deviation();
        if dev > 1e-10 {
            return Err(Error::config(format!(
                "window does not satisfy constant overlap-add (deviation {dev:e})"
            )));
        }
        Ok(cfg)
    }

    pub fn settings(&self) -> StftSettings {
        self.clone().into()
    }

    /// Number of frequency bins, `fft_size / 2 + 1`.
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn frames_per_second(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    /// `floor((n - window_len) / hop) + 1`, or zero if `n < window_len`.
    pub fn num_frames(&self, n: usize) -> usize {
        if n < self.window_len {
            0
        } else {
            (n - self.window_len) / self.hop + 1
        }
    }

    /// Smallest length `>= n` that is an exact frame multiple.
    pub fn padded_len(&self, n: usize) -> usize {
        if n <= self.window_len {
            self.window_len
        } else {
            let over = n - self.window_len;
            self.window_len + over.div_ceil(self.hop) * self.hop
        }
    }

    /// Max relative deviation of `Σ_k w_a·w_s` from its mean over one hop.
    pub fn cola_deviation(&self) -> f64 {
        let overlap = self.window_len / self.hop;
        (0..self.hop)
            .map(|n| {
                let s: f64 = (0..overlap)
                    .map(|k| self.window[n + k * self.hop].powi(2))
                    .sum();
                ((s - self.ola_gain) / self.ola_gain).abs()
            })
            .fold(0.0, f64::max)
    }

    pub(crate) fn ola_gain(&self) -> f64 {
        self.ola_gain
    }
}

/// Complex time-frequency map indexed `[signal, frame, bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfMap {
    pub data: Array3<Complex32>,
}

impl TfMap {
    pub fn zeros(signals: usize, frames: usize, bins: usize) -> Self {
        Self {
            data: Array3::zeros((signals, frames, bins)),
        }
    }

    pub fn signals(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn bins(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn signal(&self, c: usize) -> ArrayView2<'_, Complex32> {
        self.data.index_axis(Axis(0), c)
    }

    /// Concatenates maps along the signal axis.
    pub fn stack(maps: &[&TfMap]) -> Result<TfMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::EmptyInput("no maps to stack".into()))?;
        let (t, f) = (first.frames(), first.bins());
        let total: usize = maps.iter().map(|m| m.signals()).sum();
        let mut out = TfMap::zeros(total, t, f);
        let mut c0 = 0;
        for m in maps {
            if m.frames() != t || m.bins() != f {
                return Err(Error::shape(format!(
                    "cannot stack {}x{} with {}x{}",
                    t,
                    f,
                    m.frames(),
                    m.bins()
                )));
            }
            for c in 0..m.signals() {
                out.data
                    .index_axis_mut(Axis(0), c0 + c)
                    .assign(&m.data.index_axis(Axis(0), c));
            }
            c0 += m.signals();
        }
        Ok(out)
    }

    pub fn from_frames(frames: &[Vec<Complex32>], bins: usize) -> Result<TfMap> {
        let mut out = TfMap::zeros(1, frames.len(), bins);
        for (t, fr) in frames.iter().enumerate() {
            if fr.len() != bins {
                return Err(Error::shape(format!(
                    "frame {t} has {} bins, expected {bins}",
                    fr.len()
                )));
            }
            for (f, v) in fr.iter().enumerate() {
                out.data[[0, t, f]] = *v;
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Reusable FFT plans for one [`StftConfig`].
#[derive(Clone)]
pub struct FftPair {
    cfg: StftConfig,
    window: Vec<f32>,
    forward: Arc<dyn RealToComplex<f32>>,
    inverse: Arc<dyn ComplexToReal<f32>>,
}

impl std::fmt::Debug for FftPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPair").field("cfg", &self.cfg).finish()
    }
}

impl FftPair {
    pub fn new(cfg: &StftConfig) -> Self {
        let mut planner = RealFftPlanner::<f32>::new();
        Self {
            cfg: cfg.clone(),
            window: cfg.window.iter().map(|&w| w as f32).collect(),
            forward: planner.plan_fft_forward(cfg.fft_size),
            inverse: planner.plan_fft_inverse(cfg.fft_size),
        }
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// Windowed forward transform of one `window_len` frame.
    pub fn analyze(&self, frame: &[f32], out: &mut [Complex32]) {
        debug_assert_eq!(frame.len(), self.cfg.window_len);
        let mut buf = vec![0.0f32; self.cfg.fft_size];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
            *b = x * w;
        }
        self.forward
            .process(&mut buf, out)
            .expect("buffer sizes match the plan");
    }

    /// Inverse transform, synthesis window and OLA gain applied.
    pub fn synthesize(&self, spec: &[Complex32], out: &mut [f32]) {
        debug_assert_eq!(out.len(), self.cfg.window_len);
        let mut s = spec.to_vec();
        // A real signal has purely real DC and Nyquist bins.
        s[0].im = 0.0;
        if self.cfg.fft_size.is_multiple_of(2) {
            let last = s.len() - 1;
            s[last].im = 0.0;
        }
        let mut buf = vec![0.0f32; self.cfg.fft_size];
        self.inverse
            .process(&mut s, &mut buf)
            .expect("buffer sizes match the plan");
        let scale = 1.0 / (self.cfg.fft_size as f64 * self.cfg.ola_gain()) as f32;
        for ((o, &b), &w) in out.iter_mut().zip(&buf).zip(&self.window) {
            *o = b * w * scale;
        }
    }
}

pub fn stft(samples: &[f32], cfg: &StftConfig) -> Result<TfMap> {
    if samples.len() < cfg.window_len {
        return Err(Error::EmptyInput(format!(
            "{} samples is shorter than one {}-sample window",
            samples.len(),
            cfg.window_len
        )));
    }
    let fft = FftPair::new(cfg);
    let t_count = cfg.num_frames(samples.len());
    let mut map = TfMap::zeros(1, t_count, cfg.num_bins());
    let mut spec = vec![Complex32::new(0.0, 0.0); cfg.num_bins()];
    for t in 0..t_count {
        let start = t * cfg.hop;
        fft.analyze(&samples[start..start + cfg.window_len], &mut spec);
        for (f, v) in spec.iter().enumerate() {
            map.data[[0, t, f]] = *v;
        }
    }
    Ok(map)
}

/// Overlap-add synthesis; output length is `(T - 1) * hop + window_len`.
pub fn istft(map: &TfMap, cfg: &StftConfig) -> Result<Vec<f32>> {
    if map.bins() != cfg.num_bins() {
        return Err(Error::shape(format!(
            "map has {} bins, config expects {}",
            map.bins(),
            cfg.num_bins()
        )));
    }
    if map.signals() != 1 {
        return Err(Error::shape(format!(
            "istft expects one signal, got {}",
            map.signals()
        )));
    }
    let t_count = map.frames();
    if t_count == 0 {
        return Ok(Vec::new());
    }
    let fft = FftPair::new(cfg);
    let mut out = vec![0.0f32; (t_count - 1) * cfg.hop + cfg.window_len];
    let mut frame = vec![0.0f32; cfg.window_len];
    for t in 0..t_count {
        let spec: Vec<Complex32> = map.data.slice(ndarray::s![0, t, ..]).to_vec();
        fft.synthesize(&spec, &mut frame);
        for (o, v) in out[t * cfg.hop..].iter_mut().zip(&frame) {
            *o += v;
        }
    }
    Ok(out)
}

/// `ln(|X|^2 + 1e-10)` for every bin.
pub fn log_power(map: &TfMap) -> Array3<f32> {
    map.data.mapv(|v| (v.norm_sqr() + LOG_EPS).ln())
}

/// Incremental framing for streaming input.
#[derive(Debug, Clone)]
pub struct StreamingAnalyzer {
    fft: FftPair,
    buf: Vec<f32>,
}

impl StreamingAnalyzer {
    pub fn new(cfg: &StftConfig) -> Self {
        Self {
            fft: FftPair::new(cfg),
            buf: Vec::with_capacity(cfg.window_len * 2),
        }
    }

    /// Appends samples and returns every frame completed by them.
    pub fn push(&mut self, samples: &[f32]) -> Vec<Vec<Complex32>> {
        let cfg = self.fft.config();
        let (wl, hop, bins) = (cfg.window_len, cfg.hop, cfg.num_bins());
        self.buf.extend_from_slice(samples);
        let mut frames = Vec::new();
        while self.buf.len() >= wl {
            let mut spec = vec![Complex32::new(0.0, 0.0); bins];
            self.fft.analyze(&self.buf[..wl], &mut spec);
            frames.push(spec);
            self.buf.drain(..hop);
        }
        frames
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

/// Incremental overlap-add synthesis: one frame in, `hop` samples out.
#[derive(Debug, Clone)]
pub struct StreamingSynthesizer {
    fft: FftPair,
    acc: Vec<f32>,
    frame: Vec<f32>,
}

impl StreamingSynthesizer {
    pub fn new(cfg: &StftConfig) -> Self {
        Self {
            fft: FftPair::new(cfg),
            acc: vec![0.0; cfg.window_len],
            frame: vec![0.0; cfg.window_len],
        }
    }

    pub fn push(&mut self, spec: &[Complex32]) -> Vec<f32> {
        let hop = self.fft.config().hop;
        self.fft.synthesize(spec, &mut self.frame);
        for (a, v) in self.acc.iter_mut().zip(&self.frame) {
            *a += v;
        }
        let out: Vec<f32> = self.acc[..hop].to_vec();
        self.acc.drain(..hop);
        self.acc.extend(std::iter::repeat_n(0.0, hop));
        out
    }

    /// Tail left in the accumulator after the final frame.
    pub fn flush(&mut self) -> Vec<f32> {
        let cfg = self.fft.config();
        let tail = self.acc[..cfg.window_len - cfg.hop].to_vec();
        self.acc.iter_mut().for_each(|a| *a = 0.0);
        tail
    }
}
