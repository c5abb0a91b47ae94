//! End-to-end enhancement: linear AEC, mask network, optional PostNet and
//! overlap-add synthesis, run either over whole signals or chunk by chunk.

use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2};
use realfft::num_complex::Complex32;

use crate::aec::{aec_frames, AecConfig, AecState};
use crate::config::RunConfig;
use crate::dsp::{istft, StftConfig, StreamingAnalyzer, StreamingSynthesizer, TfMap};
use crate::error::{Error, Result};
use crate::model::{apply_masks_and_sum, Model, ModelState};
use crate::postnet::postnet_forward;
use crate::weights::WeightContainer;

/// Immutable inference setup, shareable between streams.
#[derive(Debug, Clone)]
pub struct Engine {
    pub stft: StftConfig,
    pub aec: AecConfig,
    pub model: Model,
}

/// Enhanced signal plus the linear canceller's residual, both as long as
/// the microphone input.
#[derive(Debug, Clone, PartialEq)]
pub struct Enhanced {
    pub output: Vec<f32>,
    pub aec_error: Vec<f32>,
}

impl Engine {
    pub fn new(cfg: &RunConfig, weights: &WeightContainer) -> Result<Self> {
        cfg.validate()?;
        let model = Model::from_weights(&cfg.model, cfg.stft.num_bins(), weights)?;
        Self::from_model(cfg.stft.clone(), cfg.aec, model)
    }

    pub fn from_model(stft: StftConfig, aec: AecConfig, model: Model) -> Result<Self> {
        aec.validate()?;
        if model.cfg.signals != 3 {
            return Err(Error::config(format!(
                "the engine feeds (mic, reference, aec error), model expects {} signals",
                model.cfg.signals
            )));
        }
        if model.num_bins != stft.num_bins() {
            return Err(Error::config(format!(
                "model has {} bins, stft produces {}",
                model.num_bins,
                stft.num_bins()
            )));
        }
        Ok(Self { stft, aec, model })
    }

    /// Offline enhancement; `x` is cut or zero-padded to the length of `d`.
    pub fn enhance(&self, d: &[f32], x: &[f32]) -> Result<Vec<f32>> {
        Ok(self.enhance_detailed(d, x)?.output)
    }

    pub fn enhance_detailed(&self, d: &[f32], x: &[f32]) -> Result<Enhanced> {
        if d.is_empty() {
            return Err(Error::EmptyInput("microphone signal is empty".into()));
        }
        let n = self.stft.padded_len(d.len());
        let mut dp = d.to_vec();
        dp.resize(n, 0.0);
        let mut xp = x[..x.len().min(d.len())].to_vec();
        xp.resize(n, 0.0);

        let bins = self.stft.num_bins();
        let dm = TfMap::from_frames(&StreamingAnalyzer::new(&self.stft).push(&dp), bins)?;
        let xm = TfMap::from_frames(&StreamingAnalyzer::new(&self.stft).push(&xp), bins)?;
        let em = aec_frames(&dm, &xm, self.aec)?;
        let stacked = TfMap::stack(&[&dm, &xm, &em])?;
        let masks = self.model.masks(&stacked)?;
        let mut y = apply_masks_and_sum(&stacked, &masks)?;
        if let Some(pn) = &self.model.postnet {
            y = postnet_forward(&em, &y, pn)?;
        }
        let mut output = istft(&y, &self.stft)?;
        output.truncate(d.len());
        let mut aec_error = istft(&em, &self.stft)?;
        aec_error.truncate(d.len());
        Ok(Enhanced { output, aec_error })
    }
}

/// Per-stream state over a shared [`Engine`].
#[derive(Debug, Clone)]
pub struct Stream {
    engine: Arc<Engine>,
    an_d: StreamingAnalyzer,
    an_x: StreamingAnalyzer,
    aec: AecState,
    model: ModelState,
    postnet: Option<Array2<f32>>,
    synth: StreamingSynthesizer,
    fed: usize,
    emitted: usize,
}

impl Stream {
    pub fn new(engine: Arc<Engine>) -> Result<Self> {
        let bins = engine.stft.num_bins();
        Ok(Self {
            an_d: StreamingAnalyzer::new(&engine.stft),
            an_x: StreamingAnalyzer::new(&engine.stft),
            aec: AecState::new(engine.aec, bins)?,
            model: engine.model.new_state(),
            postnet: engine.model.postnet.as_ref().map(|pn| pn.new_state()),
            synth: StreamingSynthesizer::new(&engine.stft),
            fed: 0,
            emitted: 0,
            engine,
        })
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    /// Samples consumed so far.
    pub fn samples_in(&self) -> usize {
        self.fed
    }

    /// Feeds equal-length chunks and returns every output sample that is
    /// final. Output lags input by `window_len - hop` samples until
    /// [`Stream::finish`].
    pub fn push(&mut self, d: &[f32], x: &[f32]) -> Result<Vec<f32>> {
        if d.len() != x.len() {
            return Err(Error::shape(format!(
                "chunk lengths differ: mic {} vs reference {}",
                d.len(),
                x.len()
            )));
        }
        self.fed += d.len();
        self.process(d, x)
    }

    fn process(&mut self, d: &[f32], x: &[f32]) -> Result<Vec<f32>> {
        let fd = self.an_d.push(d);
        let fx = self.an_x.push(x);
        let mut out = Vec::with_capacity(fd.len() * self.engine.stft.hop);
        for (df, xf) in fd.iter().zip(&fx) {
            let y = self.frame(df, xf)?;
            out.extend(self.synth.push(&y));
        }
        self.emitted += out.len();
        Ok(out)
    }

    fn frame(&mut self, d: &[Complex32], x: &[Complex32]) -> Result<Vec<Complex32>> {
        let engine = Arc::clone(&self.engine);
        let bins = d.len();
        let e = self.aec.step(d, x)?;
        let mut stacked = Array2::zeros((3, bins));
        for (c, sig) in [d, x, e.as_slice()].into_iter().enumerate() {
            stacked.row_mut(c).assign(&ArrayView1::from(sig));
        }
        let planes = engine.model.step(&mut self.model, stacked.view())?;
        let mut y = mask_sum(stacked.view(), planes.view());
        if let (Some(pn), Some(h)) = (&engine.model.postnet, self.postnet.as_mut()) {
            let m = pn.step(h, ArrayView1::from(&e), ArrayView1::from(&y));
            for (v, g) in y.iter_mut().zip(&m) {
                *v *= g;
            }
        }
        Ok(y)
    }

    /// Drains the pipeline; after this the total output equals the total
    /// input length. The stream is reset afterwards.
    pub fn finish(&mut self) -> Result<Vec<f32>> {
        if self.fed == 0 {
            self.reset()?;
            return Ok(Vec::new());
        }
        let before = self.emitted;
        let pad = vec![0.0f32; self.engine.stft.padded_len(self.fed) - self.fed];
        let mut out = self.process(&pad, &pad)?;
        out.extend(self.synth.flush());
        out.truncate(self.fed - before);
        self.reset()?;
        Ok(out)
    }

    pub fn reset(&mut self) -> Result<()> {
        *self = Stream::new(Arc::clone(&self.engine))?;
        Ok(())
    }
}

/// Streaming counterpart of [`apply_masks_and_sum`] for one frame.
fn mask_sum(x: ArrayView2<'_, Complex32>, planes: ArrayView2<'_, f32>) -> Vec<Complex32> {
    let c_count = x.nrows();
    let mut y = vec![Complex32::new(0.0, 0.0); x.ncols()];
    for c in 0..c_count {
        for (f, o) in y.iter_mut().enumerate() {
            let m = Complex32::new(planes[[f, c]], planes[[f, c_count + c]]);
            *o += m * x[[c, f]];
        }
    }
    y
}

/// Streams whole signals through `engine` in fixed-size chunks.
pub fn enhance_streaming(engine: Arc<Engine>, d: &[f32], x: &[f32], chunk: usize) -> Result<Vec<f32>> {
    if d.is_empty() {
        return Err(Error::EmptyInput("microphone signal is empty".into()));
    }
    let chunk = chunk.max(1);
    let mut xa = x[..x.len().min(d.len())].to_vec();
    xa.resize(d.len(), 0.0);
    let mut st = Stream::new(engine)?;
    let mut out = Vec::with_capacity(d.len());
    for (dc, xc) in d.chunks(chunk).zip(xa.chunks(chunk)) {
        out.extend(st.push(dc, xc)?);
    }
    out.extend(st.finish()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_weights;

    fn noise(n: usize, seed: u32) -> Vec<f32> {
        let mut s = seed.wrapping_mul(2_654_435_761).max(1);
        (0..n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 17;
                s ^= s << 5;
                (s as f32 / u32::MAX as f32 - 0.5) * 0.2
            })
            .collect()
    }

    fn engine(preset: &str) -> Arc<Engine> {
        let cfg = RunConfig::preset(preset).unwrap();
        let w = init_weights(&cfg.model, cfg.stft.num_bins(), 5).unwrap();
        Arc::new(Engine::new(&cfg, &w).unwrap())
    }

    #[test]
    fn streaming_matches_offline() {
        for preset in ["uncompressed", "dualpath-2x2"] {
            let eng = engine(preset);
            let (d, x) = (noise(4000, 1), noise(4000, 2));
            let off = eng.enhance(&d, &x).unwrap();
            for chunk in [1, 160, 333] {
                let on = enhance_streaming(Arc::clone(&eng), &d, &x, chunk).unwrap();
                assert_eq!(on.len(), d.len());
                let peak = off.iter().fold(0.0f32, |a, v| a.max(v.abs()));
                for (a, b) in on.iter().zip(&off) {
                    assert!((a - b).abs() <= 1e-5 * peak, "{preset} chunk {chunk}");
                }
            }
        }
    }

    #[test]
    fn output_length_tracks_input() {
        let eng = engine("uncompressed");
        for n in [1, 319, 320, 321, 1000] {
            let d = noise(n, 3);
            assert_eq!(eng.enhance(&d, &d).unwrap().len(), n);
            assert_eq!(enhance_streaming(Arc::clone(&eng), &d, &d, 64).unwrap().len(), n);
        }
        assert!(eng.enhance(&[], &[]).is_err());
    }

    #[test]
    fn stream_rejects_ragged_chunks() {
        let mut st = Stream::new(engine("uncompressed")).unwrap();
        assert!(st.push(&[0.0; 3], &[0.0; 2]).is_err());
    }
}
