//! Mask-estimation network over stacked `(d, x, ê)` spectra.
//!
//! Features are channel-last `[frames, rows, channels]` where rows are
//! frequency bins or bands. The pipeline is
//! `[skip] → input/compress → encoder → blocks → decoder → decompress →
//! output layer → [frame copy]`, producing `2C` mask planes per bin.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};
use realfft::num_complex::Complex32;

use crate::config::{FreqMethod, ModelConfig};
use crate::dsp::TfMap;
use crate::error::{Error, Result};
use crate::freq::{
    bands_for_ratio, build_band_layout, stack_real, FixedFilterBank, Scale,
    TrainableBandTransform,
};
use crate::nn::{AttentionAccumulator, DsConv, DsConvState, Gru, Linear, LinearAttention};
use crate::postnet::PostNet;
use crate::time::{repeat_frames, SkipPredictor, SkipState};
use crate::weights::{Init, Initializer, Loader, ParamSource, WeightContainer};

/// Complex masks `[C, T, F]`, one per input signal.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub data: Array3<Complex32>,
}

impl MaskSet {
    /// From channel-last planes `[T, F, 2C]`: Re of signal `c` in channel
    /// `c`, Im in channel `C + c`.
    pub fn from_planes(planes: ArrayView3<'_, f32>) -> Self {
        let (t, f, cc) = planes.dim();
        let c = cc / 2;
        let data = Array3::from_shape_fn((c, t, f), |(ci, ti, fi)| {
            Complex32::new(planes[[ti, fi, ci]], planes[[ti, fi, c + ci]])
        });
        Self { data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// `Y[t, f] = Σ_c M_c[t, f] · X_c[t, f]`.
pub fn apply_masks_and_sum(x: &TfMap, m: &MaskSet) -> Result<TfMap> {
    if x.data.shape() != m.data.shape() {
        return Err(Error::shape(format!(
            "masks {:?} do not match spectra {:?}",
            m.data.shape(),
            x.data.shape()
        )));
    }
    let mut out = TfMap::zeros(1, x.frames(), x.bins());
    for c in 0..x.signals() {
        ndarray::Zip::from(out.data.index_axis_mut(Axis(0), 0))
            .and(&x.data.index_axis(Axis(0), c))
            .and(&m.data.index_axis(Axis(0), c))
            .for_each(|o, &xv, &mv| *o += mv * xv);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attn_f: LinearAttention,
    pub gru: Option<Gru>,
    pub attn_t: LinearAttention,
}

/// Immutable network weights; share across streams.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub num_bins: usize,
    pub skip: Option<SkipPredictor>,
    pub input: Option<Linear>,
    pub bank: Option<FixedFilterBank>,
    pub bands: Option<TrainableBandTransform>,
    pub encoder: Vec<DsConv>,
    pub blocks: Vec<Block>,
    pub decoder: Vec<DsConv>,
    pub output: Linear,
    pub postnet: Option<PostNet>,
}

/// Encoder and decoder depth.
pub const CONV_LAYERS: usize = 2;

impl Model {
    /// Assembles the network, pulling every tensor from `src` in schema order.
    pub fn build(cfg: &ModelConfig, num_bins: usize, src: &mut dyn ParamSource) -> Result<Self> {
        cfg.validate(num_bins)?;
        let (c, e, r) = (cfg.signals, cfg.feature_dim, cfg.time.ratio);
        let method = cfg.freq.method;

        let skip = if r > 1 {
            let out = if method == FreqMethod::TrainableMel { 2 * c } else { e };
            let fan_in = 2 * c * r;
            let w = src.tensor("skip.w", &[fan_in, out], Init::Uniform { fan_in })?;
            let b = src.tensor("skip.b", &[out], Init::Uniform { fan_in })?;
            Some(SkipPredictor::new(
                r,
                Array2::from_shape_vec((fan_in, out), w).expect("checked shape"),
                b.into(),
            )?)
        } else {
            None
        };

        let mut bank = None;
        let mut bands = None;
        let input = match method {
            FreqMethod::None if skip.is_some() => None,
            FreqMethod::None => Some(Linear::build(src, "input", 2 * c, e, true)?),
            FreqMethod::FixedErb | FreqMethod::FixedMel => {
                let scale = method.fixed_scale().expect("fixed method");
                let nb = bands_for_ratio(num_bins, cfg.freq.ratio)?;
                bank = Some(FixedFilterBank::new(
                    build_band_layout(scale, num_bins, nb)?,
                    cfg.freq.normalize,
                )?);
                Some(Linear::build(src, "input", c, e, true)?)
            }
            FreqMethod::TrainableMel => {
                let nb = bands_for_ratio(num_bins, cfg.freq.ratio)?;
                bands = Some(build_trainable(
                    src,
                    build_band_layout(Scale::Mel, num_bins, nb)?,
                    c,
                    e,
                )?);
                None
            }
        };

        let (kt, kf) = (cfg.kernel_time, cfg.kernel_freq);
        let encoder = (0..CONV_LAYERS)
            .map(|i| DsConv::build(src, &format!("enc.{i}"), e, kt, kf))
            .collect::<Result<Vec<_>>>()?;
        let blocks = (0..cfg.blocks)
            .map(|i| {
                Ok(Block {
                    attn_f: LinearAttention::build(src, &format!("block.{i}.attn_f"), e, cfg.heads, cfg.ffn_dim)?,
                    gru: if i < cfg.gru_count {
                        Some(Gru::build(src, &format!("block.{i}.gru"), e, e)?)
                    } else {
                        None
                    },
                    attn_t: LinearAttention::build(src, &format!("block.{i}.attn_t"), e, cfg.heads, cfg.ffn_dim)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..CONV_LAYERS)
            .map(|i| DsConv::build(src, &format!("dec.{i}"), e, kt, kf))
            .collect::<Result<Vec<_>>>()?;
        let out_in = if method == FreqMethod::TrainableMel { 4 * c } else { e };
        let output = Linear::build(src, "output", out_in, 2 * c, true)?;
        let postnet = if cfg.postnet.enabled {
            Some(PostNet::build(src, cfg.postnet, num_bins)?)
        } else {
            None
        };
        Ok(Self {
            cfg: *cfg,
            num_bins,
            skip,
            input,
            bank,
            bands,
            encoder,
            blocks,
            decoder,
            output,
            postnet,
        })
    }

    /// Loads from a container that must hold exactly the schema's tensors.
    pub fn from_weights(cfg: &ModelConfig, num_bins: usize, w: &WeightContainer) -> Result<Self> {
        let mut loader = Loader::new(w);
        let m = Self::build(cfg, num_bins, &mut loader)?;
        loader.finish()?;
        Ok(m)
    }

    /// Rows (bins or bands) the body operates on.
    pub fn body_rows(&self) -> usize {
        self.cfg.body_rows(self.num_bins)
    }

    /// Body input for a group of stacked frames `[T', F, 2C]` (or, for fixed
    /// banks, magnitudes) → `[T', N, E]`.
    fn front(&self, x: &TfMap) -> Result<Array3<f32>> {
        let (t, e) = (x.frames(), self.cfg.feature_dim);
        if let Some(bank) = &self.bank {
            let nb = bank.num_bands();
            let c = x.signals();
            let mut z = Array3::zeros((t, nb, c));
            let mut mags = vec![0.0f32; x.bins()];
            let mut buf = vec![0.0f32; nb];
            for ci in 0..c {
                for ti in 0..t {
                    for (m, v) in mags.iter_mut().zip(x.data.slice(s![ci, ti, ..])) {
                        *m = v.norm();
                    }
                    bank.compress_mags(&mags, &mut buf);
                    z.slice_mut(s![ti, .., ci]).assign(&ndarray::ArrayView1::from(&buf));
                }
            }
            return Ok(apply_rows(self.input.as_ref().expect("fixed input"), z.view()));
        }
        let stacked = stack_real(x);
        let grouped = match &self.skip {
            Some(sp) => sp.compress(stacked.view())?,
            None => stacked,
        };
        if let Some(tb) = &self.bands {
            let tc = grouped.dim().0;
            let mut out = Array3::zeros((tc, tb.layout.num_bands(), e));
            for ti in 0..tc {
                out.index_axis_mut(Axis(0), ti)
                    .assign(&tb.compress_frame(grouped.index_axis(Axis(0), ti)));
            }
            return Ok(out);
        }
        Ok(match &self.input {
            Some(lin) => apply_rows(lin, grouped.view()),
            None => grouped,
        })
    }

    /// Body output frame `[N, E]` → mask planes `[F, 2C]`.
    fn back_frame(&self, y: ArrayView2<'_, f32>) -> Array2<f32> {
        if let Some(bank) = &self.bank {
            self.output.forward(bank.decompress_frame(y).view())
        } else if let Some(tb) = &self.bands {
            self.output.forward(tb.decompress_frame(y).view())
        } else {
            self.output.forward(y)
        }
    }

    /// Encoder, dual-path blocks and decoder over `[T', N, E]`.
    pub fn body(&self, x: Array3<f32>) -> Array3<f32> {
        let mut x = x;
        for conv in &self.encoder {
            x = conv.forward(x.view());
        }
        for blk in &self.blocks {
            x = blk.attn_f.forward_fullband(x.view());
            if let Some(gru) = &blk.gru {
                x = &x + &gru.forward(x.view());
            }
            x = blk.attn_t.forward_subband(x.view());
        }
        for conv in &self.decoder {
            x = conv.forward(x.view());
        }
        x
    }

    /// Whole-sequence mask planes `[T, F, 2C]` for stacked spectra `[C, T, F]`.
    pub fn mask_planes(&self, x: &TfMap) -> Result<Array3<f32>> {
        self.check_input(x)?;
        let feats = self.front(x)?;
        let y = self.body(feats);
        let tc = y.dim().0;
        let mut planes = Array3::zeros((tc, self.num_bins, 2 * self.cfg.signals));
        for ti in 0..tc {
            planes
                .index_axis_mut(Axis(0), ti)
                .assign(&self.back_frame(y.index_axis(Axis(0), ti)));
        }
        repeat_frames(planes.view(), self.cfg.time.ratio, x.frames())
    }

    pub fn masks(&self, x: &TfMap) -> Result<MaskSet> {
        Ok(MaskSet::from_planes(self.mask_planes(x)?.view()))
    }

    fn check_input(&self, x: &TfMap) -> Result<()> {
        if x.signals() != self.cfg.signals || x.bins() != self.num_bins {
            return Err(Error::shape(format!(
                "model expects {} signals over {} bins, got {}x{}",
                self.cfg.signals,
                self.num_bins,
                x.signals(),
                x.bins()
            )));
        }
        Ok(())
    }

    pub fn new_state(&self) -> ModelState {
        let n = self.body_rows();
        ModelState {
            skip: self.skip.as_ref().map(|sp| SkipState::new(sp.ratio, self.num_bins, 2 * self.cfg.signals)),
            encoder: self.encoder.iter().map(|c| DsConvState::new(c, n)).collect(),
            gru: self
                .blocks
                .iter()
                .map(|b| b.gru.as_ref().map(|g| Array2::zeros((n, g.hidden()))))
                .collect(),
            accs: self
                .blocks
                .iter()
                .map(|b| vec![b.attn_t.accumulator(); n])
                .collect(),
            decoder: self.decoder.iter().map(|c| DsConvState::new(c, n)).collect(),
            frame: 0,
            last: None,
        }
    }

    /// One streaming frame: `x` is `[C, F]`; returns mask planes `[F, 2C]`.
    pub fn step(&self, st: &mut ModelState, x: ArrayView2<'_, Complex32>) -> Result<Array2<f32>> {
        if x.dim() != (self.cfg.signals, self.num_bins) {
            return Err(Error::shape(format!(
                "frame is {:?}, expected ({}, {})",
                x.dim(),
                self.cfg.signals,
                self.num_bins
            )));
        }
        let frame = TfMap {
            data: x.to_owned().insert_axis(Axis(1)),
        };
        let feat = if let Some(sp) = &self.skip {
            let stacked = stack_real(&frame);
            let Some(g) = st.skip.as_mut().expect("skip state").push(sp, stacked.index_axis(Axis(0), 0))
            else {
                st.frame += 1;
                return Ok(st.last.clone().expect("group start precedes reuse"));
            };
            match &self.bands {
                Some(tb) => tb.compress_frame(g.view()),
                None => g,
            }
        } else {
            self.front(&frame)?.index_axis_move(Axis(0), 0)
        };
        let mut y = feat;
        for (conv, cs) in self.encoder.iter().zip(&mut st.encoder) {
            y = cs.step(conv, y.view());
        }
        for ((blk, h), accs) in self.blocks.iter().zip(&mut st.gru).zip(&mut st.accs) {
            y = blk.attn_f.forward_seq(y.view(), false);
            if let (Some(gru), Some(h)) = (&blk.gru, h.as_mut()) {
                gru.step(y.view(), h);
                y = &y + &*h;
            }
            y = blk.attn_t.step_subband(y.view(), accs);
        }
        for (conv, cs) in self.decoder.iter().zip(&mut st.decoder) {
            y = cs.step(conv, y.view());
        }
        let planes = self.back_frame(y.view());
        st.last = Some(planes.clone());
        st.frame += 1;
        Ok(planes)
    }
}

fn build_trainable(
    src: &mut dyn ParamSource,
    layout: crate::freq::BandLayout,
    c: usize,
    e: usize,
) -> Result<TrainableBandTransform> {
    let mut tb = TrainableBandTransform::zeros(layout, c, e);
    for b in 0..tb.layout.num_bands() {
        let d = tb.layout.width(b);
        let fan_in = d * 2 * c;
        let init = Init::Uniform { fan_in };
        tb.comp_w[b] = Array2::from_shape_vec(
            (fan_in, e),
            src.tensor(&format!("freq.comp.{b}.w"), &[fan_in, e], init)?,
        )
        .expect("checked shape");
        tb.comp_b[b] = src.tensor(&format!("freq.comp.{b}.b"), &[e], init)?.into();
    }
    for b in 0..tb.layout.num_bands() {
        let out = tb.layout.width(b) * 4 * c;
        let init = Init::Uniform { fan_in: e };
        tb.decomp_w[b] = Array2::from_shape_vec(
            (e, out),
            src.tensor(&format!("freq.decomp.{b}.w"), &[e, out], init)?,
        )
        .expect("checked shape");
        tb.decomp_b[b] = src.tensor(&format!("freq.decomp.{b}.b"), &[out], init)?.into();
    }
    Ok(tb)
}

/// Per-row linear map over the last axis of `[T, N, I]`.
fn apply_rows(lin: &Linear, x: ArrayView3<'_, f32>) -> Array3<f32> {
    let (t, n, i) = x.dim();
    let flat = x.to_shape((t * n, i)).expect("reshape");
    lin.forward(flat.view())
        .into_shape_with_order((t, n, lin.outputs()))
        .expect("element count preserved")
}

/// Per-stream recurrent state of a [`Model`].
#[derive(Debug, Clone)]
pub struct ModelState {
    skip: Option<SkipState>,
    encoder: Vec<DsConvState>,
    gru: Vec<Option<Array2<f32>>>,
    accs: Vec<Vec<AttentionAccumulator>>,
    decoder: Vec<DsConvState>,
    frame: usize,
    last: Option<Array2<f32>>,
}

impl ModelState {
    pub fn frames_seen(&self) -> usize {
        self.frame
    }
}

/// Fresh seeded weights for `cfg`.
pub fn init_weights(cfg: &ModelConfig, num_bins: usize, seed: u64) -> Result<WeightContainer> {
    let mut init = Initializer::new(seed);
    Model::build(cfg, num_bins, &mut init)?;
    Ok(init.container)
}
