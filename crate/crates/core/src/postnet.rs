//! Full-frame-rate corrector: band compression of two log-power spectra,
//! a causal GRU, decompression and a sigmoid real-valued mask.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use realfft::num_complex::Complex32;

use crate::config::PostNetConfig;
use crate::dsp::{TfMap, LOG_EPS};
use crate::error::{Error, Result};
use crate::freq::{build_band_layout, BandLayout, Scale};
use crate::nn::{sigmoid, Gru, Linear, Prelu};
use crate::weights::ParamSource;

#[derive(Debug, Clone, PartialEq)]
pub struct PostNet {
    pub cfg: PostNetConfig,
    pub layout: BandLayout,
    /// Per band `2·ΔB → 1`, input bin-major with (ê, ŝ) per bin.
    pub comp: Vec<Linear>,
    pub gru: Gru,
    /// `H → B·K`, output index `b·K + k`.
    pub decomp: Linear,
    pub conv1: Linear,
    pub act: Prelu,
    pub conv2: Linear,
    /// `B → F`.
    pub fc: Linear,
}

impl PostNet {
    pub fn build(src: &mut dyn ParamSource, cfg: PostNetConfig, num_bins: usize) -> Result<Self> {
        let layout = build_band_layout(Scale::Mel, num_bins, cfg.bands)?;
        let comp = (0..cfg.bands)
            .map(|b| Linear::build(src, &format!("postnet.comp.{b}"), 2 * layout.width(b), 1, true))
            .collect::<Result<Vec<_>>>()?;
        let (nb, k) = (cfg.bands, cfg.decomp_channels);
        Ok(Self {
            gru: Gru::build(src, "postnet.gru", nb, cfg.gru_hidden)?,
            decomp: Linear::build(src, "postnet.decomp", cfg.gru_hidden, nb * k, true)?,
            conv1: Linear::build(src, "postnet.conv1", k, cfg.conv_hidden, true)?,
            act: Prelu::build(src, "postnet.act", 1)?,
            conv2: Linear::build(src, "postnet.conv2", cfg.conv_hidden, 1, true)?,
            fc: Linear::build(src, "postnet.fc", nb, num_bins, true)?,
            comp,
            layout,
            cfg,
        })
    }

    pub fn num_bins(&self) -> usize {
        self.layout.num_bins
    }

    /// Compressed `[B]` features of one frame.
    fn features(&self, e: ArrayView1<'_, Complex32>, y: ArrayView1<'_, Complex32>) -> Array1<f32> {
        let mut out = Array1::zeros(self.cfg.bands);
        for (b, lin) in self.comp.iter().enumerate() {
            let (lo, hi) = (self.layout.low[b], self.layout.high[b]);
            let mut v = Array1::zeros(2 * (hi - lo));
            for (i, f) in (lo..hi).enumerate() {
                v[2 * i] = (e[f].norm_sqr() + LOG_EPS).ln();
                v[2 * i + 1] = (y[f].norm_sqr() + LOG_EPS).ln();
            }
            out[b] = lin.forward_vec(v.view())[0];
        }
        out
    }

    /// Pre-sigmoid logits `[F]` from the GRU state of one frame.
    pub fn logits(&self, h: ArrayView1<'_, f32>) -> Array1<f32> {
        let dec = self.decomp.forward_vec(h);
        let dec = dec
            .into_shape_with_order((self.cfg.bands, self.cfg.decomp_channels))
            .expect("B·K values");
        let mut hid = self.conv1.forward(dec.view());
        self.act.apply(hid.view_mut());
        let per_band = self.conv2.forward(hid.view());
        self.fc.forward_vec(per_band.column(0))
    }

    /// Mask `[T, F]` for whole spectra `[T, F]`.
    pub fn masks(&self, e: ArrayView2<'_, Complex32>, y: ArrayView2<'_, Complex32>) -> Array2<f32> {
        let t = e.nrows();
        let mut feats = Array2::zeros((t, self.cfg.bands));
        for ti in 0..t {
            feats.row_mut(ti).assign(&self.features(e.row(ti), y.row(ti)));
        }
        let x3 = feats
            .into_shape_with_order((t, 1, self.cfg.bands))
            .expect("one row per frame");
        let hs = self.gru.forward(x3.view());
        let mut out = Array2::zeros((t, self.num_bins()));
        for ti in 0..t {
            let l = self.logits(hs.slice(s![ti, 0, ..]));
            out.row_mut(ti).assign(&l.mapv(sigmoid));
        }
        out
    }

    pub fn new_state(&self) -> Array2<f32> {
        Array2::zeros((1, self.cfg.gru_hidden))
    }

    /// One streaming frame: advances `h` and returns the `[F]` mask.
    pub fn step(
        &self,
        h: &mut Array2<f32>,
        e: ArrayView1<'_, Complex32>,
        y: ArrayView1<'_, Complex32>,
    ) -> Array1<f32> {
        let f = self.features(e, y);
        let x = f.insert_axis(ndarray::Axis(0));
        self.gru.step(x.view(), h);
        self.logits(h.row(0)).mapv(sigmoid)
    }
}

/// `m ⊙ ŝ` with `m` predicted from the log powers of `ê` and `ŝ`.
pub fn postnet_forward(e: &TfMap, y: &TfMap, pn: &PostNet) -> Result<TfMap> {
    if e.data.shape() != y.data.shape() || e.signals() != 1 || e.bins() != pn.num_bins() {
        return Err(Error::shape(format!(
            "postnet expects two single-signal maps over {} bins, got {:?} and {:?}",
            pn.num_bins(),
            e.data.shape(),
            y.data.shape()
        )));
    }
    let m = pn.masks(e.signal(0), y.signal(0));
    let mut out = y.clone();
    for ((_, t, f), v) in out.data.indexed_iter_mut() {
        *v *= m[[t, f]];
    }
    Ok(out)
}
