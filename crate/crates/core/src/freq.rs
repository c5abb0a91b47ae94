//! Frequency-axis compression: fixed triangle filterbanks with
//! pseudo-inverse decompression, and trainable per-band linear transforms.

use nalgebra::DMatrix;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::dsp::{TfMap, LOG_EPS};
use crate::error::{Error, Result};

/// Upper edge of every layout, the Nyquist frequency at 16 kHz.
pub const MAX_HZ: f64 = 8000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Erb,
    Mel,
}

impl Scale {
    pub fn from_hz(self, hz: f64) -> f64 {
        match self {
            Scale::Mel => 2595.0 * (1.0 + hz / 700.0).log10(),
            Scale::Erb => {
                let k = hz / 1000.0;
                11.17 * ((k + 0.312) / (k + 14.675)).ln() + 43.0
            }
        }
    }

    pub fn to_hz(self, v: f64) -> f64 {
        match self {
            Scale::Mel => 700.0 * (10f64.powf(v / 2595.0) - 1.0),
            Scale::Erb => {
                // Inverse of 11.17 ln((k + a) / (k + b)) + 43.
                let (a, b) = (0.312, 14.675);
                let r = ((v - 43.0) / 11.17).exp();
                1000.0 * (a - r * b) / (r - 1.0)
            }
        }
    }
}

/// Contiguous band edges over `num_bins` bins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandLayout {
    pub scale: Scale,
    pub num_bins: usize,
    pub low: Vec<usize>,
    pub high: Vec<usize>,
}

impl BandLayout {
    pub fn num_bands(&self) -> usize {
        self.low.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.low.iter().zip(&self.high).map(|(l, h)| h - l).collect()
    }

    pub fn width(&self, b: usize) -> usize {
        self.high[b] - self.low[b]
    }

    /// Partition check: contiguous, non-empty, covering `[0, num_bins)`.
    pub fn validate(&self) -> Result<()> {
        let n = self.low.len();
        if n == 0 || self.high.len() != n {
            return Err(Error::config("band layout needs matching, non-empty low/high"));
        }
        if self.low[0] != 0 || self.high[n - 1] != self.num_bins {
            return Err(Error::config("band layout must span every bin"));
        }
        for b in 0..n {
            if self.low[b] >= self.high[b] {
                return Err(Error::config(format!("band {b} is empty")));
            }
            if b > 0 && self.low[b] != self.high[b - 1] {
                return Err(Error::config(format!("band {b} is not contiguous")));
            }
        }
        Ok(())
    }
}

/// Number of bands for a compression ratio: `floor(F / ratio)`.
pub fn bands_for_ratio(num_bins: usize, ratio: usize) -> Result<usize> {
    if ratio == 0 || ratio > num_bins {
        return Err(Error::config(format!(
            "frequency ratio {ratio} is not usable with {num_bins} bins"
        )));
    }
    Ok(num_bins / ratio)
}

/// Bands with edges equally spaced on `scale` between 0 Hz and [`MAX_HZ`].
///
/// Real-valued widths are floored (minimum one bin) and the leftover bins
/// are spread so that integer widths stay non-decreasing with band index.
pub fn build_band_layout(scale: Scale, num_bins: usize, num_bands: usize) -> Result<BandLayout> {
    if num_bands == 0 || num_bands > num_bins {
        return Err(Error::config(format!(
            "cannot split {num_bins} bins into {num_bands} bands"
        )));
    }
    let top = scale.from_hz(MAX_HZ);
    let bottom = scale.from_hz(0.0);
    let pos: Vec<f64> = (0..=num_bands)
        .map(|i| {
            let v = bottom + (top - bottom) * i as f64 / num_bands as f64;
            scale.to_hz(v).clamp(0.0, MAX_HZ) * num_bins as f64 / MAX_HZ
        })
        .collect();
    let mut widths: Vec<usize> = pos
        .windows(2)
        .map(|p| ((p[1] - p[0]) + 1e-9).floor().max(1.0) as usize)
        .collect();
    let total: usize = widths.iter().sum();
    if total < num_bins {
        let deficit = num_bins - total;
        let (each, rest) = (deficit / num_bands, deficit % num_bands);
        for (b, w) in widths.iter_mut().enumerate() {
            *w += each + usize::from(b >= num_bands - rest);
        }
    } else {
        let mut excess = total - num_bins;
        while excess > 0 {
            // First band of the widest plateau; keeps the sequence sorted.
            let max = *widths.iter().max().expect("non-empty");
            let b = widths.iter().position(|&w| w == max).expect("max exists");
            debug_assert!(widths[b] > 1);
            widths[b] -= 1;
            excess -= 1;
        }
    }
    let mut low = Vec::with_capacity(num_bands);
    let mut high = Vec::with_capacity(num_bands);
    let mut edge = 0;
    for w in widths {
        low.push(edge);
        edge += w;
        high.push(edge);
    }
    let layout = BandLayout {
        scale,
        num_bins,
        low,
        high,
    };
    layout.validate()?;
    Ok(layout)
}

/// Triangle filterbank `W [B, F]` and its Moore–Penrose inverse `[F, B]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedFilterBank {
    /// Partition the triangles are centred on.
    pub layout: BandLayout,
    /// Support of each triangle (overlapping).
    pub support: Vec<(usize, usize)>,
    pub weights: Array2<f32>,
    pub pinv: Array2<f32>,
}

impl FixedFilterBank {
    /// Triangles peak at 1 on each band centre and reach 0 at the
    /// neighbouring centres; the outermost bands stay flat towards the edges.
    pub fn new(layout: BandLayout, normalize: bool) -> Result<Self> {
        layout.validate()?;
        let (nb, nf) = (layout.num_bands(), layout.num_bins);
        let centers: Vec<f64> = (0..nb)
            .map(|b| (layout.low[b] + layout.high[b] - 1) as f64 / 2.0)
            .collect();
        let mut w = DMatrix::<f64>::zeros(nb, nf);
        for b in 0..nb {
            for f in 0..nf {
                let x = f as f64;
                let c = centers[b];
                let v = if x <= c {
                    if b == 0 {
                        1.0
                    } else {
                        let l = centers[b - 1];
                        ((x - l) / (c - l)).max(0.0)
                    }
                } else if b == nb - 1 {
                    1.0
                } else {
                    let r = centers[b + 1];
                    ((r - x) / (r - c)).max(0.0)
                };
                w[(b, f)] = v;
            }
            if normalize {
                let sum: f64 = w.row(b).sum();
                w.row_mut(b).unscale_mut(sum);
            }
        }
        let pinv = w
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::config(format!("pseudo-inverse failed: {e}")))?;
        let support = (0..nb)
            .map(|b| {
                let row = w.row(b);
                let lo = (0..nf).find(|&f| row[f] > 0.0).expect("peak is positive");
                let hi = (0..nf).rev().find(|&f| row[f] > 0.0).expect("peak is positive") + 1;
                (lo, hi)
            })
            .collect();
        Ok(Self {
            layout,
            support,
            weights: Array2::from_shape_fn((nb, nf), |(b, f)| w[(b, f)] as f32),
            pinv: Array2::from_shape_fn((nf, nb), |(f, b)| pinv[(f, b)] as f32),
        })
    }

    pub fn num_bands(&self) -> usize {
        self.layout.num_bands()
    }

    pub fn num_bins(&self) -> usize {
        self.layout.num_bins
    }

    /// Count of non-zero filter weights.
    pub fn nonzeros(&self) -> usize {
        self.weights.iter().filter(|&&v| v != 0.0).count()
    }

    /// `ln(ε + Σ_f mag[f] · W[b, f])` into `out[b]`.
    pub fn compress_mags(&self, mags: &[f32], out: &mut [f32]) {
        for (b, o) in out.iter_mut().enumerate() {
            let (lo, hi) = self.support[b];
            let row = self.weights.row(b);
            let acc: f32 = (lo..hi).map(|f| mags[f] * row[f]).sum();
            *o = (LOG_EPS + acc).ln();
        }
    }

    /// Channel-last decompression `[B, E] → [F, E]`.
    pub fn decompress_frame(&self, feat: ArrayView2<'_, f32>) -> Array2<f32> {
        self.pinv.dot(&feat)
    }
}

/// `Z[c, t, b] = ln(ε + Σ_f |X[c, t, f]| · W[b, f])`.
pub fn fixed_compress(x: &TfMap, fb: &FixedFilterBank) -> Result<Array3<f32>> {
    if x.bins() != fb.num_bins() {
        return Err(Error::shape(format!(
            "map has {} bins, filterbank expects {}",
            x.bins(),
            fb.num_bins()
        )));
    }
    let mut out = Array3::zeros((x.signals(), x.frames(), fb.num_bands()));
    let mut mags = vec![0.0f32; x.bins()];
    let mut z = vec![0.0f32; fb.num_bands()];
    for c in 0..x.signals() {
        for t in 0..x.frames() {
            for (m, v) in mags.iter_mut().zip(x.data.slice(s![c, t, ..])) {
                *m = v.norm();
            }
            fb.compress_mags(&mags, &mut z);
            out.slice_mut(s![c, t, ..])
                .assign(&ndarray::ArrayView1::from(&z));
        }
    }
    Ok(out)
}

/// `out[e, t, :] = W_pinv · feat[e, t, :]`.
pub fn fixed_decompress(feat: ArrayView3<'_, f32>, fb: &FixedFilterBank) -> Result<Array3<f32>> {
    let (e, t, b) = feat.dim();
    if b != fb.num_bands() {
        return Err(Error::shape(format!(
            "feature has {b} bands, filterbank expects {}",
            fb.num_bands()
        )));
    }
    let flat = feat
        .to_shape((e * t, b))
        .map_err(|err| Error::shape(err.to_string()))?;
    let out = flat.dot(&fb.pinv.t());
    Ok(out
        .into_shape_with_order((e, t, fb.num_bins()))
        .expect("element count preserved"))
}

/// Per-band dense maps between stacked bins and the feature space.
///
/// Compression for band `b` reads the `ΔB[b] · 2C` values of bins
/// `low[b]..high[b]` in bin-major order, each bin contributing
/// `Re(X_0..X_C)` followed by `Im(X_0..X_C)`. Decompression writes
/// `ΔB[b] · 4C` values in the same bin-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableBandTransform {
    pub layout: BandLayout,
    pub signals: usize,
    pub feature_dim: usize,
    /// `[ΔB·2C, E]` per band.
    pub comp_w: Vec<Array2<f32>>,
    pub comp_b: Vec<Array1<f32>>,
    /// `[E, ΔB·4C]` per band.
    pub decomp_w: Vec<Array2<f32>>,
    pub decomp_b: Vec<Array1<f32>>,
}

impl TrainableBandTransform {
    pub fn zeros(layout: BandLayout, signals: usize, feature_dim: usize) -> Self {
        let w = layout.widths();
        Self {
            comp_w: w.iter().map(|&d| Array2::zeros((d * 2 * signals, feature_dim))).collect(),
            comp_b: w.iter().map(|_| Array1::zeros(feature_dim)).collect(),
            decomp_w: w.iter().map(|&d| Array2::zeros((feature_dim, d * 4 * signals))).collect(),
            decomp_b: w.iter().map(|&d| Array1::zeros(d * 4 * signals)).collect(),
            layout,
            signals,
            feature_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, e) = (self.signals, self.feature_dim);
        let nb = self.layout.num_bands();
        if [self.comp_w.len(), self.comp_b.len(), self.decomp_w.len(), self.decomp_b.len()]
            .iter()
            .any(|&n| n != nb)
        {
            return Err(Error::shape("per-band transform count differs from band count"));
        }
        for b in 0..nb {
            let d = self.layout.width(b);
            if self.comp_w[b].dim() != (d * 2 * c, e)
                || self.comp_b[b].len() != e
                || self.decomp_w[b].dim() != (e, d * 4 * c)
                || self.decomp_b[b].len() != d * 4 * c
            {
                return Err(Error::shape(format!("band {b} transform has the wrong shape")));
            }
        }
        Ok(())
    }

    /// Channel-last compression: stacked `[F, 2C]` → `[B, E]`.
    pub fn compress_frame(&self, stacked: ArrayView2<'_, f32>) -> Array2<f32> {
        let nb = self.layout.num_bands();
        let mut out = Array2::zeros((nb, self.feature_dim));
        for b in 0..nb {
            let (lo, hi) = (self.layout.low[b], self.layout.high[b]);
            let slab = stacked.slice(s![lo..hi, ..]);
            let flat = slab.iter().copied().collect::<Array1<f32>>();
            let mut row = flat.dot(&self.comp_w[b]);
            row += &self.comp_b[b];
            out.row_mut(b).assign(&row);
        }
        out
    }

    /// Channel-last decompression: `[B, E]` → `[F, 4C]`.
    pub fn decompress_frame(&self, feat: ArrayView2<'_, f32>) -> Array2<f32> {
        let k = 4 * self.signals;
        let mut out = Array2::zeros((self.layout.num_bins, k));
        for b in 0..self.layout.num_bands() {
            let (lo, hi) = (self.layout.low[b], self.layout.high[b]);
            let mut v = feat.row(b).dot(&self.decomp_w[b]);
            v += &self.decomp_b[b];
            let v = v
                .into_shape_with_order((hi - lo, k))
                .expect("width times 4C");
            out.slice_mut(s![lo..hi, ..]).assign(&v);
        }
        out
    }
}

/// Real stacking of a `[C, T, F]` map into channel-last `[T, F, 2C]`.
pub fn stack_real(x: &TfMap) -> Array3<f32> {
    let c = x.signals();
    let mut out = Array3::zeros((x.frames(), x.bins(), 2 * c));
    for ((ci, t, f), v) in x.data.indexed_iter() {
        out[[t, f, ci]] = v.re;
        out[[t, f, c + ci]] = v.im;
    }
    out
}

/// Channel-first `[E, T, B]` features from a `[C, T, F]` map.
pub fn trainable_compress(x: &TfMap, tb: &TrainableBandTransform) -> Result<Array3<f32>> {
    if x.bins() != tb.layout.num_bins || x.signals() != tb.signals {
        return Err(Error::shape(format!(
            "map is {}x{}, transform expects {} signals over {} bins",
            x.signals(),
            x.bins(),
            tb.signals,
            tb.layout.num_bins
        )));
    }
    let stacked = stack_real(x);
    let mut out = Array3::zeros((tb.feature_dim, x.frames(), tb.layout.num_bands()));
    for t in 0..x.frames() {
        let z = tb.compress_frame(stacked.index_axis(Axis(0), t));
        out.slice_mut(s![.., t, ..]).assign(&z.t());
    }
    Ok(out)
}

/// `[E, T, B]` features to `[4C, T, F]` output-layer inputs.
pub fn trainable_decompress(
    feat: ArrayView3<'_, f32>,
    tb: &TrainableBandTransform,
) -> Result<Array3<f32>> {
    let (e, t, b) = feat.dim();
    if e != tb.feature_dim || b != tb.layout.num_bands() {
        return Err(Error::shape(format!(
            "feature is {e}x{b}, transform expects {}x{}",
            tb.feature_dim,
            tb.layout.num_bands()
        )));
    }
    let mut out = Array3::zeros((4 * tb.signals, t, tb.layout.num_bins));
    for ti in 0..t {
        let frame = feat.slice(s![.., ti, ..]);
        let y = tb.decompress_frame(frame.t());
        out.slice_mut(s![.., ti, ..]).assign(&y.t());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_round_trips() {
        for scale in [Scale::Mel, Scale::Erb] {
            for hz in [0.0, 100.0, 1234.5, 8000.0] {
                let back = scale.to_hz(scale.from_hz(hz));
                assert!((back - hz).abs() < 1e-6, "{scale:?} {hz} -> {back}");
            }
        }
    }

    #[test]
    fn identity_layout() {
        let l = build_band_layout(Scale::Mel, 161, 161).unwrap();
        assert!(l.widths().iter().all(|&w| w == 1));
        let fb = FixedFilterBank::new(l, false).unwrap();
        for ((b, f), &v) in fb.weights.indexed_iter() {
            assert_eq!(v, if b == f { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn widths_non_decreasing() {
        for scale in [Scale::Mel, Scale::Erb] {
            for nb in [80, 40, 20, 10, 5, 1, 100, 150] {
                let l = build_band_layout(scale, 161, nb).unwrap();
                let w = l.widths();
                assert!(w.windows(2).all(|p| p[0] <= p[1]), "{scale:?} {nb}: {w:?}");
                assert_eq!(w.iter().sum::<usize>(), 161);
            }
        }
    }

    #[test]
    fn too_many_bands() {
        assert!(build_band_layout(Scale::Mel, 161, 162).is_err());
        assert!(build_band_layout(Scale::Mel, 161, 0).is_err());
    }

    #[test]
    fn weights_zero_outside_support() {
        let fb = FixedFilterBank::new(build_band_layout(Scale::Erb, 161, 20).unwrap(), false).unwrap();
        for b in 0..20 {
            let (lo, hi) = fb.support[b];
            for f in 0..161 {
                let v = fb.weights[[b, f]];
                assert!(v >= 0.0);
                if f < lo || f >= hi {
                    assert_eq!(v, 0.0);
                }
            }
        }
        // every bin is covered by some triangle
        for f in 0..161 {
            assert!(fb.weights.column(f).iter().any(|&v| v > 0.0));
        }
    }

    #[test]
    fn zero_map_gives_log_eps() {
        let fb = FixedFilterBank::new(build_band_layout(Scale::Mel, 161, 40).unwrap(), false).unwrap();
        let z = fixed_compress(&TfMap::zeros(2, 3, 161), &fb).unwrap();
        assert!(z.iter().all(|&v| (v - LOG_EPS.ln()).abs() < 1e-5));
        assert!(fixed_compress(&TfMap::zeros(1, 1, 100), &fb).is_err());
    }

    #[test]
    fn trainable_shapes_checked() {
        let l = build_band_layout(Scale::Mel, 161, 80).unwrap();
        let tb = TrainableBandTransform::zeros(l, 3, 48);
        tb.validate().unwrap();
        let z = trainable_compress(&TfMap::zeros(3, 4, 161), &tb).unwrap();
        assert_eq!(z.dim(), (48, 4, 80));
        assert!(z.iter().all(|&v| v == 0.0));
        let y = trainable_decompress(z.view(), &tb).unwrap();
        assert_eq!(y.dim(), (12, 4, 161));
        assert!(trainable_compress(&TfMap::zeros(2, 4, 161), &tb).is_err());
    }
}
