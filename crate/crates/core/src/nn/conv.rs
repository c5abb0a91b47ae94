use std::collections::VecDeque;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};

use super::{array1, LayerNorm, Linear, Prelu};
use crate::error::{Error, Result};
use crate::weights::{Init, ParamSource};

/// Depthwise-separable 2-D convolution over a `[T, N, E]` grid, causal in
/// time and centred in frequency, followed by layer norm and PReLU.
///
/// Depthwise tap `[i, j, e]` reads channel `e` at frame `t − i` and row
/// `n + j − kf/2`; positions outside the grid read zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DsConv {
    pub kt: usize,
    pub kf: usize,
    /// `[kt, kf, E]`.
    pub dw: Array3<f32>,
    pub dw_b: ndarray::Array1<f32>,
    pub pw: Linear,
    pub norm: LayerNorm,
    pub act: Prelu,
}

impl DsConv {
    pub fn build(
        src: &mut dyn ParamSource,
        name: &str,
        channels: usize,
        kt: usize,
        kf: usize,
    ) -> Result<Self> {
        if kt == 0 || kf.is_multiple_of(2) {
            return Err(Error::config(format!(
                "conv kernel {kt}x{kf} must have kt >= 1 and odd kf"
            )));
        }
        let init = Init::Uniform { fan_in: kt * kf };
        let dw = src.tensor(&format!("{name}.dw.w"), &[kt, kf, channels], init)?;
        Ok(Self {
            kt,
            kf,
            dw: Array3::from_shape_vec((kt, kf, channels), dw).expect("loader checked the shape"),
            dw_b: array1(src, &format!("{name}.dw.b"), channels, init)?,
            pw: Linear::build(src, &format!("{name}.pw"), channels, channels, true)?,
            norm: LayerNorm::build(src, &format!("{name}.ln"), channels)?,
            act: Prelu::build(src, &format!("{name}.act"), channels)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.dw_b.len()
    }

    /// `past[i]` is the frame `i` steps back (`past[0]` current).
    fn depthwise(&self, past: &[Option<ArrayView2<'_, f32>>]) -> Array2<f32> {
        let cur = past[0].expect("current frame present");
        let (n, e) = cur.dim();
        let half = self.kf / 2;
        let mut out = Array2::zeros((n, e));
        for mut row in out.rows_mut() {
            row.assign(&self.dw_b);
        }
        for (i, frame) in past.iter().enumerate() {
            let Some(frame) = frame else { continue };
            for j in 0..self.kf {
                let taps = self.dw.slice(ndarray::s![i, j, ..]);
                // output row r reads input row r + j - half
                let lo = half.saturating_sub(j);
                let hi = (n + half).saturating_sub(j).min(n);
                for r in lo..hi {
                    let src = frame.row(r + j - half);
                    let mut dst = out.row_mut(r);
                    for ((d, s), w) in dst.iter_mut().zip(src).zip(taps) {
                        *d += s * w;
                    }
                }
            }
        }
        out
    }

    fn finish(&self, mut y: Array2<f32>) -> Array2<f32> {
        self.norm.apply(y.view_mut());
        self.act.apply(y.view_mut());
        y
    }

    /// Whole-sequence forward over `[T, N, E]`.
    pub fn forward(&self, x: ArrayView3<'_, f32>) -> Array3<f32> {
        let (t, n, e) = x.dim();
        let mut dw = Array2::zeros((t * n, e));
        for ti in 0..t {
            let past: Vec<_> = (0..self.kt)
                .map(|i| ti.checked_sub(i).map(|s| x.index_axis(Axis(0), s)))
                .collect();
            dw.slice_mut(ndarray::s![ti * n..(ti + 1) * n, ..])
                .assign(&self.depthwise(&past));
        }
        let y = self.finish(self.pw.forward(dw.view()));
        y.into_shape_with_order((t, n, e)).expect("element count preserved")
    }
}

/// Past input frames kept for streaming.
#[derive(Debug, Clone)]
pub struct DsConvState {
    history: VecDeque<Array2<f32>>,
}

impl DsConvState {
    pub fn new(conv: &DsConv, rows: usize) -> Self {
        Self {
            history: (1..conv.kt)
                .map(|_| Array2::zeros((rows, conv.channels())))
                .collect(),
        }
    }

    /// One-frame forward; `[N, E]` in and out.
    pub fn step(&mut self, conv: &DsConv, frame: ArrayView2<'_, f32>) -> Array2<f32> {
        let mut past = Vec::with_capacity(conv.kt);
        past.push(Some(frame));
        past.extend(self.history.iter().map(|h| Some(h.view())));
        let dw = conv.depthwise(&past);
        let y = conv.finish(conv.pw.forward(dw.view()));
        if conv.kt > 1 {
            self.history.pop_back();
            self.history.push_front(frame.to_owned());
        }
        y
    }

    pub fn reset(&mut self) {
        self.history.iter_mut().for_each(|h| h.fill(0.0));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::Initializer;
    use ndarray::Array;

    fn conv() -> DsConv {
        DsConv::build(&mut Initializer::new(3), "c", 4, 3, 3).unwrap()
    }

    #[test]
    fn depthwise_matches_direct_sum() {
        let c = conv();
        let x = Array::from_shape_fn((5, 6, 4), |(t, n, e)| ((t * 31 + n * 7 + e * 3) % 11) as f32 - 5.0);
        let past: Vec<_> = (0..3).map(|i| Some(x.index_axis(Axis(0), 4 - i))).collect();
        let got = c.depthwise(&past);
        for n in 0..6 {
            for e in 0..4 {
                let mut want = c.dw_b[e];
                for i in 0..3 {
                    for j in 0..3 {
                        let r = n as i64 + j as i64 - 1;
                        if (0..6).contains(&r) {
                            want += c.dw[[i, j, e]] * x[[4 - i, r as usize, e]];
                        }
                    }
                }
                assert!((got[[n, e]] - want).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn streaming_matches_offline() {
        let c = conv();
        let x = Array::from_shape_fn((7, 5, 4), |(t, n, e)| ((t * 13 + n * 5 + e) % 9) as f32 * 0.3 - 1.0);
        let off = c.forward(x.view());
        let mut st = DsConvState::new(&c, 5);
        for t in 0..7 {
            let y = st.step(&c, x.index_axis(Axis(0), t));
            for (a, b) in y.iter().zip(off.index_axis(Axis(0), t)) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn rejects_even_frequency_kernel() {
        assert!(DsConv::build(&mut Initializer::new(0), "c", 4, 3, 2).is_err());
    }
}
