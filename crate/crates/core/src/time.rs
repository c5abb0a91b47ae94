//! Skip-prediction time compression and frame-copy decompression.
//!
//! Group `g` is computed at frame `g·r` from the stacked frames
//! `g·r − r + 1 ..= g·r` (oldest first, zeros before the start) and its
//! result is reused for frames `g·r .. g·r + r`.

use std::collections::VecDeque;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayView3, Axis};

use crate::error::{Error, Result};

/// Ratios accepted for both axes.
pub const SUPPORTED_RATIOS: [usize; 6] = [1, 2, 4, 8, 16, 32];

pub fn check_ratio(r: usize, what: &str) -> Result<()> {
    if SUPPORTED_RATIOS.contains(&r) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "{what} ratio {r} is not one of {SUPPORTED_RATIOS:?}"
        )))
    }
}

/// `ceil(T / r)`.
pub fn compressed_len(frames: usize, r: usize) -> usize {
    frames.div_ceil(r)
}

/// Linear map from `r` stacked `D`-channel frames to `out_dim` channels,
/// shared across the frequency axis.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipPredictor {
    pub ratio: usize,
    /// `[r·D, out_dim]`, row `j·D + d` reads channel `d` of stacked frame `j`.
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl SkipPredictor {
    pub fn new(ratio: usize, weight: Array2<f32>, bias: Array1<f32>) -> Result<Self> {
        check_ratio(ratio, "time")?;
        if !weight.nrows().is_multiple_of(ratio) || weight.ncols() != bias.len() {
            return Err(Error::shape(format!(
                "skip weight {:?} / bias {} inconsistent with ratio {ratio}",
                weight.dim(),
                bias.len()
            )));
        }
        Ok(Self { ratio, weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows() / self.ratio
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }

    /// Channel-last `[T, N, D]` → `[ceil(T/r), N, out]`.
    pub fn compress(&self, x: ArrayView3<'_, f32>) -> Result<Array3<f32>> {
        let (t, n, d) = x.dim();
        if d != self.in_dim() {
            return Err(Error::shape(format!(
                "skip input has {d} channels, expected {}",
                self.in_dim()
            )));
        }
        let r = self.ratio;
        let tc = compressed_len(t, r);
        let mut stacked = Array2::<f32>::zeros((tc * n, r * d));
        for g in 0..tc {
            let cur = g * r;
            for j in 0..r {
                // stacked slot j holds frame cur - (r - 1 - j)
                let Some(src) = (cur + j + 1).checked_sub(r) else {
                    continue;
                };
                stacked
                    .slice_mut(s![g * n..(g + 1) * n, j * d..(j + 1) * d])
                    .assign(&x.index_axis(Axis(0), src));
            }
        }
        let mut y = stacked.dot(&self.weight);
        y += &self.bias;
        Ok(y.into_shape_with_order((tc, n, self.out_dim())).expect("element count preserved"))
    }
}

/// Spec-shaped entry point: `[D, T, F]` → `[E, T', F]`.
pub fn skip_compress(x: ArrayView3<'_, f32>, sp: &SkipPredictor) -> Result<Array3<f32>> {
    let y = sp.compress(x.permuted_axes([1, 2, 0]))?;
    Ok(y.permuted_axes([2, 0, 1]).as_standard_layout().to_owned())
}

/// `out[:, t, :] = feat[:, floor(t / r), :]` for `[E, T', F]` input.
pub fn skip_decompress(feat: ArrayView3<'_, f32>, r: usize, frames: usize) -> Result<Array3<f32>> {
    let y = repeat_frames(feat.permuted_axes([1, 0, 2]), r, frames)?;
    Ok(y.permuted_axes([1, 0, 2]).as_standard_layout().to_owned())
}

/// Frame-copy along axis 0: `[T', ...]` → `[T, ...]`.
pub fn repeat_frames(feat: ArrayView3<'_, f32>, r: usize, frames: usize) -> Result<Array3<f32>> {
    if r == 0 || feat.dim().0 != compressed_len(frames, r) {
        return Err(Error::shape(format!(
            "{} compressed frames cannot expand to {frames} frames at ratio {r}",
            feat.dim().0
        )));
    }
    let (_, a, b) = feat.dim();
    let mut out = Array3::zeros((frames, a, b));
    for t in 0..frames {
        out.index_axis_mut(Axis(0), t)
            .assign(&feat.index_axis(Axis(0), t / r));
    }
    Ok(out)
}

/// Streaming stacker: keeps the last `r` frames.
#[derive(Debug, Clone)]
pub struct SkipState {
    ratio: usize,
    history: VecDeque<Array2<f32>>,
    frame_index: usize,
}

impl SkipState {
    pub fn new(ratio: usize, rows: usize, channels: usize) -> Self {
        Self {
            ratio,
            history: (0..ratio).map(|_| Array2::zeros((rows, channels))).collect(),
            frame_index: 0,
        }
    }

    /// Pushes one `[N, D]` frame; at group starts returns the compressed
    /// `[N, out]` frame, otherwise `None` (the caller reuses the last one).
    pub fn push(&mut self, sp: &SkipPredictor, frame: ArrayView2<'_, f32>) -> Option<Array2<f32>> {
        self.history.pop_front();
        self.history.push_back(frame.to_owned());
        let due = self.frame_index.is_multiple_of(self.ratio);
        self.frame_index += 1;
        if !due {
            return None;
        }
        let (n, d) = frame.dim();
        let mut stacked = Array2::<f32>::zeros((n, self.ratio * d));
        for (j, h) in self.history.iter().enumerate() {
            stacked.slice_mut(s![.., j * d..(j + 1) * d]).assign(h);
        }
        let mut y = stacked.dot(&sp.weight);
        y += &sp.bias;
        Some(y)
    }

    pub fn reset(&mut self) {
        self.history.iter_mut().for_each(|h| h.fill(0.0));
        self.frame_index = 0;
    }
}
