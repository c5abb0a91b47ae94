use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};

use super::{array1, array2, sigmoid};
use crate::error::Result;
use crate::weights::{Init, ParamSource};

/// Single-layer GRU with gates ordered (reset, update, new):
///
/// ```text
/// r = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
///
/// `w_ih` is stored `[3H, I]` and `w_hh` `[3H, H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gru {
    pub w_ih: Array2<f32>,
    pub w_hh: Array2<f32>,
    pub b_ih: ndarray::Array1<f32>,
    pub b_hh: ndarray::Array1<f32>,
}

impl Gru {
    pub fn build(src: &mut dyn ParamSource, name: &str, inputs: usize, hidden: usize) -> Result<Self> {
        let init = Init::Uniform { fan_in: hidden };
        Ok(Self {
            w_ih: array2(src, &format!("{name}.w_ih"), 3 * hidden, inputs, init)?,
            w_hh: array2(src, &format!("{name}.w_hh"), 3 * hidden, hidden, init)?,
            b_ih: array1(src, &format!("{name}.b_ih"), 3 * hidden, init)?,
            b_hh: array1(src, &format!("{name}.b_hh"), 3 * hidden, init)?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    /// Input projections `x W_ihᵀ + b_ih` for a batch of rows.
    fn project(&self, x: ArrayView2<'_, f32>) -> Array2<f32> {
        let mut gi = x.dot(&self.w_ih.t());
        gi += &self.b_ih;
        gi
    }

    fn update(&self, gi: ArrayView2<'_, f32>, h: &mut Array2<f32>) {
        let hd = self.hidden();
        let mut gh = h.dot(&self.w_hh.t());
        gh += &self.b_hh;
        for ((mut hrow, gir), ghr) in h.rows_mut().into_iter().zip(gi.rows()).zip(gh.rows()) {
            for k in 0..hd {
                let r = sigmoid(gir[k] + ghr[k]);
                let z = sigmoid(gir[hd + k] + ghr[hd + k]);
                let n = (gir[2 * hd + k] + r * ghr[2 * hd + k]).tanh();
                hrow[k] = (1.0 - z) * n + z * hrow[k];
            }
        }
    }

    /// One step for every row: `x [N, I]`, state `h [N, H]` updated in place.
    pub fn step(&self, x: ArrayView2<'_, f32>, h: &mut Array2<f32>) {
        let gi = self.project(x);
        self.update(gi.view(), h);
    }

    /// Runs along axis 0 of `[T, N, I]` from a zero state; returns `[T, N, H]`.
    pub fn forward(&self, x: ArrayView3<'_, f32>) -> Array3<f32> {
        let (t, n, i) = x.dim();
        let hd = self.hidden();
        let flat = x.to_shape((t * n, i)).expect("contiguous enough to reshape");
        let gi = self.project(flat.view());
        let mut h = Array2::zeros((n, hd));
        let mut out = Array3::zeros((t, n, hd));
        for ti in 0..t {
            self.update(gi.slice(s![ti * n..(ti + 1) * n, ..]), &mut h);
            out.index_axis_mut(Axis(0), ti).assign(&h);
        }
        out
    }
}
