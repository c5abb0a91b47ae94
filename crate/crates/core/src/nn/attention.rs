use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};

use super::{LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::weights::ParamSource;

/// Denominator floor of the normalized attention output.
pub const DELTA: f32 = 1e-6;

/// Kernel feature map `elu(u) + 1`, strictly positive.
pub fn elu_plus_one(u: f32) -> f32 {
    if u > 0.0 {
        u + 1.0
    } else {
        u.exp()
    }
}

/// Multi-head kernelized attention with residual and layer norm, plus an
/// optional position-wise feed-forward sublayer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAttention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub norm: LayerNorm,
    pub ffn: Option<(Linear, Linear, LayerNorm)>,
}

/// Running sums `Σ φ(K_j) V_jᵀ` and `Σ φ(K_j)` for one causal sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionAccumulator {
    /// `[heads, dh, dh]`.
    pub kv: Array3<f32>,
    /// `[heads, dh]`.
    pub ksum: Array2<f32>,
}

impl AttentionAccumulator {
    pub fn new(heads: usize, dh: usize) -> Self {
        Self {
            kv: Array3::zeros((heads, dh, dh)),
            ksum: Array2::zeros((heads, dh)),
        }
    }

    fn add(&mut self, phk: ArrayView1<'_, f32>, v: ArrayView1<'_, f32>) {
        let (h, dh, _) = self.kv.dim();
        for hh in 0..h {
            for a in 0..dh {
                let ka = phk[hh * dh + a];
                self.ksum[[hh, a]] += ka;
                let mut row = self.kv.slice_mut(s![hh, a, ..]);
                for (r, vb) in row.iter_mut().zip(v.slice(s![hh * dh..(hh + 1) * dh])) {
                    *r += ka * vb;
                }
            }
        }
    }

    fn read(&self, phq: ArrayView1<'_, f32>, out: &mut [f32]) {
        let (h, dh, _) = self.kv.dim();
        for hh in 0..h {
            let q = phq.slice(s![hh * dh..(hh + 1) * dh]);
            let den: f32 = q.iter().zip(self.ksum.row(hh)).map(|(a, b)| a * b).sum::<f32>() + DELTA;
            for c in 0..dh {
                let num: f32 = (0..dh).map(|a| q[a] * self.kv[[hh, a, c]]).sum();
                out[hh * dh + c] = num / den;
            }
        }
    }

    pub fn reset(&mut self) {
        self.kv.fill(0.0);
        self.ksum.fill(0.0);
    }
}

impl LinearAttention {
    pub fn build(
        src: &mut dyn ParamSource,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::config(format!(
                "feature dim {dim} is not divisible by {heads} heads"
            )));
        }
        let ffn = if ffn_dim > 0 {
            Some((
                Linear::build(src, &format!("{name}.ffn1"), dim, ffn_dim, true)?,
                Linear::build(src, &format!("{name}.ffn2"), ffn_dim, dim, true)?,
                LayerNorm::build(src, &format!("{name}.ffn_ln"), dim)?,
            ))
        } else {
            None
        };
        Ok(Self {
            heads,
            q: Linear::build(src, &format!("{name}.q"), dim, dim, true)?,
            k: Linear::build(src, &format!("{name}.k"), dim, dim, true)?,
            v: Linear::build(src, &format!("{name}.v"), dim, dim, true)?,
            o: Linear::build(src, &format!("{name}.o"), dim, dim, true)?,
            norm: LayerNorm::build(src, &format!("{name}.ln"), dim)?,
            ffn,
        })
    }

    pub fn dim(&self) -> usize {
        self.q.inputs()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }

    pub fn accumulator(&self) -> AttentionAccumulator {
        AttentionAccumulator::new(self.heads, self.head_dim())
    }

    /// `(φ(Q), φ(K), V)` for a batch of rows.
    fn project(&self, x: ArrayView2<'_, f32>) -> (Array2<f32>, Array2<f32>, Array2<f32>) {
        (
            self.q.forward(x).mapv(elu_plus_one),
            self.k.forward(x).mapv(elu_plus_one),
            self.v.forward(x),
        )
    }

    /// Output projection, residual, norm and optional feed-forward.
    fn finish(&self, x: ArrayView2<'_, f32>, attn: ArrayView2<'_, f32>) -> Array2<f32> {
        let mut y = self.o.forward(attn);
        y += &x;
        self.norm.apply(y.view_mut());
        if let Some((f1, f2, ln)) = &self.ffn {
            let hidden = f1.forward(y.view()).mapv(|v| v.max(0.0));
            let mut z = f2.forward(hidden.view());
            z += &y;
            ln.apply(z.view_mut());
            y = z;
        }
        y
    }

    /// Attention over a `[L, E]` sequence, causal or bidirectional.
    pub fn forward_seq(&self, x: ArrayView2<'_, f32>, causal: bool) -> Array2<f32> {
        let (phq, phk, v) = self.project(x);
        let attn = if causal {
            attend_causal(self, phq.view(), phk.view(), v.view())
        } else {
            attend_full(self, phq.view(), phk.view(), v.view())
        };
        self.finish(x, attn.view())
    }

    /// Bidirectional attention along axis 1 of `[T, N, E]`, per frame.
    pub fn forward_fullband(&self, x: ArrayView3<'_, f32>) -> Array3<f32> {
        let (t, n, e) = x.dim();
        let flat = x.to_shape((t * n, e)).expect("reshape");
        let (phq, phk, v) = self.project(flat.view());
        let mut attn = Array2::zeros((t * n, e));
        for ti in 0..t {
            let rows = ti * n..(ti + 1) * n;
            let a = attend_full(
                self,
                phq.slice(s![rows.clone(), ..]),
                phk.slice(s![rows.clone(), ..]),
                v.slice(s![rows.clone(), ..]),
            );
            attn.slice_mut(s![rows, ..]).assign(&a);
        }
        let y = self.finish(flat.view(), attn.view());
        y.into_shape_with_order((t, n, e)).expect("element count preserved")
    }

    /// Causal attention along axis 0 of `[T, N, E]`, per row `n`.
    pub fn forward_subband(&self, x: ArrayView3<'_, f32>) -> Array3<f32> {
        let (t, n, e) = x.dim();
        let flat = x.to_shape((t * n, e)).expect("reshape");
        let (phq, phk, v) = self.project(flat.view());
        let mut attn = Array2::zeros((t * n, e));
        let mut buf = vec![0.0f32; e];
        for ni in 0..n {
            let mut acc = self.accumulator();
            for ti in 0..t {
                let r = ti * n + ni;
                acc.add(phk.row(r), v.row(r));
                acc.read(phq.row(r), &mut buf);
                attn.row_mut(r).assign(&ArrayView1::from(&buf));
            }
        }
        let y = self.finish(flat.view(), attn.view());
        y.into_shape_with_order((t, n, e)).expect("element count preserved")
    }

    /// One frame `[N, E]` of the causal time-axis pass.
    pub fn step_subband(
        &self,
        x: ArrayView2<'_, f32>,
        accs: &mut [AttentionAccumulator],
    ) -> Array2<f32> {
        let (phq, phk, v) = self.project(x);
        let mut attn = Array2::zeros(x.dim());
        let mut buf = vec![0.0f32; x.ncols()];
        for (ni, acc) in accs.iter_mut().enumerate() {
            acc.add(phk.row(ni), v.row(ni));
            acc.read(phq.row(ni), &mut buf);
            attn.row_mut(ni).assign(&ArrayView1::from(&buf));
        }
        self.finish(x, attn.view())
    }
}

fn attend_causal(
    la: &LinearAttention,
    phq: ArrayView2<'_, f32>,
    phk: ArrayView2<'_, f32>,
    v: ArrayView2<'_, f32>,
) -> Array2<f32> {
    let mut acc = la.accumulator();
    let mut out = Array2::zeros(v.dim());
    let mut buf = vec![0.0f32; v.ncols()];
    for i in 0..v.nrows() {
        acc.add(phk.row(i), v.row(i));
        acc.read(phq.row(i), &mut buf);
        out.row_mut(i).assign(&ArrayView1::from(&buf));
    }
    out
}

fn attend_full(
    la: &LinearAttention,
    phq: ArrayView2<'_, f32>,
    phk: ArrayView2<'_, f32>,
    v: ArrayView2<'_, f32>,
) -> Array2<f32> {
    let (h, dh) = (la.heads, la.head_dim());
    let mut out = Array2::zeros(v.dim());
    for hh in 0..h {
        let cols = hh * dh..(hh + 1) * dh;
        let k = phk.slice(s![.., cols.clone()]);
        let q = phq.slice(s![.., cols.clone()]);
        let kv = k.t().dot(&v.slice(s![.., cols.clone()]));
        let ksum: Array1<f32> = k.sum_axis(Axis(0));
        let num = q.dot(&kv);
        let den = q.dot(&ksum);
        let mut o = out.slice_mut(s![.., cols]);
        for (mut row, (nrow, d)) in o.rows_mut().into_iter().zip(num.rows().into_iter().zip(&den)) {
            row.assign(&(&nrow / (d + DELTA)));
        }
    }
    out
}
