//! Inference-only layers over channel-last rows.

mod attention;
mod conv;
mod gru;

pub use attention::{elu_plus_one, LinearAttention, AttentionAccumulator, DELTA};
pub use conv::{DsConv, DsConvState};
pub use gru::Gru;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2};

use crate::error::Result;
use crate::weights::{Init, ParamSource};

pub const LN_EPS: f32 = 1e-5;

fn array1(src: &mut dyn ParamSource, name: &str, n: usize, init: Init) -> Result<Array1<f32>> {
    Ok(Array1::from(src.tensor(name, &[n], init)?))
}

fn array2(
    src: &mut dyn ParamSource,
    name: &str,
    rows: usize,
    cols: usize,
    init: Init,
) -> Result<Array2<f32>> {
    let v = src.tensor(name, &[rows, cols], init)?;
    Ok(Array2::from_shape_vec((rows, cols), v).expect("loader checked the shape"))
}

/// Dense `in → out` map; weight stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f32>,
    pub b: Option<Array1<f32>>,
}

impl Linear {
    pub fn build(
        src: &mut dyn ParamSource,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
    ) -> Result<Self> {
        let init = Init::Uniform { fan_in: inputs };
        let w = array2(src, &format!("{name}.w"), inputs, outputs, init)?;
        let b = if bias {
            Some(array1(src, &format!("{name}.b"), outputs, init)?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    /// `[n, in] → [n, out]`.
    pub fn forward(&self, x: ArrayView2<'_, f32>) -> Array2<f32> {
        let mut y = x.dot(&self.w);
        if let Some(b) = &self.b {
            y += b;
        }
        y
    }

    pub fn forward_vec(&self, x: ArrayView1<'_, f32>) -> Array1<f32> {
        let mut y = x.dot(&self.w);
        if let Some(b) = &self.b {
            y += b;
        }
        y
    }
}

/// Normalization over the channel (last) axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Array1<f32>,
    pub beta: Array1<f32>,
}

impl LayerNorm {
    pub fn build(src: &mut dyn ParamSource, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: array1(src, &format!("{name}.g"), dim, Init::Const(1.0))?,
            beta: array1(src, &format!("{name}.b"), dim, Init::Const(0.0))?,
        })
    }

    pub fn apply(&self, mut x: ArrayViewMut2<'_, f32>) {
        let n = x.ncols() as f32;
        for mut row in x.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            for ((v, g), b) in row.iter_mut().zip(&self.gamma).zip(&self.beta) {
                *v = (*v - mean) * inv * g + b;
            }
        }
    }
}

/// Parametric ReLU with one slope per channel (or one shared slope).
#[derive(Debug, Clone, PartialEq)]
pub struct Prelu {
    pub slope: Array1<f32>,
}

impl Prelu {
    pub fn build(src: &mut dyn ParamSource, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            slope: array1(src, &format!("{name}.a"), channels, Init::Const(0.25))?,
        })
    }

    pub fn apply(&self, mut x: ArrayViewMut2<'_, f32>) {
        let shared = self.slope.len() == 1;
        for mut row in x.rows_mut() {
            for (c, v) in row.iter_mut().enumerate() {
                if *v < 0.0 {
                    *v *= if shared { self.slope[0] } else { self.slope[c] };
                }
            }
        }
    }
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::Filled;
    use ndarray::array;

    #[test]
    fn linear_matches_loop() {
        let l = Linear {
            w: array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]],
            b: Some(array![0.5, 0.0, -1.0]),
        };
        let x = array![[1.0, -1.0], [0.0, 2.0]];
        let y = l.forward(x.view());
        for n in 0..2 {
            for o in 0..3 {
                let want = (0..2).map(|i| x[[n, i]] * l.w[[i, o]]).sum::<f32>() + l.b.as_ref().unwrap()[o];
                assert_eq!(y[[n, o]], want);
            }
        }
    }

    #[test]
    fn layer_norm_standardizes() {
        let ln = LayerNorm::build(&mut Filled(1.0), "ln", 4).unwrap();
        let ln = LayerNorm { beta: Array1::zeros(4), ..ln };
        let mut x = array![[1.0, 2.0, 3.0, 4.0]];
        ln.apply(x.view_mut());
        assert!(x.sum().abs() < 1e-6);
        let var = x.iter().map(|v| v * v).sum::<f32>() / 4.0;
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn prelu_scales_negatives() {
        let p = Prelu { slope: array![0.1, 0.5] };
        let mut x = array![[-1.0, -2.0], [3.0, 4.0]];
        p.apply(x.view_mut());
        assert_eq!(x, array![[-0.1, -1.0], [3.0, 4.0]]);
    }
}
