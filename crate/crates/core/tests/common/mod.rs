#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use dpc::nn::{elu_plus_one, Linear, LinearAttention, DELTA, LN_EPS};
use ndarray::{Array2, ArrayView2};

pub const FS: usize = 16_000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn white(n: usize, std: f32, seed: u64) -> Vec<f32> {
    let mut r = rng(seed);
    let d = Normal::new(0.0f32, std).unwrap();
    (0..n).map(|_| d.sample(&mut r)).collect()
}

/// Voiced, syllable-gated harmonic signal with pauses; a stand-in for speech.
pub fn speech_like(n: usize, seed: u64) -> Vec<f32> {
    let mut r = rng(seed);
    let f0_base: f32 = r.random_range(100.0..220.0);
    let rate: f32 = r.random_range(3.0..5.0);
    let mut phase = 0.0f32;
    let noise = Normal::new(0.0f32, 0.02).unwrap();
    (0..n)
        .map(|i| {
            let t = i as f32 / FS as f32;
            let f0 = f0_base * (1.0 + 0.1 * (2.0 * std::f32::consts::PI * 0.7 * t).sin());
            phase += 2.0 * std::f32::consts::PI * f0 / FS as f32;
            let syl = (std::f32::consts::PI * rate * t).sin().max(0.0).powi(2);
            // pause for 0.4 s out of every 2 s
            let gate = if (t % 2.0) > 1.6 { 0.0 } else { 1.0 };
            let mut v = 0.0;
            for h in 1..12 {
                let amp = 1.0 / h as f32 * (1.0 + (h as f32 * 0.9 + t).sin() * 0.3);
                v += amp * (phase * h as f32).sin();
            }
            gate * (0.15 * syl * v + syl * noise.sample(&mut r))
        })
        .collect()
}

pub fn power(x: &[f32]) -> f64 {
    x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len().max(1) as f64
}

pub fn snr_db(reference: &[f32], est: &[f32]) -> f64 {
    let s: f64 = reference.iter().map(|&v| (v as f64).powi(2)).sum();
    let e: f64 = reference
        .iter()
        .zip(est)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    10.0 * (s / e).log10()
}

pub fn delay(x: &[f32], d: usize, gain: f32) -> Vec<f32> {
    let mut y = vec![0.0; x.len()];
    for i in d..x.len() {
        y[i] = gain * x[i - d];
    }
    y
}

/// Quadratic-time attention in f64, straight from the pairwise form.
pub fn quadratic_attention(la: &LinearAttention, x: ArrayView2<'_, f32>, causal: bool) -> Array2<f64> {
    let (l, e) = x.dim();
    let dh = la.head_dim();
    let proj = |lin: &Linear| lin.forward(x).mapv(f64::from);
    let (q, k, v) = (proj(&la.q), proj(&la.k), proj(&la.v));
    let phi = |a: f64| elu_plus_one(a as f32) as f64;
    let mut attn = Array2::<f64>::zeros((l, e));
    for h in 0..la.heads {
        for i in 0..l {
            let last = if causal { i + 1 } else { l };
            let mut num = vec![0.0f64; dh];
            let mut den = DELTA as f64;
            for j in 0..last {
                let w: f64 = (0..dh).map(|a| phi(q[[i, h * dh + a]]) * phi(k[[j, h * dh + a]])).sum();
                den += w;
                for (c, nv) in num.iter_mut().enumerate() {
                    *nv += w * v[[j, h * dh + c]];
                }
            }
            for c in 0..dh {
                attn[[i, h * dh + c]] = num[c] / den;
            }
        }
    }
    let ow = la.o.w.mapv(f64::from);
    let mut y = attn.dot(&ow) + x.mapv(f64::from);
    if let Some(b) = &la.o.b {
        y += &b.mapv(f64::from);
    }
    for mut row in y.rows_mut() {
        let mean = row.sum() / e as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / e as f64;
        let inv = 1.0 / (var + LN_EPS as f64).sqrt();
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * la.norm.gamma[c] as f64 + la.norm.beta[c] as f64;
        }
    }
    y
}
