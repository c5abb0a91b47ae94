//! Short-time objective intelligibility at a 10 kHz internal rate.

use realfft::num_complex::Complex64;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};

const FS: usize = 10_000;
const FRAME: usize = 256;
const HOP: usize = FRAME / 2;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per intermediate-intelligibility segment (384 ms).
const SEGMENT: usize = 30;
/// Lower signal-to-distortion bound in dB.
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// STOI of `est` against clean `reference`, both sampled at 16 kHz.
pub fn stoi(est: &[f32], reference: &[f32]) -> Result<f64> {
    check(est, reference)?;
    let x = resample_16k_to_10k(&to_f64(reference));
    let y = resample_16k_to_10k(&to_f64(est));
    stoi_core(&x, &y)
}

/// STOI of signals already at the 10 kHz internal rate.
pub fn stoi_10k(est: &[f64], reference: &[f64]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::shape("stoi: lengths differ"));
    }
    stoi_core(reference, est)
}

fn check(est: &[f32], reference: &[f32]) -> Result<()> {
    if est.len() != reference.len() {
        return Err(Error::shape(format!(
            "stoi: lengths differ ({} vs {})",
            est.len(),
            reference.len()
        )));
    }
    Ok(())
}

fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

fn hann_inner(n: usize) -> Vec<f64> {
    // Symmetric Hann of length n + 2 with both zero endpoints dropped.
    let m = (n + 1) as f64;
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / m).cos())
        .collect()
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Kaiser-windowed sinc anti-aliasing filter for rational resampling
/// (up 5, down 8), 60 dB rejection, normalised to unit DC gain.
fn resample_filter(up: usize, down: usize) -> Vec<f64> {
    let rejection_db = 60.0;
    let cutoff = 1.0 / (2 * up.max(down)) as f64;
    let roll_off = cutoff / 10.0;
    let half = ((rejection_db - 8.0) / (28.714 * roll_off)).ceil() as i64;
    let beta = 0.1102 * (rejection_db - 8.7);
    let m = (2 * half + 1) as f64;
    let i0b = bessel_i0(beta);
    let h: Vec<f64> = (-half..=half)
        .enumerate()
        .map(|(n, t)| {
            let r = 2.0 * n as f64 / (m - 1.0) - 1.0;
            let kaiser = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b;
            kaiser * 2.0 * up as f64 * cutoff * sinc(2.0 * cutoff * t as f64)
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.into_iter().map(|v| v / sum).collect()
}

/// Polyphase 16 kHz → 10 kHz with zero boundary padding.
pub(crate) fn resample_16k_to_10k(x: &[f64]) -> Vec<f64> {
    let (up, down) = (5usize, 8usize);
    let h = resample_filter(up, down);
    let half = (h.len() - 1) / 2;
    let n_out = (x.len() * up).div_ceil(down);
    (0..n_out)
        .map(|m| {
            // y[m] = Σ_j up · h[half + down·m − up·j] · x[j]
            let centre = (half + down * m) as i64;
            let j_lo = ((centre - (h.len() as i64 - 1)).max(0) as usize).div_ceil(up);
            let j_hi = ((centre as usize) / up).min(x.len().saturating_sub(1));
            let mut acc = 0.0;
            if !x.is_empty() {
                for j in j_lo..=j_hi {
                    acc += h[(centre - (up * j) as i64) as usize] * x[j];
                }
            }
            acc * up as f64
        })
        .collect()
}

fn frame_starts(len: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(HOP)
}

/// Drops frames more than 40 dB below the loudest clean frame and
/// overlap-adds the survivors of both signals.
fn remove_silent_frames(x: &[f64], y: &[f64], w: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let starts: Vec<usize> = frame_starts(x.len()).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&i| {
            let e: f64 = (0..FRAME).map(|n| (w[n] * x[i + n]).powi(2)).sum();
            20.0 * (e.sqrt() + EPS).log10()
        })
        .collect();
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| max - DYN_RANGE_DB - e < 0.0)
        .map(|(&i, _)| i)
        .collect();
    if keep.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let len = (keep.len() - 1) * HOP + FRAME;
    let mut xs = vec![0.0; len];
    let mut ys = vec![0.0; len];
    for (k, &i) in keep.iter().enumerate() {
        for n in 0..FRAME {
            xs[k * HOP + n] += w[n] * x[i + n];
            ys[k * HOP + n] += w[n] * y[i + n];
        }
    }
    (xs, ys)
}

/// One-third-octave band edges as FFT bin ranges.
fn third_octave_bins() -> Vec<(usize, usize)> {
    let freqs: Vec<f64> = (0..=NFFT / 2).map(|k| k as f64 * FS as f64 / NFFT as f64).collect();
    let nearest = |target: f64| {
        freqs
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |best, (k, &f)| {
                let d = (f - target).powi(2);
                if d < best.1 {
                    (k, d)
                } else {
                    best
                }
            })
            .0
    };
    (0..BANDS)
        .map(|i| {
            let k = i as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// `[frames][bands]` third-octave magnitudes.
fn band_envelopes(sig: &[f64], w: &[f64], bands: &[(usize, usize)]) -> Vec<[f64; BANDS]> {
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(NFFT);
    let mut buf = vec![0.0; NFFT];
    let mut spec = vec![Complex64::new(0.0, 0.0); NFFT / 2 + 1];
    frame_starts(sig.len())
        .map(|i| {
            buf.iter_mut().for_each(|v| *v = 0.0);
            for n in 0..FRAME {
                buf[n] = w[n] * sig[i + n];
            }
            fft.process(&mut buf, &mut spec).expect("plan sizes match");
            let mut out = [0.0; BANDS];
            for (o, &(lo, hi)) in out.iter_mut().zip(bands) {
                *o = spec[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            }
            out
        })
        .collect()
}

fn stoi_core(x: &[f64], y: &[f64]) -> Result<f64> {
    let w = hann_inner(FRAME);
    let (xs, ys) = remove_silent_frames(x, y, &w);
    let bands = third_octave_bins();
    let xt = band_envelopes(&xs, &w, &bands);
    let yt = band_envelopes(&ys, &w, &bands);
    if xt.len() < SEGMENT {
        return Err(Error::TooShort(format!(
            "{} active frames, intelligibility needs at least {SEGMENT}",
            xt.len()
        )));
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let segments = xt.len() - SEGMENT + 1;
    let mut total = 0.0;
    for m in 0..segments {
        for j in 0..BANDS {
            let xv: Vec<f64> = (m..m + SEGMENT).map(|t| xt[t][j]).collect();
            let yv: Vec<f64> = (m..m + SEGMENT).map(|t| yt[t][j]).collect();
            let alpha = norm(&xv) / (norm(&yv) + EPS);
            let mut yp: Vec<f64> = yv
                .iter()
                .zip(&xv)
                .map(|(&yy, &xx)| (yy * alpha).min(xx * clip))
                .collect();
            let mut xc = xv;
            let my = yp.iter().sum::<f64>() / SEGMENT as f64;
            let mx = xc.iter().sum::<f64>() / SEGMENT as f64;
            yp.iter_mut().for_each(|v| *v -= my);
            xc.iter_mut().for_each(|v| *v -= mx);
            let ny = norm(&yp) + EPS;
            let nx = norm(&xc) + EPS;
            total += yp.iter().zip(&xc).map(|(a, b)| (a / ny) * (b / nx)).sum::<f64>();
        }
    }
    Ok(total / (segments * BANDS) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn third_octave_layout() {
        let b = third_octave_bins();
        assert_eq!(b.len(), 15);
        assert!(b.windows(2).all(|p| p[0].1 == p[1].0 || p[0].1 <= p[1].0 + 1));
        // 150 Hz · 2^(-1/6) ≈ 133.6 Hz → bin 7 at 19.53 Hz spacing
        assert_eq!(b[0].0, 7);
    }

    #[test]
    fn resample_length_and_dc_gain() {
        let x = vec![1.0; 1600];
        let y = resample_16k_to_10k(&x);
        assert_eq!(y.len(), 1000);
        for v in &y[100..900] {
            assert!((v - 1.0).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn bessel_matches_known_value() {
        // I0(1) = 1.2660658777520082
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_2).abs() < 1e-15);
    }

    #[test]
    fn short_input_rejected() {
        let x: Vec<f32> = (0..4000).map(|i| (i as f32 * 0.1).sin()).collect();
        assert!(matches!(stoi(&x, &x), Err(Error::TooShort(_))));
    }
}
