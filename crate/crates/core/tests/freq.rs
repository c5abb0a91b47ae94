mod common;

use dpc::dsp::TfMap;
use dpc::freq::{
    bands_for_ratio, build_band_layout, fixed_compress, fixed_decompress, trainable_compress,
    trainable_decompress, FixedFilterBank, Scale, TrainableBandTransform,
};
use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::Rng;
use realfft::num_complex::Complex32;

use common::rng;

const F: usize = 161;
const EPS: f64 = 1e-10;

fn bank(scale: Scale, b: usize) -> FixedFilterBank {
    FixedFilterBank::new(build_band_layout(scale, F, b).unwrap(), false).unwrap()
}

fn to_f64(a: &Array2<f32>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]] as f64)
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

fn random_map(c: usize, t: usize, seed: u64) -> TfMap {
    let mut r = rng(seed);
    let mut m = TfMap::zeros(c, t, F);
    m.data.mapv_inplace(|_| Complex32::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)));
    m
}

fn random_trainable(c: usize, e: usize, b: usize, seed: u64) -> TrainableBandTransform {
    let mut r = rng(seed);
    let mut tb = TrainableBandTransform::zeros(build_band_layout(Scale::Mel, F, b).unwrap(), c, e);
    for w in tb.comp_w.iter_mut().chain(tb.decomp_w.iter_mut()) {
        w.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    for v in tb.comp_b.iter_mut().chain(tb.decomp_b.iter_mut()) {
        v.mapv_inplace(|_| r.random_range(-0.5..0.5));
    }
    tb
}

#[test]
fn pseudo_inverse_identities() {
    for scale in [Scale::Erb, Scale::Mel] {
        for b in [80, 40, 20, 10, 5] {
            let fb = bank(scale, b);
            let w = to_f64(&fb.weights);
            let p = to_f64(&fb.pinv);
            assert!(rel(&(&w * &p * &w), &w) <= 1e-5, "{scale:?} {b}");
            assert!(rel(&(&p * &w * &p), &p) <= 1e-5, "{scale:?} {b}");
            // full row rank, so the inverse also has the normal-equation form
            let gram = (&w * w.transpose()).cholesky().expect("W Wᵀ is positive definite");
            let normal = w.transpose() * gram.inverse();
            assert!(rel(&p, &normal) <= 1e-5, "{scale:?} {b}");
        }
    }
}

#[test]
fn decompression_recovers_row_space_projection() {
    let mut r = rng(1);
    for b in [80, 20] {
        let fb = bank(Scale::Mel, b);
        let w = to_f64(&fb.weights);
        let v = DMatrix::from_fn(F, 1, |_, _| r.random_range(-1.0..1.0));
        let feat = &w * &v;
        let gram = (&w * w.transpose()).cholesky().unwrap();
        let projected = w.transpose() * gram.solve(&(&w * &v));
        let feat3 = Array3::from_shape_fn((1, 1, b), |(_, _, i)| feat[(i, 0)] as f32);
        let out = fixed_decompress(feat3.view(), &fb).unwrap();
        let got = DMatrix::from_fn(F, 1, |i, _| out[[0, 0, i]] as f64);
        assert!(rel(&got, &projected) <= 1e-5);
    }
}

#[test]
fn triangle_weights_respect_support() {
    for scale in [Scale::Erb, Scale::Mel] {
        for b in [80, 40, 5] {
            let fb = bank(scale, b);
            let mut covered = vec![0usize; F];
            for (bi, &(lo, hi)) in fb.support.iter().enumerate() {
                assert!(lo < hi);
                for (f, cov) in covered.iter_mut().enumerate() {
                    let v = fb.weights[[bi, f]];
                    assert!(v >= 0.0);
                    if f < lo || f >= hi {
                        assert_eq!(v, 0.0);
                    } else {
                        *cov += 1;
                    }
                }
                let peak = fb.weights.row(bi).fold(0.0f32, |a, &v| a.max(v));
                // centres of even-width bands fall between two bins
                assert!((0.5..=1.0).contains(&peak));
            }
            assert!(covered.iter().all(|&c| c >= 1));
            assert!(covered.iter().sum::<usize>() >= F);
        }
    }
}

#[test]
fn fixed_compress_matches_loop() {
    let fb = bank(Scale::Erb, 40);
    let x = random_map(3, 4, 2);
    let z = fixed_compress(&x, &fb).unwrap();
    for c in 0..3 {
        for t in 0..4 {
            for b in 0..40 {
                let mut acc = 0.0f64;
                for f in 0..F {
                    acc += x.data[[c, t, f]].norm() as f64 * fb.weights[[b, f]] as f64;
                }
                let want = (EPS + acc).ln();
                assert!((z[[c, t, b]] as f64 - want).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn fixed_compress_examples() {
    let fb = bank(Scale::Mel, 20);
    let mut ones = TfMap::zeros(1, 1, F);
    ones.data.fill(Complex32::new(0.6, 0.8));
    let z = fixed_compress(&ones, &fb).unwrap();
    for b in 0..20 {
        let want = (fb.weights.row(b).sum() as f64 + EPS).ln();
        assert!((z[[0, 0, b]] as f64 - want).abs() < 1e-5);
    }
    let zero = fixed_compress(&TfMap::zeros(2, 2, F), &fb).unwrap();
    assert!(zero.iter().all(|&v| (v as f64 - EPS.ln()).abs() < 1e-3));

    // a bin at a band centre lies under exactly one triangle
    let b0 = 7;
    let f0 = (fb.layout.low[b0] + fb.layout.high[b0] - 1) / 2;
    let mut spike = TfMap::zeros(1, 1, F);
    spike.data[[0, 0, f0]] = Complex32::new(1.0, 0.0);
    let z = fixed_compress(&spike, &fb).unwrap();
    for b in 0..20 {
        let want = (EPS + fb.weights[[b, f0]] as f64).ln();
        assert!((z[[0, 0, b]] as f64 - want).abs() < 1e-4, "band {b}");
    }
    assert!(fixed_compress(&TfMap::zeros(1, 1, 100), &fb).is_err());
}

#[test]
fn identity_layout_is_exact() {
    let layout = build_band_layout(Scale::Mel, F, F).unwrap();
    assert!(layout.widths().iter().all(|&w| w == 1));
    let fb = FixedFilterBank::new(layout, false).unwrap();
    assert_eq!(fb.weights, Array2::<f32>::eye(F));
    let feat = Array3::from_shape_fn((2, 3, F), |(e, t, f)| (e * 1000 + t * 200 + f) as f32 * 0.01);
    let out = fixed_decompress(feat.view(), &fb).unwrap();
    assert_eq!(out, feat);
    assert!(fixed_decompress(Array3::zeros((1, 1, F - 1)).view(), &fb).is_err());
}

#[test]
fn layouts_partition_for_every_band_count() {
    for scale in [Scale::Erb, Scale::Mel] {
        for b in 1..=F {
            let l = build_band_layout(scale, F, b).unwrap();
            assert_eq!(l.low[0], 0);
            assert_eq!(l.high[b - 1], F);
            for i in 0..b {
                assert!(l.low[i] < l.high[i]);
                if i > 0 {
                    assert_eq!(l.low[i], l.high[i - 1]);
                    assert!(l.width(i) >= l.width(i - 1), "{scale:?} B={b} band {i}");
                }
            }
            assert_eq!(l.widths().iter().sum::<usize>(), F);
        }
        assert!(build_band_layout(scale, F, F + 1).is_err());
        assert!(build_band_layout(scale, F, 0).is_err());
    }
    let mel80 = build_band_layout(Scale::Mel, F, 80).unwrap();
    assert!(mel80.width(0) <= mel80.width(79));
}

#[test]
fn band_count_shrinks_with_ratio() {
    let counts: Vec<usize> = [2, 4, 8, 16, 32].iter().map(|&r| bands_for_ratio(F, r).unwrap()).collect();
    assert_eq!(counts, vec![80, 40, 20, 10, 5]);
    assert!(counts.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn trainable_compress_matches_loop() {
    let (c, e) = (3, 6);
    let tb = random_trainable(c, e, 20, 3);
    let x = random_map(c, 3, 4);
    let z = trainable_compress(&x, &tb).unwrap();
    for t in 0..3 {
        for b in 0..20 {
            let (lo, hi) = (tb.layout.low[b], tb.layout.high[b]);
            for ei in 0..e {
                let mut acc = tb.comp_b[b][ei] as f64;
                for f in lo..hi {
                    for ch in 0..2 * c {
                        let v = if ch < c { x.data[[ch, t, f]].re } else { x.data[[ch - c, t, f]].im };
                        acc += v as f64 * tb.comp_w[b][[(f - lo) * 2 * c + ch, ei]] as f64;
                    }
                }
                assert!((z[[ei, t, b]] as f64 - acc).abs() <= 1e-6 * (1.0 + acc.abs()) * 10.0);
            }
        }
    }
}

#[test]
fn trainable_decompress_matches_loop_and_is_local() {
    let (c, e, nb) = (3, 5, 10);
    let tb = random_trainable(c, e, nb, 5);
    let mut r = rng(6);
    let feat = Array3::from_shape_fn((e, 2, nb), |_| r.random_range(-1.0f32..1.0));
    let out = trainable_decompress(feat.view(), &tb).unwrap();
    assert_eq!(out.dim(), (4 * c, 2, F));
    for t in 0..2 {
        for b in 0..nb {
            let lo = tb.layout.low[b];
            for f in lo..tb.layout.high[b] {
                for k in 0..4 * c {
                    let j = (f - lo) * 4 * c + k;
                    let mut acc = tb.decomp_b[b][j] as f64;
                    for ei in 0..e {
                        acc += feat[[ei, t, b]] as f64 * tb.decomp_w[b][[ei, j]] as f64;
                    }
                    assert!((out[[k, t, f]] as f64 - acc).abs() <= 1e-5 * (1.0 + acc.abs()));
                }
            }
        }
    }

    let mut local = tb.clone();
    local.decomp_b.iter_mut().for_each(|v| v.fill(0.0));
    let mut one = Array3::zeros((e, 1, nb));
    one[[2, 0, 4]] = 1.0;
    let out = trainable_decompress(one.view(), &local).unwrap();
    for f in 0..F {
        let inside = (local.layout.low[4]..local.layout.high[4]).contains(&f);
        let any = (0..4 * c).any(|k| out[[k, 0, f]] != 0.0);
        assert!(inside || !any);
    }
}

#[test]
fn trainable_zero_and_identity_embedding() {
    let layout = build_band_layout(Scale::Mel, F, F).unwrap();
    let mut tb = TrainableBandTransform::zeros(layout, 1, 4);
    let z = trainable_compress(&random_map(1, 2, 7), &tb).unwrap();
    assert!(z.iter().all(|&v| v == 0.0));
    for w in &mut tb.comp_w {
        w[[0, 0]] = 1.0;
        w[[1, 1]] = 1.0;
    }
    let x = random_map(1, 2, 8);
    let z = trainable_compress(&x, &tb).unwrap();
    for t in 0..2 {
        for f in 0..F {
            assert_eq!(z[[0, t, f]], x.data[[0, t, f]].re);
            assert_eq!(z[[1, t, f]], x.data[[0, t, f]].im);
            assert_eq!(z[[2, t, f]], 0.0);
        }
    }
    assert!(trainable_compress(&random_map(2, 1, 9), &tb).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn trainable_maps_are_affine(seed in 0u64..1000, a in -2.0f32..2.0, b in -2.0f32..2.0) {
        let mut tb = random_trainable(2, 4, 10, seed);
        tb.comp_b.iter_mut().for_each(|v| v.fill(0.0));
        tb.decomp_b.iter_mut().for_each(|v| v.fill(0.0));
        let (x, y) = (random_map(2, 2, seed + 1), random_map(2, 2, seed + 2));
        let mut s = x.clone();
        s.data.zip_mut_with(&y.data, |p, q| *p = *p * a + *q * b);
        let (zx, zy, zs) = (
            trainable_compress(&x, &tb).unwrap(),
            trainable_compress(&y, &tb).unwrap(),
            trainable_compress(&s, &tb).unwrap(),
        );
        for ((p, q), r) in zx.iter().zip(&zy).zip(&zs) {
            prop_assert!((a * p + b * q - r).abs() <= 1e-5 * (1.0 + r.abs()));
        }
        let (dx, dy, ds) = (
            trainable_decompress(zx.view(), &tb).unwrap(),
            trainable_decompress(zy.view(), &tb).unwrap(),
            trainable_decompress(zs.view(), &tb).unwrap(),
        );
        for ((p, q), r) in dx.iter().zip(&dy).zip(&ds) {
            prop_assert!((a * p + b * q - r).abs() <= 1e-4 * (1.0 + r.abs()));
        }
    }
}
