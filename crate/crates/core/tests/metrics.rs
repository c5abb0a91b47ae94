mod common;

use dpc::metrics::{erle, si_snr, stoi, ERLE_CAP_DB, SI_SNR_CAP_DB};
use dpc::Error;
use proptest::prelude::*;

use common::{speech_like, white};

/// Integer LCG mapped to `[-0.5, 0.5)`; bit-reproducible in numpy float32.
fn lcg(n: usize, seed: u32) -> Vec<f32> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
            (s >> 8) as f32 / (1u32 << 24) as f32 - 0.5
        })
        .collect()
}

/// Gated, lightly low-passed noise with 100 ms segments.
fn oracle_reference() -> (Vec<f32>, Vec<f32>) {
    let n = 48_000;
    let u = lcg(n, 1);
    let noise = lcg(n, 2);
    let gates = lcg(n / 1600 + 1, 3);
    let r = (0..n)
        .map(|i| {
            let prev = if i > 0 { u[i - 1] } else { 0.0 };
            let g = gates[i / 1600];
            let env = if g < -0.3 { 0.0 } else { g + 0.5 };
            env * (u[i] + prev)
        })
        .collect();
    (r, noise)
}

// Scores from the pystoi reference implementation on the same float32
// inputs (`pystoi.stoi(ref, est, 16000)`).
#[test]
fn stoi_matches_reference_implementation() {
    let (r, noise) = oracle_reference();
    let mix = |g: f32| -> Vec<f32> { r.iter().zip(&noise).map(|(a, b)| a + g * b).collect() };
    let noise_only: Vec<f32> = noise.iter().map(|v| 2.0 * v).collect();
    let smoothed: Vec<f32> = (0..r.len())
        .map(|i| 0.5 * (r[i] + if i > 0 { r[i - 1] } else { 0.0 }))
        .collect();
    let cases: [(&str, Vec<f32>, f64); 4] = [
        ("mild_noise", mix(0.25), 0.967_893_005_091_973_1),
        ("strong_noise", mix(2.0), 0.355_529_359_781_985_47),
        ("noise_only", noise_only, 0.032_454_110_572_326_42),
        ("smoothed", smoothed, 0.999_883_697_071_699_7),
    ];
    for (name, est, want) in cases {
        let got = stoi(&est, &r).unwrap();
        assert!((got - want).abs() < 1e-4, "{name}: {got} vs {want}");
    }
}

#[test]
fn stoi_identity_and_gain_invariance() {
    let s = speech_like(48_000, 4);
    assert!((stoi(&s, &s).unwrap() - 1.0).abs() < 1e-6);
    let half: Vec<f32> = s.iter().map(|v| 0.5 * v).collect();
    let n = white(48_000, 0.02, 5);
    let noisy: Vec<f32> = s.iter().zip(&n).map(|(a, b)| a + b).collect();
    let noisy_half: Vec<f32> = noisy.iter().map(|v| 0.5 * v).collect();
    assert!((stoi(&half, &s).unwrap() - 1.0).abs() < 1e-3);
    assert!((stoi(&noisy_half, &s).unwrap() - stoi(&noisy, &s).unwrap()).abs() < 1e-3);
}

#[test]
fn stoi_strong_noise_is_low() {
    let s = speech_like(48_000, 6);
    let n = white(48_000, 1.0, 7);
    assert!(stoi(&n, &s).unwrap() <= 0.35);
}

#[test]
fn stoi_decreases_with_snr() {
    let s = speech_like(64_000, 8);
    let n = white(64_000, 1.0, 9);
    let ps = common::power(&s);
    let pn = common::power(&n);
    let mut prev = f64::INFINITY;
    for snr in [20.0, 10.0, 0.0, -10.0] {
        let g = (ps / pn / 10f64.powf(snr / 10.0)).sqrt() as f32;
        let y: Vec<f32> = s.iter().zip(&n).map(|(a, b)| a + g * b).collect();
        let v = stoi(&y, &s).unwrap();
        assert!(v <= prev + 1e-9, "snr {snr}: {v} > {prev}");
        prev = v;
    }
}

#[test]
fn stoi_rejects_short_input() {
    let s = speech_like(4_000, 1);
    assert!(matches!(stoi(&s, &s), Err(Error::TooShort(_))));
}

#[test]
fn erle_examples() {
    let mic = white(16_000, 0.3, 10);
    let tenth: Vec<f32> = mic.iter().map(|v| v / 10.0).collect();
    assert!((erle(&mic, &tenth).unwrap() - 20.0).abs() < 1e-6);
    assert_eq!(erle(&mic, &mic).unwrap(), 0.0);
    assert_eq!(erle(&mic, &vec![0.0; mic.len()]).unwrap(), ERLE_CAP_DB);
}

#[test]
fn si_snr_negative_gain_is_capped() {
    let r = white(8_000, 1.0, 11);
    let neg: Vec<f32> = r.iter().map(|v| -v).collect();
    assert_eq!(si_snr(&neg, &r).unwrap(), SI_SNR_CAP_DB);
}

fn signal() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-1.0f32..1.0, 64..512)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn si_snr_scale_invariance(x in signal(), a in prop_oneof![-8.0f32..-0.1, 0.1f32..8.0]) {
        prop_assume!(x.iter().any(|&v| v.abs() > 1e-3));
        let y: Vec<f32> = x.iter().map(|v| a * v).collect();
        prop_assert!(si_snr(&y, &x).unwrap() >= SI_SNR_CAP_DB - 1e-9);
    }

    #[test]
    fn si_snr_ignores_appended_zeros(x in signal(), n in signal(), pad in 1usize..64) {
        let len = x.len().min(n.len());
        let (x, n) = (&x[..len], &n[..len]);
        prop_assume!(x.iter().any(|&v| v.abs() > 1e-3));
        let est: Vec<f32> = x.iter().zip(n).map(|(a, b)| a + 0.5 * b).collect();
        let base = si_snr(&est, x).unwrap();
        // zero padding shifts both means; compare on mean-free inputs
        let center = |v: &[f32]| -> Vec<f32> {
            let m = v.iter().map(|&s| s as f64).sum::<f64>() / v.len() as f64;
            v.iter().map(|&s| (s as f64 - m) as f32).collect()
        };
        let (xc, ec) = (center(x), center(&est));
        let base_c = si_snr(&ec, &xc).unwrap();
        prop_assert!((base - base_c).abs() < 1e-3);
        let mut xp = xc.clone();
        let mut ep = ec.clone();
        xp.extend(std::iter::repeat_n(0.0, pad));
        ep.extend(std::iter::repeat_n(0.0, pad));
        prop_assert!((si_snr(&ep, &xp).unwrap() - base_c).abs() < 1e-3);
    }

    #[test]
    fn erle_antisymmetry(a in signal(), b in signal()) {
        let len = a.len().min(b.len());
        let (a, b) = (&a[..len], &b[..len]);
        let ab = erle(a, b).unwrap();
        let ba = erle(b, a).unwrap();
        prop_assert!((ab + ba).abs() < 1e-9);
    }
}
