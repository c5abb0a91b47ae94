//! Training-style scenario synthesis: near-end speech plus echo and noise
//! mixed at controlled signal-to-echo and signal-to-noise ratios.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::wav::{read_wav, write_wav};

pub const SAMPLE_RATE: usize = 16_000;
/// Every mix is exactly this long.
pub const CLIP_LEN: usize = 10 * SAMPLE_RATE;
/// Shortest accepted source clip.
pub const MIN_CLIP_LEN: usize = 9 * SAMPLE_RATE;
/// Activity frame, 20 ms.
pub const ACTIVITY_FRAME: usize = 320;
pub const ACTIVITY_THRESHOLD_DBFS: f64 = -60.0;
/// Gain refinement stops once the measured ratio is this close.
pub const RATIO_TOLERANCE_DB: f64 = 0.01;

/// A level ratio in dB that may be infinite. Serialized as a number or as
/// `"+inf"` / `"-inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Db(pub f64);

impl Db {
    pub const INF: Db = Db(f64::INFINITY);
    pub const NEG_INF: Db = Db(f64::NEG_INFINITY);

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

impl fmt::Display for Db {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == f64::INFINITY {
            f.write_str("+inf")
        } else if self.0 == f64::NEG_INFINITY {
            f.write_str("-inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for Db {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str(&self.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for Db {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Db(v)),
            Raw::Str(s) => match s.as_str() {
                "+inf" | "inf" => Ok(Db::INF),
                "-inf" => Ok(Db::NEG_INF),
                _ => Err(serde::de::Error::custom(format!("bad dB value `{s}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Far-end single talk: no near-end speaker.
    #[serde(rename = "ST-FE")]
    StFe,
    /// Near-end single talk: no far-end speaker.
    #[serde(rename = "ST-NE")]
    StNe,
    #[serde(rename = "DT")]
    Dt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub scenario: Scenario,
    pub ser_db: Db,
    /// Near-end to noise; for far-end single talk, echo to noise.
    pub snr_db: Db,
    /// Echo delay used when no impulse response is given.
    #[serde(default = "default_delay")]
    pub delay_samples: usize,
    pub seed: u64,
}

fn default_delay() -> usize {
    160
}

impl MixSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match self.scenario {
            Scenario::StNe => self.ser_db == Db::INF,
            Scenario::StFe => self.ser_db == Db::NEG_INF,
            Scenario::Dt => self.ser_db.is_finite(),
        };
        if !ok {
            return Err(Error::config(format!(
                "SER {} is inconsistent with scenario {:?}",
                self.ser_db, self.scenario
            )));
        }
        if self.snr_db.0.is_nan() || self.snr_db == Db::NEG_INF {
            return Err(Error::config("SNR must be finite or +inf"));
        }
        Ok(())
    }
}

/// Probabilities and ratio range used by [`sample_spec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sampling {
    pub near_absent_prob: f64,
    pub far_absent_prob: f64,
    pub noisy_prob: f64,
    pub min_db: f64,
    pub max_db: f64,
}

impl Default for Sampling {
    fn default() -> Self {
        Self {
            near_absent_prob: 0.10,
            far_absent_prob: 0.25,
            noisy_prob: 0.90,
            min_db: -5.0,
            max_db: 15.0,
        }
    }
}

impl Sampling {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.near_absent_prob, self.far_absent_prob, self.noisy_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("probabilities must lie in [0, 1]"));
        }
        if !(self.min_db.is_finite() && self.max_db.is_finite() && self.min_db <= self.max_db) {
            return Err(Error::config("ratio range must be finite and ordered"));
        }
        Ok(())
    }
}

/// Draws a scenario and its ratios. The far end is only dropped when the
/// near end is present, so every clip has at least one talker.
pub fn sample_spec(rng: &mut impl Rng, sampling: &Sampling) -> MixSpec {
    let scenario = if rng.random_bool(sampling.near_absent_prob) {
        Scenario::StFe
    } else if rng.random_bool(sampling.far_absent_prob) {
        Scenario::StNe
    } else {
        Scenario::Dt
    };
    let ser_db = match scenario {
        Scenario::StFe => Db::NEG_INF,
        Scenario::StNe => Db::INF,
        Scenario::Dt => Db(rng.random_range(sampling.min_db..=sampling.max_db)),
    };
    let snr_db = if rng.random_bool(sampling.noisy_prob) {
        Db(rng.random_range(sampling.min_db..=sampling.max_db))
    } else {
        Db::INF
    };
    MixSpec {
        scenario,
        ser_db,
        snr_db,
        delay_samples: default_delay(),
        seed: rng.random(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mix {
    pub mic: Vec<f32>,
    /// Far-end reference as played back (silent without a far-end talker).
    pub farend: Vec<f32>,
    pub target: Vec<f32>,
    pub echo: Vec<f32>,
    pub noise: Vec<f32>,
    pub measured_ser_db: Db,
    pub measured_snr_db: Db,
}

/// Mean power over 20 ms frames whose level exceeds -60 dBFS, or `None`
/// if no frame is active.
pub fn active_power(x: &[f32]) -> Option<f64> {
    let thresh = 10f64.powf(ACTIVITY_THRESHOLD_DBFS / 10.0);
    let (mut sum, mut count) = (0.0f64, 0usize);
    for fr in x.chunks(ACTIVITY_FRAME) {
        let e: f64 = fr.iter().map(|&v| (v as f64) * (v as f64)).sum();
        if e / fr.len() as f64 > thresh {
            sum += e;
            count += fr.len();
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// `10·log10(P_a / P_b)` over the active regions of each.
pub fn ratio_db(a: &[f32], b: &[f32]) -> Option<f64> {
    Some(10.0 * (active_power(a)? / active_power(b)?).log10())
}

fn fit_len(x: &[f32], what: &str) -> Result<Vec<f32>> {
    if x.len() < MIN_CLIP_LEN {
        return Err(Error::config(format!(
            "{what} clip has {} samples, at least {MIN_CLIP_LEN} required",
            x.len()
        )));
    }
    let mut v = x[..x.len().min(CLIP_LEN)].to_vec();
    v.resize(CLIP_LEN, 0.0);
    Ok(v)
}

/// Linear convolution truncated to the input length.
pub fn convolve_truncated(x: &[f32], h: &[f32]) -> Vec<f32> {
    let mut y = vec![0.0f64; x.len()];
    for (k, &hk) in h.iter().enumerate() {
        if hk == 0.0 || k >= x.len() {
            continue;
        }
        for (yo, &xv) in y[k..].iter_mut().zip(x) {
            *yo += hk as f64 * xv as f64;
        }
    }
    y.into_iter().map(|v| v as f32).collect()
}

fn delayed(x: &[f32], d: usize) -> Vec<f32> {
    let mut y = vec![0.0; x.len()];
    if d < x.len() {
        y[d..].copy_from_slice(&x[..x.len() - d]);
    }
    y
}

/// Scales `sig` so that `ratio_db(reference, sig) == target_db`, refining
/// the gain until the re-measured ratio is within tolerance.
fn scale_to_ratio(reference: &[f32], sig: &[f32], target_db: f64, what: &str) -> Result<Vec<f32>> {
    let silent = || Error::SilentComponent(what.to_string());
    let p_ref = active_power(reference).ok_or_else(silent)?;
    let p_sig = active_power(sig).ok_or_else(silent)?;
    let mut gain = (p_ref / (p_sig * 10f64.powf(target_db / 10.0))).sqrt();
    let mut out: Vec<f32> = Vec::new();
    for _ in 0..20 {
        out = sig.iter().map(|&v| (v as f64 * gain) as f32).collect();
        let measured = ratio_db(reference, &out).ok_or_else(silent)?;
        let err = measured - target_db;
        if err.abs() <= RATIO_TOLERANCE_DB {
            break;
        }
        gain *= 10f64.powf(err / 20.0);
    }
    Ok(out)
}

/// Builds one `(mic, farend, target)` triple.
///
/// `noise` may be longer than a clip; a seeded offset picks the segment.
pub fn mix(near: &[f32], far: &[f32], noise: &[f32], rir: Option<&[f32]>, spec: &MixSpec) -> Result<Mix> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let near_present = spec.scenario != Scenario::StFe;
    let far_present = spec.scenario != Scenario::StNe;

    let target = if near_present {
        fit_len(near, "near-end")?
    } else {
        vec![0.0; CLIP_LEN]
    };
    let (farend, mut echo) = if far_present {
        let f = fit_len(far, "far-end")?;
        let e = match rir {
            Some(h) => convolve_truncated(&f, h),
            None => delayed(&f, spec.delay_samples),
        };
        (f, e)
    } else {
        (vec![0.0; CLIP_LEN], vec![0.0; CLIP_LEN])
    };
    if spec.scenario == Scenario::Dt {
        echo = scale_to_ratio(&target, &echo, spec.ser_db.0, "echo")?;
    }

    let mut noise_seg = vec![0.0; CLIP_LEN];
    if spec.snr_db.is_finite() {
        let n = fit_len(noise, "noise").map(|_| noise)?;
        let offset = if n.len() > CLIP_LEN {
            rng.random_range(0..=n.len() - CLIP_LEN)
        } else {
            0
        };
        let end = (offset + CLIP_LEN).min(n.len());
        noise_seg[..end - offset].copy_from_slice(&n[offset..end]);
        let signal = if near_present { &target } else { &echo };
        noise_seg = scale_to_ratio(signal, &noise_seg, spec.snr_db.0, "noise")?;
    }

    let mic: Vec<f32> = target
        .iter()
        .zip(&echo)
        .zip(&noise_seg)
        .map(|((s, e), n)| s + e + n)
        .collect();
    let measured_ser_db = match spec.scenario {
        Scenario::Dt => Db(ratio_db(&target, &echo).expect("scaled echo is active")),
        _ => spec.ser_db,
    };
    let measured_snr_db = if spec.snr_db.is_finite() {
        let signal = if near_present { &target } else { &echo };
        Db(ratio_db(signal, &noise_seg).expect("scaled noise is active"))
    } else {
        Db::INF
    };
    Ok(Mix {
        mic,
        farend,
        target,
        echo,
        noise: noise_seg,
        measured_ser_db,
        measured_snr_db,
    })
}

/// Per-clip record written next to the audio files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub index: usize,
    pub mic: PathBuf,
    pub farend: PathBuf,
    pub target: PathBuf,
    pub near_source: Option<PathBuf>,
    pub far_source: Option<PathBuf>,
    pub noise_source: Option<PathBuf>,
    pub rir_source: Option<PathBuf>,
    pub spec: MixSpec,
    pub measured_ser_db: Db,
    pub measured_snr_db: Db,
    /// Common gain applied to all three files to avoid clipping.
    pub output_gain: f64,
}

/// Source directories for batch generation.
#[derive(Debug, Clone, Default)]
pub struct Sources {
    pub near: Vec<PathBuf>,
    pub far: Vec<PathBuf>,
    pub noise: Vec<PathBuf>,
    pub rir: Vec<PathBuf>,
}

impl Sources {
    pub fn from_dirs(near: &Path, far: &Path, noise: &Path, rir: Option<&Path>) -> Result<Self> {
        let s = Self {
            near: list_wavs(near)?,
            far: list_wavs(far)?,
            noise: list_wavs(noise)?,
            rir: match rir {
                Some(d) => list_wavs(d)?,
                None => Vec::new(),
            },
        };
        for (what, v) in [("near", &s.near), ("far", &s.far), ("noise", &s.noise)] {
            if v.is_empty() {
                return Err(Error::config(format!("no .wav files in the {what} directory")));
            }
        }
        Ok(s)
    }
}

/// Sorted `.wav` files directly inside `dir`.
pub fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    v.sort();
    Ok(v)
}

/// Writes `count` clips and manifests under `out`; returns the manifests.
pub fn generate(sources: &Sources, count: usize, seed: u64, sampling: &Sampling, out: &Path) -> Result<Vec<Manifest>> {
    sampling.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifests = Vec::with_capacity(count);
    for index in 0..count {
        let spec = sample_spec(&mut rng, sampling);
        let near_p = &sources.near[rng.random_range(0..sources.near.len())];
        let far_p = &sources.far[rng.random_range(0..sources.far.len())];
        let noise_p = &sources.noise[rng.random_range(0..sources.noise.len())];
        let rir_p = (!sources.rir.is_empty()).then(|| &sources.rir[rng.random_range(0..sources.rir.len())]);

        let near_present = spec.scenario != Scenario::StFe;
        let far_present = spec.scenario != Scenario::StNe;
        let noisy = spec.snr_db.is_finite();
        let near = if near_present { read_wav(near_p)? } else { Vec::new() };
        let far = if far_present { read_wav(far_p)? } else { Vec::new() };
        let noise = if noisy { read_wav(noise_p)? } else { Vec::new() };
        let rir = match (rir_p, far_present) {
            (Some(p), true) => Some(read_wav(p)?),
            _ => None,
        };
        let m = mix(&near, &far, &noise, rir.as_deref(), &spec)?;

        let peak = m
            .mic
            .iter()
            .chain(&m.farend)
            .fold(0.0f32, |a, v| a.max(v.abs())) as f64;
        let gain = if peak > 0.99 { 0.99 / peak } else { 1.0 };
        let scaled = |x: &[f32]| -> Vec<f32> { x.iter().map(|&v| (v as f64 * gain) as f32).collect() };
        let stem = format!("clip_{index:05}");
        let paths = [
            out.join(format!("{stem}_mic.wav")),
            out.join(format!("{stem}_farend.wav")),
            out.join(format!("{stem}_target.wav")),
        ];
        write_wav(&paths[0], &scaled(&m.mic))?;
        write_wav(&paths[1], &scaled(&m.farend))?;
        write_wav(&paths[2], &scaled(&m.target))?;
        let [mic, farend, target] = paths;
        let manifest = Manifest {
            index,
            mic,
            farend,
            target,
            near_source: near_present.then(|| near_p.clone()),
            far_source: far_present.then(|| far_p.clone()),
            noise_source: noisy.then(|| noise_p.clone()),
            rir_source: rir.as_ref().and(rir_p.cloned()),
            spec,
            measured_ser_db: m.measured_ser_db,
            measured_snr_db: m.measured_snr_db,
            output_gain: gain,
        };
        let mpath = out.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
        manifests.push(manifest);
    }
    Ok(manifests)
}
