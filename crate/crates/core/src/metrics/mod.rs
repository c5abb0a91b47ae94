//! Objective quality metrics.

mod stoi;

pub use stoi::{stoi, stoi_10k};

use std::path::Path;
use std::process::Command;

use crate::error::{Error, Result};

/// Upper report limit of [`si_snr`] in dB.
pub const SI_SNR_CAP_DB: f64 = 60.0;
/// Symmetric report limit of [`erle`] in dB.
pub const ERLE_CAP_DB: f64 = 80.0;

fn check_lengths(a: &[f32], b: &[f32], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "{what}: lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::EmptyInput(format!("{what}: empty signal")));
    }
    Ok(())
}

/// Scale-invariant SNR in dB, both signals mean-removed, capped at +60 dB.
pub fn si_snr(est: &[f32], reference: &[f32]) -> Result<f64> {
    check_lengths(est, reference, "si_snr")?;
    let n = est.len() as f64;
    let me = est.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mr = reference.iter().map(|&v| v as f64).sum::<f64>() / n;
    let e: Vec<f64> = est.iter().map(|&v| v as f64 - me).collect();
    let r: Vec<f64> = reference.iter().map(|&v| v as f64 - mr).collect();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::ZeroReference);
    }
    let alpha = e.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target: f64 = alpha * alpha * rr;
    let noise: f64 = e.iter().zip(&r).map(|(a, b)| (a - alpha * b).powi(2)).sum();
    if noise == 0.0 {
        return Ok(SI_SNR_CAP_DB);
    }
    Ok((10.0 * (target / noise).log10()).min(SI_SNR_CAP_DB))
}

/// Full-file echo return loss enhancement in dB, clamped to ±80 dB.
pub fn erle(mic: &[f32], out: &[f32]) -> Result<f64> {
    check_lengths(mic, out, "erle")?;
    let pm: f64 = mic.iter().map(|&v| (v as f64).powi(2)).sum();
    let po: f64 = out.iter().map(|&v| (v as f64).powi(2)).sum();
    let db = match (pm == 0.0, po == 0.0) {
        (true, true) => 0.0,
        (false, true) => ERLE_CAP_DB,
        (true, false) => -ERLE_CAP_DB,
        _ => 10.0 * (pm / po).log10(),
    };
    Ok(db.clamp(-ERLE_CAP_DB, ERLE_CAP_DB))
}

/// Runs an external wideband PESQ executable as `bin +16000 ref est` and
/// returns the last number printed on stdout.
pub fn external_pesq(bin: &Path, reference: &Path, est: &Path) -> Result<f64> {
    let out = Command::new(bin)
        .arg("+16000")
        .arg(reference)
        .arg(est)
        .output()
        .map_err(|e| Error::io(bin, e))?;
    if !out.status.success() {
        return Err(Error::External(format!(
            "{} exited with {}",
            bin.display(),
            out.status
        )));
    }
    parse_last_number(&String::from_utf8_lossy(&out.stdout)).ok_or_else(|| {
        Error::External(format!("{} printed no score", bin.display()))
    })
}

fn parse_last_number(text: &str) -> Option<f64> {
    text.split(|c: char| c.is_whitespace() || c == '=' || c == ':')
        .filter_map(|t| t.parse::<f64>().ok())
        .rfind(|v| v.is_finite())
}
