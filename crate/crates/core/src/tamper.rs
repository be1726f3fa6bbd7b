//! Audio manipulations and the fingerprint robustness experiment.
//!
//! The operators are deliberately plain: linear interpolation for
//! resampling and rounding with clipping back to 16-bit samples.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::{compare_fingerprints, compute_fingerprint, FingerprintError, FingerprintParams};
use crate::wav::AudioClip;

#[derive(Debug, Error, PartialEq)]
pub enum TamperError {
    #[error("invalid amount for {op}: {amount}")]
    InvalidAmount { op: &'static str, amount: f64 },
    #[error(transparent)]
    Fingerprint(#[from] FingerprintError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "amount")]
pub enum Manipulation {
    /// Seconds removed from the end.
    Trim(f64),
    /// Level change in dB.
    Gain(f64),
    /// Duration change in percent.
    TimeStretch(f64),
    /// Pitch change in cents, duration kept.
    PitchShift(f64),
}

impl Manipulation {
    pub fn apply(&self, clip: &AudioClip) -> Result<AudioClip, TamperError> {
        match *self {
            Manipulation::Trim(s) => trim(clip, s),
            Manipulation::Gain(db) => gain(clip, db),
            Manipulation::TimeStretch(p) => time_stretch(clip, p),
            Manipulation::PitchShift(c) => pitch_shift(clip, c),
        }
    }
}

impl fmt::Display for Manipulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Manipulation::Trim(s) => write!(f, "trim {s} s"),
            Manipulation::Gain(db) => write!(f, "gain {db:+} dB"),
            Manipulation::TimeStretch(p) => write!(f, "stretch {p:+} %"),
            Manipulation::PitchShift(c) => write!(f, "pitch {c:+} cents"),
        }
    }
}

fn to_i16(x: f64) -> i16 {
    x.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Linear interpolation of `x` at fractional position `pos`, holding the
/// last sample past the end.
fn interp(x: &[i16], pos: f64) -> f64 {
    let j = pos.floor() as usize;
    if j + 1 >= x.len() {
        return x[x.len() - 1] as f64;
    }
    let frac = pos - j as f64;
    let a = x[j] as f64;
    a + frac * (x[j + 1] as f64 - a)
}

fn resample(x: &[i16], out_len: usize, step: f64) -> Vec<i16> {
    if x.is_empty() {
        return vec![0; out_len];
    }
    (0..out_len).map(|i| to_i16(interp(x, i as f64 * step))).collect()
}

pub fn trim(clip: &AudioClip, seconds: f64) -> Result<AudioClip, TamperError> {
    let invalid = TamperError::InvalidAmount { op: "trim", amount: seconds };
    if !(seconds.is_finite() && seconds > 0.0 && seconds < clip.duration_seconds()) {
        return Err(invalid);
    }
    let cut = (seconds * clip.sample_rate() as f64).round() as usize;
    if cut == 0 || cut >= clip.frames() {
        return Err(invalid);
    }
    let keep = clip.frames() - cut;
    Ok(clip.map_channels(|c| c[..keep].to_vec()))
}

pub fn gain(clip: &AudioClip, db: f64) -> Result<AudioClip, TamperError> {
    if !db.is_finite() {
        return Err(TamperError::InvalidAmount { op: "gain", amount: db });
    }
    let factor = libm::pow(10.0, db / 20.0);
    Ok(clip.map_channels(|c| c.iter().map(|&s| to_i16(s as f64 * factor)).collect()))
}

pub fn time_stretch(clip: &AudioClip, percent: f64) -> Result<AudioClip, TamperError> {
    if !(percent.is_finite() && percent > -100.0) {
        return Err(TamperError::InvalidAmount { op: "time_stretch", amount: percent });
    }
    let n = clip.frames();
    let out_len = (n as f64 * (1.0 + percent / 100.0)).round() as usize;
    if out_len == 0 {
        return Err(TamperError::InvalidAmount { op: "time_stretch", amount: percent });
    }
    let step = n as f64 / out_len as f64;
    Ok(clip.map_channels(|c| resample(c, out_len, step)))
}

pub fn pitch_shift(clip: &AudioClip, cents: f64) -> Result<AudioClip, TamperError> {
    if !cents.is_finite() {
        return Err(TamperError::InvalidAmount { op: "pitch_shift", amount: cents });
    }
    let ratio = libm::pow(2.0, cents / 1200.0);
    let n = clip.frames();
    let resampled_len = (n as f64 / ratio).round() as usize;
    Ok(clip.map_channels(|c| {
        let mut out = resample(c, resampled_len.min(n), ratio);
        out.resize(n, 0);
        out
    }))
}

/// One experiment condition: every variant must change the fingerprint for
/// the row to count as changed (the ± rows carry two variants).
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub method: String,
    pub strength: String,
    pub variants: Vec<Manipulation>,
}

impl Condition {
    fn new(method: &str, strength: &str, variants: Vec<Manipulation>) -> Condition {
        Condition { method: method.into(), strength: strength.into(), variants }
    }
}

/// The thirteen manipulation rows: trims, amplification, time stretch
/// and pitch shift at increasing strength.
pub fn table2_conditions() -> Vec<Condition> {
    use Manipulation::*;
    let mut rows = Vec::new();
    for s in [0.1, 1.0, 3.0, 10.0] {
        rows.push(Condition::new("Trim", &format!("{s:.1} s"), vec![Trim(s)]));
    }
    for db in [1.0, 3.0, 10.0] {
        rows.push(Condition::new("Amplification", &format!("±{db} dB"), vec![Gain(db), Gain(-db)]));
    }
    for p in [1.0, 10.0, 50.0] {
        rows.push(Condition::new("Time shift", &format!("±{p} %"), vec![TimeStretch(p), TimeStretch(-p)]));
    }
    for c in [1.0, 10.0, 100.0] {
        let unit = if c == 1.0 { "cent" } else { "cents" };
        rows.push(Condition::new("Pitch shift", &format!("{c} {unit}"), vec![PitchShift(c)]));
    }
    rows
}

/// The 0 dB gain row; must never report a change.
pub fn control_condition() -> Condition {
    Condition::new("Control", "0 dB", vec![Manipulation::Gain(0.0)])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobustnessRow {
    pub method: String,
    pub strength: String,
    pub signature_changed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const MIN_EXPERIMENT_SECONDS: f64 = 12.0;

pub fn run_robustness_experiment(
    clip: &AudioClip,
    conditions: &[Condition],
    params: &FingerprintParams,
) -> Result<Vec<RobustnessRow>, TamperError> {
    if conditions.is_empty() {
        return Ok(Vec::new());
    }
    if clip.duration_seconds() < MIN_EXPERIMENT_SECONDS {
        return Err(TamperError::InvalidAmount { op: "experiment duration", amount: clip.duration_seconds() });
    }
    let original = compute_fingerprint(clip, params)?;
    let rows = std::thread::scope(|scope| {
        let handles: Vec<_> = conditions
            .iter()
            .map(|cond| {
                let original = &original;
                scope.spawn(move || {
                    let outcome: Result<bool, TamperError> = cond.variants.iter().try_fold(true, |all, m| {
                        let altered = compute_fingerprint(&m.apply(clip)?, params)?;
                        Ok(all && !compare_fingerprints(original, &altered).identical)
                    });
                    let (signature_changed, error) = match outcome {
                        Ok(changed) => (changed, None),
                        Err(e) => (false, Some(e.to_string())),
                    };
                    RobustnessRow { method: cond.method.clone(), strength: cond.strength.clone(), signature_changed, error }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("experiment row panicked")).collect()
    });
    Ok(rows)
}

/// Aligned text table with a header row, one line per result.
pub fn format_table(rows: &[RobustnessRow]) -> String {
    let mw = rows.iter().map(|r| r.method.chars().count()).max().unwrap_or(0).max("Method".len());
    let sw = rows.iter().map(|r| r.strength.chars().count()).max().unwrap_or(0).max("Strength".len());
    let pad = |s: &str, w: usize| format!("{s}{}", " ".repeat(w - s.chars().count()));
    let mut out = format!("{}  {}  Signature change\n", pad("Method", mw), pad("Strength", sw));
    let mut last_method = "";
    for r in rows {
        let method = if r.method == last_method { "" } else { r.method.as_str() };
        last_method = &r.method;
        let verdict = match &r.error {
            Some(e) => format!("error: {e}"),
            None if r.signature_changed => "Yes".to_string(),
            None => "No".to_string(),
        };
        out.push_str(&format!("{}  {}  {}\n", pad(method, mw), pad(&r.strength, sw), verdict));
    }
    out
}
