//! Deterministic test audio.
//!
//! `speech_like` builds a spoken-word-like signal by additive synthesis:
//! syllables of harmonic voicing shaped by vowel formants with a drifting
//! pitch contour, short noise bursts for fricatives, and pauses between
//! words over a low room-noise floor.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::wav::AudioClip;

// (F1, F2, F3) in Hz for a handful of vowels
const VOWELS: [(f64, f64, f64); 6] = [
    (730.0, 1090.0, 2440.0),
    (530.0, 1840.0, 2480.0),
    (270.0, 2290.0, 3010.0),
    (570.0, 840.0, 2410.0),
    (300.0, 870.0, 2240.0),
    (660.0, 1720.0, 2410.0),
];

fn formant_gain(freq: f64, formants: (f64, f64, f64)) -> f64 {
    let peak = |f0: f64, bw: f64| 1.0 / (1.0 + ((freq - f0) / bw).powi(2));
    peak(formants.0, 90.0) + 0.7 * peak(formants.1, 110.0) + 0.3 * peak(formants.2, 160.0)
}

fn raised_cosine_env(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    let x = if i < ramp {
        i as f64 / ramp as f64
    } else if i + ramp >= len {
        (len - i) as f64 / ramp as f64
    } else {
        1.0
    };
    0.5 - 0.5 * (std::f64::consts::PI * x.clamp(0.0, 1.0)).cos()
}

fn voiced(out: &mut [f64], start: usize, len: usize, rate: f64, rng: &mut StdRng, level: f64) {
    let formants = VOWELS[rng.random_range(0..VOWELS.len())];
    let f0_start = rng.random_range(95.0..210.0);
    let f0_end = f0_start * rng.random_range(0.8..1.15);
    let mut phase = 0.0f64;
    let ramp = (0.02 * rate) as usize;
    for i in 0..len {
        let t = i as f64 / len as f64;
        let f0 = f0_start + (f0_end - f0_start) * t;
        phase += 2.0 * std::f64::consts::PI * f0 / rate;
        let mut s = 0.0;
        let mut h = 1;
        while (h as f64) * f0 < (rate / 2.0).min(4000.0) {
            let hf = h as f64 * f0;
            s += formant_gain(hf, formants) / (h as f64).sqrt() * (phase * h as f64).sin();
            h += 1;
        }
        if let Some(o) = out.get_mut(start + i) {
            *o += level * raised_cosine_env(i, len, ramp) * s;
        }
    }
}

fn fricative(out: &mut [f64], start: usize, len: usize, rate: f64, rng: &mut StdRng, level: f64) {
    let mut prev = 0.0;
    let ramp = (0.01 * rate) as usize;
    for i in 0..len {
        let w: f64 = rng.random_range(-1.0..1.0);
        let hp = w - prev;
        prev = w;
        if let Some(o) = out.get_mut(start + i) {
            *o += level * raised_cosine_env(i, len, ramp) * hp;
        }
    }
}

/// A mono spoken-word-like clip of `seconds` at `sample_rate`.
pub fn speech_like(seed: u64, seconds: f64, sample_rate: u32) -> AudioClip {
    let rate = sample_rate as f64;
    let total = (seconds * rate).round() as usize;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut buf = vec![0.0f64; total];
    let mut pos = (rng.random_range(0.05..0.2) * rate) as usize;
    while pos < total {
        let syllables = rng.random_range(1..=4);
        for _ in 0..syllables {
            if rng.random_bool(0.35) {
                let len = (rng.random_range(0.04..0.12) * rate) as usize;
                let level = rng.random_range(0.02..0.06);
                fricative(&mut buf, pos, len, rate, &mut rng, level);
                pos += len;
            }
            let len = (rng.random_range(0.10..0.28) * rate) as usize;
            let level = rng.random_range(0.08..0.2);
            voiced(&mut buf, pos, len, rate, &mut rng, level);
            pos += len + (rng.random_range(0.0..0.03) * rate) as usize;
        }
        pos += (rng.random_range(0.08..0.45) * rate) as usize;
    }
    let samples = buf
        .iter()
        .map(|&x| {
            let floor: f64 = rng.random_range(-12.0..12.0);
            (x * 32767.0 + floor).round().clamp(-32768.0, 32767.0) as i16
        })
        .collect();
    AudioClip::mono(sample_rate, samples)
}

/// Uniform white noise at roughly -12 dBFS RMS.
pub fn noise(seed: u64, seconds: f64, sample_rate: u32, channels: usize) -> AudioClip {
    let mut rng = StdRng::seed_from_u64(seed);
    let n = (seconds * sample_rate as f64).round() as usize;
    let chans = (0..channels)
        .map(|_| (0..n).map(|_| rng.random_range(-14000..=14000)).collect())
        .collect();
    AudioClip::new(sample_rate, chans).expect("equal channel lengths")
}
