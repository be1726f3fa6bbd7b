//! Acoustic fingerprint.
//!
//! Each channel is cut into overlapping Hann-windowed frames. For every frame
//! the energy in `bands` log-spaced bands is measured and a sign word is
//! derived from the change of adjacent-band energy differences relative to
//! the previous frame (one bit per band pair). Alongside each word a byte
//! holds the frame's log-RMS level quantized in `energy_step_db` steps, so
//! level changes are visible too.

mod codec;
pub mod fft;

use std::ops::Range;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::wav::AudioClip;
use fft::{Complex, Radix2Fft};

pub use codec::{decode_fingerprint, decode_fingerprint_for, encode_fingerprint, CodecError, HEADER_LEN};

pub const FULL_SCALE: f64 = 32768.0;

#[derive(Debug, Error, PartialEq)]
pub enum FingerprintError {
    #[error("invalid fingerprint parameters: {0}")]
    InvalidParams(String),
    #[error("top band edge {top_hz} Hz is above the Nyquist frequency of {sample_rate} Hz audio")]
    UnsupportedRate { sample_rate: u32, top_hz: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintParams {
    pub frame_size: usize,
    pub hop: usize,
    pub bands: usize,
    pub min_freq_hz: f64,
    pub max_freq_hz: f64,
    pub energy_step_db: f64,
    pub energy_floor_db: f64,
}

impl Default for FingerprintParams {
    fn default() -> Self {
        FingerprintParams {
            frame_size: 2048,
            hop: 1024,
            bands: 33,
            min_freq_hz: 300.0,
            max_freq_hz: 2000.0,
            energy_step_db: 0.5,
            energy_floor_db: -96.0,
        }
    }
}

impl FingerprintParams {
    pub fn validate(&self) -> Result<(), FingerprintError> {
        let bad = |m: &str| Err(FingerprintError::InvalidParams(m.to_string()));
        if !self.frame_size.is_power_of_two() || self.frame_size < 2 {
            return bad("frame_size must be a power of two");
        }
        if self.hop == 0 || self.hop > self.frame_size {
            return bad("hop must be in 1..=frame_size");
        }
        if !(2..=33).contains(&self.bands) {
            return bad("bands must be in 2..=33");
        }
        if !(self.min_freq_hz > 0.0 && self.max_freq_hz > self.min_freq_hz && self.max_freq_hz.is_finite()) {
            return bad("band edges must satisfy 0 < min < max");
        }
        if !(self.energy_step_db > 0.0 && self.energy_step_db.is_finite() && self.energy_floor_db.is_finite()) {
            return bad("energy quantizer must be finite with positive step");
        }
        Ok(())
    }

    /// Band edges in Hz, `bands + 1` values, log-spaced and strictly increasing.
    pub fn band_edges(&self) -> Vec<f64> {
        let ratio = self.max_freq_hz / self.min_freq_hz;
        let mut edges: Vec<f64> = (0..=self.bands)
            .map(|j| self.min_freq_hz * libm::pow(ratio, j as f64 / self.bands as f64))
            .collect();
        edges[0] = self.min_freq_hz;
        edges[self.bands] = self.max_freq_hz;
        edges
    }

    /// Identifier folded into every fingerprint so encodings made with
    /// different parameters are never confused.
    pub fn params_id(&self) -> u32 {
        let desc = format!(
            "frame={};hop={};bands={};lo={:016x};hi={:016x};step={:016x};floor={:016x}",
            self.frame_size,
            self.hop,
            self.bands,
            self.min_freq_hz.to_bits(),
            self.max_freq_hz.to_bits(),
            self.energy_step_db.to_bits(),
            self.energy_floor_db.to_bits(),
        );
        let digest = Sha256::digest(desc.as_bytes());
        u32::from_le_bytes([digest[0], digest[1], digest[2], digest[3]])
    }

    pub fn frames_for(&self, samples: usize) -> usize {
        if samples < self.frame_size {
            0
        } else {
            (samples - self.frame_size) / self.hop + 1
        }
    }
}

/// Spectral front-end for one sample rate: window, transform and the
/// bin ranges that make up each band.
#[derive(Debug, Clone)]
pub struct BandAnalyzer {
    fft: Radix2Fft,
    window: Vec<f64>,
    bands: Vec<Range<usize>>,
}

impl BandAnalyzer {
    pub fn new(sample_rate: u32, params: &FingerprintParams) -> Result<BandAnalyzer, FingerprintError> {
        params.validate()?;
        let nyquist = sample_rate as f64 / 2.0;
        if params.max_freq_hz > nyquist {
            return Err(FingerprintError::UnsupportedRate { sample_rate, top_hz: params.max_freq_hz });
        }
        let n = params.frame_size;
        let window = (0..n)
            .map(|i| 0.5 - 0.5 * libm::cos(2.0 * std::f64::consts::PI * i as f64 / n as f64))
            .collect();
        let edges = params.band_edges();
        let bin_hz = sample_rate as f64 / n as f64;
        let last = params.bands - 1;
        let bands = (0..params.bands)
            .map(|m| {
                let (lo, hi) = (edges[m], edges[m + 1]);
                // half-open bands, the last one closed at the top edge
                let in_band = |k: usize| {
                    let f = k as f64 * bin_hz;
                    f >= lo && (f < hi || (m == last && f <= hi))
                };
                let first = (0..=n / 2).find(|&k| in_band(k));
                match first {
                    Some(start) => {
                        let end = (start..=n / 2).take_while(|&k| in_band(k)).last().unwrap() + 1;
                        start..end
                    }
                    None => 0..0,
                }
            })
            .collect();
        Ok(BandAnalyzer { fft: Radix2Fft::new(n), window, bands })
    }

    pub fn band_bins(&self) -> &[Range<usize>] {
        &self.bands
    }

    /// Per-band sums of squared magnitudes of the windowed spectrum,
    /// samples scaled to [-1, 1).
    pub fn band_energies(&self, frame: &[f64]) -> Vec<f64> {
        assert_eq!(frame.len(), self.fft.size(), "frame length must equal frame_size");
        let mut buf: Vec<Complex> = frame
            .iter()
            .zip(&self.window)
            .map(|(&s, &w)| Complex { re: s * w, im: 0.0 })
            .collect();
        self.fft.forward(&mut buf);
        self.bands
            .iter()
            .map(|r| r.clone().fold(0.0, |acc, k| acc + buf[k].norm_sqr()))
            .collect()
    }
}

/// Band energies of a single frame of normalized samples.
pub fn band_energies(
    frame: &[f64],
    sample_rate: u32,
    params: &FingerprintParams,
) -> Result<Vec<f64>, FingerprintError> {
    Ok(BandAnalyzer::new(sample_rate, params)?.band_energies(frame))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    pub params_id: u32,
    pub channels: u32,
    pub frames_per_channel: u32,
    /// Channel-major sign words.
    pub words: Vec<u32>,
    /// Channel-major quantized frame levels.
    pub energies: Vec<u8>,
}

impl Fingerprint {
    pub fn channel_words(&self, ch: usize) -> &[u32] {
        let f = self.frames_per_channel as usize;
        &self.words[ch * f..(ch + 1) * f]
    }

    pub fn channel_energies(&self, ch: usize) -> &[u8] {
        let f = self.frames_per_channel as usize;
        &self.energies[ch * f..(ch + 1) * f]
    }

    pub fn encode(&self) -> String {
        encode_fingerprint(self)
    }

    /// Byte length of the binary form before base64.
    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.words.len() * 4 + self.energies.len()
    }
}

fn quantize_level(frame: &[i16], params: &FingerprintParams) -> u8 {
    let sum_sq: f64 = frame.iter().map(|&s| (s as f64) * (s as f64)).sum();
    if sum_sq == 0.0 {
        return 0;
    }
    let mean_sq = sum_sq / frame.len() as f64 / (FULL_SCALE * FULL_SCALE);
    let db = 10.0 * libm::log10(mean_sq);
    ((db - params.energy_floor_db) / params.energy_step_db).round().clamp(0.0, 255.0) as u8
}

fn sign_word(prev: &[f64], cur: &[f64]) -> u32 {
    let mut word = 0u32;
    for m in 0..cur.len() - 1 {
        let delta = (cur[m] - cur[m + 1]) - (prev[m] - prev[m + 1]);
        if delta > 0.0 {
            word |= 1 << m;
        }
    }
    word
}

pub fn compute_fingerprint(clip: &AudioClip, params: &FingerprintParams) -> Result<Fingerprint, FingerprintError> {
    let analyzer = BandAnalyzer::new(clip.sample_rate(), params)?;
    let frames = params.frames_for(clip.frames());
    let mut words = Vec::with_capacity(frames * clip.num_channels());
    let mut energies = Vec::with_capacity(frames * clip.num_channels());
    let mut scratch = vec![0.0; params.frame_size];
    for channel in clip.channels() {
        let mut prev = vec![0.0; params.bands];
        for n in 0..frames {
            let frame = &channel[n * params.hop..n * params.hop + params.frame_size];
            for (dst, &s) in scratch.iter_mut().zip(frame) {
                *dst = s as f64 / FULL_SCALE;
            }
            let cur = analyzer.band_energies(&scratch);
            words.push(sign_word(&prev, &cur));
            energies.push(quantize_level(frame, params));
            prev = cur;
        }
    }
    Ok(Fingerprint {
        params_id: params.params_id(),
        channels: clip.num_channels() as u32,
        frames_per_channel: frames as u32,
        words,
        energies,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchReport {
    pub identical: bool,
    /// Fraction of differing sign-word bits; only for same-shape prints.
    pub bit_error_rate: Option<f64>,
    /// Whether any quantized level byte differs; only for same-shape prints.
    pub energy_differs: Option<bool>,
}

pub fn compare_fingerprints(a: &Fingerprint, b: &Fingerprint) -> MatchReport {
    let identical = a == b;
    let same_shape = a.params_id == b.params_id
        && a.channels == b.channels
        && a.frames_per_channel == b.frames_per_channel;
    if !same_shape {
        return MatchReport { identical, bit_error_rate: None, energy_differs: None };
    }
    let differing: u64 = a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones() as u64).sum();
    let total = a.words.len() as u64 * 32;
    let ber = if total == 0 { 0.0 } else { differing as f64 / total as f64 };
    MatchReport {
        identical,
        bit_error_rate: Some(ber),
        energy_differs: Some(a.energies != b.energies),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, len: usize, amp: f64) -> Vec<i16> {
        (0..len)
            .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin()).round() as i16)
            .collect()
    }

    /// Brute-force DFT band energies, independent of the FFT path.
    fn oracle_band_energies(frame: &[f64], rate: u32, params: &FingerprintParams) -> Vec<f64> {
        let n = frame.len();
        let edges = params.band_edges();
        let mut out = vec![0.0; params.bands];
        for k in 0..=n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &x) in frame.iter().enumerate() {
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * t as f64 / n as f64).cos();
                let a = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                re += x * w * a.cos();
                im += x * w * a.sin();
            }
            let f = k as f64 * rate as f64 / n as f64;
            for m in 0..params.bands {
                let top = m == params.bands - 1;
                if f >= edges[m] && (f < edges[m + 1] || (top && f <= edges[m + 1])) {
                    out[m] += re * re + im * im;
                }
            }
        }
        out
    }

    fn argmax(v: &[f64]) -> usize {
        v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0
    }

    fn band_containing(freq: f64, params: &FingerprintParams) -> usize {
        let e = params.band_edges();
        (0..params.bands).find(|&m| freq >= e[m] && (freq < e[m + 1] || m == params.bands - 1)).unwrap()
    }

    #[test]
    fn default_params_are_valid() {
        let p = FingerprintParams::default();
        p.validate().unwrap();
        let e = p.band_edges();
        assert_eq!(e.len(), 34);
        assert!(e.windows(2).all(|w| w[0] < w[1]));
        assert_eq!((e[0], e[33]), (300.0, 2000.0));
    }

    #[test]
    fn invalid_params_rejected() {
        let p = FingerprintParams { frame_size: 1000, ..Default::default() };
        assert!(p.validate().is_err());
        let p = FingerprintParams { hop: 4096, ..Default::default() };
        assert!(p.validate().is_err());
        let p = FingerprintParams { bands: 1, ..Default::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn silent_frame_has_zero_energy() {
        let e = band_energies(&[0.0; 2048], 8000, &FingerprintParams::default()).unwrap();
        assert!(e.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fft_bands_match_dft_oracle() {
        let p = FingerprintParams::default();
        let frame: Vec<f64> = sine(1000.0, 8000, 2048, 12000.0).iter().map(|&s| s as f64 / FULL_SCALE).collect();
        let got = band_energies(&frame, 8000, &p).unwrap();
        let want = oracle_band_energies(&frame, 8000, &p);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-9 * w.abs().max(1e-12), "{g} vs {w}");
        }
        assert_eq!(argmax(&got), argmax(&want));
        assert_eq!(argmax(&got), band_containing(1000.0, &p));
    }

    #[test]
    fn energies_scale_quadratically() {
        let p = FingerprintParams::default();
        let frame: Vec<f64> = (0..2048).map(|i| ((i * 7) % 13) as f64 / 13.0 - 0.5).collect();
        let scaled: Vec<f64> = frame.iter().map(|x| x * 3.0).collect();
        let a = band_energies(&frame, 16000, &p).unwrap();
        let b = band_energies(&scaled, 16000, &p).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y - 9.0 * x).abs() <= 1e-9 * (9.0 * x).abs().max(1e-300));
        }
    }

    #[test]
    fn rate_below_top_edge_is_rejected() {
        let clip = AudioClip::mono(3000, vec![0; 4096]);
        assert!(matches!(
            compute_fingerprint(&clip, &FingerprintParams::default()),
            Err(FingerprintError::UnsupportedRate { .. })
        ));
    }

    #[test]
    fn silence_gives_zero_words_and_levels() {
        let clip = AudioClip::mono(8000, vec![0; 8000]);
        let fp = compute_fingerprint(&clip, &FingerprintParams::default()).unwrap();
        assert_eq!(fp.frames_per_channel, 6);
        assert!(fp.words.iter().all(|&w| w == 0));
        assert!(fp.energies.iter().all(|&e| e == 0));
    }

    #[test]
    fn frame_count_formula() {
        let p = FingerprintParams::default();
        assert_eq!(p.frames_for(0), 0);
        assert_eq!(p.frames_for(2047), 0);
        assert_eq!(p.frames_for(2048), 1);
        assert_eq!(p.frames_for(3071), 1);
        assert_eq!(p.frames_for(3072), 2);
    }

    #[test]
    fn deterministic_and_level_sensitive() {
        let p = FingerprintParams::default();
        let clip = AudioClip::mono(8000, sine(700.0, 8000, 16000, 8000.0));
        let a = compute_fingerprint(&clip, &p).unwrap();
        let b = compute_fingerprint(&clip.clone(), &p).unwrap();
        assert_eq!(a, b);
        assert!(compare_fingerprints(&a, &b).identical);
        assert_eq!(compare_fingerprints(&a, &b).bit_error_rate, Some(0.0));

        // +1 dB moves every non-silent level by about two 0.5 dB steps
        let louder = clip.map_channels(|c| c.iter().map(|&s| (s as f64 * 10f64.powf(0.05)).round() as i16).collect());
        let c = compute_fingerprint(&louder, &p).unwrap();
        let report = compare_fingerprints(&a, &c);
        assert!(!report.identical);
        assert_eq!(report.energy_differs, Some(true));
        for (x, y) in a.energies.iter().zip(&c.energies) {
            assert!((*y as i32 - *x as i32 - 2).abs() <= 1, "{x} -> {y}");
        }
    }

    #[test]
    fn shape_mismatch_has_no_ber() {
        let p = FingerprintParams::default();
        let a = compute_fingerprint(&AudioClip::mono(8000, sine(500.0, 8000, 8000, 5000.0)), &p).unwrap();
        let b = compute_fingerprint(&AudioClip::mono(8000, sine(500.0, 8000, 7000, 5000.0)), &p).unwrap();
        let r = compare_fingerprints(&a, &b);
        assert!(!r.identical);
        assert_eq!(r.bit_error_rate, None);
    }

    #[test]
    fn first_frame_compares_against_silence() {
        // with frame -1 all-zero, bit m of word 0 is set iff E(0,m) > E(0,m+1)
        let p = FingerprintParams::default();
        let samples = sine(900.0, 8000, 2048, 10000.0);
        let fp = compute_fingerprint(&AudioClip::mono(8000, samples.clone()), &p).unwrap();
        let frame: Vec<f64> = samples.iter().map(|&s| s as f64 / FULL_SCALE).collect();
        let e = oracle_band_energies(&frame, 8000, &p);
        for m in 0..32 {
            let diff = e[m] - e[m + 1];
            if diff.abs() > 1e-9 * e[m].max(e[m + 1]) {
                assert_eq!(fp.words[0] >> m & 1 == 1, diff > 0.0, "bit {m}");
            }
        }
    }
}
