//! Wire form of a fingerprint (the `recSignature` string).
//!
//! Binary layout, little-endian:
//!
//! | offset | size      | field                         |
//! |--------|-----------|-------------------------------|
//! | 0      | 4         | params id                     |
//! | 4      | 4         | channel count `C`             |
//! | 8      | 4         | frames per channel `F`        |
//! | 12     | 4·C·F     | sign words, channel-major     |
//! | 12+4CF | C·F       | level bytes, channel-major    |
//!
//! The bytes are then base64 encoded with the standard padded alphabet.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use thiserror::Error;

use super::{Fingerprint, FingerprintParams};

pub const HEADER_LEN: usize = 12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("malformed fingerprint encoding: {0}")]
    MalformedEncoding(String),
    #[error("fingerprint made with params {found:#010x}, expected {expected:#010x}")]
    ParamsMismatch { expected: u32, found: u32 },
}

pub fn encode_fingerprint(fp: &Fingerprint) -> String {
    let mut raw = Vec::with_capacity(fp.encoded_len());
    raw.extend_from_slice(&fp.params_id.to_le_bytes());
    raw.extend_from_slice(&fp.channels.to_le_bytes());
    raw.extend_from_slice(&fp.frames_per_channel.to_le_bytes());
    for w in &fp.words {
        raw.extend_from_slice(&w.to_le_bytes());
    }
    raw.extend_from_slice(&fp.energies);
    STANDARD.encode(raw)
}

pub fn decode_fingerprint(text: &str) -> Result<Fingerprint, CodecError> {
    let raw = STANDARD
        .decode(text)
        .map_err(|e| CodecError::MalformedEncoding(e.to_string()))?;
    if raw.len() < HEADER_LEN {
        return Err(CodecError::MalformedEncoding(format!("{} bytes, header needs {HEADER_LEN}", raw.len())));
    }
    let word = |at: usize| u32::from_le_bytes([raw[at], raw[at + 1], raw[at + 2], raw[at + 3]]);
    let params_id = word(0);
    let channels = word(4);
    let frames = word(8);
    let cells = (channels as u64) * (frames as u64);
    let expected = HEADER_LEN as u64 + cells * 5;
    if raw.len() as u64 != expected {
        return Err(CodecError::MalformedEncoding(format!(
            "{} bytes for {channels} channels x {frames} frames, expected {expected}",
            raw.len()
        )));
    }
    let cells = cells as usize;
    let words = (0..cells).map(|i| word(HEADER_LEN + 4 * i)).collect();
    let energies = raw[HEADER_LEN + 4 * cells..].to_vec();
    Ok(Fingerprint { params_id, channels, frames_per_channel: frames, words, energies })
}

/// Decodes and checks that the fingerprint was made with `params`.
pub fn decode_fingerprint_for(text: &str, params: &FingerprintParams) -> Result<Fingerprint, CodecError> {
    let fp = decode_fingerprint(text)?;
    let expected = params.params_id();
    if fp.params_id != expected {
        return Err(CodecError::ParamsMismatch { expected, found: fp.params_id });
    }
    Ok(fp)
}
