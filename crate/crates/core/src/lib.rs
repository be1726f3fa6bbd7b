//! Core primitives for registering and authenticating audio recordings on a
//! proof-of-work ledger.
//!
//! - [`ledger`]: transactions, blocks, hashing, proof of work, validation.
//! - [`cas`]: content-addressed storage for the audio files.
//! - [`wav`]: PCM-16 WAV I/O and content-id embedding.
//! - [`fingerprint`]: the acoustic fingerprint stored with each recording.
//! - [`tamper`]: manipulation operators and the robustness experiment.
//! - [`verify`]: audio-versus-payload checks used by miners and players.

pub mod cas;
pub mod fingerprint;
pub mod ledger;
pub mod synth;
pub mod tamper;
pub mod verify;
pub mod wav;

pub use cas::{cid_of, CasError, CasStore, Cid, RemoteFetch};
pub use fingerprint::{compare_fingerprints, compute_fingerprint, Fingerprint, FingerprintParams, MatchReport};
pub use ledger::{Block, Chain, PayloadV1, PendingPool, ValidationVerdict};
pub use verify::{CheckName, VerificationResult};
pub use wav::{read_wav, write_wav, AudioClip, ContentId};

/// Seconds since the Unix epoch, with sub-second precision.
pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}
