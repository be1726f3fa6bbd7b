//! Checks recording audio against its registered payload.

use serde::{Deserialize, Serialize};

use crate::cas::{CasError, CasStore, Cid, RemoteFetch};
use crate::fingerprint::{compute_fingerprint, encode_fingerprint, FingerprintParams};
use crate::ledger::{is_mac_address, PayloadV1};
use crate::wav::read_wav;

/// Allowed lead of `recTimestamp` over the verifier's clock, in seconds.
pub const MAX_CLOCK_SKEW_SECS: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum CheckName {
    Cid,
    Fingerprint,
    Duration,
    Channels,
    ContentId,
    Plausibility,
}

impl CheckName {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::Cid => "cid",
            CheckName::Fingerprint => "fingerprint",
            CheckName::Duration => "duration",
            CheckName::Channels => "channels",
            CheckName::ContentId => "contentId",
            CheckName::Plausibility => "plausibility",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: CheckName,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub genuine: bool,
    pub checks: Vec<Check>,
    pub payload: Option<PayloadV1>,
}

impl VerificationResult {
    pub fn from_checks(checks: Vec<Check>, payload: Option<PayloadV1>) -> VerificationResult {
        let genuine = payload.is_some() && checks.iter().all(|c| c.passed);
        VerificationResult { genuine, checks, payload }
    }

    pub fn not_found() -> VerificationResult {
        VerificationResult { genuine: false, checks: Vec::new(), payload: None }
    }

    pub fn failed_checks(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn check(&self, name: CheckName) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: CheckName, passed: bool, detail: impl Into<Option<String>>) -> Check {
    Check { name, passed, detail: detail.into() }
}

/// Metadata plausibility: location and device address formats and a
/// recording time that is not in the future.
pub fn plausibility_check(payload: &PayloadV1, now: f64) -> Check {
    let mut problems = Vec::new();
    if let Some((lat, lon)) = payload.device_gps_info {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            problems.push("gps out of range");
        }
    }
    if !is_mac_address(&payload.device_mac_add) {
        problems.push("malformed mac address");
    }
    if !payload.rec_timestamp.is_finite() || payload.rec_timestamp > now + MAX_CLOCK_SKEW_SECS {
        problems.push("recording time in the future");
    }
    let passed = problems.is_empty();
    check(CheckName::Plausibility, passed, (!passed).then(|| problems.join(", ")))
}

/// Compares a WAV file against `payload`: fingerprint identity, duration to
/// within one sample, channel count and the embedded content id.
pub fn audio_checks(wav: &[u8], payload: &PayloadV1, params: &FingerprintParams) -> Vec<Check> {
    let (clip, embedded) = match read_wav(wav) {
        Ok(parsed) => parsed,
        Err(e) => return vec![check(CheckName::Fingerprint, false, format!("unreadable audio: {e}"))],
    };
    let mut checks = Vec::with_capacity(4);
    match compute_fingerprint(&clip, params) {
        Ok(fp) => {
            let same = encode_fingerprint(&fp) == payload.rec_signature;
            checks.push(check(CheckName::Fingerprint, same, (!same).then(|| "fingerprints differ".to_string())));
        }
        Err(e) => checks.push(check(CheckName::Fingerprint, false, e.to_string())),
    }
    let tolerance = 1.0 / clip.sample_rate() as f64;
    let delta = (payload.rec_duration - clip.duration_seconds()).abs();
    checks.push(check(
        CheckName::Duration,
        delta <= tolerance,
        (delta > tolerance).then(|| format!("registered {} s, audio {} s", payload.rec_duration, clip.duration_seconds())),
    ));
    let nch = clip.num_channels() as u32;
    checks.push(check(
        CheckName::Channels,
        nch == payload.rec_num_channels,
        (nch != payload.rec_num_channels).then(|| format!("registered {}, audio {}", payload.rec_num_channels, nch)),
    ));
    let id_ok = embedded.as_ref().map(|id| id.as_str()) == Some(payload.content_id.as_str());
    checks.push(check(
        CheckName::ContentId,
        id_ok,
        (!id_ok).then(|| format!("embedded {:?}", embedded.map(|i| i.to_string()))),
    ));
    checks
}

/// Full verification of a registered transaction: resolve the audio by its
/// content address (locally or from peers), then run the audio and
/// plausibility checks. Unavailable audio fails the `cid` check.
pub fn verify_transaction(
    payload: &PayloadV1,
    store: &CasStore,
    peers: &[String],
    remote: &dyn RemoteFetch,
    params: &FingerprintParams,
    now: f64,
) -> (VerificationResult, Option<Vec<u8>>) {
    let fetched = Cid::parse(&payload.ipfs_hash).and_then(|cid| store.get(&cid, peers, remote));
    let bytes = match fetched {
        Ok(bytes) => bytes,
        Err(e) => {
            let detail = match &e {
                CasError::IntegrityViolation { .. } => format!("integrity violation: {e}"),
                _ => e.to_string(),
            };
            let checks = vec![check(CheckName::Cid, false, detail), plausibility_check(payload, now)];
            return (VerificationResult::from_checks(checks, Some(payload.clone())), None);
        }
    };
    let mut checks = vec![check(CheckName::Cid, true, None)];
    checks.extend(audio_checks(&bytes, payload, params));
    checks.push(plausibility_check(payload, now));
    (VerificationResult::from_checks(checks, Some(payload.clone())), Some(bytes))
}
