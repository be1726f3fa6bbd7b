use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::canonical::{to_canonical_bytes, SerializationError};
use crate::cas::Cid;
use crate::fingerprint::decode_fingerprint;
use crate::wav::is_content_id;

pub const PAYLOAD_VERSION: &str = "1";
/// Upper bound on the canonical JSON size of one transaction.
pub const MAX_PAYLOAD_BYTES: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PayloadError {
    #[error("payload field `{0}` is invalid")]
    Invalid(&'static str),
    #[error("payload is {0} bytes, limit is {MAX_PAYLOAD_BYTES}")]
    TooLarge(usize),
}

/// Recording metadata registered as one transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PayloadV1 {
    pub version: String,
    pub rec_file_name: String,
    /// Seconds since the Unix epoch when the recording finished.
    pub rec_timestamp: f64,
    pub rec_duration: f64,
    pub rec_num_channels: u32,
    pub device_maker: String,
    pub device_model: String,
    pub device_mac_add: String,
    /// (latitude, longitude) in decimal degrees.
    #[serde(default)]
    pub device_gps_info: Option<(f64, f64)>,
    pub ipfs_hash: String,
    pub content_id: String,
    pub rec_signature: String,
}

pub fn is_mac_address(text: &str) -> bool {
    let parts: Vec<&str> = text.split(':').collect();
    parts.len() == 6 && parts.iter().all(|p| p.len() == 2 && p.bytes().all(|b| b.is_ascii_hexdigit()))
}

impl PayloadV1 {
    pub fn canonical_bytes(&self) -> Result<Vec<u8>, SerializationError> {
        self.ensure_finite()?;
        to_canonical_bytes(self)
    }

    pub(crate) fn ensure_finite(&self) -> Result<(), SerializationError> {
        if !self.rec_timestamp.is_finite() {
            return Err(SerializationError::NonFinite("recTimestamp"));
        }
        if !self.rec_duration.is_finite() {
            return Err(SerializationError::NonFinite("recDuration"));
        }
        if let Some((lat, lon)) = self.device_gps_info {
            if !lat.is_finite() || !lon.is_finite() {
                return Err(SerializationError::NonFinite("deviceGpsInfo"));
            }
        }
        Ok(())
    }

    /// Checks field invariants, then the serialized size cap.
    pub fn validate(&self) -> Result<(), PayloadError> {
        use PayloadError::Invalid;
        if self.version != PAYLOAD_VERSION {
            return Err(Invalid("version"));
        }
        if self.rec_file_name.is_empty() {
            return Err(Invalid("recFileName"));
        }
        if !self.rec_timestamp.is_finite() || self.rec_timestamp < 0.0 {
            return Err(Invalid("recTimestamp"));
        }
        if !(self.rec_duration.is_finite() && self.rec_duration > 0.0) {
            return Err(Invalid("recDuration"));
        }
        if self.rec_num_channels < 1 {
            return Err(Invalid("recNumChannels"));
        }
        if !is_mac_address(&self.device_mac_add) {
            return Err(Invalid("deviceMacAdd"));
        }
        if let Some((lat, lon)) = self.device_gps_info {
            if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
                return Err(Invalid("deviceGpsInfo"));
            }
        }
        if Cid::parse(&self.ipfs_hash).is_err() {
            return Err(Invalid("ipfsHash"));
        }
        if !is_content_id(&self.content_id) {
            return Err(Invalid("contentId"));
        }
        if decode_fingerprint(&self.rec_signature).is_err() {
            return Err(Invalid("recSignature"));
        }
        let size = self.canonical_bytes().map_err(|_| Invalid("recTimestamp"))?.len();
        if size > MAX_PAYLOAD_BYTES {
            return Err(PayloadError::TooLarge(size));
        }
        Ok(())
    }
}
