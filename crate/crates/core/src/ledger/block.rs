use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::canonical::{write_value, SerializationError};
use super::payload::PayloadV1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub index: u64,
    pub transactions: Vec<PayloadV1>,
    pub timestamp: f64,
    pub previous_hash: String,
    pub nonce: u64,
    #[serde(default)]
    pub hash: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MiningError {
    #[error("mining cancelled")]
    Cancelled,
    #[error("difficulty must be at least 1")]
    ZeroDifficulty,
    #[error(transparent)]
    Serialization(#[from] SerializationError),
}

fn check_finite(block: &Block) -> Result<(), SerializationError> {
    if !block.timestamp.is_finite() {
        return Err(SerializationError::NonFinite("timestamp"));
    }
    block.transactions.iter().try_for_each(PayloadV1::ensure_finite)
}

/// Canonical JSON bytes of `block`; the `hash` key is dropped entirely
/// unless `include_hash` is set.
pub fn canonical_serialize(block: &Block, include_hash: bool) -> Result<Vec<u8>, SerializationError> {
    check_finite(block)?;
    let mut value = serde_json::to_value(block).map_err(|e| SerializationError::Serde(e.to_string()))?;
    if !include_hash {
        value.as_object_mut().expect("block is an object").remove("hash");
    }
    let mut out = Vec::new();
    write_value(&value, &mut out);
    Ok(out)
}

pub fn block_hash(block: &Block) -> Result<String, SerializationError> {
    Ok(hex::encode(Sha256::digest(canonical_serialize(block, false)?)))
}

pub fn meets_difficulty(hash: &str, difficulty: u32) -> bool {
    let d = difficulty as usize;
    hash.len() >= d && hash.bytes().take(d).all(|b| b == b'0')
}

pub fn make_genesis() -> Block {
    let mut block = Block {
        index: 0,
        transactions: Vec::new(),
        timestamp: 0.0,
        previous_hash: "0".to_string(),
        nonce: 0,
        hash: String::new(),
    };
    block.hash = block_hash(&block).expect("genesis fields are finite");
    block
}

/// Searches nonces 0, 1, 2, ... for the first whose block hash has
/// `difficulty` leading zero hex digits. `cancel` is polled between attempts.
pub fn proof_of_work(
    block: &Block,
    difficulty: u32,
    cancel: Option<&AtomicBool>,
) -> Result<(u64, String), MiningError> {
    if difficulty == 0 {
        return Err(MiningError::ZeroDifficulty);
    }
    // Sorted keys put `index` then `nonce` first, so the serialization splits
    // into a fixed prefix, the nonce digits and a fixed suffix.
    let mut probe = block.clone();
    probe.nonce = 0;
    let bytes = canonical_serialize(&probe, false)?;
    let prefix = format!("{{\"index\":{},\"nonce\":", block.index);
    debug_assert!(bytes.starts_with(prefix.as_bytes()));
    let suffix = &bytes[prefix.len() + 1..];
    let mut base = Sha256::new();
    base.update(prefix.as_bytes());

    let mut digits = itoa_buf();
    for nonce in 0u64.. {
        if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            return Err(MiningError::Cancelled);
        }
        let mut hasher = base.clone();
        hasher.update(fmt_u64(nonce, &mut digits));
        hasher.update(suffix);
        let hash = hex::encode(hasher.finalize());
        if meets_difficulty(&hash, difficulty) {
            return Ok((nonce, hash));
        }
    }
    unreachable!("nonce space exhausted")
}

fn itoa_buf() -> [u8; 20] {
    [0u8; 20]
}

fn fmt_u64(mut n: u64, buf: &mut [u8; 20]) -> &[u8] {
    let mut i = buf.len();
    loop {
        i -= 1;
        buf[i] = b'0' + (n % 10) as u8;
        n /= 10;
        if n == 0 {
            break;
        }
    }
    &buf[i..]
}

/// Builds the next block on top of `prev` and mines it.
pub fn mine_block(
    prev: &Block,
    payload: PayloadV1,
    timestamp: f64,
    difficulty: u32,
    cancel: Option<&AtomicBool>,
) -> Result<Block, MiningError> {
    let mut block = Block {
        index: prev.index + 1,
        transactions: vec![payload],
        timestamp,
        previous_hash: prev.hash.clone(),
        nonce: 0,
        hash: String::new(),
    };
    let (nonce, hash) = proof_of_work(&block, difficulty, cancel)?;
    block.nonce = nonce;
    block.hash = hash;
    Ok(block)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::payload::tests::sample_payload;

    fn unmined(prev: &Block) -> Block {
        Block {
            index: prev.index + 1,
            transactions: vec![sample_payload()],
            timestamp: 1616499594.3911936,
            previous_hash: prev.hash.clone(),
            nonce: 0,
            hash: String::new(),
        }
    }

    #[test]
    fn genesis_layout_and_golden_hash() {
        let g = make_genesis();
        assert_eq!((g.index, g.nonce, g.previous_hash.as_str()), (0, 0, "0"));
        assert!(g.transactions.is_empty());
        let bytes = canonical_serialize(&g, false).unwrap();
        assert!(bytes.starts_with(br#"{"index":0,"nonce":0,"#));
        // sha256 of the canonical bytes, computed with coreutils sha256sum
        assert_eq!(g.hash, "ae15831ef698e2b0b7678234f1440cd1121a8e0d4d4ecd078c856a3a149714d6");
        assert_eq!(make_genesis(), g);
    }

    #[test]
    fn hash_key_only_with_flag() {
        let g = make_genesis();
        let with = String::from_utf8(canonical_serialize(&g, true).unwrap()).unwrap();
        let without = String::from_utf8(canonical_serialize(&g, false).unwrap()).unwrap();
        assert!(with.contains("\"hash\":"));
        assert!(!without.contains("\"hash\""));
        assert_eq!(canonical_serialize(&g, true).unwrap(), with.as_bytes());
    }

    #[test]
    fn payload_values_render_as_listed() {
        let text = String::from_utf8(canonical_serialize(&unmined(&make_genesis()), false).unwrap()).unwrap();
        assert!(text.contains(r#""recDuration":120.0"#));
        assert!(text.contains(r#""deviceMacAdd":"00:05:9a:3c:7a:00""#));
    }

    #[test]
    fn hash_sensitivity() {
        let b = unmined(&make_genesis());
        let mut c = b.clone();
        c.nonce = 1;
        assert_ne!(block_hash(&b).unwrap(), block_hash(&c).unwrap());
        let mut d = b.clone();
        d.transactions[0].rec_duration = 121.0;
        assert_ne!(block_hash(&b).unwrap(), block_hash(&d).unwrap());
    }

    #[test]
    fn non_finite_timestamp_rejected() {
        let mut b = make_genesis();
        b.timestamp = f64::INFINITY;
        assert_eq!(block_hash(&b), Err(SerializationError::NonFinite("timestamp")));
    }

    #[test]
    fn pow_matches_plain_hashing() {
        let b = unmined(&make_genesis());
        let (nonce, hash) = proof_of_work(&b, 2, None).unwrap();
        assert!(hash.starts_with("00"));
        let mut check = b.clone();
        check.nonce = nonce;
        assert_eq!(block_hash(&check).unwrap(), hash);
        // smallest such nonce
        for n in 0..nonce {
            check.nonce = n;
            assert!(!block_hash(&check).unwrap().starts_with("00"));
        }
        assert_eq!(proof_of_work(&b, 2, None).unwrap(), (nonce, hash));
    }

    #[test]
    fn pow_difficulty_one() {
        let (_, hash) = proof_of_work(&unmined(&make_genesis()), 1, None).unwrap();
        assert!(hash.starts_with('0'));
    }

    #[test]
    fn pow_observes_cancellation() {
        let flag = AtomicBool::new(true);
        assert_eq!(proof_of_work(&make_genesis(), 8, Some(&flag)), Err(MiningError::Cancelled));
        assert_eq!(proof_of_work(&make_genesis(), 0, None), Err(MiningError::ZeroDifficulty));
    }

    #[test]
    fn difficulty_is_monotone() {
        let hash = "000abc";
        assert!((0..=3).all(|d| meets_difficulty(hash, d)));
        assert!(!meets_difficulty(hash, 4));
    }

    #[test]
    fn nonce_digits() {
        let mut buf = itoa_buf();
        for n in [0u64, 9, 10, 149, u64::MAX] {
            assert_eq!(fmt_u64(n, &mut buf), n.to_string().as_bytes());
        }
    }
}
