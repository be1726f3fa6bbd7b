use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde_json::Value;
use thiserror::Error;

use super::block::{block_hash, make_genesis, meets_difficulty, Block};
use super::canonical::{write_value, SerializationError};
use super::payload::{PayloadError, PayloadV1};

pub const DEFAULT_DIFFICULTY: u32 = 2;

/// Outcome of a block or chain check; anything but `Ok` names the first
/// check that failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationVerdict {
    Ok,
    NoGenesis,
    BadGenesis,
    BadLinkage,
    BadIndex,
    HashMismatch,
    InvalidProof,
    MissingTransaction,
    TooManyTransactions,
    PayloadInvalid(&'static str),
    PayloadTooLarge,
    DuplicateContentId,
    Unserializable,
}

impl ValidationVerdict {
    pub fn is_ok(&self) -> bool {
        *self == ValidationVerdict::Ok
    }

    pub fn name(&self) -> &'static str {
        use ValidationVerdict::*;
        match self {
            Ok => "Ok",
            NoGenesis => "NoGenesis",
            BadGenesis => "BadGenesis",
            BadLinkage => "BadLinkage",
            BadIndex => "BadIndex",
            HashMismatch => "HashMismatch",
            InvalidProof => "InvalidProof",
            MissingTransaction => "MissingTransaction",
            TooManyTransactions => "TooManyTransactions",
            PayloadInvalid(_) => "PayloadInvalid",
            PayloadTooLarge => "PayloadTooLarge",
            DuplicateContentId => "DuplicateContentId",
            Unserializable => "Unserializable",
        }
    }
}

impl fmt::Display for ValidationVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationVerdict::PayloadInvalid(field) => write!(f, "PayloadInvalid({field})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Checks `block` as the successor of `prev`.
///
/// Linkage is checked before the index so that a reordered chain reports the
/// broken hash pointer.
pub fn validate_block(block: &Block, prev: &Block, difficulty: u32) -> ValidationVerdict {
    use ValidationVerdict as V;
    if block.previous_hash != prev.hash {
        return V::BadLinkage;
    }
    if block.index != prev.index + 1 {
        return V::BadIndex;
    }
    match block_hash(block) {
        Ok(h) if h == block.hash => {}
        Ok(_) => return V::HashMismatch,
        Err(_) => return V::Unserializable,
    }
    if !meets_difficulty(&block.hash, difficulty) {
        return V::InvalidProof;
    }
    match block.transactions.len() {
        0 => return V::MissingTransaction,
        1 => {}
        _ => return V::TooManyTransactions,
    }
    match block.transactions[0].validate() {
        Ok(()) => V::Ok,
        Err(PayloadError::Invalid(field)) => V::PayloadInvalid(field),
        Err(PayloadError::TooLarge(_)) => V::PayloadTooLarge,
    }
}

#[derive(Debug, Error)]
pub enum ChainIoError {
    #[error("chain file i/o: {0}")]
    Io(#[from] io::Error),
    #[error("chain file is not a block array: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Serialization(#[from] SerializationError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub blocks: Vec<Block>,
    pub difficulty: u32,
}

impl Chain {
    pub fn new(difficulty: u32) -> Chain {
        Chain { blocks: vec![make_genesis()], difficulty }
    }

    pub fn from_blocks(blocks: Vec<Block>, difficulty: u32) -> Chain {
        Chain { blocks, difficulty }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain holds at least the genesis block")
    }

    pub fn payloads(&self) -> impl Iterator<Item = &PayloadV1> {
        self.blocks.iter().flat_map(|b| b.transactions.iter())
    }

    pub fn contains_content_id(&self, content_id: &str) -> bool {
        self.payloads().any(|p| p.content_id == content_id)
    }

    pub fn find_payload(&self, content_id: &str) -> Option<&PayloadV1> {
        self.payloads().find(|p| p.content_id == content_id)
    }

    /// First failing block and why, or `None` for a valid chain.
    pub fn first_fault(&self) -> Option<(usize, ValidationVerdict)> {
        let genesis = self.blocks.first()?;
        if *genesis != make_genesis() {
            return Some((0, ValidationVerdict::BadGenesis));
        }
        let mut seen = HashSet::new();
        for i in 1..self.blocks.len() {
            let verdict = validate_block(&self.blocks[i], &self.blocks[i - 1], self.difficulty);
            if !verdict.is_ok() {
                return Some((i, verdict));
            }
            if !seen.insert(self.blocks[i].transactions[0].content_id.as_str()) {
                return Some((i, ValidationVerdict::DuplicateContentId));
            }
        }
        None
    }

    pub fn validate(&self) -> ValidationVerdict {
        if self.blocks.is_empty() {
            return ValidationVerdict::NoGenesis;
        }
        self.first_fault().map_or(ValidationVerdict::Ok, |(_, v)| v)
    }

    /// Canonical JSON array of blocks, hashes included.
    pub fn to_json_bytes(&self) -> Result<Vec<u8>, SerializationError> {
        let mut value = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let bytes = super::block::canonical_serialize(b, true)?;
            value.push(serde_json::from_slice::<Value>(&bytes).expect("canonical bytes parse"));
        }
        let mut out = Vec::new();
        write_value(&Value::Array(value), &mut out);
        Ok(out)
    }

    pub fn from_json_bytes(bytes: &[u8], difficulty: u32) -> Result<Chain, serde_json::Error> {
        Ok(Chain { blocks: serde_json::from_slice(bytes)?, difficulty })
    }

    /// Atomically replaces the chain file.
    pub fn save(&self, path: &Path) -> Result<(), ChainIoError> {
        let bytes = self.to_json_bytes()?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }

    /// Loads the chain file, or a fresh genesis-only chain when absent.
    pub fn load_or_new(path: &Path, difficulty: u32) -> Result<Chain, ChainIoError> {
        match fs::read(path) {
            Ok(bytes) => Ok(Chain::from_json_bytes(&bytes, difficulty)?),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Chain::new(difficulty)),
            Err(e) => Err(e.into()),
        }
    }
}

pub fn validate_chain(chain: &Chain) -> ValidationVerdict {
    chain.validate()
}
