//! Content-addressed object store.
//!
//! Objects are addressed by a CIDv0-style identifier: the base58btc text of
//! the 34-byte SHA-256 multihash `0x12 0x20 || sha256(bytes)`. Every object
//! lives in its own file named after its cid inside the store directory.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const MULTIHASH_SHA2_256: u8 = 0x12;
const DIGEST_LEN: u8 = 0x20;

#[derive(Debug, Error)]
pub enum CasError {
    #[error("malformed cid `{0}`")]
    MalformedCid(String),
    #[error("object {0} not found locally or on any peer")]
    NotFound(Cid),
    #[error("peer {peer} served bytes that do not hash to {cid}")]
    IntegrityViolation { cid: Cid, peer: String },
    #[error("storage full: {0}")]
    StorageFull(String),
    #[error("storage i/o failure: {0}")]
    Io(#[from] io::Error),
}

/// Content address of a stored object.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Cid(String);

impl Cid {
    pub fn of(bytes: &[u8]) -> Cid {
        let digest = Sha256::digest(bytes);
        let mut multihash = Vec::with_capacity(34);
        multihash.push(MULTIHASH_SHA2_256);
        multihash.push(DIGEST_LEN);
        multihash.extend_from_slice(&digest);
        Cid(bs58::encode(multihash).into_string())
    }

    pub fn parse(text: &str) -> Result<Cid, CasError> {
        let raw = bs58::decode(text)
            .into_vec()
            .map_err(|_| CasError::MalformedCid(text.to_string()))?;
        if raw.len() != 34 || raw[0] != MULTIHASH_SHA2_256 || raw[1] != DIGEST_LEN {
            return Err(CasError::MalformedCid(text.to_string()));
        }
        Ok(Cid(text.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The raw SHA-256 digest carried by this cid.
    pub fn digest(&self) -> [u8; 32] {
        let raw = bs58::decode(&self.0).into_vec().expect("cid validated at construction");
        let mut out = [0u8; 32];
        out.copy_from_slice(&raw[2..]);
        out
    }

    pub fn matches(&self, bytes: &[u8]) -> bool {
        Cid::of(bytes) == *self
    }
}

impl fmt::Display for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for Cid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cid({})", self.0)
    }
}

impl FromStr for Cid {
    type Err = CasError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Cid::parse(s)
    }
}

impl TryFrom<String> for Cid {
    type Error = CasError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Cid::parse(&s)
    }
}

impl From<Cid> for String {
    fn from(c: Cid) -> String {
        c.0
    }
}

/// Shorthand for [`Cid::of`].
pub fn cid_of(bytes: &[u8]) -> Cid {
    Cid::of(bytes)
}

/// Source of objects held by other nodes.
///
/// Implementations return `Ok(None)` when the peer does not have the object
/// and `Err` when the peer could not be reached; both are soft failures.
pub trait RemoteFetch {
    fn fetch(&self, peer: &str, cid: &Cid) -> Result<Option<Vec<u8>>, String>;
}

/// A fetcher that knows no peers.
pub struct NoRemote;

impl RemoteFetch for NoRemote {
    fn fetch(&self, _peer: &str, _cid: &Cid) -> Result<Option<Vec<u8>>, String> {
        Ok(None)
    }
}

/// Peer name used in integrity violations found in the local store.
pub const LOCAL_PEER: &str = "local";

#[derive(Debug, Clone)]
pub struct CasStore {
    dir: PathBuf,
    capacity: Option<u64>,
}

impl CasStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<CasStore, CasError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(CasStore { dir, capacity: None })
    }

    /// Caps the total number of stored bytes; `put` beyond it fails with
    /// [`CasError::StorageFull`].
    pub fn with_capacity(mut self, bytes: u64) -> CasStore {
        self.capacity = Some(bytes);
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn object_path(&self, cid: &Cid) -> PathBuf {
        self.dir.join(cid.as_str())
    }

    pub fn contains(&self, cid: &Cid) -> bool {
        self.object_path(cid).is_file()
    }

    pub fn used_bytes(&self) -> Result<u64, CasError> {
        let mut total = 0;
        for entry in fs::read_dir(&self.dir)? {
            let entry = entry?;
            if Cid::parse(&entry.file_name().to_string_lossy()).is_ok() {
                total += entry.metadata()?.len();
            }
        }
        Ok(total)
    }

    pub fn put(&self, bytes: &[u8]) -> Result<Cid, CasError> {
        let cid = Cid::of(bytes);
        let path = self.object_path(&cid);
        if path.is_file() {
            return Ok(cid);
        }
        if let Some(cap) = self.capacity {
            let used = self.used_bytes()?;
            if used + bytes.len() as u64 > cap {
                return Err(CasError::StorageFull(format!(
                    "{} bytes used, {} requested, capacity {}",
                    used,
                    bytes.len(),
                    cap
                )));
            }
        }
        self.write_object(&path, bytes)?;
        Ok(cid)
    }

    fn write_object(&self, path: &Path, bytes: &[u8]) -> Result<(), CasError> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(map_io)?;
        tmp.write_all(bytes).map_err(map_io)?;
        tmp.as_file().sync_all().map_err(map_io)?;
        tmp.persist(path).map_err(|e| map_io(e.error))?;
        Ok(())
    }

    /// Reads an object from the local store only. Bytes that no longer hash
    /// to `cid` (on-disk corruption) are reported as an integrity violation
    /// by the peer named [`LOCAL_PEER`].
    pub fn get_local(&self, cid: &Cid) -> Result<Option<Vec<u8>>, CasError> {
        match fs::read(self.object_path(cid)) {
            Ok(bytes) if !cid.matches(&bytes) => {
                Err(CasError::IntegrityViolation { cid: cid.clone(), peer: LOCAL_PEER.to_string() })
            }
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Local lookup first, then each peer in order. Remote bytes are checked
    /// against `cid` and cached before being returned.
    pub fn get(
        &self,
        cid: &Cid,
        peers: &[String],
        remote: &dyn RemoteFetch,
    ) -> Result<Vec<u8>, CasError> {
        let mut violation = None;
        match self.get_local(cid) {
            Ok(Some(bytes)) => return Ok(bytes),
            Ok(None) => {}
            Err(CasError::IntegrityViolation { peer, .. }) => violation = Some(peer),
            Err(e) => return Err(e),
        }
        for peer in peers {
            if let Ok(Some(bytes)) = remote.fetch(peer, cid) {
                if cid.matches(&bytes) {
                    self.write_object(&self.object_path(cid), &bytes)?;
                    return Ok(bytes);
                }
                violation.get_or_insert_with(|| peer.clone());
            }
        }
        match violation {
            Some(peer) => Err(CasError::IntegrityViolation { cid: cid.clone(), peer }),
            None => Err(CasError::NotFound(cid.clone())),
        }
    }
}

fn map_io(e: io::Error) -> CasError {
    // ENOSPC
    if e.raw_os_error() == Some(28) {
        CasError::StorageFull(e.to_string())
    } else {
        CasError::Io(e)
    }
}
