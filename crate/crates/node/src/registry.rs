//! The set of peers a node gossips with, kept in registration order.

use thiserror::Error;
use url::Url;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("malformed peer url `{0}`")]
    MalformedUrl(String),
    #[error("a node cannot register itself")]
    SelfRegistration,
}

/// Checks that `text` is an absolute http(s) URL with a host and returns it
/// without a trailing slash.
pub fn normalize_peer_url(text: &str) -> Result<String, RegistryError> {
    let trimmed = text.trim();
    let url = Url::parse(trimmed).map_err(|_| RegistryError::MalformedUrl(trimmed.to_string()))?;
    if !matches!(url.scheme(), "http" | "https") || url.host_str().is_none_or(str::is_empty) {
        return Err(RegistryError::MalformedUrl(trimmed.to_string()));
    }
    if url.query().is_some() || url.fragment().is_some() {
        return Err(RegistryError::MalformedUrl(trimmed.to_string()));
    }
    Ok(url.as_str().trim_end_matches('/').to_string())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerRegistry {
    self_url: String,
    peers: Vec<String>,
}

impl PeerRegistry {
    pub fn new(self_url: &str) -> PeerRegistry {
        let self_url = normalize_peer_url(self_url).unwrap_or_else(|_| self_url.trim_end_matches('/').to_string());
        PeerRegistry { self_url, peers: Vec::new() }
    }

    pub fn self_url(&self) -> &str {
        &self.self_url
    }

    /// Adds a peer. Returns `Ok(true)` if it was new, `Ok(false)` if it was
    /// already registered.
    pub fn register(&mut self, url: &str) -> Result<bool, RegistryError> {
        let url = normalize_peer_url(url)?;
        if url == self.self_url {
            return Err(RegistryError::SelfRegistration);
        }
        if self.peers.contains(&url) {
            return Ok(false);
        }
        self.peers.push(url);
        Ok(true)
    }

    pub fn remove(&mut self, url: &str) -> bool {
        let url = normalize_peer_url(url).unwrap_or_else(|_| url.to_string());
        let before = self.peers.len();
        self.peers.retain(|p| *p != url);
        self.peers.len() != before
    }

    pub fn peers(&self) -> &[String] {
        &self.peers
    }

    pub fn len(&self) -> usize {
        self.peers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peers.is_empty()
    }
}
