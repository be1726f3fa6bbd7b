//! Blocking HTTP client for the peer protocol.

use std::time::Duration;

use audiochain_core::cas::{Cid, RemoteFetch};
use audiochain_core::ledger::{Block, Chain, PayloadV1};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Ceiling on any response body; CAS objects can be large.
const MAX_BODY_BYTES: u64 = 1 << 30;

#[derive(Debug, Clone)]
pub struct PeerClient {
    agent: ureq::Agent,
}

/// A raw HTTP exchange: status code and body bytes.
#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Result<Value, String> {
        serde_json::from_slice(&self.body).map_err(|e| format!("bad json from peer: {e}"))
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

/// Result of sending one message to one peer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub peer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Delivery {
    pub fn delivered(&self) -> bool {
        self.status.is_some_and(|s| (200..300).contains(&s))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReport {
    pub deliveries: Vec<Delivery>,
}

impl DeliveryReport {
    pub fn delivered(&self) -> impl Iterator<Item = &Delivery> {
        self.deliveries.iter().filter(|d| d.delivered())
    }

    pub fn failed(&self) -> impl Iterator<Item = &Delivery> {
        self.deliveries.iter().filter(|d| !d.delivered())
    }
}

impl Default for PeerClient {
    fn default() -> Self {
        PeerClient::new(Duration::from_secs(30))
    }
}

impl PeerClient {
    pub fn new(timeout: Duration) -> PeerClient {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        PeerClient { agent: ureq::Agent::new_with_config(config) }
    }

    fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Reply, String> {
        let mut resp = resp.map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_vec()
            .map_err(|e| e.to_string())?;
        Ok(Reply { status, body })
    }

    pub fn get(&self, url: &str) -> Result<Reply, String> {
        Self::finish(self.agent.get(url).call())
    }

    pub fn post_json<T: Serialize>(&self, url: &str, body: &T) -> Result<Reply, String> {
        Self::finish(self.agent.post(url).send_json(body))
    }

    pub fn post_bytes(&self, url: &str, body: &[u8]) -> Result<Reply, String> {
        Self::finish(self.agent.post(url).header("content-type", "application/octet-stream").send(body))
    }

    pub fn post_empty(&self, url: &str) -> Result<Reply, String> {
        Self::finish(self.agent.post(url).send_empty())
    }

    /// Fetches and parses a peer's full chain. Validation is the caller's job.
    pub fn fetch_chain(&self, peer: &str, difficulty: u32) -> Result<Chain, String> {
        #[derive(Deserialize)]
        struct ChainReply {
            length: usize,
            chain: Vec<Block>,
        }
        let reply = self.get(&format!("{peer}/chain"))?;
        if reply.status != 200 {
            return Err(format!("status {}", reply.status));
        }
        let parsed: ChainReply = serde_json::from_slice(&reply.body).map_err(|e| format!("bad chain reply: {e}"))?;
        if parsed.length != parsed.chain.len() {
            return Err(format!("length {} disagrees with {} blocks", parsed.length, parsed.chain.len()));
        }
        Ok(Chain::from_blocks(parsed.chain, difficulty))
    }

    pub fn send_transaction(&self, peer: &str, payload: &PayloadV1) -> Delivery {
        to_delivery(peer, self.post_json(&format!("{peer}/transactions/new"), payload))
    }

    pub fn announce_block(&self, peer: &str, block: &Block) -> Delivery {
        to_delivery(peer, self.post_json(&format!("{peer}/blocks/announce"), block))
    }

    /// Asks `peer` to add `self_url`. With `reciprocate` unset the peer does
    /// not register back.
    pub fn register_with(&self, peer: &str, self_url: &str, reciprocate: bool) -> Delivery {
        let body = serde_json::json!({ "peer": self_url, "reciprocate": reciprocate });
        to_delivery(peer, self.post_json(&format!("{peer}/nodes/register"), &body))
    }
}

fn to_delivery(peer: &str, reply: Result<Reply, String>) -> Delivery {
    match reply {
        Ok(r) => Delivery {
            peer: peer.to_string(),
            status: Some(r.status),
            error: (!r.is_success()).then(|| String::from_utf8_lossy(&r.body).into_owned()),
        },
        Err(e) => Delivery { peer: peer.to_string(), status: None, error: Some(e) },
    }
}

impl RemoteFetch for PeerClient {
    fn fetch(&self, peer: &str, cid: &Cid) -> Result<Option<Vec<u8>>, String> {
        let reply = self.get(&format!("{peer}/cas/{cid}"))?;
        match reply.status {
            200 => Ok(Some(reply.body)),
            404 => Ok(None),
            s => Err(format!("status {s}")),
        }
    }
}
