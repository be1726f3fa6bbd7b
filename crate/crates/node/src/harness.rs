//! Five-node demonstration run.
//!
//! Starts five `audiochain serve` processes on localhost (two servers, a
//! recorder, a player and a hybrid recorder/player), meshes them and drives
//! the record, mine, propagate and verify sequence over HTTP. Every step is
//! reported as one JSON object.

use std::collections::BTreeSet;
use std::fs::File;
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::thread::sleep;
use std::time::{Duration, Instant};

use audiochain_core::cas::Cid;
use audiochain_core::fingerprint::{compute_fingerprint, encode_fingerprint, FingerprintParams};
use audiochain_core::ledger::{PayloadV1, DEFAULT_DIFFICULTY, PAYLOAD_VERSION};
use audiochain_core::synth::speech_like;
use audiochain_core::wav::{write_wav, AudioClip, ContentId};
use audiochain_core::unix_now;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::client::PeerClient;
use crate::config::{DeviceIdentity, NodeConfig, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Variant {
    /// Every contribution is honest.
    Honest,
    /// The hybrid node's contribution carries a forged fingerprint.
    Forged,
    /// Node 2 never starts; node 1 does all the mining.
    Offline,
}

#[derive(Debug, Clone)]
pub struct DemoOptions {
    /// The `audiochain` executable to launch for each node.
    pub binary: PathBuf,
    pub work_dir: PathBuf,
    pub variant: Variant,
    pub difficulty: u32,
}

impl DemoOptions {
    pub fn new(binary: PathBuf, work_dir: PathBuf, variant: Variant) -> DemoOptions {
        DemoOptions { binary, work_dir, variant, difficulty: DEFAULT_DIFFICULTY }
    }
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("demo setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: String,
    pub ok: bool,
    pub detail: Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoReport {
    pub passed: bool,
    pub steps: Vec<StepRecord>,
    pub chain_lengths: Vec<(String, usize)>,
    pub identical_chains: bool,
}

struct NodeProc {
    name: String,
    url: String,
    child: Option<Child>,
}

struct Fleet {
    nodes: Vec<NodeProc>,
}

impl Fleet {
    fn live(&self) -> impl Iterator<Item = &NodeProc> {
        self.nodes.iter().filter(|n| n.child.is_some())
    }

    fn url(&self, i: usize) -> &str {
        &self.nodes[i].url
    }
}

impl Drop for Fleet {
    fn drop(&mut self) {
        for n in &mut self.nodes {
            if let Some(mut c) = n.child.take() {
                let _ = c.kill();
                let _ = c.wait();
            }
        }
    }
}

fn free_port() -> Result<u16, DemoError> {
    TcpListener::bind("127.0.0.1:0")
        .and_then(|l| l.local_addr())
        .map(|a| a.port())
        .map_err(|e| DemoError::Setup(format!("no free port: {e}")))
}

fn device(n: usize) -> DeviceIdentity {
    DeviceIdentity {
        maker: "Raspberry Pi Foundation".into(),
        model: "Raspberry Pi 4 Model B".into(),
        mac: format!("dc:a6:32:00:00:{n:02x}"),
        gps: Some((49.5734, 11.0275)),
    }
}

fn roles(n: usize) -> BTreeSet<Role> {
    match n {
        1 | 2 => BTreeSet::from([Role::Server]),
        3 => BTreeSet::from([Role::Recorder]),
        4 => BTreeSet::from([Role::Player]),
        _ => BTreeSet::from([Role::Recorder, Role::Player]),
    }
}

fn start_fleet(opts: &DemoOptions) -> Result<Fleet, DemoError> {
    let setup = |e: std::io::Error| DemoError::Setup(e.to_string());
    let mut nodes = Vec::new();
    for n in 1..=5 {
        let port = free_port()?;
        let dir = opts.work_dir.join(format!("node{n}"));
        std::fs::create_dir_all(&dir).map_err(setup)?;
        let roles = roles(n);
        let config = NodeConfig {
            device: roles.contains(&Role::Recorder).then(|| device(n)),
            roles,
            bind: format!("127.0.0.1:{port}"),
            advertise_url: format!("http://127.0.0.1:{port}"),
            peers: Vec::new(),
            difficulty: opts.difficulty,
            storage_dir: dir.join("data"),
        };
        let config_path = dir.join("node.toml");
        std::fs::write(&config_path, config.to_toml()).map_err(setup)?;
        let offline = opts.variant == Variant::Offline && n == 2;
        let child = if offline {
            None
        } else {
            let log = File::create(dir.join("node.log")).map_err(setup)?;
            let child = Command::new(&opts.binary)
                .arg("serve")
                .arg("--config")
                .arg(&config_path)
                .env("RUST_LOG", std::env::var("RUST_LOG").unwrap_or_else(|_| "info".into()))
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .stderr(log)
                .spawn()
                .map_err(|e| DemoError::Setup(format!("cannot launch {}: {e}", opts.binary.display())))?;
            Some(child)
        };
        nodes.push(NodeProc { name: format!("node{n}"), url: config.advertise_url, child });
    }
    Ok(Fleet { nodes })
}

fn wait_ready(client: &PeerClient, fleet: &mut Fleet) -> Result<(), String> {
    let deadline = Instant::now() + Duration::from_secs(20);
    for node in fleet.nodes.iter_mut().filter(|n| n.child.is_some()) {
        loop {
            if client.get(&format!("{}/chain", node.url)).is_ok_and(|r| r.status == 200) {
                break;
            }
            if let Some(Ok(Some(status))) = node.child.as_mut().map(|c| c.try_wait()) {
                return Err(format!("{} exited early with {status}", node.name));
            }
            if Instant::now() > deadline {
                return Err(format!("{} did not come up", node.name));
            }
            sleep(Duration::from_millis(50));
        }
    }
    Ok(())
}

fn stereo_clip() -> AudioClip {
    let left = speech_like(23, 5.0, 16000).into_channels().remove(0);
    let right = speech_like(29, 5.0, 16000).into_channels().remove(0);
    AudioClip::new(16000, vec![left, right]).expect("equal lengths")
}

struct Run<'a> {
    client: PeerClient,
    steps: Vec<StepRecord>,
    emit: &'a mut dyn FnMut(&StepRecord),
}

impl Run<'_> {
    fn record(&mut self, step: &str, ok: bool, detail: Value) -> bool {
        let rec = StepRecord { step: step.into(), ok, detail };
        (self.emit)(&rec);
        self.steps.push(rec);
        ok
    }

    fn get_json(&self, url: &str) -> (u16, Value) {
        match self.client.get(url) {
            Ok(r) => (r.status, r.json().unwrap_or(Value::Null)),
            Err(e) => (0, json!({ "transport": e })),
        }
    }

    fn post_json(&self, url: &str, body: &Value) -> (u16, Value) {
        match self.client.post_json(url, body) {
            Ok(r) => (r.status, r.json().unwrap_or(Value::Null)),
            Err(e) => (0, json!({ "transport": e })),
        }
    }

    fn post_bytes(&self, url: &str, body: &[u8]) -> (u16, Value) {
        match self.client.post_bytes(url, body) {
            Ok(r) => (r.status, r.json().unwrap_or(Value::Null)),
            Err(e) => (0, json!({ "transport": e })),
        }
    }

    fn post_empty(&self, url: &str) -> (u16, Value) {
        match self.client.post_empty(url) {
            Ok(r) => (r.status, r.json().unwrap_or(Value::Null)),
            Err(e) => (0, json!({ "transport": e })),
        }
    }

    fn chain_bytes(&self, url: &str) -> Option<Vec<u8>> {
        self.client.get(&format!("{url}/chain")).ok().filter(|r| r.status == 200).map(|r| r.body)
    }

    fn chain_len(&self, url: &str) -> Option<usize> {
        let (status, v) = self.get_json(&format!("{url}/chain"));
        (status == 200).then(|| v["length"].as_u64().unwrap_or(0) as usize)
    }
}

/// Payload for `clip` whose signature is the fingerprint of silence of the
/// same shape, so only the fingerprint check can fail.
fn forged_payload(clip: &AudioClip, content_id: &ContentId, cid: &Cid, dev: &DeviceIdentity) -> PayloadV1 {
    let params = FingerprintParams::default();
    let silence = AudioClip::new(clip.sample_rate(), vec![vec![0; clip.frames()]; clip.num_channels()]).expect("shape");
    PayloadV1 {
        version: PAYLOAD_VERSION.into(),
        rec_file_name: "interview.wav".into(),
        rec_timestamp: unix_now(),
        rec_duration: clip.duration_seconds(),
        rec_num_channels: clip.num_channels() as u32,
        device_maker: dev.maker.clone(),
        device_model: dev.model.clone(),
        device_mac_add: dev.mac.clone(),
        device_gps_info: dev.gps,
        ipfs_hash: cid.to_string(),
        content_id: content_id.to_string(),
        rec_signature: encode_fingerprint(&compute_fingerprint(&silence, &params).expect("silence fingerprints")),
    }
}

/// Runs the demonstration, calling `emit` after each step.
pub fn run_demo(opts: &DemoOptions, emit: &mut dyn FnMut(&StepRecord)) -> Result<DemoReport, DemoError> {
    std::fs::create_dir_all(&opts.work_dir).map_err(|e| DemoError::Setup(e.to_string()))?;
    let mut fleet = start_fleet(opts)?;
    let mut run = Run { client: PeerClient::new(Duration::from_secs(60)), steps: Vec::new(), emit };
    let ready = wait_ready(&run.client, &mut fleet);
    let live: Vec<String> = fleet.live().map(|n| n.url.clone()).collect();
    run.record(
        "start",
        ready.is_ok(),
        json!({ "variant": format!("{:?}", opts.variant), "live": live, "error": ready.err() }),
    );
    if run.steps.last().is_some_and(|s| !s.ok) {
        return Ok(finish(run, &fleet, &live, 0));
    }

    let all: Vec<String> = fleet.nodes.iter().map(|n| n.url.clone()).collect();
    let mut meshed = true;
    for me in &live {
        for other in all.iter().filter(|u| *u != me) {
            let (status, _) = run.post_json(&format!("{me}/nodes/register"), &json!({ "peer": other, "reciprocate": false }));
            meshed &= status == 201;
        }
        let (_, peers) = run.get_json(&format!("{me}/nodes"));
        meshed &= peers.as_array().is_some_and(|p| p.len() == 4);
    }
    run.record("mesh", meshed, json!({ "peersPerNode": 4 }));

    // Recorder contributes clip A.
    let clip_a = speech_like(7, 6.0, 16000);
    let wav_a = write_wav(&clip_a, None);
    let _ = std::fs::write(opts.work_dir.join("clip_a.wav"), &wav_a);
    let (status, contrib) = run.post_bytes(&format!("{}/record?filename=clip_a.wav", fleet.url(2)), &wav_a);
    let id_a = contrib["contentId"].as_str().unwrap_or_default().to_string();
    run.record("record_a", status == 201 && !id_a.is_empty(), json!({ "node": "node3", "contentId": id_a }));
    let (_, pending) = run.get_json(&format!("{}/transactions/pending", fleet.url(0)));
    let seen = pending.as_array().is_some_and(|p| p.iter().any(|t| t["contentId"] == id_a.as_str()));
    run.record("broadcast_a", seen, json!({ "node": "node1" }));

    let (status, mined) = run.post_empty(&format!("{}/mine", fleet.url(0)));
    run.record("mine_a", status == 200 && mined["index"] == 1, json!({ "node": "node1", "reply": mined }));

    let lengths: Vec<Option<usize>> = live.iter().map(|u| run.chain_len(u)).collect();
    run.record(
        "propagate_a",
        lengths.iter().all(|l| *l == Some(2)),
        json!({ "lengths": lengths }),
    );

    let (status, verdict) = run.get_json(&format!("{}/verify/{id_a}", fleet.url(3)));
    run.record("player_verify_a", status == 200 && verdict["genuine"] == true, json!({ "node": "node4", "result": verdict }));

    // Hybrid contributes clip B, honestly or not.
    let clip_b = stereo_clip();
    let wav_b = write_wav(&clip_b, None);
    let _ = std::fs::write(opts.work_dir.join("clip_b.wav"), &wav_b);
    let hybrid = fleet.url(4).to_string();
    let id_b = if opts.variant == Variant::Forged {
        let id = ContentId::generate(&mut rand::rng());
        let tagged = write_wav(&clip_b, Some(&id));
        let (status, added) = run.post_bytes(&format!("{hybrid}/cas/add"), &tagged);
        let cid = added["cid"].as_str().and_then(|c| Cid::parse(c).ok());
        let mut delivered = 0;
        if let (201, Some(cid)) = (status, cid) {
            let payload = serde_json::to_value(forged_payload(&clip_b, &id, &cid, &device(5))).expect("payload json");
            for url in &live {
                let (s, _) = run.post_json(&format!("{url}/transactions/new"), &payload);
                delivered += usize::from(s == 201);
            }
        }
        run.record("record_b_forged", delivered == live.len(), json!({ "node": "node5", "contentId": id.as_str() }));
        id.to_string()
    } else {
        let (status, contrib) = run.post_bytes(&format!("{hybrid}/record?filename=clip_b.wav"), &wav_b);
        let id = contrib["contentId"].as_str().unwrap_or_default().to_string();
        run.record("record_b", status == 201 && !id.is_empty(), json!({ "node": "node5", "contentId": id }));
        id
    };

    let miner = if opts.variant == Variant::Offline { 0 } else { 1 };
    let miner_name = fleet.nodes[miner].name.clone();
    let (status, mined) = run.post_empty(&format!("{}/mine", fleet.url(miner)));
    if opts.variant == Variant::Forged {
        let named = mined["rejected"]
            .as_array()
            .is_some_and(|r| r.iter().any(|x| x["contentId"] == id_b.as_str() && x["failed"] == json!(["fingerprint"])));
        run.record("mine_b_rejected", status == 404 && named, json!({ "node": miner_name, "reply": mined }));
    } else {
        run.record("mine_b", status == 200 && mined["index"] == 2, json!({ "node": miner_name, "reply": mined }));
    }

    let (status, verdict) = run.get_json(&format!("{hybrid}/verify/{id_b}"));
    if opts.variant == Variant::Forged {
        run.record("hybrid_verify_b", status == 404, json!({ "node": "node5", "status": status }));
    } else {
        run.record(
            "hybrid_verify_b",
            status == 200 && verdict["genuine"] == true,
            json!({ "node": "node5", "result": verdict }),
        );
        let (status, verdict) = run.get_json(&format!("{}/verify/{id_b}", fleet.url(3)));
        run.record(
            "player_verify_b",
            status == 200 && verdict["genuine"] == true,
            json!({ "node": "node4", "result": verdict }),
        );
    }

    let expected = if opts.variant == Variant::Forged { 2 } else { 3 };
    Ok(finish(run, &fleet, &live, expected))
}

fn finish(mut run: Run<'_>, fleet: &Fleet, live: &[String], expected_len: usize) -> DemoReport {
    let names: Vec<String> = fleet.live().map(|n| n.name.clone()).collect();
    let chains: Vec<Option<Vec<u8>>> = live.iter().map(|u| run.chain_bytes(u)).collect();
    let lengths: Vec<(String, usize)> = names
        .iter()
        .zip(live)
        .map(|(n, u)| (n.clone(), run.chain_len(u).unwrap_or(0)))
        .collect();
    let identical = chains.first().is_some_and(|first| first.is_some() && chains.iter().all(|c| c == first));
    if expected_len > 0 {
        let lengths_ok = lengths.iter().all(|(_, l)| *l == expected_len);
        run.record(
            "converge",
            identical && lengths_ok,
            json!({ "expectedLength": expected_len, "lengths": lengths, "identical": identical }),
        );
    }
    let passed = run.steps.iter().all(|s| s.ok);
    run.record("summary", passed, json!({ "steps": run.steps.len() }));
    DemoReport { passed, steps: run.steps, chain_lengths: lengths, identical_chains: identical }
}

