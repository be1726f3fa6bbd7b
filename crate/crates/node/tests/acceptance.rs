//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

#[path = "common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context, Result};
use audiochain_core::cas::{CasError, CasStore, Cid, RemoteFetch};
use audiochain_core::fingerprint::{compute_fingerprint, encode_fingerprint, FingerprintParams, HEADER_LEN};
use audiochain_core::ledger::{make_genesis, mine_block, validate_chain, Block, Chain, PayloadV1};
use audiochain_core::synth::{noise, speech_like};
use audiochain_core::tamper::Manipulation;
use audiochain_core::wav::{embed_content_id, read_wav, strip_content_id, write_wav, AudioClip, ContentId};
use audiochain_node::config::Role;
use audiochain_node::harness::{run_demo, DemoOptions, Variant};
use audiochain_node::node::MineError;
use audiochain_node::PeerClient;
use common::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;
use sha2::{Digest, Sha256};

const SEED: u64 = 0x5eed_a0d1;
const SPEECH_SHA: &str = "37e07713baece892bfd3b04af9d0c1669f8f714d285e245ad476c475e6314bdd";
const STEREO_SHA: &str = "0e7028392ab799aaccd53f0c40d5e15e09acb4ce1d9e8209a561eb18b0f523d3";

fn binary() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_audiochain"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn within(start: Instant, limit: Duration) -> Result<()> {
    let took = start.elapsed();
    ensure!(took < limit, "took {:.1} s, limit {:.0} s", took.as_secs_f64(), limit.as_secs_f64());
    Ok(())
}

fn robustness() -> Result<String> {
    let start = Instant::now();
    let out = Command::new(binary())
        .args(["experiment", "robustness", "--control", "--json"])
        .arg(fixture("speech.wav"))
        .output()?;
    ensure!(out.status.success(), "exit {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr));
    let rows: Vec<Value> = serde_json::from_slice(&out.stdout)?;
    ensure!(rows.len() == 14, "expected 13 rows and a control, got {}", rows.len());
    let (conditions, control) = rows.split_at(13);
    for row in conditions {
        ensure!(row["signature_changed"] == true, "unchanged: {row}");
    }
    ensure!(control[0]["signature_changed"] == false, "control changed: {}", control[0]);
    within(start, Duration::from_secs(30))?;
    Ok(format!("13/13 manipulations changed the signature, control unchanged, {:.1} s", start.elapsed().as_secs_f64()))
}

const PAYLOAD_KEYS: [&str; 12] = [
    "version",
    "recFileName",
    "recTimestamp",
    "recDuration",
    "recNumChannels",
    "deviceMaker",
    "deviceModel",
    "deviceMacAdd",
    "deviceGpsInfo",
    "ipfsHash",
    "contentId",
    "recSignature",
];

fn populated(v: &Value) -> bool {
    match v {
        Value::Null => false,
        Value::String(s) => !s.is_empty(),
        Value::Array(a) => !a.is_empty() && a.iter().all(populated),
        _ => true,
    }
}

fn chain_structure() -> Result<String> {
    let a = start(&[Role::Recorder, Role::Server]);
    let b = start(&[Role::Server]);
    mesh(&[&a, &b]);
    a.node().contribute(&wav(21, 3.0), "first.wav", None)?;
    a.node().contribute(&wav(22, 3.0), "second.wav", None)?;
    a.node().mine_one().map_err(|e| anyhow!("{e}"))?;
    b.node().mine_one().map_err(|e| anyhow!("{e}"))?;

    let client = http();
    let raw_a = client.get(&format!("{}/chain", a.url())).map_err(|e| anyhow!(e))?.body;
    let raw_b = client.get(&format!("{}/chain", b.url())).map_err(|e| anyhow!(e))?.body;
    ensure!(raw_a == raw_b, "the two nodes serve different chains");
    let doc: Value = serde_json::from_slice(&raw_a)?;
    ensure!(doc["length"] == 3, "length {}", doc["length"]);
    let blocks = doc["chain"].as_array().context("chain is not a list")?;
    ensure!(blocks.len() == 3);

    let g = &blocks[0];
    ensure!(g["index"] == 0 && g["timestamp"] == 0.0 && g["previous_hash"] == "0" && g["nonce"] == 0, "genesis {g}");
    ensure!(g["transactions"].as_array().is_some_and(Vec::is_empty), "genesis carries transactions");
    for (i, blk) in blocks.iter().enumerate().skip(1) {
        ensure!(blk["index"] == i, "block {i} index {}", blk["index"]);
        ensure!(blk["previous_hash"] == blocks[i - 1]["hash"], "block {i} is not linked");
        ensure!(blk["hash"].as_str().is_some_and(|h| h.starts_with("00")), "block {i} hash {}", blk["hash"]);
        let txs = blk["transactions"].as_array().context("transactions")?;
        ensure!(txs.len() == 1, "block {i} has {} transactions", txs.len());
        let tx = txs[0].as_object().context("transaction is not an object")?;
        ensure!(tx.len() == 12, "block {i} payload has {} fields", tx.len());
        for key in PAYLOAD_KEYS {
            ensure!(tx.get(key).is_some_and(populated), "block {i} field {key} missing or empty");
        }
    }
    let blocks: Vec<Block> = serde_json::from_value(doc["chain"].clone())?;
    ensure!(validate_chain(&Chain::from_blocks(blocks, 2)).is_ok());
    Ok("3 linked blocks, genesis fixed, 12 populated fields per transaction, hashes start with 00".into())
}

fn random_clip(rng: &mut StdRng) -> AudioClip {
    let seconds = rng.random_range(4.0..12.0);
    let seed = rng.random();
    let rate = [8000, 16000, 22050][rng.random_range(0..3)];
    if rng.random_bool(0.2) {
        noise(seed, seconds, rate, 2)
    } else {
        speech_like(seed, seconds, rate)
    }
}

/// Magnitudes are log-uniform over the span the robustness rows cover, with
/// a random sign where the operation has one.
fn random_manipulation(rng: &mut StdRng, clip: &AudioClip) -> Manipulation {
    let kind = rng.random_range(0..4);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let (lo, hi): (f64, f64) = match kind {
        0 => (0.1, (clip.duration_seconds() - 1.0).min(10.0)),
        1 => (1.0, 10.0),
        2 => (1.0, 50.0),
        _ => (1.0, 100.0),
    };
    let magnitude = rng.random_range(lo.ln()..=hi.ln()).exp();
    match kind {
        0 => Manipulation::Trim(magnitude),
        1 => Manipulation::Gain(sign * magnitude),
        2 => Manipulation::TimeStretch(sign * magnitude),
        _ => Manipulation::PitchShift(sign * magnitude),
    }
}

fn authenticate(client: &PeerClient, node: &str, bytes: &[u8]) -> Result<bool> {
    let reply = client.post_bytes(&format!("{node}/authenticate"), bytes).map_err(|e| anyhow!(e))?;
    ensure!(reply.status == 200, "authenticate answered {}", reply.status);
    let v: Value = reply.json().map_err(|e| anyhow!(e))?;
    v["genuine"].as_bool().context("no verdict")
}

fn tamper_suite() -> Result<String> {
    let start_time = Instant::now();
    let n = start(&[Role::Recorder, Role::Server, Role::Player]);
    let url = n.url();
    let client = http();
    let mut rng = StdRng::seed_from_u64(SEED);
    let mut detected = 0;
    let mut accepted = 0;
    let mut misses = Vec::new();
    for trial in 0..100 {
        let clip = random_clip(&mut rng);
        let reply = client
            .post_bytes(&format!("{url}/record?filename=trial{trial}.wav"), &write_wav(&clip, None))
            .map_err(|e| anyhow!(e))?;
        ensure!(reply.status == 201, "record answered {}", reply.status);
        let contribution: Value = reply.json().map_err(|e| anyhow!(e))?;
        let reply = client.post_empty(&format!("{url}/mine")).map_err(|e| anyhow!(e))?;
        ensure!(reply.status == 200, "mine answered {}", reply.status);

        let cid = contribution["cid"].as_str().context("cid")?;
        let stored = client.get(&format!("{url}/cas/{cid}")).map_err(|e| anyhow!(e))?.body;
        let (stored_clip, embedded) = read_wav(&stored)?;
        let m = random_manipulation(&mut rng, &stored_clip);
        let mut tampered = write_wav(&m.apply(&stored_clip)?, embedded.as_ref());
        let mut control = stored.clone();
        // Half the files lose their embedded id and must be found by
        // fingerprint alone.
        if trial % 2 == 1 {
            tampered = strip_content_id(&tampered)?;
            control = strip_content_id(&control)?;
        }
        for bytes in [&tampered, &control] {
            let reply = client.post_bytes(&format!("{url}/cas/add"), bytes).map_err(|e| anyhow!(e))?;
            ensure!(reply.status == 201, "cas add answered {}", reply.status);
        }
        if authenticate(&client, &url, &tampered)? {
            misses.push(format!("trial {trial}: {m}"));
        } else {
            detected += 1;
        }
        if authenticate(&client, &url, &control)? {
            accepted += 1;
        } else {
            misses.push(format!("trial {trial}: control rejected"));
        }
    }
    ensure!(misses.is_empty(), "{detected}/100 detected, {accepted}/100 controls accepted: {}", misses.join("; "));
    within(start_time, Duration::from_secs(120))?;
    Ok(format!("100/100 manipulations rejected, 100/100 controls genuine, {:.1} s", start_time.elapsed().as_secs_f64()))
}

fn payload_for(i: u64) -> PayloadV1 {
    let clip = speech_like(i, 1.0, 8000);
    let fp = compute_fingerprint(&clip, &FingerprintParams::default()).expect("fingerprint");
    PayloadV1 {
        version: "1".into(),
        rec_file_name: format!("take{i}.wav"),
        rec_timestamp: 1_700_000_000.0 + i as f64 * 61.25,
        rec_duration: clip.duration_seconds(),
        rec_num_channels: 1,
        device_maker: "Raspberry Pi Foundation".into(),
        device_model: "Raspberry Pi 4 Model B".into(),
        device_mac_add: "00:05:9a:3c:7a:00".into(),
        device_gps_info: Some((49.591, 11.0078)),
        ipfs_hash: Cid::of(&write_wav(&clip, None)).to_string(),
        content_id: format!("{:032x}", 0xabc0_0000_u128 + i as u128),
        rec_signature: encode_fingerprint(&fp),
    }
}

/// Every scalar leaf of a block, as a JSON pointer.
fn leaves(v: &Value, path: String, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => m.iter().for_each(|(k, x)| leaves(x, format!("{path}/{k}"), out)),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, x)| leaves(x, format!("{path}/{i}"), out)),
        Value::Null => {}
        _ => out.push(path),
    }
}

fn mutate(v: &mut Value, rng: &mut StdRng) {
    *v = match v.take() {
        Value::Bool(b) => Value::Bool(!b),
        Value::Number(n) if n.is_u64() => Value::from(n.as_u64().unwrap() + rng.random_range(1..1000)),
        Value::Number(n) => Value::from(n.as_f64().unwrap() + rng.random_range(0.001..10.0)),
        Value::String(s) => {
            let mut chars: Vec<char> = s.chars().collect();
            if chars.is_empty() {
                Value::String("x".into())
            } else {
                let i = rng.random_range(0..chars.len());
                chars[i] = match chars[i] {
                    '0' => '1',
                    c if c.is_ascii_digit() => '0',
                    'a' => 'b',
                    _ => 'a',
                };
                Value::String(chars.into_iter().collect())
            }
        }
        other => other,
    };
}

fn chain_integrity() -> Result<String> {
    let mut blocks = vec![make_genesis()];
    for i in 1..10u64 {
        let prev = blocks.last().unwrap();
        blocks.push(mine_block(prev, payload_for(i), 1_700_000_100.0 + i as f64, 2, None)?);
    }
    let chain = Chain::from_blocks(blocks, 2);
    ensure!(validate_chain(&chain).is_ok(), "the unmodified chain does not validate");
    let docs: Vec<Value> = chain.blocks.iter().map(serde_json::to_value).collect::<Result<_, _>>()?;
    let mut rng = StdRng::seed_from_u64(SEED ^ 4);
    let mut survived = Vec::new();
    let mut unparseable = 0;
    for trial in 0..200 {
        let index = rng.random_range(0..docs.len());
        let mut doc = docs[index].clone();
        let mut paths = Vec::new();
        leaves(&doc, String::new(), &mut paths);
        let path = &paths[rng.random_range(0..paths.len())];
        mutate(doc.pointer_mut(path).unwrap(), &mut rng);
        ensure!(doc != docs[index], "trial {trial}: mutation of {path} was a no-op");
        let mutated: Block = match serde_json::from_value(doc) {
            Ok(b) => b,
            Err(_) => {
                unparseable += 1;
                continue;
            }
        };
        let mut copy = chain.clone();
        copy.blocks[index] = mutated;
        if validate_chain(&copy).is_ok() {
            survived.push(format!("block {index} {path}"));
        }
    }
    ensure!(survived.is_empty(), "{} mutations went unnoticed: {}", survived.len(), survived.join(", "));
    Ok(format!("200/200 single-field mutations rejected ({unparseable} already at parsing)"))
}

fn demos() -> Result<String> {
    let mut lines = Vec::new();
    for (variant, expected) in [(Variant::Honest, 3), (Variant::Forged, 2)] {
        let start_time = Instant::now();
        let dir = tempfile::tempdir()?;
        let report = run_demo(&DemoOptions::new(binary(), dir.path().to_path_buf(), variant), &mut |_| {})?;
        let failed: Vec<&str> = report.steps.iter().filter(|s| !s.ok).map(|s| s.step.as_str()).collect();
        ensure!(report.passed, "{variant:?} demo failed steps {failed:?}");
        ensure!(report.identical_chains, "{variant:?} chains differ");
        ensure!(report.chain_lengths.len() == 5, "{variant:?}: {} chains", report.chain_lengths.len());
        ensure!(report.chain_lengths.iter().all(|(_, l)| *l == expected), "{variant:?} lengths {:?}", report.chain_lengths);
        if variant == Variant::Forged {
            let log = std::fs::read_to_string(dir.path().join("node2/node.log"))?;
            ensure!(
                log.lines().any(|l| l.contains("rejected transaction") && l.contains("failed checks [fingerprint]")),
                "no fingerprint rejection in the miner log"
            );
        }
        within(start_time, Duration::from_secs(60))?;
        lines.push(format!("{variant:?} length {expected} in {:.1} s", start_time.elapsed().as_secs_f64()));
    }
    Ok(format!("5 identical chains each: {}", lines.join(", ")))
}

fn mining_gate() -> Result<String> {
    let recorder = start(&[Role::Recorder, Role::Server]);
    let miner = start(&[Role::Server]);
    miner.node().register_peer(&recorder.url(), false)?;
    let honest = recorder.node().contribute(&wav(31, 4.0), "gate.wav", None)?.payload;
    let other = compute_fingerprint(&clip(32, 4.0), &FingerprintParams::default())?;

    let forgeries: [(&str, Box<dyn Fn(&mut PayloadV1)>); 3] = [
        ("fingerprint", Box::new(move |p| p.rec_signature = encode_fingerprint(&other))),
        ("duration", Box::new(|p| p.rec_duration += 0.5)),
        ("channels", Box::new(|p| p.rec_num_channels = 2)),
    ];
    for (i, (check, forge)) in forgeries.iter().enumerate() {
        // A fresh id and a stored copy carrying it, so only the forged field
        // disagrees with the audio.
        let id = ContentId::parse(&format!("{:032x}", 0xf0_u128 + i as u128))?;
        let stored = recorder.node().store().get_local(&Cid::parse(&honest.ipfs_hash)?)?.context("stored copy")?;
        let cid = recorder.node().store().put(&embed_content_id(&stored, &id)?)?;
        let mut payload = honest.clone();
        payload.content_id = id.as_str().to_string();
        payload.ipfs_hash = cid.to_string();
        forge(&mut payload);
        miner.node().submit_transaction(payload)?;
        match miner.node().mine_one() {
            Err(MineError::NoPending { rejected }) => {
                ensure!(rejected.len() == 1, "{check}: {} rejections", rejected.len());
                ensure!(rejected[0].failed == vec![check.to_string()], "{check}: failed {:?}", rejected[0].failed);
            }
            other => bail!("{check}: forged transaction was not refused: {other:?}"),
        }
        ensure!(miner.node().chain_len() == 1, "{check}: chain grew");
        ensure!(miner.node().pending().is_empty(), "{check}: forgery stayed pending");
    }
    miner.node().submit_transaction(honest)?;
    miner.node().mine_one().map_err(|e| anyhow!("honest transaction refused: {e}"))?;
    Ok("forged signature, duration and channel count each refused, honest copy mined".into())
}

fn fingerprint_golden() -> Result<String> {
    let params = FingerprintParams::default();
    let read = |name: &str| -> Result<AudioClip> { Ok(read_wav(&std::fs::read(fixture(name))?)?.0) };
    let speech = read("speech.wav")?;
    for (name, clip, pinned) in [("speech", &speech, SPEECH_SHA), ("stereo44k", &read("stereo44k.wav")?, STEREO_SHA)] {
        let encoded = encode_fingerprint(&compute_fingerprint(clip, &params)?);
        ensure!(sha256_hex(encoded.as_bytes()) == pinned, "{name} fingerprint differs from the pinned encoding");
    }
    let body = |clip: &AudioClip| -> Result<usize> {
        let fp = compute_fingerprint(clip, &params)?;
        Ok(fp.encoded_len() - HEADER_LEN)
    };
    let half = speech.map_channels(|c| c[..c.len() / 2].to_vec());
    let (full_size, half_size) = (body(&speech)?, body(&half)?);
    let frame_bytes = 5;
    ensure!(full_size.abs_diff(2 * half_size) <= frame_bytes, "2x duration gives {full_size} vs 2 x {half_size}");
    let stereo = AudioClip::new(
        speech.sample_rate(),
        vec![speech.channels()[0].clone(), speech.channels()[0].iter().map(|s| s.saturating_neg()).collect()],
    )?;
    ensure!(body(&stereo)? == 2 * full_size, "stereo body is not twice the mono body");
    Ok(format!("pinned encodings match; 2x duration {full_size} vs {half_size} bytes, stereo exactly 2x"))
}

struct CorruptPeer;

impl RemoteFetch for CorruptPeer {
    fn fetch(&self, _: &str, cid: &Cid) -> Result<Option<Vec<u8>>, String> {
        Ok(Some(format!("not the bytes of {cid}").into_bytes()))
    }
}

fn cas_round_trip() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let store = CasStore::open(dir.path())?;
    let mut rng = StdRng::seed_from_u64(SEED ^ 8);
    for i in 0..1000 {
        let len = if i % 10 == 0 { rng.random_range(0..200_000) } else { rng.random_range(0..2048) };
        let mut bytes = vec![0u8; len];
        rng.fill(bytes.as_mut_slice());
        let cid = store.put(&bytes)?;
        ensure!(cid == Cid::of(&bytes), "cid differs from the digest of the bytes");
        ensure!(store.get_local(&cid)?.as_deref() == Some(bytes.as_slice()), "round trip {i} differs");
    }

    let wanted = Cid::of(b"the genuine recording");
    let outcome = store.get(&wanted, &["http://peer.invalid".to_string()], &CorruptPeer);
    ensure!(matches!(outcome, Err(CasError::IntegrityViolation { .. })), "corrupt peer copy accepted: {outcome:?}");
    ensure!(!store.contains(&wanted), "corrupt bytes were stored");

    let bad = axum::Router::new().route("/cas/{cid}", axum::routing::get(|| async { b"field rec0rding".to_vec() }));
    let (peer, _stop) = spawn_fake(bad);
    let victim = start(&[Role::Server, Role::Player]);
    let cid = Cid::of(b"field recording");
    let outcome = victim.node().store().get(&cid, &[peer], &http());
    ensure!(matches!(outcome, Err(CasError::IntegrityViolation { .. })), "corrupted remote copy accepted: {outcome:?}");
    ensure!(!victim.node().store().contains(&cid), "corrupted remote copy stored");
    Ok("1000/1000 round trips, corrupted peer copies refused and never stored".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<String>); 8] = [
        ("fingerprint robustness", robustness),
        ("chain structure", chain_structure),
        ("tamper detection", tamper_suite),
        ("chain integrity", chain_integrity),
        ("consensus convergence", demos),
        ("miner verification gate", mining_gate),
        ("fingerprint determinism and scaling", fingerprint_golden),
        ("content-addressed storage", cas_round_trip),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(anyhow!("panicked: {}", p.downcast_ref::<String>().map_or("?", String::as_str))));
        match outcome {
            Ok(detail) => println!("criterion {} PASS  {name}: {detail}", i + 1),
            Err(e) => {
                failures += 1;
                println!("criterion {} FAIL  {name}: {e:#}", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
