use std::sync::OnceLock;

use audiochain_core::cas::Cid;
use audiochain_core::fingerprint::{compute_fingerprint, encode_fingerprint, FingerprintParams};
use audiochain_core::ledger::{
    block_hash, make_genesis, meets_difficulty, mine_block, proof_of_work, Block, Chain, PayloadV1,
};
use audiochain_core::synth::speech_like;
use audiochain_core::tamper::{gain, pitch_shift, time_stretch, trim, Manipulation};
use audiochain_core::wav::{read_wav, write_wav, AudioClip, ContentId};
use proptest::prelude::*;
use serde_json::Value;

const BLOCKS: usize = 6;

fn payload(i: usize) -> PayloadV1 {
    let clip = speech_like(i as u64, 0.5, 8000);
    PayloadV1 {
        version: "1".into(),
        rec_file_name: format!("clip{i}.wav"),
        rec_timestamp: 1_650_000_000.25 + i as f64,
        rec_duration: clip.duration_seconds(),
        rec_num_channels: 1,
        device_maker: "Acme".into(),
        device_model: "Field Recorder".into(),
        device_mac_add: "00:11:22:33:44:55".into(),
        device_gps_info: Some((48.1, 11.5)),
        ipfs_hash: Cid::of(&write_wav(&clip, None)).to_string(),
        content_id: format!("{i:032x}"),
        rec_signature: encode_fingerprint(&compute_fingerprint(&clip, &FingerprintParams::default()).unwrap()),
    }
}

fn chain() -> &'static Chain {
    static CHAIN: OnceLock<Chain> = OnceLock::new();
    CHAIN.get_or_init(|| {
        let mut blocks = vec![make_genesis()];
        for i in 1..BLOCKS {
            let b = mine_block(blocks.last().unwrap(), payload(i), 1_650_000_100.0 + i as f64, 2, None).unwrap();
            blocks.push(b);
        }
        let c = Chain::from_blocks(blocks, 2);
        assert!(c.validate().is_ok());
        c
    })
}

fn leaves(v: &Value, path: String, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => m.iter().for_each(|(k, x)| leaves(x, format!("{path}/{k}"), out)),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, x)| leaves(x, format!("{path}/{i}"), out)),
        Value::Null => {}
        _ => out.push(path),
    }
}

/// Changes one scalar in place, keeping its JSON type.
fn perturb(v: &mut Value, k: u64) {
    let k = k % 997 + 1;
    *v = match v.take() {
        Value::Number(n) if n.is_u64() => Value::from(n.as_u64().unwrap() + k),
        Value::Number(n) => Value::from(n.as_f64().unwrap() + k as f64 / 8.0),
        Value::String(s) => {
            let mut chars: Vec<char> = s.chars().collect();
            let i = k as usize % chars.len().max(1);
            match chars.get(i).copied() {
                Some('0') => chars[i] = '1',
                Some(_) => chars[i] = '0',
                None => chars.push('0'),
            }
            Value::String(chars.into_iter().collect())
        }
        Value::Bool(b) => Value::Bool(!b),
        other => other,
    };
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn single_field_mutation_fails_at_block_or_successor(block in 0..BLOCKS, pick in any::<usize>(), k in any::<u64>()) {
        let original = chain();
        let mut doc = serde_json::to_value(&original.blocks[block]).unwrap();
        let mut paths = Vec::new();
        leaves(&doc, String::new(), &mut paths);
        let path = &paths[pick % paths.len()];
        perturb(doc.pointer_mut(path).unwrap(), k);
        let mutated: Block = serde_json::from_value(doc).unwrap();
        prop_assert_ne!(&mutated, &original.blocks[block]);
        let mut copy = original.clone();
        copy.blocks[block] = mutated;
        let (at, _) = copy.first_fault().expect("mutated chain validated");
        prop_assert!(at == block || at == block + 1, "{} in block {} failed at {}", path, block, at);
    }

    #[test]
    fn difficulty_is_monotone(hash in "[0-9a-f]{64}", d in 1u32..8) {
        if meets_difficulty(&hash, d) {
            for lower in 1..=d {
                prop_assert!(meets_difficulty(&hash, lower));
            }
        }
    }

    #[test]
    fn hashing_and_mining_are_deterministic(i in 1usize..50, ts in 0.0f64..2e9) {
        let mut block = Block {
            index: 1,
            transactions: vec![payload(i)],
            timestamp: ts,
            previous_hash: make_genesis().hash,
            nonce: 0,
            hash: String::new(),
        };
        prop_assert_eq!(block_hash(&block).unwrap(), block_hash(&block.clone()).unwrap());
        let first = proof_of_work(&block, 1, None).unwrap();
        prop_assert_eq!(&first, &proof_of_work(&block, 1, None).unwrap());
        block.nonce = first.0;
        prop_assert_eq!(block_hash(&block).unwrap(), first.1);
    }

    #[test]
    fn nonzero_manipulations_change_samples(
        seed in any::<u64>(),
        kind in 0..4,
        magnitude in 0.0f64..1.0,
        negative in any::<bool>(),
    ) {
        let clip = speech_like(seed, 1.0, 8000);
        let sign = if negative { -1.0 } else { 1.0 };
        let m = match kind {
            0 => Manipulation::Trim(1.0 / 8000.0 + magnitude * 0.9),
            1 => Manipulation::Gain(sign * (0.1 + magnitude * 20.0)),
            2 => Manipulation::TimeStretch(sign * (0.1 + magnitude * 60.0)),
            _ => Manipulation::PitchShift(sign * (1.0 + magnitude * 200.0)),
        };
        prop_assert_ne!(m.apply(&clip).unwrap(), clip, "{} left the clip unchanged", m);
    }

    #[test]
    fn identity_amounts_are_no_ops(seed in any::<u64>(), rate in prop::sample::select(vec![8000u32, 16000, 44100])) {
        let clip = speech_like(seed, 0.3, rate);
        prop_assert_eq!(&gain(&clip, 0.0).unwrap(), &clip);
        prop_assert_eq!(&time_stretch(&clip, 0.0).unwrap(), &clip);
        prop_assert_eq!(&pitch_shift(&clip, 0.0).unwrap(), &clip);
        prop_assert!(trim(&clip, 0.0).is_err());
    }

    #[test]
    fn fingerprint_ignores_metadata(seed in any::<u64>(), id in any::<[u8; 16]>()) {
        let clip = speech_like(seed, 0.6, 8000);
        let id = ContentId::parse(&hex::encode(id)).unwrap();
        let (tagged, read_id) = read_wav(&write_wav(&clip, Some(&id))).unwrap();
        prop_assert_eq!(read_id, Some(id));
        let params = FingerprintParams::default();
        prop_assert_eq!(
            encode_fingerprint(&compute_fingerprint(&tagged, &params).unwrap()),
            encode_fingerprint(&compute_fingerprint(&clip, &params).unwrap())
        );
    }
}

#[test]
fn gain_leaves_silence_silent() {
    let silent = AudioClip::mono(8000, vec![0; 4000]);
    assert_eq!(gain(&silent, 10.0).unwrap(), silent);
}
