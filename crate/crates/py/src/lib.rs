//! Python bindings: WAV I/O, fingerprints, manipulations, the content store,
//! ledger primitives and a full node.
//!
//! Structured values (blocks, payloads, verification results) cross the
//! boundary as plain dicts and lists via JSON.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use audiochain_core::cas::{CasStore as CoreStore, Cid};
use audiochain_core::fingerprint::{self, decode_fingerprint, encode_fingerprint, FingerprintParams};
use audiochain_core::ledger::{self, Block, Chain, PayloadV1};
use audiochain_core::tamper::{control_condition, run_robustness_experiment, table2_conditions, Manipulation};
use audiochain_core::wav::{self, ContentId};
use audiochain_node::config::{DeviceIdentity, NodeConfig, Role};
use audiochain_node::{spawn_server, Node as CoreNode, ServerHandle};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(audiochain, AudiochainError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    AudiochainError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Interleaving-free PCM: one list of 16-bit samples per channel.
#[pyclass(module = "audiochain", frozen, skip_from_py_object)]
#[derive(Clone)]
struct AudioClip(wav::AudioClip);

#[pymethods]
impl AudioClip {
    #[new]
    fn new(sample_rate: u32, channels: Vec<Vec<i16>>) -> PyResult<Self> {
        wav::AudioClip::new(sample_rate, channels).map(AudioClip).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn sample_rate(&self) -> u32 {
        self.0.sample_rate()
    }

    #[getter]
    fn num_channels(&self) -> usize {
        self.0.num_channels()
    }

    #[getter]
    fn frames(&self) -> usize {
        self.0.frames()
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.0.duration_seconds()
    }

    #[getter]
    fn channels(&self) -> Vec<Vec<i16>> {
        self.0.channels().to_vec()
    }

    fn __eq__(&self, other: &AudioClip) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!(
            "AudioClip(sample_rate={}, channels={}, frames={})",
            self.0.sample_rate(),
            self.0.num_channels(),
            self.0.frames()
        )
    }
}

#[pyfunction]
fn cid_of(data: &[u8]) -> String {
    Cid::of(data).to_string()
}

/// Returns `(clip, content_id or None)`.
#[pyfunction]
fn read_wav(data: &[u8]) -> PyResult<(AudioClip, Option<String>)> {
    let (clip, id) = wav::read_wav(data).map_err(err)?;
    Ok((AudioClip(clip), id.map(|i| i.as_str().to_string())))
}

#[pyfunction]
#[pyo3(signature = (clip, content_id=None))]
fn write_wav<'py>(py: Python<'py>, clip: &AudioClip, content_id: Option<&str>) -> PyResult<Bound<'py, PyBytes>> {
    let id = content_id.map(ContentId::parse).transpose().map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(PyBytes::new(py, &wav::write_wav(&clip.0, id.as_ref())))
}

#[pyfunction]
#[pyo3(signature = (seed, seconds, sample_rate=16000))]
fn synth_speech(seed: u64, seconds: f64, sample_rate: u32) -> AudioClip {
    AudioClip(audiochain_core::synth::speech_like(seed, seconds, sample_rate))
}

/// The `recSignature` string of a clip.
#[pyfunction]
fn compute_fingerprint(py: Python<'_>, clip: &AudioClip) -> PyResult<String> {
    let clip = clip.0.clone();
    py.detach(move || fingerprint::compute_fingerprint(&clip, &FingerprintParams::default()))
        .map(|fp| encode_fingerprint(&fp))
        .map_err(err)
}

/// Compares two encoded fingerprints.
#[pyfunction]
fn compare_fingerprints<'py>(py: Python<'py>, a: &str, b: &str) -> PyResult<Bound<'py, PyAny>> {
    let a = decode_fingerprint(a).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let b = decode_fingerprint(b).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let report = fingerprint::compare_fingerprints(&a, &b);
    to_py(
        py,
        &serde_json::json!({
            "identical": report.identical,
            "bit_error_rate": report.bit_error_rate,
            "energy_differs": report.energy_differs,
        }),
    )
}

fn manipulation(op: &str, amount: f64) -> PyResult<Manipulation> {
    Ok(match op {
        "trim" => Manipulation::Trim(amount),
        "gain" => Manipulation::Gain(amount),
        "stretch" => Manipulation::TimeStretch(amount),
        "pitch" => Manipulation::PitchShift(amount),
        other => return Err(PyValueError::new_err(format!("unknown manipulation `{other}`"))),
    })
}

/// `op` is one of trim (s), gain (dB), stretch (%), pitch (cents).
#[pyfunction]
fn tamper(clip: &AudioClip, op: &str, amount: f64) -> PyResult<AudioClip> {
    manipulation(op, amount)?
        .apply(&clip.0)
        .map(AudioClip)
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
#[pyo3(signature = (clip, control=false))]
fn robustness_experiment<'py>(py: Python<'py>, clip: &AudioClip, control: bool) -> PyResult<Bound<'py, PyAny>> {
    let mut conditions = table2_conditions();
    if control {
        conditions.push(control_condition());
    }
    let clip = clip.0.clone();
    let rows = py
        .detach(move || run_robustness_experiment(&clip, &conditions, &FingerprintParams::default()))
        .map_err(err)?;
    to_py(py, &rows)
}

#[pyclass(module = "audiochain", frozen)]
struct CasStore(CoreStore);

#[pymethods]
impl CasStore {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        CoreStore::open(path).map(CasStore).map_err(err)
    }

    fn put(&self, data: &[u8]) -> PyResult<String> {
        self.0.put(data).map(|c| c.to_string()).map_err(err)
    }

    /// Local bytes for `cid`, or None. Raises if the stored copy is corrupt.
    fn get<'py>(&self, py: Python<'py>, cid: &str) -> PyResult<Option<Bound<'py, PyBytes>>> {
        let cid = Cid::parse(cid).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(self.0.get_local(&cid).map_err(err)?.map(|b| PyBytes::new(py, &b)))
    }

    fn __contains__(&self, cid: &str) -> bool {
        Cid::parse(cid).is_ok_and(|c| self.0.contains(&c))
    }
}

#[pyfunction]
fn make_genesis<'py>(py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &ledger::make_genesis())
}

#[pyfunction]
#[pyo3(signature = (previous, payload, timestamp, difficulty=2))]
fn mine_block<'py>(
    py: Python<'py>,
    previous: &Bound<'py, PyAny>,
    payload: &Bound<'py, PyAny>,
    timestamp: f64,
    difficulty: u32,
) -> PyResult<Bound<'py, PyAny>> {
    let previous: Block = from_py(previous)?;
    let payload: PayloadV1 = from_py(payload)?;
    let block = py
        .detach(move || ledger::mine_block(&previous, payload, timestamp, difficulty, None))
        .map_err(err)?;
    to_py(py, &block)
}

/// Name of the first fault of a list of blocks, or "Ok".
#[pyfunction]
#[pyo3(signature = (blocks, difficulty=2))]
fn validate_chain(blocks: &Bound<'_, PyAny>, difficulty: u32) -> PyResult<String> {
    let blocks: Vec<Block> = from_py(blocks)?;
    Ok(ledger::validate_chain(&Chain::from_blocks(blocks, difficulty)).name().to_string())
}

/// `(maker, model, mac, (lat, lon) or None)`
type Device = (String, String, String, Option<(f64, f64)>);

/// A ledger node. Unless `serve=False` it listens on `bind` (port 0 picks a
/// free port) from the moment it is created.
#[pyclass(module = "audiochain", frozen)]
struct Node {
    node: Arc<CoreNode>,
    server: Mutex<Option<ServerHandle>>,
}

#[pymethods]
impl Node {
    #[new]
    #[pyo3(signature = (
        storage_dir,
        roles=vec!["server".to_string()],
        bind="127.0.0.1:0",
        difficulty=2,
        peers=Vec::new(),
        device=None,
        serve=true,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        py: Python<'_>,
        storage_dir: PathBuf,
        roles: Vec<String>,
        bind: &str,
        difficulty: u32,
        peers: Vec<String>,
        device: Option<Device>,
        serve: bool,
    ) -> PyResult<Self> {
        let roles = roles
            .iter()
            .map(|r| r.parse::<Role>())
            .collect::<Result<BTreeSet<_>, _>>()
            .map_err(PyValueError::new_err)?;
        if roles.contains(&Role::Recorder) && device.is_none() {
            return Err(PyValueError::new_err("a recorder needs device=(maker, model, mac, gps or None)"));
        }
        let listener = serve.then(|| std::net::TcpListener::bind(bind)).transpose().map_err(err)?;
        let bind = match &listener {
            Some(l) => l.local_addr().map_err(err)?.to_string(),
            None => bind.to_string(),
        };
        let config = NodeConfig {
            roles,
            advertise_url: format!("http://{bind}"),
            bind,
            peers,
            difficulty,
            storage_dir,
            device: device.map(|(maker, model, mac, gps)| DeviceIdentity { maker, model, mac, gps }),
        };
        let node = Arc::new(py.detach(|| CoreNode::open(config)).map_err(err)?);
        let server = listener.map(|l| spawn_server(node.clone(), l)).transpose().map_err(err)?;
        Ok(Node { node, server: Mutex::new(server) })
    }

    #[getter]
    fn url(&self) -> String {
        self.node.self_url()
    }

    fn shutdown(&self, py: Python<'_>) {
        let handle = self.server.lock().unwrap_or_else(|p| p.into_inner()).take();
        py.detach(move || drop(handle));
    }

    #[pyo3(signature = (url, reciprocate=true))]
    fn register_peer(&self, py: Python<'_>, url: &str, reciprocate: bool) -> PyResult<bool> {
        py.detach(|| self.node.register_peer(url, reciprocate)).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn peers(&self) -> Vec<String> {
        self.node.peers()
    }

    #[pyo3(signature = (wav, file_name, timestamp=None))]
    fn contribute<'py>(&self, py: Python<'py>, wav: &[u8], file_name: &str, timestamp: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
        let c = py.detach(|| self.node.contribute(wav, file_name, timestamp)).map_err(err)?;
        to_py(py, &c)
    }

    /// Mines one pending transaction and returns the new block.
    fn mine<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let mined = py.detach(|| self.node.mine_one()).map_err(err)?;
        to_py(py, &mined.block)
    }

    fn chain<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.node.chain().blocks)
    }

    fn pending<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.node.pending())
    }

    fn resolve<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let report = py.detach(|| self.node.resolve_conflicts());
        to_py(py, &report)
    }

    /// Verification result for a registered recording.
    fn verify<'py>(&self, py: Python<'py>, content_id: &str) -> PyResult<Bound<'py, PyAny>> {
        let (_, result) = py.detach(|| self.node.consume(content_id)).map_err(err)?;
        to_py(py, &result)
    }

    /// Verification result for a WAV file of unknown origin.
    fn authenticate<'py>(&self, py: Python<'py>, wav: &[u8]) -> PyResult<Bound<'py, PyAny>> {
        let result = py.detach(|| self.node.authenticate(wav)).map_err(err)?;
        to_py(py, &result)
    }
}

#[pymodule]
fn audiochain(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("AudiochainError", m.py().get_type::<AudiochainError>())?;
    m.add_class::<AudioClip>()?;
    m.add_class::<CasStore>()?;
    m.add_class::<Node>()?;
    m.add_function(wrap_pyfunction!(cid_of, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    m.add_function(wrap_pyfunction!(synth_speech, m)?)?;
    m.add_function(wrap_pyfunction!(compute_fingerprint, m)?)?;
    m.add_function(wrap_pyfunction!(compare_fingerprints, m)?)?;
    m.add_function(wrap_pyfunction!(tamper, m)?)?;
    m.add_function(wrap_pyfunction!(robustness_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(make_genesis, m)?)?;
    m.add_function(wrap_pyfunction!(mine_block, m)?)?;
    m.add_function(wrap_pyfunction!(validate_chain, m)?)?;
    Ok(())
}
