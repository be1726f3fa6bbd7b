#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use audiochain_core::synth::speech_like;
use audiochain_core::wav::{write_wav, AudioClip};
use audiochain_node::config::{DeviceIdentity, NodeConfig, Role};
use audiochain_node::{spawn_server, Node, PeerClient, ServerHandle};
use tempfile::TempDir;

pub struct TestNode {
    pub handle: ServerHandle,
    pub dir: TempDir,
}

impl TestNode {
    pub fn url(&self) -> String {
        self.handle.url()
    }

    pub fn node(&self) -> &Arc<Node> {
        &self.handle.node
    }
}

pub fn device() -> DeviceIdentity {
    DeviceIdentity {
        maker: "Raspberry Pi Foundation".into(),
        model: "Raspberry Pi 4 Model B".into(),
        mac: "00:05:9a:3c:7a:00".into(),
        gps: Some((49.591, 11.0078)),
    }
}

pub fn config(roles: &[Role], bind: &str, storage: &std::path::Path) -> NodeConfig {
    let roles: BTreeSet<Role> = roles.iter().copied().collect();
    NodeConfig {
        device: roles.contains(&Role::Recorder).then(device),
        roles,
        bind: bind.to_string(),
        advertise_url: format!("http://{bind}"),
        peers: Vec::new(),
        difficulty: 2,
        storage_dir: storage.to_path_buf(),
    }
}

/// A node served on an ephemeral localhost port.
pub fn start(roles: &[Role]) -> TestNode {
    let dir = tempfile::tempdir().unwrap();
    start_in(roles, dir)
}

pub fn start_in(roles: &[Role], dir: TempDir) -> TestNode {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let bind = listener.local_addr().unwrap().to_string();
    let node = Node::open(config(roles, &bind, dir.path())).unwrap();
    let handle = spawn_server(Arc::new(node), listener).unwrap();
    TestNode { handle, dir }
}

/// Registers every node with every other one.
pub fn mesh(nodes: &[&TestNode]) {
    for a in nodes {
        for b in nodes {
            if a.url() != b.url() {
                a.node().register_peer(&b.url(), false).unwrap();
            }
        }
    }
}

pub fn clip(seed: u64, seconds: f64) -> AudioClip {
    speech_like(seed, seconds, 16000)
}

pub fn wav(seed: u64, seconds: f64) -> Vec<u8> {
    write_wav(&clip(seed, seconds), None)
}

pub fn http() -> PeerClient {
    PeerClient::new(std::time::Duration::from_secs(30))
}

/// Serves `router` on an ephemeral port until the returned sender is dropped.
pub fn spawn_fake(router: axum::Router) -> (String, tokio::sync::oneshot::Sender<()>) {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, router)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
                .unwrap();
        });
    });
    (url, tx)
}
