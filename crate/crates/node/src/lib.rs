//! Ledger node for registering and authenticating audio recordings.
//!
//! A node keeps a copy of the chain, a pending-transaction pool and a
//! content-addressed object store, and talks to its peers over HTTP.

pub mod cli;
pub mod client;
pub mod config;
pub mod harness;
pub mod node;
pub mod registry;
pub mod server;

pub use client::PeerClient;
pub use config::{NodeConfig, Role};
pub use node::{AnnounceOutcome, MineError, Node, NodeError, SyncReport};
pub use server::{spawn_server, ServerHandle};
