//! Proof-of-work ledger: transactions, blocks, chain validation and the
//! pending pool.

mod block;
pub mod canonical;
mod chain;
mod payload;
mod pool;

pub use block::{block_hash, canonical_serialize, make_genesis, meets_difficulty, mine_block, proof_of_work, Block, MiningError};
pub use canonical::SerializationError;
pub use chain::{validate_block, validate_chain, Chain, ChainIoError, ValidationVerdict, DEFAULT_DIFFICULTY};
pub use payload::{is_mac_address, PayloadError, PayloadV1, MAX_PAYLOAD_BYTES, PAYLOAD_VERSION};
pub use pool::{pending_pool_add, PendingPool, PoolError};
