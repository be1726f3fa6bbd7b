use std::collections::VecDeque;

use thiserror::Error;

use super::chain::Chain;
use super::payload::{PayloadError, PayloadV1};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PoolError {
    #[error("content id {0} is already pending or on chain")]
    DuplicateContentId(String),
    #[error("payload field `{0}` is invalid")]
    PayloadInvalid(&'static str),
    #[error("payload is {0} bytes, over the block limit")]
    PayloadTooLarge(usize),
}

impl From<PayloadError> for PoolError {
    fn from(e: PayloadError) -> Self {
        match e {
            PayloadError::Invalid(field) => PoolError::PayloadInvalid(field),
            PayloadError::TooLarge(n) => PoolError::PayloadTooLarge(n),
        }
    }
}

/// FIFO queue of transactions waiting to be mined.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PendingPool {
    queue: VecDeque<PayloadV1>,
}

impl PendingPool {
    pub fn new() -> PendingPool {
        PendingPool::default()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn contains(&self, content_id: &str) -> bool {
        self.queue.iter().any(|p| p.content_id == content_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PayloadV1> {
        self.queue.iter()
    }

    pub fn add(&mut self, payload: PayloadV1, chain: &Chain) -> Result<(), PoolError> {
        payload.validate()?;
        if self.contains(&payload.content_id) || chain.contains_content_id(&payload.content_id) {
            return Err(PoolError::DuplicateContentId(payload.content_id));
        }
        self.queue.push_back(payload);
        Ok(())
    }

    pub fn pop_front(&mut self) -> Option<PayloadV1> {
        self.queue.pop_front()
    }

    /// Puts a transaction back at the head of the queue, unless it is
    /// already pending or confirmed on `chain`.
    pub fn requeue(&mut self, payload: PayloadV1, chain: &Chain) -> bool {
        if self.contains(&payload.content_id) || chain.contains_content_id(&payload.content_id) {
            return false;
        }
        self.queue.push_front(payload);
        true
    }

    pub fn remove(&mut self, content_id: &str) -> Option<PayloadV1> {
        let pos = self.queue.iter().position(|p| p.content_id == content_id)?;
        self.queue.remove(pos)
    }

    /// Drops every pending transaction that `chain` already confirms.
    pub fn prune_confirmed(&mut self, chain: &Chain) {
        self.queue.retain(|p| !chain.contains_content_id(&p.content_id));
    }
}

pub fn pending_pool_add(pool: &mut PendingPool, payload: PayloadV1, chain: &Chain) -> Result<(), PoolError> {
    pool.add(payload, chain)
}
