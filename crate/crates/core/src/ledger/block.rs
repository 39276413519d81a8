use ed25519_dalek::VerifyingKey;
use thiserror::Error;

use super::types::{BlockHeader, GenesisTransaction, Timestamp, Transaction};
use crate::crypto::{Digest, PublicKey};
use crate::par::{self, Execution};
use crate::protocol::codec::{Decode, DecodeError, Encode, Reader, Writer};

/// Why a transaction or genesis was not accepted.
#[derive(Clone, Copy, Debug, Error, PartialEq, Eq, Hash)]
pub enum AppendError {
    #[error("signature does not verify under the block's device key")]
    BadSignature,
    #[error("prev_tx_hash does not match the ledger tail")]
    BrokenChainLink,
    #[error("block has expired")]
    BlockExpired,
    #[error("genesis transaction does not embed the header's device key")]
    KeyMismatch,
    #[error("expiration window must be positive")]
    EmptyWindow,
}

/// Where an incoming transaction's `prev_tx_hash` points in a ledger.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkStatus {
    /// Extends the current tail.
    Tail,
    /// Identical transaction already stored.
    Duplicate,
    /// Points at a stored entry other than the tail: a competing branch.
    Fork,
    /// Predecessor not seen yet.
    Unknown,
}

/// One device's block: an immutable header plus its appendable ledger.
#[derive(Clone, Debug)]
pub struct DeviceBlock {
    header: BlockHeader,
    ledger: Vec<Transaction>,
    // Caches, recomputed from the parts above by `from_parts`.
    header_digest: Digest,
    tx_digests: Vec<Digest>,
    verifying_key: Option<VerifyingKey>,
}

impl PartialEq for DeviceBlock {
    fn eq(&self, other: &Self) -> bool {
        self.header == other.header && self.ledger == other.ledger
    }
}

impl Eq for DeviceBlock {}

impl DeviceBlock {
    /// Assembles a block without validating it.
    pub fn from_parts(header: BlockHeader, ledger: Vec<Transaction>) -> DeviceBlock {
        let header_digest = header.hash();
        let tx_digests = ledger.iter().map(Transaction::digest).collect();
        let verifying_key = header.device_pk.verifying_key();
        DeviceBlock {
            header,
            ledger,
            header_digest,
            tx_digests,
            verifying_key,
        }
    }

    pub fn header(&self) -> &BlockHeader {
        &self.header
    }

    pub fn header_hash(&self) -> Digest {
        self.header_digest
    }

    pub fn device_pk(&self) -> &PublicKey {
        &self.header.device_pk
    }

    pub fn ledger(&self) -> &[Transaction] {
        &self.ledger
    }

    pub fn len(&self) -> usize {
        self.ledger.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ledger.is_empty()
    }

    pub fn tx_digests(&self) -> &[Digest] {
        &self.tx_digests
    }

    /// Digest the next transaction must link to.
    pub fn tail_digest(&self) -> Digest {
        self.tx_digests.last().copied().unwrap_or(self.header_digest)
    }

    pub fn into_parts(self) -> (BlockHeader, Vec<Transaction>) {
        (self.header, self.ledger)
    }

    pub fn link_status(&self, tx: &Transaction, tx_digest: &Digest) -> LinkStatus {
        if tx.prev_tx_hash == self.tail_digest() {
            return LinkStatus::Tail;
        }
        if self.tx_digests.contains(tx_digest) {
            return LinkStatus::Duplicate;
        }
        let known = tx.prev_tx_hash == self.header_digest || self.tx_digests.contains(&tx.prev_tx_hash);
        if known {
            LinkStatus::Fork
        } else {
            LinkStatus::Unknown
        }
    }

    pub(crate) fn verifying_key(&self) -> Option<&VerifyingKey> {
        self.verifying_key.as_ref()
    }

    pub(crate) fn verify_tx(&self, tx: &Transaction) -> bool {
        match &self.verifying_key {
            Some(vk) => tx.verify_with(vk),
            None => false,
        }
    }

    /// All append checks without mutating: expiry, then signature, then the
    /// chain link.
    pub fn check_transaction(&self, tx: &Transaction, now: Timestamp) -> Result<(), AppendError> {
        self.check_transaction_with(tx, now, false)
    }

    /// As [`DeviceBlock::check_transaction`]. With `sig_checked` the caller
    /// vouches that the signature already verified under this block's key
    /// (for example in a batch); the verify is still charged to the meter.
    pub(crate) fn check_transaction_with(
        &self,
        tx: &Transaction,
        now: Timestamp,
        sig_checked: bool,
    ) -> Result<(), AppendError> {
        if now > self.header.expiration || tx.timestamp > self.header.expiration {
            return Err(AppendError::BlockExpired);
        }
        let sig_ok = if sig_checked {
            // Charge what the single check would have cost: encode + verify.
            let _ = tx.signing_bytes();
            crate::meter::record_verify();
            true
        } else {
            self.verify_tx(tx)
        };
        if !sig_ok {
            return Err(AppendError::BadSignature);
        }
        if tx.prev_tx_hash != self.tail_digest() {
            return Err(AppendError::BrokenChainLink);
        }
        Ok(())
    }

    /// Appends `tx` if it is signed by the device key, links to the current
    /// tail, and the block has not expired at `now`. Returns the new
    /// transaction's digest.
    pub fn append_transaction(&mut self, tx: Transaction, now: Timestamp) -> Result<Digest, AppendError> {
        self.check_transaction(&tx, now)?;
        let d = tx.digest();
        self.push_unchecked(tx, d);
        Ok(d)
    }

    /// Appends a transaction the caller has already run through
    /// [`DeviceBlock::check_transaction`].
    pub(crate) fn push_unchecked(&mut self, tx: Transaction, digest: Digest) {
        self.ledger.push(tx);
        self.tx_digests.push(digest);
    }
}

/// Free-function form of [`DeviceBlock::append_transaction`].
pub fn append_transaction(block: &mut DeviceBlock, tx: Transaction, now: Timestamp) -> Result<Digest, AppendError> {
    block.append_transaction(tx, now)
}

/// A header allocated for a joining device, waiting for the device to
/// return its genesis re-signed against the header digest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnboundBlock {
    header: BlockHeader,
    header_digest: Digest,
}

impl UnboundBlock {
    pub fn header(&self) -> &BlockHeader {
        &self.header
    }

    pub fn header_hash(&self) -> Digest {
        self.header_digest
    }

    /// Completes the block with the bound genesis.
    pub fn bind(self, genesis: GenesisTransaction) -> Result<DeviceBlock, AppendError> {
        if genesis.embedded_pk() != self.header.device_pk {
            return Err(AppendError::KeyMismatch);
        }
        let mut block = DeviceBlock::from_parts(self.header, Vec::new());
        block.append_transaction(genesis.into_transaction(), block.header.created_at)?;
        Ok(block)
    }
}

/// Allocates the header for a new device block linked after `prev`.
///
/// The genesis may be bound or unbound; only its signature under the
/// embedded key is checked here. The returned [`UnboundBlock`] is completed
/// once the device re-signs the genesis against the new header digest.
pub fn create_block(
    prev: &BlockHeader,
    genesis: &GenesisTransaction,
    expiration_window: u64,
    now: Timestamp,
) -> Result<UnboundBlock, AppendError> {
    if expiration_window == 0 {
        return Err(AppendError::EmptyWindow);
    }
    if !genesis.verify() {
        return Err(AppendError::BadSignature);
    }
    let header = BlockHeader {
        device_pk: genesis.embedded_pk(),
        prev_header_hash: prev.hash(),
        expiration: now.saturating_add(expiration_window),
        created_at: now,
        access_level: genesis.transaction().access_level,
    };
    Ok(UnboundBlock {
        header_digest: header.hash(),
        header,
    })
}

/// Checks every block invariant from scratch, ignoring cached digests.
pub fn validate_block(block: &DeviceBlock) -> bool {
    validate_block_with(block, Execution::Parallel)
}

pub fn validate_block_with(block: &DeviceBlock, exec: Execution) -> bool {
    let header = &block.header;
    if header.expiration <= header.created_at || block.ledger.is_empty() {
        return false;
    }
    let genesis_ok = GenesisTransaction::from_transaction(block.ledger[0].clone())
        .map(|g| g.embedded_pk() == header.device_pk)
        .unwrap_or(false);
    if !genesis_ok {
        return false;
    }
    let Some(vk) = header.device_pk.verifying_key() else {
        return false;
    };
    let header_digest = header.hash();
    let ledger = &block.ledger;
    let digests: Vec<Digest> = par::map(exec, ledger, Transaction::digest);
    let links_ok = ledger.iter().enumerate().all(|(i, tx)| {
        let expected_prev = if i == 0 { header_digest } else { digests[i - 1] };
        tx.prev_tx_hash == expected_prev && tx.timestamp <= header.expiration
    });
    if !links_ok {
        return false;
    }
    let chunks: Vec<&[Transaction]> = ledger.chunks(SIG_BATCH).collect();
    par::all(exec, &chunks, |_, chunk| signatures_valid(&vk, chunk))
}

const SIG_BATCH: usize = 64;

/// Every signature in `txs` verifies under `vk`. Tries one batch first and
/// falls back to single checks only if the batch fails.
fn signatures_valid(vk: &VerifyingKey, txs: &[Transaction]) -> bool {
    if txs.len() == 1 {
        return txs[0].verify_with(vk);
    }
    let bytes: Vec<Vec<u8>> = txs.iter().map(Transaction::signing_bytes).collect();
    let items: Vec<_> = txs
        .iter()
        .zip(&bytes)
        .map(|(tx, b)| (vk, &b[..], &tx.signature))
        .collect();
    if crate::crypto::verify_batch(&items) {
        for _ in txs {
            crate::meter::record_verify();
        }
        return true;
    }
    txs.iter().all(|tx| tx.verify_with(vk))
}

impl Encode for DeviceBlock {
    fn encode_to(&self, w: &mut Writer) {
        w.put(&self.header).seq(&self.ledger);
    }
}

impl Decode for DeviceBlock {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let header = r.get()?;
        let ledger = r.seq()?;
        Ok(DeviceBlock::from_parts(header, ledger))
    }
}
