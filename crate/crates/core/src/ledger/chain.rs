use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::block::{validate_block_with, DeviceBlock};
use super::types::{make_genesis_tx, AccessLevel, BlockHeader, Geotag, Timestamp};
use crate::crypto::{Digest, Hasher, KeyPair, PublicKey};
use crate::meter;
use crate::par::{self, Execution};
use crate::protocol::codec::{Decode, DecodeError, Encode};

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("prev_header_hash does not match the chain tip")]
    BrokenHeaderLink,
    #[error("device key already has a block with an overlapping validity window")]
    DuplicateKey,
    #[error("block fails validation")]
    InvalidBlock,
}

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("line {line}: {source}")]
    Hex { line: usize, source: hex::FromHexError },
    #[error("line {line}: {source}")]
    Decode { line: usize, source: DecodeError },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("chain file holds no blocks")]
    Empty,
}

/// Header-linked sequence of device blocks. `blocks[0]` is the authority
/// block that roots the chain.
#[derive(Clone, Debug)]
pub struct Blockchain {
    blocks: Vec<DeviceBlock>,
    // Most recent block position for each device key.
    index: BTreeMap<PublicKey, usize>,
}

impl PartialEq for Blockchain {
    fn eq(&self, other: &Self) -> bool {
        self.blocks == other.blocks
    }
}

impl Eq for Blockchain {}

/// Authority block: never expires, self-signed genesis at `(0, 0)`-time.
pub fn authority_block(authority: &KeyPair, geotag: Geotag) -> DeviceBlock {
    let header = BlockHeader {
        device_pk: authority.public,
        prev_header_hash: Digest::ZERO,
        expiration: Timestamp::MAX,
        created_at: 0,
        access_level: AccessLevel::Public,
    };
    let genesis = make_genesis_tx(authority, geotag, 0).bind(authority, header.hash());
    let mut block = DeviceBlock::from_parts(header, Vec::new());
    block
        .append_transaction(genesis.into_transaction(), 0)
        .expect("authority genesis is well-formed");
    block
}

impl Blockchain {
    pub fn new(authority: &KeyPair, geotag: Geotag) -> Blockchain {
        Self::from_blocks(vec![authority_block(authority, geotag)])
    }

    /// Builds the index without validating anything.
    pub fn from_blocks(blocks: Vec<DeviceBlock>) -> Blockchain {
        let index = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (*b.device_pk(), i))
            .collect();
        Blockchain { blocks, index }
    }

    pub fn blocks(&self) -> &[DeviceBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> &BlockHeader {
        self.blocks.last().expect("chain has an authority block").header()
    }

    pub fn tip_hash(&self) -> Digest {
        self.blocks.last().expect("chain has an authority block").header_hash()
    }

    pub fn authority_pk(&self) -> &PublicKey {
        self.blocks[0].device_pk()
    }

    pub fn contains_header(&self, h: &Digest) -> bool {
        self.blocks.iter().rev().any(|b| b.header_hash() == *h)
    }

    fn lookup(&self, pk: &PublicKey) -> Option<usize> {
        // BTreeMap descent: charge one probe per level.
        let levels = usize::BITS - self.index.len().leading_zeros();
        meter::record_index_probes(levels.max(1) as u64);
        self.index.get(pk).copied()
    }

    /// Index lookup that is not charged to the meter, for bookkeeping that
    /// is not part of any measured operation.
    pub(crate) fn peek_block(&self, pk: &PublicKey) -> Option<&DeviceBlock> {
        self.index.get(pk).map(|&i| &self.blocks[i])
    }

    /// The block for `pk` if it is active at `now`.
    pub fn find_block(&self, pk: &PublicKey, now: Timestamp) -> Option<&DeviceBlock> {
        let i = self.lookup(pk)?;
        let b = &self.blocks[i];
        b.header().is_active_at(now).then_some(b)
    }

    pub fn find_block_mut(&mut self, pk: &PublicKey, now: Timestamp) -> Option<&mut DeviceBlock> {
        let i = self.lookup(pk)?;
        let b = &mut self.blocks[i];
        if b.header().is_active_at(now) {
            Some(b)
        } else {
            None
        }
    }

    /// Any block ever recorded for `pk`, active or not.
    pub fn block_by_key(&self, pk: &PublicKey) -> Option<&DeviceBlock> {
        self.lookup(pk).map(|i| &self.blocks[i])
    }

    pub fn block_by_key_mut(&mut self, pk: &PublicKey) -> Option<&mut DeviceBlock> {
        self.lookup(pk).map(|i| &mut self.blocks[i])
    }

    /// Keys of all device blocks (authority excluded) active at `now`.
    pub fn active_device_keys(&self, now: Timestamp) -> Vec<PublicKey> {
        self.blocks[1..]
            .iter()
            .filter(|b| b.header().is_active_at(now))
            .map(|b| *b.device_pk())
            .collect()
    }

    /// Whether a block for `header.device_pk` with an overlapping validity
    /// window is already present.
    pub fn conflicts_with(&self, header: &BlockHeader) -> bool {
        self.lookup(&header.device_pk)
            .map(|i| self.blocks[i].header().overlaps(header))
            .unwrap_or(false)
    }

    /// Validates `block` and links it after the current tip.
    pub fn push_block(&mut self, block: DeviceBlock) -> Result<(), ChainError> {
        if block.header().prev_header_hash != self.tip_hash() {
            return Err(ChainError::BrokenHeaderLink);
        }
        if self.conflicts_with(block.header()) {
            return Err(ChainError::DuplicateKey);
        }
        if !validate_block_with(&block, Execution::Serial) {
            return Err(ChainError::InvalidBlock);
        }
        self.index.insert(*block.device_pk(), self.blocks.len());
        self.blocks.push(block);
        Ok(())
    }

    /// Digest of the canonical encoding of every block in order. Two chains
    /// with equal digests are byte-identical.
    pub fn digest(&self) -> Digest {
        let mut h = Hasher::new();
        for b in &self.blocks {
            h.update(&b.to_bytes());
        }
        h.finish()
    }

    pub fn transaction_count(&self) -> usize {
        self.blocks.iter().map(DeviceBlock::len).sum()
    }

    /// One hex-encoded canonical block per line.
    pub fn export<W: Write>(&self, mut out: W) -> io::Result<()> {
        for b in &self.blocks {
            writeln!(out, "{}", hex::encode(b.to_bytes()))?;
        }
        Ok(())
    }

    pub fn import<R: BufRead>(input: R) -> Result<Blockchain, ImportError> {
        let mut blocks = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bytes = hex::decode(line).map_err(|source| ImportError::Hex { line: i + 1, source })?;
            let block =
                DeviceBlock::from_bytes(&bytes).map_err(|source| ImportError::Decode { line: i + 1, source })?;
            blocks.push(block);
        }
        if blocks.is_empty() {
            return Err(ImportError::Empty);
        }
        Ok(Blockchain::from_blocks(blocks))
    }
}

/// Header links intact, every block valid, index consistent, and no two
/// blocks for the same key with overlapping validity windows.
pub fn validate_chain(chain: &Blockchain) -> bool {
    validate_chain_with(chain, Execution::Parallel)
}

pub fn validate_chain_with(chain: &Blockchain, exec: Execution) -> bool {
    let blocks = &chain.blocks;
    if blocks.is_empty() || blocks[0].header().prev_header_hash != Digest::ZERO {
        return false;
    }
    let hashes = par::map(exec, blocks, |b| b.header().hash());
    let links_ok = (1..blocks.len()).all(|i| blocks[i].header().prev_header_hash == hashes[i - 1]);
    if !links_ok {
        return false;
    }

    let mut by_key: HashMap<&PublicKey, Vec<&BlockHeader>> = HashMap::new();
    for b in blocks {
        by_key.entry(b.device_pk()).or_default().push(b.header());
    }
    let unique = by_key.values().all(|hs| {
        hs.iter()
            .enumerate()
            .all(|(i, a)| hs[i + 1..].iter().all(|b| !a.overlaps(b)))
    });
    if !unique {
        return false;
    }

    let index_ok = chain.index.len() == by_key.len()
        && chain
            .index
            .iter()
            .all(|(pk, &i)| blocks.get(i).is_some_and(|b| b.device_pk() == pk));
    if !index_ok {
        return false;
    }

    par::all(exec, blocks, |_, b| validate_block_with(b, Execution::Serial))
}

/// Free-function form of [`Blockchain::find_block`].
pub fn find_block<'a>(chain: &'a Blockchain, pk: &PublicKey, now: Timestamp) -> Option<&'a DeviceBlock> {
    chain.find_block(pk, now)
}
