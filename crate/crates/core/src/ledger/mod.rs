//! The appendable block structure: header-linked device blocks, each with
//! its own hash-chained, signed transaction ledger.

mod block;
mod chain;
mod types;

pub use block::{
    append_transaction, create_block, validate_block, validate_block_with, AppendError, DeviceBlock, LinkStatus,
    UnboundBlock,
};
pub use chain::{authority_block, find_block, validate_chain, validate_chain_with, Blockchain, ChainError, ImportError};
pub use types::{
    header_hash, make_genesis_tx, make_genesis_tx_with_access, AccessLevel, BlockHeader, Geotag, GenesisTransaction,
    Timestamp, Transaction,
};
