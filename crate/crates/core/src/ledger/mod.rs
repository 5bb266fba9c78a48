//! Hash-pointer chain of sealed blocks and its on-disk log.

mod block;
mod chain;
mod log;
pub mod merkle;

pub use block::{Block, BlockHeader, Seal};
pub use chain::{check_block, verify_blocks, BlockError, Chain, ChainVerdict};
pub use log::{decode_log, encode_log, verify_log_bytes, write_chain, BlockLog, LogError};
pub use merkle::{merkle_proof, merkle_root, verify_merkle_proof, MerkleError, MerkleProof};
