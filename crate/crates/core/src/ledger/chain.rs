use serde::Serialize;
use thiserror::Error;

use crate::crypto::Digest32;

use super::block::{Block, BlockHeader};
use super::merkle::merkle_root;

/// Why a block cannot follow its parent. Each variant has a stable code.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockError {
    #[error("hash pointer mismatch: expected {expected}, found {found}")]
    HashPointerMismatch { expected: Digest32, found: Digest32 },
    #[error("height gap: expected {expected}, found {found}")]
    HeightGap { expected: u64, found: u64 },
    #[error("transaction merkle root mismatch")]
    MerkleMismatch,
    #[error("seal does not verify for the proposer")]
    BadSeal,
    #[error("non-genesis block carries no transactions")]
    EmptyBlock,
    #[error("genesis block must not carry transactions")]
    GenesisWithTransactions,
    #[error("timestamp {found} precedes parent timestamp {parent}")]
    TimestampRegression { parent: u64, found: u64 },
    #[error("block could not be decoded: {0}")]
    Malformed(String),
}

impl BlockError {
    pub fn code(&self) -> &'static str {
        match self {
            BlockError::HashPointerMismatch { .. } => "hash_pointer_mismatch",
            BlockError::HeightGap { .. } => "height_gap",
            BlockError::MerkleMismatch => "merkle_mismatch",
            BlockError::BadSeal => "bad_seal",
            BlockError::EmptyBlock => "empty_block",
            BlockError::GenesisWithTransactions => "genesis_with_transactions",
            BlockError::TimestampRegression { .. } => "timestamp_regression",
            BlockError::Malformed(_) => "malformed",
        }
    }
}

/// Structural checks for `block` as the successor of `parent` (`None` for genesis).
pub fn check_block(parent: Option<&BlockHeader>, block: &Block) -> Result<(), BlockError> {
    let h = &block.header;
    match parent {
        None => {
            if h.height != 0 {
                return Err(BlockError::HeightGap {
                    expected: 0,
                    found: h.height,
                });
            }
            if h.prev_hash != Digest32::ZERO {
                return Err(BlockError::HashPointerMismatch {
                    expected: Digest32::ZERO,
                    found: h.prev_hash,
                });
            }
            if !block.transactions.is_empty() {
                return Err(BlockError::GenesisWithTransactions);
            }
        }
        Some(p) => {
            let expected = p.hash();
            if h.prev_hash != expected {
                return Err(BlockError::HashPointerMismatch {
                    expected,
                    found: h.prev_hash,
                });
            }
            if h.height != p.height + 1 {
                return Err(BlockError::HeightGap {
                    expected: p.height + 1,
                    found: h.height,
                });
            }
            if block.transactions.is_empty() {
                return Err(BlockError::EmptyBlock);
            }
            if h.timestamp < p.timestamp {
                return Err(BlockError::TimestampRegression {
                    parent: p.timestamp,
                    found: h.timestamp,
                });
            }
        }
    }
    if merkle_root(&block.transactions) != h.tx_merkle_root {
        return Err(BlockError::MerkleMismatch);
    }
    if !block.seal.verify(h) {
        return Err(BlockError::BadSeal);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainVerdict {
    Ok { height: Option<u64> },
    Invalid { height: u64, reason: String },
}

impl ChainVerdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainVerdict::Ok { .. })
    }

    pub fn first_invalid_height(&self) -> Option<u64> {
        match self {
            ChainVerdict::Ok { .. } => None,
            ChainVerdict::Invalid { height, .. } => Some(*height),
        }
    }
}

/// Verifies every pointer, height, merkle root and seal; reports the lowest
/// failing position.
pub fn verify_blocks(blocks: &[Block]) -> ChainVerdict {
    let mut parent: Option<&BlockHeader> = None;
    for (i, block) in blocks.iter().enumerate() {
        if let Err(e) = check_block(parent, block) {
            return ChainVerdict::Invalid {
                height: i as u64,
                reason: e.to_string(),
            };
        }
        parent = Some(&block.header);
    }
    ChainVerdict::Ok {
        height: blocks.last().map(|b| b.header.height),
    }
}

/// Append-only sequence of verified blocks. There is no API to alter or drop
/// a block once appended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
}

impl Chain {
    pub fn from_genesis(genesis: Block) -> Result<Self, BlockError> {
        check_block(None, &genesis)?;
        Ok(Self {
            blocks: vec![genesis],
        })
    }

    /// Rebuilds a chain from stored blocks, re-running every check.
    pub fn from_blocks(blocks: Vec<Block>) -> Result<Self, (u64, BlockError)> {
        let mut iter = blocks.into_iter();
        let genesis = iter
            .next()
            .ok_or((0, BlockError::Malformed("no genesis block".into())))?;
        let mut chain = Chain::from_genesis(genesis).map_err(|e| (0, e))?;
        for (i, b) in iter.enumerate() {
            chain.append(b).map_err(|e| (i as u64 + 1, e))?;
        }
        Ok(chain)
    }

    pub fn append(&mut self, block: Block) -> Result<(), BlockError> {
        check_block(Some(&self.tip().header), &block)?;
        self.blocks.push(block);
        Ok(())
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("chain always holds genesis")
    }

    pub fn height(&self) -> u64 {
        self.tip().header.height
    }

    pub fn genesis(&self) -> &Block {
        &self.blocks[0]
    }

    pub fn get(&self, height: u64) -> Option<&Block> {
        self.blocks.get(usize::try_from(height).ok()?)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn verify(&self) -> ChainVerdict {
        verify_blocks(&self.blocks)
    }
}
