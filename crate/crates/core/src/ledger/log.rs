//! Append-only block log: a sequence of records, each a 4-byte big-endian
//! length followed by the canonical block encoding.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::codec::{Decode, Encode};

use super::block::Block;
use super::chain::{verify_blocks, BlockError, Chain, ChainVerdict};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("record {index} is malformed: {reason}")]
    Malformed { index: u64, reason: String },
    #[error("block {height} rejected: {source}")]
    Invalid { height: u64, source: BlockError },
}

/// Splits log bytes into blocks. On failure returns the blocks decoded so far
/// and the index of the first bad record.
pub fn decode_log(bytes: &[u8]) -> Result<Vec<Block>, (Vec<Block>, u64, String)> {
    let mut blocks = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let index = blocks.len() as u64;
        let Some(len_bytes) = bytes.get(pos..pos + 4) else {
            return Err((blocks, index, "truncated record length".into()));
        };
        let len = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
        pos += 4;
        let Some(body) = bytes.get(pos..pos.saturating_add(len)) else {
            return Err((blocks, index, "record length exceeds log".into()));
        };
        match Block::decode(body) {
            Ok(b) => blocks.push(b),
            Err(e) => return Err((blocks, index, e.to_string())),
        }
        pos += len;
    }
    Ok(blocks)
}

pub fn encode_record(block: &Block, out: &mut Vec<u8>) {
    let enc = block.encode();
    out.extend_from_slice(&(enc.len() as u32).to_be_bytes());
    out.extend_from_slice(&enc);
}

pub fn encode_log(blocks: &[Block]) -> Vec<u8> {
    let mut out = Vec::new();
    for b in blocks {
        encode_record(b, &mut out);
    }
    out
}

/// Full verification of raw log bytes: decoding plus every chain rule.
pub fn verify_log_bytes(bytes: &[u8]) -> ChainVerdict {
    match decode_log(bytes) {
        Ok(blocks) if blocks.is_empty() => ChainVerdict::Invalid {
            height: 0,
            reason: "log holds no genesis block".into(),
        },
        Ok(blocks) => verify_blocks(&blocks),
        Err((prefix, index, reason)) => match verify_blocks(&prefix) {
            ChainVerdict::Ok { .. } => ChainVerdict::Invalid {
                height: index,
                reason,
            },
            bad => bad,
        },
    }
}

/// File-backed append-only block log with an in-memory offset index.
#[derive(Debug)]
pub struct BlockLog {
    path: PathBuf,
    file: File,
    offsets: Vec<u64>,
    len: u64,
}

impl BlockLog {
    fn io(path: &Path) -> impl FnOnce(io::Error) -> LogError + '_ {
        move |source| LogError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Creates a new log containing only `genesis`. Fails if the file exists.
    pub fn create(path: impl AsRef<Path>, genesis: &Block) -> Result<(Self, Chain), LogError> {
        let path = path.as_ref();
        let chain = Chain::from_genesis(genesis.clone())
            .map_err(|source| LogError::Invalid { height: 0, source })?;
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(path)
            .map_err(Self::io(path))?;
        let mut log = BlockLog {
            path: path.to_path_buf(),
            file,
            offsets: Vec::new(),
            len: 0,
        };
        log.write_record(genesis)?;
        Ok((log, chain))
    }

    /// Opens an existing log, replaying and verifying every block.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Chain), LogError> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(Self::io(path))?;
        let blocks = decode_log(&bytes).map_err(|(_, index, reason)| LogError::Malformed { index, reason })?;
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut off = 0u64;
        for b in &blocks {
            offsets.push(off);
            off += 4 + b.encode().len() as u64;
        }
        let chain = Chain::from_blocks(blocks)
            .map_err(|(height, source)| LogError::Invalid { height, source })?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(Self::io(path))?;
        Ok((
            BlockLog {
                path: path.to_path_buf(),
                file,
                offsets,
                len: off,
            },
            chain,
        ))
    }

    /// Validates `block` against `chain`, then persists and appends it.
    pub fn append(&mut self, chain: &mut Chain, block: Block) -> Result<(), LogError> {
        let height = block.header.height;
        super::chain::check_block(Some(&chain.tip().header), &block)
            .map_err(|source| LogError::Invalid { height, source })?;
        self.write_record(&block)?;
        chain
            .append(block)
            .map_err(|source| LogError::Invalid { height, source })
    }

    fn write_record(&mut self, block: &Block) -> Result<(), LogError> {
        let mut rec = Vec::new();
        encode_record(block, &mut rec);
        self.file.write_all(&rec).map_err(Self::io(&self.path))?;
        self.file.sync_data().map_err(Self::io(&self.path))?;
        self.offsets.push(self.len);
        self.len += rec.len() as u64;
        Ok(())
    }

    /// Byte offset of the record for `height`.
    pub fn offset_of(&self, height: u64) -> Option<u64> {
        self.offsets.get(usize::try_from(height).ok()?).copied()
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Writes a complete chain to a fresh log file.
pub fn write_chain(path: impl AsRef<Path>, chain: &Chain) -> Result<(), LogError> {
    let path = path.as_ref();
    std::fs::write(path, encode_log(chain.blocks())).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })
}
