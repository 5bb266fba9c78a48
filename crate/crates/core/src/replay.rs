//! Block execution and full-chain replay.

use thiserror::Error;

use crate::crypto::Digest32;
use crate::genesis::{genesis_state, GenesisConfig, GenesisError};
use crate::ledger::{check_block, Block, BlockError};
use crate::state::{BlockContext, Executor, TxError, WorldState};
use crate::tx::Transaction;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("transaction {index} rejected: {source}")]
    Tx { index: usize, source: TxError },
    #[error("state root mismatch: header says {expected}, execution gives {found}")]
    StateRoot { expected: Digest32, found: Digest32 },
}

/// Executes `block` on a copy of `state` and checks the header's state root.
/// Every transaction must apply; a block with a failing transaction is invalid.
pub fn execute_block(state: &WorldState, executor: &mut Executor, block: &Block) -> Result<WorldState, ExecError> {
    let mut next = state.clone();
    let ctx = BlockContext {
        height: block.header.height,
        timestamp: block.header.timestamp,
    };
    for (index, tx) in block.transactions.iter().enumerate() {
        executor
            .apply(&mut next, tx, &ctx)
            .map_err(|source| ExecError::Tx { index, source })?;
    }
    let found = next.state_root();
    if found != block.header.state_root {
        return Err(ExecError::StateRoot {
            expected: block.header.state_root,
            found,
        });
    }
    Ok(next)
}

/// Applies candidates in order on a copy of `state`, keeping those that
/// succeed, up to `max` transactions. Returns the kept set and the post-state.
pub fn select_valid<'a>(
    state: &WorldState,
    executor: &mut Executor,
    candidates: impl IntoIterator<Item = &'a Transaction>,
    ctx: &BlockContext,
    max: usize,
) -> (Vec<Transaction>, WorldState) {
    let mut scratch = state.clone();
    let mut kept = Vec::new();
    for tx in candidates {
        if kept.len() >= max {
            break;
        }
        if executor.apply(&mut scratch, tx, ctx).is_ok() {
            kept.push(tx.clone());
        }
    }
    (kept, scratch)
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Genesis(#[from] GenesisError),
    #[error("genesis block does not match the genesis config")]
    GenesisMismatch,
    #[error("block {height}: {source}")]
    Block { height: u64, source: BlockError },
    #[error("block {height}: {source}")]
    Exec { height: u64, source: ExecError },
    #[error("chain is empty")]
    Empty,
}

impl ReplayError {
    pub fn height(&self) -> Option<u64> {
        match self {
            ReplayError::Block { height, .. } | ReplayError::Exec { height, .. } => Some(*height),
            ReplayError::GenesisMismatch | ReplayError::Empty => Some(0),
            ReplayError::Genesis(_) => None,
        }
    }
}

/// Rebuilds the world state from genesis by re-verifying and re-executing
/// every block.
pub fn replay_chain(config: &GenesisConfig, blocks: &[Block]) -> Result<WorldState, ReplayError> {
    let mut state = genesis_state(config)?;
    let genesis = blocks.first().ok_or(ReplayError::Empty)?;
    check_block(None, genesis).map_err(|source| ReplayError::Block { height: 0, source })?;
    if genesis.header.state_root != state.state_root() || genesis.header.timestamp != config.genesis_time {
        return Err(ReplayError::GenesisMismatch);
    }
    let mut executor = Executor::default();
    for pair in blocks.windows(2) {
        let (parent, block) = (&pair[0], &pair[1]);
        let height = block.header.height;
        check_block(Some(&parent.header), block).map_err(|source| ReplayError::Block { height, source })?;
        state = execute_block(&state, &mut executor, block).map_err(|source| ReplayError::Exec { height, source })?;
    }
    Ok(state)
}

/// Applies bare transaction batches (one per block, with its timestamp) to the
/// genesis state, without any block structure.
pub fn replay_transactions<'a>(
    config: &GenesisConfig,
    batches: impl IntoIterator<Item = (u64, &'a [Transaction])>,
) -> Result<WorldState, ReplayError> {
    let mut state = genesis_state(config)?;
    let mut executor = Executor::default();
    for (i, (timestamp, txs)) in batches.into_iter().enumerate() {
        let height = i as u64 + 1;
        let ctx = BlockContext { height, timestamp };
        for (index, tx) in txs.iter().enumerate() {
            executor.apply(&mut state, tx, &ctx).map_err(|source| ReplayError::Exec {
                height,
                source: ExecError::Tx { index, source },
            })?;
        }
    }
    Ok(state)
}
