//! Data-home layout, key loading and the single-node dev-commit path.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use examchain_core::campus::{labeled_key, node_key};
use examchain_core::crypto::{parse_seed_lines, Address, KeyPair, PublicKey};
use examchain_core::genesis::GenesisConfig;
use examchain_core::ledger::{BlockLog, Block, Chain};
use examchain_core::membership::replica_set;
use examchain_core::replay::{execute_block, replay_chain};
use examchain_core::state::{Executor, WorldState};
use examchain_core::tx::{Transaction, TxBody};

use crate::output::{invalid, usage};

pub const CONFIG_FILE: &str = "genesis.toml";
pub const CHAIN_FILE: &str = "chain.log";

/// Where a command reads and writes its files.
#[derive(Debug, Clone)]
pub struct Home {
    pub config: PathBuf,
    pub chain: PathBuf,
}

impl Home {
    pub fn new(dir: PathBuf, config: Option<PathBuf>, chain: Option<PathBuf>) -> Self {
        Home {
            config: config.unwrap_or_else(|| dir.join(CONFIG_FILE)),
            chain: chain.unwrap_or_else(|| dir.join(CHAIN_FILE)),
        }
    }

    pub fn load_config(&self) -> Result<GenesisConfig> {
        GenesisConfig::load(&self.config).map_err(|e| usage(format!("genesis config: {e}")))
    }

    /// Opens the block log and replays it into the current state.
    pub fn open(&self) -> Result<Node> {
        let config = self.load_config()?;
        if !self.chain.exists() {
            return Err(usage(format!(
                "no chain at {}; run `examchain genesis` first",
                self.chain.display()
            )));
        }
        let (log, chain) = BlockLog::open(&self.chain).map_err(|e| invalid(format!("block log: {e}")))?;
        let state = replay_chain(&config, chain.blocks()).map_err(|e| invalid(format!("chain does not replay: {e}")))?;
        Ok(Node { log, chain, state })
    }
}

pub struct Node {
    pub log: BlockLog,
    pub chain: Chain,
    pub state: WorldState,
}

impl Node {
    /// Executes one transaction and, if it applies, seals it into the next
    /// block with `sealer`. The log is untouched on rejection.
    pub fn commit(&mut self, tx: Transaction, sealer: &KeyPair, timestamp: Option<u64>) -> Result<&Block> {
        let is_member = replica_set(&self.state)
            .iter()
            .any(|m| m.node_public_key == sealer.public_key());
        if !is_member {
            return Err(invalid(format!("sealing key {} is not a member node", sealer.address())));
        }
        let parent = self.chain.tip().header.clone();
        let timestamp = timestamp.unwrap_or(parent.timestamp + 1);
        if timestamp < parent.timestamp {
            return Err(usage(format!("timestamp {timestamp} precedes the tip's {}", parent.timestamp)));
        }
        let mut executor = Executor::default();
        let mut post = self.state.clone();
        let ctx = examchain_core::state::BlockContext {
            height: parent.height + 1,
            timestamp,
        };
        executor
            .apply(&mut post, &tx, &ctx)
            .map_err(|e| invalid(format!("transaction rejected ({}): {e}", e.code())))?;
        let block = Block::build(&parent, vec![tx], post.state_root(), timestamp, sealer);
        // the block must pass the same checks a replaying verifier runs
        let checked = execute_block(&self.state, &mut executor, &block).context("sealed block fails re-execution")?;
        self.log
            .append(&mut self.chain, block)
            .context("appending to the block log")?;
        self.state = checked;
        Ok(self.chain.tip())
    }

    /// Signs `body` from `key` with the sender's next on-chain nonce.
    pub fn sign(&self, key: &KeyPair, body: TxBody) -> Transaction {
        Transaction::signed(key, self.state.next_nonce(&key.address()), body)
    }
}

/// First seed of a seed file.
pub fn read_key_file(path: &Path) -> Result<KeyPair> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let seeds = parse_seed_lines(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let seed = seeds
        .first()
        .ok_or_else(|| usage(format!("{}: no seed line", path.display())))?;
    Ok(KeyPair::from_seed(seed))
}

/// Signing key from `--key FILE` or `--as LABEL`; the label form names the
/// deterministic development identities.
pub fn signer(file: Option<&Path>, label: Option<&str>) -> Result<KeyPair> {
    match (file, label) {
        (Some(path), _) => read_key_file(path),
        (None, Some(label)) => Ok(labeled_key(label)),
        (None, None) => Err(usage("a signing key is required: pass --key FILE or --as LABEL")),
    }
}

/// Sealing key: `--node-key FILE`, else the development university node.
pub fn sealer(file: Option<&Path>) -> Result<KeyPair> {
    file.map_or_else(|| Ok(node_key(0)), read_key_file)
}

/// Accepts 40 hex digits or `label:NAME` for a development identity.
pub fn parse_address(s: &str) -> Result<Address, String> {
    match s.strip_prefix("label:") {
        Some(label) => Ok(labeled_key(label).address()),
        None => Address::from_hex(s).map_err(|e| e.to_string()),
    }
}

/// Accepts 64 hex digits or `label:NAME`.
pub fn parse_public_key(s: &str) -> Result<PublicKey, String> {
    match s.strip_prefix("label:") {
        Some(label) => Ok(labeled_key(label).public_key()),
        None => PublicKey::parse_hex(s).map_err(|e| e.to_string()),
    }
}
