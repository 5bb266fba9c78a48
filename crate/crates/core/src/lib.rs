//! Permissioned ledger for administering university examinations.
//!
//! Layers, bottom up:
//! - [`crypto`] and [`codec`]: SHA-256, Ed25519 identities, canonical encoding.
//! - [`ledger`]: sealed blocks linked by hash pointers, Merkle roots, block log.
//! - [`state`] and [`membership`]: the contract engine over the world state.
//! - [`consensus`]: PBFT replicas ordering blocks.
//! - [`netsim`]: deterministic simulated network and scenario runner.
//! - [`iot`]: simulated devices feeding attendance, inventory and asset data.

pub mod campus;
pub mod codec;
pub mod consensus;
pub mod crypto;
pub mod genesis;
pub mod iot;
pub mod ledger;
pub mod membership;
pub mod netsim;
pub mod replay;
pub mod state;
pub mod tx;
pub mod workload;
