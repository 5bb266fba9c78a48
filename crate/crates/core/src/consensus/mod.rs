//! PBFT ordering of blocks among the member replicas.
//!
//! One consensus instance orders one block. The leader of view `v` is
//! replica `v mod n`; a block commits once a quorum of replicas has sent
//! matching Commits for it. Leader failure is handled by view changes driven by
//! simulated-clock timeouts, and replicas that fall behind catch up by
//! fetching certified blocks from peers.

mod message;
mod pool;
mod replica;

use thiserror::Error;

pub use message::{CertifiedBlock, Payload, PreparedProof, ReplicaId, SignedMessage};
pub use pool::Mempool;
pub use replica::{Evidence, Outbound, Replica, ReplicaConfig, Status, Step, Target};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConsensusError {
    #[error("a replica set needs at least one replica")]
    NoReplicas,
    #[error("{n} replicas cannot tolerate f = {f} faults (need n >= 3f + 1)")]
    QuorumTooSmall { n: usize, f: usize },
    #[error("node key is not in the replica set")]
    NotAReplica,
    #[error("genesis block does not match the genesis state")]
    GenesisMismatch,
}

/// Replica count, fault bound and quorum size. The quorum is
/// `ceil((n + f + 1) / 2)`: any two quorums share an honest replica, and the
/// `n - f` honest replicas form one. It equals 2f+1 when n = 3f+1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuorumConfig {
    pub n: usize,
    pub f: usize,
    pub quorum: usize,
}

impl QuorumConfig {
    /// Largest tolerable fault bound for `n`: f = floor((n - 1) / 3).
    pub fn for_n(n: usize) -> Result<Self, ConsensusError> {
        if n == 0 {
            return Err(ConsensusError::NoReplicas);
        }
        Self::new(n, (n - 1) / 3)
    }

    pub fn new(n: usize, f: usize) -> Result<Self, ConsensusError> {
        if n == 0 {
            return Err(ConsensusError::NoReplicas);
        }
        if n < 3 * f + 1 {
            return Err(ConsensusError::QuorumTooSmall { n, f });
        }
        Ok(QuorumConfig {
            n,
            f,
            quorum: (n + f + 2) / 2,
        })
    }
}

/// Round-robin leader rotation.
pub fn leader_of(view: u64, n: usize) -> ReplicaId {
    assert!(n > 0, "leader_of needs a non-empty replica set");
    (view % n as u64) as ReplicaId
}
