//! Binary Merkle trees over 32-byte leaves.
//!
//! Conventions: an empty list has the zero digest as root, a single leaf is
//! its own root, and an odd node at any level is paired with itself.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Encode;
use crate::crypto::{hash, hash_concat, Digest32};
use crate::tx::Transaction;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MerkleError {
    #[error("leaf index {index} out of bounds for {len} leaves")]
    IndexOutOfBounds { index: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// One level of an inclusion proof: the sibling digest and which side it sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    pub sibling: Digest32,
    pub side: Side,
}

pub type MerkleProof = Vec<ProofStep>;

fn parent(left: &Digest32, right: &Digest32) -> Digest32 {
    hash_concat(&[&left.0, &right.0])
}

fn next_level(level: &[Digest32]) -> Vec<Digest32> {
    level
        .chunks(2)
        .map(|pair| match pair {
            [l, r] => parent(l, r),
            [l] => parent(l, l),
            _ => unreachable!(),
        })
        .collect()
}

pub fn root_of_leaves(leaves: &[Digest32]) -> Digest32 {
    match leaves {
        [] => Digest32::ZERO,
        [single] => *single,
        _ => {
            let mut level = next_level(leaves);
            while level.len() > 1 {
                level = next_level(&level);
            }
            level[0]
        }
    }
}

pub fn tx_leaf(tx: &Transaction) -> Digest32 {
    hash(&tx.encode())
}

pub fn merkle_root(transactions: &[Transaction]) -> Digest32 {
    let leaves: Vec<Digest32> = transactions.iter().map(tx_leaf).collect();
    root_of_leaves(&leaves)
}

pub fn proof_for_leaves(leaves: &[Digest32], index: usize) -> Result<MerkleProof, MerkleError> {
    if index >= leaves.len() {
        return Err(MerkleError::IndexOutOfBounds {
            index,
            len: leaves.len(),
        });
    }
    let mut proof = Vec::new();
    let mut level = leaves.to_vec();
    let mut idx = index;
    while level.len() > 1 {
        let step = if idx % 2 == 0 {
            let sibling = level.get(idx + 1).copied().unwrap_or(level[idx]);
            ProofStep {
                sibling,
                side: Side::Right,
            }
        } else {
            ProofStep {
                sibling: level[idx - 1],
                side: Side::Left,
            }
        };
        proof.push(step);
        level = next_level(&level);
        idx /= 2;
    }
    Ok(proof)
}

pub fn merkle_proof(transactions: &[Transaction], index: usize) -> Result<MerkleProof, MerkleError> {
    let leaves: Vec<Digest32> = transactions.iter().map(tx_leaf).collect();
    proof_for_leaves(&leaves, index)
}

pub fn verify_merkle_proof(root: &Digest32, leaf: &Digest32, proof: &[ProofStep]) -> bool {
    let computed = proof.iter().fold(*leaf, |acc, step| match step.side {
        Side::Right => parent(&acc, &step.sibling),
        Side::Left => parent(&step.sibling, &acc),
    });
    computed == *root
}
