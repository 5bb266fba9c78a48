//! Deterministic named identities and transaction signing helpers.
//!
//! Keys are derived from labels through [`seed_from_label`], so a scenario
//! that names "teacher-2" gets the same key on every run. Production
//! identities come from [`KeyPair::generate`] instead.

use std::collections::HashMap;

use crate::crypto::{hash, seed_from_label, Address, KeyPair};
use crate::genesis::{GenesisConfig, IdentityEntry, MemberEntry};
use crate::membership::MemberKind;
use crate::state::Role;
use crate::tx::{Transaction, TxBody};

pub fn labeled_key(label: &str) -> KeyPair {
    KeyPair::from_seed(&seed_from_label(label))
}

/// Node key of member `i`; member 0 is the university.
pub fn node_key(i: usize) -> KeyPair {
    labeled_key(&format!("node-{i}"))
}

pub fn controller_key() -> KeyPair {
    labeled_key("controller")
}

/// Genesis with `n` members (university first, then affiliated colleges) and
/// a single controller at the university.
pub fn genesis_config(n: usize) -> GenesisConfig {
    let members = (0..n)
        .map(|i| MemberEntry {
            kind: if i == 0 {
                MemberKind::University
            } else {
                MemberKind::AffiliatedCollege
            },
            node_public_key: node_key(i).public_key(),
        })
        .collect();
    GenesisConfig {
        attendance_threshold_percent: crate::state::DEFAULT_ATTENDANCE_THRESHOLD,
        grade_scale: crate::state::default_grade_scale(),
        fault_bound: None,
        genesis_time: 0,
        members,
        identities: vec![IdentityEntry {
            role: Role::Controller,
            public_key: controller_key().public_key(),
            real_identity_hash: hash(b"controller of examinations"),
            member: 0,
        }],
        permissions: Default::default(),
        roster_file: None,
    }
}

/// Signs transactions with per-sender sequential nonces.
#[derive(Debug, Default, Clone)]
pub struct TxFactory {
    nonces: HashMap<Address, u64>,
}

impl TxFactory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sign(&mut self, key: &KeyPair, body: TxBody) -> Transaction {
        let n = self.nonces.entry(key.address()).or_insert(0);
        let tx = Transaction::signed(key, *n, body);
        *n += 1;
        tx
    }

    /// Next nonce for `address` without consuming it.
    pub fn peek(&self, address: &Address) -> u64 {
        self.nonces.get(address).copied().unwrap_or(0)
    }

    pub fn set_next(&mut self, address: Address, nonce: u64) {
        self.nonces.insert(address, nonce);
    }
}

/// Registration body for a labeled identity at member `member`.
pub fn register_body(key: &KeyPair, role: Role, member: Address, real_identity: &str) -> TxBody {
    TxBody::RegisterIdentity {
        real_identity_hash: hash(real_identity.as_bytes()),
        public_key: key.public_key(),
        role,
        member,
    }
}
