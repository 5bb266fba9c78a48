//! Genesis configuration: member roster, initial identities and chain
//! parameters, read from TOML.
//!
//! ```toml
//! attendance_threshold_percent = 75
//! fault_bound = 1
//! genesis_time = 0
//!
//! [[member]]
//! kind = "university"
//! node_public_key = "<hex>"
//!
//! [[identity]]
//! role = "controller"
//! public_key = "<hex>"
//! real_identity_hash = "<hex>"
//! member = 0            # index into the member list
//!
//! [permissions]         # optional, overrides rows of the default matrix
//! update_inventory = ["principal"]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Digest32, KeyPair, PublicKey};
use crate::ledger::Block;
use crate::membership::{self, MemberKind};
use crate::state::{
    default_grade_scale, IdentityRecord, Params, PermissionMatrix, Role, WorldState, DEFAULT_ATTENDANCE_THRESHOLD,
};
use crate::tx::TxKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberEntry {
    pub kind: MemberKind,
    pub node_public_key: PublicKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityEntry {
    pub role: Role,
    pub public_key: PublicKey,
    pub real_identity_hash: Digest32,
    /// Index into the member list.
    pub member: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenesisConfig {
    #[serde(default = "default_threshold")]
    pub attendance_threshold_percent: u32,
    #[serde(default = "default_grade_scale")]
    pub grade_scale: Vec<String>,
    /// Defaults to floor((n - 1) / 3) for the genesis roster.
    #[serde(default)]
    pub fault_bound: Option<u32>,
    #[serde(default)]
    pub genesis_time: u64,
    #[serde(default, rename = "member")]
    pub members: Vec<MemberEntry>,
    #[serde(default, rename = "identity")]
    pub identities: Vec<IdentityEntry>,
    #[serde(default)]
    pub permissions: BTreeMap<TxKind, Vec<Role>>,
    /// Optional roster file (one `kind hex-public-key` line per member),
    /// resolved relative to the config file and appended to `member`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roster_file: Option<String>,
}

fn default_threshold() -> u32 {
    DEFAULT_ATTENDANCE_THRESHOLD
}

#[derive(Debug, Error)]
pub enum GenesisError {
    #[error("roster is empty")]
    EmptyRoster,
    #[error("roster must contain exactly one university, found {0}")]
    UniversityCount(usize),
    #[error("no identity holds the controller role")]
    NoController,
    #[error("identity {index} refers to member {member}, but only {count} members exist")]
    BadMemberIndex { index: usize, member: usize, count: usize },
    #[error("duplicate member or identity key: {0}")]
    Duplicate(String),
    #[error("{n} members cannot tolerate f = {f} faults (need n >= 3f + 1)")]
    QuorumTooSmall { n: usize, f: u32 },
    #[error("attendance threshold {0}% is above 100%")]
    Threshold(u32),
    #[error("grade scale is empty")]
    EmptyGradeScale,
    #[error("genesis signer must be the university node key")]
    SignerNotUniversity,
    #[error("roster line {line}: {reason}")]
    Roster { line: usize, reason: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
}

/// Parses the line-oriented roster format: `kind hex-public-key` per line.
pub fn parse_roster(text: &str) -> Result<Vec<MemberEntry>, GenesisError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| GenesisError::Roster { line: i + 1, reason };
        let mut parts = line.split_whitespace();
        let (Some(kind), Some(key), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad("expected `kind public-key`".into()));
        };
        let kind = MemberKind::parse(kind).ok_or_else(|| bad(format!("unknown member kind {kind}")))?;
        let node_public_key = PublicKey::parse_hex(key).map_err(|e| bad(e.to_string()))?;
        out.push(MemberEntry { kind, node_public_key });
    }
    Ok(out)
}

impl GenesisConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, GenesisError> {
        toml::from_str(text).map_err(|e| GenesisError::Parse(e.to_string()))
    }

    /// Loads a config file, resolving `roster_file` relative to it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GenesisError> {
        let path = path.as_ref();
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|e| GenesisError::Io {
                path: p.display().to_string(),
                reason: e.to_string(),
            })
        };
        let mut cfg = Self::from_toml_str(&read(path)?)?;
        if let Some(roster) = cfg.roster_file.take() {
            let roster_path = path.parent().unwrap_or(Path::new(".")).join(roster);
            cfg.members.extend(parse_roster(&read(&roster_path)?)?);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("genesis config serializes")
    }

    pub fn effective_fault_bound(&self) -> u32 {
        self.fault_bound
            .unwrap_or_else(|| (self.members.len().saturating_sub(1) / 3) as u32)
    }

    pub fn params(&self) -> Params {
        let mut permissions = PermissionMatrix::default();
        if !self.permissions.is_empty() {
            let mut rows: BTreeMap<TxKind, BTreeSet<Role>> = TxKind::ALL
                .into_iter()
                .map(|k| (k, permissions.roles_for(k).collect()))
                .collect();
            for (k, roles) in &self.permissions {
                rows.insert(*k, roles.iter().copied().collect());
            }
            permissions = PermissionMatrix::from_rows(rows);
        }
        Params {
            attendance_threshold_percent: self.attendance_threshold_percent,
            grade_scale: self.grade_scale.clone(),
            fault_bound: self.effective_fault_bound(),
            permissions,
        }
    }
}

/// Initial world state described by `config`.
pub fn genesis_state(config: &GenesisConfig) -> Result<WorldState, GenesisError> {
    if config.members.is_empty() {
        return Err(GenesisError::EmptyRoster);
    }
    let universities = config
        .members
        .iter()
        .filter(|m| m.kind == MemberKind::University)
        .count();
    if universities != 1 {
        return Err(GenesisError::UniversityCount(universities));
    }
    if config.attendance_threshold_percent > 100 {
        return Err(GenesisError::Threshold(config.attendance_threshold_percent));
    }
    if config.grade_scale.is_empty() {
        return Err(GenesisError::EmptyGradeScale);
    }
    let f = config.effective_fault_bound();
    if config.members.len() < 3 * f as usize + 1 {
        return Err(GenesisError::QuorumTooSmall {
            n: config.members.len(),
            f,
        });
    }
    if !config.identities.iter().any(|i| i.role == Role::Controller) {
        return Err(GenesisError::NoController);
    }

    let mut state = WorldState::new(config.params());
    let mut member_addrs = Vec::with_capacity(config.members.len());
    for m in &config.members {
        let addr = membership::insert_member(&mut state, m.kind, m.node_public_key, 0)
            .map_err(|e| GenesisError::Duplicate(e.to_string()))?;
        member_addrs.push(addr);
    }
    for (index, id) in config.identities.iter().enumerate() {
        let member = *member_addrs.get(id.member).ok_or(GenesisError::BadMemberIndex {
            index,
            member: id.member,
            count: member_addrs.len(),
        })?;
        let address = id.public_key.address();
        if state.identities.contains_key(&address) {
            return Err(GenesisError::Duplicate(address.to_string()));
        }
        state.identities.insert(
            address,
            IdentityRecord {
                role: id.role,
                real_identity_hash: id.real_identity_hash,
                public_key: id.public_key,
                member,
            },
        );
    }
    Ok(state)
}

/// Genesis block: height 0, zero hash pointer, no transactions, sealed by the
/// university node key. Deterministic in (config, signer).
pub fn genesis(config: &GenesisConfig, signer: &KeyPair) -> Result<(Block, WorldState), GenesisError> {
    let state = genesis_state(config)?;
    let uni = membership::university(&state).expect("validated above");
    if uni.node_public_key != signer.public_key() {
        return Err(GenesisError::SignerNotUniversity);
    }
    let block = Block::genesis(state.state_root(), config.genesis_time, signer);
    Ok((block, state))
}
