//! Membership service: which institutions (and their nodes and devices) are
//! part of the private network.
//!
//! Members are admitted and revoked by on-chain transactions from a
//! controller affiliated with the university, so the roster is auditable.
//! The replica set for consensus is the member list in admission order and
//! only changes when a block commits.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{put_u64, put_u8, CodecError, Decode, Encode, Reader};
use crate::crypto::{Address, PublicKey};
use crate::state::{Role, WorldState};
use crate::tx::DeviceKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberKind {
    University,
    AffiliatedCollege,
    AutonomousCollege,
}

impl MemberKind {
    pub fn name(self) -> &'static str {
        match self {
            MemberKind::University => "university",
            MemberKind::AffiliatedCollege => "affiliated_college",
            MemberKind::AutonomousCollege => "autonomous_college",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            MemberKind::University,
            MemberKind::AffiliatedCollege,
            MemberKind::AutonomousCollege,
        ]
        .into_iter()
        .find(|k| k.name() == s)
    }
}

impl fmt::Display for MemberKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Encode for MemberKind {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u8(out, *self as u8);
    }
}

impl Decode for MemberKind {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            0 => Ok(MemberKind::University),
            1 => Ok(MemberKind::AffiliatedCollege),
            2 => Ok(MemberKind::AutonomousCollege),
            tag => Err(CodecError::InvalidTag { what: "member kind", tag }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub member_address: Address,
    pub member_kind: MemberKind,
    pub node_public_key: PublicKey,
    pub admitted_at_height: u64,
    /// Admission sequence number; orders the replica set.
    pub ordinal: u64,
}

impl Encode for MemberRecord {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.member_address.encode_to(out);
        self.member_kind.encode_to(out);
        self.node_public_key.encode_to(out);
        put_u64(out, self.admitted_at_height);
        put_u64(out, self.ordinal);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub device_kind: DeviceKind,
    pub public_key: PublicKey,
    pub member: Address,
    pub registered_at_height: u64,
}

impl Encode for DeviceRecord {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u8(out, self.device_kind as u8);
        self.public_key.encode_to(out);
        self.member.encode_to(out);
        put_u64(out, self.registered_at_height);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MembershipError {
    #[error("sender is not a controller of the university")]
    NonUniversitySender,
    #[error("member {0} already admitted")]
    DuplicateMember(Address),
    #[error("the network already has a university member")]
    SecondUniversity,
    #[error("unknown member {0}")]
    UnknownMember(Address),
    #[error("the university member cannot be revoked")]
    RevokeUniversity,
    #[error("revoking leaves {remaining} replicas, below 3f+1 = {required}")]
    WouldBreakQuorum { remaining: usize, required: usize },
    #[error("device {0} already registered")]
    DuplicateDevice(String),
}

impl MembershipError {
    pub fn code(&self) -> &'static str {
        match self {
            MembershipError::NonUniversitySender => "non_university_sender",
            MembershipError::DuplicateMember(_) => "duplicate_member",
            MembershipError::SecondUniversity => "second_university",
            MembershipError::UnknownMember(_) => "unknown_member",
            MembershipError::RevokeUniversity => "revoke_university",
            MembershipError::WouldBreakQuorum { .. } => "would_break_quorum",
            MembershipError::DuplicateDevice(_) => "duplicate_device",
        }
    }
}

pub fn university(state: &WorldState) -> Option<&MemberRecord> {
    state
        .members
        .values()
        .find(|m| m.member_kind == MemberKind::University)
}

/// Replica set in admission order; index in this list is the replica id.
pub fn replica_set(state: &WorldState) -> Vec<MemberRecord> {
    let mut v: Vec<MemberRecord> = state.members.values().cloned().collect();
    v.sort_by_key(|m| m.ordinal);
    v
}

fn require_university_controller(state: &WorldState, sender: &Address) -> Result<(), MembershipError> {
    let uni = university(state).map(|u| u.member_address);
    match state.identities.get(sender) {
        Some(id) if id.role == Role::Controller && Some(id.member) == uni => Ok(()),
        _ => Err(MembershipError::NonUniversitySender),
    }
}

/// Inserts a member without authorization checks. Used by genesis and by
/// [`admit_member`] after its checks pass.
pub(crate) fn insert_member(
    state: &mut WorldState,
    kind: MemberKind,
    node_public_key: PublicKey,
    height: u64,
) -> Result<Address, MembershipError> {
    let address = node_public_key.address();
    if state.members.contains_key(&address) {
        return Err(MembershipError::DuplicateMember(address));
    }
    if kind == MemberKind::University && university(state).is_some() {
        return Err(MembershipError::SecondUniversity);
    }
    let ordinal = state.next_member_ordinal;
    state.next_member_ordinal += 1;
    state.members.insert(
        address,
        MemberRecord {
            member_address: address,
            member_kind: kind,
            node_public_key,
            admitted_at_height: height,
            ordinal,
        },
    );
    Ok(address)
}

pub fn admit_member(
    state: &mut WorldState,
    sender: &Address,
    kind: MemberKind,
    node_public_key: PublicKey,
    height: u64,
) -> Result<Address, MembershipError> {
    require_university_controller(state, sender)?;
    insert_member(state, kind, node_public_key, height)
}

pub fn revoke_member(state: &mut WorldState, sender: &Address, member: &Address) -> Result<(), MembershipError> {
    require_university_controller(state, sender)?;
    let rec = state
        .members
        .get(member)
        .ok_or(MembershipError::UnknownMember(*member))?;
    if rec.member_kind == MemberKind::University {
        return Err(MembershipError::RevokeUniversity);
    }
    let remaining = state.members.len() - 1;
    let required = 3 * state.params.fault_bound as usize + 1;
    if remaining < required {
        return Err(MembershipError::WouldBreakQuorum { remaining, required });
    }
    state.members.remove(member);
    Ok(())
}

pub fn register_device(
    state: &mut WorldState,
    sender: &Address,
    device_id: &str,
    device_kind: DeviceKind,
    public_key: PublicKey,
    member: &Address,
    height: u64,
) -> Result<(), MembershipError> {
    require_university_controller(state, sender)?;
    if !state.members.contains_key(member) {
        return Err(MembershipError::UnknownMember(*member));
    }
    if state.devices.contains_key(device_id) {
        return Err(MembershipError::DuplicateDevice(device_id.to_owned()));
    }
    state.devices.insert(
        device_id.to_owned(),
        DeviceRecord {
            device_kind,
            public_key,
            member: *member,
            registered_at_height: height,
        },
    );
    Ok(())
}
