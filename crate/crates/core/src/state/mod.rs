//! World state and the contract engine that mutates it.
//!
//! Every map is a `BTreeMap`, so iteration order and therefore the state
//! root are identical on every replica.

mod certificate;
mod exec;
pub mod exam_paper;
mod permissions;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{put_bool, put_i64, put_seq, put_str, put_u32, put_u64, put_u8, CodecError, Decode, Encode, Reader};
use crate::crypto::{hash, Address, Digest32, PublicKey};
use crate::ledger::merkle::root_of_leaves;
use crate::membership::{DeviceRecord, MemberRecord};

pub use certificate::{grades_root_for, verify_certificate, CertVerdict, Certificate, RejectReason};
pub use exec::{apply_transaction, BlockContext, Executor, TxError};
pub use permissions::PermissionMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Student,
    Teacher,
    PaperSetter,
    Evaluator,
    HeadOfDepartment,
    Principal,
    Controller,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Student,
        Role::Teacher,
        Role::PaperSetter,
        Role::Evaluator,
        Role::HeadOfDepartment,
        Role::Principal,
        Role::Controller,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Role::Student => "student",
            Role::Teacher => "teacher",
            Role::PaperSetter => "paper_setter",
            Role::Evaluator => "evaluator",
            Role::HeadOfDepartment => "head_of_department",
            Role::Principal => "principal",
            Role::Controller => "controller",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Encode for Role {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u8(out, *self as u8);
    }
}

impl Decode for Role {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let tag = r.u8()?;
        Role::ALL
            .get(tag as usize)
            .copied()
            .ok_or(CodecError::InvalidTag { what: "role", tag })
    }
}

pub const DEFAULT_ATTENDANCE_THRESHOLD: u32 = 75;

pub fn default_grade_scale() -> Vec<String> {
    ["AA", "AB", "BB", "BC", "CC", "CD", "DD", "FF"]
        .into_iter()
        .map(String::from)
        .collect()
}

/// Chain-wide parameters fixed at genesis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Params {
    pub attendance_threshold_percent: u32,
    pub grade_scale: Vec<String>,
    /// Configured fault bound `f`; the replica set may never shrink below `3f + 1`.
    pub fault_bound: u32,
    pub permissions: PermissionMatrix,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            attendance_threshold_percent: DEFAULT_ATTENDANCE_THRESHOLD,
            grade_scale: default_grade_scale(),
            fault_bound: 1,
            permissions: PermissionMatrix::default(),
        }
    }
}

impl Encode for Params {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u32(out, self.attendance_threshold_percent);
        put_seq(out, &self.grade_scale);
        put_u32(out, self.fault_bound);
        self.permissions.encode_to(out);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityRecord {
    pub role: Role,
    pub real_identity_hash: Digest32,
    pub public_key: PublicKey,
    /// Admitted member (university or college) the identity belongs to.
    pub member: Address,
}

impl Encode for IdentityRecord {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.role.encode_to(out);
        self.real_identity_hash.encode_to(out);
        self.public_key.encode_to(out);
        self.member.encode_to(out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrollmentRecord {
    pub enrolled_at_height: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttendanceRecord {
    pub sessions_attended: u64,
    pub sessions_held: u64,
}

impl AttendanceRecord {
    /// Exact rational comparison `attended / held >= threshold / 100`.
    /// No sessions held means nothing to meet the threshold with.
    pub fn meets(&self, threshold_percent: u32) -> bool {
        self.sessions_held > 0
            && u128::from(self.sessions_attended) * 100
                >= u128::from(self.sessions_held) * u128::from(threshold_percent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicketStatus {
    Issued,
    Redeemed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HallTicket {
    pub course_id: String,
    pub status: TicketStatus,
    pub issued_at_height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionCommitment {
    pub bank_root: Digest32,
    pub bank_size: u32,
    pub committed_at_height: u64,
    pub setter: Address,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamPaper {
    pub question_ids: Vec<u32>,
    pub generated_at_height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradeRecord {
    pub grade: String,
    pub evaluator: Address,
    pub recorded_at_height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub location_id: String,
    pub timestamp: u64,
}

pub type GradeKey = (Address, String, String);

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WorldState {
    pub(crate) params: Params,
    pub(crate) identities: BTreeMap<Address, IdentityRecord>,
    pub(crate) nonces: BTreeMap<Address, u64>,
    pub(crate) members: BTreeMap<Address, MemberRecord>,
    pub(crate) next_member_ordinal: u64,
    pub(crate) devices: BTreeMap<String, DeviceRecord>,
    pub(crate) enrollments: BTreeMap<(Address, String), EnrollmentRecord>,
    pub(crate) attendance: BTreeMap<(Address, String), AttendanceRecord>,
    pub(crate) sessions: BTreeSet<(String, String)>,
    pub(crate) hall_tickets: BTreeMap<(Address, String), HallTicket>,
    pub(crate) question_commitments: BTreeMap<String, QuestionCommitment>,
    pub(crate) exam_papers: BTreeMap<String, ExamPaper>,
    pub(crate) grades: BTreeMap<GradeKey, GradeRecord>,
    pub(crate) certificates: BTreeMap<Digest32, Certificate>,
    pub(crate) certificate_index: BTreeMap<(Address, String), Digest32>,
    pub(crate) assets: BTreeMap<String, Vec<TraceEntry>>,
    pub(crate) inventory: BTreeMap<String, i64>,
}

impl WorldState {
    pub fn new(params: Params) -> Self {
        WorldState {
            params,
            ..Default::default()
        }
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn identity(&self, address: &Address) -> Option<&IdentityRecord> {
        self.identities.get(address)
    }

    pub fn identities(&self) -> &BTreeMap<Address, IdentityRecord> {
        &self.identities
    }

    /// Next nonce the address must use.
    pub fn next_nonce(&self, address: &Address) -> u64 {
        self.nonces.get(address).copied().unwrap_or(0)
    }

    pub fn members(&self) -> &BTreeMap<Address, MemberRecord> {
        &self.members
    }

    pub fn devices(&self) -> &BTreeMap<String, DeviceRecord> {
        &self.devices
    }

    pub fn enrollment(&self, student: &Address, course: &str) -> Option<&EnrollmentRecord> {
        self.enrollments.get(&(*student, course.to_owned()))
    }

    pub fn enrollments(&self) -> &BTreeMap<(Address, String), EnrollmentRecord> {
        &self.enrollments
    }

    pub fn attendance(&self, student: &Address, course: &str) -> AttendanceRecord {
        self.attendance
            .get(&(*student, course.to_owned()))
            .copied()
            .unwrap_or_default()
    }

    pub fn attendance_records(&self) -> &BTreeMap<(Address, String), AttendanceRecord> {
        &self.attendance
    }

    pub fn hall_ticket(&self, student: &Address, exam_id: &str) -> Option<&HallTicket> {
        self.hall_tickets.get(&(*student, exam_id.to_owned()))
    }

    pub fn hall_tickets(&self) -> &BTreeMap<(Address, String), HallTicket> {
        &self.hall_tickets
    }

    /// (minted, redeemed, outstanding) tokens for an exam.
    pub fn ticket_counts(&self, exam_id: &str) -> (u64, u64, u64) {
        let mut minted = 0;
        let mut redeemed = 0;
        for ((_, e), t) in &self.hall_tickets {
            if e == exam_id {
                minted += 1;
                if t.status == TicketStatus::Redeemed {
                    redeemed += 1;
                }
            }
        }
        (minted, redeemed, minted - redeemed)
    }

    /// Commitment digest only; bank contents never reach the chain.
    pub fn question_commitment(&self, exam_id: &str) -> Option<&QuestionCommitment> {
        self.question_commitments.get(exam_id)
    }

    pub fn exam_paper(&self, exam_id: &str) -> Option<&ExamPaper> {
        self.exam_papers.get(exam_id)
    }

    pub fn grade(&self, student: &Address, course: &str, exam_id: &str) -> Option<&GradeRecord> {
        self.grades
            .get(&(*student, course.to_owned(), exam_id.to_owned()))
    }

    pub fn grades(&self) -> &BTreeMap<GradeKey, GradeRecord> {
        &self.grades
    }

    pub fn certificate(&self, id: &Digest32) -> Option<&Certificate> {
        self.certificates.get(id)
    }

    pub fn certificates(&self) -> &BTreeMap<Digest32, Certificate> {
        &self.certificates
    }

    pub fn asset_trace(&self, tag: &str) -> Option<&[TraceEntry]> {
        self.assets.get(tag).map(Vec::as_slice)
    }

    pub fn assets(&self) -> &BTreeMap<String, Vec<TraceEntry>> {
        &self.assets
    }

    pub fn inventory(&self, item: &str) -> i64 {
        self.inventory.get(item).copied().unwrap_or(0)
    }

    pub fn inventory_items(&self) -> &BTreeMap<String, i64> {
        &self.inventory
    }

    /// Merkle root over every entry, one leaf per entry, sections in a fixed
    /// order and keys in map order.
    pub fn state_root(&self) -> Digest32 {
        root_of_leaves(&self.leaves())
    }

    fn leaves(&self) -> Vec<Digest32> {
        let mut leaves = Vec::new();
        let mut leaf = |section: u8, f: &dyn Fn(&mut Vec<u8>)| {
            let mut buf = vec![section];
            f(&mut buf);
            leaves.push(hash(&buf));
        };
        leaf(0, &|b| self.params.encode_to(b));
        for (a, rec) in &self.identities {
            leaf(1, &|b| {
                a.encode_to(b);
                rec.encode_to(b);
            });
        }
        for (a, n) in &self.nonces {
            leaf(2, &|b| {
                a.encode_to(b);
                put_u64(b, *n);
            });
        }
        for rec in self.members.values() {
            leaf(3, &|b| rec.encode_to(b));
        }
        leaf(15, &|b| put_u64(b, self.next_member_ordinal));
        for (id, dev) in &self.devices {
            leaf(4, &|b| {
                put_str(b, id);
                dev.encode_to(b);
            });
        }
        for ((s, c), e) in &self.enrollments {
            leaf(5, &|b| {
                s.encode_to(b);
                put_str(b, c);
                put_u64(b, e.enrolled_at_height);
            });
        }
        for ((s, c), a) in &self.attendance {
            leaf(6, &|b| {
                s.encode_to(b);
                put_str(b, c);
                put_u64(b, a.sessions_attended);
                put_u64(b, a.sessions_held);
            });
        }
        for (c, sid) in &self.sessions {
            leaf(7, &|b| {
                put_str(b, c);
                put_str(b, sid);
            });
        }
        for ((s, e), t) in &self.hall_tickets {
            leaf(8, &|b| {
                s.encode_to(b);
                put_str(b, e);
                put_str(b, &t.course_id);
                put_bool(b, t.status == TicketStatus::Redeemed);
                put_u64(b, t.issued_at_height);
            });
        }
        for (e, q) in &self.question_commitments {
            leaf(9, &|b| {
                put_str(b, e);
                q.bank_root.encode_to(b);
                put_u32(b, q.bank_size);
                put_u64(b, q.committed_at_height);
                q.setter.encode_to(b);
            });
        }
        for (e, p) in &self.exam_papers {
            leaf(10, &|b| {
                put_str(b, e);
                put_seq(b, &p.question_ids);
                put_u64(b, p.generated_at_height);
            });
        }
        for (k, g) in &self.grades {
            leaf(11, &|b| certificate::encode_grade_entry(b, k, g));
        }
        for c in self.certificates.values() {
            leaf(12, &|b| c.encode_to(b));
        }
        for (tag, trace) in &self.assets {
            leaf(13, &|b| {
                put_str(b, tag);
                put_u32(b, trace.len() as u32);
                for t in trace {
                    put_str(b, &t.location_id);
                    put_u64(b, t.timestamp);
                }
            });
        }
        for (item, q) in &self.inventory {
            leaf(14, &|b| {
                put_str(b, item);
                put_i64(b, *q);
            });
        }
        leaves
    }
}
