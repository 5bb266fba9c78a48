use std::collections::{BTreeSet, HashSet};

use thiserror::Error;

use crate::crypto::{Address, Digest32, PublicKey};
use crate::membership::{self, MembershipError};
use crate::tx::{AttendanceEntry, MembershipOp, Transaction, TxBody, TxKind};

use super::certificate::{grade_leaves, Certificate};
use super::exam_paper::{paper_seed, select_questions};
use super::{
    AttendanceRecord, EnrollmentRecord, ExamPaper, GradeRecord, HallTicket, IdentityRecord,
    QuestionCommitment, Role, TicketStatus, TraceEntry, WorldState,
};
use crate::ledger::merkle::root_of_leaves;

/// Block-level facts a handler may read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockContext {
    pub height: u64,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxError {
    #[error("sender {0} is not registered")]
    UnknownSender(Address),
    #[error("signature does not verify under the sender's key")]
    BadSignature,
    #[error("bad nonce: expected {expected}, got {found}")]
    BadNonce { expected: u64, found: u64 },
    #[error("role {role} may not submit {kind}")]
    UnauthorizedRole { role: Role, kind: TxKind },

    #[error("address {0} already bound to an identity")]
    AlreadyRegistered(Address),
    #[error("address collision: {0} derived from two distinct public keys")]
    AddressCollision(Address),
    #[error("controllers of a college may only register identities for it")]
    ForeignMember,
    #[error("{0} is not a registered student")]
    NotAStudent(Address),
    #[error("already enrolled in {0}")]
    DuplicateEnrollment(String),
    #[error("{student} is not enrolled in {course}")]
    NotEnrolled { student: Address, course: String },
    #[error("session {session} of {course} already recorded")]
    DuplicateSession { course: String, session: String },
    #[error("attendance batch is empty or lists a student twice")]
    MalformedBatch,
    #[error("attendance {attended}/{held} below {threshold}%")]
    AttendanceBelowThreshold { attended: u64, held: u64, threshold: u32 },
    #[error("hall ticket already issued")]
    AlreadyIssued,
    #[error("hall ticket not issued")]
    NotIssued,
    #[error("hall ticket already redeemed")]
    AlreadyRedeemed,
    #[error("question bank for {0} already committed")]
    AlreadyCommitted(String),
    #[error("question bank must hold at least one question")]
    EmptyBank,
    #[error("no question bank committed for {0}")]
    NoCommitment(String),
    #[error("requested {requested} questions from a bank of {bank_size}")]
    QuestionCountExceedsBank { requested: u32, bank_size: u32 },
    #[error("exam paper for {0} already generated")]
    PaperAlreadyGenerated(String),
    #[error("asset {0} already registered")]
    AssetAlreadyRegistered(String),
    #[error("unknown asset {0}")]
    UnknownAsset(String),
    #[error("timestamp {found} does not follow {last}")]
    NonMonotonicTimestamp { last: u64, found: u64 },
    #[error("inventory of {item} would become {result}")]
    NegativeInventory { item: String, result: i128 },
    #[error("grade {0} is not on the grade scale")]
    InvalidGrade(String),
    #[error("no redeemed hall ticket for this exam and course")]
    NoRedeemedTicket,
    #[error("grade already recorded")]
    DuplicateGrade,
    #[error("no grade records committed before this block")]
    NoGrades,
    #[error("certificate already issued for this program")]
    DuplicateCertificate,
    #[error(transparent)]
    Membership(#[from] MembershipError),
}

impl TxError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            TxError::UnknownSender(_) => "unknown_sender",
            TxError::BadSignature => "bad_signature",
            TxError::BadNonce { .. } => "bad_nonce",
            TxError::UnauthorizedRole { .. } => "unauthorized_role",
            TxError::AlreadyRegistered(_) => "already_registered",
            TxError::AddressCollision(_) => "address_collision",
            TxError::ForeignMember => "foreign_member",
            TxError::NotAStudent(_) => "not_a_student",
            TxError::DuplicateEnrollment(_) => "duplicate_enrollment",
            TxError::NotEnrolled { .. } => "not_enrolled",
            TxError::DuplicateSession { .. } => "duplicate_session",
            TxError::MalformedBatch => "malformed_batch",
            TxError::AttendanceBelowThreshold { .. } => "attendance_below_threshold",
            TxError::AlreadyIssued => "already_issued",
            TxError::NotIssued => "not_issued",
            TxError::AlreadyRedeemed => "already_redeemed",
            TxError::AlreadyCommitted(_) => "already_committed",
            TxError::EmptyBank => "empty_bank",
            TxError::NoCommitment(_) => "no_commitment",
            TxError::QuestionCountExceedsBank { .. } => "question_count_exceeds_bank",
            TxError::PaperAlreadyGenerated(_) => "paper_already_generated",
            TxError::AssetAlreadyRegistered(_) => "asset_already_registered",
            TxError::UnknownAsset(_) => "unknown_asset",
            TxError::NonMonotonicTimestamp { .. } => "non_monotonic_timestamp",
            TxError::NegativeInventory { .. } => "negative_inventory",
            TxError::InvalidGrade(_) => "invalid_grade",
            TxError::NoRedeemedTicket => "no_redeemed_ticket",
            TxError::DuplicateGrade => "duplicate_grade",
            TxError::NoGrades => "no_grades",
            TxError::DuplicateCertificate => "duplicate_certificate",
            TxError::Membership(e) => e.code(),
        }
    }
}

/// Applies one transaction atomically: on error the state is untouched.
pub fn apply_transaction(state: &mut WorldState, tx: &Transaction, ctx: &BlockContext) -> Result<(), TxError> {
    Executor::default().apply(state, tx, ctx)
}

/// Transaction executor that remembers which signatures it already checked.
///
/// Identities are write-once and addresses are key hashes, so a transaction
/// hash that verified once verifies against the same key forever.
#[derive(Debug, Default, Clone)]
pub struct Executor {
    verified: HashSet<Digest32>,
}

impl Executor {
    pub fn apply(&mut self, state: &mut WorldState, tx: &Transaction, ctx: &BlockContext) -> Result<(), TxError> {
        let identity = state
            .identities
            .get(&tx.sender)
            .ok_or(TxError::UnknownSender(tx.sender))?;
        let role = identity.role;
        let key = identity.public_key;
        self.check_signature(tx, &key)?;
        let expected = state.next_nonce(&tx.sender);
        if tx.nonce != expected {
            return Err(TxError::BadNonce {
                expected,
                found: tx.nonce,
            });
        }
        let kind = tx.kind();
        if !state.params.permissions.allows(kind, role) {
            return Err(TxError::UnauthorizedRole { role, kind });
        }
        dispatch(state, &tx.sender, &tx.body, ctx)?;
        state.nonces.insert(tx.sender, expected + 1);
        Ok(())
    }

    fn check_signature(&mut self, tx: &Transaction, key: &PublicKey) -> Result<(), TxError> {
        let h = tx.hash();
        if self.verified.contains(&h) {
            return Ok(());
        }
        if !tx.verify_signature(key) {
            return Err(TxError::BadSignature);
        }
        self.verified.insert(h);
        Ok(())
    }
}

fn require_student(state: &WorldState, who: &Address) -> Result<(), TxError> {
    match state.identities.get(who) {
        Some(id) if id.role == Role::Student => Ok(()),
        _ => Err(TxError::NotAStudent(*who)),
    }
}

fn require_enrolled(state: &WorldState, student: &Address, course: &str) -> Result<(), TxError> {
    if state.enrollments.contains_key(&(*student, course.to_owned())) {
        Ok(())
    } else {
        Err(TxError::NotEnrolled {
            student: *student,
            course: course.to_owned(),
        })
    }
}

// Every handler validates fully before its first write.
fn dispatch(state: &mut WorldState, sender: &Address, body: &TxBody, ctx: &BlockContext) -> Result<(), TxError> {
    match body {
        TxBody::RegisterIdentity {
            real_identity_hash,
            public_key,
            role,
            member,
        } => {
            let address = public_key.address();
            if let Some(existing) = state.identities.get(&address) {
                return Err(if existing.public_key == *public_key {
                    TxError::AlreadyRegistered(address)
                } else {
                    TxError::AddressCollision(address)
                });
            }
            if !state.members.contains_key(member) {
                return Err(MembershipError::UnknownMember(*member).into());
            }
            let sender_member = state.identities[sender].member;
            let uni = membership::university(state).map(|u| u.member_address);
            if Some(sender_member) != uni && sender_member != *member {
                return Err(TxError::ForeignMember);
            }
            state.identities.insert(
                address,
                IdentityRecord {
                    role: *role,
                    real_identity_hash: *real_identity_hash,
                    public_key: *public_key,
                    member: *member,
                },
            );
        }
        TxBody::Enroll { course_id } => {
            let key = (*sender, course_id.clone());
            if state.enrollments.contains_key(&key) {
                return Err(TxError::DuplicateEnrollment(course_id.clone()));
            }
            state.enrollments.insert(
                key,
                EnrollmentRecord {
                    enrolled_at_height: ctx.height,
                },
            );
        }
        TxBody::RecordAttendance {
            course_id,
            session_id,
            entries,
        } => record_attendance(state, course_id, session_id, entries)?,
        TxBody::IssueHallTicket {
            student,
            exam_id,
            course_id,
        } => {
            require_student(state, student)?;
            require_enrolled(state, student, course_id)?;
            let key = (*student, exam_id.clone());
            if state.hall_tickets.contains_key(&key) {
                return Err(TxError::AlreadyIssued);
            }
            let record = state.attendance(student, course_id);
            let threshold = state.params.attendance_threshold_percent;
            if !record.meets(threshold) {
                return Err(TxError::AttendanceBelowThreshold {
                    attended: record.sessions_attended,
                    held: record.sessions_held,
                    threshold,
                });
            }
            state.hall_tickets.insert(
                key,
                HallTicket {
                    course_id: course_id.clone(),
                    status: TicketStatus::Issued,
                    issued_at_height: ctx.height,
                },
            );
        }
        TxBody::RedeemHallTicket { student, exam_id } => {
            let ticket = state
                .hall_tickets
                .get_mut(&(*student, exam_id.clone()))
                .ok_or(TxError::NotIssued)?;
            if ticket.status == TicketStatus::Redeemed {
                return Err(TxError::AlreadyRedeemed);
            }
            ticket.status = TicketStatus::Redeemed;
        }
        TxBody::CommitQuestionBank {
            exam_id,
            bank_root,
            bank_size,
        } => {
            if state.question_commitments.contains_key(exam_id) {
                return Err(TxError::AlreadyCommitted(exam_id.clone()));
            }
            if *bank_size == 0 {
                return Err(TxError::EmptyBank);
            }
            state.question_commitments.insert(
                exam_id.clone(),
                QuestionCommitment {
                    bank_root: *bank_root,
                    bank_size: *bank_size,
                    committed_at_height: ctx.height,
                    setter: *sender,
                },
            );
        }
        TxBody::GenerateExamPaper {
            exam_id,
            question_count,
        } => {
            let c = state
                .question_commitments
                .get(exam_id)
                .ok_or_else(|| TxError::NoCommitment(exam_id.clone()))?;
            if *question_count > c.bank_size {
                return Err(TxError::QuestionCountExceedsBank {
                    requested: *question_count,
                    bank_size: c.bank_size,
                });
            }
            if state.exam_papers.contains_key(exam_id) {
                return Err(TxError::PaperAlreadyGenerated(exam_id.clone()));
            }
            let seed = paper_seed(&c.bank_root, exam_id, c.committed_at_height);
            let question_ids = select_questions(&seed, c.bank_size, *question_count);
            state.exam_papers.insert(
                exam_id.clone(),
                ExamPaper {
                    question_ids,
                    generated_at_height: ctx.height,
                },
            );
        }
        TxBody::RegisterAsset {
            asset_tag,
            location_id,
            timestamp,
        } => {
            if state.assets.contains_key(asset_tag) {
                return Err(TxError::AssetAlreadyRegistered(asset_tag.clone()));
            }
            state.assets.insert(
                asset_tag.clone(),
                vec![TraceEntry {
                    location_id: location_id.clone(),
                    timestamp: *timestamp,
                }],
            );
        }
        TxBody::RecordAssetMovement {
            asset_tag,
            location_id,
            timestamp,
        } => {
            let trace = state
                .assets
                .get_mut(asset_tag)
                .ok_or_else(|| TxError::UnknownAsset(asset_tag.clone()))?;
            let last = trace.last().map_or(0, |t| t.timestamp);
            if *timestamp <= last {
                return Err(TxError::NonMonotonicTimestamp {
                    last,
                    found: *timestamp,
                });
            }
            trace.push(TraceEntry {
                location_id: location_id.clone(),
                timestamp: *timestamp,
            });
        }
        TxBody::UpdateInventory { item_code, delta } => {
            let current = state.inventory(item_code);
            let result = i128::from(current) + i128::from(*delta);
            let next = i64::try_from(result)
                .ok()
                .filter(|q| *q >= 0)
                .ok_or_else(|| TxError::NegativeInventory {
                    item: item_code.clone(),
                    result,
                })?;
            state.inventory.insert(item_code.clone(), next);
        }
        TxBody::RecordGrade {
            student,
            course_id,
            exam_id,
            grade,
        } => {
            if !state.params.grade_scale.contains(grade) {
                return Err(TxError::InvalidGrade(grade.clone()));
            }
            match state.hall_tickets.get(&(*student, exam_id.clone())) {
                Some(t) if t.status == TicketStatus::Redeemed && t.course_id == *course_id => {}
                _ => return Err(TxError::NoRedeemedTicket),
            }
            let key = (*student, course_id.clone(), exam_id.clone());
            if state.grades.contains_key(&key) {
                return Err(TxError::DuplicateGrade);
            }
            state.grades.insert(
                key,
                GradeRecord {
                    grade: grade.clone(),
                    evaluator: *sender,
                    recorded_at_height: ctx.height,
                },
            );
        }
        TxBody::IssueCertificate { student, program } => {
            require_student(state, student)?;
            let index_key = (*student, program.clone());
            if state.certificate_index.contains_key(&index_key) {
                return Err(TxError::DuplicateCertificate);
            }
            let leaves = grade_leaves(state, student, ctx.height);
            if leaves.is_empty() {
                return Err(TxError::NoGrades);
            }
            let cert = Certificate::new(*student, program.clone(), root_of_leaves(&leaves), ctx.height, *sender);
            state.certificate_index.insert(index_key, cert.certificate_id);
            state.certificates.insert(cert.certificate_id, cert);
        }
        TxBody::Membership(op) => match op {
            MembershipOp::Admit {
                kind,
                node_public_key,
            } => {
                membership::admit_member(state, sender, *kind, *node_public_key, ctx.height)?;
            }
            MembershipOp::Revoke { member } => membership::revoke_member(state, sender, member)?,
            MembershipOp::RegisterDevice {
                device_id,
                device_kind,
                public_key,
                member,
            } => membership::register_device(
                state,
                sender,
                device_id,
                *device_kind,
                *public_key,
                member,
                ctx.height,
            )?,
        },
    }
    Ok(())
}

fn record_attendance(
    state: &mut WorldState,
    course_id: &str,
    session_id: &str,
    entries: &[AttendanceEntry],
) -> Result<(), TxError> {
    let session = (course_id.to_owned(), session_id.to_owned());
    if state.sessions.contains(&session) {
        return Err(TxError::DuplicateSession {
            course: session.0,
            session: session.1,
        });
    }
    let distinct: BTreeSet<&Address> = entries.iter().map(|e| &e.student).collect();
    if entries.is_empty() || distinct.len() != entries.len() {
        return Err(TxError::MalformedBatch);
    }
    for e in entries {
        require_enrolled(state, &e.student, course_id)?;
    }
    for e in entries {
        let rec: &mut AttendanceRecord = state
            .attendance
            .entry((e.student, course_id.to_owned()))
            .or_default();
        rec.sessions_held += 1;
        if e.present {
            rec.sessions_attended += 1;
        }
    }
    state.sessions.insert(session);
    Ok(())
}
