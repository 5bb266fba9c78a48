//! Signed transactions and their thirteen kinds.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{
    put_bool, put_bytes, put_i64, put_seq, put_str, put_u32, put_u64, put_u8, read_seq, CodecError,
    Decode, Encode, Reader,
};
use crate::crypto::{self, Address, Digest32, KeyPair, PublicKey, Signature};
use crate::membership::MemberKind;
use crate::state::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxKind {
    RegisterIdentity,
    Enroll,
    RecordAttendance,
    IssueHallTicket,
    RedeemHallTicket,
    CommitQuestionBank,
    GenerateExamPaper,
    RegisterAsset,
    RecordAssetMovement,
    UpdateInventory,
    RecordGrade,
    IssueCertificate,
    Membership,
}

impl TxKind {
    pub const ALL: [TxKind; 13] = [
        TxKind::RegisterIdentity,
        TxKind::Enroll,
        TxKind::RecordAttendance,
        TxKind::IssueHallTicket,
        TxKind::RedeemHallTicket,
        TxKind::CommitQuestionBank,
        TxKind::GenerateExamPaper,
        TxKind::RegisterAsset,
        TxKind::RecordAssetMovement,
        TxKind::UpdateInventory,
        TxKind::RecordGrade,
        TxKind::IssueCertificate,
        TxKind::Membership,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TxKind::RegisterIdentity => "register_identity",
            TxKind::Enroll => "enroll",
            TxKind::RecordAttendance => "record_attendance",
            TxKind::IssueHallTicket => "issue_hall_ticket",
            TxKind::RedeemHallTicket => "redeem_hall_ticket",
            TxKind::CommitQuestionBank => "commit_question_bank",
            TxKind::GenerateExamPaper => "generate_exam_paper",
            TxKind::RegisterAsset => "register_asset",
            TxKind::RecordAssetMovement => "record_asset_movement",
            TxKind::UpdateInventory => "update_inventory",
            TxKind::RecordGrade => "record_grade",
            TxKind::IssueCertificate => "issue_certificate",
            TxKind::Membership => "membership",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Biometric,
    Barcode,
    Rfid,
}

impl DeviceKind {
    fn tag(self) -> u8 {
        self as u8
    }

    fn from_tag(tag: u8) -> Result<Self, CodecError> {
        match tag {
            0 => Ok(DeviceKind::Biometric),
            1 => Ok(DeviceKind::Barcode),
            2 => Ok(DeviceKind::Rfid),
            tag => Err(CodecError::InvalidTag { what: "device kind", tag }),
        }
    }
}

/// Membership-service operations, all carried by the `Membership` kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum MembershipOp {
    Admit {
        kind: MemberKind,
        node_public_key: PublicKey,
    },
    Revoke {
        member: Address,
    },
    RegisterDevice {
        device_id: String,
        device_kind: DeviceKind,
        public_key: PublicKey,
        member: Address,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TxBody {
    RegisterIdentity {
        real_identity_hash: Digest32,
        public_key: PublicKey,
        role: Role,
        member: Address,
    },
    Enroll {
        course_id: String,
    },
    RecordAttendance {
        course_id: String,
        session_id: String,
        entries: Vec<AttendanceEntry>,
    },
    IssueHallTicket {
        student: Address,
        exam_id: String,
        course_id: String,
    },
    RedeemHallTicket {
        student: Address,
        exam_id: String,
    },
    CommitQuestionBank {
        exam_id: String,
        bank_root: Digest32,
        bank_size: u32,
    },
    GenerateExamPaper {
        exam_id: String,
        question_count: u32,
    },
    RegisterAsset {
        asset_tag: String,
        location_id: String,
        timestamp: u64,
    },
    RecordAssetMovement {
        asset_tag: String,
        location_id: String,
        timestamp: u64,
    },
    UpdateInventory {
        item_code: String,
        delta: i64,
    },
    RecordGrade {
        student: Address,
        course_id: String,
        exam_id: String,
        grade: String,
    },
    IssueCertificate {
        student: Address,
        program: String,
    },
    Membership(MembershipOp),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttendanceEntry {
    pub student: Address,
    pub present: bool,
}

impl Encode for AttendanceEntry {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.student.encode_to(out);
        put_bool(out, self.present);
    }
}

impl Decode for AttendanceEntry {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            student: Address::decode_from(r)?,
            present: r.bool()?,
        })
    }
}

impl TxBody {
    pub fn kind(&self) -> TxKind {
        match self {
            TxBody::RegisterIdentity { .. } => TxKind::RegisterIdentity,
            TxBody::Enroll { .. } => TxKind::Enroll,
            TxBody::RecordAttendance { .. } => TxKind::RecordAttendance,
            TxBody::IssueHallTicket { .. } => TxKind::IssueHallTicket,
            TxBody::RedeemHallTicket { .. } => TxKind::RedeemHallTicket,
            TxBody::CommitQuestionBank { .. } => TxKind::CommitQuestionBank,
            TxBody::GenerateExamPaper { .. } => TxKind::GenerateExamPaper,
            TxBody::RegisterAsset { .. } => TxKind::RegisterAsset,
            TxBody::RecordAssetMovement { .. } => TxKind::RecordAssetMovement,
            TxBody::UpdateInventory { .. } => TxKind::UpdateInventory,
            TxBody::RecordGrade { .. } => TxKind::RecordGrade,
            TxBody::IssueCertificate { .. } => TxKind::IssueCertificate,
            TxBody::Membership(_) => TxKind::Membership,
        }
    }

    /// Kind-specific payload bytes (the fields only, without the kind tag).
    pub fn payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            TxBody::RegisterIdentity {
                real_identity_hash,
                public_key,
                role,
                member,
            } => {
                real_identity_hash.encode_to(&mut out);
                public_key.encode_to(&mut out);
                role.encode_to(&mut out);
                member.encode_to(&mut out);
            }
            TxBody::Enroll { course_id } => put_str(&mut out, course_id),
            TxBody::RecordAttendance {
                course_id,
                session_id,
                entries,
            } => {
                put_str(&mut out, course_id);
                put_str(&mut out, session_id);
                put_seq(&mut out, entries);
            }
            TxBody::IssueHallTicket {
                student,
                exam_id,
                course_id,
            } => {
                student.encode_to(&mut out);
                put_str(&mut out, exam_id);
                put_str(&mut out, course_id);
            }
            TxBody::RedeemHallTicket { student, exam_id } => {
                student.encode_to(&mut out);
                put_str(&mut out, exam_id);
            }
            TxBody::CommitQuestionBank {
                exam_id,
                bank_root,
                bank_size,
            } => {
                put_str(&mut out, exam_id);
                bank_root.encode_to(&mut out);
                put_u32(&mut out, *bank_size);
            }
            TxBody::GenerateExamPaper {
                exam_id,
                question_count,
            } => {
                put_str(&mut out, exam_id);
                put_u32(&mut out, *question_count);
            }
            TxBody::RegisterAsset {
                asset_tag,
                location_id,
                timestamp,
            }
            | TxBody::RecordAssetMovement {
                asset_tag,
                location_id,
                timestamp,
            } => {
                put_str(&mut out, asset_tag);
                put_str(&mut out, location_id);
                put_u64(&mut out, *timestamp);
            }
            TxBody::UpdateInventory { item_code, delta } => {
                put_str(&mut out, item_code);
                put_i64(&mut out, *delta);
            }
            TxBody::RecordGrade {
                student,
                course_id,
                exam_id,
                grade,
            } => {
                student.encode_to(&mut out);
                put_str(&mut out, course_id);
                put_str(&mut out, exam_id);
                put_str(&mut out, grade);
            }
            TxBody::IssueCertificate { student, program } => {
                student.encode_to(&mut out);
                put_str(&mut out, program);
            }
            TxBody::Membership(op) => match op {
                MembershipOp::Admit {
                    kind,
                    node_public_key,
                } => {
                    put_u8(&mut out, 0);
                    kind.encode_to(&mut out);
                    node_public_key.encode_to(&mut out);
                }
                MembershipOp::Revoke { member } => {
                    put_u8(&mut out, 1);
                    member.encode_to(&mut out);
                }
                MembershipOp::RegisterDevice {
                    device_id,
                    device_kind,
                    public_key,
                    member,
                } => {
                    put_u8(&mut out, 2);
                    put_str(&mut out, device_id);
                    put_u8(&mut out, device_kind.tag());
                    public_key.encode_to(&mut out);
                    member.encode_to(&mut out);
                }
            },
        }
        out
    }

    pub fn from_payload(kind: TxKind, payload: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(payload);
        let body = match kind {
            TxKind::RegisterIdentity => TxBody::RegisterIdentity {
                real_identity_hash: Digest32::decode_from(&mut r)?,
                public_key: PublicKey::decode_from(&mut r)?,
                role: Role::decode_from(&mut r)?,
                member: Address::decode_from(&mut r)?,
            },
            TxKind::Enroll => TxBody::Enroll {
                course_id: r.string()?,
            },
            TxKind::RecordAttendance => TxBody::RecordAttendance {
                course_id: r.string()?,
                session_id: r.string()?,
                entries: read_seq(&mut r)?,
            },
            TxKind::IssueHallTicket => TxBody::IssueHallTicket {
                student: Address::decode_from(&mut r)?,
                exam_id: r.string()?,
                course_id: r.string()?,
            },
            TxKind::RedeemHallTicket => TxBody::RedeemHallTicket {
                student: Address::decode_from(&mut r)?,
                exam_id: r.string()?,
            },
            TxKind::CommitQuestionBank => TxBody::CommitQuestionBank {
                exam_id: r.string()?,
                bank_root: Digest32::decode_from(&mut r)?,
                bank_size: r.u32()?,
            },
            TxKind::GenerateExamPaper => TxBody::GenerateExamPaper {
                exam_id: r.string()?,
                question_count: r.u32()?,
            },
            TxKind::RegisterAsset => TxBody::RegisterAsset {
                asset_tag: r.string()?,
                location_id: r.string()?,
                timestamp: r.u64()?,
            },
            TxKind::RecordAssetMovement => TxBody::RecordAssetMovement {
                asset_tag: r.string()?,
                location_id: r.string()?,
                timestamp: r.u64()?,
            },
            TxKind::UpdateInventory => TxBody::UpdateInventory {
                item_code: r.string()?,
                delta: r.i64()?,
            },
            TxKind::RecordGrade => TxBody::RecordGrade {
                student: Address::decode_from(&mut r)?,
                course_id: r.string()?,
                exam_id: r.string()?,
                grade: r.string()?,
            },
            TxKind::IssueCertificate => TxBody::IssueCertificate {
                student: Address::decode_from(&mut r)?,
                program: r.string()?,
            },
            TxKind::Membership => TxBody::Membership(match r.u8()? {
                0 => MembershipOp::Admit {
                    kind: MemberKind::decode_from(&mut r)?,
                    node_public_key: PublicKey::decode_from(&mut r)?,
                },
                1 => MembershipOp::Revoke {
                    member: Address::decode_from(&mut r)?,
                },
                2 => MembershipOp::RegisterDevice {
                    device_id: r.string()?,
                    device_kind: DeviceKind::from_tag(r.u8()?)?,
                    public_key: PublicKey::decode_from(&mut r)?,
                    member: Address::decode_from(&mut r)?,
                },
                tag => return Err(CodecError::InvalidTag { what: "membership op", tag }),
            }),
        };
        r.finish()?;
        Ok(body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub sender: Address,
    pub nonce: u64,
    pub body: TxBody,
    pub signature: Signature,
}

impl Transaction {
    /// Builds and signs a transaction from `key`.
    pub fn signed(key: &KeyPair, nonce: u64, body: TxBody) -> Self {
        let mut tx = Transaction {
            sender: key.address(),
            nonce,
            body,
            signature: Signature::EMPTY,
        };
        tx.signature = crypto::sign(key, &tx.signing_bytes());
        tx
    }

    pub fn kind(&self) -> TxKind {
        self.body.kind()
    }

    /// Canonical encoding of (kind, sender, payload, nonce): the signed message.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_unsigned(&mut out);
        out
    }

    fn encode_unsigned(&self, out: &mut Vec<u8>) {
        put_u8(out, self.kind().tag());
        self.sender.encode_to(out);
        put_bytes(out, &self.body.payload());
        put_u64(out, self.nonce);
    }

    pub fn verify_signature(&self, public_key: &PublicKey) -> bool {
        crypto::verify(public_key, &self.signing_bytes(), &self.signature)
    }

    pub fn hash(&self) -> Digest32 {
        crypto::hash(&self.encode())
    }
}

impl Encode for Transaction {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.encode_unsigned(out);
        self.signature.encode_to(out);
    }
}

impl Decode for Transaction {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let tag = r.u8()?;
        let kind = TxKind::from_tag(tag).ok_or(CodecError::InvalidTag {
            what: "transaction kind",
            tag,
        })?;
        let sender = Address::decode_from(r)?;
        let body = TxBody::from_payload(kind, r.bytes()?)?;
        let nonce = r.u64()?;
        let signature = Signature::decode_from(r)?;
        Ok(Self {
            sender,
            nonce,
            body,
            signature,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use proptest::prelude::*;

    use super::*;

    pub(crate) fn sample_bodies() -> Vec<TxBody> {
        let pk = KeyPair::from_seed(&[9; 32]).public_key();
        let a = Address([7; 20]);
        vec![
            TxBody::RegisterIdentity {
                real_identity_hash: crypto::hash(b"roll-17"),
                public_key: pk,
                role: Role::Student,
                member: a,
            },
            TxBody::Enroll {
                course_id: "CS101".into(),
            },
            TxBody::RecordAttendance {
                course_id: "CS101".into(),
                session_id: "s1".into(),
                entries: vec![AttendanceEntry {
                    student: a,
                    present: true,
                }],
            },
            TxBody::IssueHallTicket {
                student: a,
                exam_id: "E1".into(),
                course_id: "CS101".into(),
            },
            TxBody::RedeemHallTicket {
                student: a,
                exam_id: "E1".into(),
            },
            TxBody::CommitQuestionBank {
                exam_id: "E1".into(),
                bank_root: crypto::hash(b"bank"),
                bank_size: 40,
            },
            TxBody::GenerateExamPaper {
                exam_id: "E1".into(),
                question_count: 5,
            },
            TxBody::RegisterAsset {
                asset_tag: "PRN-1".into(),
                location_id: "store".into(),
                timestamp: 3,
            },
            TxBody::RecordAssetMovement {
                asset_tag: "PRN-1".into(),
                location_id: "hall-2".into(),
                timestamp: 4,
            },
            TxBody::UpdateInventory {
                item_code: "PAPER-A4".into(),
                delta: -4,
            },
            TxBody::RecordGrade {
                student: a,
                course_id: "CS101".into(),
                exam_id: "E1".into(),
                grade: "AB".into(),
            },
            TxBody::IssueCertificate {
                student: a,
                program: "BTech".into(),
            },
            TxBody::Membership(MembershipOp::RegisterDevice {
                device_id: "bio-1".into(),
                device_kind: DeviceKind::Biometric,
                public_key: pk,
                member: a,
            }),
        ]
    }

    #[test]
    fn every_kind_round_trips_and_verifies() {
        let key = KeyPair::from_seed(&[1; 32]);
        let bodies = sample_bodies();
        assert_eq!(bodies.len(), TxKind::ALL.len());
        for (i, body) in bodies.into_iter().enumerate() {
            assert_eq!(body.kind(), TxKind::ALL[i]);
            let tx = Transaction::signed(&key, i as u64, body);
            let bytes = tx.encode();
            assert_eq!(bytes[0], i as u8);
            let back = Transaction::decode(&bytes).unwrap();
            assert_eq!(back, tx);
            assert!(back.verify_signature(&key.public_key()));
        }
    }

    #[test]
    fn kind_names_parse_back() {
        for k in TxKind::ALL {
            assert_eq!(TxKind::parse(k.name()), Some(k));
        }
        assert_eq!(TxKind::from_tag(13), None);
    }

    proptest! {
        // Distinct transactions never share an encoding.
        #[test]
        fn encoding_is_injective(
            a in 0usize..13, b in 0usize..13, na in 0u64..4, nb in 0u64..4,
        ) {
            let key = KeyPair::from_seed(&[2; 32]);
            let bodies = sample_bodies();
            let ta = Transaction::signed(&key, na, bodies[a].clone());
            let tb = Transaction::signed(&key, nb, bodies[b].clone());
            prop_assert_eq!(ta == tb, ta.encode() == tb.encode());
        }

        #[test]
        fn decoding_arbitrary_bytes_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            if let Ok(tx) = Transaction::decode(&bytes) {
                prop_assert_eq!(tx.encode(), bytes);
            }
        }
    }
}
