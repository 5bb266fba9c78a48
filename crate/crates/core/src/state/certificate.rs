use serde::{Deserialize, Serialize};

use crate::codec::{put_str, put_u64, CodecError, Decode, Encode, Reader};
use crate::crypto::{hash, Address, Digest32};
use crate::ledger::merkle::root_of_leaves;

use super::{GradeKey, GradeRecord, WorldState};

/// Degree certificate or transcript anchored to on-chain grade records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub certificate_id: Digest32,
    pub student: Address,
    pub program: String,
    /// Merkle root over the student's grade records committed before issuance.
    pub grades_root: Digest32,
    pub issued_at_height: u64,
    pub issuer: Address,
}

impl Certificate {
    /// Builds the record and derives its id from the remaining fields.
    pub fn new(
        student: Address,
        program: String,
        grades_root: Digest32,
        issued_at_height: u64,
        issuer: Address,
    ) -> Self {
        let mut c = Certificate {
            certificate_id: Digest32::ZERO,
            student,
            program,
            grades_root,
            issued_at_height,
            issuer,
        };
        c.certificate_id = c.compute_id();
        c
    }

    fn encode_body(&self, out: &mut Vec<u8>) {
        self.student.encode_to(out);
        put_str(out, &self.program);
        self.grades_root.encode_to(out);
        put_u64(out, self.issued_at_height);
        self.issuer.encode_to(out);
    }

    pub fn compute_id(&self) -> Digest32 {
        let mut buf = Vec::new();
        self.encode_body(&mut buf);
        hash(&buf)
    }
}

impl Encode for Certificate {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.certificate_id.encode_to(out);
        self.encode_body(out);
    }
}

impl Decode for Certificate {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Certificate {
            certificate_id: Digest32::decode_from(r)?,
            student: Address::decode_from(r)?,
            program: r.string()?,
            grades_root: Digest32::decode_from(r)?,
            issued_at_height: r.u64()?,
            issuer: Address::decode_from(r)?,
        })
    }
}

pub(crate) fn encode_grade_entry(out: &mut Vec<u8>, key: &GradeKey, g: &GradeRecord) {
    key.0.encode_to(out);
    put_str(out, &key.1);
    put_str(out, &key.2);
    put_str(out, &g.grade);
    g.evaluator.encode_to(out);
    put_u64(out, g.recorded_at_height);
}

pub(crate) fn grade_leaf(key: &GradeKey, g: &GradeRecord) -> Digest32 {
    let mut buf = Vec::new();
    encode_grade_entry(&mut buf, key, g);
    hash(&buf)
}

/// Grade leaves for `student` recorded strictly below `height`, in key order.
pub(crate) fn grade_leaves(state: &WorldState, student: &Address, height: u64) -> Vec<Digest32> {
    state
        .grades
        .range((*student, String::new(), String::new())..)
        .take_while(|(k, _)| k.0 == *student)
        .filter(|(_, g)| g.recorded_at_height < height)
        .map(|(k, g)| grade_leaf(k, g))
        .collect()
}

/// Root a certificate issued at `height` must carry.
pub fn grades_root_for(state: &WorldState, student: &Address, height: u64) -> Digest32 {
    root_of_leaves(&grade_leaves(state, student, height))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    UnknownId,
    FieldMismatch,
    GradesRootMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum CertVerdict {
    Accept,
    Reject(RejectReason),
}

/// Read-only check a third party can run against any committed snapshot.
pub fn verify_certificate(state: &WorldState, certificate_id: &Digest32, presented: &Certificate) -> CertVerdict {
    let Some(stored) = state.certificates.get(certificate_id) else {
        return CertVerdict::Reject(RejectReason::UnknownId);
    };
    if stored.encode() != presented.encode() {
        return CertVerdict::Reject(RejectReason::FieldMismatch);
    }
    if grades_root_for(state, &stored.student, stored.issued_at_height) != stored.grades_root {
        return CertVerdict::Reject(RejectReason::GradesRootMismatch);
    }
    CertVerdict::Accept
}
