use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codec::{put_u32, put_u8, Encode};
use crate::tx::TxKind;

use super::Role;

/// Which roles may submit each transaction kind.
///
/// | kind                  | roles                  |
/// |-----------------------|------------------------|
/// | register_identity     | controller             |
/// | enroll                | student                |
/// | record_attendance     | teacher                |
/// | issue_hall_ticket     | controller             |
/// | redeem_hall_ticket    | principal, controller  |
/// | commit_question_bank  | paper_setter           |
/// | generate_exam_paper   | controller             |
/// | register_asset        | principal, controller  |
/// | record_asset_movement | principal, controller  |
/// | update_inventory      | principal, controller  |
/// | record_grade          | evaluator              |
/// | issue_certificate     | controller             |
/// | membership            | controller             |
///
/// Heads of department hold read access only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PermissionMatrix(BTreeMap<TxKind, BTreeSet<Role>>);

impl Default for PermissionMatrix {
    fn default() -> Self {
        use Role::*;
        use TxKind::*;
        let rows: [(TxKind, &[Role]); 13] = [
            (RegisterIdentity, &[Controller]),
            (Enroll, &[Student]),
            (RecordAttendance, &[Teacher]),
            (IssueHallTicket, &[Controller]),
            (RedeemHallTicket, &[Principal, Controller]),
            (CommitQuestionBank, &[PaperSetter]),
            (GenerateExamPaper, &[Controller]),
            (RegisterAsset, &[Principal, Controller]),
            (RecordAssetMovement, &[Principal, Controller]),
            (UpdateInventory, &[Principal, Controller]),
            (RecordGrade, &[Evaluator]),
            (IssueCertificate, &[Controller]),
            (Membership, &[Controller]),
        ];
        PermissionMatrix(
            rows.into_iter()
                .map(|(k, roles)| (k, roles.iter().copied().collect()))
                .collect(),
        )
    }
}

impl PermissionMatrix {
    pub fn from_rows(rows: BTreeMap<TxKind, BTreeSet<Role>>) -> Self {
        PermissionMatrix(rows)
    }

    pub fn allows(&self, kind: TxKind, role: Role) -> bool {
        self.0.get(&kind).is_some_and(|r| r.contains(&role))
    }

    pub fn roles_for(&self, kind: TxKind) -> impl Iterator<Item = Role> + '_ {
        self.0.get(&kind).into_iter().flatten().copied()
    }
}

impl Encode for PermissionMatrix {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u32(out, self.0.len() as u32);
        for (kind, roles) in &self.0 {
            put_u8(out, kind.tag());
            put_u32(out, roles.len() as u32);
            for r in roles {
                r.encode_to(out);
            }
        }
    }
}
