//! `tx` subcommands: one per transaction kind, each mapping flags to a body.

use clap::{Subcommand, ValueEnum};
use examchain_core::crypto::{hash, Address, Digest32, PublicKey};
use examchain_core::membership::MemberKind;
use examchain_core::state::Role;
use examchain_core::tx::{AttendanceEntry, DeviceKind, MembershipOp, TxBody};

use crate::node::{parse_address, parse_public_key};

fn parse_digest(s: &str) -> Result<Digest32, String> {
    Digest32::from_hex(s).map_err(|e| e.to_string())
}

fn parse_role(s: &str) -> Result<Role, String> {
    Role::parse(s).ok_or_else(|| format!("unknown role {s:?}"))
}

fn parse_member_kind(s: &str) -> Result<MemberKind, String> {
    MemberKind::parse(s).ok_or_else(|| format!("unknown member kind {s:?}"))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DeviceArg {
    Biometric,
    Barcode,
    Rfid,
}

impl From<DeviceArg> for DeviceKind {
    fn from(d: DeviceArg) -> Self {
        match d {
            DeviceArg::Biometric => DeviceKind::Biometric,
            DeviceArg::Barcode => DeviceKind::Barcode,
            DeviceArg::Rfid => DeviceKind::Rfid,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum TxCmd {
    /// Register an identity at a member; the real identity is stored only as a hash.
    RegisterIdentity {
        #[arg(long, value_parser = parse_public_key)]
        public_key: PublicKey,
        #[arg(long, value_parser = parse_role)]
        role: Role,
        #[arg(long, value_parser = parse_address)]
        member: Address,
        #[arg(long)]
        real_identity: String,
    },
    Enroll {
        #[arg(long)]
        course: String,
    },
    /// One attendance session; list present and absent students.
    RecordAttendance {
        #[arg(long)]
        course: String,
        #[arg(long)]
        session: String,
        #[arg(long, value_parser = parse_address, value_delimiter = ',')]
        present: Vec<Address>,
        #[arg(long, value_parser = parse_address, value_delimiter = ',')]
        absent: Vec<Address>,
    },
    IssueHallTicket {
        #[arg(long, value_parser = parse_address)]
        student: Address,
        #[arg(long)]
        exam: String,
        #[arg(long)]
        course: String,
    },
    RedeemHallTicket {
        #[arg(long, value_parser = parse_address)]
        student: Address,
        #[arg(long)]
        exam: String,
    },
    CommitQuestionBank {
        #[arg(long)]
        exam: String,
        #[arg(long, value_parser = parse_digest)]
        bank_root: Digest32,
        #[arg(long)]
        bank_size: u32,
    },
    GenerateExamPaper {
        #[arg(long)]
        exam: String,
        #[arg(long)]
        count: u32,
    },
    RegisterAsset {
        #[arg(long)]
        asset: String,
        #[arg(long)]
        location: String,
        #[arg(long)]
        at: u64,
    },
    RecordAssetMovement {
        #[arg(long)]
        asset: String,
        #[arg(long)]
        location: String,
        #[arg(long)]
        at: u64,
    },
    UpdateInventory {
        #[arg(long)]
        item: String,
        #[arg(long, allow_hyphen_values = true)]
        delta: i64,
    },
    RecordGrade {
        #[arg(long, value_parser = parse_address)]
        student: Address,
        #[arg(long)]
        course: String,
        #[arg(long)]
        exam: String,
        #[arg(long)]
        grade: String,
    },
    IssueCertificate {
        #[arg(long, value_parser = parse_address)]
        student: Address,
        #[arg(long)]
        program: String,
    },
    /// Admit a college as a consensus member.
    AdmitMember {
        #[arg(long, value_parser = parse_member_kind)]
        kind: MemberKind,
        #[arg(long, value_parser = parse_public_key)]
        node_public_key: PublicKey,
    },
    RevokeMember {
        #[arg(long, value_parser = parse_address)]
        member: Address,
    },
    RegisterDevice {
        #[arg(long)]
        device: String,
        #[arg(long, value_enum)]
        device_kind: DeviceArg,
        #[arg(long, value_parser = parse_public_key)]
        public_key: PublicKey,
        #[arg(long, value_parser = parse_address)]
        member: Address,
    },
}

impl TxCmd {
    pub fn into_body(self) -> TxBody {
        match self {
            TxCmd::RegisterIdentity {
                public_key,
                role,
                member,
                real_identity,
            } => TxBody::RegisterIdentity {
                real_identity_hash: hash(real_identity.as_bytes()),
                public_key,
                role,
                member,
            },
            TxCmd::Enroll { course } => TxBody::Enroll { course_id: course },
            TxCmd::RecordAttendance {
                course,
                session,
                present,
                absent,
            } => {
                let mark = |present: bool| move |student| AttendanceEntry { student, present };
                TxBody::RecordAttendance {
                    course_id: course,
                    session_id: session,
                    entries: present
                        .into_iter()
                        .map(mark(true))
                        .chain(absent.into_iter().map(mark(false)))
                        .collect(),
                }
            }
            TxCmd::IssueHallTicket { student, exam, course } => TxBody::IssueHallTicket {
                student,
                exam_id: exam,
                course_id: course,
            },
            TxCmd::RedeemHallTicket { student, exam } => TxBody::RedeemHallTicket { student, exam_id: exam },
            TxCmd::CommitQuestionBank {
                exam,
                bank_root,
                bank_size,
            } => TxBody::CommitQuestionBank {
                exam_id: exam,
                bank_root,
                bank_size,
            },
            TxCmd::GenerateExamPaper { exam, count } => TxBody::GenerateExamPaper {
                exam_id: exam,
                question_count: count,
            },
            TxCmd::RegisterAsset { asset, location, at } => TxBody::RegisterAsset {
                asset_tag: asset,
                location_id: location,
                timestamp: at,
            },
            TxCmd::RecordAssetMovement { asset, location, at } => TxBody::RecordAssetMovement {
                asset_tag: asset,
                location_id: location,
                timestamp: at,
            },
            TxCmd::UpdateInventory { item, delta } => TxBody::UpdateInventory { item_code: item, delta },
            TxCmd::RecordGrade {
                student,
                course,
                exam,
                grade,
            } => TxBody::RecordGrade {
                student,
                course_id: course,
                exam_id: exam,
                grade,
            },
            TxCmd::IssueCertificate { student, program } => TxBody::IssueCertificate { student, program },
            TxCmd::AdmitMember { kind, node_public_key } => {
                TxBody::Membership(MembershipOp::Admit { kind, node_public_key })
            }
            TxCmd::RevokeMember { member } => TxBody::Membership(MembershipOp::Revoke { member }),
            TxCmd::RegisterDevice {
                device,
                device_kind,
                public_key,
                member,
            } => TxBody::Membership(MembershipOp::RegisterDevice {
                device_id: device,
                device_kind: device_kind.into(),
                public_key,
                member,
            }),
        }
    }
}
