//! `query` subcommands: read-only lookups against the replayed state.

use anyhow::Result;
use clap::Subcommand;
use examchain_core::crypto::{Address, Digest32};
use examchain_core::ledger::Chain;
use examchain_core::membership::replica_set;
use examchain_core::state::WorldState;
use serde_json::{json, Value};

use crate::node::parse_address;
use crate::output::invalid;

fn parse_digest(s: &str) -> Result<Digest32, String> {
    Digest32::from_hex(s).map_err(|e| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum QueryCmd {
    /// Tip height, hash and state root.
    Head,
    Identity {
        #[arg(long, value_parser = parse_address)]
        address: Address,
    },
    /// Consensus members in replica order.
    Members,
    Enrollment {
        #[arg(long, value_parser = parse_address)]
        student: Address,
        #[arg(long)]
        course: String,
    },
    Attendance {
        #[arg(long, value_parser = parse_address)]
        student: Address,
        #[arg(long)]
        course: String,
    },
    HallTicket {
        #[arg(long, value_parser = parse_address)]
        student: Address,
        #[arg(long)]
        exam: String,
    },
    /// Issued, redeemed and outstanding ticket counts for an exam.
    Tickets {
        #[arg(long)]
        exam: String,
    },
    Grade {
        #[arg(long, value_parser = parse_address)]
        student: Address,
        #[arg(long)]
        course: String,
        #[arg(long)]
        exam: String,
    },
    Certificate {
        #[arg(long, value_parser = parse_digest)]
        id: Digest32,
    },
    Paper {
        #[arg(long)]
        exam: String,
    },
    Inventory {
        #[arg(long)]
        item: String,
    },
    Asset {
        #[arg(long)]
        tag: String,
    },
}

fn found<T: serde::Serialize>(what: &str, v: Option<T>) -> Result<Value> {
    let v = v.ok_or_else(|| invalid(format!("no {what} found")))?;
    Ok(serde_json::to_value(v)?)
}

pub fn run(cmd: QueryCmd, chain: &Chain, state: &WorldState) -> Result<Value> {
    Ok(match cmd {
        QueryCmd::Head => {
            let tip = chain.tip();
            json!({
                "height": tip.header.height,
                "hash": tip.hash(),
                "state_root": state.state_root(),
                "timestamp": tip.header.timestamp,
            })
        }
        QueryCmd::Identity { address } => {
            let mut v = found("identity", state.identity(&address))?;
            v["address"] = json!(address);
            v["next_nonce"] = json!(state.next_nonce(&address));
            v
        }
        QueryCmd::Members => json!({ "members": replica_set(state) }),
        QueryCmd::Enrollment { student, course } => {
            let mut v = found("enrollment", state.enrollment(&student, &course))?;
            v["student"] = json!(student);
            v["course_id"] = json!(course);
            v
        }
        QueryCmd::Attendance { student, course } => {
            let rec = state.attendance(&student, &course);
            json!({
                "student": student,
                "course_id": course,
                "sessions_attended": rec.sessions_attended,
                "sessions_held": rec.sessions_held,
                "eligible": rec.meets(state.params().attendance_threshold_percent),
            })
        }
        QueryCmd::HallTicket { student, exam } => {
            let mut v = found("hall ticket", state.hall_ticket(&student, &exam))?;
            v["student"] = json!(student);
            v["exam_id"] = json!(exam);
            v
        }
        QueryCmd::Tickets { exam } => {
            let (issued, redeemed, outstanding) = state.ticket_counts(&exam);
            json!({ "exam_id": exam, "issued": issued, "redeemed": redeemed, "outstanding": outstanding })
        }
        QueryCmd::Grade { student, course, exam } => {
            let mut v = found("grade", state.grade(&student, &course, &exam))?;
            v["student"] = json!(student);
            v["course_id"] = json!(course);
            v["exam_id"] = json!(exam);
            v
        }
        QueryCmd::Certificate { id } => found("certificate", state.certificate(&id))?,
        QueryCmd::Paper { exam } => {
            let mut v = found("exam paper", state.exam_paper(&exam))?;
            v["exam_id"] = json!(exam);
            v
        }
        QueryCmd::Inventory { item } => json!({ "item_code": item, "quantity": state.inventory(&item) }),
        QueryCmd::Asset { tag } => {
            let trace = found("asset", state.asset_trace(&tag))?;
            json!({ "asset_tag": tag, "trace": trace })
        }
    })
}
