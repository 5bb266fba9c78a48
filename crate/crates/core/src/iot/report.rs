use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::RangeInclusive;

use serde::Serialize;

use crate::crypto::Address;
use crate::state::{AttendanceRecord, WorldState};
use crate::tx::TxBody;

/// What the chain should hold once the pipeline's transactions commit: a fold
/// over the bodies, independent of the contract engine.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Expectation {
    /// (student, course) -> (attended, held)
    pub attendance: BTreeMap<(Address, String), (u64, u64)>,
    pub inventory: BTreeMap<String, i64>,
    /// tag -> (timestamp, location) in submission order
    pub traces: BTreeMap<String, Vec<(u64, String)>>,
}

impl Expectation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, body: &TxBody) {
        match body {
            TxBody::RecordAttendance { course_id, entries, .. } => {
                for e in entries {
                    let c = self.attendance.entry((e.student, course_id.clone())).or_default();
                    c.1 += 1;
                    c.0 += u64::from(e.present);
                }
            }
            TxBody::UpdateInventory { item_code, delta } => {
                *self.inventory.entry(item_code.clone()).or_default() += delta;
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
            } => self
                .traces
                .entry(asset_tag.clone())
                .or_default()
                .push((*timestamp, location_id.clone())),
            _ => {}
        }
    }

    pub fn extend<'a>(&mut self, bodies: impl IntoIterator<Item = &'a TxBody>) {
        for b in bodies {
            self.record(b);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttendanceLine {
    pub student: Address,
    pub course_id: String,
    pub attended: u64,
    pub held: u64,
    /// Attendance in basis points (1/100 of a percent), rounded down.
    pub ratio_bp: u64,
    pub eligible: bool,
    pub mismatch: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InventoryLine {
    pub item_code: String,
    pub quantity: i64,
    pub mismatch: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssetLine {
    pub asset_tag: String,
    /// (timestamp, location) in timestamp order, limited to the period.
    pub trace: Vec<(u64, String)>,
    pub mismatch: bool,
}

/// Validation and report layer output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reports {
    pub threshold_percent: u32,
    pub attendance: Vec<AttendanceLine>,
    pub inventory: Vec<InventoryLine>,
    pub assets: Vec<AssetLine>,
}

impl Reports {
    pub fn mismatches(&self) -> usize {
        self.attendance.iter().filter(|l| l.mismatch).count()
            + self.inventory.iter().filter(|l| l.mismatch).count()
            + self.assets.iter().filter(|l| l.mismatch).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Tab-separated text, one section per report.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let flag = |m: bool| if m { "MISMATCH" } else { "ok" };
        let _ = writeln!(s, "# attendance (threshold {}%)", self.threshold_percent);
        let _ = writeln!(s, "student\tcourse\tattended\theld\tpercent\teligible\tcheck");
        for l in &self.attendance {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}.{:02}\t{}\t{}",
                l.student,
                l.course_id,
                l.attended,
                l.held,
                l.ratio_bp / 100,
                l.ratio_bp % 100,
                if l.eligible { "yes" } else { "no" },
                flag(l.mismatch)
            );
        }
        let _ = writeln!(s, "# inventory");
        let _ = writeln!(s, "item\tquantity\tcheck");
        for l in &self.inventory {
            let _ = writeln!(s, "{}\t{}\t{}", l.item_code, l.quantity, flag(l.mismatch));
        }
        let _ = writeln!(s, "# assets");
        let _ = writeln!(s, "asset\ttrace\tcheck");
        for l in &self.assets {
            let trace: Vec<String> = l.trace.iter().map(|(t, loc)| format!("{loc}@{t}")).collect();
            let _ = writeln!(s, "{}\t{}\t{}", l.asset_tag, trace.join(">"), flag(l.mismatch));
        }
        s
    }
}

/// Builds the reports from a committed snapshot. `period` limits which trace
/// entries are listed (attendance and inventory are cumulative). With an
/// expectation, every line it covers is cross-checked and flagged on any
/// difference, including lines the chain lacks entirely.
pub fn validate_and_report(
    state: &WorldState,
    period: Option<RangeInclusive<u64>>,
    expected: Option<&Expectation>,
) -> Reports {
    let threshold = state.params().attendance_threshold_percent;
    let keys: BTreeSet<(Address, String)> = state
        .attendance_records()
        .keys()
        .cloned()
        .chain(expected.into_iter().flat_map(|e| e.attendance.keys().cloned()))
        .collect();
    let attendance = keys
        .into_iter()
        .map(|(student, course_id)| {
            let rec: AttendanceRecord = state.attendance(&student, &course_id);
            let want = expected.and_then(|e| e.attendance.get(&(student, course_id.clone())));
            AttendanceLine {
                attended: rec.sessions_attended,
                held: rec.sessions_held,
                ratio_bp: (rec.sessions_attended * 10_000).checked_div(rec.sessions_held).unwrap_or(0),
                eligible: rec.meets(threshold),
                mismatch: want.is_some_and(|&w| w != (rec.sessions_attended, rec.sessions_held)),
                student,
                course_id,
            }
        })
        .collect();

    let items: BTreeSet<String> = state
        .inventory_items()
        .keys()
        .cloned()
        .chain(expected.into_iter().flat_map(|e| e.inventory.keys().cloned()))
        .collect();
    let inventory = items
        .into_iter()
        .map(|item| {
            let quantity = state.inventory(&item);
            let want = expected.and_then(|e| e.inventory.get(&item));
            InventoryLine {
                mismatch: want.is_some_and(|&w| w != quantity),
                quantity,
                item_code: item,
            }
        })
        .collect();

    let tags: BTreeSet<String> = state
        .assets()
        .keys()
        .cloned()
        .chain(expected.into_iter().flat_map(|e| e.traces.keys().cloned()))
        .collect();
    let in_period = |t: u64| period.as_ref().is_none_or(|p| p.contains(&t));
    let assets = tags
        .into_iter()
        .map(|tag| {
            let full: Vec<(u64, String)> = state
                .asset_trace(&tag)
                .unwrap_or_default()
                .iter()
                .map(|e| (e.timestamp, e.location_id.clone()))
                .collect();
            let want = expected.and_then(|e| e.traces.get(&tag));
            AssetLine {
                mismatch: want.is_some_and(|w| *w != full),
                trace: full.into_iter().filter(|(t, _)| in_period(*t)).collect(),
                asset_tag: tag,
            }
        })
        .collect();

    Reports {
        threshold_percent: threshold,
        attendance,
        inventory,
        assets,
    }
}
