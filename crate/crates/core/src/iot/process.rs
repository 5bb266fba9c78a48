use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::campus::TxFactory;
use crate::crypto::{Address, KeyPair};
use crate::membership::DeviceRecord;
use crate::state::WorldState;
use crate::tx::{AttendanceEntry, Transaction, TxBody};

use super::event::{DeviceEvent, Reading};

/// Enrolled students per course.
pub type Roster = BTreeMap<String, BTreeSet<Address>>;

pub fn roster_from_state(state: &WorldState) -> Roster {
    let mut roster = Roster::new();
    for (student, course) in state.enrollments().keys() {
        roster.entry(course.clone()).or_default().insert(*student);
    }
    roster
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QuarantineReason {
    UnknownDevice,
    BadSignature,
    /// The reading does not match the registered device kind.
    KindMismatch,
    /// Tick earlier than the device's previous event.
    TickRegression,
    NotEnrolled,
    DuplicateScan,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Quarantined {
    pub event: DeviceEvent,
    pub reason: QuarantineReason,
}

/// Output of the processing layer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Processed {
    /// Unsigned transaction bodies in submission order.
    pub bodies: Vec<TxBody>,
    pub quarantined: Vec<Quarantined>,
}

enum Slot {
    Attendance(String, String),
    Body(TxBody),
}

/// Processing layer: turns device events into transaction bodies.
///
/// Biometric scans of one (course, session) become a single attendance batch
/// listing every rostered student, absent ones included; the batch takes the
/// position of the session's first scan. Barcode scans and RFID pings map one
/// to one onto inventory and movement transactions. Events that fail a check
/// are returned in `quarantined` and influence nothing.
pub fn process(events: &[DeviceEvent], registry: &BTreeMap<String, DeviceRecord>, roster: &Roster) -> Processed {
    let mut out = Processed::default();
    let mut slots = Vec::new();
    let mut last_tick: BTreeMap<&str, u64> = BTreeMap::new();
    let mut present: BTreeMap<(String, String), BTreeSet<Address>> = BTreeMap::new();
    let empty = BTreeSet::new();

    for e in events {
        let reason = match registry.get(&e.device_id) {
            None => Some(QuarantineReason::UnknownDevice),
            Some(rec) if !e.verify(&rec.public_key) => Some(QuarantineReason::BadSignature),
            Some(rec) if rec.device_kind != e.reading.device_kind() => Some(QuarantineReason::KindMismatch),
            Some(_) if last_tick.get(e.device_id.as_str()).is_some_and(|&t| e.tick < t) => {
                Some(QuarantineReason::TickRegression)
            }
            Some(_) => None,
        };
        let reason = reason.or_else(|| match &e.reading {
            Reading::BiometricScan {
                student,
                course_id,
                session_id,
            } => {
                if !roster.get(course_id).unwrap_or(&empty).contains(student) {
                    return Some(QuarantineReason::NotEnrolled);
                }
                let key = (course_id.clone(), session_id.clone());
                let seen = present.entry(key.clone()).or_insert_with(|| {
                    slots.push(Slot::Attendance(key.0, key.1));
                    BTreeSet::new()
                });
                (!seen.insert(*student)).then_some(QuarantineReason::DuplicateScan)
            }
            Reading::BarcodeScan { item_code, delta } => {
                slots.push(Slot::Body(TxBody::UpdateInventory {
                    item_code: item_code.clone(),
                    delta: *delta,
                }));
                None
            }
            Reading::RfidPing { asset_tag, location_id } => {
                slots.push(Slot::Body(TxBody::RecordAssetMovement {
                    asset_tag: asset_tag.clone(),
                    location_id: location_id.clone(),
                    timestamp: e.tick,
                }));
                None
            }
        });
        match reason {
            Some(reason) => out.quarantined.push(Quarantined {
                event: e.clone(),
                reason,
            }),
            None => {
                last_tick.insert(&e.device_id, e.tick);
            }
        }
    }

    for slot in slots {
        out.bodies.push(match slot {
            Slot::Body(b) => b,
            Slot::Attendance(course_id, session_id) => {
                let seen = &present[&(course_id.clone(), session_id.clone())];
                let entries = roster[&course_id]
                    .iter()
                    .map(|s| AttendanceEntry {
                        student: *s,
                        present: seen.contains(s),
                    })
                    .collect();
                TxBody::RecordAttendance {
                    course_id,
                    session_id,
                    entries,
                }
            }
        });
    }
    out
}

/// Signs pipeline output: attendance as the teacher, everything else as the
/// principal.
pub struct Submitter {
    teacher: KeyPair,
    principal: KeyPair,
    factory: TxFactory,
}

impl Submitter {
    /// Nonces continue from the committed counters in `state`.
    pub fn new(teacher: KeyPair, principal: KeyPair, state: &WorldState) -> Self {
        let mut factory = TxFactory::new();
        for k in [&teacher, &principal] {
            factory.set_next(k.address(), state.next_nonce(&k.address()));
        }
        Submitter {
            teacher,
            principal,
            factory,
        }
    }

    /// Continues from an existing factory's nonces.
    pub fn with_factory(teacher: KeyPair, principal: KeyPair, factory: TxFactory) -> Self {
        Submitter {
            teacher,
            principal,
            factory,
        }
    }

    pub fn sign(&mut self, body: TxBody) -> Transaction {
        let key = match body {
            TxBody::RecordAttendance { .. } => &self.teacher,
            _ => &self.principal,
        };
        self.factory.sign(key, body)
    }

    pub fn sign_all(&mut self, bodies: impl IntoIterator<Item = TxBody>) -> Vec<Transaction> {
        bodies.into_iter().map(|b| self.sign(b)).collect()
    }

    pub fn into_factory(self) -> TxFactory {
        self.factory
    }
}
