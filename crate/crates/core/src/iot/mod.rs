//! Simulated campus devices and the three-layer pipeline that turns their
//! readings into ledger transactions.
//!
//! - Sensing ([`sense`]): a seeded [`Schedule`] yields signed
//!   [`DeviceEvent`]s from biometric readers, barcode scanners and RFID gates.
//! - Processing ([`process`]): events become attendance batches, inventory
//!   updates and asset movements; anything unverifiable is quarantined.
//! - Validation and reporting ([`validate_and_report`]): committed state is
//!   summarised and cross-checked against an [`Expectation`] folded from the
//!   submitted transactions.

mod event;
mod process;
mod report;
mod schedule;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::campus::{labeled_key, register_body, TxFactory};
use crate::crypto::{Address, KeyPair};
use crate::state::Role;
use crate::tx::{DeviceKind, MembershipOp, Transaction, TxBody};

pub use event::{DeviceEvent, Reading};
pub use process::{process, roster_from_state, Processed, Quarantined, QuarantineReason, Roster, Submitter};
pub use report::{validate_and_report, AssetLine, AttendanceLine, Expectation, InventoryLine, Reports};
pub use schedule::{sense, BarcodePlan, DeviceSpec, RfidPlan, Schedule, SessionPlan};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IotError {
    #[error("cannot parse schedule: {0}")]
    Parse(String),
    #[error("cannot read schedule: {0}")]
    Io(String),
    #[error("invalid schedule: {0}")]
    Invalid(String),
    #[error("schedule refers to undeclared device {0}")]
    UnknownDevice(String),
    #[error("device {0} is not registered on chain")]
    UnregisteredDevice(String),
    #[error("device {0} is registered with a different key or kind")]
    RegistrationMismatch(String),
}

/// Size of a synthetic deployment and its schedule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeploymentShape {
    pub students: usize,
    pub courses: usize,
    pub sessions_per_course: usize,
    pub items: usize,
    pub scans_per_item: usize,
    pub assets: usize,
    pub moves_per_asset: usize,
    pub start_tick: u64,
    /// Ticks between consecutive readings of one schedule line.
    pub tick_step: u64,
}

impl Default for DeploymentShape {
    fn default() -> Self {
        DeploymentShape {
            students: 6,
            courses: 2,
            sessions_per_course: 4,
            items: 2,
            scans_per_item: 4,
            assets: 2,
            moves_per_asset: 3,
            start_tick: 1,
            tick_step: 5,
        }
    }
}

const LOCATIONS: [&str; 5] = ["store", "lab-1", "lab-2", "hall-a", "office"];

/// A campus with labeled staff, students and devices, ready to be
/// registered on chain and driven by a synthetic schedule.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub label: String,
    pub teacher: KeyPair,
    pub principal: KeyPair,
    pub students: Vec<KeyPair>,
    pub courses: Vec<String>,
    pub items: Vec<String>,
    /// (tag, initial location)
    pub assets: Vec<(String, String)>,
    pub devices: Vec<DeviceSpec>,
    shape: DeploymentShape,
}

impl Deployment {
    pub fn new(label: &str, shape: DeploymentShape) -> Self {
        let courses: Vec<String> = (0..shape.courses).map(|i| format!("{label}-C{i}")).collect();
        let mut devices: Vec<DeviceSpec> = courses
            .iter()
            .map(|c| DeviceSpec {
                id: format!("bio-{c}"),
                kind: DeviceKind::Biometric,
                key_label: format!("{label}-device-bio-{c}"),
            })
            .collect();
        devices.push(DeviceSpec {
            id: format!("{label}-bc"),
            kind: DeviceKind::Barcode,
            key_label: format!("{label}-device-bc"),
        });
        devices.push(DeviceSpec {
            id: format!("{label}-rfid"),
            kind: DeviceKind::Rfid,
            key_label: format!("{label}-device-rfid"),
        });
        Deployment {
            teacher: labeled_key(&format!("{label}-teacher")),
            principal: labeled_key(&format!("{label}-principal")),
            students: (0..shape.students)
                .map(|i| labeled_key(&format!("{label}-student-{i}")))
                .collect(),
            items: (0..shape.items).map(|i| format!("{label}-item-{i}")).collect(),
            assets: (0..shape.assets)
                .map(|i| (format!("{label}-asset-{i}"), LOCATIONS[i % LOCATIONS.len()].to_owned()))
                .collect(),
            courses,
            devices,
            label: label.to_owned(),
            shape,
        }
    }

    /// Transactions that register staff, students, enrollments, devices and
    /// assets, in dependency order. Devices belong to `member`.
    pub fn setup_transactions(&self, controller: &KeyPair, factory: &mut TxFactory, member: Address) -> Vec<Transaction> {
        let mut txs = Vec::new();
        let l = &self.label;
        txs.push(factory.sign(controller, register_body(&self.teacher, Role::Teacher, member, &format!("{l} teacher"))));
        txs.push(factory.sign(
            controller,
            register_body(&self.principal, Role::Principal, member, &format!("{l} principal")),
        ));
        for (i, s) in self.students.iter().enumerate() {
            txs.push(factory.sign(controller, register_body(s, Role::Student, member, &format!("{l} student {i}"))));
        }
        for d in &self.devices {
            txs.push(factory.sign(
                controller,
                TxBody::Membership(MembershipOp::RegisterDevice {
                    device_id: d.id.clone(),
                    device_kind: d.kind,
                    public_key: d.key().public_key(),
                    member,
                }),
            ));
        }
        for s in &self.students {
            for c in &self.courses {
                txs.push(factory.sign(s, TxBody::Enroll { course_id: c.clone() }));
            }
        }
        for (tag, loc) in &self.assets {
            txs.push(factory.sign(
                &self.principal,
                TxBody::RegisterAsset {
                    asset_tag: tag.clone(),
                    location_id: loc.clone(),
                    timestamp: 0,
                },
            ));
        }
        txs
    }

    /// Seeded schedule: per-session presence rates, stock movements that never
    /// drive an item negative, and strictly timed asset paths.
    pub fn schedule(&self, seed: u64) -> Schedule {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sh = &self.shape;
        let roster: Vec<Address> = self.students.iter().map(KeyPair::address).collect();
        let mut sessions = Vec::new();
        for (ci, c) in self.courses.iter().enumerate() {
            for k in 0..sh.sessions_per_course {
                sessions.push(SessionPlan {
                    device: format!("bio-{c}"),
                    course_id: c.clone(),
                    session_id: format!("S{k}"),
                    tick: sh.start_tick + k as u64 * sh.tick_step + ci as u64,
                    students: roster.clone(),
                    presence_percent: rng.gen_range(40..=100),
                });
            }
        }
        let bc = format!("{}-bc", self.label);
        let barcode = self
            .items
            .iter()
            .enumerate()
            .map(|(ii, item)| {
                let mut stock = 0i64;
                let scans = (0..sh.scans_per_item)
                    .map(|k| {
                        let delta = if stock == 0 || rng.gen_bool(0.5) {
                            rng.gen_range(1..=60)
                        } else {
                            -rng.gen_range(1..=stock)
                        };
                        stock += delta;
                        (sh.start_tick + k as u64 * sh.tick_step + ii as u64, delta)
                    })
                    .collect();
                BarcodePlan {
                    device: bc.clone(),
                    item_code: item.clone(),
                    scans,
                }
            })
            .collect();
        let gate = format!("{}-rfid", self.label);
        let rfid = self
            .assets
            .iter()
            .enumerate()
            .map(|(ai, (tag, _))| RfidPlan {
                device: gate.clone(),
                asset_tag: tag.clone(),
                path: (0..sh.moves_per_asset)
                    .map(|k| {
                        let loc = LOCATIONS.choose(&mut rng).expect("non-empty");
                        (sh.start_tick + k as u64 * sh.tick_step + ai as u64 + 1, (*loc).to_owned())
                    })
                    .collect(),
            })
            .collect();
        Schedule {
            seed,
            devices: self.devices.clone(),
            sessions,
            barcode,
            rfid,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campus::{controller_key, genesis_config};
    use crate::genesis::genesis_state;
    use crate::membership::university;
    use crate::replay::replay_transactions;
    use crate::state::WorldState;

    fn deployed(shape: DeploymentShape) -> (Deployment, WorldState) {
        let cfg = genesis_config(4);
        let uni = university(&genesis_state(&cfg).unwrap()).unwrap().member_address;
        let d = Deployment::new("t", shape);
        let txs = d.setup_transactions(&controller_key(), &mut TxFactory::new(), uni);
        let state = replay_transactions(&cfg, [(1, txs.as_slice())]).unwrap();
        (d, state)
    }

    fn session_only(presence: u32) -> Schedule {
        let (d, _) = deployed(DeploymentShape {
            students: 5,
            courses: 1,
            ..Default::default()
        });
        let mut s = d.schedule(1);
        s.sessions.truncate(1);
        s.sessions[0].presence_percent = presence;
        s.barcode.clear();
        s.rfid.clear();
        s
    }

    #[test]
    fn presence_extremes() {
        let (_, state) = deployed(DeploymentShape {
            students: 5,
            courses: 1,
            ..Default::default()
        });
        let all = sense(&session_only(100), state.devices(), 0..=u64::MAX).unwrap();
        assert_eq!(all.len(), 5);
        assert!(all.iter().all(|e| matches!(e.reading, Reading::BiometricScan { .. })));
        let none = sense(&session_only(0), state.devices(), 0..=u64::MAX).unwrap();
        assert!(none.is_empty());

        let p = process(&all, state.devices(), &roster_from_state(&state));
        assert_eq!(p.bodies.len(), 1);
        match &p.bodies[0] {
            TxBody::RecordAttendance { entries, .. } => {
                assert_eq!(entries.len(), 5);
                assert!(entries.iter().all(|e| e.present));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unregistered_device_is_an_error() {
        let s = session_only(100);
        let empty = Default::default();
        assert_eq!(
            sense(&s, &empty, 0..=100),
            Err(IotError::UnregisteredDevice(s.devices[0].id.clone()))
        );
    }

    #[test]
    fn per_event_inventory_and_ordered_traces() {
        let (d, mut state) = deployed(DeploymentShape::default());
        let mut s = d.schedule(2);
        s.sessions.clear();
        s.barcode.truncate(1);
        s.barcode[0].scans = vec![(3, 10), (4, -4)];
        s.rfid.truncate(1);
        s.rfid[0].path = vec![(5, "A".into()), (6, "B".into()), (7, "C".into())];
        let events = sense(&s, state.devices(), 0..=100).unwrap();
        let p = process(&events, state.devices(), &roster_from_state(&state));
        let item = d.items[0].clone();
        assert_eq!(
            &p.bodies[..2],
            &[
                TxBody::UpdateInventory {
                    item_code: item.clone(),
                    delta: 10
                },
                TxBody::UpdateInventory {
                    item_code: item.clone(),
                    delta: -4
                }
            ]
        );
        let mut sub = Submitter::new(d.teacher.clone(), d.principal.clone(), &state);
        let txs = sub.sign_all(p.bodies.clone());
        let mut ex = crate::state::Executor::default();
        for tx in &txs {
            ex.apply(&mut state, tx, &crate::state::BlockContext { height: 2, timestamp: 9 })
                .unwrap();
        }
        let r = validate_and_report(&state, None, None);
        assert_eq!(r.inventory.iter().find(|l| l.item_code == item).unwrap().quantity, 6);
        let trace: Vec<&str> = r.assets.iter().find(|l| l.asset_tag == d.assets[0].0).unwrap().trace[1..]
            .iter()
            .map(|(_, l)| l.as_str())
            .collect();
        assert_eq!(trace, ["A", "B", "C"]);
        let windowed = validate_and_report(&state, Some(6..=7), None);
        let t = &windowed.assets.iter().find(|l| l.asset_tag == d.assets[0].0).unwrap().trace;
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn tampered_events_are_quarantined() {
        let (d, state) = deployed(DeploymentShape::default());
        let mut events = sense(&d.schedule(3), state.devices(), 0..=u64::MAX).unwrap();
        let roster = roster_from_state(&state);
        let clean = process(&events, state.devices(), &roster);
        let i = events
            .iter()
            .position(|e| matches!(e.reading, Reading::BarcodeScan { .. }))
            .unwrap();
        if let Reading::BarcodeScan { delta, .. } = &mut events[i].reading {
            *delta += 1000;
        }
        let dirty = process(&events, state.devices(), &roster);
        assert_eq!(dirty.quarantined.len(), 1);
        assert_eq!(dirty.quarantined[0].reason, QuarantineReason::BadSignature);
        assert_eq!(dirty.bodies.len(), clean.bodies.len() - 1);
    }

    #[test]
    fn eligibility_at_three_of_four() {
        let (d, mut state) = deployed(DeploymentShape {
            students: 1,
            courses: 1,
            ..Default::default()
        });
        let student = d.students[0].address();
        let course = d.courses[0].clone();
        let mut sub = Submitter::new(d.teacher.clone(), d.principal.clone(), &state);
        let mut ex = crate::state::Executor::default();
        for (k, present) in [true, true, false, true].into_iter().enumerate() {
            let tx = sub.sign(TxBody::RecordAttendance {
                course_id: course.clone(),
                session_id: format!("S{k}"),
                entries: vec![crate::tx::AttendanceEntry { student, present }],
            });
            ex.apply(&mut state, &tx, &crate::state::BlockContext { height: 2, timestamp: 2 })
                .unwrap();
        }
        let r = validate_and_report(&state, None, None);
        let line = &r.attendance[0];
        assert_eq!((line.attended, line.held, line.ratio_bp), (3, 4, 7500));
        assert!(line.eligible);
        assert!(r.to_tsv().contains("75.00\tyes\tok"));
    }
}
