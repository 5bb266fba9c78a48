//! Deterministic generator of mixed, valid transaction streams.
//!
//! The generator plays every campus role against a private copy of the world
//! state and only emits transactions that apply there, so a stream committed
//! in order is valid end to end. Transactions that depend on an earlier block
//! (certificates need grades from a previous height) may be deferred by one
//! block when the chain packs both into the same block.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::campus::{controller_key, labeled_key, register_body, TxFactory};
use crate::crypto::{hash, Address, KeyPair};
use crate::genesis::{genesis_state, GenesisConfig, GenesisError};
use crate::membership::university;
use crate::state::{BlockContext, Executor, Role, TicketStatus, WorldState};
use crate::tx::{AttendanceEntry, Transaction, TxBody};

/// A transaction handed to every replica's pool at `tick`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub tick: u64,
    pub tx: Transaction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadConfig {
    #[serde(default)]
    pub transactions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub start_tick: u64,
    /// Ticks between consecutive submission batches.
    #[serde(default = "one")]
    pub interval: u64,
    /// Transactions per batch.
    #[serde(default = "one_usize")]
    pub batch: usize,
}

fn one() -> u64 {
    1
}

fn one_usize() -> usize {
    1
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            transactions: 0,
            seed: 0,
            start_tick: 1,
            interval: 1,
            batch: 1,
        }
    }
}

impl WorkloadConfig {
    /// Tick at which the `i`-th transaction is submitted.
    pub fn tick_of(&self, i: usize) -> u64 {
        self.start_tick + (i / self.batch.max(1)) as u64 * self.interval
    }

    pub fn schedule(&self, txs: Vec<Transaction>) -> Vec<Submission> {
        txs.into_iter()
            .enumerate()
            .map(|(i, tx)| Submission { tick: self.tick_of(i), tx })
            .collect()
    }
}

const COURSES: [&str; 3] = ["CS101", "MA102", "PH103"];
const ITEMS: [&str; 3] = ["answer-booklet", "graph-sheet", "ink-cartridge"];
const LOCATIONS: [&str; 4] = ["store", "lab-1", "hall-a", "office"];

fn exam_of(course: &str) -> String {
    format!("{course}-END")
}

struct Actor {
    key: KeyPair,
}

/// Generator state: the keys of every actor and the simulated chain state.
pub struct Generator {
    rng: ChaCha8Rng,
    label: String,
    state: WorldState,
    executor: Executor,
    factory: TxFactory,
    controller: KeyPair,
    university: Address,
    students: Vec<Actor>,
    teacher: Option<KeyPair>,
    evaluator: Option<KeyPair>,
    setter: Option<KeyPair>,
    principal: Option<KeyPair>,
    sessions: u64,
    assets: Vec<(String, u64)>,
    height: u64,
}

#[derive(Debug, Clone, Copy)]
enum Action {
    RegisterStaff,
    RegisterStudent,
    Enroll,
    Attendance,
    IssueTicket,
    Redeem,
    CommitBank,
    GeneratePaper,
    Grade,
    Certificate,
    RegisterAsset,
    MoveAsset,
    Inventory,
}

impl Generator {
    /// Generator for a campus whose genesis holds the labeled controller.
    pub fn new(config: &GenesisConfig, seed: u64) -> Result<Self, GenesisError> {
        let state = genesis_state(config)?;
        let university = university(&state).expect("genesis has a university").member_address;
        Ok(Generator {
            rng: ChaCha8Rng::seed_from_u64(seed),
            label: format!("wl{seed}"),
            state,
            executor: Executor::default(),
            factory: TxFactory::new(),
            controller: controller_key(),
            university,
            students: Vec::new(),
            teacher: None,
            evaluator: None,
            setter: None,
            principal: None,
            sessions: 0,
            assets: Vec::new(),
            height: 0,
        })
    }

    /// Simulated state after every emitted transaction.
    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn teacher(&self) -> Option<&KeyPair> {
        self.teacher.as_ref()
    }

    pub fn principal(&self) -> Option<&KeyPair> {
        self.principal.as_ref()
    }

    pub fn controller(&self) -> &KeyPair {
        &self.controller
    }

    pub fn students(&self) -> impl Iterator<Item = &KeyPair> {
        self.students.iter().map(|a| &a.key)
    }

    pub fn factory_mut(&mut self) -> &mut TxFactory {
        &mut self.factory
    }

    /// Signs `body` with `key` and applies it to the simulated state. Each
    /// emitted transaction counts as its own block.
    pub fn emit(&mut self, key: &KeyPair, body: TxBody) -> Option<Transaction> {
        let nonce = self.factory.peek(&key.address());
        let tx = Transaction::signed(key, nonce, body);
        let ctx = BlockContext {
            height: self.height + 1,
            timestamp: self.height + 1,
        };
        self.executor.apply(&mut self.state, &tx, &ctx).ok()?;
        self.factory.set_next(key.address(), nonce + 1);
        self.height += 1;
        Some(tx)
    }

    fn staff(&mut self, role: Role) -> Option<Transaction> {
        let key = labeled_key(&format!("{}-{}", self.label, role.name()));
        let body = register_body(&key, role, self.university, &format!("{} {}", self.label, role.name()));
        let controller = self.controller.clone();
        let tx = self.emit(&controller, body)?;
        let slot = match role {
            Role::Teacher => &mut self.teacher,
            Role::Evaluator => &mut self.evaluator,
            Role::PaperSetter => &mut self.setter,
            _ => &mut self.principal,
        };
        *slot = Some(key);
        Some(tx)
    }

    fn try_action(&mut self, action: Action) -> Option<Transaction> {
        match action {
            Action::RegisterStaff => {
                let role = [Role::Teacher, Role::Evaluator, Role::PaperSetter, Role::Principal]
                    .into_iter()
                    .find(|r| match r {
                        Role::Teacher => self.teacher.is_none(),
                        Role::Evaluator => self.evaluator.is_none(),
                        Role::PaperSetter => self.setter.is_none(),
                        _ => self.principal.is_none(),
                    })?;
                self.staff(role)
            }
            Action::RegisterStudent => {
                let i = self.students.len();
                let key = labeled_key(&format!("{}-student-{i}", self.label));
                let body = register_body(&key, Role::Student, self.university, &format!("{} student {i}", self.label));
                let controller = self.controller.clone();
                let tx = self.emit(&controller, body)?;
                self.students.push(Actor { key });
                Some(tx)
            }
            Action::Enroll => {
                let s = self.students.choose(&mut self.rng)?.key.clone();
                let course = *COURSES.choose(&mut self.rng)?;
                self.emit(
                    &s,
                    TxBody::Enroll {
                        course_id: course.into(),
                    },
                )
            }
            Action::Attendance => {
                let teacher = self.teacher.clone()?;
                let course = *COURSES.choose(&mut self.rng)?;
                let enrolled: Vec<Address> = self
                    .students
                    .iter()
                    .map(|a| a.key.address())
                    .filter(|a| self.state.enrollment(a, course).is_some())
                    .collect();
                if enrolled.is_empty() {
                    return None;
                }
                self.sessions += 1;
                let entries = enrolled
                    .into_iter()
                    .map(|student| AttendanceEntry {
                        student,
                        present: self.rng.gen_ratio(17, 20),
                    })
                    .collect();
                self.emit(
                    &teacher,
                    TxBody::RecordAttendance {
                        course_id: course.into(),
                        session_id: format!("S{}", self.sessions),
                        entries,
                    },
                )
            }
            Action::IssueTicket => {
                let threshold = self.state.params().attendance_threshold_percent;
                let candidates: Vec<(Address, &str)> = self
                    .students
                    .iter()
                    .flat_map(|a| COURSES.iter().map(move |c| (a.key.address(), *c)))
                    .filter(|(s, c)| {
                        self.state.enrollment(s, c).is_some()
                            && self.state.hall_ticket(s, &exam_of(c)).is_none()
                            && self.state.attendance(s, c).meets(threshold)
                    })
                    .collect();
                let (student, course) = *candidates.choose(&mut self.rng)?;
                let controller = self.controller.clone();
                self.emit(
                    &controller,
                    TxBody::IssueHallTicket {
                        student,
                        exam_id: exam_of(course),
                        course_id: course.into(),
                    },
                )
            }
            Action::Redeem => {
                let principal = self.principal.clone()?;
                let issued: Vec<(Address, String)> = self
                    .state
                    .hall_tickets()
                    .iter()
                    .filter(|(_, t)| t.status == TicketStatus::Issued)
                    .map(|(k, _)| k.clone())
                    .collect();
                let (student, exam_id) = issued.choose(&mut self.rng)?.clone();
                self.emit(&principal, TxBody::RedeemHallTicket { student, exam_id })
            }
            Action::CommitBank => {
                let setter = self.setter.clone()?;
                let course = COURSES
                    .iter()
                    .find(|c| self.state.question_commitment(&exam_of(c)).is_none())?;
                let exam_id = exam_of(course);
                let bank_size = self.rng.gen_range(10..=40);
                self.emit(
                    &setter,
                    TxBody::CommitQuestionBank {
                        bank_root: hash(format!("{} bank {exam_id}", self.label).as_bytes()),
                        exam_id,
                        bank_size,
                    },
                )
            }
            Action::GeneratePaper => {
                let exam_id = COURSES.iter().map(|c| exam_of(c)).find(|e| {
                    self.state.question_commitment(e).is_some() && self.state.exam_paper(e).is_none()
                })?;
                let size = self.state.question_commitment(&exam_id)?.bank_size;
                let question_count = self.rng.gen_range(1..=size.min(10));
                let controller = self.controller.clone();
                self.emit(
                    &controller,
                    TxBody::GenerateExamPaper {
                        exam_id,
                        question_count,
                    },
                )
            }
            Action::Grade => {
                let evaluator = self.evaluator.clone()?;
                let redeemed: Vec<(Address, String, String)> = self
                    .state
                    .hall_tickets()
                    .iter()
                    .filter(|((s, e), t)| {
                        t.status == TicketStatus::Redeemed && self.state.grade(s, &t.course_id, e).is_none()
                    })
                    .map(|((s, e), t)| (*s, t.course_id.clone(), e.clone()))
                    .collect();
                let (student, course_id, exam_id) = redeemed.choose(&mut self.rng)?.clone();
                let scale = self.state.params().grade_scale.clone();
                let grade = scale.choose(&mut self.rng)?.clone();
                self.emit(
                    &evaluator,
                    TxBody::RecordGrade {
                        student,
                        course_id,
                        exam_id,
                        grade,
                    },
                )
            }
            Action::Certificate => {
                let graded: Vec<Address> = self
                    .students
                    .iter()
                    .map(|a| a.key.address())
                    .filter(|s| self.state.grades().keys().any(|(gs, _, _)| gs == s))
                    .collect();
                let student = *graded.choose(&mut self.rng)?;
                let controller = self.controller.clone();
                self.emit(
                    &controller,
                    TxBody::IssueCertificate {
                        student,
                        program: "BSc".into(),
                    },
                )
            }
            Action::RegisterAsset => {
                let principal = self.principal.clone()?;
                let tag = format!("{}-asset-{}", self.label, self.assets.len());
                let ts = self.height + 1;
                let tx = self.emit(
                    &principal,
                    TxBody::RegisterAsset {
                        asset_tag: tag.clone(),
                        location_id: LOCATIONS[0].into(),
                        timestamp: ts,
                    },
                )?;
                self.assets.push((tag, ts));
                Some(tx)
            }
            Action::MoveAsset => {
                let principal = self.principal.clone()?;
                let i = self.rng.gen_range(0..self.assets.len().max(1));
                let (tag, last) = self.assets.get(i)?.clone();
                let ts = last + self.rng.gen_range(1..=5);
                let location = *LOCATIONS.choose(&mut self.rng)?;
                let tx = self.emit(
                    &principal,
                    TxBody::RecordAssetMovement {
                        asset_tag: tag,
                        location_id: location.into(),
                        timestamp: ts,
                    },
                )?;
                self.assets[i].1 = ts;
                Some(tx)
            }
            Action::Inventory => {
                let principal = self.principal.clone()?;
                let item = *ITEMS.choose(&mut self.rng)?;
                let have = self.state.inventory(item);
                let delta = if have == 0 || self.rng.gen_bool(0.6) {
                    self.rng.gen_range(1..=50)
                } else {
                    -self.rng.gen_range(1..=have.min(30))
                };
                self.emit(
                    &principal,
                    TxBody::UpdateInventory {
                        item_code: item.into(),
                        delta,
                    },
                )
            }
        }
    }

    fn pick(&mut self) -> Action {
        if self.teacher.is_none() || self.evaluator.is_none() || self.setter.is_none() || self.principal.is_none() {
            return Action::RegisterStaff;
        }
        if self.students.len() < 4 {
            return Action::RegisterStudent;
        }
        const WEIGHTED: [(Action, u32); 12] = [
            (Action::RegisterStudent, 6),
            (Action::Enroll, 12),
            (Action::Attendance, 12),
            (Action::IssueTicket, 10),
            (Action::Redeem, 8),
            (Action::CommitBank, 2),
            (Action::GeneratePaper, 2),
            (Action::Grade, 8),
            (Action::Certificate, 4),
            (Action::RegisterAsset, 4),
            (Action::MoveAsset, 10),
            (Action::Inventory, 12),
        ];
        let total: u32 = WEIGHTED.iter().map(|(_, w)| w).sum();
        let mut roll = self.rng.gen_range(0..total);
        for (a, w) in WEIGHTED {
            if roll < w {
                return a;
            }
            roll -= w;
        }
        unreachable!()
    }

    /// Next valid transaction. Falls back to inventory restocking, which
    /// always applies once a principal exists.
    pub fn next_tx(&mut self) -> Transaction {
        for _ in 0..64 {
            let action = self.pick();
            if let Some(tx) = self.try_action(action) {
                return tx;
            }
        }
        let principal = match self.principal.clone() {
            Some(p) => p,
            None => {
                return self.staff(Role::Principal).expect("controller can register a principal");
            }
        };
        self.emit(
            &principal,
            TxBody::UpdateInventory {
                item_code: ITEMS[0].into(),
                delta: 1,
            },
        )
        .expect("restocking always applies")
    }
}

/// `count` valid mixed transactions for a campus genesis.
pub fn generate(config: &GenesisConfig, seed: u64, count: usize) -> Result<Vec<Transaction>, GenesisError> {
    let mut g = Generator::new(config, seed)?;
    Ok((0..count).map(|_| g.next_tx()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::campus::genesis_config;
    use crate::replay::replay_transactions;

    #[test]
    fn generated_stream_applies_in_order() {
        let cfg = genesis_config(4);
        let txs = generate(&cfg, 3, 400).unwrap();
        assert_eq!(txs.len(), 400);
        let batches: Vec<(u64, &[Transaction])> = txs.iter().enumerate().map(|(i, t)| (i as u64 + 1, std::slice::from_ref(t))).collect();
        let state = replay_transactions(&cfg, batches).unwrap();
        let mut g = Generator::new(&cfg, 3).unwrap();
        for _ in 0..400 {
            g.next_tx();
        }
        assert_eq!(state.state_root(), g.state().state_root());
        let kinds: std::collections::BTreeSet<_> = txs.iter().map(|t| t.kind()).collect();
        assert!(kinds.len() >= 10, "only {} kinds generated", kinds.len());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = genesis_config(4);
        assert_eq!(generate(&cfg, 9, 100).unwrap(), generate(&cfg, 9, 100).unwrap());
        assert_ne!(generate(&cfg, 9, 100).unwrap(), generate(&cfg, 10, 100).unwrap());
    }

    #[test]
    fn schedule_ticks() {
        let w = WorkloadConfig {
            start_tick: 5,
            interval: 3,
            batch: 2,
            ..Default::default()
        };
        assert_eq!((0..5).map(|i| w.tick_of(i)).collect::<Vec<_>>(), vec![5, 5, 8, 8, 11]);
    }
}
