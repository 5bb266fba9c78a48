#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use examchain_core::campus::{controller_key, genesis_config, labeled_key, node_key, register_body, TxFactory};
use examchain_core::crypto::{Address, Digest32, KeyPair};
use examchain_core::genesis::{genesis, genesis_state, GenesisConfig};
use examchain_core::iot::{
    process, roster_from_state, sense, validate_and_report, Deployment, DeploymentShape, DeviceEvent, Expectation, Processed, Reading,
    Reports, Submitter,
};
use examchain_core::ledger::merkle::tx_leaf;
use examchain_core::ledger::Block;
use examchain_core::membership::{university, DeviceRecord};
use examchain_core::replay::select_valid;
use examchain_core::state::{BlockContext, Executor, Role, TxError, WorldState};
use examchain_core::tx::{DeviceKind, Transaction, TxBody};
use examchain_core::workload::generate;

/// Single-replica harness: signs with per-key nonces and applies directly.
/// Every rejection is checked to leave the state root untouched.
#[derive(Clone)]
pub struct World {
    pub config: GenesisConfig,
    pub state: WorldState,
    pub executor: Executor,
    pub factory: TxFactory,
    pub controller: KeyPair,
    pub university: Address,
    pub height: u64,
}

impl World {
    pub fn new() -> Self {
        Self::with_config(genesis_config(4))
    }

    pub fn with_config(config: GenesisConfig) -> Self {
        let state = genesis_state(&config).unwrap();
        let university = university(&state).unwrap().member_address;
        World {
            config,
            state,
            executor: Executor::default(),
            factory: TxFactory::new(),
            controller: controller_key(),
            university,
            height: 1,
        }
    }

    pub fn ctx(&self) -> BlockContext {
        BlockContext {
            height: self.height,
            timestamp: self.height,
        }
    }

    /// Subsequent transactions land in the next block.
    pub fn next_block(&mut self) {
        self.height += 1;
    }

    pub fn root(&self) -> Digest32 {
        self.state.state_root()
    }

    pub fn apply(&mut self, tx: &Transaction) -> Result<(), TxError> {
        let before = self.root();
        let ctx = self.ctx();
        let r = self.executor.apply(&mut self.state, tx, &ctx);
        if r.is_err() {
            assert_eq!(self.root(), before, "rejected {:?} changed the state", tx.kind());
        }
        r
    }

    /// Signs with the next nonce of `key`; the nonce is only consumed if the
    /// transaction applies.
    pub fn submit(&mut self, key: &KeyPair, body: TxBody) -> Result<(), TxError> {
        let nonce = self.factory.peek(&key.address());
        let tx = self.factory.sign(key, body);
        let r = self.apply(&tx);
        if r.is_err() {
            self.factory.set_next(key.address(), nonce);
        }
        r
    }

    pub fn sign(&mut self, key: &KeyPair, body: TxBody) -> Transaction {
        self.factory.sign(key, body)
    }

    pub fn register(&mut self, label: &str, role: Role) -> KeyPair {
        let key = labeled_key(label);
        let body = register_body(&key, role, self.university, label);
        let controller = self.controller.clone();
        self.submit(&controller, body).unwrap();
        key
    }

    pub fn controller(&self) -> KeyPair {
        self.controller.clone()
    }
}

/// Independent Merkle oracle: explicit levels, odd node paired with itself.
pub fn merkle_oracle(leaves: &[Digest32]) -> Digest32 {
    use sha2::{Digest, Sha256};
    if leaves.is_empty() {
        return Digest32([0; 32]);
    }
    let mut level: Vec<[u8; 32]> = leaves.iter().map(|d| d.0).collect();
    while level.len() > 1 {
        if level.len() % 2 == 1 {
            level.push(*level.last().unwrap());
        }
        level = level
            .chunks(2)
            .map(|p| {
                let mut h = Sha256::new();
                h.update(p[0]);
                h.update(p[1]);
                h.finalize().into()
            })
            .collect();
    }
    Digest32(level[0])
}

/// Independent grade-leaf encoding: address, then length-prefixed course,
/// exam and grade, evaluator address, big-endian height.
pub fn grade_leaf_oracle(student: &Address, course: &str, exam: &str, grade: &str, evaluator: &Address, height: u64) -> Digest32 {
    use sha2::{Digest, Sha256};
    let mut b = Vec::new();
    b.extend_from_slice(&student.0);
    for s in [course, exam, grade] {
        b.extend_from_slice(&(s.len() as u32).to_be_bytes());
        b.extend_from_slice(s.as_bytes());
    }
    b.extend_from_slice(&evaluator.0);
    b.extend_from_slice(&height.to_be_bytes());
    Digest32(Sha256::digest(&b).into())
}

/// Packs `txs` into sealed blocks of at most `per_block`, in order. A
/// transaction that is not yet valid waits for a later block.
pub fn pack_chain(config: &GenesisConfig, txs: Vec<Transaction>, per_block: usize) -> (Vec<Block>, WorldState) {
    let proposer = node_key(0);
    let (g, mut state) = genesis(config, &proposer).unwrap();
    let mut blocks = vec![g];
    let mut executor = Executor::default();
    let mut pool = txs;
    while !pool.is_empty() {
        let parent = blocks.last().unwrap().header.clone();
        let ctx = BlockContext {
            height: parent.height + 1,
            timestamp: parent.height + 1,
        };
        let (kept, next) = select_valid(&state, &mut executor, &pool, &ctx, per_block);
        assert!(!kept.is_empty(), "{} transactions can never apply", pool.len());
        let done: BTreeSet<Digest32> = kept.iter().map(tx_leaf).collect();
        pool.retain(|t| !done.contains(&tx_leaf(t)));
        blocks.push(Block::build(&parent, kept, next.state_root(), ctx.timestamp, &proposer));
        state = next;
    }
    (blocks, state)
}

/// A chain of about `count` generated transactions on a 4-member genesis.
pub fn sample_chain(count: usize, per_block: usize, seed: u64) -> (GenesisConfig, Vec<Block>, WorldState) {
    let config = genesis_config(4);
    let txs = generate(&config, seed, count).unwrap();
    let (blocks, state) = pack_chain(&config, txs, per_block);
    (config, blocks, state)
}

/// Ground truth folded directly from raw device events.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct IotTruth {
    pub attendance: BTreeMap<(Address, String), (u64, u64)>,
    pub inventory: BTreeMap<String, i64>,
    pub traces: BTreeMap<String, Vec<(u64, String)>>,
    pub rejected: usize,
}

/// Independent fold over raw events. An event counts only if its device is
/// registered with a matching kind, the signature holds, its tick does not go
/// back for that device, and (for scans) the student is rostered and not
/// already scanned in that session. A session with any accepted scan is held
/// for every rostered student.
pub fn iot_oracle(
    events: &[DeviceEvent],
    devices: &BTreeMap<String, DeviceRecord>,
    roster: &BTreeMap<String, BTreeSet<Address>>,
    initial_assets: &[(String, String)],
) -> IotTruth {
    let mut t = IotTruth::default();
    for (tag, loc) in initial_assets {
        t.traces.insert(tag.clone(), vec![(0, loc.clone())]);
    }
    let mut last: BTreeMap<String, u64> = BTreeMap::new();
    let mut sessions: BTreeMap<(String, String), BTreeSet<Address>> = BTreeMap::new();
    for e in events {
        let kind = match e.reading {
            Reading::BiometricScan { .. } => DeviceKind::Biometric,
            Reading::BarcodeScan { .. } => DeviceKind::Barcode,
            Reading::RfidPing { .. } => DeviceKind::Rfid,
        };
        let ok = devices.get(&e.device_id).is_some_and(|d| {
            d.device_kind == kind && e.verify(&d.public_key) && last.get(&e.device_id).is_none_or(|&p| e.tick >= p)
        });
        let ok = ok
            && match &e.reading {
                Reading::BiometricScan {
                    student,
                    course_id,
                    session_id,
                } => {
                    roster.get(course_id).is_some_and(|r| r.contains(student))
                        && sessions
                            .entry((course_id.clone(), session_id.clone()))
                            .or_default()
                            .insert(*student)
                }
                Reading::BarcodeScan { item_code, delta } => {
                    *t.inventory.entry(item_code.clone()).or_default() += delta;
                    true
                }
                Reading::RfidPing { asset_tag, location_id } => {
                    t.traces
                        .entry(asset_tag.clone())
                        .or_default()
                        .push((e.tick, location_id.clone()));
                    true
                }
            };
        if ok {
            last.insert(e.device_id.clone(), e.tick);
        } else {
            t.rejected += 1;
        }
    }
    for ((course, _), present) in &sessions {
        if present.is_empty() {
            continue;
        }
        for s in &roster[course] {
            let c = t.attendance.entry((*s, course.clone())).or_default();
            c.1 += 1;
            c.0 += u64::from(present.contains(s));
        }
    }
    t
}

/// Adds faulty readings to a clean event stream: a forged copy, an unknown
/// device, a repeated scan and a stale reading from the RFID gate.
pub fn tamper(events: &mut Vec<DeviceEvent>, d: &Deployment, seed: u64) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    if events.is_empty() {
        return;
    }
    let mut forged = events[rng.gen_range(0..events.len())].clone();
    forged.tick += 1;
    let at = rng.gen_range(0..=events.len());
    events.insert(at, forged);
    let rogue = labeled_key("rogue-device");
    let reading = Reading::BarcodeScan {
        item_code: "contraband".into(),
        delta: 5,
    };
    let at = rng.gen_range(0..=events.len());
    events.insert(at, DeviceEvent::signed(&rogue, "rogue", 1, reading));
    if let Some(i) = events
        .iter()
        .position(|e| matches!(e.reading, Reading::BiometricScan { .. }))
    {
        let dup = events[i].clone();
        events.insert(i + 1, dup);
    }
    let gate = d.devices.iter().find(|s| s.kind == DeviceKind::Rfid).unwrap();
    if let (Some(last), Some((tag, _))) = (events.iter().rev().find(|e| e.device_id == gate.id), d.assets.first()) {
        if last.tick > 0 {
            let stale = DeviceEvent::signed(
                &gate.key(),
                &gate.id,
                last.tick - 1,
                Reading::RfidPing {
                    asset_tag: tag.clone(),
                    location_id: "Nowhere".into(),
                },
            );
            events.push(stale);
        }
    }
}

pub struct IotRun {
    pub deployment: Deployment,
    pub events: Vec<DeviceEvent>,
    pub processed: Processed,
    pub expectation: Expectation,
    pub reports: Reports,
    pub truth: IotTruth,
    pub state: WorldState,
}

/// Runs sensing, processing and execution for one seeded deployment on a
/// single replica, then reports against the transaction fold.
pub fn run_iot(seed: u64, shape: DeploymentShape, faulty: bool) -> IotRun {
    let mut w = World::new();
    let d = Deployment::new(&format!("d{seed}"), shape);
    let controller = w.controller();
    for tx in d.setup_transactions(&controller, &mut w.factory, w.university) {
        w.apply(&tx).unwrap();
    }
    w.next_block();
    let mut events = sense(&d.schedule(seed), w.state.devices(), 0..=u64::MAX).unwrap();
    if faulty {
        tamper(&mut events, &d, seed);
    }
    let roster = roster_from_state(&w.state);
    let processed = process(&events, w.state.devices(), &roster);
    let mut expectation = Expectation::new();
    for (tag, loc) in &d.assets {
        expectation.record(&TxBody::RegisterAsset {
            asset_tag: tag.clone(),
            location_id: loc.clone(),
            timestamp: 0,
        });
    }
    expectation.extend(&processed.bodies);
    let mut sub = Submitter::with_factory(d.teacher.clone(), d.principal.clone(), std::mem::take(&mut w.factory));
    for tx in sub.sign_all(processed.bodies.clone()) {
        w.apply(&tx).unwrap();
    }
    w.factory = sub.into_factory();
    let reports = validate_and_report(&w.state, None, Some(&expectation));
    let truth = iot_oracle(&events, w.state.devices(), &roster, &d.assets);
    IotRun {
        deployment: d,
        events,
        processed,
        expectation,
        reports,
        truth,
        state: w.state,
    }
}

/// Compares reports with the raw-event truth; returns the differing keys.
pub fn truth_diff(r: &Reports, t: &IotTruth) -> Vec<String> {
    let mut diff = Vec::new();
    let att: BTreeMap<(Address, String), (u64, u64)> = r
        .attendance
        .iter()
        .map(|l| ((l.student, l.course_id.clone()), (l.attended, l.held)))
        .collect();
    if att != t.attendance {
        diff.push("attendance".into());
    }
    let inv: BTreeMap<String, i64> = r.inventory.iter().map(|l| (l.item_code.clone(), l.quantity)).collect();
    if inv != t.inventory {
        diff.push("inventory".into());
    }
    let tr: BTreeMap<String, Vec<(u64, String)>> = r.assets.iter().map(|l| (l.asset_tag.clone(), l.trace.clone())).collect();
    if tr != t.traces {
        diff.push("assets".into());
    }
    diff
}
