use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use serde::Serialize;

use crate::crypto::{Digest32, KeyPair, PublicKey};
use crate::ledger::{check_block, Block, Chain};
use crate::membership::replica_set;
use crate::replay::{execute_block, select_valid};
use crate::state::{BlockContext, Executor, TxError, WorldState};
use crate::tx::Transaction;

use super::message::{CertifiedBlock, Payload, PreparedProof, ReplicaId, SignedMessage};
use super::pool::Mempool;
use super::{leader_of, ConsensusError, QuorumConfig};

/// Distinct blocks remembered per sequence number; bounds what an
/// equivocating leader can make a replica store.
const MAX_BLOCKS_PER_SEQ: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaConfig {
    /// Initial view-change timeout, in ticks.
    pub timeout_ticks: u64,
    /// Upper bound for the exponentially backed-off timeout.
    pub max_timeout_ticks: u64,
    pub max_block_txs: usize,
    /// Minimum ticks between two sync requests, or two pushes to one peer.
    pub sync_interval: u64,
    pub max_sync_blocks: usize,
    /// Ticks between retransmissions of this replica's messages for the
    /// instance it is working on. Lost messages otherwise cost a view change.
    pub resend_ticks: u64,
}

impl Default for ReplicaConfig {
    fn default() -> Self {
        ReplicaConfig {
            timeout_ticks: 40,
            max_timeout_ticks: 40 * 64,
            max_block_txs: 100,
            sync_interval: 10,
            max_sync_blocks: 32,
            resend_ticks: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Normal,
    ViewChanging,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// Every other replica.
    All,
    One(ReplicaId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outbound {
    pub to: Target,
    pub message: SignedMessage,
}

/// Result of one replica input: messages to send and heights committed.
#[derive(Debug, Default, Clone)]
pub struct Step {
    pub outbound: Vec<Outbound>,
    pub committed: Vec<u64>,
}

/// Two leader-signed PrePrepares for the same (view, seq) with different digests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence {
    pub view: u64,
    pub seq: u64,
    pub leader: ReplicaId,
    pub first: SignedMessage,
    pub second: SignedMessage,
}

impl Evidence {
    pub fn digests(&self) -> (Digest32, Digest32) {
        (pre_prepare_digest(&self.first), pre_prepare_digest(&self.second))
    }

    /// Both messages are genuine and conflicting.
    pub fn verify(&self, leader_key: &PublicKey) -> bool {
        let key_of = |m: &SignedMessage| match &m.payload {
            Payload::PrePrepare { view, seq, .. } => Some((*view, *seq)),
            _ => None,
        };
        let (a, b) = self.digests();
        key_of(&self.first) == Some((self.view, self.seq))
            && key_of(&self.second) == Some((self.view, self.seq))
            && a != b
            && self.first.sender == self.leader
            && self.second.sender == self.leader
            && self.first.verify(leader_key)
            && self.second.verify(leader_key)
    }
}

/// Errors no later block can cure.
fn is_permanent(e: &TxError) -> bool {
    matches!(e, TxError::BadSignature) || matches!(e, TxError::BadNonce { expected, found } if found < expected)
}

fn pre_prepare_digest(m: &SignedMessage) -> Digest32 {
    match &m.payload {
        Payload::PrePrepare { digest, .. } => *digest,
        _ => Digest32::ZERO,
    }
}

enum Candidate {
    Valid(Box<WorldState>),
    Invalid,
}

struct VcInfo {
    last_committed: u64,
    prepared: Option<(u64, Digest32, Block)>,
}

/// A PBFT replica. Single-threaded and deterministic: its behaviour depends
/// only on the sequence of calls made on it.
pub struct Replica {
    id: ReplicaId,
    active: bool,
    key: KeyPair,
    peers: Vec<PublicKey>,
    quorum: QuorumConfig,
    config: ReplicaConfig,
    view: u64,
    status: Status,
    chain: Chain,
    state: WorldState,
    executor: Executor,
    /// Commit certificate per height; empty for genesis.
    certs: Vec<Vec<SignedMessage>>,
    commit_views: Vec<u64>,
    pool: Mempool,
    /// Committed state plus every currently applicable pooled transaction,
    /// with their count; `None` after the committed state changes.
    pool_scratch: Option<(WorldState, usize)>,
    pre_prepares: BTreeMap<(u64, u64), SignedMessage>,
    blocks: BTreeMap<(u64, Digest32), Block>,
    prepares: BTreeMap<(u64, u64, Digest32), BTreeMap<ReplicaId, SignedMessage>>,
    commits: BTreeMap<(u64, u64, Digest32), BTreeMap<ReplicaId, SignedMessage>>,
    sent_prepare: BTreeSet<(u64, u64)>,
    sent_commit: BTreeSet<(u64, u64)>,
    candidates: HashMap<Digest32, Candidate>,
    prepared: Option<(u64, PreparedProof)>,
    view_changes: BTreeMap<u64, BTreeMap<ReplicaId, SignedMessage>>,
    new_views: BTreeMap<u64, SignedMessage>,
    sent_new_view: BTreeSet<u64>,
    echoed: BTreeSet<(u64, ReplicaId)>,
    evidence: Vec<Evidence>,
    now: u64,
    timer: Option<u64>,
    timeout: u64,
    last_sync_request: Option<u64>,
    last_resend: u64,
    sync_pushed: BTreeMap<ReplicaId, u64>,
    verified: HashSet<Digest32>,
    local: VecDeque<SignedMessage>,
}

impl Replica {
    pub fn new(
        key: KeyPair,
        genesis: Block,
        state: WorldState,
        config: ReplicaConfig,
    ) -> Result<Self, ConsensusError> {
        if genesis.header.state_root != state.state_root() {
            return Err(ConsensusError::GenesisMismatch);
        }
        let chain = Chain::from_genesis(genesis).map_err(|_| ConsensusError::GenesisMismatch)?;
        let peers: Vec<PublicKey> = replica_set(&state).iter().map(|m| m.node_public_key).collect();
        let id = peers
            .iter()
            .position(|k| *k == key.public_key())
            .ok_or(ConsensusError::NotAReplica)?;
        let quorum = QuorumConfig::new(peers.len(), state.params().fault_bound as usize)?;
        let timeout = config.timeout_ticks;
        Ok(Replica {
            id,
            active: true,
            key,
            peers,
            quorum,
            config,
            view: 0,
            status: Status::Normal,
            chain,
            state,
            executor: Executor::default(),
            certs: vec![Vec::new()],
            commit_views: vec![0],
            pool: Mempool::new(),
            pool_scratch: None,
            pre_prepares: BTreeMap::new(),
            blocks: BTreeMap::new(),
            prepares: BTreeMap::new(),
            commits: BTreeMap::new(),
            sent_prepare: BTreeSet::new(),
            sent_commit: BTreeSet::new(),
            candidates: HashMap::new(),
            prepared: None,
            view_changes: BTreeMap::new(),
            new_views: BTreeMap::new(),
            sent_new_view: BTreeSet::new(),
            echoed: BTreeSet::new(),
            evidence: Vec::new(),
            now: 0,
            timer: None,
            timeout,
            last_sync_request: None,
            last_resend: 0,
            sync_pushed: BTreeMap::new(),
            verified: HashSet::new(),
            local: VecDeque::new(),
        })
    }

    pub fn id(&self) -> ReplicaId {
        self.id
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn peers(&self) -> &[PublicKey] {
        &self.peers
    }

    pub fn quorum(&self) -> QuorumConfig {
        self.quorum
    }

    /// False once this node has been revoked from the replica set.
    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn view(&self) -> u64 {
        self.view
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn height(&self) -> u64 {
        self.chain.height()
    }

    pub fn chain(&self) -> &Chain {
        &self.chain
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn evidence(&self) -> &[Evidence] {
        &self.evidence
    }

    pub fn pool(&self) -> &Mempool {
        &self.pool
    }

    /// View in which the block at `height` was certified.
    pub fn commit_view(&self, height: u64) -> Option<u64> {
        self.commit_views.get(usize::try_from(height).ok()?).copied()
    }

    pub fn certificate(&self, height: u64) -> Option<&[SignedMessage]> {
        self.certs.get(usize::try_from(height).ok()?).map(Vec::as_slice)
    }

    pub fn timer_deadline(&self) -> Option<u64> {
        self.timer
    }

    pub fn is_leader(&self) -> bool {
        self.leader(self.view) == self.id
    }

    /// Nothing proposable in the pool and no uncommitted proposal in sight.
    pub fn is_idle(&self) -> bool {
        let ready = self.pool_scratch.as_ref().map_or(!self.pool.is_empty(), |(_, r)| *r > 0);
        !ready && !self.pending_proposal()
    }

    /// Adds a transaction to the pool. Returns false for duplicates and for
    /// transactions that can never apply.
    pub fn submit(&mut self, tx: Transaction) -> bool {
        if self.pool.contains(&tx.hash()) {
            return false;
        }
        if let Some((scratch, ready)) = &mut self.pool_scratch {
            let ctx = BlockContext {
                height: self.chain.height() + 1,
                timestamp: self.now,
            };
            match self.executor.apply(scratch, &tx, &ctx) {
                Ok(()) => *ready += 1,
                Err(e) if is_permanent(&e) => return false,
                Err(_) => {}
            }
        }
        self.pool.insert(tx)
    }

    /// Lets the leader propose from its pool.
    pub fn on_propose(&mut self) -> Step {
        let mut step = Step::default();
        self.run(&mut step);
        step
    }

    pub fn on_message(&mut self, msg: SignedMessage) -> Step {
        let mut step = Step::default();
        if self.active && self.check_sig(&msg) && msg.sender != self.id {
            self.handle(msg, &mut step);
        }
        self.run(&mut step);
        step
    }

    /// Advances the replica clock; fires the view-change timer when due.
    pub fn on_tick(&mut self, now: u64) -> Step {
        let mut step = Step::default();
        self.now = self.now.max(now);
        if self.timer.is_some_and(|d| d <= self.now) {
            self.timer = None;
            self.on_timeout(&mut step);
        }
        self.run(&mut step);
        if self.now >= self.last_resend + self.config.resend_ticks {
            self.last_resend = self.now;
            self.resend(&mut step);
        }
        step
    }

    /// Rebroadcasts our own messages for the current view and sequence.
    /// Every handler is idempotent, so duplicates are harmless.
    fn resend(&mut self, step: &mut Step) {
        if !self.active || (self.is_idle() && self.status == Status::Normal) {
            return;
        }
        let (v, s) = (self.view, self.height() + 1);
        let mut own: Vec<SignedMessage> = Vec::new();
        match self.status {
            Status::ViewChanging => own.extend(self.view_changes.get(&v).and_then(|vc| vc.get(&self.id)).cloned()),
            Status::Normal => {
                if self.is_leader() {
                    own.extend(self.new_views.get(&v).cloned());
                    own.extend(self.pre_prepares.get(&(v, s)).filter(|m| m.sender == self.id).cloned());
                }
                for votes in [&self.prepares, &self.commits] {
                    own.extend(
                        votes
                            .range((v, s, Digest32::ZERO)..)
                            .take_while(|((vv, ss, _), _)| (*vv, *ss) == (v, s))
                            .filter_map(|(_, by)| by.get(&self.id).cloned()),
                    );
                }
            }
        }
        step.outbound.extend(own.into_iter().map(|message| Outbound { to: Target::All, message }));
    }

    fn on_timeout(&mut self, step: &mut Step) {
        if !self.active || !self.has_work() {
            return;
        }
        // A view nobody else asked for yet is not abandoned: moving on alone
        // would leave this replica a view ahead of everyone it needs.
        if self.status == Status::ViewChanging
            && self.view_changes.get(&self.view).map_or(0, BTreeMap::len) < self.quorum.quorum
        {
            self.timer = Some(self.now + self.timeout);
            return;
        }
        self.start_view_change(self.view + 1, step);
    }

    fn run(&mut self, step: &mut Step) {
        loop {
            while let Some(m) = self.local.pop_front() {
                self.handle(m, step);
            }
            self.try_propose(step);
            if self.local.is_empty() {
                break;
            }
        }
        self.rearm();
    }

    fn leader(&self, view: u64) -> ReplicaId {
        leader_of(view, self.peers.len())
    }

    fn pending_proposal(&self) -> bool {
        let h = self.height();
        self.pre_prepares.keys().any(|(_, s)| *s > h)
    }

    fn has_work(&mut self) -> bool {
        self.pending_proposal() || self.ready_count() > 0
    }

    fn rearm(&mut self) {
        if self.timer.is_none() && self.active && self.has_work() {
            self.timer = Some(self.now + self.timeout);
        }
    }

    /// Number of pooled transactions that apply, in pool order, on the
    /// committed state. Drops those that never can.
    fn ready_count(&mut self) -> usize {
        if let Some((_, ready)) = &self.pool_scratch {
            return *ready;
        }
        let ctx = BlockContext {
            height: self.height() + 1,
            timestamp: self.now,
        };
        let mut scratch = self.state.clone();
        let mut ready = 0;
        let executor = &mut self.executor;
        self.pool.retain(|tx| match executor.apply(&mut scratch, tx, &ctx) {
            Ok(()) => {
                ready += 1;
                true
            }
            Err(e) => !is_permanent(&e),
        });
        self.pool_scratch = Some((scratch, ready));
        ready
    }

    fn send(&mut self, step: &mut Step, to: Target, payload: Payload) -> SignedMessage {
        let msg = SignedMessage::sign(&self.key, self.id, payload);
        match to {
            Target::All => {
                self.local.push_back(msg.clone());
                step.outbound.push(Outbound {
                    to,
                    message: msg.clone(),
                });
            }
            Target::One(j) if j == self.id => self.local.push_back(msg.clone()),
            Target::One(_) => step.outbound.push(Outbound {
                to,
                message: msg.clone(),
            }),
        }
        msg
    }

    fn check_sig(&mut self, m: &SignedMessage) -> bool {
        let Some(key) = self.peers.get(m.sender) else {
            return false;
        };
        let h = m.hash();
        if self.verified.contains(&h) {
            return true;
        }
        if m.verify(key) {
            self.verified.insert(h);
            true
        } else {
            false
        }
    }

    fn handle(&mut self, m: SignedMessage, step: &mut Step) {
        match &m.payload {
            Payload::PrePrepare { .. } => self.handle_pre_prepare(m, step),
            Payload::Prepare { view, seq, digest } => {
                let (v, s, d) = (*view, *seq, *digest);
                if s <= self.height() {
                    return;
                }
                if s > self.height() + 1 {
                    self.request_sync(m.sender, step);
                }
                self.prepares.entry((v, s, d)).or_default().entry(m.sender).or_insert(m);
                self.check_prepared(v, s, d, step);
            }
            Payload::Commit { view, seq, digest } => {
                let (v, s, d) = (*view, *seq, *digest);
                if s <= self.height() {
                    return;
                }
                if s > self.height() + 1 {
                    self.request_sync(m.sender, step);
                }
                self.commits.entry((v, s, d)).or_default().entry(m.sender).or_insert(m);
                self.check_committed(v, s, d, step);
            }
            Payload::ViewChange { .. } => self.handle_view_change(m, step),
            Payload::NewView { .. } => self.handle_new_view(m, step),
            Payload::SyncRequest { from_height } => {
                let from = *from_height;
                if m.sender != self.id {
                    self.respond_sync(m.sender, from, step);
                }
            }
            Payload::SyncResponse { blocks } => {
                let blocks = blocks.clone();
                for cb in blocks {
                    let h = cb.block.header.height;
                    if h <= self.height() {
                        continue;
                    }
                    if h != self.height() + 1 || !self.import(cb, step) {
                        break;
                    }
                }
            }
        }
    }

    fn handle_pre_prepare(&mut self, m: SignedMessage, step: &mut Step) {
        let Payload::PrePrepare {
            view,
            seq,
            digest,
            block,
        } = &m.payload
        else {
            return;
        };
        let (v, s, d) = (*view, *seq, *digest);
        if m.sender != self.leader(v) || block.hash() != d || block.header.height != s || s <= self.height() {
            return;
        }
        let known = self.blocks.range((s, Digest32::ZERO)..).take_while(|((bs, _), _)| *bs == s).count();
        if known < MAX_BLOCKS_PER_SEQ {
            self.blocks.entry((s, d)).or_insert_with(|| block.clone());
        }
        match self.pre_prepares.get(&(v, s)) {
            Some(prev) if pre_prepare_digest(prev) != d => {
                if !self.evidence.iter().any(|e| e.view == v && e.seq == s) {
                    self.evidence.push(Evidence {
                        view: v,
                        seq: s,
                        leader: m.sender,
                        first: prev.clone(),
                        second: m.clone(),
                    });
                }
            }
            Some(_) => {}
            None => {
                self.pre_prepares.insert((v, s), m.clone());
            }
        }
        if s > self.height() + 1 {
            self.request_sync(m.sender, step);
        }
        self.try_accept(v, s, step);
        let waiting: Vec<_> = self
            .commits
            .keys()
            .filter(|(_, cs, cd)| *cs == s && *cd == d)
            .copied()
            .collect();
        for (cv, cs, cd) in waiting {
            self.check_committed(cv, cs, cd, step);
        }
    }

    /// Executes `block` against the committed state once and caches the outcome.
    fn validate(&mut self, block: &Block) -> bool {
        let d = block.hash();
        if let Some(c) = self.candidates.get(&d) {
            return matches!(c, Candidate::Valid(_));
        }
        let proposer_ok = self.peers.iter().any(|k| k.address() == block.header.proposer);
        let outcome = if proposer_ok && check_block(Some(&self.chain.tip().header), block).is_ok() {
            match execute_block(&self.state, &mut self.executor, block) {
                Ok(post) => Candidate::Valid(Box::new(post)),
                Err(_) => Candidate::Invalid,
            }
        } else {
            Candidate::Invalid
        };
        let ok = matches!(outcome, Candidate::Valid(_));
        self.candidates.insert(d, outcome);
        ok
    }

    fn try_accept(&mut self, v: u64, s: u64, step: &mut Step) {
        if !self.active
            || self.status != Status::Normal
            || v != self.view
            || s != self.height() + 1
            || self.sent_prepare.contains(&(v, s))
        {
            return;
        }
        let Some(pp) = self.pre_prepares.get(&(v, s)) else {
            return;
        };
        let Payload::PrePrepare { digest, block, .. } = &pp.payload else {
            return;
        };
        let (d, block) = (*digest, block.clone());
        if !self.validate(&block) {
            return;
        }
        self.sent_prepare.insert((v, s));
        self.send(step, Target::All, Payload::Prepare { view: v, seq: s, digest: d });
    }

    fn check_prepared(&mut self, v: u64, s: u64, d: Digest32, step: &mut Step) {
        if self.status != Status::Normal
            || v != self.view
            || s != self.height() + 1
            || !self.sent_prepare.contains(&(v, s))
            || self.sent_commit.contains(&(v, s))
        {
            return;
        }
        let Some(pp) = self.pre_prepares.get(&(v, s)) else {
            return;
        };
        if pre_prepare_digest(pp) != d {
            return;
        }
        let Some(ps) = self.prepares.get(&(v, s, d)) else {
            return;
        };
        if ps.len() < self.quorum.quorum {
            return;
        }
        let proof = PreparedProof {
            pre_prepare: Box::new(pp.clone()),
            prepares: ps.values().take(self.quorum.quorum).cloned().collect(),
        };
        if self.prepared.as_ref().is_none_or(|(pv, _)| *pv < v) {
            self.prepared = Some((v, proof));
        }
        self.sent_commit.insert((v, s));
        self.send(step, Target::All, Payload::Commit { view: v, seq: s, digest: d });
    }

    fn check_committed(&mut self, v: u64, s: u64, d: Digest32, step: &mut Step) {
        if s != self.height() + 1 {
            return;
        }
        let Some(cs) = self.commits.get(&(v, s, d)) else {
            return;
        };
        if cs.len() < self.quorum.quorum {
            return;
        }
        let cert: Vec<SignedMessage> = cs.values().take(self.quorum.quorum).cloned().collect();
        let Some(block) = self.blocks.get(&(s, d)).cloned() else {
            let from = cert[0].sender;
            self.request_sync(from, step);
            return;
        };
        if !self.validate(&block) {
            return;
        }
        self.commit(block, cert, v, step);
    }

    fn commit(&mut self, block: Block, cert: Vec<SignedMessage>, view: u64, step: &mut Step) {
        let d = block.hash();
        let Some(Candidate::Valid(post)) = self.candidates.remove(&d) else {
            return;
        };
        let height = block.header.height;
        let included: HashSet<Digest32> = block.transactions.iter().map(Transaction::hash).collect();
        if self.chain.append(block).is_err() {
            return;
        }
        self.state = *post;
        self.certs.push(cert);
        self.commit_views.push(view);
        self.pool.remove_all(&included);
        self.pool_scratch = None;
        self.pre_prepares.retain(|(_, s), _| *s > height);
        self.blocks.retain(|(s, _), _| *s > height);
        self.prepares.retain(|(_, s, _), _| *s > height);
        self.commits.retain(|(_, s, _), _| *s > height);
        self.sent_prepare.retain(|(_, s)| *s > height);
        self.sent_commit.retain(|(_, s)| *s > height);
        self.candidates.clear();
        self.prepared = None;
        self.timer = None;
        self.timeout = self.config.timeout_ticks;
        step.committed.push(height);
        self.refresh_membership();

        self.try_accept(self.view, height + 1, step);
        let next: Vec<_> = self.commits.keys().filter(|(_, s, _)| *s == height + 1).copied().collect();
        for (v, s, d) in next {
            self.check_committed(v, s, d, step);
        }
        if self.status == Status::ViewChanging {
            self.try_new_view(self.view, step);
        }
    }

    fn refresh_membership(&mut self) {
        let peers: Vec<PublicKey> = replica_set(&self.state).iter().map(|m| m.node_public_key).collect();
        if peers == self.peers {
            return;
        }
        match peers.iter().position(|k| *k == self.key.public_key()) {
            Some(id) => self.id = id,
            None => self.active = false,
        }
        if let Ok(q) = QuorumConfig::new(peers.len(), self.state.params().fault_bound as usize) {
            self.quorum = q;
        }
        self.peers = peers;
    }

    fn try_propose(&mut self, step: &mut Step) {
        let seq = self.height() + 1;
        if !self.active
            || self.status != Status::Normal
            || !self.is_leader()
            || self.pre_prepares.contains_key(&(self.view, seq))
            || self.ready_count() == 0
        {
            return;
        }
        if let Some(block) = self.build_block() {
            let digest = block.hash();
            self.send(
                step,
                Target::All,
                Payload::PrePrepare {
                    view: self.view,
                    seq,
                    digest,
                    block,
                },
            );
        }
    }

    /// Block of valid pooled transactions on top of the committed tip.
    fn build_block(&mut self) -> Option<Block> {
        let parent = self.chain.tip().header.clone();
        let ctx = BlockContext {
            height: parent.height + 1,
            timestamp: self.now.max(parent.timestamp),
        };
        let (txs, post) = select_valid(
            &self.state,
            &mut self.executor,
            self.pool.iter(),
            &ctx,
            self.config.max_block_txs,
        );
        if txs.is_empty() {
            return None;
        }
        let block = Block::build(&parent, txs, post.state_root(), ctx.timestamp, &self.key);
        self.candidates.insert(block.hash(), Candidate::Valid(Box::new(post)));
        Some(block)
    }

    // View change ---------------------------------------------------------

    fn view_change_payload(&self, new_view: u64) -> Payload {
        Payload::ViewChange {
            new_view,
            last_committed_seq: self.height(),
            commit_proof: self.certs.last().cloned().unwrap_or_default(),
            prepared: self.prepared.as_ref().map(|(_, p)| p.clone()),
        }
    }

    fn start_view_change(&mut self, v: u64, step: &mut Step) {
        if v <= self.view || !self.active {
            return;
        }
        self.view = v;
        self.status = Status::ViewChanging;
        self.timeout = (self.timeout * 2).min(self.config.max_timeout_ticks);
        self.timer = Some(self.now + self.timeout);
        let payload = self.view_change_payload(v);
        self.send(step, Target::All, payload);
    }

    fn verify_cert(&mut self, commits: &[SignedMessage], seq: u64) -> Option<(u64, Digest32)> {
        if commits.len() < self.quorum.quorum {
            return None;
        }
        let Payload::Commit { view, digest, .. } = commits[0].payload else {
            return None;
        };
        let mut senders = BTreeSet::new();
        for c in commits {
            match c.payload {
                Payload::Commit {
                    view: cv,
                    seq: cs,
                    digest: cd,
                } if cv == view && cs == seq && cd == digest => {}
                _ => return None,
            }
            if !senders.insert(c.sender) || !self.check_sig(c) {
                return None;
            }
        }
        Some((view, digest))
    }

    fn verify_prepared(&mut self, p: &PreparedProof, seq: u64) -> Option<(u64, Digest32, Block)> {
        let Payload::PrePrepare {
            view,
            seq: s,
            digest,
            block,
        } = &p.pre_prepare.payload
        else {
            return None;
        };
        if *s != seq
            || p.pre_prepare.sender != self.leader(*view)
            || block.hash() != *digest
            || block.header.height != seq
            || p.prepares.len() < self.quorum.quorum
            || !self.check_sig(&p.pre_prepare)
        {
            return None;
        }
        let mut senders = BTreeSet::new();
        for m in &p.prepares {
            match m.payload {
                Payload::Prepare {
                    view: pv,
                    seq: ps,
                    digest: pd,
                } if pv == *view && ps == seq && pd == *digest => {}
                _ => return None,
            }
            if !senders.insert(m.sender) || !self.check_sig(m) {
                return None;
            }
        }
        Some((*view, *digest, block.clone()))
    }

    fn verify_view_change(&mut self, m: &SignedMessage) -> Option<(u64, VcInfo)> {
        let Payload::ViewChange {
            new_view,
            last_committed_seq,
            commit_proof,
            prepared,
        } = &m.payload
        else {
            return None;
        };
        if *last_committed_seq > 0 {
            self.verify_cert(commit_proof, *last_committed_seq)?;
        } else if !commit_proof.is_empty() {
            return None;
        }
        let prepared = match prepared {
            Some(p) => Some(self.verify_prepared(p, last_committed_seq + 1)?),
            None => None,
        };
        Some((
            *new_view,
            VcInfo {
                last_committed: *last_committed_seq,
                prepared,
            },
        ))
    }

    fn handle_view_change(&mut self, m: SignedMessage, step: &mut Step) {
        let Some((v, info)) = self.verify_view_change(&m) else {
            return;
        };
        let sender = m.sender;
        if sender != self.id {
            if info.last_committed < self.height() {
                self.push_sync(sender, info.last_committed + 1, step);
            } else if info.last_committed > self.height() {
                self.request_sync(sender, step);
            }
            // A straggler asking for a view that already started gets its NewView.
            if self.status == Status::Normal && v <= self.view && self.echoed.insert((self.view, sender)) {
                if let Some(nv) = self.new_views.get(&self.view).cloned() {
                    step.outbound.push(Outbound {
                        to: Target::One(sender),
                        message: nv,
                    });
                }
            }
            // The leader of our pending view may have lost our ViewChange.
            if self.status == Status::ViewChanging
                && v == self.view
                && sender == self.leader(v)
                && self.echoed.insert((v, sender))
            {
                if let Some(own) = self.view_changes.get(&v).and_then(|vc| vc.get(&self.id)).cloned() {
                    step.outbound.push(Outbound {
                        to: Target::One(sender),
                        message: own,
                    });
                }
            }
        }
        if v < self.view {
            return;
        }
        self.view_changes.entry(v).or_default().insert(sender, m);

        // f+1 replicas want a higher view: join the smallest of them.
        let mut lowest: BTreeMap<ReplicaId, u64> = BTreeMap::new();
        for (view, vcs) in self.view_changes.range(self.view + 1..) {
            for j in vcs.keys() {
                if *j != self.id {
                    lowest.entry(*j).or_insert(*view);
                }
            }
        }
        if lowest.len() > self.quorum.f {
            if let Some(target) = lowest.values().min().copied() {
                self.start_view_change(target, step);
            }
        }
        self.try_new_view(v, step);
    }

    fn select(infos: &[VcInfo]) -> (u64, Option<(u64, Digest32, Block)>) {
        let h = infos.iter().map(|i| i.last_committed).max().unwrap_or(0);
        let mut chosen: Option<(u64, Digest32, Block)> = None;
        for i in infos.iter().filter(|i| i.last_committed == h) {
            if let Some(p) = &i.prepared {
                if chosen.as_ref().is_none_or(|c| p.0 > c.0) {
                    chosen = Some(p.clone());
                }
            }
        }
        (h, chosen)
    }

    fn try_new_view(&mut self, v: u64, step: &mut Step) {
        if !self.active
            || self.leader(v) != self.id
            || self.sent_new_view.contains(&v)
            || v < self.view
            || (v == self.view && self.status == Status::Normal)
        {
            return;
        }
        let others = self.view_changes.get(&v).map_or(0, |vcs| vcs.keys().filter(|j| **j != self.id).count());
        if others + 1 < self.quorum.quorum {
            return;
        }
        // Our own entry must reflect everything we have committed.
        let stale = match self.view_changes.get(&v).and_then(|vcs| vcs.get(&self.id)) {
            Some(own) => match &own.payload {
                Payload::ViewChange { last_committed_seq, .. } => *last_committed_seq < self.height(),
                _ => true,
            },
            None => true,
        };
        if stale {
            let own = SignedMessage::sign(&self.key, self.id, self.view_change_payload(v));
            self.view_changes.entry(v).or_default().insert(self.id, own);
        }
        let vcs = &self.view_changes[&v];
        let mut subset = vec![vcs[&self.id].clone()];
        subset.extend(
            vcs.iter()
                .filter(|(j, _)| **j != self.id)
                .take(self.quorum.quorum - 1)
                .map(|(_, m)| m.clone()),
        );
        let mut infos = Vec::with_capacity(subset.len());
        let mut ahead = None;
        for m in &subset {
            let Some((_, info)) = self.verify_view_change(m) else {
                return;
            };
            if info.last_committed > self.height() {
                ahead = Some(m.sender);
            }
            infos.push(info);
        }
        let (h, chosen) = Self::select(&infos);
        if let Some(j) = ahead {
            self.request_sync(j, step);
            return;
        }
        debug_assert_eq!(h, self.height());
        let seq = h + 1;
        let pre_prepare = match chosen {
            Some((_, digest, block)) => Some(SignedMessage::sign(
                &self.key,
                self.id,
                Payload::PrePrepare {
                    view: v,
                    seq,
                    digest,
                    block,
                },
            )),
            None => self.build_block().map(|block| {
                SignedMessage::sign(
                    &self.key,
                    self.id,
                    Payload::PrePrepare {
                        view: v,
                        seq,
                        digest: block.hash(),
                        block,
                    },
                )
            }),
        };
        self.sent_new_view.insert(v);
        self.send(
            step,
            Target::All,
            Payload::NewView {
                new_view: v,
                proof: subset,
                pre_prepare: pre_prepare.map(Box::new),
            },
        );
    }

    fn handle_new_view(&mut self, m: SignedMessage, step: &mut Step) {
        let Payload::NewView {
            new_view,
            proof,
            pre_prepare,
        } = &m.payload
        else {
            return;
        };
        let v = *new_view;
        if m.sender != self.leader(v) || v < self.view || (v == self.view && self.status == Status::Normal) {
            return;
        }
        let mut senders = BTreeSet::new();
        let mut infos = Vec::with_capacity(proof.len());
        for vc in proof {
            if !senders.insert(vc.sender) || !self.check_sig(vc) {
                return;
            }
            match self.verify_view_change(vc) {
                Some((vv, info)) if vv == v => infos.push(info),
                _ => return,
            }
        }
        if senders.len() < self.quorum.quorum {
            return;
        }
        let (h, chosen) = Self::select(&infos);
        match pre_prepare.as_deref() {
            Some(pp) => {
                let Payload::PrePrepare {
                    view,
                    seq,
                    digest,
                    block,
                } = &pp.payload
                else {
                    return;
                };
                if *view != v
                    || *seq != h + 1
                    || pp.sender != m.sender
                    || block.hash() != *digest
                    || chosen.as_ref().is_some_and(|c| c.1 != *digest)
                    || !self.check_sig(pp)
                {
                    return;
                }
            }
            None if chosen.is_some() => return,
            None => {}
        }
        let leader = m.sender;
        let pp = pre_prepare.as_deref().cloned();
        self.new_views.insert(v, m);
        self.view = v;
        self.status = Status::Normal;
        self.timer = None;
        if let Some(pp) = pp {
            self.handle_pre_prepare(pp, step);
        }
        self.try_accept(v, self.height() + 1, step);
        if self.height() < h {
            self.request_sync(leader, step);
        }
    }

    // State transfer ------------------------------------------------------

    fn request_sync(&mut self, from: ReplicaId, step: &mut Step) {
        if from == self.id || self.last_sync_request.is_some_and(|t| self.now < t + self.config.sync_interval) {
            return;
        }
        self.last_sync_request = Some(self.now);
        let from_height = self.height() + 1;
        self.send(step, Target::One(from), Payload::SyncRequest { from_height });
    }

    fn push_sync(&mut self, to: ReplicaId, from_height: u64, step: &mut Step) {
        if self.sync_pushed.get(&to).is_some_and(|t| self.now < t + self.config.sync_interval) {
            return;
        }
        self.sync_pushed.insert(to, self.now);
        self.respond_sync(to, from_height, step);
    }

    fn respond_sync(&mut self, to: ReplicaId, from_height: u64, step: &mut Step) {
        if from_height == 0 || from_height > self.height() {
            return;
        }
        let last = self.height().min(from_height + self.config.max_sync_blocks as u64 - 1);
        let blocks = (from_height..=last)
            .map(|h| CertifiedBlock {
                block: self.chain.get(h).expect("height within chain").clone(),
                commits: self.certs[h as usize].clone(),
            })
            .collect();
        self.send(step, Target::One(to), Payload::SyncResponse { blocks });
    }

    /// Commits a certified block fetched from a peer.
    fn import(&mut self, cb: CertifiedBlock, step: &mut Step) -> bool {
        let seq = self.height() + 1;
        let Some((view, digest)) = self.verify_cert(&cb.commits, seq) else {
            return false;
        };
        if cb.block.hash() != digest || !self.validate(&cb.block) {
            return false;
        }
        self.commit(cb.block, cb.commits, view, step);
        self.height() == seq
    }
}
