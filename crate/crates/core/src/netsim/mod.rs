//! Deterministic network simulation and scenario runner.
//!
//! Time advances in integer ticks. Each tick the runner hands due client
//! submissions to every replica, delivers due messages in (due tick, sender,
//! send order) order, then ticks every replica in id order. All randomness
//! comes from seeded ChaCha8 streams, so a scenario file and its seed fully
//! determine the run and its report.
//!
//! ```toml
//! name = "baseline"
//! max_ticks = 5000
//!
//! [network]
//! seed = 7
//! latency = [1, 3]
//! drop_probability = "1/20"
//! byzantine_delay = 10
//! [[network.partitions]]
//! replicas = [0, 1]
//! start = 100
//! end = 200
//!
//! [replicas]
//! n = 4
//! f = 1
//!
//! [byzantine]
//! 3 = "silent"
//!
//! [workload]
//! transactions = 200
//! seed = 1
//! ```

mod adversary;
mod network;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::campus::{genesis_config, node_key};
use crate::codec::Decode;
use crate::consensus::{ConsensusError, Outbound, QuorumConfig, Replica, ReplicaConfig, SignedMessage, Status};
use crate::genesis::{genesis, GenesisConfig, GenesisError};
use crate::workload::{generate, Submission, WorkloadConfig};

use adversary::{recipients, wires, Adversary};
pub use network::{Behavior, Delivery, MessageStats, Network, NetworkConfig, Partition, Ratio};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Genesis(#[from] GenesisError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_latency")]
    pub latency: (u64, u64),
    #[serde(default = "default_drop")]
    pub drop_probability: Ratio,
    #[serde(default)]
    pub partitions: Vec<Partition>,
    #[serde(default = "default_byzantine_delay")]
    pub byzantine_delay: u64,
}

fn default_latency() -> (u64, u64) {
    (1, 3)
}

fn default_drop() -> Ratio {
    Ratio::ZERO
}

fn default_byzantine_delay() -> u64 {
    10
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            seed: 0,
            latency: default_latency(),
            drop_probability: Ratio::ZERO,
            partitions: Vec::new(),
            byzantine_delay: default_byzantine_delay(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicaSection {
    pub n: usize,
    /// Defaults to floor((n - 1) / 3).
    #[serde(default)]
    pub f: Option<usize>,
    #[serde(default = "default_timeout")]
    pub timeout_ticks: u64,
    #[serde(default = "default_max_block_txs")]
    pub max_block_txs: usize,
}

fn default_timeout() -> u64 {
    ReplicaConfig::default().timeout_ticks
}

fn default_max_block_txs() -> usize {
    ReplicaConfig::default().max_block_txs
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
    #[serde(default)]
    pub network: NetworkSection,
    pub replicas: ReplicaSection,
    /// Replica id (as a string key) to behaviour.
    #[serde(default)]
    pub byzantine: BTreeMap<String, Behavior>,
    #[serde(default)]
    pub workload: WorkloadConfig,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_max_ticks() -> u64 {
    10_000
}

impl Scenario {
    /// Scenario with `n` replicas, a reliable network and no workload.
    pub fn new(name: &str, n: usize) -> Self {
        Scenario {
            name: name.into(),
            max_ticks: default_max_ticks(),
            network: NetworkSection::default(),
            replicas: ReplicaSection {
                n,
                f: None,
                timeout_ticks: default_timeout(),
                max_block_txs: default_max_block_txs(),
            },
            byzantine: BTreeMap::new(),
            workload: WorkloadConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.quorum()?;
        s.byzantine_map()?;
        s.network_config()?.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn quorum(&self) -> Result<QuorumConfig, ScenarioError> {
        let n = self.replicas.n;
        Ok(match self.replicas.f {
            Some(f) => QuorumConfig::new(n, f)?,
            None => QuorumConfig::for_n(n)?,
        })
    }

    pub fn with_byzantine(mut self, id: usize, behavior: Behavior) -> Self {
        self.byzantine.insert(id.to_string(), behavior);
        self
    }

    pub fn byzantine_map(&self) -> Result<BTreeMap<usize, Behavior>, ScenarioError> {
        self.byzantine
            .iter()
            .map(|(k, b)| {
                let id: usize = k
                    .parse()
                    .map_err(|_| ScenarioError::Invalid(format!("byzantine key {k:?} is not a replica id")))?;
                if id >= self.replicas.n {
                    return Err(ScenarioError::Invalid(format!(
                        "byzantine replica {id} out of range for n = {}",
                        self.replicas.n
                    )));
                }
                Ok((id, *b))
            })
            .collect()
    }

    pub fn network_config(&self) -> Result<NetworkConfig, ScenarioError> {
        Ok(NetworkConfig {
            seed: self.network.seed,
            latency: self.network.latency,
            drop_probability: self.network.drop_probability,
            partitions: self.network.partitions.clone(),
            byzantine: self.byzantine_map()?,
            byzantine_delay: self.network.byzantine_delay,
        })
    }

    pub fn replica_config(&self) -> ReplicaConfig {
        ReplicaConfig {
            timeout_ticks: self.replicas.timeout_ticks,
            max_block_txs: self.replicas.max_block_txs,
            ..ReplicaConfig::default()
        }
    }

    /// Campus genesis with one member per replica.
    pub fn genesis_config(&self) -> Result<GenesisConfig, ScenarioError> {
        let q = self.quorum()?;
        let mut cfg = genesis_config(q.n);
        cfg.fault_bound = Some(q.f as u32);
        Ok(cfg)
    }
}

/// A running simulation.
pub struct Simulation {
    scenario: Scenario,
    genesis: GenesisConfig,
    replicas: Vec<Replica>,
    adversaries: BTreeMap<usize, Adversary>,
    network: Network,
    submissions: Vec<Submission>,
    next_submission: usize,
    tick: u64,
    quiescent: bool,
}

impl Simulation {
    /// Builds the replicas and generates the scenario's workload.
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        let genesis = scenario.genesis_config()?;
        let w = &scenario.workload;
        let txs = generate(&genesis, w.seed, w.transactions)?;
        let submissions = w.schedule(txs);
        Self::with_submissions(scenario, genesis, submissions)
    }

    /// Builds the replicas over a caller-supplied genesis and submissions. The
    /// genesis members must use the campus node keys.
    pub fn with_submissions(
        scenario: Scenario,
        genesis_cfg: GenesisConfig,
        mut submissions: Vec<Submission>,
    ) -> Result<Self, ScenarioError> {
        let q = scenario.quorum()?;
        if genesis_cfg.members.len() != q.n {
            return Err(ScenarioError::Invalid(format!(
                "genesis has {} members but the scenario has {} replicas",
                genesis_cfg.members.len(),
                q.n
            )));
        }
        let (block, state) = genesis(&genesis_cfg, &node_key(0))?;
        let config = scenario.replica_config();
        let replicas = (0..q.n)
            .map(|i| Replica::new(node_key(i), block.clone(), state.clone(), config.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let net_cfg = scenario.network_config()?;
        let adversaries = net_cfg
            .byzantine
            .iter()
            .map(|(&id, &b)| (id, Adversary::new(id, b, node_key(id))))
            .collect();
        submissions.sort_by_key(|s| s.tick);
        Ok(Simulation {
            network: Network::new(net_cfg)?,
            scenario,
            genesis: genesis_cfg,
            replicas,
            adversaries,
            submissions,
            next_submission: 0,
            tick: 0,
            quiescent: false,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn genesis_config(&self) -> &GenesisConfig {
        &self.genesis
    }

    pub fn replicas(&self) -> &[Replica] {
        &self.replicas
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn is_honest(&self, id: usize) -> bool {
        !self.adversaries.contains_key(&id)
    }

    fn honest(&self) -> impl Iterator<Item = &Replica> {
        self.replicas.iter().filter(|r| self.is_honest(r.id()))
    }

    fn route(&mut self, from: usize, outbound: Vec<Outbound>) {
        let n = self.replicas.len();
        let now = self.tick;
        let mut queue = outbound;
        while !queue.is_empty() {
            for out in std::mem::take(&mut queue) {
                let wire = match self.adversaries.get_mut(&from) {
                    Some(adv) => {
                        let delay = self.network.config().byzantine_delay;
                        let w = adv.outgoing(out, n, delay, &mut self.network);
                        queue.extend(adv.take_pending());
                        w
                    }
                    None => wires(&recipients(out.to, from, n), &out.message, 0),
                };
                for w in wire {
                    self.network.count_kind(w.kind);
                    self.network.send(now, from, w.to, w.bytes, w.extra_delay);
                }
            }
        }
    }

    /// Advances the clock by one tick. Returns false once the run is over.
    pub fn step(&mut self) -> bool {
        if self.quiescent || self.tick >= self.scenario.max_ticks {
            return false;
        }
        self.tick += 1;
        let t = self.tick;
        while let Some(s) = self.submissions.get(self.next_submission) {
            if s.tick > t {
                break;
            }
            for r in &mut self.replicas {
                r.submit(s.tx.clone());
            }
            self.next_submission += 1;
        }
        for d in self.network.deliver(t) {
            let Ok(msg) = SignedMessage::decode(&d.bytes) else {
                continue;
            };
            let extra = match self.adversaries.get_mut(&d.to) {
                Some(adv) => adv.observe(&msg),
                None => Vec::new(),
            };
            let step = self.replicas[d.to].on_message(msg);
            self.route(d.to, step.outbound);
            self.route(d.to, extra);
        }
        for i in 0..self.replicas.len() {
            let step = self.replicas[i].on_tick(t);
            self.route(i, step.outbound);
        }
        self.quiescent = self.next_submission == self.submissions.len() && self.settled();
        !self.quiescent
    }

    /// Honest active replicas agree on the height and have nothing left to do.
    fn settled(&self) -> bool {
        let mut heights = self.honest().filter(|r| r.is_active()).map(|r| (r.height(), r.is_idle()));
        let Some((h0, idle0)) = heights.next() else {
            return true;
        };
        idle0 && heights.all(|(h, idle)| h == h0 && idle)
    }

    pub fn run(&mut self) -> SimulationReport {
        while self.step() {}
        self.report()
    }

    /// Heights at which two honest replicas hold different blocks.
    pub fn divergent_heights(&self) -> Vec<u64> {
        let max = self.honest().map(|r| r.height()).max().unwrap_or(0);
        (0..=max)
            .filter(|&h| {
                let hashes: BTreeSet<_> = self.honest().filter_map(|r| r.chain().get(h)).map(|b| b.hash()).collect();
                hashes.len() > 1
            })
            .collect()
    }

    pub fn report(&self) -> SimulationReport {
        let byz = self.network.config().byzantine.clone();
        let replicas: Vec<ReplicaReport> = self
            .replicas
            .iter()
            .map(|r| {
                let h = r.height();
                ReplicaReport {
                    id: r.id(),
                    honest: self.is_honest(r.id()),
                    active: r.is_active(),
                    committed_height: h,
                    committed_txs: r.chain().blocks().iter().map(|b| b.transactions.len()).sum(),
                    view: r.view(),
                    status: r.status(),
                    state_root: r.state().state_root().to_string(),
                    tip: r.chain().tip().hash().to_string(),
                    max_commit_view: (0..=h).filter_map(|x| r.commit_view(x)).max().unwrap_or(0),
                    pending: r.pool().len(),
                }
            })
            .collect();
        let committed_txs = replicas
            .iter()
            .filter(|r| r.honest)
            .map(|r| r.committed_txs)
            .min()
            .unwrap_or(0);
        let mut evidence = Vec::new();
        for r in self.honest() {
            for e in r.evidence() {
                let (a, b) = e.digests();
                evidence.push(EvidenceReport {
                    reporter: r.id(),
                    view: e.view,
                    seq: e.seq,
                    leader: e.leader,
                    first_digest: a.to_string(),
                    second_digest: b.to_string(),
                });
            }
        }
        let divergent_heights = self.divergent_heights();
        let q = self.replicas[0].quorum();
        SimulationReport {
            scenario: self.scenario.name.clone(),
            seed: self.network.config().seed,
            n: q.n,
            f: q.f,
            byzantine: byz.iter().map(|(k, v)| (k.to_string(), v.name().to_owned())).collect(),
            ticks: self.tick,
            completed: self.quiescent && committed_txs == self.submissions.len(),
            submitted: self.submissions.len(),
            committed_txs,
            divergence: !divergent_heights.is_empty(),
            divergent_heights,
            replicas,
            messages: self.network.stats().clone(),
            evidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReplicaReport {
    pub id: usize,
    pub honest: bool,
    pub active: bool,
    pub committed_height: u64,
    pub committed_txs: usize,
    pub view: u64,
    pub status: Status,
    pub state_root: String,
    pub tip: String,
    /// Highest view in which any of this replica's blocks was certified.
    pub max_commit_view: u64,
    pub pending: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvidenceReport {
    pub reporter: usize,
    pub view: u64,
    pub seq: u64,
    pub leader: usize,
    pub first_digest: String,
    pub second_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SimulationReport {
    pub scenario: String,
    pub seed: u64,
    pub n: usize,
    pub f: usize,
    pub byzantine: BTreeMap<String, String>,
    pub ticks: u64,
    /// Every submitted transaction committed on every honest replica and the
    /// run went quiet before `max_ticks`.
    pub completed: bool,
    pub submitted: usize,
    /// Fewest transactions committed by any honest replica.
    pub committed_txs: usize,
    pub divergence: bool,
    pub divergent_heights: Vec<u64>,
    pub replicas: Vec<ReplicaReport>,
    pub messages: MessageStats,
    pub evidence: Vec<EvidenceReport>,
}

impl SimulationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario   {} (seed {})", self.scenario, self.seed);
        let _ = writeln!(s, "replicas   n={} f={}", self.n, self.f);
        for (id, b) in &self.byzantine {
            let _ = writeln!(s, "byzantine  {id}: {b}");
        }
        let _ = writeln!(s, "ticks      {}", self.ticks);
        let _ = writeln!(s, "committed  {}/{} transactions", self.committed_txs, self.submitted);
        let _ = writeln!(s, "completed  {}", self.completed);
        let _ = writeln!(s, "divergence {}", self.divergence);
        for r in &self.replicas {
            let _ = writeln!(
                s,
                "  replica {} {:<9} height={} view={} txs={} root={}",
                r.id,
                if r.honest { "honest" } else { "byzantine" },
                r.committed_height,
                r.view,
                r.committed_txs,
                &r.state_root[..16],
            );
        }
        let m = &self.messages;
        let _ = writeln!(
            s,
            "messages   sent={} delivered={} dropped={} partitioned={} corrupted={} suppressed={}",
            m.sent, m.delivered, m.dropped, m.partitioned, m.corrupted, m.suppressed
        );
        for (kind, count) in &m.by_kind {
            let _ = writeln!(s, "  {kind:<14} {count}");
        }
        for e in &self.evidence {
            let _ = writeln!(
                s,
                "evidence   replica {} saw leader {} equivocate at view {} seq {}",
                e.reporter, e.leader, e.view, e.seq
            );
        }
        s
    }
}

/// Loads and runs a scenario file.
pub fn run_scenario(path: impl AsRef<Path>) -> Result<SimulationReport, ScenarioError> {
    let scenario = Scenario::load(path)?;
    Ok(Simulation::new(scenario)?.run())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, txs: usize) -> Scenario {
        let mut s = Scenario::new("t", n);
        s.workload = WorkloadConfig {
            transactions: txs,
            seed: 2,
            ..Default::default()
        };
        s.max_ticks = 4000;
        s
    }

    #[test]
    fn parses_documented_example() {
        let text = r#"
            name = "baseline"
            max_ticks = 5000
            [network]
            seed = 7
            latency = [1, 3]
            drop_probability = "1/20"
            [[network.partitions]]
            replicas = [0, 1]
            start = 100
            end = 200
            [replicas]
            n = 4
            f = 1
            [byzantine]
            3 = "silent"
            [workload]
            transactions = 200
            seed = 1
        "#;
        let s = Scenario::from_toml_str(text).unwrap();
        assert_eq!(s.network.drop_probability, Ratio::new(1, 20).unwrap());
        assert_eq!(s.byzantine_map().unwrap()[&3], Behavior::Silent);
        assert_eq!(s.quorum().unwrap().quorum, 3);
    }

    #[test]
    fn rejects_too_few_replicas() {
        let text = "[replicas]\nn = 3\nf = 1\n";
        assert!(matches!(
            Scenario::from_toml_str(text),
            Err(ScenarioError::Consensus(ConsensusError::QuorumTooSmall { n: 3, f: 1 }))
        ));
        let text = "[replicas]\nn = 4\n[byzantine]\n7 = \"silent\"\n";
        assert!(matches!(Scenario::from_toml_str(text), Err(ScenarioError::Invalid(_))));
    }

    #[test]
    fn baseline_commits_everything() {
        let report = Simulation::new(small(4, 60)).unwrap().run();
        assert!(report.completed, "{}", report.to_text());
        assert!(!report.divergence);
        assert_eq!(report.committed_txs, 60);
        let roots: BTreeSet<_> = report.replicas.iter().map(|r| r.state_root.clone()).collect();
        assert_eq!(roots.len(), 1);
    }

    #[test]
    fn reports_are_reproducible() {
        let mut s = small(4, 40);
        s.network.drop_probability = Ratio::new(1, 10).unwrap();
        s.network.latency = (1, 5);
        let a = Simulation::new(s.clone()).unwrap().run().to_json();
        let b = Simulation::new(s).unwrap().run().to_json();
        assert_eq!(a, b);
    }
}
