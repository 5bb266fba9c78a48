use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ScenarioError;

/// A probability `num / den` with `num <= den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ratio {
    num: u64,
    den: u64,
}

impl Ratio {
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };
    pub const ONE: Ratio = Ratio { num: 1, den: 1 };

    pub fn new(num: u64, den: u64) -> Result<Self, ScenarioError> {
        if den == 0 || num > den {
            return Err(ScenarioError::Invalid(format!("probability {num}/{den} is not in [0, 1]")));
        }
        Ok(Ratio { num, den })
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> bool {
        self.num > 0 && (self.num == self.den || rng.gen_range(0..self.den) < self.num)
    }
}

impl FromStr for Ratio {
    type Err = ScenarioError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ScenarioError::Invalid(format!("cannot parse probability {s:?}; use \"num/den\""));
        let (num, den) = match s.split_once('/') {
            Some((n, d)) => (n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?),
            None => (s.trim().parse().map_err(|_| bad())?, 1),
        };
        Ratio::new(num, den)
    }
}

impl TryFrom<String> for Ratio {
    type Error = ScenarioError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Ratio> for String {
    fn from(r: Ratio) -> String {
        r.to_string()
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Replicas in `replicas` are cut off from everyone else during
/// `start..=end` (checked at delivery time).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub replicas: BTreeSet<usize>,
    pub start: u64,
    pub end: u64,
}

impl Partition {
    fn blocks(&self, tick: u64, from: usize, to: usize) -> bool {
        (self.start..=self.end).contains(&tick) && self.replicas.contains(&from) != self.replicas.contains(&to)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behavior {
    /// Sends nothing.
    Silent,
    /// As leader, proposes two conflicting blocks; votes for every block it sees.
    Equivocate,
    /// Flips one byte of every outgoing message.
    CorruptPayload,
    /// Adds a fixed extra latency to every outgoing message.
    DelayAll,
}

impl Behavior {
    pub fn name(self) -> &'static str {
        match self {
            Behavior::Silent => "silent",
            Behavior::Equivocate => "equivocate",
            Behavior::CorruptPayload => "corrupt_payload",
            Behavior::DelayAll => "delay_all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub seed: u64,
    /// Inclusive (min, max) latency in ticks; min is at least 1.
    pub latency: (u64, u64),
    pub drop_probability: Ratio,
    pub partitions: Vec<Partition>,
    pub byzantine: BTreeMap<usize, Behavior>,
    /// Extra ticks added by `delay_all`.
    pub byzantine_delay: u64,
}

impl NetworkConfig {
    pub fn reliable(seed: u64) -> Self {
        NetworkConfig {
            seed,
            latency: (1, 1),
            drop_probability: Ratio::ZERO,
            partitions: Vec::new(),
            byzantine: BTreeMap::new(),
            byzantine_delay: 10,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let (lo, hi) = self.latency;
        if lo == 0 || lo > hi {
            return Err(ScenarioError::Invalid(format!(
                "latency range [{lo}, {hi}] must satisfy 1 <= min <= max"
            )));
        }
        for p in &self.partitions {
            if p.start > p.end {
                return Err(ScenarioError::Invalid(format!(
                    "partition interval {}..{} is reversed",
                    p.start, p.end
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MessageStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub partitioned: u64,
    pub corrupted: u64,
    pub suppressed: u64,
    pub by_kind: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub sent_at: u64,
    pub due: u64,
    pub from: usize,
    pub to: usize,
    pub bytes: Vec<u8>,
}

/// Deterministic message transport on a virtual clock.
#[derive(Debug)]
pub struct Network {
    config: NetworkConfig,
    rng: ChaCha8Rng,
    queue: BTreeMap<(u64, usize, u64), Delivery>,
    next_seq: u64,
    stats: MessageStats,
}

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self, ScenarioError> {
        config.validate()?;
        Ok(Network {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            queue: BTreeMap::new(),
            next_seq: 0,
            stats: MessageStats::default(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn stats(&self) -> &MessageStats {
        &self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub(crate) fn count_kind(&mut self, kind: &str) {
        *self.stats.by_kind.entry(kind.to_owned()).or_default() += 1;
    }

    pub(crate) fn note_corrupted(&mut self) {
        self.stats.corrupted += 1;
    }

    pub(crate) fn note_suppressed(&mut self) {
        self.stats.suppressed += 1;
    }

    /// Queues `bytes` from `from` to `to`, sent at `now`. Returns the due
    /// tick, or `None` if the message was dropped.
    pub fn send(&mut self, now: u64, from: usize, to: usize, bytes: Vec<u8>, extra_delay: u64) -> Option<u64> {
        self.stats.sent += 1;
        if self.config.drop_probability.sample(&mut self.rng) {
            self.stats.dropped += 1;
            return None;
        }
        let (lo, hi) = self.config.latency;
        let due = now + self.rng.gen_range(lo..=hi) + extra_delay;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.insert(
            (due, from, seq),
            Delivery {
                sent_at: now,
                due,
                from,
                to,
                bytes,
            },
        );
        Some(due)
    }

    /// Messages due at or before `tick`, in (due, sender, sequence) order.
    /// Messages crossing an active partition are discarded.
    pub fn deliver(&mut self, tick: u64) -> Vec<Delivery> {
        let mut out = Vec::new();
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > tick {
                break;
            }
            let d = entry.remove();
            if self.config.partitions.iter().any(|p| p.blocks(tick, d.from, d.to)) {
                self.stats.partitioned += 1;
                continue;
            }
            self.stats.delivered += 1;
            out.push(d);
        }
        out
    }
}
