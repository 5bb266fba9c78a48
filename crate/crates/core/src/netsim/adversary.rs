use std::collections::BTreeSet;

use rand::Rng;

use crate::codec::Encode;
use crate::consensus::{Outbound, Payload, ReplicaId, SignedMessage, Target};
use crate::crypto::{Digest32, KeyPair};
use crate::ledger::{Block, Seal};

use super::network::{Behavior, Network};

/// Rewrites the traffic of one Byzantine replica. The replica underneath runs
/// the honest protocol; only what leaves it is tampered with.
pub(crate) struct Adversary {
    id: ReplicaId,
    behavior: Behavior,
    key: KeyPair,
    /// (view, seq, digest) triples already voted for.
    voted: BTreeSet<(u64, u64, Digest32)>,
    pending: Vec<Outbound>,
}

/// A message ready for the wire.
pub(crate) struct Wire {
    pub to: ReplicaId,
    pub bytes: Vec<u8>,
    pub kind: &'static str,
    pub extra_delay: u64,
}

impl Adversary {
    pub fn new(id: ReplicaId, behavior: Behavior, key: KeyPair) -> Self {
        Adversary {
            id,
            behavior,
            key,
            voted: BTreeSet::new(),
            pending: Vec::new(),
        }
    }

    /// Votes an equivocating replica casts for every proposal it sees, on top
    /// of whatever the honest logic already sent.
    pub fn observe(&mut self, msg: &SignedMessage) -> Vec<Outbound> {
        if self.behavior != Behavior::Equivocate {
            return Vec::new();
        }
        let pp = match &msg.payload {
            Payload::PrePrepare { .. } => Some(msg),
            Payload::NewView {
                pre_prepare: Some(pp), ..
            } => Some(pp.as_ref()),
            _ => None,
        };
        match pp.map(|m| &m.payload) {
            Some(&Payload::PrePrepare { view, seq, digest, .. }) => self.vote(view, seq, digest),
            _ => Vec::new(),
        }
    }

    fn vote(&mut self, view: u64, seq: u64, digest: Digest32) -> Vec<Outbound> {
        if !self.voted.insert((view, seq, digest)) {
            return Vec::new();
        }
        [
            Payload::Prepare { view, seq, digest },
            Payload::Commit { view, seq, digest },
        ]
        .into_iter()
        .map(|p| Outbound {
            to: Target::All,
            message: SignedMessage::sign(&self.key, self.id, p),
        })
        .collect()
    }

    /// Expands one outbound message into wire messages, applying the behaviour.
    pub fn outgoing(&mut self, out: Outbound, n: usize, delay: u64, net: &mut Network) -> Vec<Wire> {
        let recipients = recipients(out.to, self.id, n);
        let kind = out.message.payload.kind();
        match self.behavior {
            Behavior::Silent => {
                for _ in &recipients {
                    net.note_suppressed();
                }
                Vec::new()
            }
            Behavior::DelayAll => wires(&recipients, &out.message, delay),
            Behavior::CorruptPayload => {
                let clean = out.message.encode();
                recipients
                    .into_iter()
                    .map(|to| {
                        let mut bytes = clean.clone();
                        let rng = net.rng();
                        let pos = rng.gen_range(0..bytes.len());
                        bytes[pos] ^= rng.gen_range(1..=255u8);
                        net.note_corrupted();
                        Wire {
                            to,
                            bytes,
                            kind,
                            extra_delay: 0,
                        }
                    })
                    .collect()
            }
            Behavior::Equivocate => match &out.message.payload {
                Payload::PrePrepare { view, seq, block, .. } if out.to == Target::All => {
                    let (view, seq) = (*view, *seq);
                    let twin = self.twin(view, seq, block);
                    if let Payload::PrePrepare { digest, .. } = &twin.payload {
                        let votes = self.vote(view, seq, *digest);
                        self.pending.extend(votes);
                    }
                    let mut wires_out = Vec::new();
                    for (pos, &to) in recipients.iter().enumerate() {
                        let m = if pos % 2 == 0 { &out.message } else { &twin };
                        wires_out.extend(wires(&[to], m, 0));
                    }
                    // one replica sees both proposals and can prove the fault
                    if let Some(&first) = recipients.first() {
                        wires_out.extend(wires(&[first], &twin, 0));
                    }
                    wires_out
                }
                _ => wires(&recipients, &out.message, 0),
            },
        }
    }

    /// A second, equally valid proposal for the same slot: same transactions
    /// and state root, timestamp one tick later.
    fn twin(&mut self, view: u64, seq: u64, block: &Block) -> SignedMessage {
        let mut header = block.header.clone();
        header.timestamp += 1;
        let seal = Seal::create(&self.key, &header);
        let twin = Block {
            header,
            transactions: block.transactions.clone(),
            seal,
        };
        let digest = twin.hash();
        SignedMessage::sign(
            &self.key,
            self.id,
            Payload::PrePrepare {
                view,
                seq,
                digest,
                block: twin,
            },
        )
    }

    /// Votes queued while equivocating, to be sent by the caller.
    pub fn take_pending(&mut self) -> Vec<Outbound> {
        std::mem::take(&mut self.pending)
    }
}

/// Recipient ids of a target, excluding the sender, in id order.
pub(crate) fn recipients(to: Target, from: ReplicaId, n: usize) -> Vec<ReplicaId> {
    match to {
        Target::All => (0..n).filter(|&j| j != from).collect(),
        Target::One(j) if j != from && j < n => vec![j],
        Target::One(_) => Vec::new(),
    }
}

pub(crate) fn wires(recipients: &[ReplicaId], msg: &SignedMessage, extra_delay: u64) -> Vec<Wire> {
    let bytes = msg.encode();
    let kind = msg.payload.kind();
    recipients
        .iter()
        .map(|&to| Wire {
            to,
            bytes: bytes.clone(),
            kind,
            extra_delay,
        })
        .collect()
}
