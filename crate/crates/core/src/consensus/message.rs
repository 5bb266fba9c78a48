//! Signed consensus messages and the proofs they carry.

use crate::codec::{put_seq, put_u32, put_u64, put_u8, read_seq, CodecError, Decode, Encode, Reader};
use crate::crypto::{self, Digest32, KeyPair, PublicKey, Signature};
use crate::ledger::Block;

pub type ReplicaId = usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    PrePrepare {
        view: u64,
        seq: u64,
        digest: Digest32,
        block: Block,
    },
    Prepare {
        view: u64,
        seq: u64,
        digest: Digest32,
    },
    Commit {
        view: u64,
        seq: u64,
        digest: Digest32,
    },
    ViewChange {
        new_view: u64,
        last_committed_seq: u64,
        /// A quorum of Commits for the block at `last_committed_seq`; empty at genesis.
        commit_proof: Vec<SignedMessage>,
        /// Highest-view prepared block for `last_committed_seq + 1`.
        prepared: Option<PreparedProof>,
    },
    NewView {
        new_view: u64,
        /// A quorum of ViewChange messages for `new_view`.
        proof: Vec<SignedMessage>,
        pre_prepare: Option<Box<SignedMessage>>,
    },
    SyncRequest {
        from_height: u64,
    },
    SyncResponse {
        blocks: Vec<CertifiedBlock>,
    },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::PrePrepare { .. } => "pre_prepare",
            Payload::Prepare { .. } => "prepare",
            Payload::Commit { .. } => "commit",
            Payload::ViewChange { .. } => "view_change",
            Payload::NewView { .. } => "new_view",
            Payload::SyncRequest { .. } => "sync_request",
            Payload::SyncResponse { .. } => "sync_response",
        }
    }
}

/// A pre-prepare and a quorum of matching prepares from distinct replicas.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedProof {
    pub pre_prepare: Box<SignedMessage>,
    pub prepares: Vec<SignedMessage>,
}

/// A committed block with the quorum of Commits that certify it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertifiedBlock {
    pub block: Block,
    pub commits: Vec<SignedMessage>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedMessage {
    pub sender: ReplicaId,
    pub payload: Payload,
    pub signature: Signature,
}

fn signing_bytes(sender: ReplicaId, payload: &Payload) -> Vec<u8> {
    let mut out = b"examchain/consensus".to_vec();
    put_u32(&mut out, sender as u32);
    payload.encode_to(&mut out);
    out
}

impl SignedMessage {
    pub fn sign(key: &KeyPair, sender: ReplicaId, payload: Payload) -> Self {
        let signature = crypto::sign(key, &signing_bytes(sender, &payload));
        SignedMessage {
            sender,
            payload,
            signature,
        }
    }

    pub fn verify(&self, key: &PublicKey) -> bool {
        crypto::verify(key, &signing_bytes(self.sender, &self.payload), &self.signature)
    }

    pub fn hash(&self) -> Digest32 {
        crypto::hash(&self.encode())
    }
}

impl Encode for SignedMessage {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u32(out, self.sender as u32);
        self.payload.encode_to(out);
        self.signature.encode_to(out);
    }
}

impl Decode for SignedMessage {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(SignedMessage {
            sender: r.u32()? as ReplicaId,
            payload: Payload::decode_from(r)?,
            signature: Signature::decode_from(r)?,
        })
    }
}

impl Encode for PreparedProof {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.pre_prepare.encode_to(out);
        put_seq(out, &self.prepares);
    }
}

impl Decode for PreparedProof {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(PreparedProof {
            pre_prepare: Box::new(SignedMessage::decode_from(r)?),
            prepares: read_seq(r)?,
        })
    }
}

impl Encode for CertifiedBlock {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.block.encode_to(out);
        put_seq(out, &self.commits);
    }
}

impl Decode for CertifiedBlock {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(CertifiedBlock {
            block: Block::decode_from(r)?,
            commits: read_seq(r)?,
        })
    }
}

fn put_vsd(out: &mut Vec<u8>, view: u64, seq: u64, digest: &Digest32) {
    put_u64(out, view);
    put_u64(out, seq);
    digest.encode_to(out);
}

impl Encode for Payload {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            Payload::PrePrepare {
                view,
                seq,
                digest,
                block,
            } => {
                put_u8(out, 0);
                put_vsd(out, *view, *seq, digest);
                block.encode_to(out);
            }
            Payload::Prepare { view, seq, digest } => {
                put_u8(out, 1);
                put_vsd(out, *view, *seq, digest);
            }
            Payload::Commit { view, seq, digest } => {
                put_u8(out, 2);
                put_vsd(out, *view, *seq, digest);
            }
            Payload::ViewChange {
                new_view,
                last_committed_seq,
                commit_proof,
                prepared,
            } => {
                put_u8(out, 3);
                put_u64(out, *new_view);
                put_u64(out, *last_committed_seq);
                put_seq(out, commit_proof);
                prepared.encode_to(out);
            }
            Payload::NewView {
                new_view,
                proof,
                pre_prepare,
            } => {
                put_u8(out, 4);
                put_u64(out, *new_view);
                put_seq(out, proof);
                pre_prepare.encode_to(out);
            }
            Payload::SyncRequest { from_height } => {
                put_u8(out, 5);
                put_u64(out, *from_height);
            }
            Payload::SyncResponse { blocks } => {
                put_u8(out, 6);
                put_seq(out, blocks);
            }
        }
    }
}

impl Decode for Payload {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let tag = r.u8()?;
        let vsd = |r: &mut Reader<'_>| -> Result<(u64, u64, Digest32), CodecError> {
            Ok((r.u64()?, r.u64()?, Digest32::decode_from(r)?))
        };
        Ok(match tag {
            0 => {
                let (view, seq, digest) = vsd(r)?;
                Payload::PrePrepare {
                    view,
                    seq,
                    digest,
                    block: Block::decode_from(r)?,
                }
            }
            1 => {
                let (view, seq, digest) = vsd(r)?;
                Payload::Prepare { view, seq, digest }
            }
            2 => {
                let (view, seq, digest) = vsd(r)?;
                Payload::Commit { view, seq, digest }
            }
            3 => Payload::ViewChange {
                new_view: r.u64()?,
                last_committed_seq: r.u64()?,
                commit_proof: read_seq(r)?,
                prepared: Option::<PreparedProof>::decode_from(r)?,
            },
            4 => Payload::NewView {
                new_view: r.u64()?,
                proof: read_seq(r)?,
                pre_prepare: Option::<SignedMessage>::decode_from(r)?.map(Box::new),
            },
            5 => Payload::SyncRequest {
                from_height: r.u64()?,
            },
            6 => Payload::SyncResponse { blocks: read_seq(r)? },
            tag => return Err(CodecError::InvalidTag { what: "consensus message", tag }),
        })
    }
}
