use serde::{Deserialize, Serialize};

use crate::codec::{put_seq, put_u64, read_seq, CodecError, Decode, Encode, Reader};
use crate::crypto::{self, Address, Digest32, KeyPair, PublicKey, Signature};
use crate::tx::Transaction;

use super::merkle::merkle_root;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockHeader {
    pub height: u64,
    /// Hash pointer to the previous header; zero for genesis.
    pub prev_hash: Digest32,
    pub tx_merkle_root: Digest32,
    /// Root of the world state after this block's transactions.
    pub state_root: Digest32,
    pub timestamp: u64,
    pub proposer: Address,
}

impl BlockHeader {
    pub fn hash(&self) -> Digest32 {
        crypto::hash(&self.encode())
    }
}

impl Encode for BlockHeader {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u64(out, self.height);
        self.prev_hash.encode_to(out);
        self.tx_merkle_root.encode_to(out);
        self.state_root.encode_to(out);
        put_u64(out, self.timestamp);
        self.proposer.encode_to(out);
    }
}

impl Decode for BlockHeader {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            height: r.u64()?,
            prev_hash: Digest32::decode_from(r)?,
            tx_merkle_root: Digest32::decode_from(r)?,
            state_root: Digest32::decode_from(r)?,
            timestamp: r.u64()?,
            proposer: Address::decode_from(r)?,
        })
    }
}

/// Proposer signature over the header hash. Makes every block, the tip
/// included, self-authenticating.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seal {
    pub public_key: PublicKey,
    pub signature: Signature,
}

impl Seal {
    pub fn create(key: &KeyPair, header: &BlockHeader) -> Self {
        Seal {
            public_key: key.public_key(),
            signature: crypto::sign(key, &header.hash().0),
        }
    }

    pub fn verify(&self, header: &BlockHeader) -> bool {
        self.public_key.address() == header.proposer
            && crypto::verify(&self.public_key, &header.hash().0, &self.signature)
    }
}

impl Encode for Seal {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.public_key.encode_to(out);
        self.signature.encode_to(out);
    }
}

impl Decode for Seal {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            public_key: PublicKey::decode_from(r)?,
            signature: Signature::decode_from(r)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
    pub seal: Seal,
}

impl Block {
    /// Assembles and seals a block on top of `parent`.
    pub fn build(
        parent: &BlockHeader,
        transactions: Vec<Transaction>,
        state_root: Digest32,
        timestamp: u64,
        proposer: &KeyPair,
    ) -> Self {
        let header = BlockHeader {
            height: parent.height + 1,
            prev_hash: parent.hash(),
            tx_merkle_root: merkle_root(&transactions),
            state_root,
            timestamp,
            proposer: proposer.address(),
        };
        let seal = Seal::create(proposer, &header);
        Block {
            header,
            transactions,
            seal,
        }
    }

    pub fn genesis(state_root: Digest32, timestamp: u64, signer: &KeyPair) -> Self {
        let header = BlockHeader {
            height: 0,
            prev_hash: Digest32::ZERO,
            tx_merkle_root: Digest32::ZERO,
            state_root,
            timestamp,
            proposer: signer.address(),
        };
        let seal = Seal::create(signer, &header);
        Block {
            header,
            transactions: Vec::new(),
            seal,
        }
    }

    /// Consensus digest of the block.
    pub fn hash(&self) -> Digest32 {
        self.header.hash()
    }
}

impl Encode for Block {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.header.encode_to(out);
        put_seq(out, &self.transactions);
        self.seal.encode_to(out);
    }
}

impl Decode for Block {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            header: BlockHeader::decode_from(r)?,
            transactions: read_seq(r)?,
            seal: Seal::decode_from(r)?,
        })
    }
}
