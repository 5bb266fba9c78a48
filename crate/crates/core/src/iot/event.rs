use serde::{Deserialize, Serialize};

use crate::codec::{put_i64, put_str, put_u64, put_u8, Encode};
use crate::crypto::{self, Address, KeyPair, PublicKey, Signature};
use crate::tx::DeviceKind;

const DOMAIN: &[u8] = b"examchain/device";

/// What a device read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reading {
    BiometricScan {
        student: Address,
        course_id: String,
        session_id: String,
    },
    BarcodeScan {
        item_code: String,
        delta: i64,
    },
    RfidPing {
        asset_tag: String,
        location_id: String,
    },
}

impl Reading {
    /// Device kind able to produce this reading.
    pub fn device_kind(&self) -> DeviceKind {
        match self {
            Reading::BiometricScan { .. } => DeviceKind::Biometric,
            Reading::BarcodeScan { .. } => DeviceKind::Barcode,
            Reading::RfidPing { .. } => DeviceKind::Rfid,
        }
    }
}

impl Encode for Reading {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            Reading::BiometricScan {
                student,
                course_id,
                session_id,
            } => {
                put_u8(out, 0);
                student.encode_to(out);
                put_str(out, course_id);
                put_str(out, session_id);
            }
            Reading::BarcodeScan { item_code, delta } => {
                put_u8(out, 1);
                put_str(out, item_code);
                put_i64(out, *delta);
            }
            Reading::RfidPing { asset_tag, location_id } => {
                put_u8(out, 2);
                put_str(out, asset_tag);
                put_str(out, location_id);
            }
        }
    }
}

/// A signed device reading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceEvent {
    pub device_id: String,
    pub tick: u64,
    pub reading: Reading,
    pub signature: Signature,
}

impl DeviceEvent {
    pub fn signed(key: &KeyPair, device_id: &str, tick: u64, reading: Reading) -> Self {
        let mut e = DeviceEvent {
            device_id: device_id.to_owned(),
            tick,
            reading,
            signature: Signature::EMPTY,
        };
        e.signature = crypto::sign(key, &e.signing_bytes());
        e
    }

    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = DOMAIN.to_vec();
        put_str(&mut out, &self.device_id);
        put_u64(&mut out, self.tick);
        self.reading.encode_to(&mut out);
        out
    }

    pub fn verify(&self, key: &PublicKey) -> bool {
        crypto::verify(key, &self.signing_bytes(), &self.signature)
    }
}
