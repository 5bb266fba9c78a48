use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::campus::labeled_key;
use crate::crypto::{Address, KeyPair};
use crate::membership::DeviceRecord;
use crate::tx::DeviceKind;

use super::event::{DeviceEvent, Reading};
use super::IotError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub id: String,
    pub kind: DeviceKind,
    /// Label the device key is derived from.
    pub key_label: String,
}

impl DeviceSpec {
    pub fn key(&self) -> KeyPair {
        labeled_key(&self.key_label)
    }
}

/// One class session watched by a biometric reader. Each listed student is
/// present with probability `presence_percent / 100`, drawn independently.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionPlan {
    pub device: String,
    pub course_id: String,
    pub session_id: String,
    pub tick: u64,
    pub students: Vec<Address>,
    pub presence_percent: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarcodePlan {
    pub device: String,
    pub item_code: String,
    /// (tick, signed quantity change)
    pub scans: Vec<(u64, i64)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfidPlan {
    pub device: String,
    pub asset_tag: String,
    /// (tick, location) with strictly increasing ticks.
    pub path: Vec<(u64, String)>,
}

/// Device schedule file.
///
/// ```toml
/// seed = 3
/// [[device]]
/// id = "bio-cs101"
/// kind = "biometric"
/// key_label = "device-bio-cs101"
/// [[session]]
/// device = "bio-cs101"
/// course_id = "CS101"
/// session_id = "S1"
/// tick = 10
/// students = ["<address hex>"]
/// presence_percent = 80
/// [[barcode]]
/// device = "bc-store"
/// item_code = "answer-booklet"
/// scans = [[5, 100], [20, -30]]
/// [[rfid]]
/// device = "rfid-gate"
/// asset_tag = "projector-1"
/// path = [[12, "hall-a"], [30, "lab-1"]]
/// ```
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, rename = "device")]
    pub devices: Vec<DeviceSpec>,
    #[serde(default, rename = "session")]
    pub sessions: Vec<SessionPlan>,
    #[serde(default)]
    pub barcode: Vec<BarcodePlan>,
    #[serde(default)]
    pub rfid: Vec<RfidPlan>,
}

impl Schedule {
    pub fn from_toml_str(text: &str) -> Result<Self, IotError> {
        let s: Schedule = toml::from_str(text).map_err(|e| IotError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IotError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| IotError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schedule serializes")
    }

    pub fn device(&self, id: &str) -> Option<&DeviceSpec> {
        self.devices.iter().find(|d| d.id == id)
    }

    fn plan_device(&self, id: &str, kind: DeviceKind) -> Result<&DeviceSpec, IotError> {
        let d = self.device(id).ok_or_else(|| IotError::UnknownDevice(id.to_owned()))?;
        if d.kind != kind {
            return Err(IotError::Invalid(format!("device {id} is not a {kind:?} reader")));
        }
        Ok(d)
    }

    /// Structural checks that do not need the chain.
    pub fn validate(&self) -> Result<(), IotError> {
        let mut ids = BTreeSet::new();
        for d in &self.devices {
            if !ids.insert(&d.id) {
                return Err(IotError::Invalid(format!("device {} listed twice", d.id)));
            }
        }
        let mut sessions = BTreeSet::new();
        for s in &self.sessions {
            self.plan_device(&s.device, DeviceKind::Biometric)?;
            if s.presence_percent > 100 {
                return Err(IotError::Invalid(format!(
                    "presence {}% above 100% in session {}",
                    s.presence_percent, s.session_id
                )));
            }
            if !sessions.insert((&s.course_id, &s.session_id)) {
                return Err(IotError::Invalid(format!(
                    "session {} of {} planned twice",
                    s.session_id, s.course_id
                )));
            }
        }
        for b in &self.barcode {
            self.plan_device(&b.device, DeviceKind::Barcode)?;
        }
        for r in &self.rfid {
            self.plan_device(&r.device, DeviceKind::Rfid)?;
            if r.path.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(IotError::Invalid(format!("path of {} is not strictly increasing", r.asset_tag)));
            }
        }
        Ok(())
    }
}

/// Sensing layer: the signed events the schedule produces with ticks in
/// `range`, ordered by tick, then device id, then plan order.
///
/// Presence draws are made for every planned session in file order whatever
/// the range, so narrowing the range never changes which students show up.
pub fn sense(
    schedule: &Schedule,
    registry: &BTreeMap<String, DeviceRecord>,
    range: RangeInclusive<u64>,
) -> Result<Vec<DeviceEvent>, IotError> {
    schedule.validate()?;
    let mut keys = BTreeMap::new();
    for d in &schedule.devices {
        let rec = registry
            .get(&d.id)
            .ok_or_else(|| IotError::UnregisteredDevice(d.id.clone()))?;
        let key = d.key();
        if rec.public_key != key.public_key() || rec.device_kind != d.kind {
            return Err(IotError::RegistrationMismatch(d.id.clone()));
        }
        keys.insert(d.id.as_str(), key);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut raw: Vec<(u64, &str, Reading)> = Vec::new();
    for s in &schedule.sessions {
        for student in &s.students {
            if rng.gen_range(0..100) < s.presence_percent {
                raw.push((
                    s.tick,
                    &s.device,
                    Reading::BiometricScan {
                        student: *student,
                        course_id: s.course_id.clone(),
                        session_id: s.session_id.clone(),
                    },
                ));
            }
        }
    }
    for b in &schedule.barcode {
        for &(tick, delta) in &b.scans {
            raw.push((
                tick,
                &b.device,
                Reading::BarcodeScan {
                    item_code: b.item_code.clone(),
                    delta,
                },
            ));
        }
    }
    for r in &schedule.rfid {
        for (tick, loc) in &r.path {
            raw.push((
                *tick,
                &r.device,
                Reading::RfidPing {
                    asset_tag: r.asset_tag.clone(),
                    location_id: loc.clone(),
                },
            ));
        }
    }
    raw.retain(|(t, _, _)| range.contains(t));
    raw.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    Ok(raw
        .into_iter()
        .map(|(tick, dev, reading)| DeviceEvent::signed(&keys[dev], dev, tick, reading))
        .collect())
}
