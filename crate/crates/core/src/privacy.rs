//! Salted device identifiers and the upload gate.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::identity::Classification;
use crate::parser::Observation;
use crate::types::{MacAddr, Timestamp};

pub const SALT_LEN: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum SaltError {
    #[error("salt file {0} is malformed")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-installation secret. Never serialized into anything that leaves the
/// machine; `Debug` does not print the value.
#[derive(Clone, PartialEq, Eq)]
pub struct Salt {
    value: [u8; SALT_LEN],
    created_at: Timestamp,
}

impl fmt::Debug for Salt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Salt").field("value", &"<redacted>").field("created_at", &self.created_at).finish()
    }
}

impl Salt {
    pub fn generate() -> Self {
        let mut value = [0u8; SALT_LEN];
        rand::rngs::OsRng.fill_bytes(&mut value);
        Salt { value, created_at: Timestamp::now() }
    }

    pub fn from_bytes(value: [u8; SALT_LEN]) -> Self {
        Salt { value, created_at: Timestamp(0) }
    }

    pub fn bytes(&self) -> &[u8; SALT_LEN] {
        &self.value
    }

    pub fn created_at(&self) -> Timestamp {
        self.created_at
    }

    /// Reads the salt at `path`, creating it (mode 0600) on first run.
    ///
    /// File format: hex value on the first line, creation timestamp on the second.
    pub fn load_or_create(path: &Path) -> Result<Salt, SaltError> {
        match fs::read_to_string(path) {
            Ok(text) => {
                let bad = || SaltError::Malformed(path.display().to_string());
                let mut lines = text.lines();
                let raw = hex::decode(lines.next().ok_or_else(bad)?.trim()).map_err(|_| bad())?;
                let value: [u8; SALT_LEN] = raw.try_into().map_err(|_| bad())?;
                let created_at = lines.next().and_then(|l| l.trim().parse().ok()).unwrap_or_default();
                Ok(Salt { value, created_at })
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let salt = Salt::generate();
                if let Some(dir) = path.parent() {
                    fs::create_dir_all(dir)?;
                }
                let mut opts = fs::OpenOptions::new();
                opts.write(true).create_new(true);
                #[cfg(unix)]
                {
                    use std::os::unix::fs::OpenOptionsExt;
                    opts.mode(0o600);
                }
                let mut f = opts.open(path)?;
                writeln!(f, "{}\n{}", hex::encode(salt.value), salt.created_at)?;
                Ok(salt)
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Lowercase hex SHA-256 digest identifying one device.
///
/// Deserialization does not validate; the collector checks each row with
/// [`DeviceId::is_valid`] so a bad row is rejected without failing the batch.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("not a device id: {0:?}")]
pub struct InvalidDeviceId(pub String);

impl DeviceId {
    pub fn parse(s: &str) -> Result<DeviceId, InvalidDeviceId> {
        let id = DeviceId(s.to_string());
        if id.is_valid() {
            Ok(id)
        } else {
            Err(InvalidDeviceId(s.to_string()))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.0.len() == 64 && self.0.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// An unchecked value, as received over the wire.
    pub fn from_wire(s: impl Into<String>) -> DeviceId {
        DeviceId(s.into())
    }
}

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for DeviceId {
    type Err = InvalidDeviceId;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeviceId::parse(s)
    }
}

/// SHA-256 over the salt bytes followed by the six MAC bytes.
pub fn device_id(mac: &MacAddr, salt: &Salt) -> DeviceId {
    let mut h = Sha256::new();
    h.update(salt.value);
    h.update(mac.octets());
    DeviceId(hex::encode(h.finalize()))
}

/// Chipset manufacturer prefix, reported in the clear as `aa:bb:cc`.
pub fn oui_text(mac: &MacAddr) -> String {
    let o = mac.oui();
    format!("{:02x}:{:02x}:{:02x}", o[0], o[1], o[2])
}

/// What to do with monitored devices nobody has classified yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnknownPolicy {
    /// Upload unless the device shows signs of being general-purpose.
    #[default]
    Upload,
    /// Upload only devices positively classified smart-home.
    Withhold,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct FilterOutcome {
    pub kept: Vec<Observation>,
    pub dropped: BTreeMap<MacAddr, u64>,
}

/// Device-side inputs to [`filter_upload`].
#[derive(Debug, Default, Clone)]
pub struct UploadGate {
    pub monitored: HashSet<MacAddr>,
    pub classifications: HashMap<MacAddr, Classification>,
    pub overridden: HashSet<MacAddr>,
    pub unknown: UnknownPolicy,
}

impl UploadGate {
    pub fn allows(&self, mac: &MacAddr) -> bool {
        if !self.monitored.contains(mac) {
            return false;
        }
        if self.overridden.contains(mac) {
            return true;
        }
        match self.classifications.get(mac).copied().unwrap_or(Classification::Unknown) {
            Classification::SmartHome => true,
            Classification::GeneralPurpose => false,
            Classification::Unknown => self.unknown == UnknownPolicy::Upload,
        }
    }
}

/// Keeps observations of monitored devices that are smart-home (or
/// overridden by the user); counts what was dropped per device.
pub fn filter_upload(batch: Vec<Observation>, gate: &UploadGate) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for obs in batch {
        let mac = obs.device_mac();
        if gate.allows(&mac) {
            out.kept.push(obs);
        } else {
            *out.dropped.entry(mac).or_default() += 1;
        }
    }
    for (mac, n) in &out.dropped {
        tracing::debug!(device = %oui_text(mac), dropped = n, "observations withheld from upload");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{IdentityHint, HintKind};

    fn hint(mac: MacAddr) -> Observation {
        Observation::Hint(IdentityHint { device_mac: mac, kind: HintKind::DhcpHostname, value: "x".into(), timestamp: Timestamp(0) })
    }

    #[test]
    fn id_is_deterministic_and_salted() {
        let mac: MacAddr = "00:11:22:33:44:55".parse().unwrap();
        let a = Salt::from_bytes([1; 32]);
        let b = Salt::from_bytes([2; 32]);
        assert_eq!(device_id(&mac, &a), device_id(&mac, &a));
        assert_ne!(device_id(&mac, &a), device_id(&mac, &b));
        assert!(device_id(&mac, &a).is_valid());
    }

    #[test]
    fn debug_hides_salt() {
        let s = Salt::from_bytes([0xab; 32]);
        assert!(!format!("{s:?}").contains("ab, ab"));
        assert!(!format!("{s:?}").contains("abab"));
    }

    #[test]
    fn salt_file_roundtrip_and_mode() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("conf/salt");
        let s1 = Salt::load_or_create(&p).unwrap();
        let s2 = Salt::load_or_create(&p).unwrap();
        assert_eq!(s1.bytes(), s2.bytes());
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            assert_eq!(fs::metadata(&p).unwrap().permissions().mode() & 0o777, 0o600);
        }
    }

    #[test]
    fn rejects_raw_macs() {
        assert!(DeviceId::parse("00:11:22:33:44:55").is_err());
        assert!(DeviceId::parse(&"A".repeat(64)).is_err());
        assert!(DeviceId::parse(&"a".repeat(64)).is_ok());
    }

    #[test]
    fn gate_rules() {
        let cam: MacAddr = "00:00:00:00:00:01".parse().unwrap();
        let tv: MacAddr = "00:00:00:00:00:02".parse().unwrap();
        let laptop: MacAddr = "00:00:00:00:00:03".parse().unwrap();
        let mut gate = UploadGate::default();
        gate.monitored.extend([cam, laptop]);
        gate.classifications.insert(cam, Classification::SmartHome);
        gate.classifications.insert(tv, Classification::SmartHome);
        gate.classifications.insert(laptop, Classification::GeneralPurpose);
        let out = filter_upload(vec![hint(cam), hint(tv), hint(laptop), hint(laptop)], &gate);
        assert_eq!(out.kept, vec![hint(cam)]);
        assert_eq!(out.dropped[&tv], 1);
        assert_eq!(out.dropped[&laptop], 2);
        gate.overridden.insert(laptop);
        assert_eq!(filter_upload(vec![hint(laptop)], &gate).kept.len(), 1);
        assert!(filter_upload(Vec::new(), &gate).kept.is_empty());
    }

    #[test]
    fn unknown_policy() {
        let m: MacAddr = "00:00:00:00:00:09".parse().unwrap();
        let mut gate = UploadGate::default();
        gate.monitored.insert(m);
        assert!(gate.allows(&m));
        gate.unknown = UnknownPolicy::Withhold;
        assert!(!gate.allows(&m));
    }
}
