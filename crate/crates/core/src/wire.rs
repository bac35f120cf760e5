//! What the client uploads and what the collector answers.
//!
//! Every device reference is a [`DeviceId`]; the only hardware-address
//! material is the cleartext OUI prefix in [`DeviceReport`].

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::net::IpAddr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::flows::FlowWindow;
use crate::identity::{Classification, LabelTriple};
use crate::parser::{DnsObservation, HintKind, IdentityHint};
use crate::privacy::{device_id, DeviceId, Salt};
use crate::tls::ClientHelloRecord;
use crate::types::Timestamp;

/// Random per-installation identifier.
pub type UserId = Uuid;

pub const CLIENT_VERSION: &str = concat!("homescope/", env!("CARGO_PKG_VERSION"));

/// Longest collection period a single batch may cover.
pub const MAX_BATCH_SPAN_SECS: i64 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireDns {
    pub device_id: DeviceId,
    pub query_name: String,
    #[serde(default)]
    pub answers: Vec<IpAddr>,
    pub resolver: IpAddr,
    pub is_response: bool,
    pub timestamp: Timestamp,
}

impl WireDns {
    pub fn from_observation(o: &DnsObservation, salt: &Salt) -> Self {
        WireDns {
            device_id: device_id(&o.device_mac, salt),
            query_name: o.query_name.clone(),
            answers: o.answers.clone(),
            resolver: o.resolver,
            is_response: o.is_response,
            timestamp: o.timestamp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireHint {
    pub device_id: DeviceId,
    pub kind: HintKind,
    pub value: String,
    pub timestamp: Timestamp,
}

impl WireHint {
    pub fn from_hint(h: &IdentityHint, salt: &Salt) -> Self {
        WireHint { device_id: device_id(&h.device_mac, salt), kind: h.kind, value: h.value.clone(), timestamp: h.timestamp }
    }
}

/// A device the client has discovered on the LAN, monitored or not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceReport {
    pub device_id: DeviceId,
    /// First three octets, `aa:bb:cc`.
    pub oui: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oui_vendor: Option<String>,
    pub classification: Classification,
    pub monitored: bool,
    pub last_seen: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UploadBatch {
    /// Lets the collector drop a batch it has already stored.
    pub batch_id: Uuid,
    pub client_version: String,
    pub user_id: Uuid,
    pub span_start: Timestamp,
    pub span_end: Timestamp,
    #[serde(default)]
    pub devices: Vec<DeviceReport>,
    #[serde(default)]
    pub flow_windows: Vec<FlowWindow>,
    #[serde(default)]
    pub client_hellos: Vec<ClientHelloRecord>,
    #[serde(default)]
    pub dns_observations: Vec<WireDns>,
    #[serde(default)]
    pub identity_hints: Vec<WireHint>,
    #[serde(default)]
    pub labels: Vec<LabelTriple>,
    /// Off unless the user enables it in the client config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timezone: Option<String>,
    /// Resolver handed out by DHCP on the user's LAN, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dhcp_resolver: Option<IpAddr>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BatchError {
    #[error("batch span ends before it starts")]
    NegativeSpan,
    #[error("batch spans {0} s, more than {MAX_BATCH_SPAN_SECS} s")]
    SpanTooLong(i64),
}

impl UploadBatch {
    pub fn new(user_id: Uuid, span_start: Timestamp, span_end: Timestamp) -> Self {
        UploadBatch {
            batch_id: Uuid::new_v4(),
            client_version: CLIENT_VERSION.to_string(),
            user_id,
            span_start,
            span_end,
            devices: Vec::new(),
            flow_windows: Vec::new(),
            client_hellos: Vec::new(),
            dns_observations: Vec::new(),
            identity_hints: Vec::new(),
            labels: Vec::new(),
            timezone: None,
            dhcp_resolver: None,
        }
    }

    /// Whole-batch checks. Individual rows are checked at ingest.
    pub fn check_span(&self) -> Result<(), BatchError> {
        let span = self.span_end.0 - self.span_start.0;
        if span < 0 {
            return Err(BatchError::NegativeSpan);
        }
        if span > MAX_BATCH_SPAN_SECS * Timestamp::MICROS_PER_SEC {
            return Err(BatchError::SpanTooLong(span / Timestamp::MICROS_PER_SEC));
        }
        Ok(())
    }

    pub fn row_count(&self) -> usize {
        self.devices.len()
            + self.flow_windows.len()
            + self.client_hellos.len()
            + self.dns_observations.len()
            + self.identity_hints.len()
            + self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_count() == 0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCounts {
    pub devices: u64,
    pub flows: u64,
    pub hellos: u64,
    pub dns: u64,
    pub hints: u64,
    pub labels: u64,
}

impl TableCounts {
    pub fn total(&self) -> u64 {
        self.devices + self.flows + self.hellos + self.dns + self.hints + self.labels
    }
}

impl std::ops::AddAssign<&TableCounts> for TableCounts {
    fn add_assign(&mut self, o: &TableCounts) {
        self.devices += o.devices;
        self.flows += o.flows;
        self.hellos += o.hellos;
        self.dns += o.dns;
        self.hints += o.hints;
        self.labels += o.labels;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub table: String,
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestAck {
    pub batch_id: Uuid,
    /// True when the batch had been stored before and nothing changed.
    pub duplicate: bool,
    pub accepted: TableCounts,
    pub rejected: Vec<Rejection>,
    /// Desired monitor state of every device this user has reported.
    pub monitor: BTreeMap<DeviceId, bool>,
}

/// Random per-installation user identifier, created on first run.
pub fn load_or_create_user_id(path: &Path) -> std::io::Result<Uuid> {
    match fs::read_to_string(path) {
        Ok(t) => t
            .trim()
            .parse()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let id = Uuid::new_v4();
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            let mut f = fs::File::create(path)?;
            writeln!(f, "{id}")?;
            Ok(id)
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_limits() {
        let mut b = UploadBatch::new(Uuid::nil(), Timestamp::from_secs(100), Timestamp::from_secs(160));
        assert!(b.check_span().is_ok());
        b.span_end = Timestamp::from_secs(161);
        assert_eq!(b.check_span(), Err(BatchError::SpanTooLong(61)));
        b.span_end = Timestamp::from_secs(99);
        assert_eq!(b.check_span(), Err(BatchError::NegativeSpan));
    }

    #[test]
    fn old_batches_without_optional_tables_parse() {
        let json = r#"{"batch_id":"00000000-0000-0000-0000-000000000000","client_version":"x",
            "user_id":"00000000-0000-0000-0000-000000000000","span_start":0,"span_end":0}"#;
        let b: UploadBatch = serde_json::from_str(json).unwrap();
        assert!(b.is_empty());
    }

    #[test]
    fn user_id_persists() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("user_id");
        assert_eq!(load_or_create_user_id(&p).unwrap(), load_or_create_user_id(&p).unwrap());
    }
}
