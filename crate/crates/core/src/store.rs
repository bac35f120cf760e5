//! Collector-side storage.
//!
//! Tables are ordered maps so that two stores holding the same rows are
//! equal and serialize to the same bytes. The whole store lives in one JSON
//! file, rewritten atomically after each mutation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use uuid::Uuid;

use crate::endpoints::{resolve_endpoint, EndpointInfo, HostnameIndex, ListDatabases};
use crate::flows::{window_start_for, FlowWindow, WINDOW_SECS};
use crate::identity::{
    sample_domains, standardize, validate, Category, Classification, Evidence, FingerbankOracle, LabelRules, LabelTriple,
    ValidationOutcome,
};
use crate::parser::{HintKind, IdentityHint};
use crate::privacy::DeviceId;
use crate::tls::ClientHelloRecord;
use crate::types::{MacAddr, Timestamp, Transport};
use crate::wire::{BatchError, IngestAck, Rejection, TableCounts, UploadBatch, WireDns, WireHint};

/// The far end of a flow. Rows imported from a release file may only know
/// the hostname.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Remote {
    Ip(IpAddr),
    Host(String),
}

impl fmt::Display for Remote {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Remote::Ip(ip) => write!(f, "{ip}"),
            Remote::Host(h) => f.write_str(h),
        }
    }
}

impl FromStr for Remote {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse::<IpAddr>() {
            Ok(ip) => Remote::Ip(ip),
            Err(_) => Remote::Host(s.to_string()),
        })
    }
}

impl Serialize for Remote {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Remote {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap_or_else(|e| match e {}))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowRowKey {
    pub device_id: DeviceId,
    pub remote: Remote,
    pub remote_port: u16,
    pub transport: Transport,
    pub window_start: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRow {
    #[serde(flatten)]
    pub key: FlowRowKey,
    pub first_packet_ts: Timestamp,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

impl FlowRow {
    pub fn from_window(w: &FlowWindow) -> Self {
        FlowRow {
            key: FlowRowKey {
                device_id: w.key.device_id.clone(),
                remote: Remote::Ip(w.key.remote_ip),
                remote_port: w.key.remote_port,
                transport: w.key.transport,
                window_start: w.window_start,
            },
            first_packet_ts: w.first_packet_ts,
            bytes_sent: w.bytes_sent,
            bytes_received: w.bytes_received,
        }
    }

    /// Same law as [`crate::flows::merge_windows`]: counters add, the first
    /// packet is the earlier one.
    fn absorb(&mut self, other: &FlowRow) {
        self.bytes_sent += other.bytes_sent;
        self.bytes_received += other.bytes_received;
        self.first_packet_ts = self.first_packet_ts.min(other.first_packet_ts);
    }

    pub fn remote_ip(&self) -> Option<IpAddr> {
        match self.key.remote {
            Remote::Ip(ip) => Some(ip),
            Remote::Host(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HelloKey {
    pub device_id: DeviceId,
    pub timestamp: Timestamp,
    pub fingerprint: String,
    pub cipher_suites: Vec<u16>,
}

fn hello_key(h: &ClientHelloRecord) -> HelloKey {
    HelloKey {
        device_id: h.device_id.clone(),
        timestamp: h.timestamp,
        fingerprint: h.fingerprint.clone(),
        cipher_suites: h.cipher_suites.clone(),
    }
}

type DnsKey = (DeviceId, Timestamp, String, IpAddr, bool);
type HintKey = (DeviceId, HintKind, String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRow {
    pub device_id: DeviceId,
    pub user_id: Uuid,
    pub oui: String,
    #[serde(default)]
    pub oui_vendor: Option<String>,
    pub classification: Classification,
    /// Desired state; the dashboard is the authority once the row exists.
    pub monitored: bool,
    pub first_seen: Timestamp,
    pub last_seen: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    #[serde(flatten)]
    pub triple: LabelTriple,
    pub updated_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRow {
    pub client_version: String,
    #[serde(default)]
    pub timezone: Option<String>,
    #[serde(default)]
    pub dhcp_resolver: Option<IpAddr>,
}

/// Remembers deletions so a late or replayed upload cannot bring old rows back.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tombstone {
    #[serde(default)]
    pub device_deleted_at: Option<Timestamp>,
    #[serde(default)]
    pub hint_kinds: BTreeMap<HintKind, Timestamp>,
}

impl Tombstone {
    fn buries(&self, ts: Timestamp) -> bool {
        self.device_deleted_at.is_some_and(|d| ts <= d)
    }

    fn buries_hint(&self, kind: HintKind, ts: Timestamp) -> bool {
        self.buries(ts) || self.hint_kinds.get(&kind).is_some_and(|d| ts <= *d)
    }
}

mod rows {
    //! Tables with composite keys are persisted as row lists.
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub trait Keyed {
        type Key: Ord;
        fn key(&self) -> Self::Key;
    }

    pub fn serialize<S: Serializer, K, V: Serialize>(m: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.values())
    }

    pub fn deserialize<'de, D, V>(d: D) -> Result<BTreeMap<V::Key, V>, D::Error>
    where
        D: Deserializer<'de>,
        V: Deserialize<'de> + Keyed,
    {
        let v: Vec<V> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|r| (r.key(), r)).collect())
    }
}

impl rows::Keyed for FlowRow {
    type Key = FlowRowKey;
    fn key(&self) -> FlowRowKey {
        self.key.clone()
    }
}

impl rows::Keyed for ClientHelloRecord {
    type Key = HelloKey;
    fn key(&self) -> HelloKey {
        hello_key(self)
    }
}

impl rows::Keyed for WireDns {
    type Key = DnsKey;
    fn key(&self) -> DnsKey {
        (self.device_id.clone(), self.timestamp, self.query_name.clone(), self.resolver, self.is_response)
    }
}

impl rows::Keyed for WireHint {
    type Key = HintKey;
    fn key(&self) -> HintKey {
        (self.device_id.clone(), self.kind, self.value.clone())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreData {
    #[serde(default)]
    pub batches: BTreeSet<Uuid>,
    #[serde(default)]
    pub users: BTreeMap<Uuid, UserRow>,
    #[serde(default)]
    pub devices: BTreeMap<DeviceId, DeviceRow>,
    #[serde(default)]
    pub labels: BTreeMap<DeviceId, LabelRow>,
    #[serde(default, with = "rows")]
    pub flows: BTreeMap<FlowRowKey, FlowRow>,
    #[serde(default, with = "rows")]
    pub hellos: BTreeMap<HelloKey, ClientHelloRecord>,
    #[serde(default, with = "rows")]
    pub dns: BTreeMap<DnsKey, WireDns>,
    #[serde(default, with = "rows")]
    pub hints: BTreeMap<HintKey, WireHint>,
    #[serde(default)]
    pub tombstones: BTreeMap<DeviceId, Tombstone>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown device {0}")]
    UnknownDevice(DeviceId),
    #[error("label needs a category or a vendor")]
    EmptyLabel,
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error("store file {0}: {1}")]
    Corrupt(String, serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which identity hints to delete for a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HintFilter {
    Dhcp,
    Ssdp,
}

impl HintFilter {
    /// UPnP descriptions are fetched from SSDP announcements, so they go too.
    pub fn kinds(&self) -> &'static [HintKind] {
        match self {
            HintFilter::Dhcp => &[HintKind::DhcpHostname],
            HintFilter::Ssdp => &[HintKind::Ssdp, HintKind::Upnp],
        }
    }
}

impl FromStr for HintFilter {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dhcp" => Ok(HintFilter::Dhcp),
            "ssdp" => Ok(HintFilter::Ssdp),
            other => Err(format!("expected dhcp or ssdp, got {other:?}")),
        }
    }
}

fn valid_fingerprint(s: &str) -> bool {
    s.len() == 32 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl StoreData {
    pub fn knows_device(&self, id: &DeviceId) -> bool {
        self.devices.contains_key(id)
            || self.labels.contains_key(id)
            || self.tombstones.contains_key(id)
            || self.flows.keys().any(|k| &k.device_id == id)
            || self.hellos.keys().any(|k| &k.device_id == id)
            || self.dns.keys().any(|k| &k.0 == id)
            || self.hints.keys().any(|k| &k.0 == id)
    }

    /// Every device id with at least one row anywhere.
    pub fn device_ids(&self) -> BTreeSet<DeviceId> {
        let mut out: BTreeSet<DeviceId> = self.devices.keys().cloned().collect();
        out.extend(self.labels.keys().cloned());
        out.extend(self.flows.keys().map(|k| k.device_id.clone()));
        out.extend(self.hellos.keys().map(|k| k.device_id.clone()));
        out.extend(self.dns.keys().map(|k| k.0.clone()));
        out.extend(self.hints.keys().map(|k| k.0.clone()));
        out
    }

    pub fn insert_flow(&mut self, row: FlowRow) {
        match self.flows.get_mut(&row.key) {
            Some(existing) => existing.absorb(&row),
            None => {
                self.flows.insert(row.key.clone(), row);
            }
        }
    }

    pub fn insert_hello(&mut self, h: ClientHelloRecord) {
        self.hellos.entry(hello_key(&h)).or_insert(h);
    }

    pub fn insert_label(&mut self, triple: LabelTriple, updated_at: Timestamp) {
        match self.labels.get(&triple.device_id) {
            Some(old) if old.updated_at >= updated_at => {}
            _ => {
                self.labels.insert(triple.device_id.clone(), LabelRow { triple, updated_at });
            }
        }
    }

    fn insert_hint(&mut self, h: &WireHint) {
        use rows::Keyed;
        match self.hints.get_mut(&h.key()) {
            Some(old) => old.timestamp = old.timestamp.min(h.timestamp),
            None => {
                self.hints.insert(h.key(), h.clone());
            }
        }
    }

    /// Stores a batch. Re-sending a batch already stored changes nothing.
    /// Bad rows are rejected one by one with a reason; only a bad span
    /// fails the whole batch.
    pub fn ingest(&mut self, batch: &UploadBatch, rules: &LabelRules) -> Result<IngestAck, BatchError> {
        batch.check_span()?;
        let mut ack = IngestAck {
            batch_id: batch.batch_id,
            duplicate: false,
            accepted: TableCounts::default(),
            rejected: Vec::new(),
            monitor: BTreeMap::new(),
        };
        if self.batches.contains(&batch.batch_id) {
            ack.duplicate = true;
            ack.monitor = self.monitor_state(batch.user_id);
            return Ok(ack);
        }
        let mut reject = |table: &str, index: usize, reason: &str| {
            ack.rejected.push(Rejection { table: table.into(), index, reason: reason.into() });
        };
        let mut accepted = TableCounts::default();

        // Empty batches are not recorded, so a client heartbeat does not
        // grow the batch log.
        if !batch.is_empty() || batch.timezone.is_some() || batch.dhcp_resolver.is_some() {
            self.batches.insert(batch.batch_id);
            let user = self.users.entry(batch.user_id).or_insert(UserRow {
                client_version: batch.client_version.clone(),
                timezone: None,
                dhcp_resolver: None,
            });
            user.client_version = batch.client_version.clone();
            if batch.timezone.is_some() {
                user.timezone = batch.timezone.clone();
            }
            if batch.dhcp_resolver.is_some() {
                user.dhcp_resolver = batch.dhcp_resolver;
            }
        }

        for (i, d) in batch.devices.iter().enumerate() {
            if !d.device_id.is_valid() {
                reject("devices", i, "unhashed-id");
                continue;
            }
            if self.tombstones.get(&d.device_id).is_some_and(|t| t.buries(d.last_seen)) {
                reject("devices", i, "deleted-device");
                continue;
            }
            let row = self.devices.entry(d.device_id.clone()).or_insert(DeviceRow {
                device_id: d.device_id.clone(),
                user_id: batch.user_id,
                oui: d.oui.clone(),
                oui_vendor: d.oui_vendor.clone(),
                classification: d.classification,
                monitored: d.monitored,
                first_seen: d.last_seen,
                last_seen: d.last_seen,
            });
            row.classification = d.classification;
            row.oui_vendor = d.oui_vendor.clone().or(row.oui_vendor.take());
            row.first_seen = row.first_seen.min(d.last_seen);
            row.last_seen = row.last_seen.max(d.last_seen);
            accepted.devices += 1;
        }

        for (i, w) in batch.flow_windows.iter().enumerate() {
            if !w.key.device_id.is_valid() {
                reject("flows", i, "unhashed-id");
            } else if !w.is_aligned() {
                reject("flows", i, "misaligned-window");
            } else if window_start_for(w.first_packet_ts) != w.window_start {
                reject("flows", i, "timestamp-outside-window");
            } else if self.tombstones.get(&w.key.device_id).is_some_and(|t| t.buries(w.first_packet_ts)) {
                reject("flows", i, "deleted-device");
            } else {
                self.insert_flow(FlowRow::from_window(w));
                accepted.flows += 1;
            }
        }

        for (i, h) in batch.client_hellos.iter().enumerate() {
            if !h.device_id.is_valid() {
                reject("hellos", i, "unhashed-id");
            } else if !valid_fingerprint(&h.fingerprint) {
                reject("hellos", i, "bad-fingerprint");
            } else if self.tombstones.get(&h.device_id).is_some_and(|t| t.buries(h.timestamp)) {
                reject("hellos", i, "deleted-device");
            } else {
                self.insert_hello(h.clone());
                accepted.hellos += 1;
            }
        }

        for (i, d) in batch.dns_observations.iter().enumerate() {
            use rows::Keyed;
            if !d.device_id.is_valid() {
                reject("dns", i, "unhashed-id");
            } else if d.query_name.is_empty() {
                reject("dns", i, "empty-name");
            } else if self.tombstones.get(&d.device_id).is_some_and(|t| t.buries(d.timestamp)) {
                reject("dns", i, "deleted-device");
            } else {
                self.dns.entry(d.key()).or_insert_with(|| d.clone());
                accepted.dns += 1;
            }
        }

        for (i, h) in batch.identity_hints.iter().enumerate() {
            if !h.device_id.is_valid() {
                reject("hints", i, "unhashed-id");
            } else if h.value.trim().is_empty() {
                reject("hints", i, "empty-value");
            } else if self.tombstones.get(&h.device_id).is_some_and(|t| t.buries_hint(h.kind, h.timestamp)) {
                reject("hints", i, "deleted-device");
            } else {
                self.insert_hint(h);
                accepted.hints += 1;
            }
        }

        for (i, l) in batch.labels.iter().enumerate() {
            if !l.device_id.is_valid() {
                reject("labels", i, "unhashed-id");
            } else if self.tombstones.get(&l.device_id).is_some_and(|t| t.buries(batch.span_end)) {
                reject("labels", i, "deleted-device");
            } else {
                // Standardization happens here, with the collector's rules.
                self.insert_label(standardize(l, rules), batch.span_end);
                accepted.labels += 1;
            }
        }

        ack.accepted = accepted;
        ack.monitor = self.monitor_state(batch.user_id);
        Ok(ack)
    }

    pub fn monitor_state(&self, user: Uuid) -> BTreeMap<DeviceId, bool> {
        self.devices.values().filter(|d| d.user_id == user).map(|d| (d.device_id.clone(), d.monitored)).collect()
    }

    pub fn set_monitored(&mut self, id: &DeviceId, on: bool) -> Result<(), StoreError> {
        let row = self.devices.get_mut(id).ok_or_else(|| StoreError::UnknownDevice(id.clone()))?;
        row.monitored = on;
        Ok(())
    }

    pub fn submit_label(
        &mut self,
        id: &DeviceId,
        name: &str,
        category: &str,
        vendor: &str,
        rules: &LabelRules,
        now: Timestamp,
    ) -> Result<LabelTriple, StoreError> {
        if !self.knows_device(id) || self.tombstones.get(id).is_some_and(|t| t.buries(now)) {
            return Err(StoreError::UnknownDevice(id.clone()));
        }
        if category.trim().is_empty() && vendor.trim().is_empty() {
            return Err(StoreError::EmptyLabel);
        }
        let t = standardize(&LabelTriple::raw(id.clone(), name, category, vendor), rules);
        self.labels.insert(id.clone(), LabelRow { triple: t.clone(), updated_at: now });
        Ok(t)
    }

    /// Removes every row for the device and leaves a tombstone. Calling it
    /// again returns all-zero counts.
    pub fn delete_device_data(&mut self, id: &DeviceId, now: Timestamp) -> Result<TableCounts, StoreError> {
        if !self.knows_device(id) {
            return Err(StoreError::UnknownDevice(id.clone()));
        }
        let report = TableCounts {
            devices: self.devices.remove(id).is_some() as u64,
            labels: self.labels.remove(id).is_some() as u64,
            flows: drain(&mut self.flows, |k| &k.device_id == id),
            hellos: drain(&mut self.hellos, |k| &k.device_id == id),
            dns: drain(&mut self.dns, |k| &k.0 == id),
            hints: drain(&mut self.hints, |k| &k.0 == id),
        };
        let t = self.tombstones.entry(id.clone()).or_default();
        t.device_deleted_at = Some(t.device_deleted_at.map_or(now, |d| d.max(now)));
        Ok(report)
    }

    pub fn delete_hint_kind(&mut self, id: &DeviceId, filter: HintFilter, now: Timestamp) -> Result<TableCounts, StoreError> {
        if !self.knows_device(id) {
            return Err(StoreError::UnknownDevice(id.clone()));
        }
        let kinds = filter.kinds();
        let hints = drain(&mut self.hints, |k| &k.0 == id && kinds.contains(&k.1));
        let t = self.tombstones.entry(id.clone()).or_default();
        for k in kinds {
            let e = t.hint_kinds.entry(*k).or_insert(now);
            *e = (*e).max(now);
        }
        Ok(TableCounts { hints, ..Default::default() })
    }

    pub fn label(&self, id: &DeviceId) -> Option<&LabelTriple> {
        self.labels.get(id).map(|r| &r.triple)
    }

    /// IP to hostname, from DNS answers the devices received.
    pub fn dns_index(&self) -> HostnameIndex {
        let mut idx = HostnameIndex::default();
        for d in self.dns.values().filter(|d| d.is_response) {
            for ip in &d.answers {
                idx.insert(&d.device_id, *ip, &d.query_name, d.timestamp);
            }
        }
        idx
    }

    /// IP to hostname, from the SNI of hellos sent to that IP.
    pub fn sni_index(&self) -> HostnameIndex {
        let mut idx = HostnameIndex::default();
        for h in self.hellos.values() {
            if let (Some(ip), Some(sni)) = (h.remote_ip, &h.sni) {
                idx.insert(&h.device_id, ip, sni, h.timestamp);
            }
        }
        idx
    }

    /// Server-side view of a device's evidence. Only the OUI of the
    /// hardware address is known here, so the rest of it is zero.
    pub fn evidence(
        &self,
        id: &DeviceId,
        dbs: &ListDatabases,
        oracle: Option<&dyn FingerbankOracle>,
    ) -> Result<Evidence, StoreError> {
        let dev = self.devices.get(id).ok_or_else(|| StoreError::UnknownDevice(id.clone()))?;
        let oui = parse_oui(&dev.oui);
        let mac = MacAddr([oui[0], oui[1], oui[2], 0, 0, 0]);
        let hints: Vec<IdentityHint> = self
            .hints
            .values()
            .filter(|h| &h.device_id == id)
            .map(|h| IdentityHint { device_mac: mac, kind: h.kind, value: h.value.clone(), timestamp: h.timestamp })
            .collect();
        let domains: BTreeSet<String> =
            self.dns.values().filter(|d| &d.device_id == id).map(|d| dbs.registered_domain(&d.query_name).unwrap_or_else(|| d.query_name.clone())).collect();
        let domains = sample_domains(id, &domains);
        let ua = hints.iter().find(|h| h.kind == HintKind::HttpUserAgent).map(|h| h.value.as_str());
        let fingerbank = oracle.and_then(|o| o.identify(oui, ua, &domains));
        Ok(Evidence { oui_vendor: dev.oui_vendor.clone(), fingerbank, domains, hints })
    }

    /// Checks the device's label against its evidence. Unlabeled devices
    /// have nothing to validate.
    pub fn validation(
        &self,
        id: &DeviceId,
        dbs: &ListDatabases,
        rules: &LabelRules,
        oracle: Option<&dyn FingerbankOracle>,
    ) -> Result<Vec<ValidationOutcome>, StoreError> {
        let evidence = self.evidence(id, dbs, oracle)?;
        Ok(self.label(id).map(|l| validate(&evidence, l, rules)).unwrap_or_default())
    }

    pub fn resolver<'a>(&'a self, dbs: &'a ListDatabases) -> Resolver<'a> {
        Resolver { dns: self.dns_index(), sni: self.sni_index(), dbs, store: self }
    }
}

fn parse_oui(text: &str) -> [u8; 3] {
    let mut out = [0u8; 3];
    for (slot, part) in out.iter_mut().zip(text.split([':', '-'])) {
        *slot = u8::from_str_radix(part, 16).unwrap_or(0);
    }
    out
}

fn drain<K: Ord + Clone, V>(m: &mut BTreeMap<K, V>, pred: impl Fn(&K) -> bool) -> u64 {
    let before = m.len();
    m.retain(|k, _| !pred(k));
    (before - m.len()) as u64
}

/// Endpoint naming over one store snapshot.
pub struct Resolver<'a> {
    dns: HostnameIndex,
    sni: HostnameIndex,
    pub dbs: &'a ListDatabases,
    store: &'a StoreData,
}

impl Resolver<'_> {
    pub fn endpoint(&self, row: &FlowRow) -> Option<EndpointInfo> {
        let ip = row.remote_ip()?;
        Some(resolve_endpoint(
            ip,
            Some(&row.key.device_id),
            Some((row.key.remote_port, row.key.transport)),
            &self.dns,
            &self.sni,
            self.dbs,
        ))
    }

    /// What the release files and reports call the remote end.
    pub fn release_name(&self, row: &FlowRow) -> String {
        match &row.key.remote {
            Remote::Host(h) => h.clone(),
            Remote::Ip(_) => self.endpoint(row).map(|e| e.release_name()).unwrap_or_default(),
        }
    }

    /// Registered domain of the remote end, if it has a hostname.
    pub fn registered_domain(&self, row: &FlowRow) -> Option<String> {
        match &row.key.remote {
            Remote::Host(h) => self.dbs.registered_domain(h),
            Remote::Ip(_) => self.endpoint(row).and_then(|e| e.registered_domain),
        }
    }

    pub fn endpoint_table(&self, id: &DeviceId) -> Result<Vec<EndpointRow>, StoreError> {
        if !self.store.knows_device(id) {
            return Err(StoreError::UnknownDevice(id.clone()));
        }
        let mut by_remote: BTreeMap<Remote, EndpointRow> = BTreeMap::new();
        for row in self.store.flows.values().filter(|r| &r.key.device_id == id) {
            let e = by_remote.entry(row.key.remote.clone()).or_insert_with(|| self.endpoint_row(row));
            e.bytes_sent += row.bytes_sent;
            e.bytes_received += row.bytes_received;
            e.ports.insert(row.key.remote_port);
        }
        let mut out: Vec<EndpointRow> = by_remote.into_values().collect();
        out.sort_by(|a, b| (b.bytes_sent + b.bytes_received).cmp(&(a.bytes_sent + a.bytes_received)).then(a.remote.cmp(&b.remote)));
        Ok(out)
    }

    fn endpoint_row(&self, row: &FlowRow) -> EndpointRow {
        let info = self.endpoint(row);
        let (display, hostname, confident) = match (&row.key.remote, &info) {
            (Remote::Host(h), _) => (h.clone(), Some(h.clone()), true),
            (_, Some(i)) => (i.display_name(), i.hostname.clone(), i.confident),
            (r, None) => (r.to_string(), None, false),
        };
        let rd = self.registered_domain(row);
        EndpointRow {
            remote: row.key.remote.to_string(),
            display_name: display,
            hostname,
            confident,
            company: info.as_ref().and_then(|i| i.company.clone()).or_else(|| rd.as_ref().and_then(|d| self.dbs.domain_owners.get(d).cloned())),
            country: info.as_ref().and_then(|i| i.country.clone()),
            is_tracker: rd.as_ref().is_some_and(|d| self.dbs.tracker_domains.contains(d)),
            service_guess: info.as_ref().and_then(|i| i.service_guess.clone()),
            ports: BTreeSet::new(),
            bytes_sent: 0,
            bytes_received: 0,
        }
    }

    /// Per-endpoint bytes per bucket of `bucket_secs` (a multiple of the
    /// window size).
    pub fn bandwidth(&self, id: &DeviceId, bucket_secs: i64) -> Result<Vec<BandwidthSeries>, StoreError> {
        if !self.store.knows_device(id) {
            return Err(StoreError::UnknownDevice(id.clone()));
        }
        let bucket = (bucket_secs.max(WINDOW_SECS) / WINDOW_SECS) * WINDOW_SECS;
        let mut series: BTreeMap<String, BTreeMap<i64, (u64, u64)>> = BTreeMap::new();
        for row in self.store.flows.values().filter(|r| &r.key.device_id == id) {
            let name = self.endpoint(row).map(|e| e.display_name()).unwrap_or_else(|| row.key.remote.to_string());
            let start = row.key.window_start.div_euclid(bucket) * bucket;
            let p = series.entry(name).or_default().entry(start).or_default();
            p.0 += row.bytes_sent;
            p.1 += row.bytes_received;
        }
        Ok(series
            .into_iter()
            .map(|(endpoint, pts)| BandwidthSeries {
                endpoint,
                points: pts.into_iter().map(|(t, (s, r))| BandwidthPoint { window_start: t, bytes_sent: s, bytes_received: r }).collect(),
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointRow {
    pub remote: String,
    /// Hostname or IP; inferred hostnames end in `?`.
    pub display_name: String,
    pub hostname: Option<String>,
    pub confident: bool,
    pub company: Option<String>,
    pub country: Option<String>,
    pub is_tracker: bool,
    pub service_guess: Option<String>,
    pub ports: BTreeSet<u16>,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandwidthPoint {
    pub window_start: i64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandwidthSeries {
    pub endpoint: String,
    pub points: Vec<BandwidthPoint>,
}

/// Device list entry for the dashboard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceSummary {
    pub device_id: DeviceId,
    pub oui: Option<String>,
    pub oui_vendor: Option<String>,
    pub classification: Classification,
    pub monitored: bool,
    pub name: Option<String>,
    pub category: Option<Category>,
    pub vendor: Option<String>,
    pub last_seen: Option<Timestamp>,
}

pub fn device_list(data: &StoreData) -> Vec<DeviceSummary> {
    data.device_ids()
        .into_iter()
        .map(|id| {
            let d = data.devices.get(&id);
            let l = data.label(&id);
            DeviceSummary {
                oui: d.map(|d| d.oui.clone()),
                oui_vendor: d.and_then(|d| d.oui_vendor.clone()),
                classification: d.map(|d| d.classification).unwrap_or(Classification::Unknown),
                monitored: d.is_some_and(|d| d.monitored),
                name: l.map(|l| l.raw_name.clone()).filter(|n| !n.is_empty()),
                category: l.map(|l| l.std_category),
                vendor: l.map(|l| l.std_vendor.clone()),
                last_seen: d.map(|d| d.last_seen),
                device_id: id,
            }
        })
        .collect()
}

/// A [`StoreData`] bound to a file.
#[derive(Debug)]
pub struct Store {
    data: StoreData,
    path: Option<PathBuf>,
}

impl Store {
    pub fn in_memory() -> Self {
        Store { data: StoreData::default(), path: None }
    }

    /// Opens the file at `path`, or starts empty if it does not exist yet.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let data = match fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt(path.display().to_string(), e))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => StoreData::default(),
            Err(e) => return Err(e.into()),
        };
        Ok(Store { data, path: Some(path.to_path_buf()) })
    }

    pub fn data(&self) -> &StoreData {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut StoreData {
        &mut self.data
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Writes to a temp file beside the store, then renames over it.
    pub fn save(&self) -> Result<(), StoreError> {
        let Some(path) = &self.path else { return Ok(()) };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&serde_json::to_vec(&self.data).expect("store serializes"))?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}
