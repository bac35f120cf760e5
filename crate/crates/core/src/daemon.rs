//! Client-side pipeline: packets in, upload batches out.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::net::IpAddr;

use uuid::Uuid;

use crate::flows::{FlowAggregator, FlowWindow};
use crate::identity::{
    infer_general_purpose, sample_domains, Classification, DeviceRegistry, Evidence, FingerbankOracle, LabelRules,
    OuiDatabase,
};
use crate::parser::{HintKind, IdentityHint, Observation, TrafficParser};
use crate::privacy::{device_id, filter_upload, oui_text, DeviceId, Salt, UnknownPolicy, UploadGate};
use crate::psl::PublicSuffixList;
use crate::source::RawPacket;
use crate::tls::{analyze, ClientHelloRecord};
use crate::types::{MacAddr, Timestamp};
use crate::wire::{DeviceReport, IngestAck, UploadBatch, WireDns, WireHint};

/// Upload cadence in seconds of capture time.
pub const UPLOAD_INTERVAL_SECS: i64 = 5;

#[derive(Debug, Clone)]
pub struct InspectorOptions {
    pub unknown_policy: UnknownPolicy,
    pub timezone: Option<String>,
    pub dhcp_resolver: Option<IpAddr>,
    /// Monitor every discovered device without waiting for the dashboard.
    pub monitor_all: bool,
}

impl Default for InspectorOptions {
    fn default() -> Self {
        InspectorOptions { unknown_policy: UnknownPolicy::Upload, timezone: None, dhcp_resolver: None, monitor_all: false }
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct InspectorStats {
    pub packets: u64,
    pub observations: u64,
    pub withheld: u64,
    pub bad_hellos: u64,
    pub batches: u64,
}

#[derive(Default)]
struct DeviceState {
    id: Option<DeviceId>,
    last_seen: Timestamp,
    hints: Vec<IdentityHint>,
    seen_hints: HashSet<(HintKind, String)>,
    domains: BTreeSet<String>,
}

#[derive(Default)]
struct Pending {
    flows: Vec<FlowWindow>,
    hellos: Vec<ClientHelloRecord>,
    dns: Vec<WireDns>,
    hints: Vec<WireHint>,
}

/// Everything between the capture source and the uploader.
pub struct Inspector {
    salt: Salt,
    user_id: Uuid,
    options: InspectorOptions,
    parser: TrafficParser,
    aggregator: FlowAggregator,
    registry: DeviceRegistry,
    gate: UploadGate,
    rules: LabelRules,
    psl: PublicSuffixList,
    ouis: OuiDatabase,
    oracle: Option<Box<dyn FingerbankOracle>>,
    /// Overrides typed in before the device showed up.
    pending_overrides: HashSet<MacAddr>,
    devices: BTreeMap<MacAddr, DeviceState>,
    pending: Pending,
    span_start: Option<Timestamp>,
    last_ts: Timestamp,
    stats: InspectorStats,
}

impl Inspector {
    pub fn new(parser: TrafficParser, salt: Salt, user_id: Uuid, options: InspectorOptions) -> Self {
        let gate = UploadGate { unknown: options.unknown_policy, ..Default::default() };
        Inspector {
            salt,
            user_id,
            options,
            parser,
            aggregator: FlowAggregator::new(HashMap::new()),
            registry: DeviceRegistry::default(),
            gate,
            rules: LabelRules::bundled(),
            psl: PublicSuffixList::bundled(),
            ouis: OuiDatabase::bundled(),
            oracle: None,
            pending_overrides: HashSet::new(),
            devices: BTreeMap::new(),
            pending: Pending::default(),
            span_start: None,
            last_ts: Timestamp(0),
            stats: InspectorStats::default(),
        }
    }

    pub fn with_oracle(mut self, oracle: impl FingerbankOracle + 'static) -> Self {
        self.oracle = Some(Box::new(oracle));
        self
    }

    pub fn with_rules(mut self, rules: LabelRules) -> Self {
        self.rules = rules;
        self
    }

    pub fn stats(&self) -> &InspectorStats {
        &self.stats
    }

    pub fn registry(&self) -> &DeviceRegistry {
        &self.registry
    }

    pub fn device_id(&self, mac: &MacAddr) -> DeviceId {
        device_id(mac, &self.salt)
    }

    fn learn(&mut self, mac: MacAddr, ts: Timestamp) {
        if mac.is_multicast() || mac == MacAddr::ZERO {
            return;
        }
        let st = self.devices.entry(mac).or_default();
        if st.id.is_none() {
            let id = device_id(&mac, &self.salt);
            st.id = Some(id.clone());
            self.aggregator.map_device(mac, id);
            self.registry.observe(mac);
            if self.options.monitor_all {
                self.gate.monitored.insert(mac);
            }
        }
        st.last_seen = st.last_seen.max(ts);
        if self.pending_overrides.remove(&mac) {
            self.override_general_purpose(&mac).expect("just observed");
        }
    }

    /// Records a LAN host found by the ARP scan.
    pub fn add_host(&mut self, ip: IpAddr, mac: MacAddr, ts: Timestamp) {
        self.parser.set_host(ip, mac);
        self.learn(mac, ts);
    }

    pub fn set_monitored(&mut self, mac: MacAddr, on: bool) {
        if on {
            self.gate.monitored.insert(mac);
        } else {
            self.gate.monitored.remove(&mac);
        }
    }

    pub fn monitored(&self) -> &HashSet<MacAddr> {
        &self.gate.monitored
    }

    /// The user proved physical access by typing the full address.
    pub fn override_general_purpose(&mut self, mac: &MacAddr) -> Result<bool, crate::identity::OverrideError> {
        let changed = self.registry.override_general_purpose(mac)?;
        self.gate.overridden.insert(*mac);
        self.gate.classifications.insert(*mac, Classification::SmartHome);
        Ok(changed)
    }

    /// Like [`Inspector::override_general_purpose`], but for an address
    /// entered from local config: applied as soon as the device is seen.
    pub fn override_when_seen(&mut self, mac: MacAddr) {
        if self.registry.is_observed(&mac) {
            self.override_general_purpose(&mac).expect("observed");
        } else {
            self.pending_overrides.insert(mac);
        }
    }

    fn reclassify(&mut self, mac: MacAddr) {
        let Some(st) = self.devices.get(&mac) else { return };
        let Some(id) = &st.id else { return };
        let domains = sample_domains(id, &st.domains);
        let ev = Evidence::assemble(&mac, st.hints.clone(), domains, &self.ouis, self.oracle.as_deref());
        let inf = infer_general_purpose(&ev, &self.rules);
        let c = inf.classification;
        self.registry.record_inference(mac, inf);
        self.gate.classifications.insert(mac, self.registry.classification(&mac));
        if c == Classification::GeneralPurpose && !self.registry.overridden().contains(&mac) {
            tracing::info!(device = %oui_text(&mac), "device looks general-purpose; its traffic will not be uploaded");
        }
    }

    /// Feeds one captured frame through the parser, the upload gate and the
    /// flow aggregator.
    pub fn process(&mut self, pkt: &RawPacket) {
        self.stats.packets += 1;
        self.last_ts = self.last_ts.max(pkt.timestamp);
        self.span_start.get_or_insert(pkt.timestamp);
        let obs = self.parser.parse_packet(pkt);
        self.stats.observations += obs.len() as u64;
        let mut touched = BTreeSet::new();
        for o in &obs {
            let mac = o.device_mac();
            self.learn(mac, o.timestamp());
            let Some(st) = self.devices.get_mut(&mac) else { continue };
            match o {
                Observation::Hint(h) => {
                    if st.seen_hints.insert((h.kind, h.value.clone())) {
                        st.hints.push(h.clone());
                        touched.insert(mac);
                    }
                }
                Observation::Dns(d) if !d.is_response => {
                    if let Some(rd) = self.psl.registered_domain(&d.query_name) {
                        if st.domains.insert(rd) {
                            touched.insert(mac);
                        }
                    }
                }
                _ => {}
            }
        }
        for mac in touched {
            self.reclassify(mac);
        }
        let out = filter_upload(obs, &self.gate);
        self.stats.withheld += out.dropped.values().sum::<u64>();
        for o in out.kept {
            match o {
                Observation::Contact(c) => {
                    let w = self.aggregator.push(&c);
                    self.pending.flows.extend(w);
                }
                Observation::ClientHello(h) => {
                    let id = device_id(&h.device_mac, &self.salt);
                    match analyze(&h.record_bytes, id, h.timestamp) {
                        Ok(mut r) => {
                            r.remote_ip = Some(h.remote_ip);
                            r.remote_port = Some(h.remote_port);
                            self.pending.hellos.push(r);
                        }
                        Err(e) => {
                            self.stats.bad_hellos += 1;
                            tracing::debug!(error = e.code(), "ClientHello did not parse");
                        }
                    }
                }
                Observation::Dns(d) => self.pending.dns.push(WireDns::from_observation(&d, &self.salt)),
                Observation::Hint(h) => self.pending.hints.push(WireHint::from_hint(&h, &self.salt)),
            }
        }
    }

    /// True if a packet at `now` would push the current batch past one
    /// upload interval, so the batch should be cut first.
    pub fn batch_due_at(&self, now: Timestamp) -> bool {
        self.span_start.is_some_and(|s| now.0 - s.0 >= UPLOAD_INTERVAL_SECS * Timestamp::MICROS_PER_SEC)
    }

    fn device_reports(&self) -> Vec<DeviceReport> {
        self.devices
            .iter()
            .filter_map(|(mac, st)| {
                Some(DeviceReport {
                    device_id: st.id.clone()?,
                    oui: oui_text(mac),
                    oui_vendor: self.ouis.lookup(mac.oui()).map(str::to_string),
                    classification: self.registry.classification(mac),
                    monitored: self.gate.monitored.contains(mac),
                    last_seen: st.last_seen,
                })
            })
            .collect()
    }

    /// Cuts a batch from everything gathered so far.
    pub fn take_batch(&mut self) -> UploadBatch {
        let start = self.span_start.take().unwrap_or(self.last_ts);
        let mut b = UploadBatch::new(self.user_id, start, self.last_ts.max(start));
        let p = std::mem::take(&mut self.pending);
        b.flow_windows = p.flows;
        b.client_hellos = p.hellos;
        b.dns_observations = p.dns;
        b.identity_hints = p.hints;
        b.devices = self.device_reports();
        b.timezone = self.options.timezone.clone();
        b.dhcp_resolver = self.options.dhcp_resolver;
        self.stats.batches += 1;
        b
    }

    /// End of capture: closes all open windows.
    pub fn finish(&mut self) -> UploadBatch {
        let rest = self.aggregator.flush();
        self.pending.flows.extend(rest);
        self.take_batch()
    }

    /// The collector says which devices the dashboard has ticked.
    pub fn apply_ack(&mut self, ack: &IngestAck) {
        let changes: Vec<(MacAddr, bool)> = self
            .devices
            .iter()
            .filter_map(|(m, st)| st.id.as_ref().and_then(|id| ack.monitor.get(id)).map(|on| (*m, *on)))
            .collect();
        for (m, on) in changes {
            self.set_monitored(m, on);
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum UploadError {
    #[error("collector unreachable: {0}")]
    Unreachable(String),
    #[error("collector rejected batch: {0}")]
    Rejected(String),
}

pub trait Uploader {
    fn upload(&mut self, batch: &UploadBatch) -> Result<IngestAck, UploadError>;
}

/// Batches waiting for the collector. When full, the oldest is dropped.
#[derive(Debug)]
pub struct BatchQueue {
    cap: usize,
    queue: VecDeque<UploadBatch>,
    dropped: u64,
}

impl BatchQueue {
    pub fn new(cap: usize) -> Self {
        BatchQueue { cap: cap.max(1), queue: VecDeque::new(), dropped: 0 }
    }

    pub fn push(&mut self, b: UploadBatch) {
        if self.queue.len() == self.cap {
            self.queue.pop_front();
            self.dropped += 1;
            tracing::warn!(cap = self.cap, "upload buffer full; dropping oldest batch");
        }
        self.queue.push_back(b);
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Sends queued batches in order, stopping at the first failure so
    /// nothing is reordered. Returns the acks received.
    pub fn flush(&mut self, up: &mut dyn Uploader) -> Result<Vec<IngestAck>, UploadError> {
        let mut acks = Vec::new();
        while let Some(b) = self.queue.front() {
            match up.upload(b) {
                Ok(a) => {
                    acks.push(a);
                    self.queue.pop_front();
                }
                Err(e @ UploadError::Rejected(_)) => {
                    // A batch the collector refuses will never succeed.
                    self.queue.pop_front();
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(acks)
    }
}

/// Runs a finite capture through the inspector, uploading every interval.
pub fn run_capture(
    packets: impl IntoIterator<Item = RawPacket>,
    inspector: &mut Inspector,
    queue: &mut BatchQueue,
    up: &mut dyn Uploader,
) -> Vec<IngestAck> {
    let mut acks = Vec::new();
    let mut send = |inspector: &mut Inspector, queue: &mut BatchQueue, b: UploadBatch| {
        if !b.is_empty() {
            queue.push(b);
        }
        match queue.flush(up) {
            Ok(a) => {
                for ack in &a {
                    inspector.apply_ack(ack);
                }
                acks.extend(a);
            }
            Err(e) => tracing::warn!(error = %e, pending = queue.len(), "upload failed; keeping batches"),
        }
    };
    for p in packets {
        if inspector.batch_due_at(p.timestamp) {
            let b = inspector.take_batch();
            send(inspector, queue, b);
        }
        inspector.process(&p);
    }
    let b = inspector.finish();
    send(inspector, queue, b);
    acks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::LabelRules;
    use crate::parser::ParserConfig;
    use crate::store::StoreData;

    struct Local(StoreData);

    impl Uploader for Local {
        fn upload(&mut self, b: &UploadBatch) -> Result<IngestAck, UploadError> {
            self.0.ingest(b, &LabelRules::bundled()).map_err(|e| UploadError::Rejected(e.to_string()))
        }
    }

    struct Down;

    impl Uploader for Down {
        fn upload(&mut self, _: &UploadBatch) -> Result<IngestAck, UploadError> {
            Err(UploadError::Unreachable("test".into()))
        }
    }

    #[test]
    fn queue_caps_and_keeps_order() {
        let mut q = BatchQueue::new(2);
        for _ in 0..3 {
            q.push(UploadBatch::new(Uuid::nil(), Timestamp(0), Timestamp(0)));
        }
        assert_eq!((q.len(), q.dropped()), (2, 1));
        assert!(q.flush(&mut Down).is_err());
        assert_eq!(q.len(), 2);
        assert_eq!(q.flush(&mut Local(StoreData::default())).unwrap().len(), 2);
        assert!(q.is_empty());
    }

    #[test]
    fn empty_capture_uploads_nothing() {
        let parser = TrafficParser::new(ParserConfig::new("192.168.1.0/24".parse().unwrap()));
        let mut insp = Inspector::new(parser, Salt::from_bytes([3; 32]), Uuid::nil(), InspectorOptions::default());
        let mut up = Local(StoreData::default());
        let acks = run_capture(Vec::new(), &mut insp, &mut BatchQueue::new(4), &mut up);
        assert!(acks.is_empty());
        assert_eq!(up.0, StoreData::default());
    }

    #[test]
    fn override_waits_for_device() {
        let parser = TrafficParser::new(ParserConfig::new("192.168.1.0/24".parse().unwrap()));
        let mut insp = Inspector::new(parser, Salt::from_bytes([3; 32]), Uuid::nil(), InspectorOptions::default());
        let mac: MacAddr = "3c:22:fb:00:00:01".parse().unwrap();
        insp.override_when_seen(mac);
        assert!(insp.registry().overridden().is_empty());
        insp.add_host("192.168.1.20".parse().unwrap(), mac, Timestamp::from_secs(1));
        assert!(insp.registry().overridden().contains(&mac));
        assert_eq!(insp.registry().audit_log().len(), 1);
    }
}
