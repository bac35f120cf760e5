//! ARP scanning and pairwise ARP spoofing.
//!
//! Discovery sends one who-has per subnet address and collects replies.
//! Interception tells every party in `{gateway} ∪ monitored` that each other
//! party's IP lives at the engine's MAC, two frames per unordered pair per
//! two-second period, so `N` monitored devices cost `N(N+1)` frames of 42
//! bytes every period.

use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;
use std::sync::{mpsc, Arc, RwLock};
use std::time::{Duration, Instant};

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::source::{CaptureHandle, Injector, SourceError, SourceEvent, ARP_FRAME_LEN};
use crate::types::{MacAddr, Timestamp};

/// Default cap on non-gateway devices per session.
pub const MAX_MONITORED: usize = 50;
pub const SPOOF_PERIOD: Duration = Duration::from_secs(2);
pub const PACKETS_PER_PAIR: usize = 2;
/// Smallest prefix length accepted for a scan.
pub const MIN_SCAN_PREFIX: u8 = 16;

const ETHERTYPE_ARP: [u8; 2] = [0x08, 0x06];
const OP_REQUEST: u16 = 1;
const OP_REPLY: u16 = 2;

#[derive(Debug, thiserror::Error)]
pub enum ArpError {
    #[error("subnet {0} is too large to scan (prefix must be at least /{MIN_SCAN_PREFIX})")]
    UnboundedSubnet(Ipv4Net),
    #[error("capture handle is closed")]
    ClosedHandle,
    #[error("monitored device count {0} out of range 0..={MAX_MONITORED}")]
    DeviceCountOutOfRange(usize),
    #[error("invalid spoof set: {0}")]
    InvalidSpoofSet(String),
    #[error(transparent)]
    Source(SourceError),
}

impl From<SourceError> for ArpError {
    fn from(e: SourceError) -> Self {
        match e {
            SourceError::Closed => ArpError::ClosedHandle,
            other => ArpError::Source(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanHost {
    pub ip: Ipv4Addr,
    pub mac: MacAddr,
    pub first_seen: Timestamp,
    pub last_seen: Timestamp,
    pub is_gateway: bool,
}

impl LanHost {
    pub fn new(ip: Ipv4Addr, mac: MacAddr) -> Self {
        LanHost { ip, mac, first_seen: Timestamp(0), last_seen: Timestamp(0), is_gateway: false }
    }
}

/// The inspector's own addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EngineIdentity {
    pub mac: MacAddr,
    pub ip: Ipv4Addr,
}

/// A decoded IPv4-over-ethernet ARP frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArpFrame {
    pub eth_dst: MacAddr,
    pub eth_src: MacAddr,
    pub operation: u16,
    pub sender_mac: MacAddr,
    pub sender_ip: Ipv4Addr,
    pub target_mac: MacAddr,
    pub target_ip: Ipv4Addr,
}

impl ArpFrame {
    pub fn is_reply(&self) -> bool {
        self.operation == OP_REPLY
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut f = Vec::with_capacity(ARP_FRAME_LEN);
        f.extend_from_slice(&self.eth_dst.0);
        f.extend_from_slice(&self.eth_src.0);
        f.extend_from_slice(&ETHERTYPE_ARP);
        f.extend_from_slice(&[0x00, 0x01, 0x08, 0x00, 6, 4]);
        f.extend_from_slice(&self.operation.to_be_bytes());
        f.extend_from_slice(&self.sender_mac.0);
        f.extend_from_slice(&self.sender_ip.octets());
        f.extend_from_slice(&self.target_mac.0);
        f.extend_from_slice(&self.target_ip.octets());
        debug_assert_eq!(f.len(), ARP_FRAME_LEN);
        f
    }

    /// Decodes frames carrying ethernet/IPv4 ARP; anything else is `None`.
    pub fn decode(frame: &[u8]) -> Option<ArpFrame> {
        if frame.len() < ARP_FRAME_LEN || frame[12..14] != ETHERTYPE_ARP {
            return None;
        }
        let b = &frame[14..];
        if b[0..6] != [0x00, 0x01, 0x08, 0x00, 6, 4] {
            return None;
        }
        let mac = |o: usize| MacAddr([b[o], b[o + 1], b[o + 2], b[o + 3], b[o + 4], b[o + 5]]);
        let ip = |o: usize| Ipv4Addr::new(b[o], b[o + 1], b[o + 2], b[o + 3]);
        Some(ArpFrame {
            eth_dst: MacAddr([frame[0], frame[1], frame[2], frame[3], frame[4], frame[5]]),
            eth_src: MacAddr([frame[6], frame[7], frame[8], frame[9], frame[10], frame[11]]),
            operation: u16::from_be_bytes([b[6], b[7]]),
            sender_mac: mac(8),
            sender_ip: ip(14),
            target_mac: mac(18),
            target_ip: ip(24),
        })
    }
}

fn who_has(engine: &EngineIdentity, target: Ipv4Addr) -> ArpFrame {
    ArpFrame {
        eth_dst: MacAddr::BROADCAST,
        eth_src: engine.mac,
        operation: OP_REQUEST,
        sender_mac: engine.mac,
        sender_ip: engine.ip,
        target_mac: MacAddr::ZERO,
        target_ip: target,
    }
}

#[derive(Clone, Debug)]
pub struct ScanConfig {
    pub subnet: Ipv4Net,
    pub engine: EngineIdentity,
    pub gateway_ip: Ipv4Addr,
    /// How long a live scan listens for replies after sending requests.
    pub listen: Duration,
    pub max_devices: usize,
}

impl ScanConfig {
    pub fn new(subnet: Ipv4Net, engine: EngineIdentity, gateway_ip: Ipv4Addr) -> Self {
        ScanConfig { subnet, engine, gateway_ip, listen: Duration::from_secs(3), max_devices: MAX_MONITORED }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ScanResult {
    /// Distinct hosts in first-seen order; at most `max_devices` plus the gateway.
    pub hosts: Vec<LanHost>,
    pub requests_sent: usize,
    /// Distinct non-gateway hosts dropped by the device cap.
    pub dropped_over_cap: usize,
}

impl ScanResult {
    pub fn gateway(&self) -> Option<&LanHost> {
        self.hosts.iter().find(|h| h.is_gateway)
    }
}

/// Sends one who-has per host address of the subnet, then collects replies
/// until end-of-stream (replay) or the listen window closes (live).
pub fn arp_scan(handle: &mut CaptureHandle, config: &ScanConfig) -> Result<ScanResult, ArpError> {
    if config.subnet.prefix_len() < MIN_SCAN_PREFIX {
        return Err(ArpError::UnboundedSubnet(config.subnet));
    }
    if !handle.is_open() {
        return Err(ArpError::ClosedHandle);
    }
    let mut result = ScanResult::default();
    for ip in config.subnet.hosts() {
        handle.inject_packet(&who_has(&config.engine, ip).encode())?;
        result.requests_sent += 1;
    }

    let mut tracker = HostTracker::new(config.gateway_ip, config.max_devices);
    let deadline = Instant::now() + config.listen;
    loop {
        if handle.is_live() && Instant::now() >= deadline {
            break;
        }
        match handle.next_event()? {
            SourceEvent::Packet(p) => {
                let Some(arp) = ArpFrame::decode(&p.data) else { continue };
                if !arp.is_reply()
                    || arp.sender_mac == config.engine.mac
                    || !config.subnet.contains(&arp.sender_ip)
                {
                    continue;
                }
                tracker.observe(arp.sender_ip, arp.sender_mac, p.timestamp);
            }
            SourceEvent::Idle => {}
            SourceEvent::EndOfStream => break,
        }
    }
    result.dropped_over_cap = tracker.dropped;
    result.hosts = tracker.hosts;
    debug!(hosts = result.hosts.len(), dropped = result.dropped_over_cap, "arp scan finished");
    Ok(result)
}

struct HostTracker {
    gateway_ip: Ipv4Addr,
    cap: usize,
    hosts: Vec<LanHost>,
    index: HashMap<MacAddr, usize>,
    over_cap: std::collections::HashSet<MacAddr>,
    dropped: usize,
}

impl HostTracker {
    fn new(gateway_ip: Ipv4Addr, cap: usize) -> Self {
        HostTracker {
            gateway_ip,
            cap,
            hosts: Vec::new(),
            index: HashMap::new(),
            over_cap: Default::default(),
            dropped: 0,
        }
    }

    fn observe(&mut self, ip: Ipv4Addr, mac: MacAddr, ts: Timestamp) {
        if let Some(&i) = self.index.get(&mac) {
            let h = &mut self.hosts[i];
            h.last_seen = h.last_seen.max(ts);
            h.is_gateway |= ip == self.gateway_ip;
            return;
        }
        let is_gateway = ip == self.gateway_ip;
        let non_gateway = self.hosts.iter().filter(|h| !h.is_gateway).count();
        if !is_gateway && non_gateway >= self.cap {
            if self.over_cap.insert(mac) {
                self.dropped += 1;
            }
            return;
        }
        self.index.insert(mac, self.hosts.len());
        self.hosts.push(LanHost { ip, mac, first_seen: ts, last_seen: ts, is_gateway });
    }
}

/// Gateway plus the devices being intercepted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpoofSet {
    gateway: LanHost,
    monitored: Vec<LanHost>,
}

impl SpoofSet {
    pub fn new(gateway: LanHost, mut monitored: Vec<LanHost>) -> Result<Self, ArpError> {
        if monitored.len() > MAX_MONITORED {
            return Err(ArpError::DeviceCountOutOfRange(monitored.len()));
        }
        if monitored.iter().any(|h| h.ip == gateway.ip || h.mac == gateway.mac) {
            return Err(ArpError::InvalidSpoofSet("gateway listed as a monitored device".into()));
        }
        monitored.sort_by_key(|h| h.ip);
        if monitored.windows(2).any(|w| w[0].ip == w[1].ip || w[0].mac == w[1].mac) {
            return Err(ArpError::InvalidSpoofSet("duplicate monitored device".into()));
        }
        let mut gateway = gateway;
        gateway.is_gateway = true;
        Ok(SpoofSet { gateway, monitored })
    }

    pub fn empty(gateway: LanHost) -> Self {
        SpoofSet::new(gateway, Vec::new()).expect("empty set is valid")
    }

    pub fn gateway(&self) -> &LanHost {
        &self.gateway
    }

    pub fn monitored(&self) -> &[LanHost] {
        &self.monitored
    }

    pub fn len(&self) -> usize {
        self.monitored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monitored.is_empty()
    }

    pub fn period(&self) -> Duration {
        SPOOF_PERIOD
    }

    pub fn packets_per_pair(&self) -> usize {
        PACKETS_PER_PAIR
    }

    /// Gateway first, then monitored devices by IP.
    pub fn parties(&self) -> Vec<LanHost> {
        let mut v = Vec::with_capacity(self.monitored.len() + 1);
        v.push(self.gateway.clone());
        v.extend(self.monitored.iter().cloned());
        v
    }

    fn rejects_engine(&self, engine: &EngineIdentity) -> bool {
        self.parties().iter().any(|h| h.ip == engine.ip || h.mac == engine.mac)
    }
}

fn reply_to(about: &LanHost, to: &LanHost, claimed_mac: MacAddr, eth_src: MacAddr) -> Vec<u8> {
    ArpFrame {
        eth_dst: to.mac,
        eth_src,
        operation: OP_REPLY,
        sender_mac: claimed_mac,
        sender_ip: about.ip,
        target_mac: to.mac,
        target_ip: to.ip,
    }
    .encode()
}

fn pairwise(parties: &[LanHost], mut emit: impl FnMut(&LanHost, &LanHost)) {
    for i in 0..parties.len() {
        for j in i + 1..parties.len() {
            emit(&parties[i], &parties[j]);
            emit(&parties[j], &parties[i]);
        }
    }
}

/// One period of spoofed ARP replies: for every unordered pair, each end is
/// told the other end's IP is at `engine`'s MAC.
pub fn spoof_schedule(set: &SpoofSet, engine: &EngineIdentity) -> Vec<Vec<u8>> {
    if set.rejects_engine(engine) {
        warn!("spoof set contains the engine's own address; refusing to spoof");
        return Vec::new();
    }
    let mut frames = Vec::with_capacity(frames_per_period(set.len()));
    pairwise(&set.parties(), |to, about| frames.push(reply_to(about, to, engine.mac, engine.mac)));
    frames
}

/// Truthful replies restoring the real bindings between every pair of `parties`.
pub fn corrective_frames(parties: &[LanHost], engine: &EngineIdentity) -> Vec<Vec<u8>> {
    let mut frames = Vec::new();
    pairwise(parties, |to, about| frames.push(reply_to(about, to, about.mac, engine.mac)));
    frames
}

pub fn frames_per_period(n: usize) -> usize {
    n * (n + 1)
}

/// Modeled spoofing bandwidth: `N(N+1)` 42-byte frames every two seconds.
pub fn overhead_bytes_per_second(n: usize) -> Result<u64, ArpError> {
    if n > MAX_MONITORED {
        return Err(ArpError::DeviceCountOutOfRange(n));
    }
    let n = n as u64;
    Ok(21 * (n + 1) * n)
}

/// Renders a byte rate as kilobytes (1000 B) per second with one decimal,
/// rounding half up.
pub fn format_kb_per_sec(bytes_per_sec: u64) -> String {
    let tenths = (bytes_per_sec + 50) / 100;
    format!("{}.{} KB/s", tenths / 10, tenths % 10)
}

/// Spoof set shared between the control path and the spoofer. The spoofer
/// reads it once per period boundary.
#[derive(Clone, Debug)]
pub struct SpoofControl {
    inner: Arc<RwLock<SpoofSet>>,
}

impl SpoofControl {
    pub fn new(set: SpoofSet) -> Self {
        SpoofControl { inner: Arc::new(RwLock::new(set)) }
    }

    pub fn snapshot(&self) -> SpoofSet {
        self.inner.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn replace(&self, set: SpoofSet) {
        *self.inner.write().unwrap_or_else(|p| p.into_inner()) = set;
    }

    /// Replaces the monitored list, keeping the gateway.
    pub fn set_monitored(&self, monitored: Vec<LanHost>) -> Result<(), ArpError> {
        let mut guard = self.inner.write().unwrap_or_else(|p| p.into_inner());
        *guard = SpoofSet::new(guard.gateway.clone(), monitored)?;
        Ok(())
    }
}

/// Decides when the next spoof period starts.
pub trait Pacer {
    /// Returns `false` once the spoofer should stop.
    fn next_period(&mut self) -> bool;
}

pub struct StopHandle(mpsc::Sender<()>);

impl StopHandle {
    pub fn stop(&self) {
        let _ = self.0.send(());
    }
}

/// Wall-clock pacer: the first period starts immediately unless a stop is
/// already pending, later ones start `period` apart.
pub struct IntervalPacer {
    period: Duration,
    stop: mpsc::Receiver<()>,
    started: bool,
}

impl IntervalPacer {
    pub fn new(period: Duration) -> (StopHandle, IntervalPacer) {
        let (tx, rx) = mpsc::channel();
        (StopHandle(tx), IntervalPacer { period, stop: rx, started: false })
    }
}

impl Pacer for IntervalPacer {
    fn next_period(&mut self) -> bool {
        if !self.started {
            self.started = true;
            return matches!(self.stop.try_recv(), Err(mpsc::TryRecvError::Empty));
        }
        matches!(self.stop.recv_timeout(self.period), Err(mpsc::RecvTimeoutError::Timeout))
    }
}

/// Runs exactly `n` periods, then stops.
pub struct CountedPacer(pub usize);

impl Pacer for CountedPacer {
    fn next_period(&mut self) -> bool {
        if self.0 == 0 {
            return false;
        }
        self.0 -= 1;
        true
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpooferStats {
    pub periods: usize,
    pub spoof_frames: usize,
    pub corrective_frames: usize,
    pub failures: usize,
}

/// Injects one spoof schedule per period until the pacer stops, then one
/// period of corrective replies. Devices dropped from the set mid-run get
/// their bindings restored at the next period boundary.
pub fn run_spoofer(
    control: &SpoofControl,
    engine: &EngineIdentity,
    injector: &Injector,
    pacer: &mut dyn Pacer,
) -> SpooferStats {
    let mut stats = SpooferStats::default();
    let send = |frames: Vec<Vec<u8>>, stats: &mut SpooferStats, corrective: bool| {
        for f in frames {
            match injector.inject(&f) {
                Ok(()) if corrective => stats.corrective_frames += 1,
                Ok(()) => stats.spoof_frames += 1,
                Err(e) => {
                    stats.failures += 1;
                    warn!(error = %e, "ARP injection failed");
                }
            }
        }
    };
    let mut previous: Option<SpoofSet> = None;
    while pacer.next_period() {
        let set = control.snapshot();
        if let Some(prev) = &previous {
            let restored = dropped_pairs(prev, &set);
            if !restored.is_empty() {
                let frames: Vec<Vec<u8>> = restored
                    .iter()
                    .flat_map(|(a, b)| {
                        [reply_to(b, a, b.mac, engine.mac), reply_to(a, b, a.mac, engine.mac)]
                    })
                    .collect();
                send(frames, &mut stats, true);
            }
        }
        send(spoof_schedule(&set, engine), &mut stats, false);
        stats.periods += 1;
        previous = Some(set);
    }
    let last = control.snapshot();
    let mut parties: BTreeMap<Ipv4Addr, LanHost> = last.parties().into_iter().map(|h| (h.ip, h)).collect();
    if let Some(prev) = previous {
        for h in prev.parties() {
            parties.entry(h.ip).or_insert(h);
        }
    }
    let parties: Vec<LanHost> = parties.into_values().collect();
    if parties.len() > 1 {
        send(corrective_frames(&parties, engine), &mut stats, true);
    }
    stats
}

fn dropped_pairs(prev: &SpoofSet, next: &SpoofSet) -> Vec<(LanHost, LanHost)> {
    let keep: std::collections::HashSet<Ipv4Addr> = next.parties().iter().map(|h| h.ip).collect();
    let parties = prev.parties();
    let mut out = Vec::new();
    for i in 0..parties.len() {
        for j in i + 1..parties.len() {
            let (a, b) = (&parties[i], &parties[j]);
            if !keep.contains(&a.ip) || !keep.contains(&b.ip) {
                out.push((a.clone(), b.clone()));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::RawPacket;
    use std::collections::BTreeSet;

    fn mac(n: u8) -> MacAddr {
        MacAddr([0x02, 0, 0, 0, 0, n])
    }

    fn host(n: u8) -> LanHost {
        LanHost::new(Ipv4Addr::new(192, 168, 1, n), mac(n))
    }

    fn engine() -> EngineIdentity {
        EngineIdentity { mac: mac(200), ip: Ipv4Addr::new(192, 168, 1, 200) }
    }

    fn reply_packet(n: u8, ts: i64) -> RawPacket {
        let h = host(n);
        let f = ArpFrame {
            eth_dst: engine().mac,
            eth_src: h.mac,
            operation: OP_REPLY,
            sender_mac: h.mac,
            sender_ip: h.ip,
            target_mac: engine().mac,
            target_ip: engine().ip,
        };
        RawPacket::new(Timestamp::from_secs(ts), f.encode())
    }

    fn config() -> ScanConfig {
        ScanConfig::new("192.168.1.0/24".parse().unwrap(), engine(), Ipv4Addr::new(192, 168, 1, 1))
    }

    #[test]
    fn scan_of_slash24_sends_254_requests() {
        let mut h = CaptureHandle::replay(vec![]);
        let r = arp_scan(&mut h, &config()).unwrap();
        assert_eq!(r.requests_sent, 254);
        let log = h.injector().injection_log();
        assert_eq!(log.len(), 254);
        let targets: BTreeSet<Ipv4Addr> =
            log.iter().map(|f| ArpFrame::decode(f).unwrap().target_ip).collect();
        assert_eq!(targets.len(), 254);
        assert!(log.iter().all(|f| f.len() == ARP_FRAME_LEN));
    }

    #[test]
    fn scan_collects_distinct_replies() {
        // Duplicates of host 3 are collapsed by MAC.
        let pkts = vec![1, 2, 3, 3, 4, 5].into_iter().enumerate().map(|(i, n)| reply_packet(n, i as i64));
        let mut h = CaptureHandle::replay(pkts);
        let r = arp_scan(&mut h, &config()).unwrap();
        assert_eq!(r.hosts.len(), 5);
        assert_eq!(r.gateway().unwrap().ip, Ipv4Addr::new(192, 168, 1, 1));
        assert_eq!(r.hosts.iter().filter(|h| h.is_gateway).count(), 1);
        let three = r.hosts.iter().find(|h| h.mac == mac(3)).unwrap();
        assert_eq!(three.first_seen, Timestamp::from_secs(2));
        assert_eq!(three.last_seen, Timestamp::from_secs(3));
    }

    #[test]
    fn scan_caps_at_fifty_plus_gateway() {
        let pkts = (2..62u8).map(|n| reply_packet(n, n as i64)).chain([reply_packet(1, 100)]);
        let mut h = CaptureHandle::replay(pkts);
        let r = arp_scan(&mut h, &config()).unwrap();
        assert_eq!(r.hosts.iter().filter(|h| !h.is_gateway).count(), 50);
        assert!(r.gateway().is_some());
        assert_eq!(r.dropped_over_cap, 10);
        // earliest-seen kept
        assert!(r.hosts.iter().any(|h| h.mac == mac(2)));
        assert!(!r.hosts.iter().any(|h| h.mac == mac(61)));
    }

    #[test]
    fn scan_errors() {
        let mut h = CaptureHandle::replay(vec![]);
        let mut c = config();
        c.subnet = "10.0.0.0/8".parse().unwrap();
        assert!(matches!(arp_scan(&mut h, &c), Err(ArpError::UnboundedSubnet(_))));
        h.close();
        assert!(matches!(arp_scan(&mut h, &config()), Err(ArpError::ClosedHandle)));
    }

    #[test]
    fn schedule_examples() {
        let g = host(1);
        let one = SpoofSet::new(g.clone(), vec![host(10)]).unwrap();
        assert_eq!(spoof_schedule(&one, &engine()).len(), 2);

        let three = SpoofSet::new(g.clone(), vec![host(10), host(11), host(12)]).unwrap();
        let frames = spoof_schedule(&three, &engine());
        assert_eq!(frames.len(), 12);
        // Brute-force pair enumeration.
        let ips = [1u8, 10, 11, 12];
        let mut expected = BTreeSet::new();
        for a in ips {
            for b in ips {
                if a != b {
                    expected.insert((Ipv4Addr::new(192, 168, 1, a), Ipv4Addr::new(192, 168, 1, b)));
                }
            }
        }
        let got: BTreeSet<(Ipv4Addr, Ipv4Addr)> = frames
            .iter()
            .map(|f| {
                let a = ArpFrame::decode(f).unwrap();
                assert!(a.is_reply());
                assert_eq!(a.sender_mac, engine().mac);
                (a.target_ip, a.sender_ip)
            })
            .collect();
        assert_eq!(got, expected);

        let fifty = SpoofSet::new(g, (2..52).map(host).collect()).unwrap();
        assert_eq!(spoof_schedule(&fifty, &engine()).len(), 2550);
    }

    #[test]
    fn spoof_set_invariants() {
        let g = host(1);
        assert!(SpoofSet::new(g.clone(), vec![host(1)]).is_err());
        assert!(SpoofSet::new(g.clone(), (2..53).map(host).collect()).is_err());
        assert!(SpoofSet::new(g.clone(), vec![host(5), host(5)]).is_err());
        // engine among parties: refuse rather than claim our own IP
        let set = SpoofSet::new(g, vec![host(200)]).unwrap();
        assert!(spoof_schedule(&set, &engine()).is_empty());
    }

    #[test]
    fn overhead_values() {
        assert_eq!(overhead_bytes_per_second(0).unwrap(), 0);
        assert_eq!(overhead_bytes_per_second(10).unwrap(), 2310);
        assert_eq!(overhead_bytes_per_second(50).unwrap(), 53_550);
        assert_eq!(format_kb_per_sec(53_550), "53.6 KB/s");
        assert!(overhead_bytes_per_second(51).is_err());
    }

    #[test]
    fn spoofer_three_periods_then_corrective() {
        let control = SpoofControl::new(SpoofSet::new(host(1), vec![host(10), host(11)]).unwrap());
        let h = CaptureHandle::replay(vec![]);
        let stats = run_spoofer(&control, &engine(), &h.injector(), &mut CountedPacer(3));
        assert_eq!(stats.periods, 3);
        let log = h.injector().injection_log();
        assert_eq!(log.len(), 3 * 6 + 6);
        // Corrective frames carry true bindings.
        for f in &log[18..] {
            let a = ArpFrame::decode(f).unwrap();
            assert_eq!(a.sender_mac, mac(a.sender_ip.octets()[3]));
        }
    }

    #[test]
    fn spoofer_stopped_before_first_period() {
        let control = SpoofControl::new(SpoofSet::new(host(1), vec![host(10), host(11)]).unwrap());
        let h = CaptureHandle::replay(vec![]);
        let (stop, mut pacer) = IntervalPacer::new(Duration::from_millis(10));
        stop.stop();
        let stats = run_spoofer(&control, &engine(), &h.injector(), &mut pacer);
        assert_eq!(stats.spoof_frames, 0);
        assert_eq!(stats.corrective_frames, 6);
        assert_eq!(h.injector().injected_count(), 6);
    }

    #[test]
    fn spoofer_with_no_devices_is_silent() {
        let control = SpoofControl::new(SpoofSet::empty(host(1)));
        let h = CaptureHandle::replay(vec![]);
        run_spoofer(&control, &engine(), &h.injector(), &mut CountedPacer(5));
        assert_eq!(h.injector().injected_count(), 0);
    }

    #[test]
    fn spoofer_failures_do_not_abort() {
        let control = SpoofControl::new(SpoofSet::new(host(1), vec![host(10)]).unwrap());
        let mut h = CaptureHandle::replay(vec![]);
        let inj = h.injector();
        h.close();
        let stats = run_spoofer(&control, &engine(), &inj, &mut CountedPacer(2));
        assert_eq!(stats.periods, 2);
        assert_eq!(stats.failures, 2 * 2 + 2);
    }

    struct TogglePacer {
        left: usize,
        control: SpoofControl,
        add_after: usize,
        extra: LanHost,
    }

    impl Pacer for TogglePacer {
        fn next_period(&mut self) -> bool {
            if self.left == 0 {
                return false;
            }
            if self.left == self.add_after {
                let mut m = self.control.snapshot().monitored().to_vec();
                m.push(self.extra.clone());
                self.control.set_monitored(m).unwrap();
            }
            self.left -= 1;
            true
        }
    }

    #[test]
    fn membership_changes_apply_at_period_boundary() {
        let control = SpoofControl::new(SpoofSet::new(host(1), vec![host(10)]).unwrap());
        let h = CaptureHandle::replay(vec![]);
        let mut pacer = TogglePacer { left: 2, control: control.clone(), add_after: 1, extra: host(11) };
        let stats = run_spoofer(&control, &engine(), &h.injector(), &mut pacer);
        // period 1: N=1 -> 2 frames; period 2: N=2 -> 6 frames
        assert_eq!(stats.spoof_frames, 8);
        assert_eq!(stats.corrective_frames, 6);
    }

    #[test]
    fn removed_device_bindings_restored_next_period() {
        let control = SpoofControl::new(SpoofSet::new(host(1), vec![host(10), host(11)]).unwrap());
        let h = CaptureHandle::replay(vec![]);
        struct RemovePacer(usize, SpoofControl);
        impl Pacer for RemovePacer {
            fn next_period(&mut self) -> bool {
                if self.0 == 0 {
                    return false;
                }
                if self.0 == 1 {
                    self.1.set_monitored(vec![host(10)]).unwrap();
                }
                self.0 -= 1;
                true
            }
        }
        let stats = run_spoofer(&control, &engine(), &h.injector(), &mut RemovePacer(2, control.clone()));
        assert_eq!(stats.spoof_frames, 6 + 2);
        // host 11 paired with gateway and host 10: 2 pairs restored, then final set (1 pair)
        assert_eq!(stats.corrective_frames, 4 + 2);
    }
}
