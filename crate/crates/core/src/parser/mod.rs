//! Metadata extraction from intercepted frames.
//!
//! [`TrafficParser::parse_packet`] turns one ethernet frame into zero or more
//! [`Observation`]s: DNS lookups, remote contacts, identity hints and raw TLS
//! ClientHello records. All other payload is dropped once a stream prefix has
//! been inspected.

pub mod dhcp;
pub mod discovery;
pub mod dns;
pub mod http;
pub mod net;
pub mod reassembly;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::net::IpAddr;

use ipnet::{IpNet, Ipv4Net};
use serde::{Deserialize, Serialize};

use crate::source::RawPacket;
use crate::types::{MacAddr, Timestamp, Transport};
use net::{TcpSegmentView, L4};
use reassembly::{StreamKey, StreamTable, MAX_PREFIX};

pub const PORT_DNS: u16 = 53;
pub const PORT_DHCP_SERVER: u16 = 67;
pub const PORT_HTTP: u16 = 80;
pub const PORT_SSDP: u16 = 1900;
pub const PORT_MDNS: u16 = 5353;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsObservation {
    pub device_mac: MacAddr,
    /// Lowercase, no trailing dot.
    pub query_name: String,
    pub answers: Vec<IpAddr>,
    /// Server the query was sent to or answered by.
    pub resolver: IpAddr,
    pub is_response: bool,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HintKind {
    Ssdp,
    Mdns,
    Upnp,
    HttpUserAgent,
    DhcpHostname,
}

impl HintKind {
    pub const ALL: [HintKind; 5] =
        [HintKind::Ssdp, HintKind::Mdns, HintKind::Upnp, HintKind::HttpUserAgent, HintKind::DhcpHostname];

    pub fn as_str(&self) -> &'static str {
        match self {
            HintKind::Ssdp => "ssdp",
            HintKind::Mdns => "mdns",
            HintKind::Upnp => "upnp",
            HintKind::HttpUserAgent => "http-user-agent",
            HintKind::DhcpHostname => "dhcp-hostname",
        }
    }
}

impl fmt::Display for HintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityHint {
    pub device_mac: MacAddr,
    pub kind: HintKind,
    pub value: String,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteContact {
    pub device_mac: MacAddr,
    pub remote_ip: IpAddr,
    pub remote_port: u16,
    pub transport: Transport,
    pub bytes_out: u64,
    pub bytes_in: u64,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientHelloBytes {
    pub device_mac: MacAddr,
    pub remote_ip: IpAddr,
    pub remote_port: u16,
    pub timestamp: Timestamp,
    /// One or more complete TLS handshake records carrying the ClientHello.
    pub record_bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Observation {
    Dns(DnsObservation),
    Hint(IdentityHint),
    Contact(RemoteContact),
    ClientHello(ClientHelloBytes),
}

impl Observation {
    pub fn device_mac(&self) -> MacAddr {
        match self {
            Observation::Dns(o) => o.device_mac,
            Observation::Hint(o) => o.device_mac,
            Observation::Contact(o) => o.device_mac,
            Observation::ClientHello(o) => o.device_mac,
        }
    }

    pub fn timestamp(&self) -> Timestamp {
        match self {
            Observation::Dns(o) => o.timestamp,
            Observation::Hint(o) => o.timestamp,
            Observation::Contact(o) => o.timestamp,
            Observation::ClientHello(o) => o.timestamp,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParserConfig {
    pub local_nets: Vec<IpNet>,
    /// Frames sent by the inspector itself (forwarded copies) are ignored.
    pub engine_mac: Option<MacAddr>,
    /// Known IP to MAC bindings, e.g. from the ARP scan.
    pub hosts: HashMap<IpAddr, MacAddr>,
}

impl ParserConfig {
    pub fn new(subnet: Ipv4Net) -> Self {
        ParserConfig {
            local_nets: vec![
                IpNet::V4(subnet),
                "fe80::/10".parse().unwrap(),
                "fc00::/7".parse().unwrap(),
            ],
            engine_mac: None,
            hosts: HashMap::new(),
        }
    }

    pub fn with_engine(mut self, mac: MacAddr) -> Self {
        self.engine_mac = Some(mac);
        self
    }

    pub fn with_host(mut self, ip: IpAddr, mac: MacAddr) -> Self {
        self.hosts.insert(ip, mac);
        self
    }

    /// Local subnet, link-scope, multicast and broadcast addresses.
    pub fn is_local(&self, ip: IpAddr) -> bool {
        if ip.is_multicast() || ip.is_unspecified() || ip.is_loopback() {
            return true;
        }
        if let IpAddr::V4(v4) = ip {
            if v4.is_broadcast() {
                return true;
            }
        }
        self.local_nets.iter().any(|n| n.contains(&ip))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseStats {
    pub packets: u64,
    pub skipped_forwarded: u64,
    pub non_ip: u64,
    /// Malformed structures by protocol name.
    pub malformed: BTreeMap<String, u64>,
}

impl ParseStats {
    fn bump(&mut self, proto: &str) {
        *self.malformed.entry(proto.to_string()).or_default() += 1;
    }

    pub fn malformed_total(&self) -> u64 {
        self.malformed.values().sum()
    }
}

/// Per-worker parser state: configuration, the prefix reassembly table,
/// LOCATION endpoints announced over SSDP and learned address bindings.
#[derive(Debug)]
pub struct TrafficParser {
    config: ParserConfig,
    streams: StreamTable,
    upnp_servers: HashMap<(IpAddr, u16), MacAddr>,
    learned: HashMap<IpAddr, MacAddr>,
    stats: ParseStats,
}

enum TlsPrefix {
    NeedMore,
    NotTls,
    Malformed,
    Complete(usize),
}

/// Checks whether `prefix` starts with a complete ClientHello handshake
/// message carried in consecutive handshake records.
fn scan_client_hello(prefix: &[u8]) -> TlsPrefix {
    if prefix.is_empty() {
        return TlsPrefix::NeedMore;
    }
    if prefix[0] != 0x16 {
        return TlsPrefix::NotTls;
    }
    if prefix.len() >= 2 && prefix[1] != 0x03 {
        return TlsPrefix::NotTls;
    }
    if prefix.len() >= 6 && prefix[5] != 0x01 {
        return TlsPrefix::NotTls;
    }
    let mut off = 0;
    let mut handshake: Vec<u8> = Vec::new();
    loop {
        if prefix.len() < off + 5 {
            return TlsPrefix::NeedMore;
        }
        if prefix[off] != 0x16 {
            return TlsPrefix::Malformed;
        }
        let len = usize::from(u16::from_be_bytes([prefix[off + 3], prefix[off + 4]]));
        if len == 0 || len > (1 << 14) + 2048 {
            return TlsPrefix::Malformed;
        }
        let end = off + 5 + len;
        if prefix.len() < end {
            return if end > MAX_PREFIX { TlsPrefix::Malformed } else { TlsPrefix::NeedMore };
        }
        handshake.extend_from_slice(&prefix[off + 5..end]);
        off = end;
        if handshake.len() >= 4 {
            let hs_len = (usize::from(handshake[1]) << 16) | (usize::from(handshake[2]) << 8) | usize::from(handshake[3]);
            if handshake.len() >= 4 + hs_len {
                return TlsPrefix::Complete(off);
            }
            if 4 + hs_len > MAX_PREFIX {
                return TlsPrefix::Malformed;
            }
        }
    }
}

impl TrafficParser {
    pub fn new(config: ParserConfig) -> Self {
        TrafficParser {
            config,
            streams: StreamTable::default(),
            upnp_servers: HashMap::new(),
            learned: HashMap::new(),
            stats: ParseStats::default(),
        }
    }

    pub fn config(&self) -> &ParserConfig {
        &self.config
    }

    pub fn set_host(&mut self, ip: IpAddr, mac: MacAddr) {
        self.config.hosts.insert(ip, mac);
    }

    pub fn stats(&self) -> &ParseStats {
        &self.stats
    }

    fn mac_for(&self, ip: IpAddr) -> Option<MacAddr> {
        self.config.hosts.get(&ip).or_else(|| self.learned.get(&ip)).copied()
    }

    pub fn parse_packet(&mut self, pkt: &RawPacket) -> Vec<Observation> {
        self.stats.packets += 1;
        let frame = match net::decode_frame(&pkt.data) {
            Ok(f) => f,
            Err(_) => {
                self.stats.bump("frame");
                return Vec::new();
            }
        };
        if Some(frame.src_mac) == self.config.engine_mac {
            self.stats.skipped_forwarded += 1;
            return Vec::new();
        }
        let Some(ip) = frame.ip else {
            self.stats.non_ip += 1;
            return Vec::new();
        };
        let ts = pkt.timestamp;
        let src_local = self.config.is_local(ip.src);
        let dst_local = self.config.is_local(ip.dst);
        if src_local && !ip.src.is_multicast() && !ip.src.is_unspecified() {
            self.learned.entry(ip.src).or_insert(frame.src_mac);
        }
        // Sender MAC for frames a local device emits; the table wins so a
        // device behind a bridge keeps one identity.
        let sender_mac = self.mac_for(ip.src).filter(|_| src_local).unwrap_or(frame.src_mac);
        let receiver_mac = self.mac_for(ip.dst).unwrap_or(frame.dst_mac);
        let wire_len = u64::from(pkt.original_length);

        let mut out = Vec::new();
        match &ip.transport {
            L4::Udp(udp) => {
                let (sp, dp) = (udp.src_port, udp.dst_port);
                if dp == PORT_DNS && src_local {
                    self.dns_message(udp.payload, sender_mac, ip.dst, ts, &mut out);
                } else if sp == PORT_DNS && dst_local {
                    self.dns_message(udp.payload, receiver_mac, ip.src, ts, &mut out);
                }
                if (sp == PORT_MDNS || dp == PORT_MDNS) && src_local {
                    match dns::decode(udp.payload) {
                        Ok(msg) => {
                            if let Some(v) = discovery::summarize_mdns(&msg) {
                                out.push(hint(sender_mac, HintKind::Mdns, v, ts));
                            }
                        }
                        Err(_) => self.stats.bump("mdns"),
                    }
                }
                if dp == PORT_DHCP_SERVER {
                    match dhcp::decode(udp.payload) {
                        Ok(msg) => {
                            if msg.is_request() {
                                if let Some(h) = msg.hostname.filter(|h| !h.is_empty()) {
                                    out.push(hint(MacAddr(msg.client_mac), HintKind::DhcpHostname, h, ts));
                                }
                            }
                        }
                        Err(_) => self.stats.bump("dhcp"),
                    }
                }
                if (dp == PORT_SSDP || sp == PORT_SSDP) && src_local {
                    if let Some(a) = discovery::parse_ssdp(udp.payload) {
                        if let Some(loc) = a.location {
                            self.upnp_servers.insert(loc, sender_mac);
                        }
                        out.push(hint(sender_mac, HintKind::Ssdp, a.summary, ts));
                    }
                }
                self.contact(src_local, dst_local, &ip, sp, dp, Transport::Udp, sender_mac, receiver_mac, wire_len, ts, &mut out);
            }
            L4::Tcp(tcp) => {
                let (sp, dp) = (tcp.src_port, tcp.dst_port);
                let key = StreamKey { src: ip.src, src_port: sp, dst: ip.dst, dst_port: dp };
                self.tcp_payload(&key, tcp, src_local, dst_local, sender_mac, receiver_mac, ts, &mut out);
                self.contact(src_local, dst_local, &ip, sp, dp, Transport::Tcp, sender_mac, receiver_mac, wire_len, ts, &mut out);
            }
            L4::Other => {}
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn contact(
        &self,
        src_local: bool,
        dst_local: bool,
        ip: &net::IpPacket<'_>,
        sp: u16,
        dp: u16,
        transport: Transport,
        sender_mac: MacAddr,
        receiver_mac: MacAddr,
        wire_len: u64,
        ts: Timestamp,
        out: &mut Vec<Observation>,
    ) {
        if src_local && !dst_local && !ip.src.is_multicast() {
            out.push(Observation::Contact(RemoteContact {
                device_mac: sender_mac,
                remote_ip: ip.dst,
                remote_port: dp,
                transport,
                bytes_out: wire_len,
                bytes_in: 0,
                timestamp: ts,
            }));
        } else if dst_local && !src_local && !ip.dst.is_multicast() && !receiver_mac.is_multicast() {
            out.push(Observation::Contact(RemoteContact {
                device_mac: receiver_mac,
                remote_ip: ip.src,
                remote_port: sp,
                transport,
                bytes_out: 0,
                bytes_in: wire_len,
                timestamp: ts,
            }));
        }
    }

    fn dns_message(&mut self, payload: &[u8], device: MacAddr, resolver: IpAddr, ts: Timestamp, out: &mut Vec<Observation>) {
        let msg = match dns::decode(payload) {
            Ok(m) => m,
            Err(_) => {
                self.stats.bump("dns");
                return;
            }
        };
        let answers = if msg.is_response { msg.answer_addresses() } else { Vec::new() };
        for (name, _) in msg.questions.iter().take(1) {
            if name.is_empty() {
                continue;
            }
            out.push(Observation::Dns(DnsObservation {
                device_mac: device,
                query_name: name.clone(),
                answers: answers.clone(),
                resolver,
                is_response: msg.is_response,
                timestamp: ts,
            }));
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn tcp_payload(
        &mut self,
        key: &StreamKey,
        tcp: &TcpSegmentView<'_>,
        src_local: bool,
        dst_local: bool,
        sender_mac: MacAddr,
        receiver_mac: MacAddr,
        ts: Timestamp,
        out: &mut Vec<Observation>,
    ) {
        if tcp.has(TcpSegmentView::SYN) {
            self.streams.syn(*key, tcp.seq);
        }
        let closing = tcp.has(TcpSegmentView::RST) || tcp.has(TcpSegmentView::FIN);
        if tcp.payload.is_empty() || self.streams.is_finished(key) {
            if closing {
                self.streams.forget(key);
            }
            return;
        }
        let data_seq = if tcp.has(TcpSegmentView::SYN) { tcp.seq.wrapping_add(1) } else { tcp.seq };
        let upnp_device = self.upnp_servers.get(&(key.src, key.src_port)).copied();
        let dns_side = key.dst_port == PORT_DNS || key.src_port == PORT_DNS;
        let first_byte_ok = |b: u8| b == 0x16 || b.is_ascii_uppercase() || dns_side || upnp_device.is_some();
        if self.streams.buffered(key) == 0 && !first_byte_ok(tcp.payload[0]) {
            self.streams.finish(*key);
            return;
        }
        let prefix = self.streams.push(*key, data_seq, tcp.payload);
        let at_cap = self.streams.buffered(key) >= MAX_PREFIX;

        if dns_side {
            // Length-prefixed DNS over TCP; only the first message.
            if prefix.len() >= 2 {
                let n = usize::from(u16::from_be_bytes([prefix[0], prefix[1]]));
                if prefix.len() >= 2 + n {
                    if key.dst_port == PORT_DNS && src_local {
                        self.dns_message(&prefix[2..2 + n], sender_mac, key.dst, ts, out);
                    } else if key.src_port == PORT_DNS && dst_local {
                        self.dns_message(&prefix[2..2 + n], receiver_mac, key.src, ts, out);
                    }
                    self.streams.finish(*key);
                    return;
                }
            }
            if at_cap {
                self.stats.bump("dns");
                self.streams.finish(*key);
            }
            return;
        }

        if let Some(device) = upnp_device {
            if discovery::upnp_document_complete(&prefix) || at_cap || closing {
                if let Some(v) = discovery::summarize_upnp(&prefix) {
                    out.push(hint(device, HintKind::Upnp, v, ts));
                }
                self.streams.finish(*key);
            }
            return;
        }

        if !src_local {
            self.streams.finish(*key);
            return;
        }

        if key.dst_port == PORT_HTTP && prefix[0] != 0x16 {
            match http::scan_request(&prefix) {
                http::HeaderScan::Incomplete if !at_cap => {}
                http::HeaderScan::Done(Some(ua)) => {
                    out.push(hint(sender_mac, HintKind::HttpUserAgent, ua, ts));
                    self.streams.finish(*key);
                }
                http::HeaderScan::Incomplete => {
                    self.stats.bump("http");
                    self.streams.finish(*key);
                }
                _ => self.streams.finish(*key),
            }
            return;
        }

        match scan_client_hello(&prefix) {
            TlsPrefix::NeedMore if !at_cap => {}
            TlsPrefix::Complete(end) => {
                out.push(Observation::ClientHello(ClientHelloBytes {
                    device_mac: sender_mac,
                    remote_ip: key.dst,
                    remote_port: key.dst_port,
                    timestamp: ts,
                    record_bytes: prefix[..end].to_vec(),
                }));
                self.streams.finish(*key);
            }
            TlsPrefix::NotTls => self.streams.finish(*key),
            TlsPrefix::NeedMore | TlsPrefix::Malformed => {
                self.stats.bump("tls");
                self.streams.finish(*key);
            }
        }
        if closing {
            self.streams.forget(key);
            self.streams.finish(*key);
        }
    }
}

fn hint(device_mac: MacAddr, kind: HintKind, value: String, timestamp: Timestamp) -> Observation {
    Observation::Hint(IdentityHint { device_mac, kind, value, timestamp })
}
