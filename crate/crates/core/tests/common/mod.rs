//! Fixture builders shared by the integration tests. Everything here is
//! written against the wire formats directly so that it does not lean on
//! the code under test.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::{IpAddr, Ipv4Addr};
use std::sync::Arc;

use etherparse::{NetHeaders, PacketBuilder, PacketHeaders, TransportHeader};
use homescope_core::source::RawPacket;
use homescope_core::{MacAddr, Timestamp};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const SUBNET: &str = "192.168.1.0/24";
pub const GATEWAY_IP: Ipv4Addr = Ipv4Addr::new(192, 168, 1, 1);
pub const GATEWAY_MAC: MacAddr = MacAddr([0x00, 0x11, 0x32, 0xaa, 0xbb, 0x01]);

pub fn lan_ip(host: u8) -> Ipv4Addr {
    Ipv4Addr::new(192, 168, 1, host)
}

// ---------------------------------------------------------------- frames

#[derive(Debug, Clone, Copy, Default)]
pub struct TcpFlags {
    pub syn: bool,
    pub ack: bool,
    pub psh: bool,
    pub fin: bool,
}

pub const SYN: TcpFlags = TcpFlags { syn: true, ack: false, psh: false, fin: false };
pub const DATA: TcpFlags = TcpFlags { syn: false, ack: true, psh: true, fin: false };
pub const ACK: TcpFlags = TcpFlags { syn: false, ack: true, psh: false, fin: false };

fn ips(src: IpAddr, dst: IpAddr, eth: PacketBuilder_) -> etherparse::PacketBuilderStep<etherparse::IpHeaders> {
    match (src, dst) {
        (IpAddr::V4(s), IpAddr::V4(d)) => eth.ipv4(s.octets(), d.octets(), 64),
        (IpAddr::V6(s), IpAddr::V6(d)) => eth.ipv6(s.octets(), d.octets(), 64),
        _ => panic!("mixed address families"),
    }
}

type PacketBuilder_ = etherparse::PacketBuilderStep<etherparse::Ethernet2Header>;

pub fn udp(src_mac: MacAddr, dst_mac: MacAddr, src: IpAddr, dst: IpAddr, sp: u16, dp: u16, payload: &[u8]) -> Vec<u8> {
    let b = ips(src, dst, PacketBuilder::ethernet2(src_mac.0, dst_mac.0)).udp(sp, dp);
    let mut out = Vec::with_capacity(b.size(payload.len()));
    b.write(&mut out, payload).expect("udp frame");
    out
}

#[allow(clippy::too_many_arguments)]
pub fn tcp(
    src_mac: MacAddr,
    dst_mac: MacAddr,
    src: IpAddr,
    dst: IpAddr,
    sp: u16,
    dp: u16,
    seq: u32,
    flags: TcpFlags,
    payload: &[u8],
) -> Vec<u8> {
    let mut b = ips(src, dst, PacketBuilder::ethernet2(src_mac.0, dst_mac.0)).tcp(sp, dp, seq, 64240);
    if flags.syn {
        b = b.syn();
    }
    if flags.ack {
        b = b.ack(1);
    }
    if flags.psh {
        b = b.psh();
    }
    if flags.fin {
        b = b.fin();
    }
    let mut out = Vec::with_capacity(b.size(payload.len()));
    b.write(&mut out, payload).expect("tcp frame");
    out
}

// ------------------------------------------------------ app payloads

fn qname(name: &str) -> Vec<u8> {
    let mut out = Vec::new();
    for label in name.trim_end_matches('.').split('.') {
        out.push(label.len() as u8);
        out.extend_from_slice(label.as_bytes());
    }
    out.push(0);
    out
}

pub fn dns_query(id: u16, name: &str) -> Vec<u8> {
    let mut m = Vec::new();
    m.extend_from_slice(&id.to_be_bytes());
    m.extend_from_slice(&[0x01, 0x00, 0, 1, 0, 0, 0, 0, 0, 0]);
    m.extend(qname(name));
    m.extend_from_slice(&[0, 1, 0, 1]);
    m
}

pub fn dns_response(id: u16, name: &str, answers: &[Ipv4Addr]) -> Vec<u8> {
    let mut m = Vec::new();
    m.extend_from_slice(&id.to_be_bytes());
    m.extend_from_slice(&[0x81, 0x80, 0, 1]);
    m.extend_from_slice(&(answers.len() as u16).to_be_bytes());
    m.extend_from_slice(&[0, 0, 0, 0]);
    m.extend(qname(name));
    m.extend_from_slice(&[0, 1, 0, 1]);
    for a in answers {
        // pointer back to the question name
        m.extend_from_slice(&[0xc0, 0x0c, 0, 1, 0, 1, 0, 0, 0x01, 0x2c, 0, 4]);
        m.extend_from_slice(&a.octets());
    }
    m
}

pub fn dhcp_request(client: MacAddr, hostname: &str) -> Vec<u8> {
    let mut m = vec![1, 1, 6, 0];
    m.extend_from_slice(&0x3903_f326u32.to_be_bytes());
    m.extend_from_slice(&[0; 4]);
    m.extend_from_slice(&[0; 16]);
    m.extend_from_slice(&client.0);
    m.extend_from_slice(&[0; 10]);
    m.extend_from_slice(&[0; 192]);
    m.extend_from_slice(&[99, 130, 83, 99]);
    m.extend_from_slice(&[53, 1, 3]);
    m.push(12);
    m.push(hostname.len() as u8);
    m.extend_from_slice(hostname.as_bytes());
    m.push(255);
    m
}

pub fn ssdp_notify(server: &str, location: &str) -> Vec<u8> {
    format!(
        "NOTIFY * HTTP/1.1\r\nHOST: 239.255.255.250:1900\r\nNT: upnp:rootdevice\r\nNTS: ssdp:alive\r\n\
         SERVER: {server}\r\nLOCATION: {location}\r\nUSN: uuid:2f402f80-da50-11e1-9b23-001788255acc::upnp:rootdevice\r\n\r\n"
    )
    .into_bytes()
}

pub fn http_get(host: &str, ua: &str) -> Vec<u8> {
    format!("GET / HTTP/1.1\r\nHost: {host}\r\nUser-Agent: {ua}\r\nAccept: */*\r\n\r\n").into_bytes()
}

// ------------------------------------------------------ ClientHellos

pub mod hello {
    use super::*;

    pub const GREASE_A: u16 = 0x0a0a;
    pub const GREASE_B: u16 = 0x4a4a;
    pub const GREASE_C: u16 = 0xdada;

    pub fn ext(t: u16, data: Vec<u8>) -> (u16, Vec<u8>) {
        (t, data)
    }

    pub fn sni(host: &str) -> (u16, Vec<u8>) {
        let mut entry = vec![0u8];
        entry.extend_from_slice(&(host.len() as u16).to_be_bytes());
        entry.extend_from_slice(host.as_bytes());
        let mut d = (entry.len() as u16).to_be_bytes().to_vec();
        d.extend(entry);
        (0, d)
    }

    pub fn groups(gs: &[u16]) -> (u16, Vec<u8>) {
        let mut d = ((gs.len() * 2) as u16).to_be_bytes().to_vec();
        for g in gs {
            d.extend_from_slice(&g.to_be_bytes());
        }
        (10, d)
    }

    pub fn point_formats(fs: &[u8]) -> (u16, Vec<u8>) {
        let mut d = vec![fs.len() as u8];
        d.extend_from_slice(fs);
        (11, d)
    }

    pub fn signature_algorithms(algs: &[u16]) -> (u16, Vec<u8>) {
        let mut d = ((algs.len() * 2) as u16).to_be_bytes().to_vec();
        for a in algs {
            d.extend_from_slice(&a.to_be_bytes());
        }
        (13, d)
    }

    pub fn supported_versions(vs: &[u16]) -> (u16, Vec<u8>) {
        let mut d = vec![(vs.len() * 2) as u8];
        for v in vs {
            d.extend_from_slice(&v.to_be_bytes());
        }
        (43, d)
    }

    pub fn key_share(group: u16, key_len: usize) -> (u16, Vec<u8>) {
        let mut entry = group.to_be_bytes().to_vec();
        entry.extend_from_slice(&(key_len as u16).to_be_bytes());
        entry.extend(std::iter::repeat_n(0x42, key_len));
        let mut d = (entry.len() as u16).to_be_bytes().to_vec();
        d.extend(entry);
        (51, d)
    }

    /// A single handshake record holding one ClientHello.
    pub fn record(record_version: u16, legacy_version: u16, suites: &[u16], exts: Option<&[(u16, Vec<u8>)]>) -> Vec<u8> {
        let mut body = legacy_version.to_be_bytes().to_vec();
        body.extend((0u8..32).map(|i| i.wrapping_mul(7)));
        body.push(0); // session id
        body.extend_from_slice(&((suites.len() * 2) as u16).to_be_bytes());
        for s in suites {
            body.extend_from_slice(&s.to_be_bytes());
        }
        body.extend_from_slice(&[1, 0]); // null compression
        if let Some(exts) = exts {
            let mut block = Vec::new();
            for (t, d) in exts {
                block.extend_from_slice(&t.to_be_bytes());
                block.extend_from_slice(&(d.len() as u16).to_be_bytes());
                block.extend_from_slice(d);
            }
            body.extend_from_slice(&(block.len() as u16).to_be_bytes());
            body.extend(block);
        }
        let mut hs = vec![1];
        hs.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
        hs.extend(body);
        let mut rec = vec![22];
        rec.extend_from_slice(&record_version.to_be_bytes());
        rec.extend_from_slice(&(hs.len() as u16).to_be_bytes());
        rec.extend(hs);
        rec
    }

    /// First flight of a rustls client: exactly one ClientHello record.
    /// An IP server name makes rustls leave out SNI.
    pub fn rustls(versions: &[&'static rustls::SupportedProtocolVersion], server: &str) -> Vec<u8> {
        use rustls::pki_types::ServerName;
        let provider = Arc::new(rustls::crypto::ring::default_provider());
        let config = rustls::ClientConfig::builder_with_provider(provider)
            .with_protocol_versions(versions)
            .expect("versions supported")
            .with_root_certificates(rustls::RootCertStore::empty())
            .with_no_client_auth();
        let name = ServerName::try_from(server.to_string()).expect("server name");
        let mut conn = rustls::ClientConnection::new(Arc::new(config), name).expect("client");
        let mut out = Vec::new();
        conn.write_tls(&mut out).expect("write hello");
        out
    }
}

// --------------------------------------------------- JA3 oracle

pub mod ja3 {
    use md5_oracle as md5;
    use tls_parser::{
        parse_tls_client_hello_extensions, parse_tls_plaintext, TlsExtension, TlsExtensionType, TlsMessage,
        TlsMessageHandshake,
    };

    fn grease(v: u16) -> bool {
        v & 0x0f0f == 0x0a0a && v >> 8 == v & 0xff
    }

    pub struct Parsed {
        pub legacy_version: u16,
        pub suites: Vec<u16>,
        pub sni: Option<String>,
        pub supported_versions: Vec<u16>,
        pub ja3: String,
        pub digest: String,
    }

    /// Reference JA3 over tls-parser's view of the record.
    pub fn parse(record: &[u8]) -> Parsed {
        let (_, plain) = parse_tls_plaintext(record).expect("tls-parser reads the record");
        let ch = plain
            .msg
            .iter()
            .find_map(|m| match m {
                TlsMessage::Handshake(TlsMessageHandshake::ClientHello(ch)) => Some(ch),
                _ => None,
            })
            .expect("client hello");
        let exts = match ch.ext {
            Some(raw) => parse_tls_client_hello_extensions(raw).expect("extensions parse").1,
            None => Vec::new(),
        };
        let mut types = Vec::new();
        let mut curves = Vec::new();
        let mut formats = Vec::new();
        let mut sni = None;
        let mut versions = Vec::new();
        for e in &exts {
            // tls-parser folds every GREASE value into one type; take the raw one back
            let t = match e {
                TlsExtension::Grease(t, _) => *t,
                other => TlsExtensionType::from(other).0,
            };
            types.push(t);
            match e {
                TlsExtension::EllipticCurves(g) => curves.extend(g.iter().map(|g| g.0)),
                TlsExtension::EcPointFormats(f) => formats.extend_from_slice(f),
                TlsExtension::SNI(names) => {
                    sni = names.iter().find(|(t, _)| t.0 == 0).map(|(_, n)| String::from_utf8_lossy(n).into_owned())
                }
                TlsExtension::SupportedVersions(v) => versions.extend(v.iter().map(|v| v.0)),
                _ => {}
            }
        }
        let dash = |v: Vec<String>| v.join("-");
        let ja3 = format!(
            "{},{},{},{},{}",
            ch.version.0,
            dash(ch.ciphers.iter().map(|c| c.0).filter(|c| !grease(*c)).map(|c| c.to_string()).collect()),
            dash(types.iter().filter(|t| !grease(**t)).map(|t| t.to_string()).collect()),
            dash(curves.iter().filter(|c| !grease(**c)).map(|c| c.to_string()).collect()),
            dash(formats.iter().map(|f| f.to_string()).collect()),
        );
        let digest = format!("{:x}", md5::compute(ja3.as_bytes()));
        Parsed {
            legacy_version: ch.version.0,
            suites: ch.ciphers.iter().map(|c| c.0).collect(),
            sni,
            supported_versions: versions,
            ja3,
            digest,
        }
    }
}

// ------------------------------------------------ synthetic capture

#[derive(Debug, Clone)]
pub struct Device {
    pub mac: MacAddr,
    pub ip: Ipv4Addr,
}

pub fn devices(n: usize) -> Vec<Device> {
    (0..n)
        .map(|i| Device { mac: MacAddr([0x02, 0x1a, 0x2b, 0x3c, 0x00, 10 + i as u8]), ip: lan_ip(10 + i as u8) })
        .collect()
}

/// A mix of outbound and inbound unicast traffic between LAN devices and
/// internet hosts, plus some LAN-internal and multicast noise that must not
/// count as a remote contact. Timestamps wander forward with some reordering.
pub fn synthetic_capture(seed: u64, packets: usize, devs: &[Device]) -> Vec<RawPacket> {
    let mut rng = StdRng::seed_from_u64(seed);
    let remotes: Vec<Ipv4Addr> = (0..40).map(|i| Ipv4Addr::new(93 + (i % 7) as u8, 184, i as u8, 10 + i as u8)).collect();
    let ports = [443u16, 80, 123, 8883, 1883, 5222, 8080, 53];
    let mut out = Vec::with_capacity(packets);
    let mut clock = Timestamp::from_secs(1_700_000_000).0;
    for i in 0..packets {
        clock += rng.gen_range(0..400_000);
        let jitter = rng.gen_range(-2_000_000..=0);
        let ts = Timestamp((clock + jitter).max(0));
        let d = &devs[rng.gen_range(0..devs.len())];
        let remote = remotes[rng.gen_range(0..remotes.len())];
        let rport = ports[rng.gen_range(0..ports.len())];
        let lport = 40000 + rng.gen_range(0..50);
        let len = rng.gen_range(0..900);
        let payload: Vec<u8> = (0..len).map(|k| (k as u8).wrapping_add(i as u8) | 0x80).collect();
        let frame = match rng.gen_range(0..20) {
            0 => {
                // LAN to LAN
                let peer = &devs[rng.gen_range(0..devs.len())];
                udp(d.mac, peer.mac, d.ip.into(), peer.ip.into(), 5000, 5001, &payload)
            }
            1 => udp(d.mac, MacAddr([0x01, 0x00, 0x5e, 0x7f, 0xff, 0xfa]), d.ip.into(), Ipv4Addr::new(239, 255, 255, 250).into(), 1901, 1900, b"M-SEARCH * HTTP/1.1\r\n\r\n"),
            2..=9 => {
                let (s, dm) = (d.mac, GATEWAY_MAC);
                if rport == 123 || rport == 53 {
                    udp(s, dm, d.ip.into(), remote.into(), lport, rport, &payload)
                } else {
                    tcp(s, dm, d.ip.into(), remote.into(), lport, rport, i as u32, DATA, &payload)
                }
            }
            _ => {
                let (s, dm) = (GATEWAY_MAC, d.mac);
                if rport == 123 || rport == 53 {
                    udp(s, dm, remote.into(), d.ip.into(), rport, lport, &payload)
                } else {
                    tcp(s, dm, remote.into(), d.ip.into(), rport, lport, i as u32, ACK, &payload)
                }
            }
        };
        out.push(RawPacket::new(ts, frame));
    }
    out
}

pub fn is_local(subnet: &ipnet::Ipv4Net, ip: IpAddr) -> bool {
    match ip {
        IpAddr::V4(v4) => v4.is_multicast() || v4.is_broadcast() || v4.is_unspecified() || subnet.contains(&v4),
        IpAddr::V6(v6) => v6.is_multicast() || (v6.segments()[0] & 0xffc0) == 0xfe80 || (v6.segments()[0] & 0xfe00) == 0xfc00,
    }
}

/// (device mac, remote ip, remote port, is tcp, window start) -> (sent, received)
pub type ContactSums = BTreeMap<(MacAddr, IpAddr, u16, bool, i64), (u64, u64)>;

/// Brute-force per-contact byte sums read off the frames with etherparse.
pub fn brute_force_contacts(packets: &[RawPacket], subnet: &ipnet::Ipv4Net) -> ContactSums {
    let mut out = ContactSums::new();
    for p in packets {
        let h = PacketHeaders::from_ethernet_slice(&p.data).expect("frame decodes");
        let eth = h.link.and_then(|l| l.ethernet2()).expect("ethernet");
        let (src, dst): (IpAddr, IpAddr) = match h.net {
            Some(NetHeaders::Ipv4(ip, _)) => (Ipv4Addr::from(ip.source).into(), Ipv4Addr::from(ip.destination).into()),
            Some(NetHeaders::Ipv6(ip, _)) => (std::net::Ipv6Addr::from(ip.source).into(), std::net::Ipv6Addr::from(ip.destination).into()),
            _ => continue,
        };
        let (sp, dp, is_tcp) = match h.transport {
            Some(TransportHeader::Udp(u)) => (u.source_port, u.destination_port, false),
            Some(TransportHeader::Tcp(t)) => (t.source_port, t.destination_port, true),
            _ => continue,
        };
        let window = p.timestamp.0.div_euclid(1_000_000).div_euclid(5) * 5;
        let len = p.original_length as u64;
        let (sl, dl) = (is_local(subnet, src), is_local(subnet, dst));
        if sl && !dl {
            out.entry((MacAddr(eth.source), dst, dp, is_tcp, window)).or_default().0 += len;
        } else if dl && !sl && !dst.is_multicast() {
            out.entry((MacAddr(eth.destination), src, sp, is_tcp, window)).or_default().1 += len;
        }
    }
    out
}
