//! Packet sources: offline pcap/pcapng replay and live ethernet capture.
//!
//! Every stage downstream consumes [`RawPacket`]s through a [`CaptureHandle`],
//! so the whole pipeline runs identically against a live interface and a
//! replayed capture file. Replay handles never transmit; frames injected into
//! them are appended to an in-memory injection log instead.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use ipnet::Ipv4Net;
use pcap_file::pcap::{PcapHeader, PcapPacket, PcapReader, PcapWriter};
use pcap_file::pcapng::blocks::interface_description::InterfaceDescriptionOption;
use pcap_file::pcapng::{Block, PcapNgReader};
use pcap_file::{DataLink, Endianness, TsResolution};
use pnet_datalink::{DataLinkReceiver, DataLinkSender};

use crate::types::{MacAddr, Timestamp};

const ETHERNET_HEADER_LEN: usize = 14;
const ETHERTYPE_ARP: u16 = 0x0806;
/// Ethernet header plus an IPv4-over-ethernet ARP body.
pub const ARP_FRAME_LEN: usize = 42;

#[derive(Debug, thiserror::Error)]
pub enum SourceError {
    #[error("capture file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported link type {0} (only ethernet is supported)")]
    UnsupportedLinkType(String),
    #[error("insufficient privilege to capture on {0}")]
    InsufficientPrivilege(String),
    #[error("no such interface: {0}")]
    InterfaceNotFound(String),
    #[error("interface {0} has no ethernet address or IPv4 address")]
    NoAddress(String),
    #[error("capture handle is closed")]
    Closed,
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("capture file format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<pcap_file::PcapError> for SourceError {
    fn from(e: pcap_file::PcapError) -> Self {
        match e {
            pcap_file::PcapError::IoError(io) => SourceError::Io(io),
            other => SourceError::Format(other.to_string()),
        }
    }
}

/// One captured ethernet frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawPacket {
    pub timestamp: Timestamp,
    /// Ethernet frame bytes; its length is the capture length.
    pub data: Vec<u8>,
    /// Bytes on the wire, `>= data.len()`.
    pub original_length: u32,
}

impl RawPacket {
    pub fn new(timestamp: Timestamp, data: Vec<u8>) -> Self {
        let original_length = data.len() as u32;
        RawPacket { timestamp, data, original_length }
    }

    pub fn capture_length(&self) -> usize {
        self.data.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceKind {
    LiveInterface,
    PcapFile,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceDescriptor {
    pub kind: SourceKind,
    /// Interface name or file path.
    pub identifier: String,
}

impl SourceDescriptor {
    pub fn pcap(path: impl AsRef<Path>) -> Self {
        SourceDescriptor {
            kind: SourceKind::PcapFile,
            identifier: path.as_ref().display().to_string(),
        }
    }

    pub fn live(interface: impl Into<String>) -> Self {
        SourceDescriptor { kind: SourceKind::LiveInterface, identifier: interface.into() }
    }
}

/// Result of polling a source once.
#[derive(Debug)]
pub enum SourceEvent {
    Packet(RawPacket),
    /// Live source read timed out with nothing captured.
    Idle,
    /// Finite source exhausted. Reported once; later polls fail with `Closed`.
    EndOfStream,
}

enum Sink {
    Log(Vec<Vec<u8>>),
    Live(Box<dyn DataLinkSender>),
}

struct InjectorInner {
    closed: AtomicBool,
    sink: Mutex<Sink>,
}

/// Transmission side of a handle. Cloneable and usable from other threads
/// while the owning handle keeps reading.
#[derive(Clone)]
pub struct Injector {
    inner: Arc<InjectorInner>,
}

impl Injector {
    fn new(sink: Sink) -> Self {
        Injector {
            inner: Arc::new(InjectorInner { closed: AtomicBool::new(false), sink: Mutex::new(sink) }),
        }
    }

    /// Hands `frame` to the network exactly once, or appends it to the
    /// injection log on replay handles.
    pub fn inject(&self, frame: &[u8]) -> Result<(), SourceError> {
        if self.inner.closed.load(Ordering::Acquire) {
            return Err(SourceError::Closed);
        }
        validate_frame(frame)?;
        let mut sink = self.inner.sink.lock().unwrap_or_else(|p| p.into_inner());
        match &mut *sink {
            Sink::Log(log) => {
                log.push(frame.to_vec());
                Ok(())
            }
            Sink::Live(tx) => match tx.send_to(frame, None) {
                Some(res) => res.map_err(SourceError::Io),
                None => Err(SourceError::Io(io::Error::other("send buffer unavailable"))),
            },
        }
    }

    /// Snapshot of frames injected into a replay handle (empty for live handles).
    pub fn injection_log(&self) -> Vec<Vec<u8>> {
        match &*self.inner.sink.lock().unwrap_or_else(|p| p.into_inner()) {
            Sink::Log(log) => log.clone(),
            Sink::Live(_) => Vec::new(),
        }
    }

    pub fn injected_count(&self) -> usize {
        match &*self.inner.sink.lock().unwrap_or_else(|p| p.into_inner()) {
            Sink::Log(log) => log.len(),
            Sink::Live(_) => 0,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.inner.closed.load(Ordering::Acquire)
    }

    fn close(&self) {
        self.inner.closed.store(true, Ordering::Release);
    }
}

fn validate_frame(frame: &[u8]) -> Result<(), SourceError> {
    if frame.len() < ETHERNET_HEADER_LEN {
        return Err(SourceError::MalformedFrame(format!(
            "{} bytes is shorter than an ethernet header",
            frame.len()
        )));
    }
    let ethertype = u16::from_be_bytes([frame[12], frame[13]]);
    if ethertype == ETHERTYPE_ARP && frame.len() < ARP_FRAME_LEN {
        return Err(SourceError::MalformedFrame(format!(
            "ARP frame of {} bytes, expected at least {ARP_FRAME_LEN}",
            frame.len()
        )));
    }
    Ok(())
}

enum Reader {
    Pcap(PcapReader<BufReader<File>>),
    PcapNg {
        reader: PcapNgReader<BufReader<File>>,
        /// Per-interface timestamp resolution, as (is_power_of_two, exponent).
        resolutions: Vec<(bool, u8)>,
        pending: VecDeque<RawPacket>,
    },
    Memory(VecDeque<RawPacket>),
    Live {
        rx: Box<dyn DataLinkReceiver>,
        interface: String,
    },
}

/// An open packet source. Owned by one reader at a time.
pub struct CaptureHandle {
    kind: SourceKind,
    reader: Option<Reader>,
    injector: Injector,
    ended: bool,
}

impl std::fmt::Debug for CaptureHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CaptureHandle")
            .field("kind", &self.kind)
            .field("open", &self.reader.is_some())
            .field("ended", &self.ended)
            .finish()
    }
}

const PCAP_MAGICS: [[u8; 4]; 4] = [
    [0xd4, 0xc3, 0xb2, 0xa1],
    [0xa1, 0xb2, 0xc3, 0xd4],
    [0x4d, 0x3c, 0xb2, 0xa1],
    [0xa1, 0xb2, 0x3c, 0x4d],
];
const PCAPNG_MAGIC: [u8; 4] = [0x0a, 0x0d, 0x0d, 0x0a];

/// Opens a replay file or live interface.
pub fn open_source(descriptor: &SourceDescriptor) -> Result<CaptureHandle, SourceError> {
    match descriptor.kind {
        SourceKind::PcapFile => open_file(Path::new(&descriptor.identifier)),
        SourceKind::LiveInterface => open_live(&descriptor.identifier),
    }
}

fn open_file(path: &Path) -> Result<CaptureHandle, SourceError> {
    let mut file = File::open(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => SourceError::FileNotFound(path.to_path_buf()),
        _ => SourceError::Io(e),
    })?;
    let mut magic = [0u8; 4];
    let n = file.read(&mut magic)?;
    drop(file);
    let reader = BufReader::new(File::open(path)?);
    let reader = if n == 4 && PCAPNG_MAGIC == magic {
        open_pcapng(reader)?
    } else if n == 4 && PCAP_MAGICS.contains(&magic) {
        let r = PcapReader::new(reader)?;
        let link = r.header().datalink;
        if link != DataLink::ETHERNET {
            return Err(SourceError::UnsupportedLinkType(format!("{link:?}")));
        }
        Reader::Pcap(r)
    } else {
        return Err(SourceError::Format(format!("{} is not a pcap or pcapng file", path.display())));
    };
    Ok(CaptureHandle {
        kind: SourceKind::PcapFile,
        reader: Some(reader),
        injector: Injector::new(Sink::Log(Vec::new())),
        ended: false,
    })
}

fn open_pcapng(reader: BufReader<File>) -> Result<Reader, SourceError> {
    let mut ng = PcapNgReader::new(reader)?;
    let mut resolutions = Vec::new();
    let mut pending = VecDeque::new();
    // Validate link types up front: the first interface block precedes packets.
    loop {
        match ng.next_block() {
            None => break,
            Some(block) => {
                let block = block?;
                match block {
                    Block::InterfaceDescription(idb) => {
                        if idb.linktype != DataLink::ETHERNET {
                            return Err(SourceError::UnsupportedLinkType(format!("{:?}", idb.linktype)));
                        }
                        resolutions.push(tsresol(&idb.options));
                        break;
                    }
                    Block::EnhancedPacket(epb) => {
                        pending.push_back(epb_to_raw(&epb, &resolutions)?);
                    }
                    Block::SimplePacket(spb) => {
                        pending.push_back(RawPacket {
                            timestamp: Timestamp(0),
                            data: spb.data.to_vec(),
                            original_length: spb.original_len,
                        });
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(Reader::PcapNg { reader: ng, resolutions, pending })
}

fn tsresol(options: &[InterfaceDescriptionOption<'_>]) -> (bool, u8) {
    options
        .iter()
        .find_map(|o| match o {
            InterfaceDescriptionOption::IfTsResol(r) => Some((r & 0x80 != 0, r & 0x7f)),
            _ => None,
        })
        .unwrap_or((false, 6))
}

fn epb_to_raw(
    epb: &pcap_file::pcapng::blocks::enhanced_packet::EnhancedPacketBlock<'_>,
    resolutions: &[(bool, u8)],
) -> Result<RawPacket, SourceError> {
    // The reader stores raw timestamp units in the Duration's nanoseconds.
    let units = epb.timestamp.as_nanos();
    let (pow2, exp) = resolutions.get(epb.interface_id as usize).copied().unwrap_or((false, 6));
    let micros: u128 = if pow2 {
        (units * 1_000_000) >> exp
    } else if exp >= 6 {
        units / 10u128.pow(u32::from(exp) - 6)
    } else {
        units * 10u128.pow(6 - u32::from(exp))
    };
    Ok(RawPacket {
        timestamp: Timestamp(micros as i64),
        data: epb.data.to_vec(),
        original_length: epb.original_len.max(epb.data.len() as u32),
    })
}

fn open_live(name: &str) -> Result<CaptureHandle, SourceError> {
    let iface = pnet_datalink::interfaces()
        .into_iter()
        .find(|i| i.name == name)
        .ok_or_else(|| SourceError::InterfaceNotFound(name.to_string()))?;
    let config = pnet_datalink::Config {
        read_timeout: Some(Duration::from_millis(200)),
        ..Default::default()
    };
    match pnet_datalink::channel(&iface, config) {
        Ok(pnet_datalink::Channel::Ethernet(tx, rx)) => Ok(CaptureHandle {
            kind: SourceKind::LiveInterface,
            reader: Some(Reader::Live { rx, interface: name.to_string() }),
            injector: Injector::new(Sink::Live(tx)),
            ended: false,
        }),
        Ok(_) => Err(SourceError::UnsupportedLinkType(format!("non-ethernet channel on {name}"))),
        Err(e) if e.kind() == io::ErrorKind::PermissionDenied => {
            Err(SourceError::InsufficientPrivilege(name.to_string()))
        }
        Err(e) => Err(SourceError::Io(e)),
    }
}

/// Addresses of a live interface, needed by the ARP engine and parser.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InterfaceInfo {
    pub name: String,
    pub mac: MacAddr,
    pub ip: Ipv4Addr,
    pub subnet: Ipv4Net,
}

pub fn interface_info(name: &str) -> Result<InterfaceInfo, SourceError> {
    let iface = pnet_datalink::interfaces()
        .into_iter()
        .find(|i| i.name == name)
        .ok_or_else(|| SourceError::InterfaceNotFound(name.to_string()))?;
    let no_addr = || SourceError::NoAddress(name.to_string());
    let mac = iface.mac.map(|m| MacAddr(m.octets())).ok_or_else(no_addr)?;
    let (ip, prefix) = iface
        .ips
        .iter()
        .find_map(|n| match n.ip() {
            std::net::IpAddr::V4(v4) => Some((v4, n.prefix())),
            _ => None,
        })
        .ok_or_else(no_addr)?;
    let subnet = Ipv4Net::new(ip, prefix).map_err(|_| no_addr())?.trunc();
    Ok(InterfaceInfo { name: name.to_string(), mac, ip, subnet })
}

/// Default IPv4 gateway of `interface` from the kernel routing table.
/// Only Linux exposes it this way; elsewhere pass the gateway explicitly.
pub fn default_gateway(interface: &str) -> Option<Ipv4Addr> {
    let table = std::fs::read_to_string("/proc/net/route").ok()?;
    parse_route_table(&table, interface)
}

fn parse_route_table(table: &str, interface: &str) -> Option<Ipv4Addr> {
    table.lines().skip(1).find_map(|line| {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 3 || f[0] != interface || f[1] != "00000000" {
            return None;
        }
        // The kernel prints the address as a host-order u32.
        let gw = u32::from_str_radix(f[2], 16).ok()?;
        (gw != 0).then(|| Ipv4Addr::from(gw.to_ne_bytes()))
    })
}

impl CaptureHandle {
    /// Replay handle over in-memory packets; behaves like a pcap file source.
    pub fn replay(packets: impl IntoIterator<Item = RawPacket>) -> Self {
        CaptureHandle {
            kind: SourceKind::PcapFile,
            reader: Some(Reader::Memory(packets.into_iter().collect())),
            injector: Injector::new(Sink::Log(Vec::new())),
            ended: false,
        }
    }

    pub fn kind(&self) -> SourceKind {
        self.kind
    }

    pub fn is_live(&self) -> bool {
        self.kind == SourceKind::LiveInterface
    }

    pub fn is_open(&self) -> bool {
        self.reader.is_some()
    }

    pub fn injector(&self) -> Injector {
        self.injector.clone()
    }

    pub fn inject_packet(&self, frame: &[u8]) -> Result<(), SourceError> {
        self.injector.inject(frame)
    }

    /// Closes the handle; subsequent reads and injections fail with `Closed`.
    pub fn close(&mut self) {
        self.reader = None;
        self.injector.close();
    }

    pub fn next_event(&mut self) -> Result<SourceEvent, SourceError> {
        if self.ended {
            return Err(SourceError::Closed);
        }
        let reader = self.reader.as_mut().ok_or(SourceError::Closed)?;
        let next = match reader {
            Reader::Pcap(r) => match r.next_packet() {
                None => None,
                Some(p) => {
                    let p = p?;
                    Some(RawPacket {
                        timestamp: Timestamp((p.timestamp.as_nanos() / 1000) as i64),
                        original_length: p.orig_len.max(p.data.len() as u32),
                        data: p.data.into_owned(),
                    })
                }
            },
            Reader::PcapNg { reader, resolutions, pending } => {
                if let Some(p) = pending.pop_front() {
                    Some(p)
                } else {
                    loop {
                        match reader.next_block() {
                            None => break None,
                            Some(block) => match block? {
                                Block::InterfaceDescription(idb) => {
                                    if idb.linktype != DataLink::ETHERNET {
                                        return Err(SourceError::UnsupportedLinkType(format!(
                                            "{:?}",
                                            idb.linktype
                                        )));
                                    }
                                    resolutions.push(tsresol(&idb.options));
                                }
                                Block::EnhancedPacket(epb) => break Some(epb_to_raw(&epb, resolutions)?),
                                Block::SimplePacket(spb) => {
                                    break Some(RawPacket {
                                        timestamp: Timestamp(0),
                                        data: spb.data.to_vec(),
                                        original_length: spb.original_len,
                                    })
                                }
                                _ => {}
                            },
                        }
                    }
                }
            }
            Reader::Memory(q) => q.pop_front(),
            Reader::Live { rx, interface } => match rx.next() {
                Ok(frame) => {
                    return Ok(SourceEvent::Packet(RawPacket::new(Timestamp::now(), frame.to_vec())));
                }
                Err(e) if matches!(e.kind(), io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock) => {
                    return Ok(SourceEvent::Idle)
                }
                Err(e) if e.kind() == io::ErrorKind::PermissionDenied => {
                    return Err(SourceError::InsufficientPrivilege(interface.clone()))
                }
                Err(e) => return Err(SourceError::Io(e)),
            },
        };
        match next {
            Some(p) => Ok(SourceEvent::Packet(p)),
            None => {
                self.ended = true;
                Ok(SourceEvent::EndOfStream)
            }
        }
    }
}

impl Iterator for CaptureHandle {
    type Item = Result<RawPacket, SourceError>;

    /// Blocks through idle periods; ends after end-of-stream or on close.
    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.ended || self.reader.is_none() {
                return None;
            }
            match self.next_event() {
                Ok(SourceEvent::Packet(p)) => return Some(Ok(p)),
                Ok(SourceEvent::Idle) => continue,
                Ok(SourceEvent::EndOfStream) => return None,
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

/// Writes packets as a classic little-endian microsecond pcap.
pub fn write_pcap<W: Write>(writer: W, packets: &[RawPacket]) -> Result<W, SourceError> {
    let header = PcapHeader {
        snaplen: 262_144,
        datalink: DataLink::ETHERNET,
        ts_resolution: TsResolution::MicroSecond,
        endianness: Endianness::Little,
        ..Default::default()
    };
    let mut w = PcapWriter::with_header(writer, header)?;
    for p in packets {
        let ts = Duration::from_micros(p.timestamp.micros().max(0) as u64);
        w.write_packet(&PcapPacket::new(ts, p.original_length, &p.data))?;
    }
    Ok(w.into_writer())
}

pub fn write_pcap_file(path: impl AsRef<Path>, packets: &[RawPacket]) -> Result<(), SourceError> {
    let f = io::BufWriter::new(File::create(path)?);
    let mut f = write_pcap(f, packets)?;
    f.flush()?;
    Ok(())
}
