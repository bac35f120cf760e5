//! DNS wire-format decoding, shared by unicast DNS and mDNS.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DnsError {
    #[error("truncated message")]
    Truncated,
    #[error("compression loop")]
    PointerLoop,
    #[error("bad label")]
    BadLabel,
}

pub const TYPE_A: u16 = 1;
pub const TYPE_CNAME: u16 = 5;
pub const TYPE_PTR: u16 = 12;
pub const TYPE_TXT: u16 = 16;
pub const TYPE_AAAA: u16 = 28;
pub const TYPE_SRV: u16 = 33;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RData {
    A(Ipv4Addr),
    Aaaa(Ipv6Addr),
    Cname(String),
    Ptr(String),
    Srv { port: u16, target: String },
    Txt(Vec<String>),
    Other(u16),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub name: String,
    pub data: RData,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsMessage {
    pub id: u16,
    pub is_response: bool,
    pub questions: Vec<(String, u16)>,
    /// Answer, authority and additional sections in wire order.
    pub records: Vec<Record>,
    pub answer_count: usize,
}

impl DnsMessage {
    pub fn answers(&self) -> &[Record] {
        &self.records[..self.answer_count.min(self.records.len())]
    }

    /// A and AAAA addresses in the answer section.
    pub fn answer_addresses(&self) -> Vec<IpAddr> {
        self.answers()
            .iter()
            .filter_map(|r| match r.data {
                RData::A(a) => Some(IpAddr::V4(a)),
                RData::Aaaa(a) => Some(IpAddr::V6(a)),
                _ => None,
            })
            .collect()
    }
}

fn be16(b: &[u8], o: usize) -> Result<u16, DnsError> {
    b.get(o..o + 2).map(|s| u16::from_be_bytes([s[0], s[1]])).ok_or(DnsError::Truncated)
}

/// Lowercase, dot-separated, without the trailing root dot.
pub fn normalize_name(name: &str) -> String {
    name.trim_end_matches('.').to_ascii_lowercase()
}

fn read_name(msg: &[u8], mut off: usize) -> Result<(String, usize), DnsError> {
    let mut labels: Vec<String> = Vec::new();
    let mut end = None;
    let mut jumps = 0;
    loop {
        let len = *msg.get(off).ok_or(DnsError::Truncated)? as usize;
        match len & 0xc0 {
            0x00 => {
                if len == 0 {
                    off += 1;
                    break;
                }
                let label = msg.get(off + 1..off + 1 + len).ok_or(DnsError::Truncated)?;
                labels.push(String::from_utf8_lossy(label).into_owned());
                off += 1 + len;
            }
            0xc0 => {
                let ptr = (be16(msg, off)? & 0x3fff) as usize;
                if end.is_none() {
                    end = Some(off + 2);
                }
                jumps += 1;
                if jumps > 64 || ptr >= msg.len() {
                    return Err(DnsError::PointerLoop);
                }
                off = ptr;
            }
            _ => return Err(DnsError::BadLabel),
        }
        if labels.iter().map(|l| l.len() + 1).sum::<usize>() > 255 {
            return Err(DnsError::BadLabel);
        }
    }
    Ok((labels.join("."), end.unwrap_or(off)))
}

pub fn decode(msg: &[u8]) -> Result<DnsMessage, DnsError> {
    if msg.len() < 12 {
        return Err(DnsError::Truncated);
    }
    let id = be16(msg, 0)?;
    let flags = be16(msg, 2)?;
    let qd = be16(msg, 4)? as usize;
    let an = be16(msg, 6)? as usize;
    let ns = be16(msg, 8)? as usize;
    let ar = be16(msg, 10)? as usize;
    let mut off = 12;
    let mut questions = Vec::with_capacity(qd.min(16));
    for _ in 0..qd {
        let (name, next) = read_name(msg, off)?;
        let qtype = be16(msg, next)?;
        be16(msg, next + 2)?;
        questions.push((normalize_name(&name), qtype));
        off = next + 4;
    }
    let mut records = Vec::new();
    for _ in 0..an + ns + ar {
        let (name, next) = read_name(msg, off)?;
        let rtype = be16(msg, next)?;
        let rdlen = be16(msg, next + 8)? as usize;
        let rstart = next + 10;
        let rdata = msg.get(rstart..rstart + rdlen).ok_or(DnsError::Truncated)?;
        let data = match rtype {
            TYPE_A if rdlen == 4 => RData::A(Ipv4Addr::new(rdata[0], rdata[1], rdata[2], rdata[3])),
            TYPE_AAAA if rdlen == 16 => RData::Aaaa(Ipv6Addr::from(<[u8; 16]>::try_from(rdata).unwrap())),
            TYPE_CNAME => RData::Cname(normalize_name(&read_name(msg, rstart)?.0)),
            TYPE_PTR => RData::Ptr(normalize_name(&read_name(msg, rstart)?.0)),
            TYPE_SRV if rdlen >= 7 => RData::Srv {
                port: be16(rdata, 4)?,
                target: normalize_name(&read_name(msg, rstart + 6)?.0),
            },
            TYPE_TXT => {
                let mut strings = Vec::new();
                let mut i = 0;
                while i < rdata.len() {
                    let l = rdata[i] as usize;
                    let s = rdata.get(i + 1..i + 1 + l).ok_or(DnsError::Truncated)?;
                    if !s.is_empty() {
                        strings.push(String::from_utf8_lossy(s).into_owned());
                    }
                    i += 1 + l;
                }
                RData::Txt(strings)
            }
            other => RData::Other(other),
        };
        records.push(Record { name: normalize_name(&name), data });
        off = rstart + rdlen;
    }
    Ok(DnsMessage { id, is_response: flags & 0x8000 != 0, questions, records, answer_count: an })
}
