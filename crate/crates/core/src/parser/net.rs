//! Ethernet / IPv4 / IPv6 / TCP / UDP header views.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use crate::types::MacAddr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("truncated {0} header")]
    Truncated(&'static str),
    #[error("bad {0} header")]
    Invalid(&'static str),
}

#[derive(Debug)]
pub struct Frame<'a> {
    pub dst_mac: MacAddr,
    pub src_mac: MacAddr,
    pub ethertype: u16,
    pub ip: Option<IpPacket<'a>>,
}

#[derive(Debug)]
pub struct IpPacket<'a> {
    pub src: IpAddr,
    pub dst: IpAddr,
    pub transport: L4<'a>,
}

#[derive(Debug)]
pub enum L4<'a> {
    Tcp(TcpSegmentView<'a>),
    Udp(UdpView<'a>),
    Other,
}

#[derive(Debug)]
pub struct TcpSegmentView<'a> {
    pub src_port: u16,
    pub dst_port: u16,
    pub seq: u32,
    pub flags: u8,
    pub payload: &'a [u8],
}

impl TcpSegmentView<'_> {
    pub const FIN: u8 = 0x01;
    pub const SYN: u8 = 0x02;
    pub const RST: u8 = 0x04;
    pub const ACK: u8 = 0x10;

    pub fn has(&self, flag: u8) -> bool {
        self.flags & flag != 0
    }
}

#[derive(Debug)]
pub struct UdpView<'a> {
    pub src_port: u16,
    pub dst_port: u16,
    pub payload: &'a [u8],
}

fn mac_at(b: &[u8], o: usize) -> MacAddr {
    MacAddr([b[o], b[o + 1], b[o + 2], b[o + 3], b[o + 4], b[o + 5]])
}

fn be16(b: &[u8], o: usize) -> u16 {
    u16::from_be_bytes([b[o], b[o + 1]])
}

pub fn decode_frame(data: &[u8]) -> Result<Frame<'_>, DecodeError> {
    if data.len() < 14 {
        return Err(DecodeError::Truncated("ethernet"));
    }
    let dst_mac = mac_at(data, 0);
    let src_mac = mac_at(data, 6);
    let mut ethertype = be16(data, 12);
    let mut off = 14;
    // 802.1Q / 802.1ad tags
    while ethertype == 0x8100 || ethertype == 0x88a8 {
        if data.len() < off + 4 {
            return Err(DecodeError::Truncated("vlan"));
        }
        ethertype = be16(data, off + 2);
        off += 4;
    }
    let ip = match ethertype {
        0x0800 => Some(decode_ipv4(&data[off..])?),
        0x86dd => Some(decode_ipv6(&data[off..])?),
        _ => None,
    };
    Ok(Frame { dst_mac, src_mac, ethertype, ip })
}

fn decode_ipv4(b: &[u8]) -> Result<IpPacket<'_>, DecodeError> {
    if b.len() < 20 {
        return Err(DecodeError::Truncated("ipv4"));
    }
    if b[0] >> 4 != 4 {
        return Err(DecodeError::Invalid("ipv4"));
    }
    let ihl = usize::from(b[0] & 0x0f) * 4;
    let total = usize::from(be16(b, 2));
    if ihl < 20 || total < ihl || b.len() < ihl {
        return Err(DecodeError::Invalid("ipv4"));
    }
    // Trailing ethernet padding is not part of the datagram; captures may be short.
    let end = total.min(b.len());
    let src = IpAddr::V4(Ipv4Addr::new(b[12], b[13], b[14], b[15]));
    let dst = IpAddr::V4(Ipv4Addr::new(b[16], b[17], b[18], b[19]));
    let frag_offset = be16(b, 6) & 0x1fff;
    let transport = if frag_offset != 0 {
        L4::Other
    } else {
        decode_l4(b[9], &b[ihl..end])?
    };
    Ok(IpPacket { src, dst, transport })
}

fn decode_ipv6(b: &[u8]) -> Result<IpPacket<'_>, DecodeError> {
    if b.len() < 40 {
        return Err(DecodeError::Truncated("ipv6"));
    }
    if b[0] >> 4 != 6 {
        return Err(DecodeError::Invalid("ipv6"));
    }
    let payload_len = usize::from(be16(b, 4));
    let mut next = b[6];
    let src = IpAddr::V6(Ipv6Addr::from(<[u8; 16]>::try_from(&b[8..24]).unwrap()));
    let dst = IpAddr::V6(Ipv6Addr::from(<[u8; 16]>::try_from(&b[24..40]).unwrap()));
    let end = (40 + payload_len).min(b.len());
    let mut off = 40;
    // hop-by-hop, routing, destination options
    while matches!(next, 0 | 43 | 60) {
        if end < off + 8 {
            return Err(DecodeError::Truncated("ipv6 extension"));
        }
        let len = (usize::from(b[off + 1]) + 1) * 8;
        next = b[off];
        off += len;
    }
    let transport = if off > end { L4::Other } else { decode_l4(next, &b[off..end])? };
    Ok(IpPacket { src, dst, transport })
}

fn decode_l4(proto: u8, b: &[u8]) -> Result<L4<'_>, DecodeError> {
    match proto {
        6 => {
            if b.len() < 20 {
                return Err(DecodeError::Truncated("tcp"));
            }
            let data_off = usize::from(b[12] >> 4) * 4;
            if data_off < 20 || data_off > b.len() {
                return Err(DecodeError::Invalid("tcp"));
            }
            Ok(L4::Tcp(TcpSegmentView {
                src_port: be16(b, 0),
                dst_port: be16(b, 2),
                seq: u32::from_be_bytes([b[4], b[5], b[6], b[7]]),
                flags: b[13],
                payload: &b[data_off..],
            }))
        }
        17 => {
            if b.len() < 8 {
                return Err(DecodeError::Truncated("udp"));
            }
            let len = usize::from(be16(b, 4));
            let end = if len >= 8 { len.min(b.len()) } else { b.len() };
            Ok(L4::Udp(UdpView { src_port: be16(b, 0), dst_port: be16(b, 2), payload: &b[8..end] }))
        }
        _ => Ok(L4::Other),
    }
}
