//! Device self-descriptions: SSDP announcements, mDNS records and UPnP
//! device description documents.

use std::collections::BTreeSet;
use std::net::IpAddr;

use super::dns::{DnsMessage, RData};

/// Headers kept from SSDP messages, in output order.
const SSDP_HEADERS: [&str; 6] = ["SERVER", "NT", "ST", "USN", "LOCATION", "X-USER-AGENT"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SsdpAnnouncement {
    /// Kept header lines joined by `\n`, e.g. `SERVER: Linux/3.0 UPnP/1.0`.
    pub summary: String,
    pub location: Option<(IpAddr, u16)>,
}

/// Parses an SSDP `NOTIFY` or M-SEARCH response; returns `None` for
/// searches and non-SSDP payloads.
pub fn parse_ssdp(payload: &[u8]) -> Option<SsdpAnnouncement> {
    let text = std::str::from_utf8(payload).ok()?;
    let mut lines = text.split("\r\n").flat_map(|l| l.split('\n'));
    let start = lines.next()?.trim();
    let is_notify = start.starts_with("NOTIFY ");
    let is_response = start.starts_with("HTTP/1.1 200") || start.starts_with("HTTP/1.0 200");
    if !is_notify && !is_response {
        return None;
    }
    let mut headers: Vec<(String, String)> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            headers.push((k.trim().to_ascii_uppercase(), v.trim().to_string()));
        }
    }
    let mut kept = Vec::new();
    for name in SSDP_HEADERS {
        if let Some((_, v)) = headers.iter().find(|(k, _)| k == name) {
            if !v.is_empty() {
                kept.push(format!("{name}: {v}"));
            }
        }
    }
    if kept.is_empty() {
        return None;
    }
    let location = headers
        .iter()
        .find(|(k, _)| k == "LOCATION")
        .and_then(|(_, v)| parse_location(v));
    Some(SsdpAnnouncement { summary: kept.join("\n"), location })
}

/// `http://192.168.1.20:8008/ssdp/device-desc.xml` -> (192.168.1.20, 8008).
pub fn parse_location(url: &str) -> Option<(IpAddr, u16)> {
    let rest = url.strip_prefix("http://")?;
    let authority = rest.split('/').next()?;
    if let Some(v6) = authority.strip_prefix('[') {
        let (host, tail) = v6.split_once(']')?;
        let port = tail.strip_prefix(':').map_or(Some(80), |p| p.parse().ok())?;
        return Some((host.parse().ok()?, port));
    }
    let (host, port) = match authority.split_once(':') {
        Some((h, p)) => (h, p.parse().ok()?),
        None => (authority, 80),
    };
    Some((host.parse().ok()?, port))
}

/// Names a device advertises over mDNS: service instances, hosts and TXT
/// keys such as `fn=` or `md=`. `None` when the message carries nothing.
pub fn summarize_mdns(msg: &DnsMessage) -> Option<String> {
    if !msg.is_response {
        return None;
    }
    let mut items = BTreeSet::new();
    for r in &msg.records {
        match &r.data {
            RData::Ptr(target) if !r.name.ends_with(".arpa") => {
                items.insert(target.clone());
            }
            RData::Srv { target, .. } => {
                items.insert(r.name.clone());
                items.insert(target.clone());
            }
            RData::A(_) | RData::Aaaa(_) => {
                items.insert(r.name.clone());
            }
            RData::Txt(strings) => {
                for s in strings {
                    let key = s.split('=').next().unwrap_or_default().to_ascii_lowercase();
                    if matches!(key.as_str(), "fn" | "md" | "model" | "ty" | "manufacturer" | "am" | "name") {
                        items.insert(s.clone());
                    }
                }
            }
            _ => {}
        }
    }
    items.retain(|s| !s.is_empty());
    if items.is_empty() {
        None
    } else {
        Some(items.into_iter().collect::<Vec<_>>().join("; "))
    }
}

const UPNP_TAGS: [&str; 6] = ["friendlyName", "manufacturer", "modelName", "modelNumber", "modelDescription", "deviceType"];

/// Identity fields from a UPnP device description document. `None` if no
/// known tag is present.
pub fn summarize_upnp(body: &[u8]) -> Option<String> {
    let text = String::from_utf8_lossy(body);
    let mut out = Vec::new();
    for tag in UPNP_TAGS {
        let open = format!("<{tag}>");
        let close = format!("</{tag}>");
        if let Some(s) = text.find(&open) {
            let rest = &text[s + open.len()..];
            if let Some(e) = rest.find(&close) {
                let v = rest[..e].trim();
                if !v.is_empty() {
                    out.push(format!("{tag}={v}"));
                }
            }
        }
    }
    if out.is_empty() {
        None
    } else {
        Some(out.join("; "))
    }
}

/// True once a description document is complete enough to summarize.
pub fn upnp_document_complete(body: &[u8]) -> bool {
    super::http::find(body, b"</root>").is_some() || super::http::find(body, b"</device>").is_some()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ssdp_notify() {
        let msg = b"NOTIFY * HTTP/1.1\r\nHOST: 239.255.255.250:1900\r\nLOCATION: http://192.168.1.20:8008/ssdp/device-desc.xml\r\nNT: upnp:rootdevice\r\nNTS: ssdp:alive\r\nSERVER: Linux/3.8.13, UPnP/1.0, Portable SDK for UPnP devices/1.6.18\r\nUSN: uuid:abc::upnp:rootdevice\r\n\r\n";
        let a = parse_ssdp(msg).unwrap();
        assert!(a.summary.starts_with("SERVER: Linux/3.8.13"));
        assert!(a.summary.contains("USN: uuid:abc::upnp:rootdevice"));
        assert_eq!(a.location, Some(("192.168.1.20".parse().unwrap(), 8008)));
    }

    #[test]
    fn ssdp_search_ignored() {
        let msg = b"M-SEARCH * HTTP/1.1\r\nHOST: 239.255.255.250:1900\r\nMAN: \"ssdp:discover\"\r\nST: ssdp:all\r\n\r\n";
        assert!(parse_ssdp(msg).is_none());
    }

    #[test]
    fn upnp_tags() {
        let body = b"HTTP/1.1 200 OK\r\n\r\n<root><device><deviceType>urn:dial-multiscreen-org:device:dial:1</deviceType><friendlyName>Living Room TV</friendlyName><manufacturer>Google Inc.</manufacturer><modelName>Eureka Dongle</modelName></device></root>";
        assert!(upnp_document_complete(body));
        assert_eq!(
            summarize_upnp(body).unwrap(),
            "friendlyName=Living Room TV; manufacturer=Google Inc.; modelName=Eureka Dongle; deviceType=urn:dial-multiscreen-org:device:dial:1"
        );
    }

    #[test]
    fn location_forms() {
        assert_eq!(parse_location("http://10.0.0.5/desc.xml"), Some(("10.0.0.5".parse().unwrap(), 80)));
        assert_eq!(parse_location("https://10.0.0.5/desc.xml"), None);
        assert_eq!(parse_location("http://[fe80::1]:49152/d"), Some(("fe80::1".parse().unwrap(), 49152)));
    }
}
