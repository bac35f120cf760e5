//! ClientHello parsing, version classes, weak-cipher classes and JA3
//! fingerprints.

use std::collections::BTreeMap;
use std::fmt;
use std::net::IpAddr;
use std::path::Path;
use std::str::FromStr;

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};

use crate::privacy::DeviceId;
use crate::types::Timestamp;

pub const CONTENT_HANDSHAKE: u8 = 22;
pub const HANDSHAKE_CLIENT_HELLO: u8 = 1;
pub const EXT_SERVER_NAME: u16 = 0;
pub const EXT_SUPPORTED_GROUPS: u16 = 10;
pub const EXT_EC_POINT_FORMATS: u16 = 11;
pub const EXT_SUPPORTED_VERSIONS: u16 = 43;
const MAX_FRAGMENT: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TlsVersion {
    Ssl30,
    Tls10,
    Tls11,
    Tls12,
    Tls13,
}

impl TlsVersion {
    pub const ALL: [TlsVersion; 5] = [TlsVersion::Ssl30, TlsVersion::Tls10, TlsVersion::Tls11, TlsVersion::Tls12, TlsVersion::Tls13];

    pub fn from_wire(v: u16) -> Option<TlsVersion> {
        Some(match v {
            0x0300 => TlsVersion::Ssl30,
            0x0301 => TlsVersion::Tls10,
            0x0302 => TlsVersion::Tls11,
            0x0303 => TlsVersion::Tls12,
            0x0304 => TlsVersion::Tls13,
            _ => return None,
        })
    }

    pub fn wire(&self) -> u16 {
        match self {
            TlsVersion::Ssl30 => 0x0300,
            TlsVersion::Tls10 => 0x0301,
            TlsVersion::Tls11 => 0x0302,
            TlsVersion::Tls12 => 0x0303,
            TlsVersion::Tls13 => 0x0304,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            TlsVersion::Ssl30 => "SSL3.0",
            TlsVersion::Tls10 => "TLS1.0",
            TlsVersion::Tls11 => "TLS1.1",
            TlsVersion::Tls12 => "TLS1.2",
            TlsVersion::Tls13 => "TLS1.3",
        }
    }
}

impl fmt::Display for TlsVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TlsVersion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        TlsVersion::ALL.into_iter().find(|v| v.label() == s).ok_or_else(|| format!("unknown TLS version {s:?}"))
    }
}

impl Serialize for TlsVersion {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for TlsVersion {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TlsError {
    #[error("record truncated before its headers")]
    Truncated,
    #[error("not a handshake record (content type {0})")]
    NotHandshake(u8),
    #[error("handshake type {0} is not client_hello")]
    HandshakeTypeMismatch(u8),
    #[error("length field inconsistent with available bytes ({0})")]
    LengthInconsistency(&'static str),
    #[error("unsupported client version {0:#06x}")]
    UnsupportedVersion(u16),
    #[error("empty cipher suite list")]
    NoCipherSuites,
}

impl TlsError {
    /// Stable short code, used in counters and ingest rejections.
    pub fn code(&self) -> &'static str {
        match self {
            TlsError::Truncated => "truncated",
            TlsError::NotHandshake(_) => "not-handshake",
            TlsError::HandshakeTypeMismatch(_) => "handshake-type-mismatch",
            TlsError::LengthInconsistency(_) => "length-inconsistency",
            TlsError::UnsupportedVersion(_) => "unsupported-version",
            TlsError::NoCipherSuites => "no-cipher-suites",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extension {
    pub ext_type: u16,
    pub data: Vec<u8>,
}

/// Wire-level ClientHello.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientHello {
    pub record_version: u16,
    pub legacy_version: u16,
    pub random: [u8; 32],
    pub session_id: Vec<u8>,
    pub cipher_suites: Vec<u16>,
    pub compression_methods: Vec<u8>,
    /// `None` when the hello ends after compression methods (SSL 3.0 style).
    pub extensions: Option<Vec<Extension>>,
}

/// GREASE values: 0x0a0a, 0x1a1a, ..., 0xfafa.
pub fn is_grease(v: u16) -> bool {
    v & 0x0f0f == 0x0a0a && (v >> 8) == (v & 0xff)
}

struct Reader<'a> {
    b: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], TlsError> {
        let s = self.b.get(self.off..self.off + n).ok_or(TlsError::LengthInconsistency(what))?;
        self.off += n;
        Ok(s)
    }
    fn u8(&mut self, what: &'static str) -> Result<u8, TlsError> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &'static str) -> Result<u16, TlsError> {
        let s = self.take(2, what)?;
        Ok(u16::from_be_bytes([s[0], s[1]]))
    }
    fn rest(&self) -> usize {
        self.b.len() - self.off
    }
}

fn u16_list(b: &[u8], what: &'static str) -> Result<Vec<u16>, TlsError> {
    if !b.len().is_multiple_of(2) {
        return Err(TlsError::LengthInconsistency(what));
    }
    Ok(b.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect())
}

/// Parses one ClientHello from handshake records. The hello may span
/// several records; trailing bytes after it are ignored.
pub fn parse_client_hello(bytes: &[u8]) -> Result<ClientHello, TlsError> {
    if bytes.len() < 5 {
        return Err(TlsError::Truncated);
    }
    if bytes[0] != CONTENT_HANDSHAKE {
        return Err(TlsError::NotHandshake(bytes[0]));
    }
    let record_version = u16::from_be_bytes([bytes[1], bytes[2]]);
    // Gather the handshake message from consecutive handshake records.
    let mut hs: Vec<u8> = Vec::new();
    let mut off = 0;
    let mut needed: Option<usize> = None;
    loop {
        if needed.is_some_and(|n| hs.len() >= n) {
            break;
        }
        if off == bytes.len() {
            return Err(if hs.len() < 4 { TlsError::Truncated } else { TlsError::LengthInconsistency("handshake") });
        }
        if bytes.len() < off + 5 {
            return Err(TlsError::Truncated);
        }
        if bytes[off] != CONTENT_HANDSHAKE {
            return Err(TlsError::NotHandshake(bytes[off]));
        }
        let len = usize::from(u16::from_be_bytes([bytes[off + 3], bytes[off + 4]]));
        let frag = bytes.get(off + 5..off + 5 + len).ok_or(TlsError::LengthInconsistency("record"))?;
        hs.extend_from_slice(frag);
        off += 5 + len;
        if needed.is_none() && hs.len() >= 4 {
            if hs[0] != HANDSHAKE_CLIENT_HELLO {
                return Err(TlsError::HandshakeTypeMismatch(hs[0]));
            }
            needed = Some(4 + ((usize::from(hs[1]) << 16) | (usize::from(hs[2]) << 8) | usize::from(hs[3])));
        }
        if len == 0 && needed.is_none() {
            return Err(TlsError::Truncated);
        }
    }
    let end = needed.unwrap_or(4);
    parse_body(record_version, &hs[4..end])
}

fn parse_body(record_version: u16, body: &[u8]) -> Result<ClientHello, TlsError> {
    let mut r = Reader { b: body, off: 0 };
    let legacy_version = r.u16("client_version")?;
    let random: [u8; 32] = r.take(32, "random")?.try_into().unwrap();
    let sid_len = usize::from(r.u8("session_id")?);
    let session_id = r.take(sid_len, "session_id")?.to_vec();
    let cs_len = usize::from(r.u16("cipher_suites")?);
    let cipher_suites = u16_list(r.take(cs_len, "cipher_suites")?, "cipher_suites")?;
    let cm_len = usize::from(r.u8("compression_methods")?);
    let compression_methods = r.take(cm_len, "compression_methods")?.to_vec();
    let extensions = if r.rest() == 0 {
        None
    } else {
        let ext_len = usize::from(r.u16("extensions")?);
        if ext_len != r.rest() {
            return Err(TlsError::LengthInconsistency("extensions"));
        }
        let mut exts = Vec::new();
        while r.rest() > 0 {
            let ext_type = r.u16("extension")?;
            let len = usize::from(r.u16("extension")?);
            exts.push(Extension { ext_type, data: r.take(len, "extension")?.to_vec() });
        }
        Some(exts)
    };
    if TlsVersion::from_wire(legacy_version).is_none_or(|v| v == TlsVersion::Tls13) {
        return Err(TlsError::UnsupportedVersion(legacy_version));
    }
    if cipher_suites.is_empty() {
        return Err(TlsError::NoCipherSuites);
    }
    Ok(ClientHello { record_version, legacy_version, random, session_id, cipher_suites, compression_methods, extensions })
}

/// Encodes `hello` as handshake records, fragmenting at 2^14 bytes.
pub fn serialize_client_hello(hello: &ClientHello) -> Vec<u8> {
    let mut body = Vec::new();
    body.extend(hello.legacy_version.to_be_bytes());
    body.extend(hello.random);
    body.push(hello.session_id.len() as u8);
    body.extend(&hello.session_id);
    body.extend(((hello.cipher_suites.len() * 2) as u16).to_be_bytes());
    for c in &hello.cipher_suites {
        body.extend(c.to_be_bytes());
    }
    body.push(hello.compression_methods.len() as u8);
    body.extend(&hello.compression_methods);
    if let Some(exts) = &hello.extensions {
        let total: usize = exts.iter().map(|e| 4 + e.data.len()).sum();
        body.extend((total as u16).to_be_bytes());
        for e in exts {
            body.extend(e.ext_type.to_be_bytes());
            body.extend((e.data.len() as u16).to_be_bytes());
            body.extend(&e.data);
        }
    }
    let mut hs = vec![HANDSHAKE_CLIENT_HELLO];
    hs.extend(&(body.len() as u32).to_be_bytes()[1..]);
    hs.extend(body);
    let mut out = Vec::with_capacity(hs.len() + 5);
    for chunk in hs.chunks(MAX_FRAGMENT) {
        out.push(CONTENT_HANDSHAKE);
        out.extend(hello.record_version.to_be_bytes());
        out.extend((chunk.len() as u16).to_be_bytes());
        out.extend(chunk);
    }
    out
}

impl ClientHello {
    pub fn extension(&self, t: u16) -> Option<&[u8]> {
        self.extensions.as_ref()?.iter().find(|e| e.ext_type == t).map(|e| e.data.as_slice())
    }

    pub fn extension_types(&self) -> Vec<u16> {
        self.extensions.iter().flatten().map(|e| e.ext_type).collect()
    }

    /// First `host_name` entry of the server_name extension.
    pub fn sni(&self) -> Option<String> {
        let d = self.extension(EXT_SERVER_NAME)?;
        let list_len = usize::from(u16::from_be_bytes([*d.first()?, *d.get(1)?]));
        let list = d.get(2..2 + list_len)?;
        let mut i = 0;
        while i + 3 <= list.len() {
            let kind = list[i];
            let n = usize::from(u16::from_be_bytes([list[i + 1], list[i + 2]]));
            let name = list.get(i + 3..i + 3 + n)?;
            if kind == 0 {
                return std::str::from_utf8(name).ok().filter(|s| !s.is_empty()).map(str::to_string);
            }
            i += 3 + n;
        }
        None
    }

    pub fn supported_groups(&self) -> Vec<u16> {
        self.extension(EXT_SUPPORTED_GROUPS)
            .filter(|d| d.len() >= 2)
            .and_then(|d| {
                let n = usize::from(u16::from_be_bytes([d[0], d[1]]));
                d.get(2..2 + n).and_then(|l| u16_list(l, "groups").ok())
            })
            .unwrap_or_default()
    }

    pub fn ec_point_formats(&self) -> Vec<u8> {
        self.extension(EXT_EC_POINT_FORMATS)
            .and_then(|d| d.get(1..1 + usize::from(*d.first()?)))
            .map(<[u8]>::to_vec)
            .unwrap_or_default()
    }

    pub fn supported_versions(&self) -> Vec<u16> {
        self.extension(EXT_SUPPORTED_VERSIONS)
            .and_then(|d| d.get(1..1 + usize::from(*d.first()?)))
            .and_then(|l| u16_list(l, "versions").ok())
            .unwrap_or_default()
    }

    pub fn legacy(&self) -> TlsVersion {
        TlsVersion::from_wire(self.legacy_version).expect("validated at parse")
    }

    /// TLS 1.3 when supported_versions offers 0x0304, otherwise the legacy version.
    pub fn effective_version(&self) -> TlsVersion {
        if self.supported_versions().contains(&0x0304) {
            TlsVersion::Tls13
        } else {
            self.legacy()
        }
    }

    /// The JA3 input string, GREASE removed.
    pub fn ja3_string(&self) -> String {
        fn join<T: fmt::Display>(v: impl Iterator<Item = T>) -> String {
            v.map(|x| x.to_string()).collect::<Vec<_>>().join("-")
        }
        format!(
            "{},{},{},{},{}",
            self.legacy_version,
            join(self.cipher_suites.iter().filter(|c| !is_grease(**c))),
            join(self.extension_types().into_iter().filter(|e| !is_grease(*e))),
            join(self.supported_groups().into_iter().filter(|g| !is_grease(*g))),
            join(self.ec_point_formats().into_iter()),
        )
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.ja3_string())
    }
}

/// Lowercase hex MD5 of a JA3 string.
pub fn fingerprint(ja3: &str) -> String {
    hex::encode(Md5::digest(ja3.as_bytes()))
}

/// Analyzed hello as stored and uploaded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientHelloRecord {
    pub device_id: DeviceId,
    pub timestamp: Timestamp,
    pub legacy_version: TlsVersion,
    pub effective_version: TlsVersion,
    pub cipher_suites: Vec<u16>,
    pub extensions: Vec<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sni: Option<String>,
    #[serde(default)]
    pub supported_groups: Vec<u16>,
    #[serde(default)]
    pub ec_point_formats: Vec<u8>,
    pub fingerprint: String,
    /// Server the hello was sent to; feeds SNI-based endpoint naming.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_ip: Option<IpAddr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_port: Option<u16>,
}

impl ClientHelloRecord {
    pub fn from_hello(hello: &ClientHello, device_id: DeviceId, timestamp: Timestamp) -> Self {
        ClientHelloRecord {
            device_id,
            timestamp,
            legacy_version: hello.legacy(),
            effective_version: hello.effective_version(),
            cipher_suites: hello.cipher_suites.clone(),
            extensions: hello.extension_types(),
            sni: hello.sni(),
            supported_groups: hello.supported_groups(),
            ec_point_formats: hello.ec_point_formats(),
            fingerprint: hello.fingerprint(),
            remote_ip: None,
            remote_port: None,
        }
    }
}

pub fn analyze(record_bytes: &[u8], device_id: DeviceId, timestamp: Timestamp) -> Result<ClientHelloRecord, TlsError> {
    Ok(ClientHelloRecord::from_hello(&parse_client_hello(record_bytes)?, device_id, timestamp))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeakClass {
    Null,
    Anonymous,
    Export,
    Rc4,
}

impl WeakClass {
    pub const ALL: [WeakClass; 4] = [WeakClass::Null, WeakClass::Anonymous, WeakClass::Export, WeakClass::Rc4];

    pub fn as_str(&self) -> &'static str {
        match self {
            WeakClass::Null => "null",
            WeakClass::Anonymous => "anonymous",
            WeakClass::Export => "export",
            WeakClass::Rc4 => "rc4",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeakCipherFlags {
    pub has_null: bool,
    pub has_anonymous: bool,
    pub has_export: bool,
    pub has_rc4: bool,
}

impl WeakCipherFlags {
    pub fn get(&self, c: WeakClass) -> bool {
        match c {
            WeakClass::Null => self.has_null,
            WeakClass::Anonymous => self.has_anonymous,
            WeakClass::Export => self.has_export,
            WeakClass::Rc4 => self.has_rc4,
        }
    }

    fn set(&mut self, c: WeakClass) {
        match c {
            WeakClass::Null => self.has_null = true,
            WeakClass::Anonymous => self.has_anonymous = true,
            WeakClass::Export => self.has_export = true,
            WeakClass::Rc4 => self.has_rc4 = true,
        }
    }

    pub fn any(&self) -> bool {
        WeakClass::ALL.iter().any(|c| self.get(*c))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherSuiteInfo {
    pub id: u16,
    pub name: String,
    pub classes: Vec<WeakClass>,
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Cipher suite id to name and weak classes.
#[derive(Debug, Clone, Default)]
pub struct CipherRegistry {
    suites: BTreeMap<u16, CipherSuiteInfo>,
}

const BUNDLED_REGISTRY: &str = include_str!("../data/cipher_registry.txt");

impl CipherRegistry {
    pub fn bundled() -> CipherRegistry {
        CipherRegistry::parse(BUNDLED_REGISTRY).expect("bundled registry is well-formed")
    }

    pub fn load(path: &Path) -> Result<CipherRegistry, RegistryError> {
        CipherRegistry::parse(&std::fs::read_to_string(path)?)
    }

    /// Lines of `0x0005 TLS_RSA_WITH_RC4_128_SHA rc4`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<CipherRegistry, RegistryError> {
        let mut suites = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| RegistryError::Syntax { line: i + 1, msg: msg.to_string() };
            let mut parts = line.split_whitespace();
            let (Some(id), Some(name), Some(classes), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected: id name classes"));
            };
            let id = u16::from_str_radix(id.trim_start_matches("0x"), 16).map_err(|_| err("bad id"))?;
            let classes = if classes == "-" {
                Vec::new()
            } else {
                classes
                    .split(',')
                    .map(|c| match c {
                        "null" => Ok(WeakClass::Null),
                        "anonymous" => Ok(WeakClass::Anonymous),
                        "export" => Ok(WeakClass::Export),
                        "rc4" => Ok(WeakClass::Rc4),
                        _ => Err(err("unknown class")),
                    })
                    .collect::<Result<Vec<_>, _>>()?
            };
            if suites.insert(id, CipherSuiteInfo { id, name: name.to_string(), classes }).is_some() {
                return Err(err("duplicate id"));
            }
        }
        Ok(CipherRegistry { suites })
    }

    pub fn get(&self, id: u16) -> Option<&CipherSuiteInfo> {
        self.suites.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &CipherSuiteInfo> {
        self.suites.values()
    }

    pub fn len(&self) -> usize {
        self.suites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.suites.is_empty()
    }
}

/// Unknown ids belong to no class.
pub fn classify_weak_ciphers(suites: &[u16], registry: &CipherRegistry) -> WeakCipherFlags {
    let mut f = WeakCipherFlags::default();
    for id in suites {
        if let Some(info) = registry.get(*id) {
            for c in &info.classes {
                f.set(*c);
            }
        }
    }
    f
}

/// `0005-c02f-1301`, the release-file form of a suite list.
pub fn suites_text(suites: &[u16]) -> String {
    suites.iter().map(|s| format!("{s:04x}")).collect::<Vec<_>>().join("-")
}

pub fn parse_suites_text(s: &str) -> Result<Vec<u16>, std::num::ParseIntError> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split('-').map(|p| u16::from_str_radix(p, 16)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hello(version: u16, suites: Vec<u16>, exts: Option<Vec<Extension>>) -> ClientHello {
        ClientHello {
            record_version: 0x0301,
            legacy_version: version,
            random: [7; 32],
            session_id: vec![1, 2, 3],
            cipher_suites: suites,
            compression_methods: vec![0],
            extensions: exts,
        }
    }

    fn sv(versions: &[u16]) -> Extension {
        let mut data = vec![(versions.len() * 2) as u8];
        for v in versions {
            data.extend(v.to_be_bytes());
        }
        Extension { ext_type: EXT_SUPPORTED_VERSIONS, data }
    }

    #[test]
    fn tls12_without_supported_versions() {
        let h = hello(0x0303, vec![0xc02f], Some(vec![]));
        let p = parse_client_hello(&serialize_client_hello(&h)).unwrap();
        assert_eq!(p.effective_version(), TlsVersion::Tls12);
        assert_eq!(p, h);
    }

    #[test]
    fn tls13_via_supported_versions() {
        let h = hello(0x0303, vec![0x1301], Some(vec![sv(&[0x0304, 0x0303])]));
        assert_eq!(h.effective_version(), TlsVersion::Tls13);
        assert_eq!(h.legacy(), TlsVersion::Tls12);
    }

    #[test]
    fn truncated_in_cipher_list() {
        let bytes = serialize_client_hello(&hello(0x0303, vec![1, 2, 3, 4, 5], None));
        // record header + handshake header + version + random + sid + cs_len + 3 bytes
        let cut = 5 + 4 + 2 + 32 + 4 + 2 + 3;
        let mut b = bytes[..cut].to_vec();
        // fix up the record length so only the inner length disagrees
        let rec_len = (cut - 5) as u16;
        b[3..5].copy_from_slice(&rec_len.to_be_bytes());
        assert!(matches!(parse_client_hello(&b), Err(TlsError::LengthInconsistency(_))));
        // as captured, without fixing the record header
        assert_eq!(parse_client_hello(&bytes[..cut]).unwrap_err().code(), "length-inconsistency");
    }

    #[test]
    fn error_codes_distinct() {
        assert_eq!(parse_client_hello(&[0x16, 3, 1]), Err(TlsError::Truncated));
        assert_eq!(parse_client_hello(&[0x17, 3, 3, 0, 1, 0]), Err(TlsError::NotHandshake(0x17)));
        assert_eq!(parse_client_hello(&[0x16, 3, 3, 0, 4, 2, 0, 0, 0]), Err(TlsError::HandshakeTypeMismatch(2)));
    }

    #[test]
    fn grease_pattern() {
        let all: Vec<u16> = (0..=0xffffu16).filter(|v| is_grease(*v)).collect();
        assert_eq!(all.len(), 16);
        assert!(all.iter().all(|v| format!("{v:04x}").ends_with('a')));
        assert!(!is_grease(0x0a1a));
    }

    #[test]
    fn grease_does_not_change_fingerprint() {
        let a = hello(0x0303, vec![0xc02f, 0x009c], Some(vec![sv(&[0x0303])]));
        let mut b = a.clone();
        b.cipher_suites.insert(0, 0x2a2a);
        b.extensions.as_mut().unwrap().insert(0, Extension { ext_type: 0xdada, data: vec![] });
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn registry_examples() {
        let r = CipherRegistry::bundled();
        let f = classify_weak_ciphers(&[0x0005], &r);
        assert_eq!(f, WeakCipherFlags { has_rc4: true, ..Default::default() });
        assert!(!classify_weak_ciphers(&[0x1301], &r).any());
        let f = classify_weak_ciphers(&[0x0001, 0x0017], &r);
        assert!(f.has_null && f.has_anonymous && f.has_export && f.has_rc4);
        assert!(!classify_weak_ciphers(&[0xfefe], &r).any());
    }

    #[test]
    fn suites_text_roundtrip() {
        assert_eq!(suites_text(&[0x0005, 0xc02f]), "0005-c02f");
        assert_eq!(parse_suites_text("0005-c02f").unwrap(), vec![0x0005, 0xc02f]);
    }

    fn arb_ext() -> impl Strategy<Value = Extension> {
        (any::<u16>(), proptest::collection::vec(any::<u8>(), 0..40)).prop_map(|(t, d)| Extension { ext_type: t, data: d })
    }

    proptest! {
        #[test]
        fn serialize_parse_identity(
            v in prop_oneof![Just(0x0300u16), Just(0x0301), Just(0x0302), Just(0x0303)],
            suites in proptest::collection::vec(any::<u16>(), 1..200),
            sid in proptest::collection::vec(any::<u8>(), 0..33),
            exts in proptest::option::of(proptest::collection::vec(arb_ext(), 0..30)),
            big in any::<bool>(),
        ) {
            let mut h = hello(v, suites, exts);
            h.session_id = sid;
            if big {
                // force a multi-record hello
                h.extensions.get_or_insert_with(Vec::new).push(Extension { ext_type: 21, data: vec![0; 20_000] });
            }
            let bytes = serialize_client_hello(&h);
            prop_assert_eq!(parse_client_hello(&bytes).unwrap(), h);
        }

        #[test]
        fn weak_flags_monotone(a in proptest::collection::vec(any::<u16>(), 0..50), b in proptest::collection::vec(any::<u16>(), 0..50)) {
            let r = CipherRegistry::bundled();
            let fa = classify_weak_ciphers(&a, &r);
            let mut ab = a.clone();
            ab.extend(b);
            let fab = classify_weak_ciphers(&ab, &r);
            for c in WeakClass::ALL {
                prop_assert!(!fa.get(c) || fab.get(c));
            }
        }

        #[test]
        fn parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..300)) {
            let _ = parse_client_hello(&bytes);
        }
    }
}
