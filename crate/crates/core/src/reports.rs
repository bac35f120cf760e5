//! Analyses over a store snapshot. Each report is a pure function of the
//! snapshot and renders to CSV or JSON. Devices without a label are left
//! out of every per-category and per-vendor report.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::IpAddr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::endpoints::{detect_control_platforms, ControlContact, ListDatabases, CONTROL_PORTS};
use crate::identity::{Category, LabelTriple};
use crate::privacy::DeviceId;
use crate::store::{Remote, StoreData};
use crate::tls::{classify_weak_ciphers, CipherRegistry, TlsVersion, WeakClass};
use crate::types::Transport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

pub fn render<T: Serialize>(rows: &[T], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(rows).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
            for r in rows {
                w.serialize(r).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
        }
    }
}

fn labels(data: &StoreData) -> BTreeMap<&DeviceId, &LabelTriple> {
    data.labels.iter().map(|(id, l)| (id, &l.triple)).collect()
}

fn pct(n: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * n as f64 / total as f64
    }
}

fn joined<'a>(items: impl IntoIterator<Item = &'a str>) -> String {
    items.into_iter().collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlsHygieneRow {
    pub vendor: String,
    /// Labeled devices of this vendor with at least one hello.
    pub devices: u64,
    #[serde(rename = "SSL3.0")]
    pub ssl3_0: u64,
    #[serde(rename = "TLS1.0")]
    pub tls1_0: u64,
    #[serde(rename = "TLS1.1")]
    pub tls1_1: u64,
    #[serde(rename = "TLS1.2")]
    pub tls1_2: u64,
    #[serde(rename = "TLS1.3")]
    pub tls1_3: u64,
    pub null: u64,
    pub rc4: u64,
    pub anonymous: u64,
    pub export: u64,
}

/// A device counts once under every version any of its hellos used, and
/// once under every weak class any of its hellos advertised.
pub fn tls_hygiene(data: &StoreData, registry: &CipherRegistry) -> Vec<TlsHygieneRow> {
    let labels = labels(data);
    let mut per_device: BTreeMap<&DeviceId, (BTreeSet<TlsVersion>, BTreeSet<WeakClass>)> = BTreeMap::new();
    for h in data.hellos.values() {
        if !labels.contains_key(&h.device_id) {
            continue;
        }
        let e = per_device.entry(&h.device_id).or_default();
        e.0.insert(h.effective_version);
        let flags = classify_weak_ciphers(&h.cipher_suites, registry);
        e.1.extend(WeakClass::ALL.into_iter().filter(|c| flags.get(*c)));
    }
    let mut rows: BTreeMap<&str, TlsHygieneRow> = BTreeMap::new();
    for (id, (versions, classes)) in per_device {
        let vendor = labels[id].std_vendor.as_str();
        let r = rows.entry(vendor).or_insert_with(|| TlsHygieneRow {
            vendor: vendor.to_string(),
            devices: 0,
            ssl3_0: 0,
            tls1_0: 0,
            tls1_1: 0,
            tls1_2: 0,
            tls1_3: 0,
            null: 0,
            rc4: 0,
            anonymous: 0,
            export: 0,
        });
        r.devices += 1;
        for v in versions {
            *match v {
                TlsVersion::Ssl30 => &mut r.ssl3_0,
                TlsVersion::Tls10 => &mut r.tls1_0,
                TlsVersion::Tls11 => &mut r.tls1_1,
                TlsVersion::Tls12 => &mut r.tls1_2,
                TlsVersion::Tls13 => &mut r.tls1_3,
            } += 1;
        }
        for c in classes {
            *match c {
                WeakClass::Null => &mut r.null,
                WeakClass::Rc4 => &mut r.rc4,
                WeakClass::Anonymous => &mut r.anonymous,
                WeakClass::Export => &mut r.export,
            } += 1;
        }
    }
    let mut out: Vec<TlsHygieneRow> = rows.into_values().collect();
    out.sort_by(|a, b| b.devices.cmp(&a.devices).then_with(|| a.vendor.cmp(&b.vendor)));
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpTlsRow {
    pub category: Category,
    /// Labeled devices with any flow or hello.
    pub devices: u64,
    pub devices_http: u64,
    pub devices_tls: u64,
    pub devices_both: u64,
    pub vendors: u64,
    pub vendors_http: u64,
    pub vendors_tls: u64,
    pub vendors_both: u64,
}

/// HTTP means any flow to TCP port 80 (no payload check). TLS means any
/// ClientHello, whatever the port.
pub fn http_vs_tls(data: &StoreData) -> Vec<HttpTlsRow> {
    let labels = labels(data);
    let mut active: BTreeSet<&DeviceId> = BTreeSet::new();
    let mut http: BTreeSet<&DeviceId> = BTreeSet::new();
    let mut tls: BTreeSet<&DeviceId> = BTreeSet::new();
    for r in data.flows.values() {
        active.insert(&r.key.device_id);
        if r.key.remote_port == 80 && r.key.transport == Transport::Tcp {
            http.insert(&r.key.device_id);
        }
    }
    for h in data.hellos.values() {
        active.insert(&h.device_id);
        tls.insert(&h.device_id);
    }
    #[derive(Default)]
    struct Acc<'a> {
        devices: [u64; 4],
        vendors: [BTreeSet<&'a str>; 4],
    }
    let mut acc: BTreeMap<Category, Acc> = BTreeMap::new();
    for id in active {
        let Some(l) = labels.get(id) else { continue };
        let a = acc.entry(l.std_category).or_default();
        let (h, t) = (http.contains(id), tls.contains(id));
        for (slot, hit) in [(0, true), (1, h), (2, t), (3, h && t)] {
            if hit {
                a.devices[slot] += 1;
                a.vendors[slot].insert(l.std_vendor.as_str());
            }
        }
    }
    acc.into_iter()
        .map(|(category, a)| HttpTlsRow {
            category,
            devices: a.devices[0],
            devices_http: a.devices[1],
            devices_tls: a.devices[2],
            devices_both: a.devices[3],
            vendors: a.vendors[0].len() as u64,
            vendors_http: a.vendors[1].len() as u64,
            vendors_tls: a.vendors[2].len() as u64,
            vendors_both: a.vendors[3].len() as u64,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerRow {
    pub domain: String,
    pub tv_devices: u64,
    pub tvs_total: u64,
    pub tv_pct: f64,
    pub computer_devices: u64,
    pub computers_total: u64,
    pub computer_pct: f64,
    /// 1 = contacted by the most computers; ties share a rank.
    pub computer_rank: Option<u64>,
    pub computer_decile: Option<u64>,
}

/// Registered domains each labeled device contacted.
fn contacted_domains<'a>(data: &'a StoreData, dbs: &ListDatabases) -> BTreeMap<&'a DeviceId, BTreeSet<String>> {
    let resolver = data.resolver(dbs);
    let mut out: BTreeMap<&DeviceId, BTreeSet<String>> = BTreeMap::new();
    for r in data.flows.values() {
        let e = out.entry(&r.key.device_id).or_default();
        if let Some(d) = resolver.registered_domain(r) {
            e.insert(d);
        }
    }
    out
}

/// Tracker domains contacted by at least one TV, with the share of TVs and
/// of computers contacting each. Computer ranks are taken over every domain
/// any computer contacted, tracker or not.
pub fn tracker_prevalence(data: &StoreData, dbs: &ListDatabases) -> Vec<TrackerRow> {
    let labels = labels(data);
    let domains = contacted_domains(data, dbs);
    let mut tv_total = 0;
    let mut pc_total = 0;
    let mut tv_hits: BTreeMap<&str, u64> = BTreeMap::new();
    let mut pc_hits: BTreeMap<&str, u64> = BTreeMap::new();
    for (id, ds) in &domains {
        let Some(l) = labels.get(id) else { continue };
        let hits = match l.std_category {
            Category::Tv => {
                tv_total += 1;
                &mut tv_hits
            }
            Category::Computer => {
                pc_total += 1;
                &mut pc_hits
            }
            _ => continue,
        };
        for d in ds {
            *hits.entry(d.as_str()).or_default() += 1;
        }
    }
    let ranks = competition_ranks(&pc_hits);
    let base = ranks.len() as u64;
    let mut rows: Vec<TrackerRow> = tv_hits
        .iter()
        .filter(|(d, _)| dbs.tracker_domains.contains(**d))
        .map(|(d, &n)| {
            let pc = pc_hits.get(d).copied().unwrap_or(0);
            let rank = ranks.get(d).copied();
            TrackerRow {
                domain: d.to_string(),
                tv_devices: n,
                tvs_total: tv_total,
                tv_pct: pct(n, tv_total),
                computer_devices: pc,
                computers_total: pc_total,
                computer_pct: pct(pc, pc_total),
                computer_rank: rank,
                computer_decile: rank.map(|r| (10 * r).div_ceil(base)),
            }
        })
        .collect();
    rows.sort_by(|a, b| b.tv_devices.cmp(&a.tv_devices).then_with(|| a.domain.cmp(&b.domain)));
    rows
}

/// Rank 1 for the highest count; equal counts share the better rank and the
/// next distinct count skips ahead (1, 1, 3).
pub fn competition_ranks<'a>(counts: &BTreeMap<&'a str, u64>) -> HashMap<&'a str, u64> {
    let mut sorted: Vec<(&str, u64)> = counts.iter().map(|(d, n)| (*d, *n)).collect();
    sorted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut out = HashMap::new();
    let mut rank = 0;
    let mut prev = None;
    for (i, (d, n)) in sorted.into_iter().enumerate() {
        if prev != Some(n) {
            rank = i as u64 + 1;
            prev = Some(n);
        }
        out.insert(d, rank);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlPlatformRow {
    pub platform: String,
    pub devices: u64,
    pub categories: String,
    pub vendors: String,
}

/// Platforms reached on MQTT/XMPP ports, with the kinds of labeled devices
/// using each.
pub fn control_platforms(data: &StoreData, dbs: &ListDatabases) -> Vec<ControlPlatformRow> {
    let labels = labels(data);
    let resolver = data.resolver(dbs);
    let mut contacts = Vec::new();
    let mut devices: BTreeMap<String, BTreeSet<&DeviceId>> = BTreeMap::new();
    for r in data.flows.values() {
        let Some(l) = labels.get(&r.key.device_id) else { continue };
        if !CONTROL_PORTS.contains(&r.key.remote_port) {
            continue;
        }
        let platform = resolver.registered_domain(r);
        let ip = match &r.key.remote {
            Remote::Ip(ip) => *ip,
            Remote::Host(_) => IpAddr::from([0, 0, 0, 0]),
        };
        let key = platform.clone().unwrap_or_else(|| r.key.remote.to_string());
        devices.entry(key).or_default().insert(&r.key.device_id);
        contacts.push(ControlContact {
            remote_port: r.key.remote_port,
            platform: platform.or_else(|| match &r.key.remote {
                Remote::Host(h) => Some(h.clone()),
                Remote::Ip(_) => None,
            }),
            remote_ip: ip,
            category: l.std_category,
            vendor: l.std_vendor.clone(),
        });
    }
    detect_control_platforms(&contacts, &CONTROL_PORTS)
        .into_iter()
        .map(|(platform, users)| {
            let cats: BTreeSet<&str> = users.iter().map(|(c, _)| c.as_str()).collect();
            let vendors: BTreeSet<&str> = users.iter().map(|(_, v)| v.as_str()).collect();
            ControlPlatformRow {
                devices: devices.get(&platform).map_or(0, |d| d.len() as u64),
                categories: joined(cats),
                vendors: joined(vendors),
                platform,
            }
        })
        .collect()
}

/// Where the DHCP-assigned resolver for each device comes from.
#[derive(Debug, Clone, Default)]
pub struct ExpectedResolvers {
    pub per_device: BTreeMap<DeviceId, IpAddr>,
    /// Used when neither the device nor its user's uploads say.
    pub default: Option<IpAddr>,
}

impl ExpectedResolvers {
    pub fn for_device(&self, data: &StoreData, id: &DeviceId) -> Option<IpAddr> {
        self.per_device
            .get(id)
            .copied()
            .or_else(|| data.devices.get(id).and_then(|d| data.users.get(&d.user_id)).and_then(|u| u.dhcp_resolver))
            .or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardcodedDnsRow {
    pub device_id: DeviceId,
    pub resolver: IpAddr,
    pub queries: u64,
    pub responses: u64,
    pub hostnames: u64,
    pub expected_resolver: Option<IpAddr>,
    /// Device-level: set on every row of a device that used any resolver
    /// other than the expected one.
    pub flagged: bool,
    pub reason: String,
}

pub fn hardcoded_dns(data: &StoreData, expected: &ExpectedResolvers) -> Vec<HardcodedDnsRow> {
    #[derive(Default)]
    struct Acc<'a> {
        queries: u64,
        responses: u64,
        names: BTreeSet<&'a str>,
    }
    let mut per: BTreeMap<&DeviceId, BTreeMap<IpAddr, Acc>> = BTreeMap::new();
    for d in data.dns.values() {
        let a = per.entry(&d.device_id).or_default().entry(d.resolver).or_default();
        if d.is_response {
            a.responses += 1;
        } else {
            a.queries += 1;
        }
        a.names.insert(d.query_name.as_str());
    }
    let mut out = Vec::new();
    for (id, resolvers) in per {
        let want = expected.for_device(data, id);
        let flagged = want.is_some_and(|w| resolvers.keys().any(|r| *r != w));
        let reason = match want {
            None => "unknown-dhcp-resolver",
            Some(_) if flagged => "non-dhcp-resolver",
            Some(_) => "",
        };
        for (resolver, a) in resolvers {
            out.push(HardcodedDnsRow {
                device_id: id.clone(),
                resolver,
                queries: a.queries,
                responses: a.responses,
                hostnames: a.names.len() as u64,
                expected_resolver: want,
                flagged,
                reason: reason.to_string(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    TlsHygiene,
    HttpVsTls,
    Trackers,
    ControlPlatforms,
    HardcodedDns,
}

impl ReportKind {
    pub const ALL: [ReportKind; 5] = [
        ReportKind::TlsHygiene,
        ReportKind::HttpVsTls,
        ReportKind::Trackers,
        ReportKind::ControlPlatforms,
        ReportKind::HardcodedDns,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ReportKind::TlsHygiene => "tls-hygiene",
            ReportKind::HttpVsTls => "http-vs-tls",
            ReportKind::Trackers => "trackers",
            ReportKind::ControlPlatforms => "control-platforms",
            ReportKind::HardcodedDns => "hardcoded-dns",
        }
    }
}

impl FromStr for ReportKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ReportKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown report {s:?}"))
    }
}

/// Runs one report and renders it.
pub fn run_report(
    kind: ReportKind,
    data: &StoreData,
    dbs: &ListDatabases,
    registry: &CipherRegistry,
    expected: &ExpectedResolvers,
    format: ReportFormat,
) -> String {
    match kind {
        ReportKind::TlsHygiene => render(&tls_hygiene(data, registry), format),
        ReportKind::HttpVsTls => render(&http_vs_tls(data), format),
        ReportKind::Trackers => render(&tracker_prevalence(data, dbs), format),
        ReportKind::ControlPlatforms => render(&control_platforms(data, dbs), format),
        ReportKind::HardcodedDns => render(&hardcoded_dns(data, expected), format),
    }
}
