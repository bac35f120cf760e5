//! Remote endpoint enrichment: hostname, owner, tracker flag, country and
//! a guess at the service behind the port.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use ipnet::IpNet;
use serde::{Deserialize, Serialize};

use crate::identity::Category;
use crate::privacy::DeviceId;
use crate::psl::{PslError, PublicSuffixList};
use crate::types::{Timestamp, Transport};

/// Device-control ports: MQTT and XMPP, plain and TLS.
pub const CONTROL_PORTS: [u16; 4] = [1883, 8883, 5222, 5223];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolutionSource {
    DnsAnswer,
    Sni,
    PassiveDns,
    ReverseDns,
    None,
}

impl ResolutionSource {
    pub fn is_confident(&self) -> bool {
        matches!(self, ResolutionSource::DnsAnswer | ResolutionSource::Sni)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointInfo {
    pub remote_ip: IpAddr,
    pub hostname: Option<String>,
    pub resolution_source: ResolutionSource,
    pub registered_domain: Option<String>,
    pub company: Option<String>,
    pub is_tracker: bool,
    pub country: Option<String>,
    pub service_guess: Option<String>,
    pub confident: bool,
}

impl EndpointInfo {
    /// Hostname if known, else the IP; inferred hostnames carry a `?`.
    pub fn display_name(&self) -> String {
        match &self.hostname {
            Some(h) if self.confident => h.clone(),
            Some(h) => format!("{h}?"),
            None => self.remote_ip.to_string(),
        }
    }

    /// The hostname when it came from the device's own traffic, else the IP.
    pub fn release_name(&self) -> String {
        match &self.hostname {
            Some(h) if self.confident => h.clone(),
            _ => self.remote_ip.to_string(),
        }
    }
}

/// Historical IP to hostname oracle.
pub trait PassiveDns: Send + Sync {
    fn lookup(&self, ip: IpAddr) -> Option<String>;
}

pub trait ReverseDns: Send + Sync {
    fn lookup(&self, ip: IpAddr) -> Option<String>;
}

/// Fixed table, loaded from `ip,hostname` CSV.
#[derive(Debug, Clone, Default)]
pub struct StaticDnsTable {
    map: HashMap<IpAddr, String>,
}

impl StaticDnsTable {
    pub fn new(entries: impl IntoIterator<Item = (IpAddr, String)>) -> Self {
        StaticDnsTable { map: entries.into_iter().map(|(ip, h)| (ip, h.to_ascii_lowercase())).collect() }
    }

    pub fn parse_csv(text: &str) -> Result<Self, ListError> {
        let mut map = HashMap::new();
        for rec in csv::Reader::from_reader(text.as_bytes()).records() {
            let rec = rec?;
            let ip = rec.get(0).unwrap_or_default().trim();
            let ip: IpAddr = ip.parse().map_err(|_| ListError::Field(format!("bad ip {ip:?}")))?;
            map.insert(ip, rec.get(1).unwrap_or_default().trim().to_ascii_lowercase());
        }
        Ok(StaticDnsTable { map })
    }
}

impl PassiveDns for StaticDnsTable {
    fn lookup(&self, ip: IpAddr) -> Option<String> {
        self.map.get(&ip).cloned()
    }
}

impl ReverseDns for StaticDnsTable {
    fn lookup(&self, ip: IpAddr) -> Option<String> {
        self.map.get(&ip).cloned()
    }
}

/// Offline mode: never answers.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoLookup;

impl PassiveDns for NoLookup {
    fn lookup(&self, _: IpAddr) -> Option<String> {
        None
    }
}

impl ReverseDns for NoLookup {
    fn lookup(&self, _: IpAddr) -> Option<String> {
        None
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ListError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Psl(#[from] PslError),
    #[error("{0}")]
    Field(String),
}

/// Override locations for the list files; unset entries use the bundled copy.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ListPaths {
    pub trackers: Option<PathBuf>,
    pub domain_owners: Option<PathBuf>,
    pub port_services: Option<PathBuf>,
    pub countries: Option<PathBuf>,
    pub passive_dns: Option<PathBuf>,
    pub public_suffix_list: Option<PathBuf>,
}

impl ListPaths {
    /// The standard file names inside `dir`, for those that exist.
    pub fn in_dir(dir: &Path) -> ListPaths {
        let pick = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        ListPaths {
            trackers: pick("trackers.txt"),
            domain_owners: pick("domain_owners.csv"),
            port_services: pick("port_services.csv"),
            countries: pick("countries.csv"),
            passive_dns: pick("passive_dns.csv"),
            public_suffix_list: pick("public_suffix_list.dat"),
        }
    }

    /// Fills unset entries from `other`.
    pub fn or(self, other: ListPaths) -> ListPaths {
        ListPaths {
            trackers: self.trackers.or(other.trackers),
            domain_owners: self.domain_owners.or(other.domain_owners),
            port_services: self.port_services.or(other.port_services),
            countries: self.countries.or(other.countries),
            passive_dns: self.passive_dns.or(other.passive_dns),
            public_suffix_list: self.public_suffix_list.or(other.public_suffix_list),
        }
    }
}

pub struct ListDatabases {
    pub psl: PublicSuffixList,
    pub tracker_domains: HashSet<String>,
    pub domain_owners: HashMap<String, String>,
    pub port_services: HashMap<(u16, Transport), String>,
    /// Sorted longest prefix first.
    countries: Vec<(IpNet, String)>,
    pub passive_dns: Box<dyn PassiveDns>,
    pub reverse_dns: Box<dyn ReverseDns>,
}

impl std::fmt::Debug for ListDatabases {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ListDatabases")
            .field("tracker_domains", &self.tracker_domains.len())
            .field("domain_owners", &self.domain_owners.len())
            .field("port_services", &self.port_services.len())
            .field("countries", &self.countries.len())
            .finish()
    }
}

fn read_or(path: &Option<PathBuf>, bundled: &'static str) -> Result<String, ListError> {
    match path {
        Some(p) => Ok(std::fs::read_to_string(p)?),
        None => Ok(bundled.to_string()),
    }
}

impl ListDatabases {
    pub fn bundled() -> Self {
        ListDatabases::load(&ListPaths::default()).expect("bundled lists parse")
    }

    pub fn load(paths: &ListPaths) -> Result<Self, ListError> {
        let psl = match &paths.public_suffix_list {
            Some(p) => PublicSuffixList::load(p)?,
            None => PublicSuffixList::bundled(),
        };
        let trackers = read_or(&paths.trackers, include_str!("../data/trackers.txt"))?;
        let owners = read_or(&paths.domain_owners, include_str!("../data/domain_owners.csv"))?;
        let ports = read_or(&paths.port_services, include_str!("../data/port_services.csv"))?;
        let countries = read_or(&paths.countries, include_str!("../data/countries.csv"))?;
        let pdns = read_or(&paths.passive_dns, include_str!("../data/passive_dns.csv"))?;
        let mut db = ListDatabases {
            tracker_domains: HashSet::new(),
            domain_owners: HashMap::new(),
            port_services: HashMap::new(),
            countries: Vec::new(),
            passive_dns: Box::new(StaticDnsTable::parse_csv(&pdns)?),
            reverse_dns: Box::new(NoLookup),
            psl,
        };
        for line in trackers.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if !line.is_empty() {
                let rd = db.reduce(line);
                db.tracker_domains.insert(rd);
            }
        }
        for rec in csv::Reader::from_reader(owners.as_bytes()).records() {
            let rec = rec?;
            let rd = db.reduce(rec.get(0).unwrap_or_default().trim());
            db.domain_owners.insert(rd, rec.get(1).unwrap_or_default().trim().to_string());
        }
        for rec in csv::Reader::from_reader(ports.as_bytes()).records() {
            let rec = rec?;
            let port: u16 = rec.get(0).unwrap_or_default().trim().parse().map_err(|_| ListError::Field("bad port".into()))?;
            let transport: Transport = rec.get(1).unwrap_or_default().trim().parse().map_err(ListError::Field)?;
            db.port_services.insert((port, transport), rec.get(2).unwrap_or_default().trim().to_string());
        }
        for rec in csv::Reader::from_reader(countries.as_bytes()).records() {
            let rec = rec?;
            let net: IpNet = rec.get(0).unwrap_or_default().trim().parse().map_err(|_| ListError::Field("bad cidr".into()))?;
            db.countries.push((net, rec.get(1).unwrap_or_default().trim().to_string()));
        }
        db.countries.sort_by(|a, b| b.0.prefix_len().cmp(&a.0.prefix_len()).then(a.0.cmp(&b.0)));
        Ok(db)
    }

    pub fn load_dir(dir: &Path) -> Result<Self, ListError> {
        ListDatabases::load(&ListPaths::in_dir(dir))
    }

    pub fn with_passive_dns(mut self, p: impl PassiveDns + 'static) -> Self {
        self.passive_dns = Box::new(p);
        self
    }

    pub fn with_reverse_dns(mut self, r: impl ReverseDns + 'static) -> Self {
        self.reverse_dns = Box::new(r);
        self
    }

    fn reduce(&self, name: &str) -> String {
        let name = name.trim_end_matches('.').to_ascii_lowercase();
        self.psl.registered_domain(&name).unwrap_or(name)
    }

    pub fn registered_domain(&self, host: &str) -> Option<String> {
        self.psl.registered_domain(host)
    }

    pub fn country(&self, ip: IpAddr) -> Option<String> {
        self.countries.iter().find(|(n, _)| n.contains(&ip)).map(|(_, c)| c.clone())
    }

    pub fn service(&self, port: u16, transport: Transport) -> Option<String> {
        self.port_services.get(&(port, transport)).cloned()
    }
}

/// True iff the registered domain of `hostname` is on the tracker list.
pub fn is_tracker(hostname: &str, dbs: &ListDatabases) -> bool {
    dbs.registered_domain(hostname).is_some_and(|rd| dbs.tracker_domains.contains(&rd))
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Sighting {
    ts: Timestamp,
    hostname: String,
}

impl Sighting {
    /// Newest wins; ties go to the lexicographically smaller name so the
    /// index does not depend on insertion order.
    fn better_than(&self, other: &Sighting) -> bool {
        (self.ts, std::cmp::Reverse(&self.hostname)) > (other.ts, std::cmp::Reverse(&other.hostname))
    }
}

/// IP to hostname history, per device and across all devices.
#[derive(Debug, Clone, Default)]
pub struct HostnameIndex {
    per_device: HashMap<DeviceId, HashMap<IpAddr, Sighting>>,
    global: HashMap<IpAddr, Sighting>,
}

impl HostnameIndex {
    pub fn insert(&mut self, device: &DeviceId, ip: IpAddr, hostname: &str, ts: Timestamp) {
        let hostname = hostname.trim_end_matches('.').to_ascii_lowercase();
        if hostname.is_empty() {
            return;
        }
        let s = Sighting { ts, hostname };
        let slot = self.per_device.entry(device.clone()).or_default();
        match slot.get(&ip) {
            Some(old) if !s.better_than(old) => {}
            _ => {
                slot.insert(ip, s.clone());
            }
        }
        match self.global.get(&ip) {
            Some(old) if !s.better_than(old) => {}
            _ => {
                self.global.insert(ip, s);
            }
        }
    }

    /// The device's own resolution first, then any device's.
    pub fn lookup(&self, device: Option<&DeviceId>, ip: IpAddr) -> Option<&str> {
        device
            .and_then(|d| self.per_device.get(d))
            .and_then(|m| m.get(&ip))
            .or_else(|| self.global.get(&ip))
            .map(|s| s.hostname.as_str())
    }

    pub fn forget_device(&mut self, device: &DeviceId) {
        if self.per_device.remove(device).is_some() {
            let mut global: HashMap<IpAddr, Sighting> = HashMap::new();
            for m in self.per_device.values() {
                for (ip, s) in m {
                    match global.get(ip) {
                        Some(old) if !s.better_than(old) => {}
                        _ => {
                            global.insert(*ip, s.clone());
                        }
                    }
                }
            }
            self.global = global;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }
}

/// Enriches one remote IP. Hostname precedence: DNS answer, SNI, passive
/// DNS, reverse DNS.
pub fn resolve_endpoint(
    ip: IpAddr,
    device: Option<&DeviceId>,
    port: Option<(u16, Transport)>,
    dns_history: &HostnameIndex,
    sni_history: &HostnameIndex,
    dbs: &ListDatabases,
) -> EndpointInfo {
    let (hostname, source) = if let Some(h) = dns_history.lookup(device, ip) {
        (Some(h.to_string()), ResolutionSource::DnsAnswer)
    } else if let Some(h) = sni_history.lookup(device, ip) {
        (Some(h.to_string()), ResolutionSource::Sni)
    } else if let Some(h) = dbs.passive_dns.lookup(ip) {
        (Some(h), ResolutionSource::PassiveDns)
    } else if let Some(h) = dbs.reverse_dns.lookup(ip) {
        (Some(h.trim_end_matches('.').to_ascii_lowercase()), ResolutionSource::ReverseDns)
    } else {
        (None, ResolutionSource::None)
    };
    let registered_domain = hostname.as_deref().and_then(|h| dbs.registered_domain(h));
    let company = registered_domain.as_ref().and_then(|d| dbs.domain_owners.get(d).cloned());
    let is_tracker = registered_domain.as_ref().is_some_and(|d| dbs.tracker_domains.contains(d));
    EndpointInfo {
        remote_ip: ip,
        hostname,
        resolution_source: source,
        registered_domain,
        company,
        is_tracker,
        country: dbs.country(ip),
        service_guess: port.and_then(|(p, t)| dbs.service(p, t)),
        confident: source.is_confident(),
    }
}

/// One flow joined with its device's label, as input to
/// [`detect_control_platforms`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlContact {
    pub remote_port: u16,
    /// Registered domain of the endpoint, or `None` if unresolved.
    pub platform: Option<String>,
    pub remote_ip: IpAddr,
    pub category: Category,
    pub vendor: String,
}

pub type ControlPlatforms = BTreeMap<String, BTreeSet<(Category, String)>>;

/// Groups contacts on device-control ports by platform domain. Unresolved
/// endpoints are keyed by their IP so they still show up.
pub fn detect_control_platforms(contacts: &[ControlContact], ports: &[u16]) -> ControlPlatforms {
    let mut out = ControlPlatforms::new();
    for c in contacts.iter().filter(|c| ports.contains(&c.remote_port)) {
        let key = c.platform.clone().unwrap_or_else(|| c.remote_ip.to_string());
        out.entry(key).or_default().insert((c.category, c.vendor.clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dev(n: u8) -> DeviceId {
        DeviceId::from_wire(format!("{:064x}", n))
    }

    #[test]
    fn dns_answer_wins() {
        let dbs = ListDatabases::bundled();
        let ip: IpAddr = "157.240.1.1".parse().unwrap();
        let mut dns = HostnameIndex::default();
        dns.insert(&dev(1), ip, "fbcdn.net", Timestamp(1));
        let e = resolve_endpoint(ip, Some(&dev(1)), None, &dns, &HostnameIndex::default(), &dbs);
        assert_eq!(e.hostname.as_deref(), Some("fbcdn.net"));
        assert_eq!(e.company.as_deref(), Some("Facebook"));
        assert_eq!(e.resolution_source, ResolutionSource::DnsAnswer);
        assert!(e.confident);
        assert_eq!(e.country.as_deref(), Some("US"));
    }

    #[test]
    fn passive_dns_fallback() {
        let dbs = ListDatabases::bundled();
        let ip: IpAddr = "203.0.113.10".parse().unwrap();
        let e = resolve_endpoint(ip, None, None, &HostnameIndex::default(), &HostnameIndex::default(), &dbs);
        assert_eq!(e.hostname.as_deref(), Some("cdn.example.net"));
        assert_eq!(e.resolution_source, ResolutionSource::PassiveDns);
        assert!(!e.confident);
        assert_eq!(e.display_name(), "cdn.example.net?");
        assert_eq!(e.release_name(), "203.0.113.10");
    }

    #[test]
    fn ntp_guess() {
        let dbs = ListDatabases::bundled();
        let ip: IpAddr = "192.0.2.1".parse().unwrap();
        let e = resolve_endpoint(ip, None, Some((123, Transport::Udp)), &HostnameIndex::default(), &HostnameIndex::default(), &dbs);
        assert_eq!(e.hostname, None);
        assert_eq!(e.resolution_source, ResolutionSource::None);
        assert_eq!(e.service_guess.as_deref(), Some("NTP time server"));
    }

    #[test]
    fn per_device_history_first() {
        let ip: IpAddr = "1.2.3.4".parse().unwrap();
        let mut idx = HostnameIndex::default();
        idx.insert(&dev(1), ip, "a.example.com", Timestamp(5));
        idx.insert(&dev(2), ip, "b.example.com", Timestamp(9));
        assert_eq!(idx.lookup(Some(&dev(1)), ip), Some("a.example.com"));
        assert_eq!(idx.lookup(Some(&dev(3)), ip), Some("b.example.com"));
        idx.forget_device(&dev(2));
        assert_eq!(idx.lookup(None, ip), Some("a.example.com"));
    }

    #[test]
    fn trackers() {
        let dbs = ListDatabases::bundled();
        assert!(is_tracker("ads.doubleclick.net", &dbs));
        assert!(!is_tracker("example.com", &dbs));
    }

    #[test]
    fn control_platform_grouping() {
        let c = |port, p: &str, cat, v: &str| ControlContact {
            remote_port: port,
            platform: Some(p.to_string()),
            remote_ip: "203.0.113.20".parse().unwrap(),
            category: cat,
            vendor: v.to_string(),
        };
        let flows = vec![
            c(1883, "tuya.example", Category::Plug, "Gosund"),
            c(1883, "tuya.example", Category::Plug, "Teckin"),
            c(443, "tuya.example", Category::Plug, "Other"),
        ];
        let m = detect_control_platforms(&flows, &CONTROL_PORTS);
        assert_eq!(m.len(), 1);
        assert_eq!(m["tuya.example"].len(), 2);
        assert!(detect_control_platforms(&[], &CONTROL_PORTS).is_empty());
    }
}
