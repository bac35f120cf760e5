//! Device labels: standardizing what users typed, checking labels against
//! traffic evidence, and spotting general-purpose computers.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::parser::{HintKind, IdentityHint};
use crate::privacy::DeviceId;
use crate::types::{MacAddr, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    SmartHome,
    GeneralPurpose,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Appliance,
    Tv,
    Voice,
    Camera,
    Hub,
    Plug,
    Office,
    Storage,
    Game,
    Car,
    Computer,
    Other,
}

impl Category {
    pub const ALL: [Category; 12] = [
        Category::Appliance,
        Category::Tv,
        Category::Voice,
        Category::Camera,
        Category::Hub,
        Category::Plug,
        Category::Office,
        Category::Storage,
        Category::Game,
        Category::Car,
        Category::Computer,
        Category::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Appliance => "appliance",
            Category::Tv => "tv",
            Category::Voice => "voice",
            Category::Camera => "camera",
            Category::Hub => "hub",
            Category::Plug => "plug",
            Category::Office => "office",
            Category::Storage => "storage",
            Category::Game => "game",
            Category::Car => "car",
            Category::Computer => "computer",
            Category::Other => "other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Category::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| format!("unknown category {s:?}"))
    }
}

/// Lowercase, with every run of non-alphanumerics collapsed to one space.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if !out.is_empty() && !out.ends_with(' ') {
            out.push(' ');
        }
    }
    if out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Whole-word containment over normalized text.
fn has_phrase(padded: &str, phrase: &str) -> bool {
    !phrase.is_empty() && padded.contains(&format!(" {phrase} "))
}

fn pad(text: &str) -> String {
    format!(" {} ", normalize(text))
}

#[derive(Debug, thiserror::Error)]
pub enum RulesError {
    #[error("rules file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("rules file: {0}")]
    Invalid(String),
}

#[derive(Debug, Deserialize)]
struct RawCategoryRule {
    label: Category,
    patterns: Vec<String>,
    #[serde(default)]
    evidence: Vec<String>,
}

#[derive(Debug, Deserialize, Default)]
struct RawVendors {
    #[serde(default)]
    canonical: Vec<String>,
    #[serde(default)]
    aliases: BTreeMap<String, String>,
    #[serde(default)]
    evidence: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Deserialize, Default)]
struct RawGeneralPurpose {
    keywords: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct RawRules {
    version: u32,
    category: Vec<RawCategoryRule>,
    #[serde(default)]
    vendors: RawVendors,
    #[serde(default)]
    domain_vendors: BTreeMap<String, String>,
    #[serde(default)]
    general_purpose: RawGeneralPurpose,
}

#[derive(Debug, Clone)]
struct CategoryRule {
    label: Category,
    patterns: Vec<String>,
    evidence: Vec<String>,
}

/// Parsed rules file. Immutable after load.
#[derive(Debug, Clone)]
pub struct LabelRules {
    pub version: u32,
    categories: Vec<CategoryRule>,
    /// normalized key -> canonical vendor, covering aliases and the
    /// canonical names themselves.
    vendors: HashMap<String, String>,
    vendor_evidence: HashMap<String, Vec<String>>,
    domain_vendors: HashMap<String, String>,
    pub general_purpose_keywords: Vec<String>,
}

impl LabelRules {
    pub fn bundled() -> Self {
        LabelRules::parse(include_str!("../data/identity_rules.toml")).expect("bundled rules parse")
    }

    pub fn load(path: &Path) -> Result<Self, RulesError> {
        LabelRules::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, RulesError> {
        let raw: RawRules = toml::from_str(text)?;
        let mut vendors = HashMap::new();
        for v in &raw.vendors.canonical {
            vendors.insert(normalize(v), v.clone());
        }
        for (alias, target) in &raw.vendors.aliases {
            vendors.insert(normalize(alias), target.clone());
        }
        // An alias target must map to itself or standardization would not
        // be idempotent.
        for target in raw.vendors.aliases.values() {
            if let Some(t) = vendors.get(&normalize(target)) {
                if t != target {
                    return Err(RulesError::Invalid(format!("alias target {target:?} is itself aliased to {t:?}")));
                }
            }
        }
        let categories = raw
            .category
            .into_iter()
            .map(|r| CategoryRule {
                label: r.label,
                patterns: r.patterns.iter().map(|p| normalize(p)).collect(),
                evidence: r.evidence.iter().map(|p| normalize(p)).collect(),
            })
            .collect();
        let vendor_evidence = raw
            .vendors
            .evidence
            .into_iter()
            .map(|(v, words)| (v, words.iter().map(|w| normalize(w)).collect()))
            .collect();
        Ok(LabelRules {
            version: raw.version,
            categories,
            vendors,
            vendor_evidence,
            domain_vendors: raw.domain_vendors.into_iter().map(|(d, v)| (d.to_ascii_lowercase(), v)).collect(),
            general_purpose_keywords: raw.general_purpose.keywords.iter().map(|k| normalize(k)).collect(),
        })
    }

    /// Maps free text to a standard category, if any rule matches.
    fn match_category(&self, text: &str) -> Option<Category> {
        let n = normalize(text);
        if let Ok(c) = n.parse::<Category>() {
            return Some(c);
        }
        let padded = format!(" {n} ");
        self.categories.iter().find(|r| r.patterns.iter().any(|p| has_phrase(&padded, p))).map(|r| r.label)
    }

    /// Canonical vendor names, for autocompletion.
    pub fn vendors(&self) -> BTreeSet<&str> {
        self.vendors.values().map(String::as_str).collect()
    }

    pub fn standardize_category(&self, raw_category: &str, raw_name: &str) -> Category {
        self.match_category(raw_category).or_else(|| self.match_category(raw_name)).unwrap_or(Category::Other)
    }

    pub fn standardize_vendor(&self, raw_vendor: &str) -> String {
        let key = normalize(raw_vendor);
        match self.vendors.get(&key) {
            Some(v) => v.clone(),
            None => raw_vendor.split_whitespace().collect::<Vec<_>>().join(" "),
        }
    }

    fn category_words(&self, c: Category) -> impl Iterator<Item = &str> {
        self.categories
            .iter()
            .filter(move |r| r.label == c)
            .flat_map(|r| r.patterns.iter().chain(r.evidence.iter()))
            .map(String::as_str)
    }

    fn vendor_words(&self, vendor: &str) -> Vec<String> {
        let mut words = vec![normalize(vendor)];
        if let Some(extra) = self.vendor_evidence.get(vendor) {
            words.extend(extra.iter().cloned());
        }
        words.retain(|w| !w.is_empty());
        words
    }

    pub fn evidence_matches_category(&self, evidence: &str, c: Category) -> bool {
        let padded = pad(evidence);
        has_phrase(&padded, c.as_str()) || self.category_words(c).any(|w| has_phrase(&padded, w))
    }

    pub fn evidence_matches_vendor(&self, evidence: &str, vendor: &str) -> bool {
        if vendor.is_empty() {
            return false;
        }
        let padded = pad(evidence);
        self.vendor_words(vendor).iter().any(|w| has_phrase(&padded, w))
    }

    /// A registered domain validates a vendor when the hint table says so,
    /// or when its first label contains one of the vendor's words.
    pub fn domain_matches_vendor(&self, domain: &str, vendor: &str) -> bool {
        if vendor.is_empty() {
            return false;
        }
        let d = domain.trim_end_matches('.').to_ascii_lowercase();
        if let Some(v) = self.domain_vendors.get(&d) {
            return v == vendor;
        }
        let first = d.split('.').next().unwrap_or("");
        self.vendor_words(vendor).iter().any(|w| {
            let w: String = w.chars().filter(|c| *c != ' ').collect();
            w.len() >= 4 && first.contains(&w)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTriple {
    pub device_id: DeviceId,
    pub raw_name: String,
    pub raw_category: String,
    pub raw_vendor: String,
    pub std_category: Category,
    pub std_vendor: String,
}

impl LabelTriple {
    pub fn raw(device_id: DeviceId, name: &str, category: &str, vendor: &str) -> Self {
        LabelTriple {
            device_id,
            raw_name: name.to_string(),
            raw_category: category.to_string(),
            raw_vendor: vendor.to_string(),
            std_category: Category::Other,
            std_vendor: String::new(),
        }
    }
}

/// Fills the standardized fields from the raw ones. Never fails; anything
/// unrecognized becomes `other`.
pub fn standardize(raw: &LabelTriple, rules: &LabelRules) -> LabelTriple {
    LabelTriple {
        std_category: rules.standardize_category(&raw.raw_category, &raw.raw_name),
        std_vendor: rules.standardize_vendor(&raw.raw_vendor),
        ..raw.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationMethod {
    Fingerbank,
    Netdisco,
    DhcpHostname,
    HttpUa,
    Oui,
    Domains,
}

impl ValidationMethod {
    pub const ALL: [ValidationMethod; 6] = [
        ValidationMethod::Fingerbank,
        ValidationMethod::Netdisco,
        ValidationMethod::DhcpHostname,
        ValidationMethod::HttpUa,
        ValidationMethod::Oui,
        ValidationMethod::Domains,
    ];

    /// OUI and domains say who made the chipset or runs the server, not
    /// what the device is.
    pub fn targets(&self) -> &'static [Target] {
        match self {
            ValidationMethod::Oui | ValidationMethod::Domains => &[Target::Vendor],
            _ => &[Target::Category, Target::Vendor],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Category,
    Vendor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Validated,
    NotValidated,
    NoData,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub device_id: DeviceId,
    pub method: ValidationMethod,
    pub target: Target,
    pub outcome: Outcome,
}

/// Manufacturer names by OUI.
#[derive(Debug, Clone, Default)]
pub struct OuiDatabase {
    map: HashMap<[u8; 3], String>,
}

impl OuiDatabase {
    pub fn bundled() -> Self {
        OuiDatabase::parse(include_str!("../data/oui.txt"))
    }

    /// `AABBCC<whitespace>Organization` per line; `#` comments. Lines that
    /// do not parse are skipped.
    pub fn parse(text: &str) -> Self {
        let mut map = HashMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((prefix, org)) = line.split_once(char::is_whitespace) else { continue };
            let mut oui = [0u8; 3];
            if hex::decode_to_slice(prefix.replace([':', '-'], ""), &mut oui).is_ok() {
                map.insert(oui, org.trim().to_string());
            }
        }
        OuiDatabase { map }
    }

    pub fn lookup(&self, oui: [u8; 3]) -> Option<&str> {
        self.map.get(&oui).map(String::as_str)
    }
}

/// Device fingerprinting service: OUI, user agent and a few contacted
/// domains in, a likely device name out.
pub trait FingerbankOracle: Send + Sync {
    fn identify(&self, oui: [u8; 3], user_agent: Option<&str>, domains: &[String]) -> Option<String>;
}

/// Offline stand-in answering from a fixture table.
#[derive(Debug, Clone, Default)]
pub struct FixtureFingerbank {
    rows: Vec<([u8; 3], Option<String>, String)>,
}

impl FixtureFingerbank {
    pub fn bundled() -> Self {
        FixtureFingerbank::parse(include_str!("../data/fingerbank.csv")).expect("bundled fingerbank fixture parses")
    }

    /// CSV with header `oui,domain,name`; an empty domain matches any device
    /// with that OUI.
    pub fn parse(text: &str) -> Result<Self, csv::Error> {
        let mut rows = Vec::new();
        for rec in csv::Reader::from_reader(text.as_bytes()).records() {
            let rec = rec?;
            let mut oui = [0u8; 3];
            if hex::decode_to_slice(rec.get(0).unwrap_or_default().trim(), &mut oui).is_err() {
                continue;
            }
            let domain = rec.get(1).map(str::trim).filter(|d| !d.is_empty()).map(str::to_ascii_lowercase);
            rows.push((oui, domain, rec.get(2).unwrap_or_default().trim().to_string()));
        }
        Ok(FixtureFingerbank { rows })
    }
}

impl FingerbankOracle for FixtureFingerbank {
    fn identify(&self, oui: [u8; 3], _user_agent: Option<&str>, domains: &[String]) -> Option<String> {
        let candidates = self.rows.iter().filter(|r| r.0 == oui);
        let mut fallback = None;
        for (_, domain, name) in candidates {
            match domain {
                Some(d) if domains.iter().any(|x| x == d) => return Some(name.clone()),
                Some(_) => {}
                None => {
                    fallback.get_or_insert_with(|| name.clone());
                }
            }
        }
        fallback
    }
}

/// Everything known about one device for validation and classification.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Evidence {
    pub hints: Vec<IdentityHint>,
    pub oui_vendor: Option<String>,
    /// Up to five registered domains.
    pub domains: Vec<String>,
    pub fingerbank: Option<String>,
}

pub const DOMAIN_SAMPLE: usize = 5;

/// Picks at most five distinct domains, reproducibly for a given device.
pub fn sample_domains(device: &DeviceId, domains: &BTreeSet<String>) -> Vec<String> {
    let mut all: Vec<String> = domains.iter().cloned().collect();
    let seed = device.as_str().bytes().fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3));
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all.truncate(DOMAIN_SAMPLE);
    all.sort();
    all
}

impl Evidence {
    pub fn assemble(
        mac: &MacAddr,
        hints: Vec<IdentityHint>,
        domains: Vec<String>,
        ouis: &OuiDatabase,
        oracle: Option<&dyn FingerbankOracle>,
    ) -> Evidence {
        let mut domains = domains;
        domains.truncate(DOMAIN_SAMPLE);
        let ua = hints.iter().find(|h| h.kind == HintKind::HttpUserAgent).map(|h| h.value.clone());
        let fingerbank = oracle.and_then(|o| o.identify(mac.oui(), ua.as_deref(), &domains));
        Evidence { hints, oui_vendor: ouis.lookup(mac.oui()).map(str::to_string), domains, fingerbank }
    }

    fn texts(&self, method: ValidationMethod) -> Vec<&str> {
        let of_kind = |kinds: &[HintKind]| -> Vec<&str> {
            self.hints.iter().filter(|h| kinds.contains(&h.kind)).map(|h| h.value.as_str()).collect()
        };
        match method {
            ValidationMethod::Fingerbank => self.fingerbank.as_deref().into_iter().collect(),
            ValidationMethod::Netdisco => of_kind(&[HintKind::Ssdp, HintKind::Mdns, HintKind::Upnp]),
            ValidationMethod::DhcpHostname => of_kind(&[HintKind::DhcpHostname]),
            ValidationMethod::HttpUa => of_kind(&[HintKind::HttpUserAgent]),
            ValidationMethod::Oui => self.oui_vendor.as_deref().into_iter().collect(),
            ValidationMethod::Domains => self.domains.iter().map(String::as_str).collect(),
        }
    }

    pub fn user_agents(&self) -> impl Iterator<Item = &str> {
        self.hints.iter().filter(|h| h.kind == HintKind::HttpUserAgent).map(|h| h.value.as_str())
    }
}

/// One outcome per (method, applicable target).
pub fn validate(evidence: &Evidence, triple: &LabelTriple, rules: &LabelRules) -> Vec<ValidationOutcome> {
    let mut out = Vec::new();
    for method in ValidationMethod::ALL {
        let texts = evidence.texts(method);
        for &target in method.targets() {
            let outcome = if texts.is_empty() {
                Outcome::NoData
            } else if texts.iter().any(|t| match (method, target) {
                (ValidationMethod::Domains, _) => rules.domain_matches_vendor(t, &triple.std_vendor),
                (_, Target::Category) => rules.evidence_matches_category(t, triple.std_category),
                (_, Target::Vendor) => rules.evidence_matches_vendor(t, &triple.std_vendor),
            }) {
                Outcome::Validated
            } else {
                Outcome::NotValidated
            };
            out.push(ValidationOutcome { device_id: triple.device_id.clone(), method, target, outcome });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceSource {
    UserAgent,
    Fingerbank,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordMatch {
    pub source: EvidenceSource,
    pub keyword: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inference {
    pub classification: Classification,
    /// Non-empty whenever the classification is general-purpose.
    pub matches: Vec<KeywordMatch>,
}

/// General-purpose iff a user agent or the oracle's answer contains one of
/// the rule keywords. Smart-home when there is evidence but no keyword,
/// unknown when there is no evidence at all.
pub fn infer_general_purpose(evidence: &Evidence, rules: &LabelRules) -> Inference {
    let mut matches = Vec::new();
    let mut seen_any = false;
    let sources = evidence
        .user_agents()
        .map(|t| (EvidenceSource::UserAgent, t))
        .chain(evidence.fingerbank.as_deref().map(|t| (EvidenceSource::Fingerbank, t)));
    for (source, text) in sources {
        seen_any = true;
        let padded = pad(text);
        for k in &rules.general_purpose_keywords {
            if has_phrase(&padded, k) {
                matches.push(KeywordMatch { source, keyword: k.clone(), text: text.to_string() });
            }
        }
    }
    let classification = if !matches.is_empty() {
        Classification::GeneralPurpose
    } else if seen_any {
        Classification::SmartHome
    } else {
        Classification::Unknown
    };
    Inference { classification, matches }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OverrideError {
    #[error("no device with that hardware address has been seen on this network")]
    NotObserved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub timestamp: Timestamp,
    pub device: MacAddr,
    pub action: String,
}

/// Local classification state: what inference said and what the user
/// overrode. Lives on the user's machine only.
#[derive(Debug, Clone, Default)]
pub struct DeviceRegistry {
    observed: HashMap<MacAddr, Inference>,
    overridden: HashSet<MacAddr>,
    audit: Vec<AuditEvent>,
}

impl DeviceRegistry {
    pub fn observe(&mut self, mac: MacAddr) {
        self.observed.entry(mac).or_insert(Inference { classification: Classification::Unknown, matches: Vec::new() });
    }

    pub fn record_inference(&mut self, mac: MacAddr, inference: Inference) {
        self.observed.insert(mac, inference);
    }

    pub fn is_observed(&self, mac: &MacAddr) -> bool {
        self.observed.contains_key(mac)
    }

    /// What the upload gate should use for this device.
    pub fn classification(&self, mac: &MacAddr) -> Classification {
        if self.overridden.contains(mac) {
            return Classification::SmartHome;
        }
        self.observed.get(mac).map(|i| i.classification).unwrap_or(Classification::Unknown)
    }

    pub fn inference(&self, mac: &MacAddr) -> Option<&Inference> {
        self.observed.get(mac)
    }

    /// The user typed the device's full hardware address, showing they can
    /// reach the device. Only addresses already seen on the LAN count.
    /// Returns whether anything changed.
    pub fn override_general_purpose(&mut self, mac: &MacAddr) -> Result<bool, OverrideError> {
        if !self.observed.contains_key(mac) {
            return Err(OverrideError::NotObserved);
        }
        if !self.overridden.insert(*mac) {
            return Ok(false);
        }
        self.audit.push(AuditEvent { timestamp: Timestamp::now(), device: *mac, action: "override-general-purpose".into() });
        tracing::info!(device = %crate::privacy::oui_text(mac), "general-purpose classification overridden");
        Ok(true)
    }

    pub fn overridden(&self) -> &HashSet<MacAddr> {
        &self.overridden
    }

    pub fn classifications(&self) -> HashMap<MacAddr, Classification> {
        self.observed.keys().map(|m| (*m, self.classification(m))).collect()
    }

    pub fn audit_log(&self) -> &[AuditEvent] {
        &self.audit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id() -> DeviceId {
        DeviceId::from_wire("0".repeat(64))
    }

    fn hint(kind: HintKind, value: &str) -> IdentityHint {
        IdentityHint { device_mac: MacAddr::ZERO, kind, value: value.into(), timestamp: Timestamp(0) }
    }

    fn std(name: &str, cat: &str, vendor: &str) -> LabelTriple {
        standardize(&LabelTriple::raw(id(), name, cat, vendor), &LabelRules::bundled())
    }

    #[test]
    fn categories() {
        assert_eq!(std("Google Home", "smart speaker", "Google").std_category, Category::Voice);
        assert_eq!(std("", "television", "").std_category, Category::Tv);
        assert_eq!(std("", "Smart TV", "").std_category, Category::Tv);
        assert_eq!(std("", "flux capacitor", "").std_category, Category::Other);
        assert_eq!(std("Fire TV", "", "Amazon").std_category, Category::Tv);
        assert_eq!(std("", "TV", "").std_category, Category::Tv);
    }

    #[test]
    fn vendors() {
        assert_eq!(std("", "camera", "Nest").std_vendor, "Google");
        assert_eq!(std("", "", "google").std_vendor, "Google");
        assert_eq!(std("", "", "tp-link").std_vendor, "TP-Link");
        assert_eq!(std("", "", "  Acme   Widgets ").std_vendor, "Acme Widgets");
    }

    #[test]
    fn bad_alias_chain_rejected() {
        let text = "version = 1\n[[category]]\nlabel = \"tv\"\npatterns = []\n[vendors]\ncanonical = []\n[vendors.aliases]\na = \"B\"\nb = \"C\"\n";
        assert!(matches!(LabelRules::parse(text), Err(RulesError::Invalid(_))));
    }

    #[test]
    fn validation_examples() {
        let rules = LabelRules::bundled();
        let t = std("Chromecast", "tv", "Google");
        let ev = Evidence { hints: vec![hint(HintKind::DhcpHostname, "chromecast")], ..Default::default() };
        let out = validate(&ev, &t, &rules);
        let get = |m, tg| out.iter().find(|o| o.method == m && o.target == tg).unwrap().outcome;
        assert_eq!(get(ValidationMethod::DhcpHostname, Target::Vendor), Outcome::Validated);
        assert_eq!(get(ValidationMethod::Netdisco, Target::Category), Outcome::NoData);
        assert_eq!(out.len(), 10);

        let t = std("Wemo", "plug", "Belkin");
        let ev = Evidence { domains: vec!["xbcs.net".into()], ..Default::default() };
        let out = validate(&ev, &t, &rules);
        assert!(out.iter().any(|o| o.method == ValidationMethod::Domains && o.outcome == Outcome::Validated));
    }

    #[test]
    fn general_purpose_examples() {
        let rules = LabelRules::bundled();
        let ua = Evidence {
            hints: vec![hint(HintKind::HttpUserAgent, "Mozilla/5.0 (Windows NT 10.0; Win64; x64)")],
            ..Default::default()
        };
        let inf = infer_general_purpose(&ua, &rules);
        assert_eq!(inf.classification, Classification::GeneralPurpose);
        assert_eq!(inf.matches[0].keyword, "windows");
        let iot = Evidence { fingerbank: Some("Generic IoT".into()), ..Default::default() };
        assert_eq!(infer_general_purpose(&iot, &rules).classification, Classification::SmartHome);
        assert_eq!(infer_general_purpose(&Evidence::default(), &rules).classification, Classification::Unknown);
    }

    #[test]
    fn fixture_oracle() {
        let fb = FixtureFingerbank::bundled();
        assert_eq!(fb.identify([0x94, 0x10, 0x3e], None, &["xbcs.net".into()]).as_deref(), Some("Belkin Wemo Switch"));
        assert_eq!(fb.identify([0x94, 0x10, 0x3e], None, &[]), None);
        assert_eq!(fb.identify([0xf4, 0xf5, 0xd8], None, &[]).as_deref(), Some("Google Home"));
        assert_eq!(OuiDatabase::bundled().lookup([0x00, 0x17, 0x88]), Some("Philips Lighting BV"));
    }

    #[test]
    fn override_flow() {
        let mut r = DeviceRegistry::default();
        let cam: MacAddr = "18:b4:30:00:00:01".parse().unwrap();
        r.record_inference(cam, Inference { classification: Classification::GeneralPurpose, matches: vec![] });
        let stranger: MacAddr = "18:b4:30:00:00:02".parse().unwrap();
        assert_eq!(r.override_general_purpose(&stranger), Err(OverrideError::NotObserved));
        assert!(r.overridden().is_empty());
        assert_eq!(r.override_general_purpose(&cam), Ok(true));
        assert_eq!(r.override_general_purpose(&cam), Ok(false));
        assert_eq!(r.classification(&cam), Classification::SmartHome);
        assert_eq!(r.audit_log().len(), 1);
    }

    fn arb_hint() -> impl Strategy<Value = IdentityHint> {
        (prop::sample::select(HintKind::ALL.to_vec()), "[a-zA-Z _-]{0,20}")
            .prop_map(|(kind, value)| hint(kind, &value))
    }

    proptest! {
        #[test]
        fn standardize_idempotent(name in ".{0,20}", cat in ".{0,20}", vendor in ".{0,20}") {
            let rules = LabelRules::bundled();
            let once = standardize(&LabelTriple::raw(id(), &name, &cat, &vendor), &rules);
            prop_assert_eq!(standardize(&once, &rules), once.clone());
            prop_assert_eq!(rules.standardize_category(once.std_category.as_str(), ""), once.std_category);
            prop_assert_eq!(rules.standardize_vendor(&once.std_vendor), once.std_vendor.clone());
        }

        #[test]
        fn outcome_legality(
            hints in prop::collection::vec(arb_hint(), 0..6),
            oui in prop::option::of("[a-zA-Z ]{1,12}"),
            domains in prop::collection::vec("[a-z]{1,8}\\.(com|net)", 0..6),
            fb in prop::option::of("[a-zA-Z ]{1,12}"),
            cat in prop::sample::select(Category::ALL.to_vec()),
            vendor in "[A-Za-z]{0,8}",
        ) {
            let rules = LabelRules::bundled();
            let ev = Evidence { hints, oui_vendor: oui, domains, fingerbank: fb };
            let t = LabelTriple { std_category: cat, std_vendor: vendor, ..LabelTriple::raw(id(), "", "", "") };
            let out = validate(&ev, &t, &rules);
            prop_assert_eq!(out.len(), 10);
            for o in &out {
                if matches!(o.method, ValidationMethod::Oui | ValidationMethod::Domains) {
                    prop_assert_eq!(o.target, Target::Vendor);
                }
            }
            let inf = infer_general_purpose(&ev, &rules);
            if inf.classification == Classification::GeneralPurpose {
                prop_assert!(!inf.matches.is_empty());
            }
        }
    }
}
