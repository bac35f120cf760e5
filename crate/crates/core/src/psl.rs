//! Registered-domain reduction over the public suffix list.

use std::net::IpAddr;
use std::path::Path;

use publicsuffix::{List, Psl};

const BUNDLED: &str = include_str!("../data/public_suffix_list.dat");

#[derive(Debug, thiserror::Error)]
pub enum PslError {
    #[error("public suffix list: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct PublicSuffixList {
    list: List,
}

impl std::fmt::Debug for PublicSuffixList {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("PublicSuffixList")
    }
}

impl PublicSuffixList {
    pub fn bundled() -> Self {
        PublicSuffixList::parse(BUNDLED).expect("bundled list parses")
    }

    pub fn parse(text: &str) -> Result<Self, PslError> {
        let list: List = text.parse().map_err(|e: publicsuffix::Error| PslError::Parse(e.to_string()))?;
        Ok(PublicSuffixList { list })
    }

    pub fn load(path: &Path) -> Result<Self, PslError> {
        PublicSuffixList::parse(&std::fs::read_to_string(path)?)
    }

    /// `ads.doubleclick.net` -> `doubleclick.net`. `None` for public
    /// suffixes themselves, IP literals and malformed names.
    pub fn registered_domain(&self, host: &str) -> Option<String> {
        let host = host.trim_end_matches('.').to_ascii_lowercase();
        if host.is_empty() || host.starts_with('.') || host.contains("..") || host.parse::<IpAddr>().is_ok() {
            return None;
        }
        let d = self.list.domain(host.as_bytes())?;
        std::str::from_utf8(d.as_bytes()).ok().map(str::to_string)
    }
}
