//! Client-side state directory: salt, user id and the local monitor list.
//! None of it leaves the machine except the user id.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use homescope_core::privacy::Salt;
use homescope_core::wire::load_or_create_user_id;
use homescope_core::MacAddr;
use serde::{Deserialize, Serialize};

pub struct StateDir {
    root: PathBuf,
}

/// Devices the user ticked locally, plus general-purpose overrides.
#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorList {
    #[serde(default)]
    pub monitored: BTreeSet<MacAddr>,
    #[serde(default)]
    pub overrides: BTreeSet<MacAddr>,
}

impl StateDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        StateDir { root: root.into() }
    }

    /// `$HOME/.homescope`, or `.homescope` if there is no home.
    pub fn default_root() -> PathBuf {
        std::env::var_os("HOME").map(|h| Path::new(&h).join(".homescope")).unwrap_or_else(|| ".homescope".into())
    }

    pub fn salt(&self) -> Result<Salt> {
        let p = self.root.join("salt");
        Salt::load_or_create(&p).with_context(|| format!("salt file {}", p.display()))
    }

    pub fn user_id(&self) -> Result<homescope_core::wire::UserId> {
        let p = self.root.join("user_id");
        load_or_create_user_id(&p).with_context(|| format!("user id file {}", p.display()))
    }

    fn monitor_path(&self) -> PathBuf {
        self.root.join("monitor.json")
    }

    pub fn monitor_list(&self) -> Result<MonitorList> {
        let p = self.monitor_path();
        match fs::read(&p) {
            Ok(b) => serde_json::from_slice(&b).with_context(|| format!("parsing {}", p.display())),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(MonitorList::default()),
            Err(e) => Err(e).with_context(|| format!("reading {}", p.display())),
        }
    }

    pub fn save_monitor_list(&self, list: &MonitorList) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        let p = self.monitor_path();
        fs::write(&p, serde_json::to_vec_pretty(list)?).with_context(|| format!("writing {}", p.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monitor_list_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = StateDir::new(dir.path());
        assert_eq!(s.monitor_list().unwrap(), MonitorList::default());
        let mut l = MonitorList::default();
        l.monitored.insert("aa:bb:cc:00:11:22".parse().unwrap());
        s.save_monitor_list(&l).unwrap();
        assert_eq!(s.monitor_list().unwrap(), l);
    }

    #[test]
    fn salt_and_user_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let s = StateDir::new(dir.path());
        assert_eq!(s.salt().unwrap().bytes(), s.salt().unwrap().bytes());
        assert_eq!(s.user_id().unwrap(), s.user_id().unwrap());
    }
}
