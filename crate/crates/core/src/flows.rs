//! Five-second per-device, per-endpoint byte counters.

use std::collections::{BTreeMap, HashMap};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::parser::RemoteContact;
use crate::privacy::DeviceId;
use crate::types::{MacAddr, Timestamp, Transport};

pub const WINDOW_SECS: i64 = 5;
/// How far behind the newest contact a window may still receive bytes.
pub const ALLOWED_LATENESS_SECS: i64 = 10;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FlowKey {
    pub device_id: DeviceId,
    pub remote_ip: IpAddr,
    pub remote_port: u16,
    pub transport: Transport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowWindow {
    #[serde(flatten)]
    pub key: FlowKey,
    /// Epoch seconds, a multiple of [`WINDOW_SECS`].
    pub window_start: i64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub first_packet_ts: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FlowError {
    #[error("cannot merge windows with different keys")]
    KeyMismatch,
    #[error("cannot merge windows {0} and {1}")]
    WindowMismatch(i64, i64),
}

pub fn window_start_for(ts: Timestamp) -> i64 {
    ts.secs().div_euclid(WINDOW_SECS) * WINDOW_SECS
}

impl FlowWindow {
    /// The merge identity: no bytes, and a first-packet time no earlier than
    /// any real packet in the window.
    pub fn zero(key: FlowKey, window_start: i64) -> FlowWindow {
        FlowWindow {
            key,
            window_start,
            bytes_sent: 0,
            bytes_received: 0,
            first_packet_ts: Timestamp(Timestamp::from_secs(window_start + WINDOW_SECS).micros() - 1),
        }
    }

    pub fn window_end(&self) -> i64 {
        self.window_start + WINDOW_SECS
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_sent + self.bytes_received
    }

    pub fn is_aligned(&self) -> bool {
        self.window_start.rem_euclid(WINDOW_SECS) == 0
    }
}

pub fn merge_windows(a: &FlowWindow, b: &FlowWindow) -> Result<FlowWindow, FlowError> {
    if a.key != b.key {
        return Err(FlowError::KeyMismatch);
    }
    if a.window_start != b.window_start {
        return Err(FlowError::WindowMismatch(a.window_start, b.window_start));
    }
    Ok(FlowWindow {
        key: a.key.clone(),
        window_start: a.window_start,
        bytes_sent: a.bytes_sent + b.bytes_sent,
        bytes_received: a.bytes_received + b.bytes_received,
        first_packet_ts: a.first_packet_ts.min(b.first_packet_ts),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Quarantine {
    pub contacts: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AggregatorStats {
    pub contacts: u64,
    /// Contacts that arrived after their window had been emitted.
    pub late_contacts: u64,
    pub windows_emitted: u64,
}

/// Watermark-driven window builder.
///
/// A window `[s, s+5)` is emitted once the newest contact seen is at least
/// `s + 5 + ALLOWED_LATENESS_SECS`. Contacts for an already emitted window
/// start a correction window with the same key, meant to be merged by the
/// collector.
#[derive(Debug)]
pub struct FlowAggregator {
    id_map: HashMap<MacAddr, DeviceId>,
    open: BTreeMap<(i64, FlowKey), FlowWindow>,
    /// Highest window start already flushed by the watermark.
    closed_before: i64,
    watermark: Option<Timestamp>,
    quarantine: BTreeMap<MacAddr, Quarantine>,
    stats: AggregatorStats,
}

impl FlowAggregator {
    pub fn new(id_map: HashMap<MacAddr, DeviceId>) -> Self {
        FlowAggregator {
            id_map,
            open: BTreeMap::new(),
            closed_before: i64::MIN,
            watermark: None,
            quarantine: BTreeMap::new(),
            stats: AggregatorStats::default(),
        }
    }

    pub fn map_device(&mut self, mac: MacAddr, id: DeviceId) {
        self.id_map.insert(mac, id);
    }

    pub fn stats(&self) -> &AggregatorStats {
        &self.stats
    }

    pub fn quarantine(&self) -> &BTreeMap<MacAddr, Quarantine> {
        &self.quarantine
    }

    pub fn open_windows(&self) -> usize {
        self.open.len()
    }

    /// Adds one contact; returns windows the watermark has closed.
    pub fn push(&mut self, c: &RemoteContact) -> Vec<FlowWindow> {
        self.stats.contacts += 1;
        let Some(device_id) = self.id_map.get(&c.device_mac).cloned() else {
            let q = self.quarantine.entry(c.device_mac).or_default();
            q.contacts += 1;
            q.bytes += c.bytes_out + c.bytes_in;
            return Vec::new();
        };
        let start = window_start_for(c.timestamp);
        if start < self.closed_before {
            self.stats.late_contacts += 1;
        }
        let key = FlowKey { device_id, remote_ip: c.remote_ip, remote_port: c.remote_port, transport: c.transport };
        let w = self
            .open
            .entry((start, key.clone()))
            .or_insert_with(|| FlowWindow::zero(key, start));
        w.bytes_sent += c.bytes_out;
        w.bytes_received += c.bytes_in;
        w.first_packet_ts = w.first_packet_ts.min(c.timestamp);
        if self.watermark.is_none_or(|wm| c.timestamp > wm) {
            self.watermark = Some(c.timestamp);
        }
        self.advance()
    }

    fn advance(&mut self) -> Vec<FlowWindow> {
        let Some(wm) = self.watermark else { return Vec::new() };
        // windows ending at or before this point are closed
        let horizon = wm.secs() - ALLOWED_LATENESS_SECS - WINDOW_SECS;
        let mut out = Vec::new();
        while let Some(entry) = self.open.first_entry() {
            if entry.key().0 > horizon {
                break;
            }
            out.push(entry.remove());
        }
        let limit = horizon - horizon.rem_euclid(WINDOW_SECS) + WINDOW_SECS;
        self.closed_before = self.closed_before.max(limit);
        self.stats.windows_emitted += out.len() as u64;
        out
    }

    /// Emits every open window, e.g. at end of capture or upload time.
    pub fn flush(&mut self) -> Vec<FlowWindow> {
        let out: Vec<FlowWindow> = std::mem::take(&mut self.open).into_values().collect();
        self.stats.windows_emitted += out.len() as u64;
        if let Some(last) = out.iter().map(|w| w.window_end()).max() {
            self.closed_before = self.closed_before.max(last);
        }
        out
    }
}

/// Batch form: every contact through one aggregator, then a final flush.
pub fn aggregate<'a>(
    contacts: impl IntoIterator<Item = &'a RemoteContact>,
    id_map: HashMap<MacAddr, DeviceId>,
) -> (Vec<FlowWindow>, BTreeMap<MacAddr, Quarantine>) {
    let mut agg = FlowAggregator::new(id_map);
    let mut out = Vec::new();
    for c in contacts {
        out.extend(agg.push(c));
    }
    out.extend(agg.flush());
    (out, agg.quarantine)
}

/// Merges windows sharing key and start, sorted by (start, key).
pub fn coalesce(windows: impl IntoIterator<Item = FlowWindow>) -> Vec<FlowWindow> {
    let mut map: BTreeMap<(i64, FlowKey), FlowWindow> = BTreeMap::new();
    for w in windows {
        let k = (w.window_start, w.key.clone());
        match map.get_mut(&k) {
            Some(existing) => *existing = merge_windows(existing, &w).expect("same key"),
            None => {
                map.insert(k, w);
            }
        }
    }
    map.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dev(n: u8) -> DeviceId {
        DeviceId::from_wire(format!("{:064x}", n))
    }

    fn mac(n: u8) -> MacAddr {
        MacAddr([2, 0, 0, 0, 0, n])
    }

    fn contact(m: u8, ts: f64, out: u64, inb: u64) -> RemoteContact {
        RemoteContact {
            device_mac: mac(m),
            remote_ip: "93.184.216.34".parse().unwrap(),
            remote_port: 443,
            transport: Transport::Tcp,
            bytes_out: out,
            bytes_in: inb,
            timestamp: Timestamp::from_secs_f64(ts),
        }
    }

    fn ids() -> HashMap<MacAddr, DeviceId> {
        (0..4).map(|i| (mac(i), dev(i))).collect()
    }

    #[test]
    fn single_contact() {
        let (w, _) = aggregate(&[contact(1, 7.2, 100, 0)], ids());
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].window_start, w[0].bytes_sent, w[0].bytes_received), (5, 100, 0));
        assert_eq!(w[0].first_packet_ts, Timestamp::from_secs_f64(7.2));
    }

    #[test]
    fn boundary_split() {
        let (w, _) = aggregate(&[contact(1, 4.9, 1, 0), contact(1, 5.1, 1, 0)], ids());
        let starts: Vec<i64> = w.iter().map(|w| w.window_start).collect();
        assert_eq!(starts, vec![0, 5]);
    }

    #[test]
    fn unmapped_mac_quarantined() {
        let (w, q) = aggregate(&[contact(9, 1.0, 10, 5)], ids());
        assert!(w.is_empty());
        assert_eq!(q[&mac(9)], Quarantine { contacts: 1, bytes: 15 });
    }

    #[test]
    fn watermark_emission_and_correction() {
        let mut agg = FlowAggregator::new(ids());
        assert!(agg.push(&contact(1, 1.0, 10, 0)).is_empty());
        assert!(agg.push(&contact(1, 14.9, 10, 0)).is_empty());
        let out = agg.push(&contact(1, 15.0, 10, 0));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].window_start, 0);
        // late bytes for [0,5)
        let correction = agg.push(&contact(1, 2.0, 7, 0));
        assert_eq!(agg.stats().late_contacts, 1);
        assert_eq!(correction.len(), 1);
        assert_eq!((correction[0].window_start, correction[0].bytes_sent), (0, 7));
        let rest = agg.flush();
        assert_eq!(rest.iter().map(|w| w.window_start).collect::<Vec<_>>(), vec![10, 15]);
    }

    #[test]
    fn merge_examples() {
        let key = FlowKey { device_id: dev(1), remote_ip: "1.1.1.1".parse().unwrap(), remote_port: 53, transport: Transport::Udp };
        let mut a = FlowWindow::zero(key.clone(), 10);
        a.bytes_sent = 10;
        a.bytes_received = 20;
        a.first_packet_ts = Timestamp::from_secs(11);
        let mut b = a.clone();
        b.bytes_sent = 5;
        b.bytes_received = 5;
        let m = merge_windows(&a, &b).unwrap();
        assert_eq!((m.bytes_sent, m.bytes_received), (15, 25));
        assert_eq!(merge_windows(&a, &FlowWindow::zero(key.clone(), 10)).unwrap(), a);
        let d = merge_windows(&a, &a).unwrap();
        assert_eq!((d.bytes_sent, d.bytes_received), (20, 40));
        assert!(matches!(merge_windows(&a, &FlowWindow::zero(key, 15)), Err(FlowError::WindowMismatch(10, 15))));
    }

    fn arb_window() -> impl Strategy<Value = FlowWindow> {
        (0u64..1_000_000, 0u64..1_000_000, 0i64..5_000_000).prop_map(|(s, r, off)| {
            let key = FlowKey { device_id: dev(1), remote_ip: "1.1.1.1".parse().unwrap(), remote_port: 53, transport: Transport::Udp };
            FlowWindow { key, window_start: 100, bytes_sent: s, bytes_received: r, first_packet_ts: Timestamp(100_000_000 + off) }
        })
    }

    proptest! {
        #[test]
        fn merge_is_commutative_and_associative(a in arb_window(), b in arb_window(), c in arb_window()) {
            prop_assert_eq!(merge_windows(&a, &b).unwrap(), merge_windows(&b, &a).unwrap());
            let left = merge_windows(&merge_windows(&a, &b).unwrap(), &c).unwrap();
            let right = merge_windows(&a, &merge_windows(&b, &c).unwrap()).unwrap();
            prop_assert_eq!(left, right);
            let z = FlowWindow::zero(a.key.clone(), a.window_start);
            prop_assert_eq!(merge_windows(&a, &z).unwrap(), a);
        }

        #[test]
        fn conservation_and_alignment(
            raw in proptest::collection::vec((0u8..5, -1_000i64..100_000_000, 0u64..5000, 0u64..5000), 0..300)
        ) {
            let mut v: Vec<RemoteContact> = raw.iter().map(|(m, t, o, i)| {
                let mut c = contact(*m, 0.0, *o, *i);
                c.timestamp = Timestamp(1_600_000_000_000_000 + t);
                c
            }).collect();
            v.sort_by_key(|c| c.timestamp);
            let (w, q) = aggregate(&v, ids());
            let mapped: u64 = v.iter().filter(|c| c.device_mac.0[5] < 4).map(|c| c.bytes_out + c.bytes_in).sum();
            prop_assert_eq!(w.iter().map(|w| w.total_bytes()).sum::<u64>(), mapped);
            prop_assert_eq!(q.values().map(|q| q.bytes).sum::<u64>() + mapped,
                            v.iter().map(|c| c.bytes_out + c.bytes_in).sum::<u64>());
            for x in &w {
                prop_assert!(x.is_aligned());
                prop_assert!(x.first_packet_ts >= Timestamp::from_secs(x.window_start));
                prop_assert!(x.first_packet_ts < Timestamp::from_secs(x.window_end()));
            }
        }
    }
}
