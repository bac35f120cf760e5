//! Bounded in-order prefix reassembly for the first bytes of a TCP stream.
//!
//! Only stream starts are reassembled, and only until a ClientHello, an HTTP
//! request header block or a UPnP description is complete.

use std::collections::HashMap;
use std::net::IpAddr;

/// Upper bound on reassembled bytes per stream direction.
pub const MAX_PREFIX: usize = 16 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpSegment {
    pub seq: u32,
    pub payload: Vec<u8>,
}

impl TcpSegment {
    pub fn new(seq: u32, payload: impl Into<Vec<u8>>) -> Self {
        TcpSegment { seq, payload: payload.into() }
    }
}

/// Serial-number comparison: `a` is before `b` within a 2^31 window.
fn seq_before(a: u32, b: u32) -> bool {
    (a.wrapping_sub(b) as i32) < 0
}

/// The earliest sequence number among `segments`.
pub fn lowest_seq(segments: &[TcpSegment]) -> Option<u32> {
    segments.iter().map(|s| s.seq).reduce(|a, b| if seq_before(b, a) { b } else { a })
}

/// Contiguous bytes from the lowest sequence number, stopping at the first
/// gap or at [`MAX_PREFIX`]. Overlapping retransmissions are tolerated.
pub fn reassemble_tcp_prefix(segments: &[TcpSegment]) -> Vec<u8> {
    match lowest_seq(segments) {
        Some(base) => reassemble_from(segments, base),
        None => Vec::new(),
    }
}

/// As [`reassemble_tcp_prefix`] but starting at a known sequence number
/// (e.g. the SYN's ISN + 1).
pub fn reassemble_from(segments: &[TcpSegment], base: u32) -> Vec<u8> {
    let mut out: Vec<u8> = Vec::new();
    loop {
        let cursor = base.wrapping_add(out.len() as u32);
        // Any segment covering `cursor` extends the prefix.
        let next = segments.iter().find_map(|s| {
            let offset = cursor.wrapping_sub(s.seq) as usize;
            let covers = !seq_before(cursor, s.seq) && offset < s.payload.len();
            covers.then(|| &s.payload[offset..])
        });
        match next {
            Some(bytes) => {
                let room = MAX_PREFIX - out.len();
                out.extend_from_slice(&bytes[..bytes.len().min(room)]);
                if out.len() >= MAX_PREFIX {
                    break;
                }
            }
            None => break,
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub src: IpAddr,
    pub src_port: u16,
    pub dst: IpAddr,
    pub dst_port: u16,
}

#[derive(Debug, Default)]
struct StreamState {
    base: Option<u32>,
    segments: Vec<TcpSegment>,
    buffered: usize,
    last_touch: u64,
}

/// Per-direction prefix buffers with a bounded number of live streams.
#[derive(Debug)]
pub struct StreamTable {
    streams: HashMap<StreamKey, StreamState>,
    finished: HashMap<StreamKey, u64>,
    capacity: usize,
    clock: u64,
}

impl Default for StreamTable {
    fn default() -> Self {
        StreamTable::with_capacity(4096)
    }
}

impl StreamTable {
    pub fn with_capacity(capacity: usize) -> Self {
        StreamTable { streams: HashMap::new(), finished: HashMap::new(), capacity, clock: 0 }
    }

    pub fn is_finished(&self, key: &StreamKey) -> bool {
        self.finished.contains_key(key)
    }

    /// Records the SYN so the prefix starts exactly at ISN + 1.
    pub fn syn(&mut self, key: StreamKey, isn: u32) {
        self.finished.remove(&key);
        let st = self.streams.entry(key).or_default();
        st.base = Some(isn.wrapping_add(1));
        st.segments.clear();
        st.buffered = 0;
    }

    /// Adds a segment and returns the current in-order prefix.
    pub fn push(&mut self, key: StreamKey, seq: u32, payload: &[u8]) -> Vec<u8> {
        self.clock += 1;
        if !self.streams.contains_key(&key) && self.streams.len() >= self.capacity {
            self.evict_oldest();
        }
        let st = self.streams.entry(key).or_default();
        st.last_touch = self.clock;
        if st.buffered < MAX_PREFIX && !payload.is_empty() {
            let take = payload.len().min(MAX_PREFIX - st.buffered);
            st.buffered += take;
            st.segments.push(TcpSegment::new(seq, &payload[..take]));
        }
        match st.base {
            Some(base) => reassemble_from(&st.segments, base),
            None => reassemble_tcp_prefix(&st.segments),
        }
    }

    pub fn buffered(&self, key: &StreamKey) -> usize {
        self.streams.get(key).map_or(0, |s| s.buffered)
    }

    /// Drops buffers for `key` and ignores it until the next SYN.
    pub fn finish(&mut self, key: StreamKey) {
        self.streams.remove(&key);
        if self.finished.len() >= self.capacity * 4 {
            self.finished.clear();
        }
        self.finished.insert(key, self.clock);
    }

    pub fn forget(&mut self, key: &StreamKey) {
        self.streams.remove(key);
        self.finished.remove(key);
    }

    pub fn live_streams(&self) -> usize {
        self.streams.len()
    }

    fn evict_oldest(&mut self) {
        if let Some(k) = self.streams.iter().min_by_key(|(_, s)| s.last_touch).map(|(k, _)| *k) {
            self.streams.remove(&k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_segment_identity() {
        let s = [TcpSegment::new(1000, b"hello world".to_vec())];
        assert_eq!(reassemble_tcp_prefix(&s), b"hello world");
    }

    #[test]
    fn out_of_order_concatenation() {
        let text = b"GET / HTTP/1.1\r\nHost: example\r\n\r\n";
        let (a, b) = text.split_at(9);
        let s = [TcpSegment::new(509, b.to_vec()), TcpSegment::new(500, a.to_vec())];
        assert_eq!(reassemble_tcp_prefix(&s), text);
    }

    #[test]
    fn gap_truncates() {
        let s = [TcpSegment::new(0, b"abc".to_vec()), TcpSegment::new(10, b"xyz".to_vec())];
        assert_eq!(reassemble_tcp_prefix(&s), b"abc");
    }

    #[test]
    fn wraps_sequence_space() {
        let s = [TcpSegment::new(2, b"cd".to_vec()), TcpSegment::new(u32::MAX - 1, b"xyab".to_vec())];
        assert_eq!(reassemble_tcp_prefix(&s), b"xyabcd");
    }

    #[test]
    fn bounded_at_max_prefix() {
        let s: Vec<TcpSegment> =
            (0..20u32).map(|i| TcpSegment::new(i * 1024, vec![i as u8; 1024])).collect();
        assert_eq!(reassemble_tcp_prefix(&s).len(), MAX_PREFIX);
    }

    #[test]
    fn table_eviction_keeps_capacity() {
        let mut t = StreamTable::with_capacity(2);
        let key = |p| StreamKey {
            src: "10.0.0.1".parse().unwrap(),
            src_port: p,
            dst: "1.1.1.1".parse().unwrap(),
            dst_port: 443,
        };
        t.push(key(1), 0, b"a");
        t.push(key(2), 0, b"b");
        t.push(key(3), 0, b"c");
        assert_eq!(t.live_streams(), 2);
        assert_eq!(t.buffered(&key(1)), 0);
    }

    proptest! {
        #[test]
        fn any_split_any_order_reassembles(data in proptest::collection::vec(any::<u8>(), 1..3000),
                                           cuts in proptest::collection::vec(any::<u16>(), 0..8),
                                           isn in any::<u32>(),
                                           seed in any::<u64>()) {
            let mut points: Vec<usize> = cuts.iter().map(|c| *c as usize % data.len()).collect();
            points.push(0);
            points.push(data.len());
            points.sort();
            points.dedup();
            let mut segs: Vec<TcpSegment> = points.windows(2)
                .map(|w| TcpSegment::new(isn.wrapping_add(w[0] as u32), data[w[0]..w[1]].to_vec()))
                .collect();
            // deterministic shuffle
            let mut s = seed;
            for i in (1..segs.len()).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1);
                segs.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(reassemble_tcp_prefix(&segs), data);
        }
    }
}
