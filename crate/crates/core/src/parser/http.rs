//! First-request header extraction for plaintext HTTP.

const METHODS: [&str; 9] = ["GET", "POST", "HEAD", "PUT", "DELETE", "OPTIONS", "PATCH", "CONNECT", "TRACE"];

/// Outcome of inspecting a client stream prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeaderScan {
    /// The header block is not complete yet.
    Incomplete,
    /// Not an HTTP request.
    NotHttp,
    /// Complete header block; the User-Agent value if present.
    Done(Option<String>),
}

pub fn scan_request(prefix: &[u8]) -> HeaderScan {
    if prefix.is_empty() {
        return HeaderScan::Incomplete;
    }
    let could_be_request = METHODS.iter().any(|m| {
        let token = format!("{m} ");
        let n = prefix.len().min(token.len());
        prefix[..n] == token.as_bytes()[..n]
    });
    if !could_be_request {
        return HeaderScan::NotHttp;
    }
    let Some(end) = find(prefix, b"\r\n\r\n") else {
        return HeaderScan::Incomplete;
    };
    let head = String::from_utf8_lossy(&prefix[..end]);
    let ua = head.lines().skip(1).find_map(|line| {
        let (name, value) = line.split_once(':')?;
        name.trim().eq_ignore_ascii_case("user-agent").then(|| value.trim().to_string())
    });
    HeaderScan::Done(ua.filter(|v| !v.is_empty()))
}

pub fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_user_agent() {
        let req = b"GET /a HTTP/1.1\r\nHost: x\r\nUser-Agent: Roku/DVP-9.10\r\n\r\nBODY";
        assert_eq!(scan_request(req), HeaderScan::Done(Some("Roku/DVP-9.10".into())));
    }

    #[test]
    fn incomplete_and_not_http() {
        assert_eq!(scan_request(b"GET / HTTP/1.1\r\nHost"), HeaderScan::Incomplete);
        assert_eq!(scan_request(b"\x16\x03\x01\x02\x00\x01\x00\x01\xfc"), HeaderScan::NotHttp);
        assert_eq!(scan_request(b"\x16\x03"), HeaderScan::NotHttp);
        assert_eq!(scan_request(b"GE"), HeaderScan::Incomplete);
        assert_eq!(scan_request(b"POST /x HTTP/1.0\r\n\r\n"), HeaderScan::Done(None));
    }
}
