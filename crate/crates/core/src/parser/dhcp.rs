//! BOOTP/DHCP option parsing, limited to what identity hints need.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhcpMessage {
    pub op: u8,
    pub client_mac: [u8; 6],
    pub message_type: Option<u8>,
    pub hostname: Option<String>,
}

pub const DHCP_REQUEST: u8 = 3;
const MAGIC: [u8; 4] = [99, 130, 83, 99];
const OPT_PAD: u8 = 0;
const OPT_HOSTNAME: u8 = 12;
const OPT_MESSAGE_TYPE: u8 = 53;
const OPT_END: u8 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DhcpError {
    #[error("truncated BOOTP header")]
    Truncated,
    #[error("missing DHCP magic cookie")]
    NoMagic,
    #[error("option overruns message")]
    BadOption,
}

pub fn decode(b: &[u8]) -> Result<DhcpMessage, DhcpError> {
    if b.len() < 240 {
        return Err(DhcpError::Truncated);
    }
    if b[236..240] != MAGIC {
        return Err(DhcpError::NoMagic);
    }
    let mut client_mac = [0u8; 6];
    client_mac.copy_from_slice(&b[28..34]);
    let mut msg = DhcpMessage { op: b[0], client_mac, message_type: None, hostname: None };
    let mut i = 240;
    while i < b.len() {
        let code = b[i];
        if code == OPT_PAD {
            i += 1;
            continue;
        }
        if code == OPT_END {
            break;
        }
        let len = *b.get(i + 1).ok_or(DhcpError::BadOption)? as usize;
        let val = b.get(i + 2..i + 2 + len).ok_or(DhcpError::BadOption)?;
        match code {
            OPT_MESSAGE_TYPE if len == 1 => msg.message_type = Some(val[0]),
            OPT_HOSTNAME => {
                let s = String::from_utf8_lossy(val).trim_matches(char::from(0)).trim().to_string();
                if !s.is_empty() {
                    msg.hostname = Some(s);
                }
            }
            _ => {}
        }
        i += 2 + len;
    }
    Ok(msg)
}

impl DhcpMessage {
    pub fn is_request(&self) -> bool {
        self.op == 1 && self.message_type == Some(DHCP_REQUEST)
    }
}
