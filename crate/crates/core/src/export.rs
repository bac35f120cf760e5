//! The three release files and their import path.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::endpoints::ListDatabases;
use crate::flows::window_start_for;
use crate::identity::{Category, LabelTriple};
use crate::privacy::DeviceId;
use crate::store::{FlowRow, FlowRowKey, Remote, StoreData};
use crate::tls::{parse_suites_text, suites_text, ClientHelloRecord, TlsVersion};
use crate::types::{Timestamp, Transport};

pub const LABELS_FILE: &str = "Device_labels.csv";
pub const FLOWS_FILE: &str = "Network_flows.csv";
pub const HELLOS_FILE: &str = "TLS_client_hello.csv";

pub const LABELS_HEADER: [&str; 3] = ["device_id", "category", "vendor"];
pub const FLOWS_HEADER: [&str; 7] =
    ["device_id", "first_packet_ts", "remote_host", "remote_port", "protocol", "bytes_sent", "bytes_received"];
pub const HELLOS_HEADER: [&str; 5] = ["device_id", "timestamp", "tls_version", "cipher_suites", "tls_fingerprint"];

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{file} line {line}: {msg}")]
    Row { file: &'static str, line: u64, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReleaseCsvs {
    pub labels: String,
    pub flows: String,
    pub hellos: String,
}

impl ReleaseCsvs {
    pub fn files(&self) -> [(&'static str, &str); 3] {
        [(LABELS_FILE, &self.labels), (FLOWS_FILE, &self.flows), (HELLOS_FILE, &self.hellos)]
    }
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::CRLF)
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is utf-8")
}

fn render<T: Serialize + Ord>(header: &[&str], mut rows: Vec<T>) -> String {
    rows.sort();
    let mut w = writer();
    w.write_record(header).expect("in-memory write");
    for r in &rows {
        w.serialize(r).expect("in-memory write");
    }
    finish(w)
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
struct LabelLine {
    device_id: String,
    category: String,
    vendor: String,
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
struct FlowLine {
    device_id: String,
    #[serde(serialize_with = "seconds")]
    first_packet_ts: Timestamp,
    remote_host: String,
    remote_port: u16,
    protocol: String,
    bytes_sent: u64,
    bytes_received: u64,
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
struct HelloLine {
    device_id: String,
    #[serde(serialize_with = "seconds")]
    timestamp: Timestamp,
    tls_version: String,
    cipher_suites: String,
    tls_fingerprint: String,
}

/// Epoch seconds with six fractional digits.
fn seconds<S: serde::Serializer>(ts: &Timestamp, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(ts)
}

/// Renders the three files. Rows are sorted by device id then timestamp,
/// with the remaining columns breaking ties.
pub fn render_release(data: &StoreData, dbs: &ListDatabases) -> ReleaseCsvs {
    let labels = data
        .labels
        .values()
        .map(|l| LabelLine {
            device_id: l.triple.device_id.to_string(),
            category: l.triple.std_category.to_string(),
            vendor: l.triple.std_vendor.clone(),
        })
        .collect();
    let resolver = data.resolver(dbs);
    let flows = data
        .flows
        .values()
        .map(|r| FlowLine {
            device_id: r.key.device_id.to_string(),
            first_packet_ts: r.first_packet_ts,
            remote_host: resolver.release_name(r),
            remote_port: r.key.remote_port,
            protocol: r.key.transport.to_string().to_ascii_uppercase(),
            bytes_sent: r.bytes_sent,
            bytes_received: r.bytes_received,
        })
        .collect();
    let hellos = data
        .hellos
        .values()
        .map(|h| HelloLine {
            device_id: h.device_id.to_string(),
            timestamp: h.timestamp,
            tls_version: h.effective_version.to_string(),
            cipher_suites: suites_text(&h.cipher_suites),
            tls_fingerprint: h.fingerprint.clone(),
        })
        .collect();
    ReleaseCsvs {
        labels: render(&LABELS_HEADER, labels),
        flows: render(&FLOWS_HEADER, flows),
        hellos: render(&HELLOS_HEADER, hellos),
    }
}

pub fn write_release_csvs(data: &StoreData, dbs: &ListDatabases, dir: &Path) -> Result<ReleaseCsvs, ExportError> {
    let out = render_release(data, dbs);
    fs::create_dir_all(dir)?;
    for (name, body) in out.files() {
        fs::write(dir.join(name), body)?;
    }
    Ok(out)
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes())
}

fn check_header(file: &'static str, r: &mut csv::Reader<&[u8]>, want: &[&str]) -> Result<(), ExportError> {
    let got: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if got != want {
        return Err(ExportError::Row { file, line: 1, msg: format!("header {got:?}, expected {want:?}") });
    }
    Ok(())
}

/// Builds a store from release files. Labels come back with raw fields
/// equal to the standardized ones; hellos carry only the released columns.
pub fn import_release(csvs: &ReleaseCsvs) -> Result<StoreData, ExportError> {
    let mut data = StoreData::default();
    let bad = |file: &'static str, rec: &csv::StringRecord, msg: String| ExportError::Row {
        file,
        line: rec.position().map_or(0, |p| p.line()),
        msg,
    };

    let mut r = reader(&csvs.labels);
    check_header(LABELS_FILE, &mut r, &LABELS_HEADER)?;
    for rec in r.records() {
        let rec = rec?;
        let id = DeviceId::from_wire(&rec[0]);
        let category: Category = rec[1].parse().map_err(|e| bad(LABELS_FILE, &rec, e))?;
        let t = LabelTriple { std_category: category, std_vendor: rec[2].to_string(), ..LabelTriple::raw(id, "", &rec[1], &rec[2]) };
        data.insert_label(t, Timestamp(0));
    }

    let mut r = reader(&csvs.flows);
    check_header(FLOWS_FILE, &mut r, &FLOWS_HEADER)?;
    for rec in r.records() {
        let rec = rec?;
        let ts: Timestamp = rec[1].parse().map_err(|e| bad(FLOWS_FILE, &rec, format!("{e}")))?;
        let port: u16 = rec[3].parse().map_err(|e| bad(FLOWS_FILE, &rec, format!("{e}")))?;
        let transport: Transport = rec[4].parse().map_err(|e| bad(FLOWS_FILE, &rec, e))?;
        let num = |i: usize| rec[i].parse::<u64>().map_err(|e| bad(FLOWS_FILE, &rec, format!("{e}")));
        data.insert_flow(FlowRow {
            key: FlowRowKey {
                device_id: DeviceId::from_wire(&rec[0]),
                remote: rec[2].parse::<Remote>().unwrap_or_else(|e| match e {}),
                remote_port: port,
                transport,
                window_start: window_start_for(ts),
            },
            first_packet_ts: ts,
            bytes_sent: num(5)?,
            bytes_received: num(6)?,
        });
    }

    let mut r = reader(&csvs.hellos);
    check_header(HELLOS_FILE, &mut r, &HELLOS_HEADER)?;
    for rec in r.records() {
        let rec = rec?;
        let ts: Timestamp = rec[1].parse().map_err(|e| bad(HELLOS_FILE, &rec, format!("{e}")))?;
        let version: TlsVersion = rec[2].parse().map_err(|e| bad(HELLOS_FILE, &rec, format!("{e:?}")))?;
        let suites = parse_suites_text(&rec[3]).map_err(|e| bad(HELLOS_FILE, &rec, format!("{e}")))?;
        data.insert_hello(ClientHelloRecord {
            device_id: DeviceId::from_wire(&rec[0]),
            timestamp: ts,
            legacy_version: version,
            effective_version: version,
            cipher_suites: suites,
            extensions: Vec::new(),
            sni: None,
            supported_groups: Vec::new(),
            ec_point_formats: Vec::new(),
            fingerprint: rec[4].to_string(),
            remote_ip: None,
            remote_port: None,
        });
    }
    Ok(data)
}

pub fn read_release_csvs(dir: &Path) -> Result<ReleaseCsvs, ExportError> {
    Ok(ReleaseCsvs {
        labels: fs::read_to_string(dir.join(LABELS_FILE))?,
        flows: fs::read_to_string(dir.join(FLOWS_FILE))?,
        hellos: fs::read_to_string(dir.join(HELLOS_FILE))?,
    })
}
