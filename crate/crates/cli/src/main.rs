mod live;
mod state;
mod upload;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::net::{IpAddr, Ipv4Addr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use homescope_core::arp::{format_kb_per_sec, frames_per_period, overhead_bytes_per_second};
use homescope_core::daemon::{run_capture, BatchQueue, Inspector, InspectorOptions, Uploader};
use homescope_core::endpoints::ListDatabases;
use homescope_core::export::write_release_csvs;
use homescope_core::identity::{FixtureFingerbank, LabelRules};
use homescope_core::parser::{ParserConfig, TrafficParser};
use homescope_core::privacy::{DeviceId, UnknownPolicy};
use homescope_core::reports::{run_report, ExpectedResolvers, ReportFormat, ReportKind};
use homescope_core::source::{open_source, SourceDescriptor, SourceEvent};
use homescope_core::store::{HintFilter, Store};
use homescope_core::tls::CipherRegistry;
use homescope_core::wire::{TableCounts, UploadBatch};
use homescope_core::{MacAddr, Timestamp};
use ipnet::Ipv4Net;
use tracing_subscriber::EnvFilter;

use crate::live::LiveOptions;
use crate::state::StateDir;
use crate::upload::{HttpUploader, StoreUploader};

#[derive(Parser)]
#[command(name = "homescope", version, about = "Inspect what your smart-home devices talk to")]
struct Cli {
    /// Where the salt, user id and local monitor list live.
    #[arg(long, global = true, env = "HOMESCOPE_STATE_DIR")]
    state_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// ARP spoofing overhead for N monitored devices.
    Overhead {
        #[arg(long, short = 'n')]
        devices: usize,
    },
    /// ARP-scan the LAN and list the hosts that answered.
    Scan(LiveArgs),
    /// Edit the local list of devices to intercept.
    Monitor {
        #[arg(long, value_name = "MAC", conflicts_with_all = ["remove", "list"])]
        add: Option<MacAddr>,
        #[arg(long, value_name = "MAC", conflicts_with = "list")]
        remove: Option<MacAddr>,
        #[arg(long)]
        list: bool,
    },
    /// Upload a device even though it looks like a phone or computer.
    /// Typing the full address shows you have access to the device.
    Override {
        #[arg(long, value_name = "MAC")]
        mac: MacAddr,
    },
    /// Capture live traffic and upload it until Ctrl-C.
    Run {
        #[command(flatten)]
        live: LiveArgs,
        #[command(flatten)]
        sink: SinkArgs,
        #[command(flatten)]
        client: ClientArgs,
    },
    /// Run a pcap file through the client pipeline.
    Replay {
        #[arg(long)]
        pcap: PathBuf,
        /// Local subnet of the capture.
        #[arg(long)]
        subnet: Ipv4Net,
        #[command(flatten)]
        sink: SinkArgs,
        #[command(flatten)]
        client: ClientArgs,
    },
    /// Ingest upload batches saved as JSON files into a store.
    Ingest {
        #[arg(long)]
        store: PathBuf,
        #[arg(required = true)]
        batches: Vec<PathBuf>,
    },
    /// Write the three release CSV files.
    Export {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lists_dir: Option<PathBuf>,
    },
    /// Print one analysis report.
    Report {
        kind: ReportKind,
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
        /// Resolver DHCP hands out, for users whose uploads do not say.
        #[arg(long)]
        dhcp_resolver: Option<IpAddr>,
        #[arg(long)]
        lists_dir: Option<PathBuf>,
        #[arg(long)]
        cipher_registry: Option<PathBuf>,
    },
    /// Delete a device's data, or only its DHCP or SSDP hints.
    Delete {
        #[arg(long)]
        device: DeviceId,
        #[arg(long)]
        only: Option<HintFilter>,
        #[command(flatten)]
        sink: SinkArgs,
    },
}

#[derive(Args, Clone)]
struct LiveArgs {
    #[arg(long, env = "HOMESCOPE_INTERFACE")]
    interface: String,
    /// Defaults to the interface's own subnet.
    #[arg(long)]
    subnet: Option<Ipv4Net>,
    /// Defaults to the interface's default route.
    #[arg(long)]
    gateway: Option<Ipv4Addr>,
    #[arg(long, default_value_t = 3)]
    listen_secs: u64,
}

impl LiveArgs {
    fn options(&self) -> LiveOptions {
        LiveOptions {
            interface: self.interface.clone(),
            subnet: self.subnet,
            gateway: self.gateway,
            listen: Duration::from_secs(self.listen_secs),
        }
    }
}

#[derive(Args, Clone)]
#[group(required = true, multiple = false)]
struct SinkArgs {
    /// Collector base URL, e.g. http://127.0.0.1:8080
    #[arg(long, env = "HOMESCOPE_COLLECTOR")]
    collector: Option<String>,
    /// Write straight into a store file instead.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ClientArgs {
    /// Monitor every device seen, not just the ones ticked.
    #[arg(long)]
    monitor_all: bool,
    /// Hold back devices not yet classified as smart-home.
    #[arg(long)]
    withhold_unknown: bool,
    /// Share this timezone name with the collector. Off by default.
    #[arg(long)]
    timezone: Option<String>,
    #[arg(long)]
    dhcp_resolver: Option<IpAddr>,
    /// Batches to keep while the collector is unreachable.
    #[arg(long, default_value_t = 720)]
    buffer: usize,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let state = StateDir::new(cli.state_dir.unwrap_or_else(StateDir::default_root));
    match cli.cmd {
        Cmd::Overhead { devices } => {
            let bps = overhead_bytes_per_second(devices)?;
            println!(
                "{devices} devices: {} frames every 2 s, {bps} B/s ({})",
                frames_per_period(devices),
                format_kb_per_sec(bps)
            );
        }
        Cmd::Scan(args) => {
            let d = live::discover(&args.options())?;
            println!("ip,mac,gateway");
            for h in &d.scan.hosts {
                println!("{},{},{}", h.ip, h.mac, h.is_gateway);
            }
            if d.scan.dropped_over_cap > 0 {
                eprintln!("{} more hosts answered but are over the device cap", d.scan.dropped_over_cap);
            }
        }
        Cmd::Monitor { add, remove, list } => {
            let mut l = state.monitor_list()?;
            if let Some(m) = add {
                l.monitored.insert(m);
            }
            if let Some(m) = remove {
                l.monitored.remove(&m);
            }
            if add.is_some() || remove.is_some() {
                state.save_monitor_list(&l)?;
            }
            if list || (add.is_none() && remove.is_none()) {
                for m in &l.monitored {
                    println!("{m}");
                }
            }
        }
        Cmd::Override { mac } => {
            let mut l = state.monitor_list()?;
            l.overrides.insert(mac);
            state.save_monitor_list(&l)?;
            println!("{mac} will be uploaded once seen on the LAN");
        }
        Cmd::Run { live, sink, client } => {
            let d = live::discover(&live.options())?;
            let parser = TrafficParser::new(ParserConfig::new(d.subnet).with_engine(d.iface.mac));
            let mut insp = inspector(&state, parser, &client)?;
            let mut up = uploader(&sink)?;
            let mut queue = BatchQueue::new(client.buffer);
            live::run(d, &mut insp, &mut queue, up.as_mut())?;
        }
        Cmd::Replay { pcap, subnet, sink, client } => {
            let parser = TrafficParser::new(ParserConfig::new(subnet));
            let mut insp = inspector(&state, parser, &client)?;
            let mut up = uploader(&sink)?;
            let mut queue = BatchQueue::new(client.buffer);
            let mut handle = open_source(&SourceDescriptor::pcap(&pcap))?;
            let mut read_error = None;
            let packets = std::iter::from_fn(|| match handle.next_event() {
                Ok(SourceEvent::Packet(p)) => Some(p),
                Ok(_) => None,
                Err(e) => {
                    read_error = Some(e);
                    None
                }
            });
            let acks = run_capture(packets, &mut insp, &mut queue, up.as_mut());
            if let Some(e) = read_error {
                bail!("reading {}: {e}", pcap.display());
            }
            let mut accepted = TableCounts::default();
            let mut rejected = BTreeMap::<String, u64>::new();
            for a in &acks {
                accepted += &a.accepted;
                for r in &a.rejected {
                    *rejected.entry(r.reason.clone()).or_default() += 1;
                }
            }
            let s = insp.stats();
            let summary = serde_json::json!({
                "packets": s.packets,
                "batches": acks.len(),
                "withheld": s.withheld,
                "accepted": accepted,
                "rejected": rejected,
                "unsent": queue.len(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if !queue.is_empty() {
                bail!("{} batches could not be delivered", queue.len());
            }
        }
        Cmd::Ingest { store, batches } => {
            let mut up = StoreUploader::open(&store)?;
            let mut total = TableCounts::default();
            for p in &batches {
                let b: UploadBatch = serde_json::from_slice(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)
                    .with_context(|| format!("parsing {}", p.display()))?;
                total += &up.upload(&b)?.accepted;
            }
            println!("{}", serde_json::to_string_pretty(&total)?);
        }
        Cmd::Export { store, out, lists_dir } => {
            let s = open_existing(&store)?;
            let csvs = write_release_csvs(s.data(), &lists(lists_dir.as_deref())?, &out)?;
            for (name, body) in csvs.files() {
                println!("{} {} rows", out.join(name).display(), body.lines().count().saturating_sub(1));
            }
        }
        Cmd::Report { kind, store, format, dhcp_resolver, lists_dir, cipher_registry } => {
            let s = open_existing(&store)?;
            let registry = match cipher_registry {
                Some(p) => CipherRegistry::load(&p)?,
                None => CipherRegistry::bundled(),
            };
            let expected = ExpectedResolvers { per_device: BTreeMap::new(), default: dhcp_resolver };
            let out = run_report(kind, s.data(), &lists(lists_dir.as_deref())?, &registry, &expected, format);
            std::io::stdout().write_all(out.as_bytes())?;
        }
        Cmd::Delete { device, only, sink } => {
            let counts = match (&sink.collector, &sink.store) {
                (Some(url), _) => {
                    let http = HttpUploader::new(url);
                    let mut path = format!("/v1/devices/{device}");
                    if let Some(f) = only {
                        path.push_str(&format!("?only={}", serde_json::to_value(f)?.as_str().unwrap_or_default()));
                    }
                    match http.agent().delete(&http.url(&path)).call() {
                        Ok(r) => r.into_json::<TableCounts>()?,
                        Err(ureq::Error::Status(code, r)) => bail!("collector said {code}: {}", r.into_string()?),
                        Err(e) => return Err(e.into()),
                    }
                }
                (None, Some(path)) => {
                    let mut s = open_existing(path)?;
                    let now = Timestamp::now();
                    let c = match only {
                        Some(f) => s.data_mut().delete_hint_kind(&device, f, now)?,
                        None => s.data_mut().delete_device_data(&device, now)?,
                    };
                    s.save()?;
                    c
                }
                (None, None) => unreachable!("clap requires one sink"),
            };
            println!("{}", serde_json::to_string_pretty(&counts)?);
        }
    }
    Ok(())
}

fn inspector(state: &StateDir, parser: TrafficParser, client: &ClientArgs) -> Result<Inspector> {
    let options = InspectorOptions {
        unknown_policy: if client.withhold_unknown { UnknownPolicy::Withhold } else { UnknownPolicy::Upload },
        timezone: client.timezone.clone(),
        dhcp_resolver: client.dhcp_resolver,
        monitor_all: client.monitor_all,
    };
    let mut insp = Inspector::new(parser, state.salt()?, state.user_id()?, options)
        .with_oracle(FixtureFingerbank::bundled())
        .with_rules(LabelRules::bundled());
    let l = state.monitor_list()?;
    for m in &l.monitored {
        insp.set_monitored(*m, true);
    }
    for m in &l.overrides {
        insp.override_when_seen(*m);
    }
    Ok(insp)
}

fn uploader(sink: &SinkArgs) -> Result<Box<dyn Uploader>> {
    Ok(match (&sink.collector, &sink.store) {
        (Some(url), _) => Box::new(HttpUploader::new(url)),
        (None, Some(p)) => Box::new(StoreUploader::open(p)?),
        (None, None) => unreachable!("clap requires one sink"),
    })
}

/// Reports on a typo'd path should fail, not print an empty table.
fn open_existing(path: &Path) -> Result<Store> {
    if !path.exists() {
        bail!("no store at {}", path.display());
    }
    Ok(Store::open(path)?)
}

fn lists(dir: Option<&Path>) -> Result<ListDatabases> {
    Ok(match dir {
        Some(d) => ListDatabases::load_dir(d)?,
        None => ListDatabases::bundled(),
    })
}
