//! Live capture: scan, spoof the monitored devices, capture, upload.

use std::net::{IpAddr, Ipv4Addr};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use homescope_core::arp::{
    arp_scan, run_spoofer, EngineIdentity, IntervalPacer, LanHost, ScanConfig, ScanResult, SpoofControl, SpoofSet,
    MAX_MONITORED, SPOOF_PERIOD,
};
use homescope_core::daemon::{BatchQueue, Inspector, Uploader};
use homescope_core::source::{default_gateway, interface_info, open_source, CaptureHandle, InterfaceInfo, SourceDescriptor, SourceEvent};
use homescope_core::wire::UploadBatch;
use homescope_core::Timestamp;
use ipnet::Ipv4Net;

#[derive(Debug, Clone)]
pub struct LiveOptions {
    pub interface: String,
    pub subnet: Option<Ipv4Net>,
    pub gateway: Option<Ipv4Addr>,
    pub listen: Duration,
}

pub struct Discovery {
    pub handle: CaptureHandle,
    pub iface: InterfaceInfo,
    pub subnet: Ipv4Net,
    pub gateway_ip: Ipv4Addr,
    pub scan: ScanResult,
}

impl Discovery {
    pub fn engine(&self) -> EngineIdentity {
        EngineIdentity { mac: self.iface.mac, ip: self.iface.ip }
    }
}

pub fn discover(opts: &LiveOptions) -> Result<Discovery> {
    let iface = interface_info(&opts.interface)?;
    let subnet = opts.subnet.unwrap_or(iface.subnet);
    let gateway_ip = opts
        .gateway
        .or_else(|| default_gateway(&opts.interface))
        .ok_or_else(|| anyhow!("no default route on {}; pass --gateway", opts.interface))?;
    let mut handle = open_source(&SourceDescriptor::live(&opts.interface))?;
    let engine = EngineIdentity { mac: iface.mac, ip: iface.ip };
    let mut cfg = ScanConfig::new(subnet, engine, gateway_ip);
    cfg.listen = opts.listen;
    let scan = arp_scan(&mut handle, &cfg)?;
    Ok(Discovery { handle, iface, subnet, gateway_ip, scan })
}

fn spoof_targets(scan: &ScanResult, inspector: &Inspector) -> Vec<LanHost> {
    let mut v: Vec<LanHost> =
        scan.hosts.iter().filter(|h| !h.is_gateway && inspector.monitored().contains(&h.mac)).cloned().collect();
    v.truncate(MAX_MONITORED);
    v
}

/// Captures until Ctrl-C, then restores every ARP binding it changed.
pub fn run(
    mut d: Discovery,
    inspector: &mut Inspector,
    queue: &mut BatchQueue,
    uploader: &mut dyn Uploader,
) -> Result<()> {
    let gateway = d.scan.gateway().cloned().ok_or_else(|| anyhow!("gateway {} did not answer the scan", d.gateway_ip))?;
    let now = Timestamp::now();
    for h in &d.scan.hosts {
        inspector.add_host(IpAddr::V4(h.ip), h.mac, now);
    }
    let control = SpoofControl::new(SpoofSet::new(gateway, spoof_targets(&d.scan, inspector))?);

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst)).context("installing Ctrl-C handler")?;
    }
    let (stop_spoofer, mut pacer) = IntervalPacer::new(SPOOF_PERIOD);
    let spoofer = {
        let control = control.clone();
        let engine = d.engine();
        let injector = d.handle.injector();
        thread::spawn(move || run_spoofer(&control, &engine, &injector, &mut pacer))
    };

    let mut send = |inspector: &mut Inspector, queue: &mut BatchQueue, b: UploadBatch| {
        if !b.is_empty() {
            queue.push(b);
        }
        match queue.flush(uploader) {
            Ok(acks) => {
                for a in &acks {
                    inspector.apply_ack(a);
                }
                if !acks.is_empty() {
                    if let Err(e) = control.set_monitored(spoof_targets(&d.scan, inspector)) {
                        tracing::warn!(error = %e, "could not update spoof set");
                    }
                }
            }
            Err(e) => tracing::warn!(error = %e, pending = queue.len(), "upload failed; keeping batches"),
        }
    };

    // TODO: rescan periodically so devices that join later can be ticked.
    let mut result = Ok(());
    while !stop.load(Ordering::SeqCst) {
        match d.handle.next_event() {
            Ok(SourceEvent::Packet(p)) => {
                if inspector.batch_due_at(p.timestamp) {
                    let b = inspector.take_batch();
                    send(inspector, queue, b);
                }
                inspector.process(&p);
            }
            Ok(SourceEvent::Idle) => {
                if inspector.batch_due_at(Timestamp::now()) {
                    let b = inspector.take_batch();
                    send(inspector, queue, b);
                }
            }
            Ok(SourceEvent::EndOfStream) => break,
            Err(e) => {
                result = Err(e.into());
                break;
            }
        }
    }
    let b = inspector.finish();
    send(inspector, queue, b);
    stop_spoofer.stop();
    let stats = spoofer.join().map_err(|_| anyhow!("spoofer thread panicked"))?;
    tracing::info!(
        periods = stats.periods,
        spoof = stats.spoof_frames,
        corrective = stats.corrective_frames,
        "spoofer stopped"
    );
    if !queue.is_empty() {
        tracing::warn!(pending = queue.len(), "exiting with batches the collector never received");
    }
    result
}
