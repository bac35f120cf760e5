use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use homescope_collector::{router, AppState};
use homescope_core::endpoints::ListDatabases;
use homescope_core::flows::{FlowKey, FlowWindow};
use homescope_core::identity::{Classification, LabelRules};
use homescope_core::parser::HintKind;
use homescope_core::privacy::DeviceId;
use homescope_core::store::Store;
use homescope_core::tls::CipherRegistry;
use homescope_core::wire::{DeviceReport, IngestAck, UploadBatch, WireDns, WireHint};
use homescope_core::{Timestamp, Transport};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use uuid::Uuid;

fn dev(n: u8) -> DeviceId {
    DeviceId::from_wire(format!("{:064x}", n))
}

fn app_at(path: &std::path::Path) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::new(
        Store::open(path).unwrap(),
        ListDatabases::bundled(),
        LabelRules::bundled(),
        CipherRegistry::bundled(),
    ));
    (router(state.clone()), state)
}

fn batch(user: Uuid) -> UploadBatch {
    let mut b = UploadBatch::new(user, Timestamp::from_secs(1000), Timestamp::from_secs(1005));
    b.devices.push(DeviceReport {
        device_id: dev(1),
        oui: "b0:a7:37".into(),
        oui_vendor: Some("Roku, Inc".into()),
        classification: Classification::SmartHome,
        monitored: true,
        last_seen: Timestamp::from_secs(1004),
    });
    b.dns_observations.push(WireDns {
        device_id: dev(1),
        query_name: "ad.doubleclick.net".into(),
        answers: vec!["203.0.113.7".parse().unwrap()],
        resolver: "192.168.1.1".parse().unwrap(),
        is_response: true,
        timestamp: Timestamp::from_secs(1000),
    });
    b.flow_windows.push(FlowWindow {
        key: FlowKey { device_id: dev(1), remote_ip: "203.0.113.7".parse().unwrap(), remote_port: 443, transport: Transport::Tcp },
        window_start: 1000,
        bytes_sent: 300,
        bytes_received: 1200,
        first_packet_ts: Timestamp::from_parts(1001, 5),
    });
    b.identity_hints.push(WireHint {
        device_id: dev(1),
        kind: HintKind::Ssdp,
        value: "SERVER: Roku/9.4.0 UPnP/1.0".into(),
        timestamp: Timestamp::from_secs(1002),
    });
    b
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, String) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    (s, serde_json::from_str(&b).unwrap_or(Value::String(b)))
}

#[tokio::test]
async fn ingest_query_label_delete() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("store.json");
    let (app, _) = app_at(&path);
    let b = batch(Uuid::new_v4());
    let id = dev(1).to_string();

    let (s, v) = json(&app, Method::POST, "/v1/batch", Some(serde_json::to_value(&b).unwrap())).await;
    assert_eq!(s, StatusCode::OK);
    let ack: IngestAck = serde_json::from_value(v).unwrap();
    assert!(!ack.duplicate);
    assert_eq!(ack.accepted.flows, 1);
    assert!(ack.rejected.is_empty());

    let (_, v) = json(&app, Method::POST, "/v1/batch", Some(serde_json::to_value(&b).unwrap())).await;
    assert!(serde_json::from_value::<IngestAck>(v).unwrap().duplicate);

    let (s, v) = json(&app, Method::POST, &format!("/v1/devices/{id}/labels"), Some(serde_json::json!({
        "name": "Roku TV", "category": "TV", "vendor": "Roku"
    })))
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((v["std_category"].as_str(), v["std_vendor"].as_str()), (Some("tv"), Some("Roku")));

    let (_, v) = json(&app, Method::GET, "/v1/devices", None).await;
    assert_eq!(v.as_array().unwrap().len(), 1);
    assert_eq!(v[0]["category"], "tv");
    assert_eq!(v[0]["vendor"], "Roku");

    let (s, v) = json(&app, Method::GET, &format!("/v1/devices/{id}/endpoints"), None).await;
    assert_eq!(s, StatusCode::OK);
    let row = &v[0];
    assert_eq!(row["display_name"], "ad.doubleclick.net");
    assert_eq!(row["confident"], true);
    assert_eq!(row["is_tracker"], true);
    assert_eq!(row["company"], "Google");
    assert_eq!((row["bytes_sent"].as_u64(), row["bytes_received"].as_u64()), (Some(300), Some(1200)));

    let (s, v) = json(&app, Method::GET, &format!("/v1/devices/{id}/bandwidth?window=5"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v[0]["points"][0]["window_start"], 1000);
    let (s, _) = call(&app, Method::GET, &format!("/v1/devices/{id}/bandwidth?window=7"), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, v) = json(&app, Method::GET, &format!("/v1/devices/{id}/validation"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 10);

    // The store file has everything so far.
    let reopened = Store::open(&path).unwrap();
    assert_eq!(reopened.data().label(&dev(1)).unwrap().std_vendor, "Roku");

    let (s, v) = json(&app, Method::DELETE, &format!("/v1/devices/{id}?only=ssdp"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["hints"], 1);
    assert_eq!(v["flows"], 0);

    let (s, v) = json(&app, Method::DELETE, &format!("/v1/devices/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((v["flows"].as_u64(), v["labels"].as_u64(), v["dns"].as_u64()), (Some(1), Some(1), Some(1)));

    let (_, v) = json(&app, Method::GET, "/v1/export", None).await;
    let files: BTreeMap<String, String> = serde_json::from_value(v).unwrap();
    assert_eq!(files.len(), 3);
    for body in files.values() {
        assert_eq!(body.lines().count(), 1, "only the header is left: {body}");
        assert!(!body.contains(&id));
    }
}

#[tokio::test]
async fn monitor_toggle_reaches_next_ack() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app_at(&dir.path().join("s.json"));
    let user = Uuid::new_v4();
    let id = dev(1).to_string();
    json(&app, Method::POST, "/v1/batch", Some(serde_json::to_value(batch(user)).unwrap())).await;

    let (s, v) = json(&app, Method::POST, &format!("/v1/devices/{id}/monitor"), Some(serde_json::json!({"monitored": false}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["monitored"], false);

    let mut next = batch(user);
    next.batch_id = Uuid::new_v4();
    next.span_start = Timestamp::from_secs(1005);
    next.span_end = Timestamp::from_secs(1010);
    next.flow_windows.clear();
    let (_, v) = json(&app, Method::POST, "/v1/batch", Some(serde_json::to_value(&next).unwrap())).await;
    let ack: IngestAck = serde_json::from_value(v).unwrap();
    assert_eq!(ack.monitor.get(&dev(1)), Some(&false));
}

#[tokio::test]
async fn export_single_file_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app_at(&dir.path().join("s.json"));
    json(&app, Method::POST, "/v1/batch", Some(serde_json::to_value(batch(Uuid::new_v4())).unwrap())).await;

    let (s, body) = call(&app, Method::GET, "/v1/export?file=Network_flows.csv", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(body.starts_with("device_id,first_packet_ts,remote_host,remote_port,protocol,bytes_sent,bytes_received\r\n"));
    assert!(body.contains(",ad.doubleclick.net,443,TCP,300,1200\r\n"), "{body}");
    let (s, _) = call(&app, Method::GET, "/v1/export?file=secrets.csv", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    for kind in ["tls-hygiene", "http-vs-tls", "trackers", "control-platforms", "hardcoded-dns"] {
        let (s, _) = call(&app, Method::GET, &format!("/v1/reports/{kind}?format=csv"), None).await;
        assert_eq!(s, StatusCode::OK, "{kind}");
    }
    let (s, v) = json(&app, Method::GET, "/v1/reports/hardcoded-dns?dhcp_resolver=192.168.1.1", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v.is_array());
    let (s, _) = call(&app, Method::GET, "/v1/reports/nope", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::GET, "/v1/reports/trackers?format=xml", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _) = app_at(&dir.path().join("s.json"));

    let (s, _) = call(&app, Method::GET, "/v1/devices/not-a-hash/endpoints", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, Method::GET, &format!("/v1/devices/{}/endpoints", dev(7)), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, Method::POST, "/v1/batch", Some(serde_json::json!({"batch_id": 3}))).await;
    assert!(s.is_client_error());

    let mut long = batch(Uuid::new_v4());
    long.span_end = Timestamp::from_secs(1100);
    let (s, _) = call(&app, Method::POST, "/v1/batch", Some(serde_json::to_value(&long).unwrap())).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    json(&app, Method::POST, "/v1/batch", Some(serde_json::to_value(batch(Uuid::new_v4())).unwrap())).await;
    let uri = format!("/v1/devices/{}/labels", dev(1));
    let (s, _) = call(&app, Method::POST, &uri, Some(serde_json::json!({"name": "thing"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, Method::DELETE, &format!("/v1/devices/{}?only=mdns", dev(1)), None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, v) = json(&app, Method::GET, "/v1/labels/vocabulary", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["categories"].as_array().unwrap().len(), 12);
    assert!(v["vendors"].as_array().unwrap().iter().any(|x| x == "Roku"));
}

#[tokio::test]
async fn empty_batch_acks_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (app, state) = app_at(&dir.path().join("s.json"));
    let b = UploadBatch::new(Uuid::new_v4(), Timestamp::from_secs(5), Timestamp::from_secs(10));
    let (s, v) = json(&app, Method::POST, "/v1/batch", Some(serde_json::to_value(&b).unwrap())).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(serde_json::from_value::<IngestAck>(v).unwrap().accepted.total(), 0);
    assert!(state.read(|d| d.devices.is_empty()));
}
