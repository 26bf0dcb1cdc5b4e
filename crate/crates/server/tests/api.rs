use std::path::Path;
use std::time::Duration;

use amr_core::billing::Tariff;
use amr_core::headend::Store;
use amr_core::scenario::Scenario;
use amr_core::system::System;
use amr_server::payload::*;
use amr_server::{start, Running, ServerConfig, SimOptions, StreamEvent};
use futures_util::StreamExt;
use reqwest::StatusCode;
use serde_json::Value;

const THREE: &str = r#"
name = "three"
seed = 7
duration = 10.0

[link]
preset = "wimax"
loss_prob = 0.0

[meters]
count = 3
placement = { kind = "grid", spacing = 50.0 }

[workload]
kind = "constant"
rate_hz = 2.0
"#;

fn scenario(text: &str) -> Scenario {
    Scenario::parse(text, Path::new(".")).unwrap()
}

async fn serve(sc: &Scenario, store: Store, time_scale: f64) -> (Running, String) {
    let system = System::new(sc.system_config(false).unwrap(), store);
    let config = ServerConfig {
        system,
        tariff: Tariff::fixture(),
        summary: sc.summary(),
        options: SimOptions {
            time_scale,
            ..SimOptions::default()
        },
        retain: 10_000,
    };
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let running = start(listener, config).await.unwrap();
    let base = format!("http://{}", running.local_addr());
    (running, base)
}

async fn error_of(resp: reqwest::Response) -> (StatusCode, ErrorDetail) {
    let status = resp.status();
    let body: ErrorBody = resp.json().await.unwrap();
    assert!(!body.error.correlation_id.is_empty());
    (status, body.error)
}

fn http() -> reqwest::Client {
    reqwest::Client::new()
}

#[tokio::test]
async fn health_reports_the_scenario() {
    let sc = scenario(THREE);
    let (srv, base) = serve(&sc, Store::in_memory(), 0.0).await;
    let h: Health = http()
        .get(format!("{base}/api/health"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.scenario, sc.summary());
    assert_eq!(h.state.meters, 3);
    assert_eq!(h.state.sim_time, 0.0);
    srv.shutdown().await.unwrap();
}

#[tokio::test]
async fn list_meters_on_a_three_meter_scenario() {
    let (srv, base) = serve(&scenario(THREE), Store::in_memory(), 0.0).await;
    let c = http();
    let m: MetersResponse = c
        .get(format!("{base}/api/meters"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(m.meters.iter().map(|x| x.address).collect::<Vec<_>>(), [1, 2, 3]);
    assert!(m
        .meters
        .iter()
        .all(|x| x.last_reading.is_none() && x.reachable.is_none()));
    let s: SweepResponse = c
        .post(format!("{base}/api/sweep"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!((s.report.requested, s.report.read_count), (3, 3));
    let m: MetersResponse = c
        .get(format!("{base}/api/meters"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(m
        .meters
        .iter()
        .all(|x| x.last_reading.is_some() && x.reachable == Some(true)));
    srv.shutdown().await.unwrap();
}

#[tokio::test]
async fn read_is_visible_in_history() {
    let (srv, base) = serve(&scenario(THREE), Store::in_memory(), 0.0).await;
    let c = http();
    c.post(format!("{base}/api/advance"))
        .json(&AdvanceRequest { seconds: 3.0 })
        .send()
        .await
        .unwrap();
    let r: ReadResponse = c
        .post(format!("{base}/api/meters/0x2/read"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(r.record.address, 2);
    assert_eq!(r.record.attempt_count, 1);
    assert!(r.record.sim_time > 3.0);
    let h: HistoryResponse = c
        .get(format!("{base}/api/meters/2/history?from=0&to=100"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(h.records, vec![r.record.clone()]);
    let empty: HistoryResponse = c
        .get(format!("{base}/api/meters/2/history?to=1"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(empty.records.is_empty());
    srv.shutdown().await.unwrap();
}

#[tokio::test]
async fn errors_are_structured() {
    let (srv, base) = serve(&scenario(THREE), Store::in_memory(), 0.0).await;
    let c = http();
    let (st, e) = error_of(c.post(format!("{base}/api/meters/99/read")).send().await.unwrap()).await;
    assert_eq!((st, e.code.as_str()), (StatusCode::NOT_FOUND, "NOT_REGISTERED"));
    let (st, e) = error_of(c.post(format!("{base}/api/meters/zz/read")).send().await.unwrap()).await;
    assert_eq!((st, e.code.as_str()), (StatusCode::BAD_REQUEST, "BAD_REQUEST"));
    let (st, e) = error_of(c.get(format!("{base}/api/nope")).send().await.unwrap()).await;
    assert_eq!((st, e.code.as_str()), (StatusCode::NOT_FOUND, "NOT_FOUND"));
    let (st, e) = error_of(c.get(format!("{base}/api/sweep")).send().await.unwrap()).await;
    assert_eq!(
        (st, e.code.as_str()),
        (StatusCode::METHOD_NOT_ALLOWED, "METHOD_NOT_ALLOWED")
    );
    let resp = c
        .post(format!("{base}/api/meters/1/bill"))
        .header("content-type", "application/json")
        .body("{\"t_start\": 1")
        .send()
        .await
        .unwrap();
    assert!(resp.headers().contains_key(amr_server::api::CORRELATION_HEADER));
    let (st, e) = error_of(resp).await;
    assert_eq!((st, e.code.as_str()), (StatusCode::BAD_REQUEST, "BAD_REQUEST"));
    let (st, _) = error_of(
        c.get(format!("{base}/api/meters/1/history?from=5&to=1"))
            .send()
            .await
            .unwrap(),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, e) = error_of(
        c.post(format!("{base}/api/sweep"))
            .body("{\"addresses\": [1, 1]}")
            .send()
            .await
            .unwrap(),
    )
    .await;
    assert_eq!((st, e.code.as_str()), (StatusCode::BAD_REQUEST, "BAD_REQUEST"));
    let (st, e) = error_of(c.get(format!("{base}/api/meters/42/history")).send().await.unwrap()).await;
    assert_eq!((st, e.code.as_str()), (StatusCode::NOT_FOUND, "NOT_REGISTERED"));
    srv.shutdown().await.unwrap();
}

#[tokio::test]
async fn total_loss_gives_unreachable() {
    let text = THREE.replace("loss_prob = 0.0", "loss_prob = 1.0");
    let (srv, base) = serve(&scenario(&text), Store::in_memory(), 0.0).await;
    let c = http();
    let (st, e) = error_of(c.post(format!("{base}/api/meters/1/read")).send().await.unwrap()).await;
    assert_eq!((st, e.code.as_str()), (StatusCode::GATEWAY_TIMEOUT, "UNREACHABLE"));
    let a: AnomaliesResponse = c
        .get(format!("{base}/api/anomalies?address=1"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(a.anomalies.len(), 1);
    assert_eq!(serde_json::to_value(&a.anomalies[0]).unwrap()["kind"], "UNREACHABLE");
    let m: MetersResponse = c
        .get(format!("{base}/api/meters"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(m.meters[0].reachable, Some(false));
    srv.shutdown().await.unwrap();
}

#[tokio::test]
async fn bills_use_stored_readings() {
    let (srv, base) = serve(&scenario(THREE), Store::in_memory(), 0.0).await;
    let c = http();
    let bill = |t_start: f64, t_end: f64| {
        c.post(format!("{base}/api/meters/1/bill"))
            .json(&BillRequest { t_start, t_end })
            .send()
    };
    let (st, e) = error_of(bill(0.0, 10.0).await.unwrap()).await;
    assert_eq!((st, e.code.as_str()), (StatusCode::UNPROCESSABLE_ENTITY, "NO_BASELINE"));
    let first: ReadResponse = c
        .post(format!("{base}/api/meters/1/read"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    c.post(format!("{base}/api/advance"))
        .json(&AdvanceRequest { seconds: 30.0 })
        .send()
        .await
        .unwrap();
    let second: ReadResponse = c
        .post(format!("{base}/api/meters/1/read"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let b: BillResponse = bill(first.record.sim_time, second.record.sim_time)
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(b.bill.start_reading.register, first.record.register);
    assert_eq!(b.bill.end_reading.register, second.record.register);
    assert_eq!(
        b.bill.consumption_pulses,
        u64::from(second.record.register - first.record.register)
    );
    let list: BillsResponse = c
        .get(format!("{base}/api/bills?address=1"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(list.bills, vec![b.bill]);
    let (st, e) = error_of(bill(5.0, 1.0).await.unwrap()).await;
    assert_eq!((st, e.code.as_str()), (StatusCode::BAD_REQUEST, "INVALID_PERIOD"));
    srv.shutdown().await.unwrap();
}

/// Minimal SSE reader: yields `(id, event, data)` per message.
struct SseReader {
    stream: std::pin::Pin<Box<dyn futures_util::Stream<Item = reqwest::Result<axum::body::Bytes>> + Send>>,
    buf: String,
}

impl SseReader {
    async fn open(base: &str, last_id: Option<u64>) -> Self {
        let mut req = http().get(format!("{base}/api/events"));
        if let Some(id) = last_id {
            req = req.header("Last-Event-ID", id.to_string());
        }
        let resp = req.send().await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        assert!(resp.headers()["content-type"]
            .to_str()
            .unwrap()
            .starts_with("text/event-stream"));
        Self {
            stream: Box::pin(resp.bytes_stream()),
            buf: String::new(),
        }
    }

    async fn next(&mut self) -> (Option<u64>, String, String) {
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let block: String = self.buf.drain(..end + 2).collect();
                let (mut id, mut event, mut data) = (None, String::new(), String::new());
                for line in block.lines() {
                    if let Some(v) = line.strip_prefix("id:") {
                        id = Some(v.trim().parse().unwrap());
                    } else if let Some(v) = line.strip_prefix("event:") {
                        event = v.trim().to_string();
                    } else if let Some(v) = line.strip_prefix("data:") {
                        data.push_str(v.trim_start());
                    }
                }
                if event.is_empty() && data.is_empty() {
                    continue;
                }
                return (id, event, data);
            }
            let chunk = tokio::time::timeout(Duration::from_secs(10), self.stream.next())
                .await
                .expect("event within 10 s")
                .expect("stream open")
                .unwrap();
            self.buf
                .push_str(&String::from_utf8_lossy(&chunk).replace("\r\n", "\n"));
        }
    }

    async fn next_event(&mut self) -> StreamEvent {
        let (id, event, data) = self.next().await;
        let ev: StreamEvent = serde_json::from_str(&data).unwrap();
        assert_eq!(id, Some(ev.id));
        assert_eq!(event, ev.kind());
        ev
    }
}

#[tokio::test]
async fn event_stream_is_ordered_and_resumable() {
    let text = THREE.replace("count = 3", "count = 10");
    let (srv, base) = serve(&scenario(&text), Store::in_memory(), 0.0).await;
    let mut live = SseReader::open(&base, None).await;
    let c = http();
    let s: SweepResponse = c
        .post(format!("{base}/api/sweep"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(s.report.read_count, 10);
    let mut seen = Vec::new();
    for _ in 0..11 {
        seen.push(live.next_event().await);
    }
    assert_eq!(
        seen.iter().map(|e| e.id).collect::<Vec<_>>(),
        (1..=11).collect::<Vec<_>>()
    );
    let addrs: Vec<u32> = seen[..10]
        .iter()
        .map(|e| match &e.notification {
            amr_core::headend::Notification::Reading { record } => record.address,
            other => panic!("{other:?}"),
        })
        .collect();
    assert_eq!(addrs, (1..=10).collect::<Vec<_>>());
    assert_eq!(seen[10].kind(), "sweep_completed");

    // Reconnect after event 4: exactly events 5..=11 come back, then live.
    let mut resumed = SseReader::open(&base, Some(4)).await;
    for want in 5..=11 {
        assert_eq!(resumed.next_event().await, seen[want as usize - 1]);
    }
    c.post(format!("{base}/api/meters/3/read")).send().await.unwrap();
    let next = resumed.next_event().await;
    assert_eq!(next.id, 12);
    assert_eq!(live.next_event().await, next);

    // `since` works the same way for clients without headers.
    let r = c.get(format!("{base}/api/events?since=11")).send().await.unwrap();
    let mut q = SseReader {
        stream: Box::pin(r.bytes_stream()),
        buf: String::new(),
    };
    assert_eq!(q.next_event().await.id, 12);

    // An id from an earlier run resets the stream.
    let mut stale = SseReader::open(&base, Some(500)).await;
    let (_, event, data) = stale.next().await;
    assert_eq!(event, "reset");
    assert_eq!(serde_json::from_str::<Value>(&data).unwrap()["last_event_id"], 12);
    assert_eq!(stale.next_event().await.id, 1);
    srv.shutdown().await.unwrap();
}

#[tokio::test]
async fn injected_reverse_pulse_is_flagged_on_next_read() {
    let (srv, base) = serve(&scenario(THREE), Store::in_memory(), 0.0).await;
    let c = http();
    c.post(format!("{base}/api/meters/2/read")).send().await.unwrap();
    let f: FaultResponse = c
        .post(format!("{base}/api/meters/2/faults"))
        .json(&serde_json::json!({"action": "reverse_pulse"}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(f.address, 2);
    let r: ReadResponse = c
        .post(format!("{base}/api/meters/2/read"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let v = serde_json::to_value(&r.record).unwrap();
    assert!(v["status_flags"].as_str().unwrap().contains("TAMPER_REVERSE"), "{v}");
    let a: AnomaliesResponse = c
        .get(format!("{base}/api/anomalies"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    let kinds: Vec<Value> = a
        .anomalies
        .iter()
        .map(|x| serde_json::to_value(x).unwrap()["kind"].clone())
        .collect();
    assert_eq!(kinds, vec![Value::from("TAMPER_FLAGGED")]);
    let (st, e) = error_of(
        c.post(format!("{base}/api/meters/2/faults"))
            .json(&serde_json::json!({"action": "explode"}))
            .send()
            .await
            .unwrap(),
    )
    .await;
    assert_eq!((st, e.code.as_str()), (StatusCode::BAD_REQUEST, "BAD_REQUEST"));
    srv.shutdown().await.unwrap();
}

#[tokio::test]
async fn csv_export_lists_readings() {
    let (srv, base) = serve(&scenario(THREE), Store::in_memory(), 0.0).await;
    let c = http();
    c.post(format!("{base}/api/sweep")).send().await.unwrap();
    let resp = c.get(format!("{base}/api/export/readings.csv")).send().await.unwrap();
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/csv"));
    let text = resp.text().await.unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "address,sim_time,register,energy_kwh,flags");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("00000001,"));
    srv.shutdown().await.unwrap();
}

#[tokio::test]
async fn concurrent_reads_are_serialized() {
    let text = THREE.replace("count = 3", "count = 20");
    let (srv, base) = serve(&scenario(&text), Store::in_memory(), 0.0).await;
    let c = http();
    let reads = (1..=20).map(|a| {
        let c = c.clone();
        let url = format!("{base}/api/meters/{a}/read");
        async move { c.post(url).send().await.unwrap().json::<ReadResponse>().await.unwrap() }
    });
    let got = futures_util::future::join_all(reads).await;
    assert!(got.iter().all(|r| r.record.attempt_count == 1));
    let h: Health = c
        .get(format!("{base}/api/health"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!((h.state.readings, h.state.stats.polls_sent), (20, 20));
    srv.shutdown().await.unwrap();
}

#[tokio::test]
async fn clock_follows_wall_time_when_paced() {
    let (srv, base) = serve(&scenario(THREE), Store::in_memory(), 20.0).await;
    tokio::time::sleep(Duration::from_millis(400)).await;
    let h: Health = http()
        .get(format!("{base}/api/health"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(h.state.sim_time > 2.0, "{}", h.state.sim_time);
    srv.shutdown().await.unwrap();
}

#[tokio::test]
async fn restart_and_query_after_shutdown() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario(THREE);
    let (srv, base) = serve(&sc, Store::open(dir.path()).unwrap(), 0.0).await;
    let c = http();
    let mut stream = SseReader::open(&base, None).await;
    let s: SweepResponse = c
        .post(format!("{base}/api/sweep"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(s.report.read_count, 3);
    stream.next_event().await;
    let before: HistoryResponse = c
        .get(format!("{base}/api/meters/3/history"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    // Shutdown must also end the open event stream.
    tokio::time::timeout(Duration::from_secs(10), srv.shutdown())
        .await
        .unwrap()
        .unwrap();
    assert!(dir.path().join(amr_core::headend::SNAPSHOT_FILE).exists());

    let (srv, base) = serve(&sc, Store::open(dir.path()).unwrap(), 0.0).await;
    let after: HistoryResponse = c
        .get(format!("{base}/api/meters/3/history"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(after, before);
    let h: Health = c
        .get(format!("{base}/api/health"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(h.state.readings, 3);
    assert_eq!(h.state.sim_time, before.records[0].sim_time);
    let again: ReadResponse = c
        .post(format!("{base}/api/meters/3/read"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(again.record.sim_time > before.records[0].sim_time);
    assert_ne!(again.record.seq, before.records[0].seq);
    srv.shutdown().await.unwrap();
}
