//! HTTP routes. JSON in and out, except the CSV export and the event
//! stream.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | GET | `/api/health` | | [`Health`] |
//! | GET | `/api/meters` | | [`MetersResponse`] |
//! | POST | `/api/meters/{address}/read` | | [`ReadResponse`] |
//! | GET | `/api/meters/{address}/history` | `from`, `to` | [`HistoryResponse`] |
//! | POST | `/api/meters/{address}/bill` | [`BillRequest`] | [`BillResponse`] |
//! | POST | `/api/meters/{address}/faults` | [`FaultRequest`] | [`FaultResponse`] |
//! | GET | `/api/anomalies` | `address`, `from`, `to` | [`AnomaliesResponse`] |
//! | GET | `/api/bills` | `address` | [`BillsResponse`] |
//! | POST | `/api/sweep` | [`SweepRequest`], optional | [`SweepResponse`] |
//! | POST | `/api/advance` | [`AdvanceRequest`] | [`AdvanceResponse`] |
//! | GET | `/api/export/readings.csv` | `address` | `text/csv` |
//! | GET | `/api/events` | `since` or `Last-Event-ID` | `text/event-stream` |
//!
//! Addresses are decimal or `0x` hex. Errors carry an [`ErrorBody`]:
//!
//! | status | code |
//! |---|---|
//! | 400 | `BAD_REQUEST`, `INVALID_PERIOD` |
//! | 404 | `NOT_REGISTERED`, `NOT_FOUND` |
//! | 405 | `METHOD_NOT_ALLOWED` |
//! | 422 | `NO_BASELINE`, `BILLING_ANOMALY`, `BILLING_ERROR` |
//! | 500 | `INTERNAL` |
//! | 504 | `UNREACHABLE` |
//!
//! Each stream message has `id` (the event id), `event` (the notification
//! type: `reading`, `anomaly`, `sweep_completed` or `bill`) and `data` (a
//! [`StreamEvent`] as JSON). Two control messages may appear first:
//! `gap` with `{"from","to"}` when requested ids have aged out, and `reset`
//! when the client's last id comes from an earlier server run.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use amr_core::headend::ReadError;
use amr_core::protocol::parse_address;
use amr_core::scenario::ScenarioSummary;
use amr_core::system::FaultAction;
use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::Stream;
use serde::Deserialize;
use tokio::sync::{broadcast, watch};

use crate::hub::{Hub, Replay, StreamEvent};
use crate::payload::*;
use crate::sim::{SimFailure, SimHandle};

pub const CORRELATION_HEADER: &str = "x-correlation-id";

#[derive(Clone)]
pub struct AppState {
    pub sim: SimHandle,
    pub hub: Arc<Hub>,
    pub summary: Arc<ScenarioSummary>,
    /// Flips to `true` on shutdown so open event streams end.
    pub stopping: watch::Receiver<bool>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BAD_REQUEST", message)
    }
}

impl From<SimFailure> for ApiError {
    fn from(f: SimFailure) -> Self {
        use amr_core::headend::SweepError;
        let message = f.to_string();
        let (status, code) = match &f {
            SimFailure::Read(ReadError::NotRegistered(_))
            | SimFailure::Sweep(SweepError::NotRegistered(_))
            | SimFailure::NotRegistered(_) => (StatusCode::NOT_FOUND, "NOT_REGISTERED"),
            SimFailure::Read(ReadError::Unreachable { .. }) => (StatusCode::GATEWAY_TIMEOUT, "UNREACHABLE"),
            SimFailure::Sweep(_) | SimFailure::Invalid(_) => (StatusCode::BAD_REQUEST, "BAD_REQUEST"),
            SimFailure::Billing(b) => match b.code() {
                "INVALID_PERIOD" => (StatusCode::BAD_REQUEST, "INVALID_PERIOD"),
                code => (StatusCode::UNPROCESSABLE_ENTITY, code),
            },
            SimFailure::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL"),
        };
        Self::new(status, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let id = uuid::Uuid::new_v4().to_string();
        if self.status.is_server_error() {
            tracing::error!(correlation_id = %id, code = self.code, "{}", self.message);
        } else {
            tracing::debug!(correlation_id = %id, code = self.code, "{}", self.message);
        }
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code.to_string(),
                message: self.message,
                correlation_id: id.clone(),
            },
        };
        let mut resp = (self.status, Json(body)).into_response();
        if let Ok(v) = HeaderValue::from_str(&id) {
            resp.headers_mut().insert(CORRELATION_HEADER, v);
        }
        resp
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn address(raw: &str) -> Result<u32, ApiError> {
    parse_address(raw).map_err(ApiError::bad_request)
}

fn json<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(b)| b).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(q)| q).map_err(|e| ApiError::bad_request(e.body_text()))
}

#[derive(Debug, Default, Deserialize)]
struct RangeQuery {
    address: Option<String>,
    from: Option<f64>,
    to: Option<f64>,
}

impl RangeQuery {
    fn bounds(&self) -> Result<(f64, f64), ApiError> {
        let from = self.from.unwrap_or(f64::NEG_INFINITY);
        let to = self.to.unwrap_or(f64::INFINITY);
        if from.is_nan() || to.is_nan() || from > to {
            return Err(ApiError::bad_request(format!("bad time range from={from} to={to}")));
        }
        Ok((from, to))
    }

    fn address(&self) -> Result<Option<u32>, ApiError> {
        self.address.as_deref().map(address).transpose()
    }
}

#[derive(Debug, Default, Deserialize)]
struct EventsQuery {
    since: Option<u64>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/meters", get(meters))
        .route("/api/meters/{address}/read", post(read))
        .route("/api/meters/{address}/history", get(history))
        .route("/api/meters/{address}/bill", post(bill))
        .route("/api/meters/{address}/faults", post(fault))
        .route("/api/anomalies", get(anomalies))
        .route("/api/bills", get(bills))
        .route("/api/sweep", post(sweep))
        .route("/api/advance", post(advance))
        .route("/api/export/readings.csv", get(export_csv))
        .route("/api/events", get(events))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "NOT_FOUND", "no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(
                StatusCode::METHOD_NOT_ALLOWED,
                "METHOD_NOT_ALLOWED",
                "method not allowed on this endpoint",
            )
        })
        .with_state(state)
}

async fn health(State(s): State<AppState>) -> ApiResult<Health> {
    let state = s.sim.status().await?;
    Ok(Json(Health {
        status: if state.fault.is_some() { "faulted" } else { "ok" }.to_string(),
        scenario: (*s.summary).clone(),
        state,
        last_event_id: s.hub.last_id(),
    }))
}

async fn meters(State(s): State<AppState>) -> ApiResult<MetersResponse> {
    Ok(Json(MetersResponse {
        meters: s.sim.meters().await?,
    }))
}

async fn read(State(s): State<AppState>, Path(raw): Path<String>) -> ApiResult<ReadResponse> {
    let record = s.sim.read(address(&raw)?).await?;
    Ok(Json(ReadResponse { record }))
}

async fn history(
    State(s): State<AppState>,
    Path(raw): Path<String>,
    q: Result<Query<RangeQuery>, QueryRejection>,
) -> ApiResult<HistoryResponse> {
    let a = address(&raw)?;
    let (from, to) = query(q)?.bounds()?;
    Ok(Json(HistoryResponse {
        address: a,
        records: s.sim.history(a, from, to).await?,
    }))
}

async fn bill(
    State(s): State<AppState>,
    Path(raw): Path<String>,
    body: Result<Json<BillRequest>, JsonRejection>,
) -> ApiResult<BillResponse> {
    let a = address(&raw)?;
    let req = json(body)?;
    if !(req.t_start.is_finite() && req.t_end.is_finite()) {
        return Err(ApiError::bad_request("t_start and t_end must be finite"));
    }
    Ok(Json(BillResponse {
        bill: s.sim.bill(a, req.t_start, req.t_end).await?,
    }))
}

async fn fault(
    State(s): State<AppState>,
    Path(raw): Path<String>,
    body: Result<Json<FaultRequest>, JsonRejection>,
) -> ApiResult<FaultResponse> {
    let a = address(&raw)?;
    let req = json(body)?;
    let action = FaultAction::from_parts(&req.action, req.value).map_err(ApiError::bad_request)?;
    let fires_at = s.sim.inject(a, action, req.delay).await?;
    Ok(Json(FaultResponse {
        address: a,
        action: req.action,
        fires_at,
    }))
}

async fn anomalies(
    State(s): State<AppState>,
    q: Result<Query<RangeQuery>, QueryRejection>,
) -> ApiResult<AnomaliesResponse> {
    let q = query(q)?;
    let (from, to) = q.bounds()?;
    Ok(Json(AnomaliesResponse {
        anomalies: s.sim.anomalies(q.address()?, from, to).await?,
    }))
}

async fn bills(State(s): State<AppState>, q: Result<Query<RangeQuery>, QueryRejection>) -> ApiResult<BillsResponse> {
    let a = query(q)?.address()?;
    Ok(Json(BillsResponse {
        bills: s.sim.bills(a).await?,
    }))
}

async fn sweep(State(s): State<AppState>, body: Bytes) -> ApiResult<SweepResponse> {
    let req: SweepRequest = if body.iter().all(u8::is_ascii_whitespace) {
        SweepRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid sweep request: {e}")))?
    };
    Ok(Json(SweepResponse {
        report: s.sim.sweep(req.addresses).await?,
    }))
}

async fn advance(
    State(s): State<AppState>,
    body: Result<Json<AdvanceRequest>, JsonRejection>,
) -> ApiResult<AdvanceResponse> {
    let req = json(body)?;
    Ok(Json(AdvanceResponse {
        sim_time: s.sim.advance(req.seconds).await?,
    }))
}

async fn export_csv(
    State(s): State<AppState>,
    q: Result<Query<RangeQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let a = query(q)?.address()?;
    let body = s.sim.export_csv(a).await?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response())
}

/// `Last-Event-ID` wins over `since`: browsers resend the original URL
/// when they reconnect.
fn resume_point(headers: &HeaderMap, q: &EventsQuery) -> Result<u64, ApiError> {
    match headers.get("last-event-id") {
        Some(v) => v
            .to_str()
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| ApiError::bad_request("Last-Event-ID must be an event id")),
        None => Ok(q.since.unwrap_or(0)),
    }
}

fn sse_event(ev: &StreamEvent) -> Event {
    let data = serde_json::to_string(ev).expect("stream events serialize");
    Event::default().id(ev.id.to_string()).event(ev.kind()).data(data)
}

struct Feed {
    items: VecDeque<Event>,
    rx: broadcast::Receiver<Arc<StreamEvent>>,
    last: u64,
    hub: Arc<Hub>,
    stopping: watch::Receiver<bool>,
}

impl Feed {
    fn queue_replay(&mut self, replay: Replay) {
        if replay.reset {
            let data = serde_json::json!({ "last_event_id": self.hub.last_id() }).to_string();
            self.items.push_back(Event::default().event("reset").data(data));
            self.last = 0;
        }
        if let Some((from, to)) = replay.gap {
            let data = serde_json::json!({ "from": from, "to": to }).to_string();
            self.items
                .push_back(Event::default().id(to.to_string()).event("gap").data(data));
        }
        for ev in replay.events {
            if ev.id > self.last {
                self.last = ev.id;
                self.items.push_back(sse_event(&ev));
            }
        }
    }

    async fn next(mut self) -> Option<(Result<Event, Infallible>, Self)> {
        loop {
            if *self.stopping.borrow() {
                return None;
            }
            if let Some(e) = self.items.pop_front() {
                return Some((Ok(e), self));
            }
            let got = tokio::select! {
                r = self.rx.recv() => r,
                _ = self.stopping.changed() => return None,
            };
            match got {
                Ok(ev) if ev.id > self.last => {
                    self.last = ev.id;
                    return Some((Ok(sse_event(&ev)), self));
                }
                Ok(_) => {}
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    let replay = self.hub.replay(self.last);
                    self.queue_replay(replay);
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    }
}

async fn events(
    State(s): State<AppState>,
    headers: HeaderMap,
    q: Result<Query<EventsQuery>, QueryRejection>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let after = resume_point(&headers, &query(q)?)?;
    let (replay, rx) = s.hub.subscribe(after);
    let mut feed = Feed {
        items: VecDeque::new(),
        rx,
        last: after,
        hub: s.hub.clone(),
        stopping: s.stopping.clone(),
    };
    feed.queue_replay(replay);
    let stream = futures_util::stream::unfold(feed, Feed::next);
    Ok(Sse::new(stream).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}
