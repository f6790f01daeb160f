use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use grainledger::digest::Digest;
use grainledger::doc::Doc;
use grainledger::grain::{registries, trace_lot_provenance, GrainError};
use grainledger::ledger::LedgerView;
use grainledger::network::{EndorseError, SubmitError};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;
use tower_http::services::ServeDir;

use crate::error::ApiError;
use crate::host::{NodeHost, Session};

type AppState = Arc<NodeHost>;

pub fn router(host: AppState) -> Router {
    let mut app = Router::new()
        .route("/healthz", get(healthz))
        .route("/auth/login", post(login))
        .route("/transactions", post(submit))
        .route("/transactions/{tx_id}", get(transaction))
        .route("/assets/{registry}", get(list_assets))
        .route("/assets/{registry}/{*key}", get(get_asset))
        .route("/provenance/lots/{lot_id}", get(provenance))
        .route("/receipts/{invoice}", get(receipt))
        .route("/events/stream", get(events))
        .route("/ui/config.json", get(ui_config));
    if let Some(dir) = &host.settings.ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    app.with_state(host)
}

fn bearer(parts: &Parts) -> Option<String> {
    let value = parts.headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    value.strip_prefix("Bearer ").map(|t| t.trim().to_string())
}

fn query_token(parts: &Parts) -> Option<String> {
    let q = parts.uri.query()?;
    q.split('&').find_map(|kv| kv.strip_prefix("token=")).map(str::to_string)
}

impl FromRequestParts<AppState> for Session {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, host: &AppState) -> Result<Self, Self::Rejection> {
        // EventSource cannot set headers, so the stream also takes ?token=.
        let token = bearer(parts)
            .or_else(|| (parts.uri.path() == "/events/stream").then(|| query_token(parts)).flatten())
            .ok_or_else(|| ApiError::unauthorized("missing bearer token"))?;
        host.session(&token).ok_or_else(|| ApiError::unauthorized("unknown or expired token"))
    }
}

async fn healthz(State(host): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "node_id": host.node_id() }))
}

#[derive(Deserialize)]
struct LoginRequest {
    username: String,
    password: String,
}

#[derive(Serialize)]
struct LoginResponse {
    token: String,
    role: grainledger::identity::Role,
    participant_id: String,
    expires_at: u64,
}

async fn login(State(host): State<AppState>, Json(req): Json<LoginRequest>) -> Result<Json<LoginResponse>, ApiError> {
    let cred = host
        .credentials()
        .verify(&req.username, &req.password)
        .ok_or_else(|| ApiError::unauthorized("bad credentials"))?;
    let pid = cred.participant_id.clone();
    let role = host.with_network(|net| {
        let view = net.peer(host.node_id()).expect("host node exists").governance();
        let p = view.membership.participant(&pid).map(|p| p.role);
        (p, view.membership.is_revoked(&pid) || view.membership.active_identity(&pid).is_none())
    });
    match role {
        (None, _) => Err(ApiError::unauthorized("bad credentials")),
        (Some(_), true) => Err(ApiError::new(StatusCode::LOCKED, "IdentityRevoked", format!("identity of {pid} is revoked"))),
        (Some(role), false) => {
            let s = host.create_session(&pid, role);
            Ok(Json(LoginResponse { token: s.token, role, participant_id: pid, expires_at: s.expires_at }))
        }
    }
}

#[derive(Deserialize)]
struct SubmitRequest {
    contract_id: String,
    operation: String,
    #[serde(default)]
    args: serde_json::Value,
    #[serde(default)]
    channel_id: Option<String>,
}

async fn submit(
    State(host): State<AppState>,
    session: Session,
    Json(req): Json<SubmitRequest>,
) -> Result<impl IntoResponse, ApiError> {
    let client = host
        .client(&session.participant_id)
        .ok_or_else(|| ApiError::forbidden(format!("no signing identity for {} on this node", session.participant_id)))?
        .clone();
    let args = if req.args.is_null() { Doc::map() } else { Doc::try_from(req.args).map_err(|e| ApiError::bad_request(e.to_string()))? };
    let channel = req.channel_id.unwrap_or_else(|| host.settings.default_channel.clone());
    let result = host.with_network(|net| {
        if net.peer(host.node_id()).and_then(|p| p.ledger(&channel)).is_none() {
            return Err(channel_error(net, host.node_id(), &channel));
        }
        net.invoke(host.node_id(), &client, &channel, &req.contract_id, &req.operation, args)
            .map_err(submit_error)
    })?;
    if let Some(reason) = result.abort {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "ContractAbort", reason).with_tx(result.tx_id));
    }
    Ok((StatusCode::ACCEPTED, Json(serde_json::json!({ "tx_id": result.tx_id, "status": "PENDING" }))))
}

fn submit_error(e: SubmitError) -> ApiError {
    let msg = e.to_string();
    match e {
        SubmitError::Endorse(EndorseError::AclDenied(_)) => ApiError::new(StatusCode::FORBIDDEN, "AclDenied", msg),
        SubmitError::Endorse(EndorseError::NotChannelMember { .. }) => ApiError::forbidden(msg),
        SubmitError::Endorse(EndorseError::Unauthorized(_)) => ApiError::new(StatusCode::FORBIDDEN, "Unauthorized", msg),
        SubmitError::Endorse(EndorseError::SimulationFailed(_)) => ApiError::bad_request(msg),
        SubmitError::EndorsementMismatch(_) => ApiError::new(StatusCode::CONFLICT, "EndorsementMismatch", msg),
        SubmitError::PolicyNotMet(_) => ApiError::new(StatusCode::CONFLICT, "PolicyNotMet", msg),
        SubmitError::UnknownChannel(_) | SubmitError::UnknownNode(_) => ApiError::not_found(msg),
    }
}

/// 403 for a channel that exists but is not replicated here, else 404.
fn channel_error(net: &grainledger::network::Network, node: &str, channel: &str) -> ApiError {
    let known = net.peer(node).is_some_and(|p| p.governance().channels.contains_key(channel));
    if known {
        ApiError::forbidden(format!("{node} is not a member of channel {channel}"))
    } else {
        ApiError::not_found(format!("unknown channel {channel}"))
    }
}

async fn transaction(
    State(host): State<AppState>,
    _session: Session,
    Path(tx_id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let tx_id: Digest = tx_id.parse().map_err(|_| ApiError::bad_request("tx_id must be 64 hex digits"))?;
    let status = host
        .with_network(|net| net.tx_status(host.node_id(), &tx_id))
        .ok_or_else(|| ApiError::not_found(format!("unknown transaction {tx_id}")))?;
    let mut body = serde_json::to_value(&status).expect("status serializes");
    body["tx_id"] = serde_json::json!(tx_id);
    Ok(Json(body))
}

fn registry_id(name: &str) -> Result<&'static str, ApiError> {
    registries::ALL
        .iter()
        .copied()
        .find(|r| *r == name || r.rsplit('.').next() == Some(name))
        .ok_or_else(|| ApiError::not_found(format!("unknown registry {name}")))
}

/// Runs `f` on the committed state of `channel` at this node.
fn with_ledger<R>(
    host: &NodeHost,
    channel: Option<String>,
    f: impl FnOnce(&dyn LedgerView) -> Result<R, ApiError>,
) -> Result<R, ApiError> {
    let channel = channel.unwrap_or_else(|| host.settings.default_channel.clone());
    host.with_network(|net| match net.peer(host.node_id()).and_then(|p| p.ledger(&channel)) {
        Some(ledger) => f(ledger),
        None => Err(channel_error(net, host.node_id(), &channel)),
    })
}

#[derive(Deserialize)]
struct ChannelQuery {
    channel: Option<String>,
}

async fn get_asset(
    State(host): State<AppState>,
    _session: Session,
    Path((registry, key)): Path<(String, String)>,
    Query(q): Query<ChannelQuery>,
) -> Result<Json<Doc>, ApiError> {
    let registry = registry_id(&registry)?;
    with_ledger(&host, q.channel, |view| {
        view.state()
            .get(&registries::key(registry, &key))
            .map(|e| Json(e.value.clone()))
            .ok_or_else(|| ApiError::not_found(format!("no asset {key} in {registry}")))
    })
}

#[derive(Serialize)]
struct AssetItem {
    id: String,
    asset: Doc,
}

#[derive(Serialize)]
struct AssetList {
    channel_id: String,
    registry: &'static str,
    items: Vec<AssetItem>,
}

fn field_matches(asset: &Doc, field: &str, expected: &str) -> bool {
    match asset.get(field) {
        Some(Doc::Str(s)) => s == expected,
        Some(other) => other.to_string() == expected,
        None => false,
    }
}

/// `?field=value` pairs (and `filter=field=value[,…]`) are equality tests
/// on top-level fields.
async fn list_assets(
    State(host): State<AppState>,
    _session: Session,
    Path(registry): Path<String>,
    Query(params): Query<BTreeMap<String, String>>,
) -> Result<Json<AssetList>, ApiError> {
    let registry = registry_id(&registry)?;
    let mut filters: Vec<(String, String)> = Vec::new();
    let mut limit = usize::MAX;
    for (k, v) in &params {
        match k.as_str() {
            "channel" | "token" => {}
            "limit" => limit = v.parse().map_err(|_| ApiError::bad_request("limit must be a non-negative integer"))?,
            "filter" => {
                for clause in v.split(',').filter(|c| !c.is_empty()) {
                    let (f, x) = clause
                        .split_once('=')
                        .ok_or_else(|| ApiError::bad_request(format!("filter clause {clause} is not field=value")))?;
                    filters.push((f.to_string(), x.to_string()));
                }
            }
            _ => filters.push((k.clone(), v.clone())),
        }
    }
    let channel = params.get("channel").cloned().unwrap_or_else(|| host.settings.default_channel.clone());
    with_ledger(&host, Some(channel.clone()), |view| {
        let prefix = format!("{registry}#");
        let items = view
            .state()
            .scan_prefix(&prefix)
            .filter(|(_, e)| filters.iter().all(|(f, x)| field_matches(&e.value, f, x)))
            .take(limit)
            .map(|(k, e)| AssetItem { id: k[prefix.len()..].to_string(), asset: e.value.clone() })
            .collect();
        Ok(Json(AssetList { channel_id: channel, registry, items }))
    })
}

async fn provenance(
    State(host): State<AppState>,
    _session: Session,
    Path(lot_id): Path<String>,
    Query(q): Query<ChannelQuery>,
) -> Result<impl IntoResponse, ApiError> {
    with_ledger(&host, q.channel, |view| match trace_lot_provenance(view, &lot_id) {
        Ok(tree) => Ok(Json(tree)),
        Err(e @ (GrainError::AssetNotFound(_) | GrainError::LotNotFound(_))) => Err(ApiError::not_found(e.to_string())),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.code(), e.to_string())),
    })
}

async fn receipt(
    State(host): State<AppState>,
    _session: Session,
    Path(invoice): Path<String>,
    Query(q): Query<ChannelQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let channel = q.channel.unwrap_or_else(|| host.settings.default_channel.clone());
    host.with_network(|net| {
        let peer = net.peer(host.node_id()).expect("host node exists");
        if peer.ledger(&channel).is_none() {
            return Err(channel_error(net, host.node_id(), &channel));
        }
        let signed = peer.issue_receipt(&channel, &invoice).map_err(|e| match e {
            GrainError::AssetNotFound(_) | GrainError::NoWeighTicket(_) | GrainError::IncompleteIntake { .. } => {
                ApiError::not_found(e.to_string())
            }
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.code(), other.to_string()),
        })?;
        Ok(Json(serde_json::json!({
            "receipt": signed,
            "issuer_public_key": hex::encode(peer.public_key()),
            "scheme": grainledger::identity::ED25519,
        })))
    })
}

async fn events(
    State(host): State<AppState>,
    session: Session,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = host.subscribe();
    let deadline = tokio::time::Instant::now()
        + Duration::from_millis(session.expires_at.saturating_sub(host.now_ms()));
    let stream = stream::unfold(rx, move |mut rx| async move {
        match tokio::time::timeout_at(deadline, rx.recv()).await {
            Err(_) | Ok(Err(RecvError::Closed)) => None,
            Ok(Err(RecvError::Lagged(n))) => {
                tracing::warn!(skipped = n, "event stream lagged; closing");
                None
            }
            Ok(Ok(ev)) => {
                let data = serde_json::to_string(&ev).expect("events serialize");
                Some((Ok(Event::default().event(ev.event_name.clone()).data(data)), rx))
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

async fn ui_config(State(host): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "api_base_url": host.settings.api_base_url() }))
}
