//! HTTP API over a [`WorkspaceStore`]. Request and response bodies are JSON
//! (OWL export is the one exception); errors are `{code, message, details}`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use scenekg_core::model::QName;
use scenekg_core::par::Execution;
use scenekg_core::rules::{format_rule, RuleError};
use scenekg_core::validator::{parse_oracle, SweepSpec};

use crate::engine::{self, EngineError, Loaded, OwlArtifact, SweepInputs};
use crate::store::{content_id, JobState, Put, StoreError, StoredPack, SweepJob, SweepRequest, WorkspaceStore};

pub struct AppState {
    pub store: WorkspaceStore,
    /// Jobs not yet persisted (queued or running).
    jobs: Mutex<HashMap<String, SweepJob>>,
    pool: Arc<Semaphore>,
    allow_exec_oracle: bool,
    exec: Execution,
}

impl AppState {
    /// `workers` bounds the number of sweeps running at once.
    pub fn new(store: WorkspaceStore, workers: usize, allow_exec_oracle: bool) -> Arc<Self> {
        Arc::new(Self {
            store,
            jobs: Mutex::new(HashMap::new()),
            pool: Arc::new(Semaphore::new(workers.max(1))),
            allow_exec_oracle,
            exec: Execution::Parallel,
        })
    }
}

// ---------------------------------------------------------------------------
// Errors

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn with(mut self, details: Value) -> Self {
        self.details = details;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "details": self.details });
        (self.status, Json(body)).into_response()
    }
}

/// The parser's diagnostic as a JSON object: its kind, the message exactly
/// as the parser rendered it, and its position when known.
pub fn rule_diagnostic(e: &RuleError) -> Value {
    let (rule, inner) = match e {
        RuleError::InRule { id, source } => (Some(id.as_str()), source.as_ref()),
        other => (None, other),
    };
    let kind = match inner {
        RuleError::Syntax { .. } => "SyntaxError",
        RuleError::UnknownName { .. } => "UnknownName",
        RuleError::UnsafeRule { .. } => "UnsafeRule",
        RuleError::EmptyBody => "EmptyBody",
        RuleError::InvalidAtom { .. } => "InvalidAtom",
        RuleError::DuplicateRuleId(_) => "DuplicateRuleId",
        RuleError::InRule { .. } => "InRule",
    };
    let mut d = json!({ "kind": kind, "message": e.to_string() });
    if let Some((line, col)) = engine::rule_error_position(e) {
        d["line"] = json!(line);
        d["col"] = json!(col);
    }
    if let Some(rule) = rule {
        d["rule"] = json!(rule);
    }
    if let RuleError::UnsafeRule { vars } = inner {
        d["vars"] = json!(vars);
    }
    d
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::NotFound { .. } => ApiError::new(StatusCode::NOT_FOUND, "not_found", message),
            StoreError::Exists { .. } => ApiError::new(StatusCode::CONFLICT, "already_exists", message),
            StoreError::VersionConflict { current, base, .. } => ApiError::new(StatusCode::CONFLICT, "version_conflict", message)
                .with(json!({ "currentVersion": current, "baseVersion": base })),
            StoreError::InvalidId { .. } | StoreError::Invalid(_) => ApiError::bad_request("validation", message),
            StoreError::Rule(r) => ApiError::bad_request("rule_error", message).with(json!({ "diagnostic": rule_diagnostic(&r) })),
            StoreError::Lint { rule, diagnostics } => {
                ApiError::bad_request("lint", message).with(json!({ "rule": rule, "diagnostics": diagnostics }))
            }
            StoreError::Io { .. } | StoreError::Corrupt { .. } => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
            }
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let message = e.to_string();
        match e {
            EngineError::Json { line, col, .. } => {
                ApiError::bad_request("invalid_json", message).with(json!({ "line": line, "col": col }))
            }
            EngineError::Rule(r) => ApiError::bad_request("rule_error", message).with(json!({ "diagnostic": rule_diagnostic(&r) })),
            EngineError::WrongKind { .. } => ApiError::bad_request("wrong_kind", message),
            _ => ApiError::bad_request("validation", message),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| {
        ApiError::bad_request("invalid_json", e.to_string()).with(json!({ "line": e.line(), "col": e.column() }))
    })
}

fn actor(headers: &HeaderMap) -> String {
    headers
        .get("x-actor")
        .and_then(|v| v.to_str().ok())
        .filter(|s| !s.trim().is_empty())
        .unwrap_or("anonymous")
        .to_owned()
}

async fn blocking<T, F>(state: &Arc<AppState>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> ApiResult<T> + Send + 'static,
{
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

fn put_status(put: Put) -> StatusCode {
    match put {
        Put::Created => StatusCode::CREATED,
        Put::Existing => StatusCode::OK,
    }
}

// ---------------------------------------------------------------------------
// Scenes and scenarios

#[derive(Deserialize)]
struct Wrapped {
    document: Value,
    #[serde(default)]
    config: Option<Value>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct TargetSummary {
    id: String,
    kind: &'static str,
    name: String,
    warnings: Vec<String>,
}

async fn post_target(state: Arc<AppState>, headers: HeaderMap, body: Bytes, expected: &'static str) -> ApiResult<Response> {
    let value: Value = parse_body(&body)?;
    // Either a bare document or `{document, config}`.
    let (doc, cfg) = match value.get("document") {
        Some(_) => {
            let w: Wrapped = serde_json::from_value(value).map_err(|e| ApiError::bad_request("validation", e.to_string()))?;
            (w.document, w.config)
        }
        None => (value, None),
    };
    let who = actor(&headers);
    blocking(&state, move |st| {
        let cfg = match cfg {
            Some(c) => engine::load_config(&c.to_string())?,
            None => Default::default(),
        };
        let (loaded, warnings) = engine::load(&doc.to_string(), &cfg, &st.store.tbox().clone(), st.exec)?;
        if loaded.kind() != expected {
            return Err(EngineError::WrongKind {
                expected,
                found: loaded.kind(),
            }
            .into());
        }
        let (record, put) = st.store.put_target(loaded, cfg, warnings, &who)?;
        let name = match &record.target {
            Loaded::Scene(s) => s.id.to_string(),
            Loaded::Scenario(s) => s.id.to_string(),
        };
        let summary = TargetSummary {
            id: record.id,
            kind: expected,
            name,
            warnings: record.warnings,
        };
        Ok((put_status(put), Json(summary)).into_response())
    })
    .await
}

async fn post_scene(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    post_target(state, headers, body, "scene").await
}

async fn post_scenario(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    post_target(state, headers, body, "scenario").await
}

async fn get_scene(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(&state, move |st| Ok(Json(st.store.scene(&id)?).into_response())).await
}

async fn get_scenario(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(&state, move |st| Ok(Json(st.store.scenario(&id)?).into_response())).await
}

async fn list_scenes(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    blocking(&state, |st| Ok(Json(json!({ "ids": st.store.list_ids("scenes")? })).into_response())).await
}

async fn list_scenarios(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    blocking(&state, |st| Ok(Json(json!({ "ids": st.store.list_ids("scenarios")? })).into_response())).await
}

// ---------------------------------------------------------------------------
// Rule packs

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct RuleView {
    id: String,
    label: String,
    text: String,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct PackView {
    id: String,
    version: u64,
    rules: Vec<RuleView>,
    text: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    diagnostics: Vec<scenekg_core::rules::Diagnostic>,
}

fn pack_view(p: StoredPack) -> PackView {
    PackView {
        id: p.pack.id.clone(),
        version: p.version,
        rules: p
            .pack
            .rules
            .iter()
            .map(|r| RuleView {
                id: r.id.clone(),
                label: r.label.clone(),
                text: format_rule(r),
            })
            .collect(),
        text: p.text,
        diagnostics: Vec::new(),
    }
}

#[derive(Deserialize, Default)]
#[serde(rename_all = "camelCase")]
struct VersionQuery {
    version: Option<u64>,
    base_version: Option<u64>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct PackBody {
    text: String,
    #[serde(default)]
    base_version: Option<u64>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RuleBody {
    #[serde(default)]
    label: String,
    text: String,
    base_version: u64,
    #[serde(default)]
    accept_warnings: bool,
}

fn need_base(v: Option<u64>) -> ApiResult<u64> {
    v.ok_or_else(|| ApiError::bad_request("validation", "baseVersion is required for edits"))
}

async fn list_packs(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    blocking(&state, |st| {
        let mut packs = Vec::new();
        for id in st.store.pack_ids()? {
            let p = st.store.pack(&id, None)?;
            packs.push(json!({ "id": id, "version": p.version, "rules": p.pack.rules.len() }));
        }
        Ok(Json(json!({ "packs": packs })).into_response())
    })
    .await
}

async fn get_pack(
    State(state): State<Arc<AppState>>,
    Path(pack): Path<String>,
    Query(q): Query<VersionQuery>,
) -> ApiResult<Response> {
    blocking(&state, move |st| Ok(Json(pack_view(st.store.pack(&pack, q.version)?)).into_response())).await
}

async fn post_pack(
    State(state): State<Arc<AppState>>,
    Path(pack): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let b: PackBody = parse_body(&body)?;
    let who = actor(&headers);
    blocking(&state, move |st| {
        let stored = st.store.create_pack(&pack, &b.text, &who)?;
        Ok((StatusCode::CREATED, Json(pack_view(stored))).into_response())
    })
    .await
}

async fn put_pack(
    State(state): State<Arc<AppState>>,
    Path(pack): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    let b: PackBody = parse_body(&body)?;
    let base = need_base(b.base_version)?;
    let who = actor(&headers);
    blocking(&state, move |st| {
        let stored = st.store.replace_pack(&pack, &b.text, base, &who)?;
        let diagnostics = engine::lint_pack(&stored.pack, st.store.tbox())
            .into_iter()
            .map(|(_, d)| d)
            .collect();
        Ok(Json(PackView {
            diagnostics,
            ..pack_view(stored)
        })
        .into_response())
    })
    .await
}

async fn delete_pack(
    State(state): State<Arc<AppState>>,
    Path(pack): Path<String>,
    Query(q): Query<VersionQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let base = need_base(q.base_version)?;
    let who = actor(&headers);
    blocking(&state, move |st| {
        st.store.delete_pack(&pack, base, &who)?;
        Ok(Json(json!({ "id": pack, "deletedVersion": base })).into_response())
    })
    .await
}

async fn get_rule(
    State(state): State<Arc<AppState>>,
    Path((pack, rule)): Path<(String, String)>,
    Query(q): Query<VersionQuery>,
) -> ApiResult<Response> {
    blocking(&state, move |st| {
        let p = st.store.pack(&pack, q.version)?;
        let r = p.pack.get(&rule).ok_or_else(|| StoreError::NotFound {
            kind: "rule",
            id: rule.clone(),
        })?;
        let view = json!({
            "id": r.id,
            "label": r.label,
            "text": format_rule(r),
            "pack": pack,
            "version": p.version,
        });
        Ok(Json(view).into_response())
    })
    .await
}

async fn write_rule(
    state: Arc<AppState>,
    pack: String,
    rule: String,
    headers: HeaderMap,
    body: Bytes,
    create_only: bool,
) -> ApiResult<Response> {
    let b: RuleBody = parse_body(&body)?;
    let who = actor(&headers);
    blocking(&state, move |st| {
        let (stored, diagnostics) = st.store.put_rule(
            &pack,
            &rule,
            &b.label,
            &b.text,
            b.base_version,
            b.accept_warnings,
            create_only,
            &who,
        )?;
        let status = if create_only { StatusCode::CREATED } else { StatusCode::OK };
        Ok((
            status,
            Json(PackView {
                diagnostics,
                ..pack_view(stored)
            }),
        )
            .into_response())
    })
    .await
}

async fn post_rule(
    State(state): State<Arc<AppState>>,
    Path((pack, rule)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    write_rule(state, pack, rule, headers, body, true).await
}

async fn put_rule(
    State(state): State<Arc<AppState>>,
    Path((pack, rule)): Path<(String, String)>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<Response> {
    write_rule(state, pack, rule, headers, body, false).await
}

async fn delete_rule(
    State(state): State<Arc<AppState>>,
    Path((pack, rule)): Path<(String, String)>,
    Query(q): Query<VersionQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let base = need_base(q.base_version)?;
    let who = actor(&headers);
    blocking(&state, move |st| Ok(Json(pack_view(st.store.delete_rule(&pack, &rule, base, &who)?)).into_response())).await
}

async fn get_audit(State(state): State<Arc<AppState>>) -> ApiResult<Response> {
    blocking(&state, |st| Ok(Json(json!({ "records": st.store.audit()? })).into_response())).await
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ReportBody {
    scene_id: String,
    #[serde(default = "default_pack")]
    pack_id: String,
    #[serde(default)]
    pack_version: Option<u64>,
}

fn default_pack() -> String {
    crate::store::DEFAULT_PACK.to_owned()
}

async fn post_report(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let b: ReportBody = parse_body(&body)?;
    let who = actor(&headers);
    blocking(&state, move |st| {
        let (meta, put) = st.store.report(&b.scene_id, &b.pack_id, b.pack_version, &who)?;
        Ok((put_status(put), Json(meta)).into_response())
    })
    .await
}

/// The report document, byte for byte as the CLI writes it.
async fn get_report(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(&state, move |st| {
        let bytes = st.store.report_bytes(&id)?;
        Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
    })
    .await
}

async fn get_report_meta(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(&state, move |st| Ok(Json(st.store.report_meta(&id)?).into_response())).await
}

// ---------------------------------------------------------------------------
// Sweeps

async fn post_sweep(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let mut req: SweepRequest = parse_body(&body)?;
    if req.oracle.trim_start().starts_with("exec:") && !state.allow_exec_oracle {
        return Err(ApiError::bad_request(
            "oracle_not_allowed",
            "process oracles are disabled on this server",
        ));
    }
    parse_oracle(&req.oracle).map_err(|e| ApiError::bad_request("validation", e.to_string()))?;
    let who = actor(&headers);
    let st = state.clone();
    let job = blocking(&state, move |s| {
        let target = s.store.target(&req.scene_id)?;
        let pack = s.store.pack(&req.pack_id, req.pack_version)?;
        req.pack_version = Some(pack.version);
        let spec = sweep_spec(&req)?;
        spec.values().map_err(|e| ApiError::bad_request("validation", e.to_string()))?;
        match &target.target {
            Loaded::Scene(scene) => {
                for name in std::iter::once(&spec.target).chain(spec.occluder.as_ref()) {
                    if scene.individual(name).is_none() {
                        return Err(ApiError::bad_request("validation", format!("no individual `{name}` in the scene")));
                    }
                }
            }
            Loaded::Scenario(_) => {
                return Err(ApiError::bad_request("wrong_kind", "sweeps run on scenes, not scenarios"));
            }
        }
        let id = content_id(&serde_json::to_vec(&req).expect("request serialises"));
        if let Some(job) = s.jobs.lock().unwrap().get(&id) {
            return Ok((job.clone(), false));
        }
        if let Some(job) = s.store.sweep_job(&id)? {
            return Ok((job, false));
        }
        let job = SweepJob {
            id: id.clone(),
            state: JobState::Queued,
            request: req,
            report: None,
            error: None,
        };
        s.jobs.lock().unwrap().insert(id.clone(), job.clone());
        s.store.record_sweep(&id, &who)?;
        Ok((job, true))
    })
    .await?;
    let (job, fresh) = job;
    if fresh {
        spawn_job(st, job.clone());
        Ok((StatusCode::ACCEPTED, Json(job)).into_response())
    } else {
        Ok(Json(job).into_response())
    }
}

fn sweep_spec(req: &SweepRequest) -> ApiResult<SweepSpec> {
    let name = |s: &str| QName::parse(s).map_err(|e| ApiError::bad_request("validation", format!("`{s}`: {e}")));
    Ok(SweepSpec {
        target: name(&req.target)?,
        occluder: req.occluder.as_deref().map(name).transpose()?,
        from: req.from,
        to: req.to,
        step: req.step,
    })
}

fn set_state(state: &AppState, id: &str, f: impl FnOnce(&mut SweepJob)) {
    if let Some(job) = state.jobs.lock().unwrap().get_mut(id) {
        f(job);
    }
}

fn spawn_job(state: Arc<AppState>, job: SweepJob) {
    tokio::spawn(async move {
        let _permit = state.pool.clone().acquire_owned().await.expect("pool is never closed");
        set_state(&state, &job.id, |j| j.state = JobState::Running);
        let st = state.clone();
        let req = job.request.clone();
        let outcome = tokio::task::spawn_blocking(move || run_job(&st, &req)).await;
        let mut done = job;
        match outcome {
            Ok(Ok(report)) => {
                done.state = JobState::Done;
                done.report = Some(report);
            }
            Ok(Err(e)) => {
                done.state = JobState::Failed;
                done.error = Some(e.message);
            }
            Err(e) => {
                done.state = JobState::Failed;
                done.error = Some(e.to_string());
            }
        }
        let st = state.clone();
        let saved = tokio::task::spawn_blocking(move || {
            let r = st.store.save_sweep_job(&done);
            (r, done)
        })
        .await;
        match saved {
            Ok((Ok(()), done)) => {
                state.jobs.lock().unwrap().remove(&done.id);
            }
            Ok((Err(e), done)) => {
                // Keep the result visible in memory even if it could not be saved.
                set_state(&state, &done.id.clone(), |j| {
                    *j = done;
                    j.state = JobState::Failed;
                    j.error = Some(format!("could not persist sweep: {e}"));
                });
            }
            Err(_) => {}
        }
    });
}

fn run_job(state: &AppState, req: &SweepRequest) -> ApiResult<scenekg_core::validator::SweepReport> {
    let target = state.store.target(&req.scene_id)?;
    let pack = state.store.pack(&req.pack_id, req.pack_version)?;
    let oracle = parse_oracle(&req.oracle).map_err(|e| ApiError::bad_request("validation", e.to_string()))?;
    let spec = sweep_spec(req)?;
    let tbox = state.store.tbox();
    let inputs = SweepInputs {
        tbox,
        pack: &pack.pack,
        cfg: &target.config,
        oracle: oracle.as_ref(),
        exec: state.exec,
    };
    Ok(engine::sweep(&target.target, &spec, &inputs)?)
}

async fn get_sweep(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    if let Some(job) = state.jobs.lock().unwrap().get(&id) {
        return Ok(Json(job.clone()).into_response());
    }
    blocking(&state, move |st| {
        let job = st.store.sweep_job(&id)?.ok_or(StoreError::NotFound { kind: "sweep", id })?;
        Ok(Json(job).into_response())
    })
    .await
}

// ---------------------------------------------------------------------------
// Export

#[derive(Deserialize)]
struct ExportQuery {
    #[serde(default = "default_pack")]
    pack: String,
    #[serde(default)]
    version: Option<u64>,
}

async fn export_owl(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    blocking(&state, move |st| {
        let target = st.store.target(&id)?;
        let pack = st.store.pack(&q.pack, q.version)?;
        Ok(match engine::export(st.store.tbox(), &target.target, &pack.pack)? {
            OwlArtifact::Scene(xml) => ([(header::CONTENT_TYPE, "application/owl+xml")], xml).into_response(),
            OwlArtifact::Scenario(bundle) => {
                let documents: Vec<Value> = bundle
                    .documents
                    .into_iter()
                    .map(|(name, content)| json!({ "name": name, "content": content }))
                    .collect();
                Json(json!({ "manifest": bundle.manifest, "documents": documents })).into_response()
            }
        })
    })
    .await
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/scenes", get(list_scenes).post(post_scene))
        .route("/scenes/{id}", get(get_scene))
        .route("/scenarios", get(list_scenarios).post(post_scenario))
        .route("/scenarios/{id}", get(get_scenario))
        .route("/rules", get(list_packs))
        .route("/rules/{pack}", get(get_pack).post(post_pack).put(put_pack).delete(delete_pack))
        .route(
            "/rules/{pack}/{rule}",
            get(get_rule).post(post_rule).put(put_rule).delete(delete_rule),
        )
        .route("/audit", get(get_audit))
        .route("/reports", axum::routing::post(post_report))
        .route("/reports/{id}", get(get_report))
        .route("/reports/{id}/meta", get(get_report_meta))
        .route("/sweeps", axum::routing::post(post_sweep))
        .route("/sweeps/{id}", get(get_sweep))
        .route("/export/owl/{id}", get(export_owl))
        .fallback(not_found)
        .with_state(state)
}

pub async fn serve(addr: std::net::SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
