//! Listening-session service.
//!
//! Session state lives only in the append-only response log: on startup the
//! log is replayed (a torn trailing line is cut off) and every accepted
//! response is written with one `write_all` followed by `sync_data` before it
//! is acknowledged.
//!
//! Clients never see speaker ids, labels or stimulus ids. Stimuli are
//! addressed by opaque tokens derived from the plan seed and the stimulus id.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::design::ExperimentPlan;
use crate::error::{Error, Result};
use crate::io::{format_response, parse_responses, write_header, RESPONSE_HEADER};
use crate::perceptual::{Decision, Order, PerceptualResponse};

pub const DEFAULT_PORT: u16 = 8080;
pub const PORT_ENV: &str = "SPKEVAL_PORT";

/// Audio extensions probed in the stimuli directory, with their media types.
pub const AUDIO_TYPES: &[(&str, &str)] = &[
    ("wav", "audio/wav"),
    ("flac", "audio/flac"),
    ("mp3", "audio/mpeg"),
    ("ogg", "audio/ogg"),
];

const STATIC_TYPES: &[(&str, &str)] = &[
    ("html", "text/html; charset=utf-8"),
    ("js", "text/javascript; charset=utf-8"),
    ("mjs", "text/javascript; charset=utf-8"),
    ("css", "text/css; charset=utf-8"),
    ("json", "application/json"),
    ("svg", "image/svg+xml"),
    ("png", "image/png"),
    ("ico", "image/x-icon"),
    ("woff2", "font/woff2"),
];

/// Opaque client-side reference of a stimulus.
pub fn stimulus_token(seed: u64, stim_id: &str) -> String {
    let digest = Sha256::digest(format!("{seed}:{stim_id}").as_bytes());
    digest[..12].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
struct SlotInfo {
    order: Order,
    token_a: String,
    token_b: String,
}

#[derive(Debug, Clone)]
struct ListenerSlots {
    trial_ids: Vec<String>,
    slots: HashMap<String, SlotInfo>,
}

/// Progress of one listener.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub listener_id: String,
    /// Index of the first unanswered trial in plan order.
    pub cursor: usize,
    pub responses_received: usize,
    pub total: usize,
    pub completed: bool,
}

/// Trial descriptor sent to clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialDescriptor {
    pub trial_id: String,
    pub order: String,
    pub stimulus_a: String,
    pub stimulus_b: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub listener_id: String,
    pub total: usize,
    pub responses_received: usize,
    pub completed: bool,
    pub trials: Vec<TrialDescriptor>,
}

/// Body of `POST /response`.
#[derive(Debug, Clone, Deserialize)]
pub struct ResponseBody {
    pub listener_id: String,
    pub trial_id: String,
    pub order: String,
    pub decision: String,
    pub confidence: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubmitError {
    BadRequest(String),
    UnknownListener(String),
    UnknownTrial(String),
    Conflict,
    Storage(String),
}

impl SubmitError {
    fn status(&self) -> StatusCode {
        match self {
            SubmitError::BadRequest(_) => StatusCode::BAD_REQUEST,
            SubmitError::UnknownListener(_) | SubmitError::UnknownTrial(_) => StatusCode::NOT_FOUND,
            SubmitError::Conflict => StatusCode::CONFLICT,
            SubmitError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn message(&self) -> String {
        match self {
            SubmitError::BadRequest(m) => m.clone(),
            SubmitError::UnknownListener(l) => format!("unknown listener `{l}`"),
            SubmitError::UnknownTrial(t) => format!("unknown trial `{t}`"),
            SubmitError::Conflict => "response already recorded".into(),
            SubmitError::Storage(_) => "response could not be stored".into(),
        }
    }
}

/// Plan lookup plus the answered set rebuilt from the response log.
pub struct SessionStore {
    listeners: HashMap<String, ListenerSlots>,
    stimuli: HashMap<String, String>,
    answered: RwLock<HashMap<String, HashSet<String>>>,
    log: Mutex<File>,
    log_path: PathBuf,
}

impl SessionStore {
    pub fn open(plan: &ExperimentPlan, log_path: &Path) -> Result<SessionStore> {
        let mut listeners = HashMap::new();
        let mut stimuli = HashMap::new();
        for l in &plan.listeners {
            let mut trial_ids = Vec::with_capacity(l.trials.len());
            let mut slots = HashMap::new();
            for p in &l.trials {
                let t = &p.trial;
                let token_a = stimulus_token(plan.seed, &t.stim_a.id);
                let token_b = stimulus_token(plan.seed, &t.stim_b.id);
                stimuli.insert(token_a.clone(), t.stim_a.id.clone());
                stimuli.insert(token_b.clone(), t.stim_b.id.clone());
                trial_ids.push(t.trial_id.clone());
                slots.insert(t.trial_id.clone(), SlotInfo { order: p.order, token_a, token_b });
            }
            listeners.insert(l.listener_id.clone(), ListenerSlots { trial_ids, slots });
        }

        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(log_path)
            .map_err(|e| Error::Io(format!("{}: {e}", log_path.display())))?;
        let responses = recover_log(&mut file)?;
        let mut answered: HashMap<String, HashSet<String>> = HashMap::new();
        for r in responses {
            let slot = listeners
                .get(&r.listener_id)
                .ok_or_else(|| Error::UnknownListener(r.listener_id.clone()))?
                .slots
                .get(&r.trial_id)
                .ok_or_else(|| Error::UnknownTrialId(r.trial_id.clone()))?;
            if slot.order != r.order {
                return Err(Error::Syntax {
                    line: 0,
                    message: format!("logged order of trial `{}` disagrees with the plan", r.trial_id),
                });
            }
            answered.entry(r.listener_id).or_default().insert(r.trial_id);
        }
        Ok(SessionStore {
            listeners,
            stimuli,
            answered: RwLock::new(answered),
            log: Mutex::new(file),
            log_path: log_path.to_path_buf(),
        })
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    pub fn state(&self, listener_id: &str) -> Option<SessionState> {
        let l = self.listeners.get(listener_id)?;
        let answered = self.answered.read().unwrap();
        let done = answered.get(listener_id);
        let is_done = |t: &String| done.is_some_and(|d| d.contains(t));
        let cursor = l.trial_ids.iter().position(|t| !is_done(t)).unwrap_or(l.trial_ids.len());
        let received = done.map_or(0, HashSet::len);
        Some(SessionState {
            listener_id: listener_id.to_string(),
            cursor,
            responses_received: received,
            total: l.trial_ids.len(),
            completed: received == l.trial_ids.len(),
        })
    }

    pub fn session(&self, listener_id: &str) -> Option<SessionView> {
        let l = self.listeners.get(listener_id)?;
        let state = self.state(listener_id)?;
        let answered = self.answered.read().unwrap();
        let done = answered.get(listener_id);
        let trials = l
            .trial_ids
            .iter()
            .filter(|t| !done.is_some_and(|d| d.contains(*t)))
            .map(|t| {
                let s = &l.slots[t];
                TrialDescriptor {
                    trial_id: t.clone(),
                    order: s.order.to_string(),
                    stimulus_a: format!("/stimulus/{}", s.token_a),
                    stimulus_b: format!("/stimulus/{}", s.token_b),
                }
            })
            .collect();
        Some(SessionView {
            listener_id: listener_id.to_string(),
            total: state.total,
            responses_received: state.responses_received,
            completed: state.completed,
            trials,
        })
    }

    /// Validates, appends and syncs one response.
    pub fn submit(&self, body: &ResponseBody) -> std::result::Result<SessionState, SubmitError> {
        let order: Order = body.order.parse().map_err(SubmitError::BadRequest)?;
        let decision: Decision = body.decision.parse().map_err(SubmitError::BadRequest)?;
        if !(0..=5).contains(&body.confidence) {
            return Err(SubmitError::BadRequest(format!(
                "confidence {} not in 0..=5",
                body.confidence
            )));
        }
        let l = self
            .listeners
            .get(&body.listener_id)
            .ok_or_else(|| SubmitError::UnknownListener(body.listener_id.clone()))?;
        let slot = l
            .slots
            .get(&body.trial_id)
            .ok_or_else(|| SubmitError::UnknownTrial(body.trial_id.clone()))?;
        if slot.order != order {
            return Err(SubmitError::BadRequest(format!(
                "trial `{}` is presented in order {}",
                body.trial_id, slot.order
            )));
        }
        let response = PerceptualResponse {
            listener_id: body.listener_id.clone(),
            trial_id: body.trial_id.clone(),
            order,
            decision,
            confidence: body.confidence as u8,
            timestamp: Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)),
        };

        // single writer: the log lock is held from duplicate check to state update
        let mut log = self.log.lock().unwrap();
        let already = self
            .answered
            .read()
            .unwrap()
            .get(&body.listener_id)
            .is_some_and(|d| d.contains(&body.trial_id));
        if already {
            return Err(SubmitError::Conflict);
        }
        let line = format!("{}\n", format_response(&response));
        log.write_all(line.as_bytes())
            .and_then(|()| log.sync_data())
            .map_err(|e| SubmitError::Storage(e.to_string()))?;
        self.answered
            .write()
            .unwrap()
            .entry(body.listener_id.clone())
            .or_default()
            .insert(body.trial_id.clone());
        drop(log);
        Ok(self.state(&body.listener_id).expect("listener exists"))
    }

    /// Stimulus id behind a token.
    pub fn resolve(&self, token: &str) -> Option<&str> {
        self.stimuli.get(token).map(String::as_str)
    }
}

/// Cuts a torn trailing line, writes the header into an empty log and
/// returns the logged responses.
fn recover_log(file: &mut File) -> Result<Vec<PerceptualResponse>> {
    let mut bytes = Vec::new();
    file.seek(SeekFrom::Start(0))?;
    file.read_to_end(&mut bytes)?;
    let keep = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(i) => i + 1,
        None => 0,
    };
    if keep < bytes.len() {
        file.set_len(keep as u64)?;
        file.sync_data()?;
        bytes.truncate(keep);
    }
    if bytes.is_empty() {
        let mut header = Vec::new();
        write_header(&mut header, RESPONSE_HEADER)?;
        file.write_all(&header)?;
        file.sync_data()?;
        return Ok(Vec::new());
    }
    parse_responses(BufReader::new(bytes.as_slice()))
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
    pub stimuli_dir: PathBuf,
    pub static_dir: Option<PathBuf>,
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn get_session(State(app): State<AppState>, UrlPath(listener): UrlPath<String>) -> Response {
    match app.store.session(&listener) {
        Some(view) => Json(view).into_response(),
        None => error_response(StatusCode::NOT_FOUND, format!("unknown listener `{listener}`")),
    }
}

async fn get_progress(State(app): State<AppState>, UrlPath(listener): UrlPath<String>) -> Response {
    match app.store.state(&listener) {
        Some(state) => Json(state).into_response(),
        None => error_response(StatusCode::NOT_FOUND, format!("unknown listener `{listener}`")),
    }
}

async fn post_response(State(app): State<AppState>, body: Bytes) -> Response {
    let body: ResponseBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    let store = app.store.clone();
    let result = tokio::task::spawn_blocking(move || store.submit(&body)).await;
    match result {
        Ok(Ok(state)) => Json(state).into_response(),
        Ok(Err(e)) => {
            if let SubmitError::Storage(m) = &e {
                eprintln!("error: response log {}: {m}", app.store.log_path().display());
            }
            error_response(e.status(), e.message())
        }
        Err(_) => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal error"),
    }
}

async fn get_stimulus(State(app): State<AppState>, UrlPath(token): UrlPath<String>) -> Response {
    let Some(stim_id) = app.store.resolve(&token) else {
        return error_response(StatusCode::NOT_FOUND, "unknown stimulus");
    };
    for (ext, mime) in AUDIO_TYPES {
        let path = app.stimuli_dir.join(format!("{stim_id}.{ext}"));
        if let Ok(bytes) = tokio::fs::read(&path).await {
            return ([(header::CONTENT_TYPE, *mime)], Body::from(bytes)).into_response();
        }
    }
    error_response(StatusCode::NOT_FOUND, "stimulus file missing")
}

fn static_path(root: &Path, uri_path: &str) -> Option<PathBuf> {
    let rel = uri_path.trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = Path::new(rel);
    if rel.components().all(|c| matches!(c, Component::Normal(_))) {
        Some(root.join(rel))
    } else {
        None
    }
}

async fn get_static(State(app): State<AppState>, uri: axum::http::Uri) -> Response {
    let Some(root) = &app.static_dir else {
        return error_response(StatusCode::NOT_FOUND, "not found");
    };
    let Some(path) = static_path(root, uri.path()) else {
        return error_response(StatusCode::NOT_FOUND, "not found");
    };
    let mime = path
        .extension()
        .and_then(|e| e.to_str())
        .and_then(|e| STATIC_TYPES.iter().find(|(x, _)| *x == e))
        .map_or("application/octet-stream", |(_, m)| m);
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, mime)], Body::from(bytes)).into_response(),
        Err(_) => error_response(StatusCode::NOT_FOUND, "not found"),
    }
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/session/{listener}", get(get_session))
        .route("/progress/{listener}", get(get_progress))
        .route("/response", post(post_response))
        .route("/stimulus/{token}", get(get_stimulus))
        .fallback(get(get_static))
        .with_state(app)
}

/// Binds `addr` and serves until interrupted.
pub async fn run(app: AppState, port: u16) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port))
        .await
        .map_err(|e| Error::Io(format!("cannot bind port {port}: {e}")))?;
    eprintln!("serving on port {port}");
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_are_stable_hex() {
        let t = stimulus_token(1, "spkA_read_01");
        assert_eq!(t.len(), 24);
        assert!(t.bytes().all(|b| b.is_ascii_hexdigit()));
        assert_eq!(t, stimulus_token(1, "spkA_read_01"));
        assert_ne!(t, stimulus_token(2, "spkA_read_01"));
    }

    #[test]
    fn static_paths_stay_inside_root() {
        let root = Path::new("/srv/ui");
        assert_eq!(static_path(root, "/"), Some(root.join("index.html")));
        assert_eq!(static_path(root, "/app.js"), Some(root.join("app.js")));
        assert_eq!(static_path(root, "/../etc/passwd"), None);
    }
}
