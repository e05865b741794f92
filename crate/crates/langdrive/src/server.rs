//! Telemetry and control service. The run loop lives on its own thread and
//! is paced to the wall clock; handlers talk to it through a command channel,
//! the parameter store and a broadcast of telemetry frames. Subscribers that
//! fall behind lose frames instead of slowing the loop.

use std::collections::{BTreeMap, VecDeque};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use langdrive_core::adapter::RawParams;
use serde::Deserialize;
use tokio::sync::broadcast;

use crate::orchestrator::{DecisionLogEntry, Orchestrator, TelemetryFrame};
use crate::store::{ParamStore, Source};

pub enum Command {
    SetPrompt(String),
}

#[derive(Clone)]
pub struct ServiceState {
    pub store: Arc<ParamStore>,
    pub decisions: Arc<Mutex<VecDeque<DecisionLogEntry>>>,
    pub frames: broadcast::Sender<TelemetryFrame>,
    pub latest: Arc<Mutex<Option<TelemetryFrame>>>,
    pub commands: mpsc::Sender<Command>,
}

impl ServiceState {
    fn now(&self) -> f64 {
        self.latest.lock().unwrap().as_ref().map_or(0.0, |f| f.t)
    }
}

/// Handle on a running loop thread; dropping it does not stop the loop.
pub struct LoopHandle {
    pub state: ServiceState,
    stop: Arc<AtomicBool>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl LoopHandle {
    pub fn stop(mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Moves the orchestrator onto a thread that ticks it in real time and
/// publishes a frame every `divisor` ticks.
pub fn spawn_loop(mut orch: Orchestrator, dt: f64, divisor: u64) -> LoopHandle {
    let (tx, rx) = mpsc::channel::<Command>();
    let (frames, _) = broadcast::channel(64);
    let latest = Arc::new(Mutex::new(Some(orch.frame())));
    let state = ServiceState { store: orch.store().clone(), decisions: orch.decision_feed(), frames: frames.clone(), latest: latest.clone(), commands: tx };
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = stop.clone();
    let thread = std::thread::spawn(move || {
        let start = Instant::now();
        let mut k: u64 = 0;
        while !stop_flag.load(Ordering::Relaxed) {
            while let Ok(cmd) = rx.try_recv() {
                match cmd {
                    Command::SetPrompt(text) => orch.set_prompt(&text),
                }
            }
            if let Err(e) = orch.step() {
                tracing::error!(error = %e, "simulation stopped");
                break;
            }
            k += 1;
            if k.is_multiple_of(divisor.max(1)) {
                let f = orch.frame();
                *latest.lock().unwrap() = Some(f.clone());
                let _ = frames.send(f);
            }
            let due = start + Duration::from_secs_f64(k as f64 * dt);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
    });
    LoopHandle { state, stop, thread: Some(thread) }
}

pub fn router(state: ServiceState) -> Router {
    Router::new()
        .route("/telemetry", get(telemetry))
        .route("/prompt", post(prompt))
        .route("/params", get(get_params).post(post_params))
        .route("/journal", get(journal))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: ServiceState) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(state)).await?;
    Ok(())
}

async fn telemetry(ws: WebSocketUpgrade, State(st): State<ServiceState>) -> Response {
    let rx = st.frames.subscribe();
    ws.on_upgrade(move |socket| stream_frames(socket, rx))
}

async fn stream_frames(mut socket: WebSocket, mut rx: broadcast::Receiver<TelemetryFrame>) {
    loop {
        match rx.recv().await {
            Ok(frame) => {
                let Ok(text) = serde_json::to_string(&frame) else { continue };
                if socket.send(Message::Text(text.into())).await.is_err() {
                    return;
                }
            }
            Err(broadcast::error::RecvError::Lagged(_)) => continue,
            Err(broadcast::error::RecvError::Closed) => return,
        }
    }
}

#[derive(Deserialize)]
struct PromptBody {
    text: String,
}

fn error(status: StatusCode, msg: &str) -> Response {
    (status, Json(serde_json::json!({ "error": msg }))).into_response()
}

async fn prompt(State(st): State<ServiceState>, Json(body): Json<PromptBody>) -> Response {
    let text = body.text.trim().to_string();
    if text.is_empty() {
        return error(StatusCode::BAD_REQUEST, "empty prompt");
    }
    if st.commands.send(Command::SetPrompt(text.clone())).is_err() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "run loop has stopped");
    }
    (StatusCode::ACCEPTED, Json(serde_json::json!({ "accepted": true, "text": text }))).into_response()
}

async fn get_params(State(st): State<ServiceState>) -> Json<BTreeMap<String, f64>> {
    Json(st.store.snapshot().entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

/// Same clamp policy as adapter output. Non-numeric values are ignored with
/// a warning.
async fn post_params(State(st): State<ServiceState>, Json(body): Json<serde_json::Map<String, serde_json::Value>>) -> Response {
    let mut raw = RawParams::default();
    for (k, v) in body {
        match v.as_f64() {
            Some(x) => {
                raw.values.insert(k, x);
            }
            None => raw.warnings.push(format!("{k}: ignored non-numeric value {v}")),
        }
    }
    let (update, _) = st.store.apply_raw(&raw, Source::Ui, st.now());
    let mut warnings = raw.warnings;
    warnings.extend(update.warnings);
    let params: BTreeMap<String, f64> = st.store.snapshot().entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    Json(serde_json::json!({
        "accepted": update.accepted,
        "rejected": update.rejected,
        "warnings": warnings,
        "params": params,
    }))
    .into_response()
}

async fn journal(State(st): State<ServiceState>) -> Response {
    let decisions: Vec<serde_json::Value> = st
        .decisions
        .lock()
        .unwrap()
        .iter()
        .map(|d| {
            serde_json::json!({
                "t": d.t,
                "t_done": d.t_done,
                "human_prompt": d.record.human_prompt,
                "hints_used": d.record.hints_used,
                "response": d.record.response,
                "outcome": d.record.outcome,
            })
        })
        .collect();
    Json(serde_json::json!({ "decisions": decisions, "updates": st.store.journal() })).into_response()
}
