use std::sync::Arc;
use std::time::Duration;

use futures_util::StreamExt;
use langdrive::config::{DecisionConfig, RunConfig};
use langdrive::eval;
use langdrive::gateway::ScriptedBackend;
use langdrive::orchestrator::{LoopOptions, Orchestrator, TelemetryFrame};
use langdrive::server::{router, spawn_loop, LoopHandle};
use langdrive::store::ParamStore;
use langdrive_core::{MpcParams, VehicleState};
use serde_json::{json, Value};

async fn start() -> (String, LoopHandle) {
    let cfg = RunConfig::default();
    let track = Arc::new(cfg.load_track().unwrap());
    let store = Arc::new(ParamStore::new(MpcParams::default()));
    let engine = eval::shared_engine(&cfg, Arc::new(ScriptedBackend::bundled()));
    let mut opts = LoopOptions::from_config(&cfg);
    opts.decision = DecisionConfig { window: 0.2, samples: 2, min_spacing: 0.2 };
    let orch = Orchestrator::new(track, &cfg, VehicleState::new(0.0, 0.0, 0.0, 0.0, 1.0), None, store, engine, opts);
    let handle = spawn_loop(orch, cfg.dt, 5);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(handle.state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (addr.to_string(), handle)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn params_roundtrip_with_clamping() {
    let (addr, handle) = start().await;
    let http = reqwest::Client::new();

    let got: Value = http.get(format!("http://{addr}/params")).send().await.unwrap().json().await.unwrap();
    assert_eq!(got["v_max"], 5.0);
    assert_eq!(got["qn"], 20.0);

    let resp = http
        .post(format!("http://{addr}/params"))
        .json(&json!({"v_max": 100.0, "qv": "fast", "bogus": 1.0}))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["accepted"]["v_max"], 10.0);
    assert_eq!(body["params"]["v_max"], 10.0);
    assert_eq!(body["params"]["qv"], 1.0);
    assert_eq!(body["rejected"], json!(["bogus"]));
    let warnings: Vec<String> = serde_json::from_value(body["warnings"].clone()).unwrap();
    assert!(warnings.iter().any(|w| w.contains("qv")), "{warnings:?}");
    assert!(warnings.iter().any(|w| w.contains("clamped")), "{warnings:?}");
    assert_eq!(handle.state.store.snapshot().v_max, 10.0);

    let journal: Value = http.get(format!("http://{addr}/journal")).send().await.unwrap().json().await.unwrap();
    let updates = journal["updates"].as_array().unwrap();
    assert_eq!(updates.len(), 1);
    assert_eq!(updates[0]["source"], "ui");
    assert_eq!(updates[0]["applied"]["v_max"], 10.0);
    handle.stop();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn prompt_drives_decisions() {
    let (addr, handle) = start().await;
    let http = reqwest::Client::new();

    let empty = http.post(format!("http://{addr}/prompt")).json(&json!({"text": "  "})).send().await.unwrap();
    assert_eq!(empty.status(), 400);
    let malformed = http.post(format!("http://{addr}/prompt")).json(&json!({"words": "x"})).send().await.unwrap();
    assert!(malformed.status().is_client_error());

    let ok = http
        .post(format!("http://{addr}/prompt"))
        .json(&json!({"text": "Drive the track in reverse at -1 m/s!"}))
        .send()
        .await
        .unwrap();
    assert_eq!(ok.status(), 202);

    let mut decisions = Vec::new();
    for _ in 0..100 {
        tokio::time::sleep(Duration::from_millis(100)).await;
        let j: Value = http.get(format!("http://{addr}/journal")).send().await.unwrap().json().await.unwrap();
        decisions = j["decisions"].as_array().unwrap().clone();
        if !decisions.is_empty() {
            break;
        }
    }
    assert!(!decisions.is_empty(), "no decision within 10 s");
    assert_eq!(decisions[0]["human_prompt"], "Drive the track in reverse at -1 m/s!");
    assert!(decisions[0]["t_done"].as_f64().unwrap() >= decisions[0]["t"].as_f64().unwrap());
    handle.stop();
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn telemetry_streams_frames() {
    let (addr, handle) = start().await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/telemetry")).await.unwrap();
    let mut frames = Vec::new();
    while frames.len() < 3 {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.expect("frame in time").unwrap().unwrap();
        if let tokio_tungstenite::tungstenite::Message::Text(text) = msg {
            frames.push(serde_json::from_str::<TelemetryFrame>(&text).unwrap());
        }
    }
    // One frame every 5 ticks of 0.02 s.
    for w in frames.windows(2) {
        assert!((w[1].t - w[0].t - 0.1).abs() < 1e-6, "{} -> {}", w[0].t, w[1].t);
    }
    let f = &frames[0];
    assert!((f.d_left + f.d_right - 2.2).abs() < 1e-9);
    assert_eq!(f.params_hash, format!("{:016x}", MpcParams::default().fingerprint()));
    assert!(!f.crashed);
    handle.stop();
}
