//! The run loop. One owner ticks the simulator at a fixed step and solves the
//! MPC from the current parameter snapshot every tick; decision and
//! adaptation cycles run beside it and only reach the car through the
//! parameter store.
//!
//! Two timings: `SimTime` runs each LLM call to completion when it is issued
//! but holds its result back until the reported latency has elapsed in sim
//! time, which keeps headless runs reproducible. `Threaded` runs calls on a
//! worker thread and picks results up whenever they arrive.

use std::collections::VecDeque;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};

use langdrive_core::mpc::{MpcController, MpcSolution, SolveStatus};
use langdrive_core::vehicle::{sample_window, LogEntry, SimError, Simulation};
use langdrive_core::{CrashStatus, DecisionAction, FrenetPose, TrackSpec, VehicleState};
use serde::{Deserialize, Serialize};

use crate::config::{DecisionConfig, RunConfig};
use crate::engine::{AdaptRecord, AdaptRequest, DecisionRecord, Engine};
use crate::store::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CycleMode {
    /// Prompts go to the decision stage; changes are forwarded to the adapter.
    #[default]
    Decision,
    /// Prompts go straight to the adapter as instructions.
    Adapt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timing {
    SimTime,
    Threaded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionLogEntry {
    /// Time the cycle was issued.
    pub t: f64,
    pub t_done: f64,
    #[serde(flatten)]
    pub record: DecisionRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptLogEntry {
    pub t: f64,
    pub t_done: f64,
    #[serde(flatten)]
    pub record: AdaptRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub status: Option<SolveStatus>,
    pub slack_max: f64,
    pub cost: f64,
    pub qp_iterations: usize,
}

impl SolveSummary {
    fn from(res: &Result<MpcSolution, langdrive_core::mpc::MpcError>) -> Self {
        match res {
            Ok(s) => Self { status: Some(s.status), slack_max: s.slack_max, cost: s.cost, qp_iterations: s.qp_iterations },
            Err(_) => Self { status: None, slack_max: f64::NAN, cost: f64::NAN, qp_iterations: 0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub t: f64,
    pub s: f64,
    pub n: f64,
    pub delta_phi: f64,
    pub v: f64,
    pub delta: f64,
    pub d_left: f64,
    pub d_right: f64,
    pub crashed: bool,
    pub x: Option<f64>,
    pub y: Option<f64>,
    pub heading: Option<f64>,
    pub params_hash: String,
    pub prompt: Option<String>,
    pub last_decision: Option<String>,
    pub last_update: Option<String>,
    pub slack_max: Option<f64>,
}

enum JobResult {
    Decision(DecisionRecord),
    Adapt(AdaptRequest),
}

enum Inflight {
    Ready { issued: f64, ready_at: f64, result: Box<JobResult> },
    Worker { issued: f64, rx: mpsc::Receiver<JobResult> },
}

#[derive(Debug, Clone)]
pub struct LoopOptions {
    pub dt: f64,
    pub decision: DecisionConfig,
    pub mode: CycleMode,
    pub timing: Timing,
    /// Log rows kept in memory; everything when `None`.
    pub keep_log: Option<usize>,
    /// Decision entries kept in memory; everything when `None`.
    pub keep_decisions: Option<usize>,
}

impl LoopOptions {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self { dt: cfg.dt, decision: cfg.decision, mode: CycleMode::Decision, timing: Timing::SimTime, keep_log: None, keep_decisions: None }
    }
}

pub struct Orchestrator {
    track: Arc<TrackSpec>,
    sim: Simulation,
    controller: MpcController,
    store: Arc<ParamStore>,
    engine: Arc<Engine>,
    opts: LoopOptions,
    prompt: Option<String>,
    queued_instruction: Option<String>,
    scheduled: VecDeque<(f64, String)>,
    inflight: Option<Inflight>,
    last_decision: Option<f64>,
    decisions: Arc<Mutex<VecDeque<DecisionLogEntry>>>,
    adaptations: Vec<AdaptLogEntry>,
    last_solve: Option<SolveSummary>,
    ticks: u64,
    last_decision_summary: Option<String>,
    last_update_summary: Option<String>,
}

/// Starting pose for the crash-recovery run: nose pointing into the right
/// wall, 0.147 m from it, crash latched.
pub fn crashed_start(track: &TrackSpec, s: f64) -> (VehicleState, CrashStatus) {
    let wr = track.width_right_at(s);
    (VehicleState::new(s, -(wr - 0.147), -0.6, 0.0, 0.0), CrashStatus::latched_at(0.0))
}

impl Orchestrator {
    pub fn new(
        track: Arc<TrackSpec>,
        cfg: &RunConfig,
        initial: VehicleState,
        crash: Option<CrashStatus>,
        store: Arc<ParamStore>,
        engine: Arc<Engine>,
        opts: LoopOptions,
    ) -> Self {
        let sim = match crash {
            Some(c) => Simulation::with_crash(&track, cfg.vehicle, initial, c),
            None => Simulation::new(&track, cfg.vehicle, initial),
        };
        let controller = MpcController::new(cfg.horizon, cfg.vehicle, cfg.mpc, opts.dt);
        Self {
            track,
            sim,
            controller,
            store,
            engine,
            opts,
            prompt: None,
            queued_instruction: None,
            scheduled: VecDeque::new(),
            inflight: None,
            last_decision: None,
            decisions: Arc::new(Mutex::new(VecDeque::new())),
            adaptations: Vec::new(),
            last_solve: None,
            ticks: 0,
            last_decision_summary: None,
            last_update_summary: None,
        }
    }

    pub fn time(&self) -> f64 {
        self.sim.state().t
    }

    pub fn state(&self) -> &VehicleState {
        self.sim.state()
    }

    pub fn crash(&self) -> CrashStatus {
        self.sim.crash()
    }

    pub fn log(&self) -> &[LogEntry] {
        self.sim.log()
    }

    pub fn store(&self) -> &Arc<ParamStore> {
        &self.store
    }

    pub fn track(&self) -> &Arc<TrackSpec> {
        &self.track
    }

    pub fn decisions(&self) -> Vec<DecisionLogEntry> {
        self.decisions.lock().unwrap().iter().cloned().collect()
    }

    /// Shared handle on the decision feed, for readers on other threads.
    pub fn decision_feed(&self) -> Arc<Mutex<VecDeque<DecisionLogEntry>>> {
        self.decisions.clone()
    }

    pub fn adaptations(&self) -> &[AdaptLogEntry] {
        &self.adaptations
    }

    pub fn last_solve(&self) -> Option<SolveSummary> {
        self.last_solve
    }

    pub fn prompt(&self) -> Option<&str> {
        self.prompt.as_deref()
    }

    pub fn busy(&self) -> bool {
        self.inflight.is_some()
    }

    /// Sets the human instruction. In decision mode the next cycle fires as
    /// soon as enough history exists; in adapt mode the text is queued for
    /// the adapter.
    pub fn set_prompt(&mut self, text: &str) {
        let text = text.trim().to_string();
        if text.is_empty() {
            return;
        }
        match self.opts.mode {
            CycleMode::Decision => {
                self.prompt = Some(text);
                self.last_decision = None;
            }
            CycleMode::Adapt => {
                self.prompt = Some(text.clone());
                self.queued_instruction = Some(text);
            }
        }
    }

    pub fn clear_prompt(&mut self) {
        self.prompt = None;
        self.queued_instruction = None;
    }

    /// Sets the prompt when sim time reaches `t`.
    pub fn schedule_prompt(&mut self, t: f64, text: &str) {
        let at = self.scheduled.partition_point(|(u, _)| *u <= t);
        self.scheduled.insert(at, (t, text.to_string()));
    }

    /// One fixed simulator step.
    pub fn step(&mut self) -> Result<(), SimError> {
        let t = self.time();
        while self.scheduled.front().is_some_and(|(u, _)| *u <= t + 1e-9) {
            let (_, text) = self.scheduled.pop_front().unwrap();
            self.set_prompt(&text);
        }
        self.poll(t);
        self.maybe_issue(t);

        let params = self.store.snapshot();
        let (input, res) = self.controller.control(self.sim.state(), &self.track, &params);
        if let Err(e) = &res {
            tracing::warn!(t, error = %e, "MPC solve failed; braking");
        }
        self.last_solve = Some(SolveSummary::from(&res));
        self.sim.tick(&self.track, input, self.opts.dt)?;
        if !self.sim.state().is_finite() {
            return Err(SimError::NonFinite);
        }
        self.ticks += 1;
        if let Some(k) = self.opts.keep_log {
            self.sim.trim_log(k);
        }
        Ok(())
    }

    /// Runs `seconds` of sim time.
    pub fn run_for(&mut self, seconds: f64) -> Result<(), SimError> {
        let n = (seconds / self.opts.dt).round() as u64;
        for _ in 0..n {
            self.step()?;
        }
        Ok(())
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    fn poll(&mut self, t: f64) {
        let done = match self.inflight.take() {
            None => return,
            Some(Inflight::Ready { issued, ready_at, result }) => {
                if t + 1e-9 >= ready_at {
                    Some((issued, *result))
                } else {
                    self.inflight = Some(Inflight::Ready { issued, ready_at, result });
                    None
                }
            }
            Some(Inflight::Worker { issued, rx }) => match rx.try_recv() {
                Ok(r) => Some((issued, r)),
                Err(mpsc::TryRecvError::Empty) => {
                    self.inflight = Some(Inflight::Worker { issued, rx });
                    None
                }
                Err(mpsc::TryRecvError::Disconnected) => {
                    tracing::warn!("LLM worker vanished; cycle dropped");
                    None
                }
            },
        };
        let Some((issued, result)) = done else { return };
        match result {
            JobResult::Decision(record) => {
                self.last_decision_summary = Some(match &record.outcome {
                    Ok(o) if o.action == DecisionAction::Continue => "continue".to_string(),
                    Ok(o) => format!("change: {}", o.instruction.as_deref().unwrap_or("")),
                    Err(e) => format!("failed: {e}"),
                });
                let forward = record.instruction().map(str::to_string);
                let mut log = self.decisions.lock().unwrap();
                log.push_back(DecisionLogEntry { t: issued, t_done: t, record });
                if let Some(k) = self.opts.keep_decisions {
                    while log.len() > k {
                        log.pop_front();
                    }
                }
                drop(log);
                if let Some(instr) = forward {
                    self.issue_adapt(t, instr);
                }
            }
            JobResult::Adapt(request) => {
                let record = Engine::apply(request, &self.store, t);
                self.last_update_summary = Some(match (&record.update, &record.request.raw) {
                    (Some(u), _) if u.is_empty() => "no change".to_string(),
                    (Some(u), _) => crate::format_map(&u.accepted),
                    (None, Err(e)) => format!("failed: {e}"),
                    (None, Ok(_)) => "no change".to_string(),
                });
                self.adaptations.push(AdaptLogEntry { t: issued, t_done: t, record });
            }
        }
    }

    fn maybe_issue(&mut self, t: f64) {
        if self.inflight.is_some() {
            return;
        }
        if let Some(instr) = self.queued_instruction.take() {
            self.issue_adapt(t, instr);
            return;
        }
        if self.opts.mode != CycleMode::Decision {
            return;
        }
        let Some(prompt) = self.prompt.clone() else { return };
        if self.last_decision.is_some_and(|last| t - last + 1e-9 < self.opts.decision.min_spacing) {
            return;
        }
        let Ok(snapshot) = sample_window(self.sim.log(), self.opts.decision.window, self.opts.decision.samples, &self.track) else {
            return;
        };
        self.last_decision = Some(t);
        let engine = self.engine.clone();
        self.launch(t, move || JobResult::Decision(engine.decide(&prompt, &snapshot)));
    }

    fn issue_adapt(&mut self, t: f64, instruction: String) {
        let engine = self.engine.clone();
        self.launch(t, move || JobResult::Adapt(engine.request_params(&instruction)));
    }

    fn launch(&mut self, t: f64, job: impl FnOnce() -> JobResult + Send + 'static) {
        self.inflight = Some(match self.opts.timing {
            Timing::SimTime => {
                let result = job();
                let latency = match &result {
                    JobResult::Decision(r) => r.latency(),
                    JobResult::Adapt(r) => r.latency(),
                };
                Inflight::Ready { issued: t, ready_at: t + latency, result: Box::new(result) }
            }
            Timing::Threaded => {
                let (tx, rx) = mpsc::channel();
                std::thread::spawn(move || {
                    let _ = tx.send(job());
                });
                Inflight::Worker { issued: t, rx }
            }
        });
    }

    pub fn frame(&self) -> TelemetryFrame {
        let st = self.sim.state();
        let (d_left, d_right) = self.track.wall_distances(st.pose.s, st.pose.n);
        let cart = self.track.frenet_to_cartesian(FrenetPose::new(st.pose.s, st.pose.n, st.pose.delta_phi)).ok();
        TelemetryFrame {
            t: st.t,
            s: st.pose.s,
            n: st.pose.n,
            delta_phi: st.pose.delta_phi,
            v: st.v,
            delta: st.delta,
            d_left,
            d_right,
            crashed: self.sim.crash().crashed,
            x: cart.map(|c| c.0),
            y: cart.map(|c| c.1),
            heading: cart.map(|c| c.2),
            params_hash: format!("{:016x}", self.store.snapshot().fingerprint()),
            prompt: self.prompt.clone(),
            last_decision: self.last_decision_summary.clone(),
            last_update: self.last_update_summary.clone(),
            slack_max: self.last_solve.map(|s| s.slack_max).filter(|x| x.is_finite()),
        }
    }
}
