//! Evaluation harness: labelled state windows and decision accuracy, the four
//! closed-loop adaptation scenarios, fine-tune dataset emission and the
//! repeated-call latency protocol.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use langdrive_core::adapter::{build_adapter_prompt, BASE_MEMORY};
use langdrive_core::decision::build_decision_prompt;
use langdrive_core::labels::{bundled_commands, label_adherence};
use langdrive_core::metrics::{finite_difference, improvement, rmse, stats_summary, GenerationStats, StatsSummary};
use langdrive_core::mpc::MpcController;
use langdrive_core::vehicle::{sample_window, Simulation};
use langdrive_core::{Category, CommandSpec, ControlInput, MemoryKind, MpcParams, ParamUpdate, StateSnapshot, TrackSpec, VehicleParams, VehicleState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DecisionConfig, RunConfig};
use crate::engine::Engine;
use crate::gateway::{hash_prompt, Backend, ChatRequest, FnBackend, GatewayError};
use crate::store::ParamStore;

pub const DEFAULT_STATES: usize = 200;
pub const DEFAULT_DECISION_PAIRS: usize = 626;
pub const DEFAULT_MPC_PAIRS: usize = 150;
pub const STATS_RUNS: usize = 60;

pub const CONTINUE_TEXT: &str = "Action: a) Continue behavior";

/// Driving style used to generate a state window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Behaviour {
    Centred,
    CloseWall,
    Oscillating,
    OffLine,
    Reversing,
    Stopping,
    Slow,
    Fast,
}

impl Behaviour {
    pub const ALL: [Behaviour; 8] = [
        Behaviour::Centred,
        Behaviour::CloseWall,
        Behaviour::Oscillating,
        Behaviour::OffLine,
        Behaviour::Reversing,
        Behaviour::Stopping,
        Behaviour::Slow,
        Behaviour::Fast,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledState {
    pub id: usize,
    pub behaviour: Behaviour,
    pub snapshot: StateSnapshot,
    /// Command id -> adherence.
    pub labels: BTreeMap<String, bool>,
}

/// Lateral and speed targets for one rollout.
struct Plan {
    n_ref: Box<dyn Fn(f64) -> f64>,
    v_ref: f64,
    v0: f64,
}

fn plan(b: Behaviour, rng: &mut ChaCha8Rng, half_width: f64) -> Plan {
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let fixed = |n: f64| -> Box<dyn Fn(f64) -> f64> { Box::new(move |_| n) };
    match b {
        Behaviour::Centred => {
            let v = rng.random_range(0.8..5.0);
            Plan { n_ref: fixed(rng.random_range(-0.2..0.2)), v_ref: v, v0: v }
        }
        Behaviour::CloseWall => {
            let v = rng.random_range(0.8..4.0);
            Plan { n_ref: fixed(side * (half_width - rng.random_range(0.08..0.35))), v_ref: v, v0: v }
        }
        Behaviour::Oscillating => {
            let (amp, period, phase) = (rng.random_range(0.35..0.8), rng.random_range(1.3..3.0), rng.random_range(0.0..std::f64::consts::TAU));
            let v = rng.random_range(1.0..4.0);
            Plan { n_ref: Box::new(move |t| amp * (std::f64::consts::TAU * t / period + phase).sin()), v_ref: v, v0: v }
        }
        Behaviour::OffLine => {
            let v = rng.random_range(0.8..5.0);
            Plan { n_ref: fixed(side * rng.random_range(0.35..0.65)), v_ref: v, v0: v }
        }
        Behaviour::Reversing => {
            let v = -rng.random_range(0.4..2.0);
            Plan { n_ref: fixed(rng.random_range(-0.4..0.4)), v_ref: v, v0: v }
        }
        Behaviour::Stopping => Plan { n_ref: fixed(rng.random_range(-0.3..0.3)), v_ref: 0.0, v0: rng.random_range(0.0..1.2) },
        Behaviour::Slow => {
            let v = rng.random_range(0.3..2.8);
            Plan { n_ref: fixed(rng.random_range(-0.3..0.3)), v_ref: v, v0: v }
        }
        Behaviour::Fast => {
            let v = rng.random_range(3.2..6.5);
            Plan { n_ref: fixed(rng.random_range(-0.25..0.25)), v_ref: v, v0: v }
        }
    }
}

/// Lateral/heading/speed feedback; cheap enough for dataset rollouts.
fn feedback(track: &TrackSpec, veh: &VehicleParams, st: &VehicleState, n_ref: f64, v_ref: f64, dt: f64) -> ControlInput {
    let (s, n, dphi) = (st.pose.s, st.pose.n, st.pose.delta_phi);
    let dir = if v_ref.abs() > 1e-6 { v_ref.signum() } else if st.v < 0.0 { -1.0 } else { 1.0 };
    let v_eff = dir * st.v.abs().max(0.3);
    let kappa = track.curvature_at(s);
    let dphi_des = (-2.0 * (n - n_ref) * dir).clamp(-0.6, 0.6);
    let turn = kappa * dphi.cos() / (1.0 - kappa * n).max(0.1) - 4.0 * (dphi - dphi_des) / v_eff;
    let delta_des = (veh.wheelbase * turn).atan().clamp(-veh.delta_max, veh.delta_max);
    let max_rate = veh.ddelta_max * dt / 0.05;
    ControlInput::new((delta_des - st.delta).clamp(-max_rate, max_rate), (3.0 * (v_ref - st.v)).clamp(-5.0, 5.0))
}

/// One seeded rollout ending in a sampled window.
pub fn rollout_window(track: &TrackSpec, veh: &VehicleParams, b: Behaviour, rng: &mut ChaCha8Rng, window: &DecisionConfig, dt: f64) -> StateSnapshot {
    let s0 = rng.random_range(0.0..track.total_length());
    let half = track.width_left_at(s0).min(track.width_right_at(s0));
    let p = plan(b, rng, half);
    let n0 = (p.n_ref)(0.0);
    let delta0 = (veh.wheelbase * track.curvature_at(s0)).atan();
    let mut sim = Simulation::new(track, *veh, VehicleState::new(s0, n0, 0.0, delta0, p.v0));
    let steps = ((window.window + 1.0) / dt).round() as usize;
    for _ in 0..steps {
        let st = *sim.state();
        let u = feedback(track, veh, &st, (p.n_ref)(st.t), p.v_ref, dt);
        if sim.tick(track, u, dt).is_err() {
            break;
        }
    }
    sample_window(sim.log(), window.window, window.samples, track).expect("rollout covers the window")
}

fn item_rng(seed: u64, stream: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(i as u128 * 1024);
    rng
}

/// `n` labelled windows, behaviours in rotation, every window labelled
/// against every command.
pub fn gen_state_dataset(n: usize, seed: u64, track: &TrackSpec, cfg: &RunConfig, commands: &[CommandSpec]) -> Vec<LabeledState> {
    (0..n)
        .map(|i| {
            let mut rng = item_rng(seed, 1, i);
            let behaviour = Behaviour::ALL[i % Behaviour::ALL.len()];
            let snapshot = rollout_window(track, &cfg.vehicle, behaviour, &mut rng, &cfg.decision, cfg.dt);
            let labels = commands.iter().map(|c| (c.id.clone(), label_adherence(&snapshot, c))).collect();
            LabeledState { id: i, behaviour, snapshot, labels }
        })
        .collect()
}

/// Fraction of adherent labels over all pairs.
pub fn base_rate(dataset: &[LabeledState]) -> f64 {
    let (pos, total) = dataset.iter().flat_map(|d| d.labels.values()).fold((0usize, 0usize), |(p, t), &l| (p + l as usize, t + 1));
    pos as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub correct: usize,
    pub total: usize,
    /// Percent.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub model: String,
    pub rag: bool,
    pub pairs: usize,
    pub correct: usize,
    pub parse_failures: usize,
    pub per_category: BTreeMap<String, CategoryScore>,
    /// Mean of the per-category accuracies, percent.
    pub average: f64,
}

impl DecisionReport {
    pub fn table(&self) -> String {
        let names: Vec<&str> = Category::ALL.iter().map(|c| c.name()).filter(|n| self.per_category.contains_key(*n)).collect();
        let mut out = format!("{:<24} {:<4}", "Model", "RAG");
        for n in &names {
            out += &format!(" {n:>11}");
        }
        out += &format!(" {:>13}\n", "Avg. Accuracy");
        out += &format!("{:<24} {:<4}", self.model, if self.rag { "yes" } else { "no" });
        for n in &names {
            out += &format!(" {:>10.2}%", self.per_category[*n].accuracy);
        }
        out += &format!(" {:>12.2}%\n", self.average);
        out
    }
}

/// Runs every (state, command) pair through the decision stage; predicted
/// adherence is a Continue outcome. Parse and gateway failures count as wrong.
pub fn eval_decision_accuracy(dataset: &[LabeledState], commands: &[CommandSpec], engine: &Engine) -> DecisionReport {
    let mut per: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
    let mut parse_failures = 0;
    for item in dataset {
        for c in commands {
            let Some(&label) = item.labels.get(&c.id) else { continue };
            let rec = engine.decide(&c.prompt, &item.snapshot);
            let ok = match &rec.outcome {
                Ok(o) => o.is_continue() == label,
                Err(_) => {
                    parse_failures += 1;
                    false
                }
            };
            let e = per.entry(c.category).or_default();
            e.0 += ok as usize;
            e.1 += 1;
        }
    }
    let per_category: BTreeMap<String, CategoryScore> = per
        .iter()
        .map(|(cat, &(correct, total))| {
            (cat.name().to_string(), CategoryScore { correct, total, accuracy: 100.0 * correct as f64 / total as f64 })
        })
        .collect();
    let correct = per.values().map(|v| v.0).sum();
    let pairs = per.values().map(|v| v.1).sum();
    let average = if per_category.is_empty() {
        0.0
    } else {
        per_category.values().map(|s| s.accuracy).sum::<f64>() / per_category.len() as f64
    };
    DecisionReport { model: engine.gateway.tag(), rag: engine.rag.is_some(), pairs, correct, parse_failures, per_category, average }
}

/// A backend that answers every dataset prompt from its label: Continue when
/// the window adheres, otherwise a change restating the command.
pub fn oracle_backend(dataset: &[LabeledState], commands: &[CommandSpec], engine: &Engine) -> FnBackend {
    let mut answers: HashMap<String, String> = HashMap::new();
    for item in dataset {
        for c in commands {
            let Some(&label) = item.labels.get(&c.id) else { continue };
            let (prompt, _) = engine.decision_prompt(&c.prompt, &item.snapshot);
            let text = if label { CONTINUE_TEXT.to_string() } else { format!("Action: b) Change behavior\nInstruction: {}", c.prompt) };
            answers.insert(hash_prompt(&prompt), text);
        }
    }
    FnBackend::new("oracle", move |req| answers.get(&req.hash()).cloned())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ScenarioId {
    Centerline,
    RefVelocity,
    Reversing,
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "E_C")]
    Centerline,
    #[serde(rename = "E_V")]
    Velocity,
    #[serde(rename = "E_R")]
    Reversing,
    #[serde(rename = "E_S")]
    Smoothness,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Centerline => "E_C",
            Metric::Velocity => "E_V",
            Metric::Reversing => "E_R",
            Metric::Smoothness => "E_S",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlScenario {
    pub id: ScenarioId,
    pub instruction: String,
    pub metric: Metric,
    pub reference: f64,
    /// Measured span after the settle period [s].
    pub duration: f64,
    pub settle: f64,
}

impl ControlScenario {
    pub fn get(id: ScenarioId) -> Self {
        let (instruction, metric, reference) = match id {
            ScenarioId::Centerline => ("Drive as far away from the walls as possible!", Metric::Centerline, 0.0),
            ScenarioId::RefVelocity => ("Follow the reference velocity of 1.25 m/s as closely as possible!", Metric::Velocity, 1.25),
            ScenarioId::Reversing => ("Drive the track in reverse at -1 m/s!", Metric::Reversing, -1.0),
            ScenarioId::Smooth => ("Reduce jerkyness!", Metric::Smoothness, 0.0),
        };
        Self { id, instruction: instruction.into(), metric, reference, duration: 60.0, settle: 5.0 }
    }

    pub fn all() -> Vec<Self> {
        [ScenarioId::Centerline, ScenarioId::RefVelocity, ScenarioId::Reversing, ScenarioId::Smooth].into_iter().map(Self::get).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Scenario error; `None` when the run did not complete.
    pub error: Option<f64>,
    pub not_completed: Option<String>,
    /// Mean speed over the measured span.
    pub mean_v: f64,
    /// Largest |sample - reference| of the metric series.
    pub max_deviation: f64,
    pub min_v: f64,
    pub max_v: f64,
    pub samples: usize,
}

/// Closed-loop run from standstill on the centerline at s = 0 with fixed
/// parameters.
pub fn run_with_params(cfg: &RunConfig, track: &TrackSpec, scenario: &ControlScenario, params: &MpcParams) -> RunResult {
    let dt = cfg.dt;
    let mut sim = Simulation::new(track, cfg.vehicle, VehicleState::new(0.0, 0.0, 0.0, 0.0, 0.0));
    let mut ctl = MpcController::new(cfg.horizon, cfg.vehicle, cfg.mpc, dt);
    let settle_steps = (scenario.settle / dt).round() as usize;
    let total = settle_steps + (scenario.duration / dt).round() as usize;
    let (mut ns, mut vs) = (Vec::with_capacity(total), Vec::with_capacity(total));
    let mut failure = None;
    for k in 0..total {
        let (u, _) = ctl.control(sim.state(), track, params);
        match sim.tick(track, u, dt) {
            Ok(st) if st.is_finite() => {}
            Ok(_) => {
                failure = Some("diverged: non-finite state".to_string());
                break;
            }
            Err(e) => {
                failure = Some(format!("diverged: {e}"));
                break;
            }
        }
        if k + 1 >= settle_steps {
            ns.push(sim.state().pose.n);
            vs.push(sim.state().v);
        }
    }
    if failure.is_none() && sim.crash().crashed {
        failure = Some(format!("crashed at t = {:.2} s and did not recover", sim.crash().since.unwrap_or(0.0)));
    }
    let series = match scenario.metric {
        Metric::Centerline => ns,
        Metric::Velocity | Metric::Reversing => vs.clone(),
        // Differences start at the first measured sample, so the settle
        // transient does not leak in.
        Metric::Smoothness => finite_difference(&vs, dt),
    };
    let fold = |f: fn(f64, f64) -> f64, init: f64| vs.iter().copied().fold(init, f);
    RunResult {
        error: if failure.is_some() { None } else { rmse(&series, scenario.reference).ok() },
        not_completed: failure,
        mean_v: if vs.is_empty() { f64::NAN } else { vs.iter().sum::<f64>() / vs.len() as f64 },
        max_deviation: series.iter().fold(0.0, |m, x| m.max((x - scenario.reference).abs())),
        min_v: fold(f64::min, f64::INFINITY),
        max_v: fold(f64::max, f64::NEG_INFINITY),
        samples: series.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub id: ScenarioId,
    pub instruction: String,
    pub metric: Metric,
    pub reference: f64,
    pub baseline: RunResult,
    pub adapted: RunResult,
    /// Percent; `None` when either run is N.C. or the baseline error is 0.
    pub improvement: Option<f64>,
    pub update: Option<ParamUpdate>,
    pub response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub model: String,
    pub rag: bool,
    pub scenarios: Vec<ScenarioReport>,
    /// Mean over scenarios with an improvement value.
    pub average_improvement: Option<f64>,
    /// Scenarios left out of the average.
    pub excluded: Vec<ScenarioId>,
}

impl ControlReport {
    pub fn table(&self) -> String {
        let cell = |r: &ScenarioReport| match (r.adapted.error, r.improvement) {
            (Some(e), Some(i)) => format!("{e:.3} ({i:.1}%)"),
            (Some(e), None) => format!("{e:.3} (n/a)"),
            (None, _) => "N.C.".to_string(),
        };
        let mut head = format!("{:<24} {:<4}", "Model", "RAG");
        let mut base = format!("{:<24} {:<4}", "MPC baseline", "");
        let mut row = format!("{:<24} {:<4}", self.model, if self.rag { "yes" } else { "no" });
        for r in &self.scenarios {
            head += &format!(" {:>18}", r.metric.name());
            base += &format!(" {:>18}", r.baseline.error.map_or("N.C.".to_string(), |e| format!("{e:.3}")));
            row += &format!(" {:>18}", cell(r));
        }
        let avg = self.average_improvement.map_or("n/a".to_string(), |a| format!("{a:.1}%"));
        let dagger = if self.excluded.is_empty() { "" } else { " (excl. N.C./n/a)" };
        format!("{head} {:>12}\n{base}\n{row} {avg:>12}{dagger}\n", "Avg. Impr.")
    }
}

/// Baseline on the default parameters, then one adaptation cycle with the
/// scenario instruction applied at t = 0 and the same run on the result.
pub fn run_control_scenario(cfg: &RunConfig, track: &TrackSpec, scenario: &ControlScenario, engine: &Engine) -> ScenarioReport {
    let store = ParamStore::new(MpcParams::default());
    let baseline = run_with_params(cfg, track, scenario, &store.snapshot());
    let rec = engine.adapt(&scenario.instruction, &store, 0.0);
    let adapted = run_with_params(cfg, track, scenario, &store.snapshot());
    let improvement = match (baseline.error, adapted.error) {
        (Some(b), Some(a)) => improvement(b, a).ok(),
        _ => None,
    };
    ScenarioReport {
        id: scenario.id,
        instruction: scenario.instruction.clone(),
        metric: scenario.metric,
        reference: scenario.reference,
        baseline,
        adapted,
        improvement,
        update: rec.update,
        response: rec.request.response,
    }
}

pub fn control_report(engine: &Engine, scenarios: Vec<ScenarioReport>) -> ControlReport {
    let done: Vec<f64> = scenarios.iter().filter_map(|s| s.improvement).collect();
    let excluded = scenarios.iter().filter(|s| s.improvement.is_none()).map(|s| s.id).collect();
    ControlReport {
        model: engine.gateway.tag(),
        rag: engine.rag.is_some(),
        average_improvement: (!done.is_empty()).then(|| done.iter().sum::<f64>() / done.len() as f64),
        excluded,
        scenarios,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Decision,
    Mpc,
}

impl DatasetKind {
    pub fn default_size(self) -> usize {
        match self {
            DatasetKind::Decision => DEFAULT_DECISION_PAIRS,
            DatasetKind::Mpc => DEFAULT_MPC_PAIRS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetunePair {
    pub prompt: String,
    pub response: String,
}

/// Scales every number in `text` by a random factor in [0.8, 1.2], keeping
/// one decimal; hint numbers are the thresholds.
fn jitter_numbers(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::with_capacity(text.len());
    let mut num = String::new();
    let flush = |num: &mut String, out: &mut String, rng: &mut ChaCha8Rng| {
        if num.is_empty() {
            return;
        }
        match num.parse::<f64>() {
            Ok(x) if !num.ends_with('.') => out.push_str(&format!("{:.1}", x * rng.random_range(0.8..1.2))),
            _ => out.push_str(num),
        }
        num.clear();
    };
    for ch in text.chars() {
        if ch.is_ascii_digit() || (ch == '.' && !num.is_empty()) {
            num.push(ch);
        } else {
            flush(&mut num, &mut out, rng);
            out.push(ch);
        }
    }
    flush(&mut num, &mut out, rng);
    out
}

const EXTRA_DECISION_PROMPTS: [&str; 4] = ["Drive normally!", "Drive safely!", "Drive slower than 2 m/s!", "Keep away from the right wall!"];

fn mpc_instruction(rng: &mut ChaCha8Rng) -> String {
    let r1 = |rng: &mut ChaCha8Rng, a: f64, b: f64| (rng.random_range(a..b) * 10.0_f64).round() / 10.0;
    match rng.random_range(0..7) {
        0 => {
            let lo = r1(rng, 0.5, 3.0);
            format!("Drive at speeds between {lo} and {} m/s!", lo + r1(rng, 0.3, 2.0))
        }
        1 => format!("Follow the reference velocity of {} m/s as closely as possible!", r1(rng, 0.5, 5.0)),
        2 => format!("Drive the track in reverse at -{} m/s!", r1(rng, 0.5, 2.0)),
        3 => format!("Keep at least {} m away from the walls!", r1(rng, 0.1, 0.9)),
        4 => "Reduce jerkyness!".to_string(),
        5 => format!("Limit the lateral acceleration to {} m/s^2!", r1(rng, 1.0, 15.0)),
        _ => format!("Drive faster than {} m/s!", r1(rng, 2.0, 8.0)),
    }
}

/// Emits `n` prompt/response pairs. Decision prompts use random windows and
/// commands with jittered hint thresholds; MPC prompts use instructions with
/// random numbers. Gateway failures skip the pair and are counted.
pub fn gen_finetune_dataset(
    kind: DatasetKind,
    n: usize,
    seed: u64,
    engine: &Engine,
    track: &TrackSpec,
    cfg: &RunConfig,
) -> (Vec<FinetunePair>, usize) {
    let commands = bundled_commands();
    let mut out = Vec::with_capacity(n);
    let mut skipped = 0;
    for i in 0..n {
        let mut rng = item_rng(seed, 2 + kind as u64, i);
        let prompt = match kind {
            DatasetKind::Decision => {
                let b = Behaviour::ALL[rng.random_range(0..Behaviour::ALL.len())];
                let snap = rollout_window(track, &cfg.vehicle, b, &mut rng, &cfg.decision, cfg.dt);
                let pick = rng.random_range(0..commands.len() + EXTRA_DECISION_PROMPTS.len());
                let human = match commands.get(pick) {
                    Some(c) => c.prompt.clone(),
                    None => EXTRA_DECISION_PROMPTS[pick - commands.len()].to_string(),
                };
                let hints: Vec<String> = match &engine.rag {
                    Some(rag) => rag
                        .entries(MemoryKind::DecisionHint)
                        .map(|e| {
                            let r = e.render();
                            let (head, body) = r.split_once('\n').unwrap_or(("", &r));
                            format!("{head}\n{}", jitter_numbers(body, &mut rng))
                        })
                        .collect(),
                    None => Vec::new(),
                };
                build_decision_prompt(&human, &snap, &hints)
            }
            DatasetKind::Mpc => {
                let instr = mpc_instruction(&mut rng);
                let (_, memories) = match &engine.rag {
                    Some(rag) => rag
                        .retrieve(&instr, MemoryKind::MpcMemory, engine.retrieval.memory_k)
                        .map(|v| v.iter().map(|e| (e.id, e.render())).unzip())
                        .unwrap_or_default(),
                    None => (Vec::<u32>::new(), Vec::<String>::new()),
                };
                build_adapter_prompt(&instr, BASE_MEMORY, &memories)
            }
        };
        let mut req = ChatRequest::new(prompt.clone());
        req.max_tokens = engine.max_tokens;
        match engine.gateway.complete(&req) {
            Ok(c) => out.push(FinetunePair { prompt, response: c.text }),
            Err(e) => {
                tracing::warn!(item = i, error = %e, "pair skipped");
                skipped += 1;
            }
        }
    }
    (out, skipped)
}

/// Sends the same request `runs` times in sequence and summarizes latency
/// and throughput.
pub fn stats_protocol(backend: &dyn Backend, request: &ChatRequest, runs: usize) -> Result<(Vec<GenerationStats>, StatsSummary), GatewayError> {
    let mut stats = Vec::with_capacity(runs);
    for _ in 0..runs {
        stats.push(backend.complete(request)?.stats);
    }
    let summary = stats_summary(&stats).map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
    Ok((stats, summary))
}

/// Engine over `gateway` configured like `cfg`.
pub fn engine_for(cfg: &RunConfig, gateway: crate::gateway::Gateway) -> Engine {
    let mut e = Engine::new(gateway);
    e.retrieval = cfg.retrieval;
    e.max_tokens = cfg.backend.max_tokens;
    if !cfg.rag {
        e.rag = None;
    }
    e
}

/// Convenience for tests and the CLI: an `Arc`ed engine.
pub fn shared_engine(cfg: &RunConfig, gateway: crate::gateway::Gateway) -> Arc<Engine> {
    Arc::new(engine_for(cfg, gateway))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_keeps_words() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = jitter_numbers("smaller than 0.4m, the car", &mut rng);
        assert!(out.starts_with("smaller than 0."), "{out}");
        assert!(out.ends_with("m, the car"));
    }

    #[test]
    fn scenario_table_has_four_metrics() {
        let names: Vec<_> = ControlScenario::all().iter().map(|s| s.metric.name()).collect();
        assert_eq!(names, ["E_C", "E_V", "E_R", "E_S"]);
    }
}
