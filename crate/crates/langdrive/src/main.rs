use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use langdrive::config::{BackendKind, RunConfig};
use langdrive::eval::{self, ControlScenario, DatasetKind, ScenarioId};
use langdrive::gateway::ChatRequest;
use langdrive::orchestrator::{crashed_start, CycleMode, LoopOptions, Orchestrator, Timing};
use langdrive::store::{ParamStore, Source};
use langdrive_core::adapter::RawParams;
use langdrive_core::labels::bundled_commands;
use langdrive_core::{MpcParams, VehicleState};

#[derive(Parser)]
#[command(name = "langdrive", version, about = "Language-steered driving workbench")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// LLM backend.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Start {
    /// Standstill on the centerline at s = 0.
    Normal,
    /// Nose against the right wall with the crash latched.
    Crashed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Cmd {
    /// Headless closed-loop run in sim time.
    Simulate {
        /// Sim seconds to run.
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
        /// Human instruction.
        #[arg(long)]
        prompt: Option<String>,
        /// Sim time at which the instruction is given.
        #[arg(long, default_value_t = 0.0)]
        prompt_at: f64,
        #[arg(long, value_enum, default_value = "decision")]
        mode: CycleMode,
        #[arg(long, value_enum, default_value = "normal")]
        start: Start,
        /// Parameter overrides, `name=value`; journaled as CLI changes.
        #[arg(long = "set", value_name = "NAME=VALUE")]
        set: Vec<String>,
        /// Directory for the state log, decision log and journals.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decision accuracy over generated, labelled state windows.
    EvalDecision {
        #[arg(long, default_value_t = eval::DEFAULT_STATES)]
        states: usize,
        /// Answer from the labels instead of the configured backend.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        no_rag: bool,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Closed-loop adaptation scenarios against the default-parameter baseline.
    EvalControl {
        /// One scenario; all four when omitted.
        #[arg(long, value_enum)]
        scenario: Option<ScenarioId>,
        #[arg(long)]
        no_rag: bool,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Fine-tune pairs (`decision`, `mpc`) or labelled windows (`states`).
    GenDataset {
        #[arg(long, value_enum)]
        kind: GenKind,
        #[arg(long)]
        n: Option<usize>,
        /// Output file; `<kind>.jsonl` when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeated identical requests; latency and throughput summary.
    Stats {
        #[arg(long, default_value_t = eval::STATS_RUNS)]
        runs: usize,
        #[arg(long, default_value = "Drive normally!")]
        prompt: String,
    },
    /// Real-time loop with the telemetry/control service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, value_enum, default_value = "normal")]
        start: Start,
        #[arg(long, value_enum, default_value = "decision")]
        mode: CycleMode,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Decision,
    Mpc,
    States,
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(b) = cli.backend {
        cfg.backend.kind = b;
    }
    cfg.check()?;
    let track = Arc::new(cfg.load_track()?);

    match cli.cmd {
        Cmd::Simulate { duration, prompt, prompt_at, mode, start, set, out } => {
            let sink: Option<Box<dyn std::io::Write + Send>> = match &out {
                Some(dir) => {
                    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                    Some(Box::new(std::fs::File::create(dir.join("journal.jsonl"))?))
                }
                None => None,
            };
            let mut store = ParamStore::new(MpcParams::default());
            if let Some(s) = sink {
                store = store.with_sink(s);
            }
            let store = Arc::new(store);
            apply_overrides(&store, &cfg, &set)?;
            let engine = eval::shared_engine(&cfg, cfg.backend.build()?);
            let (initial, crash) = start_state(start, &track);
            let opts = LoopOptions { mode, ..LoopOptions::from_config(&cfg) };
            let mut orch = Orchestrator::new(track.clone(), &cfg, initial, crash, store.clone(), engine, opts);
            if let Some(p) = &prompt {
                orch.schedule_prompt(prompt_at, p);
            }
            let result = orch.run_for(duration);
            if let Some(dir) = &out {
                langdrive::io::write_state_log(orch.log(), std::fs::File::create(dir.join("state_log.csv"))?)?;
                langdrive::io::write_jsonl(&orch.decisions(), std::fs::File::create(dir.join("decisions.jsonl"))?)?;
                langdrive::io::write_jsonl(orch.adaptations(), std::fs::File::create(dir.join("adaptations.jsonl"))?)?;
            }
            let log = orch.log();
            let t_end = orch.time();
            let tail: Vec<f64> = log.iter().filter(|e| e.t > t_end - 10.0).map(|e| e.v).collect();
            let summary = serde_json::json!({
                "t": t_end,
                "ticks": orch.ticks(),
                "error": result.as_ref().err().map(|e| e.to_string()),
                "state": orch.state(),
                "crashed": orch.crash().crashed,
                "mean_v_last_10s": tail.iter().sum::<f64>() / tail.len().max(1) as f64,
                "decisions": orch.decisions().len(),
                "adaptations": orch.adaptations().len(),
                "params": store.snapshot().entries().into_iter().collect::<std::collections::BTreeMap<_, _>>(),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            result.map_err(|e| anyhow::anyhow!("simulation stopped: {e}"))?;
        }
        Cmd::EvalDecision { states, oracle, no_rag, format } => {
            if no_rag {
                cfg.rag = false;
            }
            let commands = bundled_commands();
            let dataset = eval::gen_state_dataset(states, cfg.seed, &track, &cfg, &commands);
            let mut engine = eval::engine_for(&cfg, cfg.backend.build()?);
            if oracle {
                engine.gateway = Arc::new(eval::oracle_backend(&dataset, &commands, &engine));
            }
            let report = eval::eval_decision_accuracy(&dataset, &commands, &engine);
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
                Format::Table => print!("{}", report.table()),
            }
        }
        Cmd::EvalControl { scenario, no_rag, format } => {
            if no_rag {
                cfg.rag = false;
            }
            let engine = eval::engine_for(&cfg, cfg.backend.build()?);
            let list = match scenario {
                Some(id) => vec![ControlScenario::get(id)],
                None => ControlScenario::all(),
            };
            let reports = list.iter().map(|s| eval::run_control_scenario(&cfg, &track, s, &engine)).collect();
            let report = eval::control_report(&engine, reports);
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
                Format::Table => print!("{}", report.table()),
            }
        }
        Cmd::GenDataset { kind, n, out } => {
            let name = match kind {
                GenKind::Decision => "decision",
                GenKind::Mpc => "mpc",
                GenKind::States => "states",
            };
            let path = out.unwrap_or_else(|| PathBuf::from(format!("{name}.jsonl")));
            let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            let (lines, skipped) = match kind {
                GenKind::States => {
                    let ds = eval::gen_state_dataset(n.unwrap_or(eval::DEFAULT_STATES), cfg.seed, &track, &cfg, &bundled_commands());
                    langdrive::io::write_jsonl(&ds, file)?;
                    (ds.len(), 0)
                }
                GenKind::Decision | GenKind::Mpc => {
                    let kind = if matches!(kind, GenKind::Decision) { DatasetKind::Decision } else { DatasetKind::Mpc };
                    let engine = eval::engine_for(&cfg, cfg.backend.build()?);
                    let (pairs, skipped) = eval::gen_finetune_dataset(kind, n.unwrap_or(kind.default_size()), cfg.seed, &engine, &track, &cfg);
                    langdrive::io::write_jsonl(&pairs, file)?;
                    (pairs.len(), skipped)
                }
            };
            println!("{}", serde_json::json!({ "path": path, "lines": lines, "skipped": skipped }));
        }
        Cmd::Stats { runs, prompt } => {
            if runs < 2 {
                bail!("--runs must be at least 2");
            }
            let gateway = cfg.backend.build()?;
            let mut req = ChatRequest::new(prompt);
            req.max_tokens = cfg.backend.max_tokens;
            let (_, summary) = eval::stats_protocol(gateway.as_ref(), &req, runs)?;
            println!("{}", serde_json::json!({ "backend": gateway.tag(), "summary": summary }));
        }
        Cmd::Serve { port, bind, start, mode } => {
            let addr: SocketAddr = format!("{bind}:{}", port.unwrap_or(cfg.port)).parse().context("bad bind address")?;
            let store = Arc::new(ParamStore::new(MpcParams::default()));
            apply_overrides(&store, &cfg, &[])?;
            let engine = eval::shared_engine(&cfg, cfg.backend.build()?);
            let (initial, crash) = start_state(start, &track);
            let opts = LoopOptions {
                mode,
                timing: Timing::Threaded,
                keep_log: Some(((cfg.decision.window + 1.0) / cfg.dt) as usize + 10),
                keep_decisions: Some(200),
                ..LoopOptions::from_config(&cfg)
            };
            let orch = Orchestrator::new(track.clone(), &cfg, initial, crash, store, engine, opts);
            let divisor = (1.0 / (cfg.telemetry_hz * cfg.dt)).round().max(1.0) as u64;
            let handle = langdrive::server::spawn_loop(orch, cfg.dt, divisor);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(langdrive::server::serve(addr, handle.state.clone()))?;
            handle.stop();
        }
    }
    Ok(())
}

fn start_state(start: Start, track: &langdrive_core::TrackSpec) -> (VehicleState, Option<langdrive_core::CrashStatus>) {
    match start {
        Start::Normal => (VehicleState::new(0.0, 0.0, 0.0, 0.0, 0.0), None),
        Start::Crashed => {
            let (s, c) = crashed_start(track, 20.0);
            (s, Some(c))
        }
    }
}

fn apply_overrides(store: &ParamStore, cfg: &RunConfig, set: &[String]) -> anyhow::Result<()> {
    let mut raw = RawParams { values: cfg.params.clone(), warnings: Vec::new() };
    for item in set {
        let (k, v) = item.split_once('=').with_context(|| format!("--set expects NAME=VALUE, got {item:?}"))?;
        let v: f64 = v.trim().parse().with_context(|| format!("--set {k}: not a number"))?;
        raw.values.insert(k.trim().to_string(), v);
    }
    if raw.values.is_empty() {
        return Ok(());
    }
    let (update, _) = store.apply_raw(&raw, Source::Cli, 0.0);
    for w in &update.warnings {
        tracing::warn!("{w}");
    }
    Ok(())
}
