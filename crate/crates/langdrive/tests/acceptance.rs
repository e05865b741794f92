//! Acceptance suite. One line per criterion; exits non-zero if any fails.
//! Run with `cargo test --test acceptance`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use langdrive::config::{BackendKind, RunConfig};
use langdrive::eval::{self, ControlScenario, DatasetKind, ScenarioId, CONTINUE_TEXT};
use langdrive::gateway::{Backend, ChatRequest, ScriptedBackend};
use langdrive::orchestrator::{crashed_start, LoopOptions, Orchestrator};
use langdrive::store::ParamStore;
use langdrive_core::adapter::{parse_params, validate_and_clamp, RawParams};
use langdrive_core::decision::{parse_decision, DecisionAction};
use langdrive_core::labels::{bundled_commands, label_adherence};
use langdrive_core::metrics::{stats_summary, GenerationStats};
use langdrive_core::mpc::assemble::MpcSettings;
use langdrive_core::mpc::qp::{solve_box_qp, BoxQp, QpStatus};
use langdrive_core::mpc::MpcController;
use langdrive_core::track::shapes;
use langdrive_core::vehicle::{rk4, step, ControlInput, SimError, Simulation};
use langdrive_core::{FrenetPose, HorizonConfig, MpcParams, ParamSchema, VehicleParams, VehicleState};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> String {
    let path = format!("{}/../core/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn cfg() -> RunConfig {
    RunConfig::default()
}

fn geometry() -> Outcome {
    let t0 = Instant::now();
    let track = langdrive::io::bundled_oval();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = rng.random_range(0.0..track.total_length());
        let n = rng.random_range(-track.width_right_at(s)..track.width_left_at(s));
        let dphi = rng.random_range(-3.0..3.0);
        let (x, y, h) = track.frenet_to_cartesian(FrenetPose::new(s, n, dphi)).map_err(|e| e.to_string())?;
        let back = track.cartesian_to_frenet(x, y, h).map_err(|e| e.to_string())?;
        let (x2, y2, _) = track.frenet_to_cartesian(back).map_err(|e| e.to_string())?;
        worst = worst
            .max(track.s_difference(back.s, s).abs())
            .max((back.n - n).abs())
            .max(langdrive_core::wrap_angle(back.delta_phi - dphi).abs())
            .max(((x2 - x).powi(2) + (y2 - y).powi(2)).sqrt());
    }
    ensure(worst <= 1e-6, || format!("round-trip error {worst:e}"))?;
    let mut kerr: f64 = 0.0;
    for r in [2.0, 5.0, 12.0] {
        let c = shapes::circle(r, 400, 1.0);
        for i in 0..50 {
            let s = c.total_length() * i as f64 / 50.0;
            kerr = kerr.max((c.curvature_at(s) - 1.0 / r).abs());
        }
    }
    ensure(kerr <= 1e-3, || format!("curvature error {kerr:e}"))?;
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.1} s"))?;
    Ok(format!("1000 round-trips, max err {worst:.1e}; circle curvature err {kerr:.1e}; {secs:.2} s"))
}

fn dynamics() -> Outcome {
    let track = langdrive::io::bundled_oval();
    let p = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let dt = 0.02;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let s = rng.random_range(0.0..track.total_length());
        let y0 = [s, rng.random_range(-0.9..0.9), rng.random_range(-0.5..0.5), rng.random_range(-2.0..7.0)];
        let delta = rng.random_range(-0.4..0.4);
        let a = rng.random_range(-5.0..5.0);
        let coarse = rk4(&track, &p, y0, delta, a, dt).map_err(|e| e.to_string())?;
        let mut fine = y0;
        for _ in 0..1000 {
            fine = rk4(&track, &p, fine, delta, a, dt / 1000.0).map_err(|e| e.to_string())?;
        }
        for i in 0..4 {
            worst = worst.max((coarse[i] - fine[i]).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("RK4 vs sub-stepped: {worst:e}"))?;
    // kappa = 0.5 on this circle, so n = 2 sits on the centre of curvature.
    let circle = shapes::circle(2.0, 200, 3.0);
    let st = VehicleState::new(1.0, 2.0, 0.0, 0.0, 1.0);
    let r = step(&st, ControlInput::default(), dt, &circle, &p);
    ensure(matches!(r, Err(SimError::Singularity { .. })), || format!("singular input gave {r:?}"))?;
    Ok(format!("200 steps, max err {worst:.1e}; singularity reported"))
}

fn qp_solver() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let h = 1e-3;
    let (mut optimal, mut worst_kkt): (usize, f64) = (0, 0.0);
    for case in 0..500 {
        let th: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (l1, l2) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        let (c, s) = (th.cos(), th.sin());
        let hm = DMatrix::from_row_slice(2, 2, &[l1 * c * c + l2 * s * s, (l1 - l2) * c * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c]);
        let g = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let lb = DVector::from_fn(2, |_, _| rng.random_range(-1.0..0.0));
        let ub = DVector::from_fn(2, |i, _| lb[i] + rng.random_range(0.1..1.0));
        let qp = BoxQp::new(hm, g, lb.clone(), ub.clone()).map_err(|e| e.to_string())?;
        let r = solve_box_qp(&qp, 200, 1e-10);
        ensure(r.history.windows(2).all(|w| w[1] <= w[0]), || format!("case {case}: objective increased"))?;
        if r.status == QpStatus::Optimal {
            optimal += 1;
            worst_kkt = worst_kkt.max(r.kkt_residual);
            ensure(r.kkt_residual <= 1e-6, || format!("case {case}: KKT residual {:e}", r.kkt_residual))?;
        }
        let (nx, ny) = (((ub[0] - lb[0]) / h) as usize, ((ub[1] - lb[1]) / h) as usize);
        let (mut best, mut arg) = (f64::INFINITY, (0.0, 0.0));
        for i in 0..=nx {
            let x0 = lb[0] + i as f64 * h;
            for j in 0..=ny {
                let x1 = lb[1] + j as f64 * h;
                let f = 0.5 * (qp.h[(0, 0)] * x0 * x0 + 2.0 * qp.h[(0, 1)] * x0 * x1 + qp.h[(1, 1)] * x1 * x1) + qp.g[0] * x0 + qp.g[1] * x1;
                if f < best {
                    best = f;
                    arg = (x0, x1);
                }
            }
        }
        ensure((r.x[0] - arg.0).abs() <= h && (r.x[1] - arg.1).abs() <= h, || format!("case {case}: {:?} vs grid {arg:?}", r.x))?;
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("500 QPs within one grid cell, {optimal} optimal exits, max KKT {worst_kkt:.1e}; {secs:.2} s"))
}

fn random_params(rng: &mut ChaCha8Rng) -> MpcParams {
    loop {
        let v_min = rng.random_range(0.5..2.5);
        let p = MpcParams {
            qv: rng.random_range(0.1..2.0),
            qn: rng.random_range(1.0..100.0),
            qalpha: rng.random_range(0.0..100.0),
            qac: rng.random_range(0.0..1.0),
            qddelta: rng.random_range(0.0..100.0),
            alat_max: rng.random_range(2.0..20.0),
            a_min: rng.random_range(-20.0..-1.0),
            a_max: rng.random_range(1.0..20.0),
            v_min,
            v_max: v_min + rng.random_range(0.0..3.0),
            track_safety_margin: rng.random_range(0.0..1.0),
        };
        if p.validate().is_ok() {
            return p;
        }
    }
}

fn mpc_safety() -> Outcome {
    let c = cfg();
    let track = langdrive::io::bundled_oval();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let tol = 1e-6;
    let (mut ticks, mut excursions, mut contacts) = (0usize, 0usize, 0usize);
    for episode in 0..20 {
        let params = random_params(&mut rng);
        let s0 = rng.random_range(0.0..track.total_length());
        let v0 = rng.random_range(params.v_min..=params.v_max);
        let mut sim = Simulation::new(&track, c.vehicle, VehicleState::new(s0, rng.random_range(-0.9..0.9), 0.0, 0.0, v0));
        let mut ctl = MpcController::new(HorizonConfig::default(), c.vehicle, MpcSettings::default(), c.dt);
        for k in 0..500 {
            let st = *sim.state();
            let (u, res) = ctl.control(&st, &track, &params);
            let sol = res.map_err(|e| format!("episode {episode} tick {k}: {e}"))?;
            ensure(u.a >= params.a_min - tol && u.a <= params.a_max + tol, || format!("episode {episode} tick {k}: a = {} outside [{}, {}]", u.a, params.a_min, params.a_max))?;
            let corridor_l = track.width_left_at(st.pose.s) - params.track_safety_margin;
            let corridor_r = track.width_right_at(st.pose.s) - params.track_safety_margin;
            if st.pose.n > corridor_l + tol || st.pose.n < -corridor_r - tol {
                excursions += 1;
                ensure(sol.slack_max > 0.0, || format!("episode {episode} tick {k}: n = {} beyond corridor with slack 0", st.pose.n))?;
            }
            let next = *sim.tick(&track, u, c.dt).map_err(|e| e.to_string())?;
            // A stop against the wall is the contact model, not the controller.
            let at_wall = next.pose.n >= track.width_left_at(next.pose.s) || next.pose.n <= -track.width_right_at(next.pose.s);
            if at_wall {
                contacts += 1;
                continue;
            }
            ensure(next.v >= params.v_min - tol && next.v <= params.v_max + tol, || format!("episode {episode} tick {k}: v = {} outside [{}, {}]", next.v, params.v_min, params.v_max))?;
            ticks += 1;
        }
    }
    ensure(ticks + contacts == 10_000, || format!("{ticks} ticks"))?;
    Ok(format!("10000 ticks over 20 random parameter sets; {excursions} corridor excursions, all with slack > 0; {contacts} wall contacts"))
}

fn scripted_engine() -> langdrive::engine::Engine {
    eval::engine_for(&cfg(), Arc::new(ScriptedBackend::bundled()))
}

fn reversing() -> Outcome {
    let t0 = Instant::now();
    let c = cfg();
    let track = c.load_track().map_err(|e| e.to_string())?;
    let r = eval::run_control_scenario(&c, &track, &ControlScenario::get(ScenarioId::Reversing), &scripted_engine());
    let accepted = r.update.as_ref().map(|u| u.accepted.clone()).unwrap_or_default();
    ensure(accepted.get("v_min") == Some(&-1.0) && accepted.get("v_max") == Some(&-1.0), || format!("scripted update {accepted:?}"))?;
    let mean_v = r.adapted.mean_v;
    ensure((-1.15..=-0.85).contains(&mean_v), || format!("mean v {mean_v}"))?;
    let imp = r.improvement.ok_or_else(|| format!("no improvement value: {:?} / {:?}", r.baseline.not_completed, r.adapted.not_completed))?;
    ensure(imp >= 50.0, || format!("E_R improvement {imp:.1}%"))?;
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "mean v {mean_v:.3}; E_R {:.3} -> {:.3} ({imp:.1}%); {secs:.1} s",
        r.baseline.error.unwrap_or(f64::NAN),
        r.adapted.error.unwrap_or(f64::NAN)
    ))
}

fn smoothness() -> Outcome {
    let c = cfg();
    let track = c.load_track().map_err(|e| e.to_string())?;
    let r = eval::run_control_scenario(&c, &track, &ControlScenario::get(ScenarioId::Smooth), &scripted_engine());
    let accepted = r.update.as_ref().map(|u| u.accepted.clone()).unwrap_or_default();
    let (qac, qdd) = (ParamSchema.get("qac").unwrap().max, ParamSchema.get("qddelta").unwrap().max);
    ensure(accepted.get("qac") == Some(&qac) && accepted.get("qddelta") == Some(&qdd), || format!("scripted update {accepted:?}"))?;
    let (b, a) = match (r.baseline.error, r.adapted.error) {
        (Some(b), Some(a)) => (b, a),
        _ => return Err(format!("run not completed: {:?} / {:?}", r.baseline.not_completed, r.adapted.not_completed)),
    };
    ensure(a < b, || format!("E_S {a} not below baseline {b}"))?;
    Ok(format!("E_S {b:.3} -> {a:.3} with qac = {qac}, qddelta = {qdd}"))
}

fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn parser_goldens() -> Outcome {
    let change = parse_decision(&fixture("decision_change.txt")).map_err(|e| e.to_string())?;
    ensure(change.action == DecisionAction::Change, || "expected a change".into())?;
    let want = "The car should increase its s-speed to a normal range of 5-7 m/s, reduce the oscillation in d-coordinate, \
                and move closer to the centerline to increase safety.";
    ensure(change.instruction.as_deref() == Some(want), || format!("instruction {:?}", change.instruction))?;

    let cont = parse_decision(&fixture("recovery_3_decide.txt")).map_err(|e| e.to_string())?;
    ensure(cont.action == DecisionAction::Continue && cont.instruction.is_none(), || format!("{cont:?}"))?;

    let raw = parse_params(&fixture("adapter_reverse.txt")).map_err(|e| e.to_string())?;
    let want_raw = map(&[
        ("qv", 0.1),
        ("qn", 40.0),
        ("qalpha", 50.0),
        ("ddelta_min", -5.0),
        ("ddelta_max", 0.0),
        ("dv_min", -50.0),
        ("dv_max", -1.0),
        ("v_min", -1.0),
        ("v_max", -1.0),
        ("boundary_inflation", 0.1),
    ]);
    ensure(raw.values == want_raw, || format!("raw map {:?}", raw.values))?;
    let up = validate_and_clamp(&raw, &ParamSchema, &MpcParams::default());
    let want_canon = map(&[
        ("a_max", 0.0),
        ("a_min", -20.0),
        ("qalpha", 50.0),
        ("qn", 40.0),
        ("qv", 0.1),
        ("track_safety_margin", 0.1),
        ("v_max", -1.0),
        ("v_min", -1.0),
    ]);
    ensure(up.accepted == want_canon, || format!("canonical map {:?}", up.accepted))?;
    Ok("change + instruction, continue, 10-key raw map -> 8-key canonical map".into())
}

const FUZZ_KEYS: [&str; 19] = [
    "qv", "qn", "qalpha", "qac", "qddelta", "alat_max", "a_min", "a_max", "v_min", "v_max", "track_safety_margin",
    "boundary_inflation", "dv_min", "dv_max", "ddelta_min", "ddelta_max", "horizon", "QN", "",
];

fn clamping_fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let store = ParamStore::new(MpcParams::default());
    let specials = [0.0, -0.0, f64::MAX, f64::MIN, 1e300, -1e300, f64::EPSILON];
    for case in 0..10_000 {
        let mut values = BTreeMap::new();
        for _ in 0..rng.random_range(0..12) {
            let k = FUZZ_KEYS[rng.random_range(0..FUZZ_KEYS.len())].to_string();
            let v = match rng.random_range(0..4) {
                0 => specials[rng.random_range(0..specials.len())],
                1 => rng.random_range(-1e6..1e6),
                _ => rng.random_range(-25.0..25.0),
            };
            values.insert(k, v);
        }
        let raw = RawParams { values, warnings: Vec::new() };
        let res = catch_unwind(AssertUnwindSafe(|| store.apply_raw(&raw, langdrive::store::Source::Ui, case as f64)));
        let (up, _) = res.map_err(|_| format!("case {case}: panic on {:?}", raw.values))?;
        let p = store.snapshot();
        p.validate().map_err(|e| format!("case {case}: {e} after {:?}", raw.values))?;
        for spec in ParamSchema.specs() {
            let v = p.get(spec.name).unwrap();
            ensure(spec.contains(v), || format!("case {case}: {} = {v}", spec.name))?;
        }
        ensure(up.accepted.keys().all(|k| ParamSchema.get(k).is_some()), || format!("case {case}: non-canonical key accepted"))?;
    }
    Ok("10000 random maps applied in sequence; store always valid, no panics".into())
}

fn decision_identity() -> Outcome {
    let t0 = Instant::now();
    let c = cfg();
    let track = c.load_track().map_err(|e| e.to_string())?;
    let commands = bundled_commands();
    let dataset = eval::gen_state_dataset(eval::DEFAULT_STATES, c.seed, &track, &c, &commands);
    let mut engine = scripted_engine();
    engine.gateway = Arc::new(eval::oracle_backend(&dataset, &commands, &engine));
    let oracle = eval::eval_decision_accuracy(&dataset, &commands, &engine);
    ensure(oracle.pairs == 1600, || format!("{} pairs", oracle.pairs))?;
    ensure(oracle.correct == oracle.pairs, || format!("oracle {}/{}", oracle.correct, oracle.pairs))?;

    // Adherence recounted from the windows themselves.
    let adherent: usize = dataset.iter().map(|d| commands.iter().filter(|c| label_adherence(&d.snapshot, c)).count()).sum();
    let engine = eval::engine_for(&c, Arc::new(ScriptedBackend::constant(CONTINUE_TEXT)));
    let always = eval::eval_decision_accuracy(&dataset, &commands, &engine);
    ensure(always.correct == adherent, || format!("always-Continue {} vs {adherent} adherent", always.correct))?;
    let secs = t0.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "oracle 1600/1600; always-Continue {}/1600 = base rate {:.4}; {secs:.1} s",
        always.correct,
        adherent as f64 / 1600.0
    ))
}

fn crash_recovery() -> Outcome {
    let mut c = cfg();
    c.backend.kind = BackendKind::Replay;
    let track = Arc::new(c.load_track().map_err(|e| e.to_string())?);
    let engine = eval::shared_engine(&c, c.backend.build().map_err(|e| e.to_string())?);
    let store = Arc::new(ParamStore::new(MpcParams::default()));
    let (initial, crash) = crashed_start(&track, 20.0);
    let mut orch = Orchestrator::new(track, &c, initial, Some(crash), store, engine, LoopOptions::from_config(&c));
    orch.set_prompt("Drive normally!");
    orch.run_for(30.0).map_err(|e| e.to_string())?;
    let log = orch.log();
    let reverse = log.iter().find(|e| (-1.15..=-0.85).contains(&e.v)).ok_or("never reached the -1 m/s band")?;
    ensure(log.iter().filter(|e| e.t < reverse.t).all(|e| e.crashed), || "crash cleared before reversing".into())?;
    let resume = log.iter().find(|e| e.t > reverse.t && e.v >= 1.4).ok_or("never resumed at >= 1.4 m/s")?;
    let cleared = log.iter().find(|e| !e.crashed).ok_or("crash never cleared")?;
    ensure(cleared.t > reverse.t, || "crash cleared before reversing".into())?;
    ensure(!orch.crash().crashed, || "crashed at the end".into())?;
    let changes: Vec<String> = orch.decisions().iter().filter_map(|d| d.record.instruction().map(String::from)).collect();
    ensure(changes.len() >= 2, || format!("decisions {changes:?}"))?;
    Ok(format!(
        "reverse at t = {:.2} s, crash cleared at {:.2} s, resumed {:.1} m/s at {:.2} s",
        reverse.t, cleared.t, resume.v, resume.t
    ))
}

fn datasets() -> Outcome {
    let c = cfg();
    let track = c.load_track().map_err(|e| e.to_string())?;
    let engine = scripted_engine();
    let mut counts = Vec::new();
    for kind in [DatasetKind::Decision, DatasetKind::Mpc] {
        let emit = || {
            let (pairs, skipped) = eval::gen_finetune_dataset(kind, kind.default_size(), 7, &engine, &track, &c);
            let mut buf = Vec::new();
            langdrive::io::write_jsonl(&pairs, &mut buf).unwrap();
            (buf, skipped)
        };
        let (a, skipped) = emit();
        let (b, _) = emit();
        let lines = a.iter().filter(|&&ch| ch == b'\n').count();
        ensure(skipped == 0 && lines == kind.default_size(), || format!("{kind:?}: {lines} lines, {skipped} skipped"))?;
        ensure(a == b, || format!("{kind:?}: output differs between runs"))?;
        counts.push(lines);
    }
    Ok(format!("{} decision and {} MPC lines, byte-identical on re-run", counts[0], counts[1]))
}

fn stats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(112);
    for _ in 0..100 {
        let n = rng.random_range(2..100);
        let runs: Vec<GenerationStats> =
            (0..n).map(|_| GenerationStats { output_tokens: rng.random_range(1..600), latency: rng.random_range(0.01..20.0) }).collect();
        let s = stats_summary(&runs).map_err(|e| e.to_string())?;
        // Welford's single-pass update as the reference.
        let (mut k, mut m, mut m2) = (0.0, 0.0, 0.0);
        for r in &runs {
            k += 1.0;
            let d = r.latency - m;
            m += d / k;
            m2 += d * (r.latency - m);
        }
        let sigma = (m2 / k).sqrt();
        ensure((s.mu_t - m).abs() <= 1e-9 && (s.sigma_t - sigma).abs() <= 1e-9, || format!("({}, {}) vs ({m}, {sigma})", s.mu_t, s.sigma_t))?;
    }
    let backend = ScriptedBackend::constant(CONTINUE_TEXT).with_latency(0.1);
    let (runs, s) = eval::stats_protocol(&backend as &dyn Backend, &ChatRequest::new("Drive normally!"), eval::STATS_RUNS).map_err(|e| e.to_string())?;
    ensure(runs.len() == 60 && s.runs == 60, || format!("{} runs", runs.len()))?;
    ensure((s.mu_t - 0.1).abs() <= 1e-12 && s.sigma_t.abs() <= 1e-12, || format!("mu {} sigma {}", s.mu_t, s.sigma_t))?;
    let tps = runs[0].output_tokens as f64 / 0.1;
    ensure((s.mean_tokens_per_second - tps).abs() <= 1e-9, || format!("tokens/s {}", s.mean_tokens_per_second))?;
    Ok(format!("100 random series match; 60 runs at 0.1 s -> mu {:.3}, sigma {:.3}, {:.0} tok/s", s.mu_t, s.sigma_t, s.mean_tokens_per_second))
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("geometry", geometry),
        ("dynamics", dynamics),
        ("qp-solver", qp_solver),
        ("mpc-safety", mpc_safety),
        ("reversing", reversing),
        ("smoothness", smoothness),
        ("parser-goldens", parser_goldens),
        ("clamping-fuzz", clamping_fuzz),
        ("decision-identity", decision_identity),
        ("crash-recovery", crash_recovery),
        ("datasets", datasets),
        ("stats", stats),
    ];
    let t0 = Instant::now();
    let mut failed = 0;
    for (name, check) in criteria {
        let res = catch_unwind(check).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match res {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed in {:.1} s", criteria.len() - failed, criteria.len(), t0.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
