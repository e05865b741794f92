//! Numerical checks against independent reference computations: brute force,
//! finite differences and fine sub-stepping.

use langdrive_core::mpc::assemble::{assemble_qp, build_reference, MpcSettings};
use langdrive_core::mpc::model::{discrete_step, linearize, Input, State};
use langdrive_core::mpc::qp::{solve_box_qp, BoxQp, QpStatus};
use langdrive_core::mpc::{solve_mpc, HorizonConfig, MpcController, MpcParams, SolveStatus};
use langdrive_core::track::shapes;
use langdrive_core::vehicle::{rk4, step, ControlInput, SimError, Simulation, VehicleParams, VehicleState};
use langdrive_core::{FrenetPose, TrackSpec};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn oval() -> TrackSpec {
    shapes::ellipse(10.0, 6.0, 400, 1.1)
}

fn random_state(rng: &mut ChaCha8Rng, track: &TrackSpec, n_max: f64) -> VehicleState {
    VehicleState::new(
        rng.random_range(0.0..track.total_length()),
        rng.random_range(-n_max..n_max),
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.4..0.4),
        rng.random_range(-2.0..7.0),
    )
}

#[test]
fn frenet_round_trip() {
    let track = oval();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = rng.random_range(0.0..track.total_length());
        let n = rng.random_range(-1.0..1.0);
        let dphi = rng.random_range(-3.0..3.0);
        let (x, y, h) = track.frenet_to_cartesian(FrenetPose::new(s, n, dphi)).unwrap();
        let back = track.cartesian_to_frenet(x, y, h).unwrap();
        worst = worst
            .max(track.s_difference(back.s, s).abs())
            .max((back.n - n).abs())
            .max(langdrive_core::wrap_angle(back.delta_phi - dphi).abs());
    }
    assert!(worst <= 1e-6, "worst round-trip error {worst}");
}

#[test]
fn rk4_matches_fine_substeps() {
    let track = oval();
    let p = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let dt = 0.02;
    for _ in 0..200 {
        let st = random_state(&mut rng, &track, 0.9);
        let a = rng.random_range(-5.0..5.0);
        let y0 = [st.pose.s, st.pose.n, st.pose.delta_phi, st.v];
        let coarse = rk4(&track, &p, y0, st.delta, a, dt).unwrap();
        let mut fine = y0;
        for _ in 0..1000 {
            fine = rk4(&track, &p, fine, st.delta, a, dt / 1000.0).unwrap();
        }
        for i in 0..4 {
            assert!((coarse[i] - fine[i]).abs() <= 1e-6, "component {i}: {} vs {}", coarse[i], fine[i]);
        }
    }
}

#[test]
fn singular_state_is_an_error() {
    let track = shapes::circle(2.0, 200, 3.0);
    let st = VehicleState::new(1.0, 2.5, 0.0, 0.0, 1.0);
    let r = step(&st, ControlInput::new(0.0, 0.0), 0.02, &track, &VehicleParams::default());
    assert!(matches!(r, Err(SimError::Singularity { .. })));
}

#[test]
fn jacobian_matches_central_differences() {
    let track = oval();
    let p = VehicleParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let dt = 0.05;
    for _ in 0..200 {
        let st = random_state(&mut rng, &track, 0.9);
        let x = State::from(st.as_array());
        let u = Input::new(rng.random_range(-0.1..0.1), rng.random_range(-5.0..5.0));
        let lin = linearize(&track, &p, &x, &u, dt).unwrap();
        let h = 1e-6;
        for j in 0..7 {
            let (mut xp, mut xm, mut up, mut um) = (x, x, u, u);
            if j < 5 {
                xp[j] += h;
                xm[j] -= h;
            } else {
                up[j - 5] += h;
                um[j - 5] -= h;
            }
            let fd = (discrete_step(&track, &p, &xp, &up, dt) - discrete_step(&track, &p, &xm, &um, dt)) / (2.0 * h);
            for i in 0..5 {
                let exact = if j < 5 { lin.a[(i, j)] } else { lin.b[(i, j - 5)] };
                assert!(
                    (exact - fd[i]).abs() <= 1e-5 * exact.abs().max(1.0),
                    "d x{i} / d z{j}: {exact} vs {}",
                    fd[i]
                );
            }
        }
    }
}

#[test]
fn box_qp_against_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let h = 1e-3;
    for case in 0..500 {
        // Eigenvalues in [0.5, 2] keep the grid minimiser next to the true one.
        let th: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (l1, l2) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        let (c, s) = (th.cos(), th.sin());
        let hm = DMatrix::from_row_slice(2, 2, &[l1 * c * c + l2 * s * s, (l1 - l2) * c * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c]);
        let g = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let lb = DVector::from_fn(2, |_, _| rng.random_range(-1.0..0.0));
        let ub = DVector::from_fn(2, |i, _| lb[i] + rng.random_range(0.1..1.0));
        let qp = BoxQp::new(hm, g, lb.clone(), ub.clone()).unwrap();
        let r = solve_box_qp(&qp, 200, 1e-10);
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0], "case {case}: objective increased");
        }
        if r.status == QpStatus::Optimal {
            assert!(r.kkt_residual <= 1e-6, "case {case}: kkt {}", r.kkt_residual);
        }
        let nx = ((ub[0] - lb[0]) / h) as usize;
        let ny = ((ub[1] - lb[1]) / h) as usize;
        let (mut best, mut arg) = (f64::INFINITY, (0.0, 0.0));
        for i in 0..=nx {
            let x0 = lb[0] + i as f64 * h;
            for j in 0..=ny {
                let x1 = lb[1] + j as f64 * h;
                let f = 0.5 * (qp.h[(0, 0)] * x0 * x0 + 2.0 * qp.h[(0, 1)] * x0 * x1 + qp.h[(1, 1)] * x1 * x1)
                    + qp.g[0] * x0
                    + qp.g[1] * x1;
                if f < best {
                    best = f;
                    arg = (x0, x1);
                }
            }
        }
        assert!(
            (r.x[0] - arg.0).abs() <= h && (r.x[1] - arg.1).abs() <= h,
            "case {case}: solver {:?} vs grid {arg:?}",
            r.x
        );
        assert!(r.objective <= best + 1e-12);
    }
}

#[test]
fn condensed_objective_equals_stagewise_cost() {
    let track = oval();
    let vehicle = VehicleParams::default();
    let horizon = HorizonConfig::default();
    let settings = MpcSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..20 {
        let st = random_state(&mut rng, &track, 0.5);
        let params = MpcParams { qn: rng.random_range(0.0..100.0), qac: rng.random_range(0.0..1.0), ..Default::default() };
        let inputs: Vec<Input> = (0..horizon.n).map(|_| Input::new(rng.random_range(-0.05..0.05), rng.random_range(-1.0..1.0))).collect();
        let reference = build_reference(&track, &vehicle, &horizon, &State::from(st.as_array()), inputs).unwrap();
        let cqp = assemble_qp(&track, &vehicle, &params, &settings, &reference);
        for _ in 0..5 {
            let z = DVector::from_fn(cqp.dim(), |_, _| rng.random_range(-0.1..0.1));
            let a = cqp.objective(&z);
            let b = cqp.direct_cost(&reference, &z);
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn corridor_violation_reports_slack() {
    let track = oval();
    let params = MpcParams { track_safety_margin: 1.0, ..Default::default() };
    // Corridor is |n| <= 0.1; start well outside it.
    let st = VehicleState::new(3.0, 0.5, 0.0, 0.0, 2.0);
    let sol = solve_mpc(&st, &track, &params, &HorizonConfig::default(), &VehicleParams::default(), &MpcSettings::default(), None).unwrap();
    assert!(sol.slack_max >= 0.4 - 1e-12);
    let inside = VehicleState::new(3.0, 0.0, 0.0, 0.0, 2.0);
    let sol = solve_mpc(&inside, &track, &MpcParams::default(), &HorizonConfig::default(), &VehicleParams::default(), &MpcSettings::default(), None).unwrap();
    assert_eq!(sol.slack_max, 0.0);
    assert_eq!(sol.status, SolveStatus::Optimal);
}

#[test]
fn inverted_bounds_give_braking_plan() {
    let track = oval();
    let params = MpcParams { v_min: 3.0, v_max: 1.0, ..Default::default() };
    let st = VehicleState::new(3.0, 0.0, 0.0, 0.0, 2.0);
    let sol = solve_mpc(&st, &track, &params, &HorizonConfig::default(), &VehicleParams::default(), &MpcSettings::default(), None).unwrap();
    assert_eq!(sol.status, SolveStatus::InfeasibleParams);
    assert!(sol.first_input.a < 0.0);
}

#[test]
fn lateral_offset_decays_in_closed_loop() {
    let track = oval();
    let vehicle = VehicleParams::default();
    let params = MpcParams::default();
    let mut ctl = MpcController::new(HorizonConfig::default(), vehicle, MpcSettings::default(), 0.02);
    let mut sim = Simulation::new(&track, vehicle, VehicleState::new(0.0, 0.5, 0.0, 0.0, 2.0));
    let mut peak_late: f64 = 0.0;
    for i in 0..500 {
        let (u, res) = ctl.control(sim.state(), &track, &params);
        assert!(res.is_ok());
        sim.tick(&track, u, 0.02).unwrap();
        if i >= 250 {
            peak_late = peak_late.max(sim.state().pose.n.abs());
        }
    }
    assert!(peak_late < 0.05, "offset after 5 s: {peak_late}");
}
