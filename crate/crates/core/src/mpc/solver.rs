//! Receding-horizon solve: SQP over the condensed QP, exact repair of the
//! hard bounds, and a closed-loop controller wrapper.

use alloc::vec::Vec;
use nalgebra::DVector;

use super::assemble::{self, CondensedQp, DualError, DualQp, MpcSettings, Reference, FAMILIES};
use super::model::{Input, State};
use super::params::{HorizonConfig, MpcParams};
use super::qp::{solve_box_qp_from, QpStatus};
use crate::track::TrackSpec;
use crate::vehicle::{ControlInput, SimError, VehicleParams, VehicleState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    InfeasibleParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub first_input: ControlInput,
    pub predicted_states: Vec<VehicleState>,
    pub predicted_inputs: Vec<ControlInput>,
    pub cost: f64,
    /// Largest corridor violation over the predicted states, the current one
    /// included [m].
    pub slack_max: f64,
    /// SQP iterations.
    pub iterations: usize,
    pub qp_iterations: usize,
    pub status: SolveStatus,
    /// Gap between the last linear prediction and the nonlinear rollout.
    pub linearization_error: f64,
    pub warm_start: WarmStart,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MpcError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error("invalid horizon configuration")]
    Horizon,
}

/// Inputs and row multipliers of a previous plan.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WarmStart {
    pub inputs: Vec<Input>,
    pub duals: Option<DVector<f64>>,
}

impl WarmStart {
    /// Shifts the plan forward by `stages` (possibly fractional) controller
    /// steps, holding the last stage.
    pub fn advanced(&self, stages: f64) -> WarmStart {
        let n = self.inputs.len();
        if n == 0 {
            return self.clone();
        }
        let sample = |k: usize| -> (usize, usize, f64) {
            let t = (k as f64 + stages).min((n - 1) as f64).max(0.0);
            let i = libm::floor(t) as usize;
            let j = (i + 1).min(n - 1);
            (i, j, t - i as f64)
        };
        let inputs = (0..n)
            .map(|k| {
                let (i, j, f) = sample(k);
                self.inputs[i] * (1.0 - f) + self.inputs[j] * f
            })
            .collect();
        let duals = self.duals.as_ref().map(|y| {
            let mut out = y.clone();
            if y.len() == 2 * FAMILIES * n {
                for fam in 0..FAMILIES {
                    for k in 0..n {
                        let (i, j, f) = sample(k);
                        for side in 0..2 {
                            let at = |r: usize| y[2 * (fam * n + r) + side];
                            out[2 * (fam * n + k) + side] = at(i) * (1.0 - f) + at(j) * f;
                        }
                    }
                }
            }
            out
        });
        WarmStart { inputs, duals }
    }
}

/// Corridor violation of one state.
fn corridor_violation(track: &TrackSpec, params: &MpcParams, x: &State) -> f64 {
    let left = track.width_left_at(x[0]) - params.track_safety_margin;
    let right = track.width_right_at(x[0]) - params.track_safety_margin;
    (x[1] - left).max(-x[1] - right).max(0.0)
}

/// Clips inputs to their boxes, then walks the speed and steering chains so
/// every predicted state lies inside its envelope exactly.
fn repair(
    inputs: &mut [Input],
    x0: &State,
    params: &MpcParams,
    vehicle: &VehicleParams,
    settings: &MpcSettings,
    reference: &Reference,
) {
    let n = inputs.len();
    let v_env = assemble::speed_envelope(x0[4], params, n, reference.dt);
    let limits: Vec<f64> = (1..=n)
        .map(|k| {
            assemble::lateral_steer_limit(
                params.alat_max,
                reference.states[k][4],
                vehicle.wheelbase,
                settings.v_eps,
                vehicle.delta_max,
            )
        })
        .collect();
    let d_env = assemble::steer_envelope(x0[3], &limits, vehicle.ddelta_max);
    let (mut v, mut d) = (x0[4], x0[3]);
    for k in 0..n {
        let u = &mut inputs[k];
        u[0] = u[0].clamp(-vehicle.ddelta_max, vehicle.ddelta_max);
        u[1] = u[1].clamp(params.a_min, params.a_max);

        let (lo, hi) = d_env[k];
        let next = d + u[0];
        if next > hi {
            u[0] = (hi - d).max(-vehicle.ddelta_max);
        } else if next < lo {
            u[0] = (lo - d).min(vehicle.ddelta_max);
        }
        d += u[0];

        let (lo, hi) = v_env[k];
        let next = v + u[1] * reference.dt;
        if next > hi {
            u[1] = ((hi - v) / reference.dt).max(params.a_min);
        } else if next < lo {
            u[1] = ((lo - v) / reference.dt).min(params.a_max);
        }
        v += u[1] * reference.dt;
    }
}

fn nonlinear_cost(params: &MpcParams, settings: &MpcSettings, reference: &Reference, states: &[State], inputs: &[Input], track: &TrackSpec) -> f64 {
    let mut cost = 0.0;
    for (k, x) in states.iter().enumerate() {
        let dv = x[4] - reference.v_target[k];
        cost += params.qn * x[1] * x[1] + params.qalpha * x[2] * x[2] + params.qv * dv * dv;
        if k > 0 {
            let sigma = corridor_violation(track, params, x);
            cost += settings.w_slack * sigma * sigma;
        }
    }
    for u in inputs {
        cost += params.qddelta * u[0] * u[0] + params.qac * u[1] * u[1];
    }
    cost
}

fn to_vehicle_states(states: &[State], t0: f64, dt: f64, track: &TrackSpec) -> Vec<VehicleState> {
    states
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let mut st = VehicleState::from_array([x[0], x[1], x[2], x[3], x[4]], t0 + k as f64 * dt);
            st.pose.s = track.wrap_s(st.pose.s);
            st.pose.delta_phi = crate::wrap_angle(st.pose.delta_phi);
            st
        })
        .collect()
}

/// Braking plan used when the parameters admit no feasible solution.
fn braking_plan(
    state: &VehicleState,
    track: &TrackSpec,
    params: &MpcParams,
    horizon: &HorizonConfig,
    vehicle: &VehicleParams,
) -> MpcSolution {
    let x0 = State::from(state.as_array());
    let decel = if params.a_min < 0.0 { -params.a_min } else { 1.0 };
    let mut v = x0[4];
    let inputs: Vec<Input> = (0..horizon.n)
        .map(|_| {
            let a = (-v / horizon.dt).clamp(-decel, decel);
            v += a * horizon.dt;
            Input::new(0.0, a)
        })
        .collect();
    let states = assemble::rollout(track, vehicle, &x0, &inputs, horizon.dt);
    let slack_max = states.iter().map(|x| corridor_violation(track, params, x)).fold(0.0, f64::max);
    MpcSolution {
        first_input: ControlInput::new(0.0, inputs[0][1]),
        predicted_states: to_vehicle_states(&states, state.t, horizon.dt, track),
        predicted_inputs: inputs.iter().map(|u| ControlInput::new(u[0], u[1])).collect(),
        cost: f64::NAN,
        slack_max,
        iterations: 0,
        qp_iterations: 0,
        status: SolveStatus::InfeasibleParams,
        linearization_error: 0.0,
        warm_start: WarmStart::default(),
    }
}

/// One receding-horizon solve from `state`.
pub fn solve_mpc(
    state: &VehicleState,
    track: &TrackSpec,
    params: &MpcParams,
    horizon: &HorizonConfig,
    vehicle: &VehicleParams,
    settings: &MpcSettings,
    warm: Option<&WarmStart>,
) -> Result<MpcSolution, MpcError> {
    if !horizon.is_valid() {
        return Err(MpcError::Horizon);
    }
    if params.check_orderings().is_err() {
        return Ok(braking_plan(state, track, params, horizon, vehicle));
    }
    let n = horizon.n;
    let x0 = State::from(state.as_array());
    let mut u_bar: Vec<Input> = match warm {
        Some(w) if w.inputs.len() == n => w.inputs.clone(),
        _ => alloc::vec![Input::zeros(); n],
    };
    let mut y = if settings.warm_duals {
        warm.and_then(|w| w.duals.clone()).filter(|y| y.len() == 2 * FAMILIES * n)
    } else {
        None
    };

    let mut iterations = 0;
    let mut qp_iterations = 0;
    let mut status;
    let mut lin_error;
    let (reference, inputs, states) = loop {
        iterations += 1;
        let mut reference = assemble::build_reference(track, vehicle, horizon, &x0, u_bar.clone())?;
        // A target outside the speed bounds only fights the constraint and
        // stalls the dual solve.
        for v in &mut reference.v_target {
            *v = v.clamp(params.v_min, params.v_max);
        }
        let cqp = assemble::assemble_qp(track, vehicle, params, settings, &reference);
        let dual = DualQp::new(&cqp, settings.regularization)?;
        let start = y.take().unwrap_or_else(|| DVector::zeros(dual.qp.dim()));
        let res = solve_box_qp_from(&dual.qp, start, settings.qp_max_iter, settings.qp_tol);
        qp_iterations += res.iterations;
        status = if res.status == QpStatus::Optimal {
            SolveStatus::Optimal
        } else {
            SolveStatus::MaxIter
        };
        let z = dual.primal(&res.x);
        let mut inputs: Vec<Input> = (0..n)
            .map(|k| reference.inputs[k] + Input::new(z[2 * k], z[2 * k + 1]))
            .collect();
        repair(&mut inputs, &x0, params, vehicle, settings, &reference);
        let states = assemble::rollout(track, vehicle, &x0, &inputs, horizon.dt);
        lin_error = prediction_gap(&cqp, &reference, &inputs, &states);
        y = Some(res.x);
        if lin_error <= settings.linearization_tol || iterations >= settings.max_sqp.max(1) {
            break (reference, inputs, states);
        }
        u_bar = inputs;
    };

    let slack_max = states.iter().map(|x| corridor_violation(track, params, x)).fold(0.0, f64::max);
    let cost = nonlinear_cost(params, settings, &reference, &states, &inputs, track);
    Ok(MpcSolution {
        first_input: ControlInput::new(inputs[0][0], inputs[0][1]),
        predicted_states: to_vehicle_states(&states, state.t, horizon.dt, track),
        predicted_inputs: inputs.iter().map(|u| ControlInput::new(u[0], u[1])).collect(),
        cost,
        slack_max,
        iterations,
        qp_iterations,
        status,
        linearization_error: lin_error,
        warm_start: WarmStart { inputs, duals: y },
    })
}

fn prediction_gap(cqp: &CondensedQp, reference: &Reference, inputs: &[Input], states: &[State]) -> f64 {
    let n = inputs.len();
    let mut z = DVector::zeros(cqp.dim());
    for k in 0..n {
        let du = inputs[k] - reference.inputs[k];
        z[2 * k] = du[0];
        z[2 * k + 1] = du[1];
    }
    let linear = cqp.linear_states(reference, &z);
    linear
        .iter()
        .zip(states)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max)
}

/// Closed-loop wrapper: keeps the warm start between ticks and converts the
/// planned first stage into a simulator input.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub horizon: HorizonConfig,
    pub vehicle: VehicleParams,
    pub settings: MpcSettings,
    /// Simulator step the applied input is held for.
    pub dt_sim: f64,
    warm: Option<WarmStart>,
}

impl MpcController {
    pub fn new(horizon: HorizonConfig, vehicle: VehicleParams, settings: MpcSettings, dt_sim: f64) -> Self {
        Self {
            horizon,
            vehicle,
            settings,
            dt_sim,
            warm: None,
        }
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    /// Solves and returns the input to apply for one simulator step. The
    /// planned steering increment spans a whole controller step, so only the
    /// share covering `dt_sim` is applied. On a solver error the car brakes
    /// with the steering held.
    pub fn control(
        &mut self,
        state: &VehicleState,
        track: &TrackSpec,
        params: &MpcParams,
    ) -> (ControlInput, Result<MpcSolution, MpcError>) {
        let warm = self.warm.as_ref().map(|w| w.advanced(self.dt_sim / self.horizon.dt));
        let result = solve_mpc(state, track, params, &self.horizon, &self.vehicle, &self.settings, warm.as_ref());
        match &result {
            Ok(sol) => {
                let share = (self.dt_sim / self.horizon.dt).min(1.0);
                let input = ControlInput::new(sol.first_input.d_delta * share, sol.first_input.a);
                self.warm = match sol.status {
                    SolveStatus::InfeasibleParams => None,
                    _ => Some(sol.warm_start.clone()),
                };
                (input, result)
            }
            Err(_) => {
                self.warm = None;
                let decel = if params.a_min < 0.0 { -params.a_min } else { 1.0 };
                let a = (-state.v / self.dt_sim).clamp(-decel, decel);
                (ControlInput::new(0.0, a), result)
            }
        }
    }
}
