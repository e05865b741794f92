//! Frenet-frame kinematic vehicle: continuous dynamics, RK4 stepping, crash
//! latching, state logging and the sampled snapshot handed to the decision
//! stage.

use alloc::vec::Vec;

use crate::track::TrackSpec;
use crate::wrap_angle;

/// Physical constants of the simulated 1:10-scale car.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VehicleParams {
    /// Axle-to-axle distance [m].
    pub wheelbase: f64,
    /// Hardware steering bound [rad].
    pub delta_max: f64,
    /// Hardware steering increment bound per control step [rad].
    pub ddelta_max: f64,
    /// Minimum allowed `1 - kappa * n`.
    pub singularity_eps: f64,
    /// Wall clearance needed to clear a latched crash [m].
    pub crash_clear_dist: f64,
    /// How long that clearance must hold [s].
    pub crash_clear_time: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.33,
            delta_max: 0.4,
            ddelta_max: 0.1,
            singularity_eps: 1e-3,
            crash_clear_dist: 0.2,
            crash_clear_time: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VehicleState {
    pub pose: crate::FrenetPose,
    /// Steering angle [rad].
    pub delta: f64,
    /// Longitudinal speed [m/s]; negative when reversing.
    pub v: f64,
    /// Simulation time [s].
    pub t: f64,
}

impl VehicleState {
    pub fn new(s: f64, n: f64, delta_phi: f64, delta: f64, v: f64) -> Self {
        Self {
            pose: crate::FrenetPose::new(s, n, delta_phi),
            delta,
            v,
            t: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.pose.s, self.pose.n, self.pose.delta_phi, self.delta, self.v]
    }

    pub fn from_array(x: [f64; 5], t: f64) -> Self {
        Self {
            pose: crate::FrenetPose::new(x[0], x[1], x[2]),
            delta: x[3],
            v: x[4],
            t,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite()) && self.t.is_finite()
    }
}

/// Steering increment and longitudinal acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ControlInput {
    /// Steering increment applied at the start of the step [rad].
    pub d_delta: f64,
    /// Longitudinal acceleration [m/s^2].
    pub a: f64,
}

impl ControlInput {
    pub fn new(d_delta: f64, a: f64) -> Self {
        Self { d_delta, a }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("integration singularity: 1 - kappa*n <= eps at s = {s:.4}, n = {n:.4}")]
    Singularity { s: f64, n: f64 },
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("non-finite state after integration")]
    NonFinite,
}

/// Time derivative of `[s, n, dphi, v]` at a fixed steering angle and
/// acceleration.
pub fn derivatives(
    track: &TrackSpec,
    params: &VehicleParams,
    y: [f64; 4],
    delta: f64,
    a: f64,
) -> Result<[f64; 4], SimError> {
    let [s, n, dphi, v] = y;
    let kappa = track.curvature_at(s);
    let denom = 1.0 - kappa * n;
    if !(denom > params.singularity_eps) {
        return Err(SimError::Singularity { s: track.wrap_s(s), n });
    }
    let s_dot = v * libm::cos(dphi) / denom;
    let n_dot = v * libm::sin(dphi);
    let dphi_dot = v * libm::tan(delta) / params.wheelbase - kappa * s_dot;
    Ok([s_dot, n_dot, dphi_dot, a])
}

/// One classical RK4 step of `[s, n, dphi, v]` with `delta` held constant.
/// `s` is left unwrapped.
pub fn rk4(
    track: &TrackSpec,
    params: &VehicleParams,
    y: [f64; 4],
    delta: f64,
    a: f64,
    dt: f64,
) -> Result<[f64; 4], SimError> {
    let f = |y: [f64; 4]| derivatives(track, params, y, delta, a);
    let k1 = f(y)?;
    let k2 = f(axpy(y, 0.5 * dt, k1))?;
    let k3 = f(axpy(y, 0.5 * dt, k2))?;
    let k4 = f(axpy(y, dt, k3))?;
    let mut out = y;
    for i in 0..4 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

fn axpy(y: [f64; 4], h: f64, k: [f64; 4]) -> [f64; 4] {
    [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2], y[3] + h * k[3]]
}

/// Advances the vehicle by `dt`. The steering increment is applied first and
/// clamped to the hardware bound, then the kinematic model is integrated
/// with one RK4 step. `s` and the heading error come back wrapped.
pub fn step(
    state: &VehicleState,
    input: ControlInput,
    dt: f64,
    track: &TrackSpec,
    params: &VehicleParams,
) -> Result<VehicleState, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::BadTimeStep(dt));
    }
    let delta = (state.delta + input.d_delta).clamp(-params.delta_max, params.delta_max);
    let y = [state.pose.s, state.pose.n, state.pose.delta_phi, state.v];
    let out = rk4(track, params, y, delta, input.a, dt)?;
    let next = VehicleState {
        pose: crate::FrenetPose::new(track.wrap_s(out[0]), out[1], wrap_angle(out[2])),
        delta,
        v: out[3],
        t: state.t + dt,
    };
    if !next.is_finite() {
        return Err(SimError::NonFinite);
    }
    Ok(next)
}

/// Latched crash flag.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CrashStatus {
    pub crashed: bool,
    /// Time the crash latched.
    pub since: Option<f64>,
    /// Start of the current run of sufficient clearance while crashed.
    pub clear_since: Option<f64>,
}

impl CrashStatus {
    pub fn latched_at(t: f64) -> Self {
        Self {
            crashed: true,
            since: Some(t),
            clear_since: None,
        }
    }
}

/// Latches on wall contact (`min(d_left, d_right) <= 0`); clears only once the
/// clearance stays above `crash_clear_dist` for `crash_clear_time`.
pub fn detect_crash(track: &TrackSpec, state: &VehicleState, prior: CrashStatus, params: &VehicleParams) -> CrashStatus {
    let (dl, dr) = track.wall_distances(state.pose.s, state.pose.n);
    let clearance = dl.min(dr);
    if clearance <= 0.0 {
        return CrashStatus {
            crashed: true,
            since: if prior.crashed { prior.since.or(Some(state.t)) } else { Some(state.t) },
            clear_since: None,
        };
    }
    if !prior.crashed {
        return CrashStatus::default();
    }
    if clearance > params.crash_clear_dist {
        let start = prior.clear_since.unwrap_or(state.t);
        if state.t - start >= params.crash_clear_time - 1e-9 {
            CrashStatus::default()
        } else {
            CrashStatus {
                clear_since: Some(start),
                ..prior
            }
        }
    } else {
        CrashStatus {
            clear_since: None,
            ..prior
        }
    }
}

/// One row of the dense simulation log.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogEntry {
    pub t: f64,
    pub s: f64,
    pub n: f64,
    pub dphi: f64,
    pub delta: f64,
    pub v: f64,
    /// Acceleration applied during the step that produced this row.
    pub a: f64,
    pub dleft: f64,
    pub dright: f64,
    pub crashed: bool,
}

impl LogEntry {
    pub fn from_state(track: &TrackSpec, state: &VehicleState, a: f64, crashed: bool) -> Self {
        let (dleft, dright) = track.wall_distances(state.pose.s, state.pose.n);
        Self {
            t: state.t,
            s: state.pose.s,
            n: state.pose.n,
            dphi: state.pose.delta_phi,
            delta: state.delta,
            v: state.v,
            a,
            dleft,
            dright,
            crashed,
        }
    }
}

/// Single-owner simulation: state, crash latch and log.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub params: VehicleParams,
    state: VehicleState,
    crash: CrashStatus,
    log: Vec<LogEntry>,
}

impl Simulation {
    pub fn new(track: &TrackSpec, params: VehicleParams, initial: VehicleState) -> Self {
        let crash = detect_crash(track, &initial, CrashStatus::default(), &params);
        Self::with_crash(track, params, initial, crash)
    }

    /// Starts from a given crash status (e.g. a car already stuck in a wall).
    pub fn with_crash(track: &TrackSpec, params: VehicleParams, initial: VehicleState, crash: CrashStatus) -> Self {
        let log = alloc::vec![LogEntry::from_state(track, &initial, 0.0, crash.crashed)];
        Self {
            params,
            state: initial,
            crash,
            log,
        }
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn crash(&self) -> CrashStatus {
        self.crash
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// Drops all but the newest `keep` log rows.
    pub fn trim_log(&mut self, keep: usize) {
        if self.log.len() > keep {
            self.log.drain(..self.log.len() - keep);
        }
    }

    /// Integrates one tick. Wall contact clamps `n` onto the wall. A car
    /// whose motion still points into the wall is stopped there; it cannot
    /// push through it, only back away.
    pub fn tick(&mut self, track: &TrackSpec, input: ControlInput, dt: f64) -> Result<&VehicleState, SimError> {
        let mut next = step(&self.state, input, dt, track, &self.params)?;
        let wl = track.width_left_at(next.pose.s);
        let wr = track.width_right_at(next.pose.s);
        let lateral = next.v * libm::sin(next.pose.delta_phi);
        if (next.pose.n >= wl && lateral > 0.0) || (next.pose.n <= -wr && lateral < 0.0) {
            next.v = 0.0;
        }
        next.pose.n = next.pose.n.clamp(-wr, wl);
        self.crash = detect_crash(track, &next, self.crash, &self.params);
        self.state = next;
        self.log
            .push(LogEntry::from_state(track, &self.state, input.a, self.crash.crashed));
        Ok(&self.state)
    }
}

/// One sampled row of a [`StateSnapshot`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SnapshotSample {
    pub s: f64,
    pub d: f64,
    pub s_speed: f64,
    pub d_speed: f64,
    pub dist_left: f64,
    pub dist_right: f64,
}

/// Evenly sampled recent window of the robot state.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateSnapshot {
    pub duration: f64,
    pub samples: Vec<SnapshotSample>,
    pub crashed: bool,
}

impl StateSnapshot {
    pub fn column(&self, f: impl Fn(&SnapshotSample) -> f64) -> Vec<f64> {
        self.samples.iter().map(f).collect()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SnapshotError {
    #[error("history spans {available:.3} s but {required:.3} s are needed")]
    InsufficientHistory { available: f64, required: f64 },
    #[error("sample count must be at least 2")]
    TooFewSamples,
}

/// Samples `count` rows over the trailing `duration` of a dense log, at
/// `duration / count` spacing, ending at the newest entry. Speeds are finite
/// differences on the dense log (central inside, one-sided at the ends);
/// `s` differences are unwrapped across the start line.
pub fn sample_window(
    log: &[LogEntry],
    duration: f64,
    count: usize,
    track: &TrackSpec,
) -> Result<StateSnapshot, SnapshotError> {
    if count < 2 {
        return Err(SnapshotError::TooFewSamples);
    }
    let available = match (log.first(), log.last()) {
        (Some(a), Some(b)) => b.t - a.t,
        _ => 0.0,
    };
    if log.len() < 2 || available + 1e-9 < duration {
        return Err(SnapshotError::InsufficientHistory {
            available,
            required: duration,
        });
    }
    let t_end = log[log.len() - 1].t;
    let spacing = duration / count as f64;
    let samples = (0..count)
        .map(|i| {
            let target = t_end - duration + (i + 1) as f64 * spacing;
            let j = nearest_index(log, target);
            let (lo, hi) = if j == 0 {
                (0, 1)
            } else if j == log.len() - 1 {
                (j - 1, j)
            } else {
                (j - 1, j + 1)
            };
            let dt = log[hi].t - log[lo].t;
            let e = &log[j];
            SnapshotSample {
                s: e.s,
                d: e.n,
                s_speed: track.s_difference(log[lo].s, log[hi].s) / dt,
                d_speed: (log[hi].n - log[lo].n) / dt,
                dist_left: e.dleft,
                dist_right: e.dright,
            }
        })
        .collect();
    Ok(StateSnapshot {
        duration,
        samples,
        crashed: log[log.len() - 1].crashed,
    })
}

fn nearest_index(log: &[LogEntry], t: f64) -> usize {
    let idx = log.partition_point(|e| e.t < t);
    if idx == 0 {
        0
    } else if idx >= log.len() {
        log.len() - 1
    } else if (log[idx].t - t).abs() < (t - log[idx - 1].t).abs() {
        idx
    } else {
        idx - 1
    }
}
