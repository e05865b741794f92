//! Condensed horizon QP.
//!
//! The horizon is linearized about a nonlinear rollout `(x_bar, u_bar)` and
//! the state deviations are eliminated, leaving the input corrections and the
//! lateral slacks as decision variables:
//!
//! ```text
//! z = [du_0 .. du_{N-1}, sigma_1 .. sigma_N]     (du_k = [dd_delta, da])
//! min 1/2 z'Hz + g'z + constant   s.t.  lo <= G z <= hi
//! ```
//!
//! Row families, `N` rows each, in order: steering increment box,
//! acceleration box, speed `v_1..v_N`, steering `delta_1..delta_N`, left
//! corridor, right corridor. Speed and steering use a reachable envelope so
//! a car that starts outside its bounds (a parameter switch, a hard
//! crash-recovery start) gets the fastest admissible return instead of an
//! infeasible problem.
//!
//! The general QP is solved through its Lagrangian dual, which is a pure box
//! QP in the row multipliers.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use super::model::{self, Input, Linearization, State};
use super::params::{HorizonConfig, MpcParams};
use super::qp::BoxQp;
use crate::track::TrackSpec;
use crate::vehicle::{SimError, VehicleParams};

/// Solver constants that are not exposed to the adapter.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MpcSettings {
    /// Quadratic penalty on lateral slack.
    pub w_slack: f64,
    /// Speed floor in the lateral-acceleration steering bound [m/s].
    pub v_eps: f64,
    /// Tikhonov term added to the condensed Hessian.
    pub regularization: f64,
    pub max_sqp: usize,
    /// Re-linearize while the prediction error exceeds this.
    pub linearization_tol: f64,
    pub qp_max_iter: usize,
    pub qp_tol: f64,
    /// Seed the dual solve with the previous multipliers.
    pub warm_duals: bool,
}

impl Default for MpcSettings {
    fn default() -> Self {
        Self {
            w_slack: 1e4,
            v_eps: 0.3,
            regularization: 1e-8,
            max_sqp: 3,
            linearization_tol: 0.1,
            qp_max_iter: 200,
            qp_tol: 1e-9,
            warm_duals: false,
        }
    }
}

pub const FAMILIES: usize = 6;
pub const ROW_DDELTA: usize = 0;
pub const ROW_ACCEL: usize = 1;
pub const ROW_SPEED: usize = 2;
pub const ROW_STEER: usize = 3;
pub const ROW_LEFT: usize = 4;
pub const ROW_RIGHT: usize = 5;

/// The rollout the QP is built around.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub states: Vec<State>,
    pub inputs: Vec<Input>,
    pub lin: Vec<Linearization>,
    /// Speed target at each state.
    pub v_target: Vec<f64>,
    pub dt: f64,
}

impl Reference {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }
}

pub fn rollout(track: &TrackSpec, vehicle: &VehicleParams, x0: &State, inputs: &[Input], dt: f64) -> Vec<State> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(*x0);
    for u in inputs {
        let next = model::discrete_step(track, vehicle, states.last().unwrap_or(x0), u, dt);
        states.push(next);
    }
    states
}

pub fn build_reference(
    track: &TrackSpec,
    vehicle: &VehicleParams,
    horizon: &HorizonConfig,
    x0: &State,
    inputs: Vec<Input>,
) -> Result<Reference, SimError> {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut lin = Vec::with_capacity(inputs.len());
    states.push(*x0);
    for u in &inputs {
        let x = states[states.len() - 1];
        let l = match model::linearize(track, vehicle, &x, u, horizon.dt) {
            Ok(l) => l,
            // Deep in a plan that leaves the track; linearize at the floor
            // rather than giving up on the whole horizon.
            Err(_) if states.len() > 1 => {
                let mut clipped = x;
                let kappa = track.curvature_at(x[0]);
                if kappa.abs() > 1e-12 {
                    clipped[1] = (1.0 - 2.0 * model::MODEL_DENOM_FLOOR) / kappa;
                }
                model::linearize(track, vehicle, &clipped, u, horizon.dt)?
            }
            Err(e) => return Err(e),
        };
        states.push(l.next);
        lin.push(l);
    }
    let v_target = states.iter().map(|x| horizon.reference_speed(track.curvature_at(x[0]))).collect();
    Ok(Reference {
        states,
        inputs,
        lin,
        v_target,
        dt: horizon.dt,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CondensedQp {
    pub n: usize,
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub constant: f64,
    pub rows: DMatrix<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    /// `d x_k / d du`, stacked `5 (N+1) x 2N`.
    pub sens: DMatrix<f64>,
    pub weights: Weights,
}

/// Diagonal cost weights, already in the `x'Qx` sense (no factor 1/2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub qn: f64,
    pub qalpha: f64,
    pub qv: f64,
    pub qddelta: f64,
    pub qac: f64,
    pub w_slack: f64,
}

impl Weights {
    pub fn from_params(p: &MpcParams, s: &MpcSettings) -> Self {
        Self {
            qn: p.qn,
            qalpha: p.qalpha,
            qv: p.qv,
            qddelta: p.qddelta,
            qac: p.qac,
            w_slack: s.w_slack,
        }
    }
}

/// Bounds on `v_1..v_N` reachable from `v0` within `[a_min, a_max]`.
pub fn speed_envelope(v0: f64, params: &MpcParams, n: usize, dt: f64) -> Vec<(f64, f64)> {
    let (mut lo, mut hi) = (v0, v0);
    (0..n)
        .map(|_| {
            lo = params.v_min.min(lo + params.a_max * dt);
            hi = params.v_max.max(hi + params.a_min * dt);
            (lo, hi)
        })
        .collect()
}

/// Bounds on `delta_1..delta_N` given per-step magnitude limits.
pub fn steer_envelope(delta0: f64, limits: &[f64], ddmax: f64) -> Vec<(f64, f64)> {
    let (mut lo, mut hi) = (delta0, delta0);
    limits
        .iter()
        .map(|&b| {
            lo = (-b).min(lo + ddmax);
            hi = b.max(hi - ddmax);
            (lo, hi)
        })
        .collect()
}

/// Steering magnitude limit from the lateral-acceleration bound.
pub fn lateral_steer_limit(alat_max: f64, v: f64, wheelbase: f64, v_eps: f64, delta_max: f64) -> f64 {
    let denom = (v * v).max(v_eps * v_eps);
    libm::atan(alat_max * wheelbase / denom).min(delta_max)
}

pub fn assemble_qp(
    track: &TrackSpec,
    vehicle: &VehicleParams,
    params: &MpcParams,
    settings: &MpcSettings,
    reference: &Reference,
) -> CondensedQp {
    let n = reference.horizon();
    let nu = 2 * n;
    let nz = 3 * n;
    let w = Weights::from_params(params, settings);
    let xb = &reference.states;
    let ub = &reference.inputs;

    // Sensitivities d x_k / d du.
    let mut sens = DMatrix::zeros(5 * (n + 1), nu);
    for k in 0..n {
        let lin = &reference.lin[k];
        let prev = sens.rows(5 * k, 5).into_owned();
        let mut next = lin.a * prev;
        for r in 0..5 {
            next[(r, 2 * k)] += lin.b[(r, 0)];
            next[(r, 2 * k + 1)] += lin.b[(r, 1)];
        }
        sens.rows_mut(5 * (k + 1), 5).copy_from(&next);
    }

    let mut h = DMatrix::zeros(nz, nz);
    let mut g = DVector::zeros(nz);
    let mut constant = 0.0;
    #[allow(clippy::needless_range_loop)]
    for k in 0..=n {
        for (idx, q, target) in [(1usize, w.qn, 0.0), (2, w.qalpha, 0.0), (4, w.qv, reference.v_target[k])] {
            if q == 0.0 {
                continue;
            }
            let row = sens.row(5 * k + idx);
            let err = xb[k][idx] - target;
            // Only the first 2k columns are non-zero.
            let m = 2 * k;
            for i in 0..m {
                g[i] += 2.0 * q * err * row[i];
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in 0..m {
                    h[(i, j)] += 2.0 * q * ri * row[j];
                }
            }
            constant += q * err * err;
        }
    }
    for k in 0..n {
        h[(2 * k, 2 * k)] += 2.0 * w.qddelta;
        h[(2 * k + 1, 2 * k + 1)] += 2.0 * w.qac;
        g[2 * k] += 2.0 * w.qddelta * ub[k][0];
        g[2 * k + 1] += 2.0 * w.qac * ub[k][1];
        constant += w.qddelta * ub[k][0] * ub[k][0] + w.qac * ub[k][1] * ub[k][1];
        h[(nu + k, nu + k)] += 2.0 * w.w_slack;
    }

    let rows_n = FAMILIES * n;
    let mut rows = DMatrix::zeros(rows_n, nz);
    let mut lo = DVector::from_element(rows_n, f64::NEG_INFINITY);
    let mut hi = DVector::from_element(rows_n, f64::INFINITY);

    let v_env = speed_envelope(xb[0][4], params, n, reference.dt);
    let limits: Vec<f64> = (1..=n)
        .map(|k| lateral_steer_limit(params.alat_max, xb[k][4], vehicle.wheelbase, settings.v_eps, vehicle.delta_max))
        .collect();
    let d_env = steer_envelope(xb[0][3], &limits, vehicle.ddelta_max);

    for k in 0..n {
        let r = ROW_DDELTA * n + k;
        rows[(r, 2 * k)] = 1.0;
        lo[r] = -vehicle.ddelta_max - ub[k][0];
        hi[r] = vehicle.ddelta_max - ub[k][0];

        let r = ROW_ACCEL * n + k;
        rows[(r, 2 * k + 1)] = 1.0;
        lo[r] = params.a_min - ub[k][1];
        hi[r] = params.a_max - ub[k][1];

        let kk = k + 1;
        let r = ROW_SPEED * n + k;
        for j in 0..2 * kk {
            rows[(r, j)] = sens[(5 * kk + 4, j)];
        }
        lo[r] = v_env[k].0 - xb[kk][4];
        hi[r] = v_env[k].1 - xb[kk][4];

        let r = ROW_STEER * n + k;
        for j in 0..2 * kk {
            rows[(r, j)] = sens[(5 * kk + 3, j)];
        }
        lo[r] = d_env[k].0 - xb[kk][3];
        hi[r] = d_env[k].1 - xb[kk][3];

        let s = xb[kk][0];
        let left = track.width_left_at(s) - params.track_safety_margin;
        let right = track.width_right_at(s) - params.track_safety_margin;
        let r = ROW_LEFT * n + k;
        for j in 0..2 * kk {
            rows[(r, j)] = sens[(5 * kk + 1, j)];
        }
        rows[(r, nu + k)] = -1.0;
        hi[r] = left - xb[kk][1];

        let r = ROW_RIGHT * n + k;
        for j in 0..2 * kk {
            rows[(r, j)] = -sens[(5 * kk + 1, j)];
        }
        rows[(r, nu + k)] = -1.0;
        hi[r] = right + xb[kk][1];
    }

    // An input between two pinched chain values is already fixed by the chain
    // rows; keeping its box row too makes the dual degenerate.
    let pinched = |lo: f64, hi: f64| hi - lo <= 1e-12;
    for k in 0..n {
        for (chain, input) in [(ROW_SPEED, ROW_ACCEL), (ROW_STEER, ROW_DDELTA)] {
            let after = chain * n + k;
            let before_pinched = k == 0 || pinched(lo[after - 1], hi[after - 1]);
            if before_pinched && pinched(lo[after], hi[after]) {
                lo[input * n + k] = f64::NEG_INFINITY;
                hi[input * n + k] = f64::INFINITY;
            }
        }
    }

    for i in 0..nz {
        for j in 0..i {
            let avg = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = avg;
            h[(j, i)] = avg;
        }
    }

    CondensedQp {
        n,
        h,
        g,
        constant,
        rows,
        lo,
        hi,
        sens,
        weights: w,
    }
}

impl CondensedQp {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.g.dot(z) + self.constant
    }

    /// Linear state prediction `x_bar + S du`.
    pub fn linear_states(&self, reference: &Reference, z: &DVector<f64>) -> Vec<State> {
        let du = z.rows(0, 2 * self.n);
        (0..=self.n)
            .map(|k| {
                let dx = self.sens.rows(5 * k, 5) * du;
                reference.states[k] + State::from_iterator(dx.iter().copied())
            })
            .collect()
    }

    /// Stage-by-stage cost of a candidate, evaluated on the linear prediction.
    pub fn direct_cost(&self, reference: &Reference, z: &DVector<f64>) -> f64 {
        let w = &self.weights;
        let states = self.linear_states(reference, z);
        let mut cost = 0.0;
        for (k, x) in states.iter().enumerate() {
            let dv = x[4] - reference.v_target[k];
            cost += w.qn * x[1] * x[1] + w.qalpha * x[2] * x[2] + w.qv * dv * dv;
        }
        for k in 0..self.n {
            let dd = reference.inputs[k][0] + z[2 * k];
            let a = reference.inputs[k][1] + z[2 * k + 1];
            let sigma = z[2 * self.n + k];
            cost += w.qddelta * dd * dd + w.qac * a * a + w.w_slack * sigma * sigma;
        }
        cost
    }

    /// Largest row violation of `z`.
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let gz = &self.rows * z;
        (0..gz.len())
            .map(|i| (self.lo[i] - gz[i]).max(gz[i] - self.hi[i]).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Dual of a [`CondensedQp`]. Each row `i` owns two multipliers: index `2i`
/// for its upper side and `2i+1` for its lower side. Equality rows keep a
/// single free multiplier; absent sides are fixed at zero.
#[derive(Debug, Clone)]
pub struct DualQp {
    pub qp: BoxQp,
    chol_l: DMatrix<f64>,
    // L^{-1} g and L^{-1} G'.
    lg: DVector<f64>,
    w: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DualError {
    #[error("condensed Hessian is not positive definite")]
    NotPositiveDefinite,
}

impl DualQp {
    pub fn new(primal: &CondensedQp, regularization: f64) -> Result<Self, DualError> {
        let nz = primal.dim();
        let h = &primal.h;
        let scale = (0..nz).map(|i| h[(i, i)].abs()).fold(1.0, f64::max);
        let mut shift = regularization * scale;
        let chol = loop {
            let mut hr = h.clone();
            for i in 0..nz {
                hr[(i, i)] += shift;
            }
            if let Some(c) = hr.cholesky() {
                break c;
            }
            if shift > 1e-2 * scale {
                return Err(DualError::NotPositiveDefinite);
            }
            shift = if shift == 0.0 { 1e-12 * scale } else { shift * 100.0 };
        };
        let l = chol.l();
        let lg = l.solve_lower_triangular(&primal.g).ok_or(DualError::NotPositiveDefinite)?;
        let w = l
            .solve_lower_triangular(&primal.rows.transpose())
            .ok_or(DualError::NotPositiveDefinite)?;
        let q0 = w.transpose() * &w;
        let base = w.transpose() * &lg;

        let m = primal.rows.nrows();
        let sign = |k: usize| if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        let mut q = DMatrix::zeros(2 * m, 2 * m);
        for a in 0..2 * m {
            for b in 0..2 * m {
                q[(a, b)] = sign(a) * sign(b) * q0[(a / 2, b / 2)];
            }
        }
        let mut c = DVector::zeros(2 * m);
        let mut lb = DVector::zeros(2 * m);
        let mut ub = DVector::zeros(2 * m);
        for i in 0..m {
            let (lo, hi) = (primal.lo[i], primal.hi[i]);
            if lo.is_finite() && hi.is_finite() && hi - lo <= 1e-12 {
                c[2 * i] = 0.5 * (lo + hi) + base[i];
                lb[2 * i] = f64::NEG_INFINITY;
                ub[2 * i] = f64::INFINITY;
                continue;
            }
            if hi.is_finite() {
                c[2 * i] = hi + base[i];
                ub[2 * i] = f64::INFINITY;
            }
            if lo.is_finite() {
                c[2 * i + 1] = -lo - base[i];
                ub[2 * i + 1] = f64::INFINITY;
            }
        }
        // Fixed multipliers must not couple into the free ones.
        for a in 0..2 * m {
            if lb[a] == 0.0 && ub[a] == 0.0 {
                for b in 0..2 * m {
                    q[(a, b)] = 0.0;
                    q[(b, a)] = 0.0;
                }
                q[(a, a)] = 1.0;
            }
        }
        let qp = BoxQp { h: q, g: c, lb, ub };
        Ok(Self {
            qp,
            chol_l: l,
            lg,
            w,
        })
    }

    /// Primal point for a multiplier vector: `z = -L^-T (L^-1 g + W mu)`.
    pub fn primal(&self, y: &DVector<f64>) -> DVector<f64> {
        let m = self.w.ncols();
        let mu = DVector::from_iterator(m, (0..m).map(|i| y[2 * i] - y[2 * i + 1]));
        let rhs = &self.lg + &self.w * mu;
        let z = self
            .chol_l
            .tr_solve_lower_triangular(&rhs)
            .unwrap_or_else(|| DVector::zeros(rhs.len()));
        -z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::shapes;

    #[test]
    fn envelopes() {
        let p = MpcParams { v_min: -1.0, v_max: -1.0, a_min: -20.0, a_max: 0.0, ..Default::default() };
        let env = speed_envelope(1.0, &p, 4, 0.05);
        assert_eq!(env[0], (-1.0, 0.0));
        assert_eq!(env[1], (-1.0, -1.0));
        let env = speed_envelope(2.0, &MpcParams::default(), 2, 0.05);
        assert_eq!(env[0], (1.0, 5.0));
        let env = steer_envelope(0.4, &[0.1, 0.1, 0.1, 0.1], 0.1);
        assert!((env[0].1 - 0.3).abs() < 1e-15 && env[0].0 == -0.1);
        assert!((env[2].1 - 0.1).abs() < 1e-15);
        assert!((lateral_steer_limit(10.0, 0.0, 0.33, 0.3, 0.4) - 0.4).abs() < 1e-15);
        assert!((lateral_steer_limit(1.0, 3.0, 0.33, 0.3, 0.4) - libm::atan(0.33 / 9.0)).abs() < 1e-15);
    }

    #[test]
    fn dual_recovers_simple_qp() {
        // min 1/2 |z|^2 - 3 z0  s.t. z0 + z1 <= 1, z1 == 0.25
        let primal = CondensedQp {
            n: 0,
            h: DMatrix::identity(2, 2),
            g: DVector::from_row_slice(&[-3.0, 0.0]),
            constant: 0.0,
            rows: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            lo: DVector::from_row_slice(&[f64::NEG_INFINITY, 0.25]),
            hi: DVector::from_row_slice(&[1.0, 0.25]),
            sens: DMatrix::zeros(0, 0),
            weights: Weights::from_params(&MpcParams::default(), &MpcSettings::default()),
        };
        let dual = DualQp::new(&primal, 0.0).unwrap();
        let r = super::super::qp::solve_box_qp(&dual.qp, 100, 1e-12);
        let z = dual.primal(&r.x);
        assert!((z[0] - 0.75).abs() < 1e-9, "{z}");
        assert!((z[1] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn velocity_gradient_zero_at_target() {
        let track = shapes::straight(100.0, 21, 1.0);
        let v = VehicleParams::default();
        let h = HorizonConfig { v_ref: 2.0, ..Default::default() };
        let p = MpcParams { qn: 0.0, qalpha: 0.0, qac: 0.0, qddelta: 0.0, qv: 1.0, ..Default::default() };
        let x0 = State::new(5.0, 0.0, 0.0, 0.0, 2.0);
        let r = build_reference(&track, &v, &h, &x0, alloc::vec![Input::zeros(); h.n]).unwrap();
        let qp = assemble_qp(&track, &v, &p, &MpcSettings::default(), &r);
        for k in 0..h.n {
            assert!(qp.g[2 * k + 1].abs() < 1e-12);
        }
        assert!(qp.constant.abs() < 1e-20);
    }
}
