//! Discrete prediction model: the RK4 map of the kinematic vehicle over one
//! controller step, and its exact Jacobian.
//!
//! State ordering is `[s, n, dphi, delta, v]`, input `[d_delta, a]`. The
//! steering increment is applied before integrating, as in the simulator;
//! unlike the simulator the model does not clamp steering (the controller's
//! constraints do that).

use nalgebra::{SMatrix, SVector};

use crate::track::TrackSpec;
use crate::vehicle::{SimError, VehicleParams};

pub type State = SVector<f64, 5>;
pub type Input = SVector<f64, 2>;
pub type MatA = SMatrix<f64, 5, 5>;
pub type MatB = SMatrix<f64, 5, 2>;

/// Discrete LTV model `x+ ~ A x + B u + c` about a reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearization {
    pub a: MatA,
    pub b: MatB,
    pub c: State,
    /// Nonlinear successor of the reference point.
    pub next: State,
}

// Sensitivity of the 4 integrated components w.r.t. [x (5), u (2)].
type Sens = SMatrix<f64, 4, 7>;

struct Stage {
    f: [f64; 4],
    // Partials of f w.r.t. [s, n, dphi, v] and w.r.t. the held (delta, a).
    fy: SMatrix<f64, 4, 4>,
    fp: SMatrix<f64, 4, 2>,
}

fn stage(track: &TrackSpec, params: &VehicleParams, y: [f64; 4], delta: f64, a: f64, floor: f64) -> Stage {
    let [s, n, dphi, v] = y;
    let kappa = track.curvature_at(s);
    let dkappa = track.curvature_slope_at(s);
    let raw = 1.0 - kappa * n;
    let (denom, clamped) = if raw > floor { (raw, false) } else { (floor, true) };
    let (sin, cos) = (libm::sin(dphi), libm::cos(dphi));
    let tan = libm::tan(delta);
    let l = params.wheelbase;

    let s_dot = v * cos / denom;
    // d(1/denom) = (kappa' n ds + kappa dn) / denom^2
    let (dden_s, dden_n) = if clamped { (0.0, 0.0) } else { (-dkappa * n, -kappa) };
    let sd_s = -s_dot * dden_s / denom;
    let sd_n = -s_dot * dden_n / denom;
    let sd_phi = -v * sin / denom;
    let sd_v = cos / denom;

    let mut fy = SMatrix::<f64, 4, 4>::zeros();
    fy[(0, 0)] = sd_s;
    fy[(0, 1)] = sd_n;
    fy[(0, 2)] = sd_phi;
    fy[(0, 3)] = sd_v;
    fy[(1, 2)] = v * cos;
    fy[(1, 3)] = sin;
    fy[(2, 0)] = -dkappa * s_dot - kappa * sd_s;
    fy[(2, 1)] = -kappa * sd_n;
    fy[(2, 2)] = -kappa * sd_phi;
    fy[(2, 3)] = tan / l - kappa * sd_v;

    let mut fp = SMatrix::<f64, 4, 2>::zeros();
    fp[(2, 0)] = v * (1.0 + tan * tan) / l;
    fp[(3, 1)] = 1.0;

    Stage {
        f: [s_dot, v * sin, v * tan / l - kappa * s_dot, a],
        fy,
        fp,
    }
}

/// Floor on `1 - kappa n` inside the prediction model. Keeps rollouts finite
/// when a plan strays far outside the track.
pub const MODEL_DENOM_FLOOR: f64 = 0.05;

/// Nonlinear successor `F(x, u)` over `dt`.
pub fn discrete_step(track: &TrackSpec, params: &VehicleParams, x: &State, u: &Input, dt: f64) -> State {
    propagate(track, params, x, u, dt, false).0
}

/// First-order expansion of the RK4 map about `(x_ref, u_ref)`. With
/// `dt = 0` the map reduces to the steering increment, so `A = I` and `B` is
/// zero apart from `d(delta+)/d(d_delta) = 1`.
pub fn linearize(
    track: &TrackSpec,
    params: &VehicleParams,
    x_ref: &State,
    u_ref: &Input,
    dt: f64,
) -> Result<Linearization, SimError> {
    let denom = 1.0 - track.curvature_at(x_ref[0]) * x_ref[1];
    if !(denom > params.singularity_eps) {
        return Err(SimError::Singularity { s: track.wrap_s(x_ref[0]), n: x_ref[1] });
    }
    let (next, a, b) = propagate(track, params, x_ref, u_ref, dt, true);
    let c = next - a * x_ref - b * u_ref;
    Ok(Linearization { a, b, c, next })
}

fn propagate(
    track: &TrackSpec,
    params: &VehicleParams,
    x: &State,
    u: &Input,
    dt: f64,
    with_jacobian: bool,
) -> (State, MatA, MatB) {
    let delta = x[3] + u[0];
    let a = u[1];
    let y0 = [x[0], x[1], x[2], x[4]];

    // d(y0)/d[x, u]
    let mut s0 = Sens::zeros();
    s0[(0, 0)] = 1.0;
    s0[(1, 1)] = 1.0;
    s0[(2, 2)] = 1.0;
    s0[(3, 4)] = 1.0;
    // d(delta, a)/d[x, u]
    let mut sp = SMatrix::<f64, 2, 7>::zeros();
    sp[(0, 3)] = 1.0;
    sp[(0, 5)] = 1.0;
    sp[(1, 6)] = 1.0;

    let mut k = [[0.0; 4]; 4];
    let mut dk = [Sens::zeros(); 4];
    let coeff = [0.0, 0.5, 0.5, 1.0];
    for i in 0..4 {
        let mut y = y0;
        let mut dy = s0;
        if i > 0 {
            for j in 0..4 {
                y[j] += coeff[i] * dt * k[i - 1][j];
            }
            if with_jacobian {
                dy += dk[i - 1] * (coeff[i] * dt);
            }
        }
        let st = stage(track, params, y, delta, a, MODEL_DENOM_FLOOR);
        k[i] = st.f;
        if with_jacobian {
            dk[i] = st.fy * dy + st.fp * sp;
        }
    }
    let mut y = y0;
    for j in 0..4 {
        y[j] += dt / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
    }
    let next = State::new(y[0], y[1], y[2], delta, y[3]);
    if !with_jacobian {
        return (next, MatA::zeros(), MatB::zeros());
    }
    let dy = s0 + (dk[0] + dk[1] * 2.0 + dk[2] * 2.0 + dk[3]) * (dt / 6.0);
    let mut full = SMatrix::<f64, 5, 7>::zeros();
    for (row, src) in [(0usize, 0usize), (1, 1), (2, 2), (4, 3)] {
        for col in 0..7 {
            full[(row, col)] = dy[(src, col)];
        }
    }
    full[(3, 3)] = 1.0;
    full[(3, 5)] = 1.0;
    let a_mat = full.fixed_view::<5, 5>(0, 0).into_owned();
    let b_mat = full.fixed_view::<5, 2>(0, 5).into_owned();
    (next, a_mat, b_mat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::shapes;

    #[test]
    fn straight_origin_partials() {
        let track = shapes::straight(50.0, 11, 1.0);
        let p = VehicleParams::default();
        let x = State::new(10.0, 0.0, 0.0, 0.0, 2.0);
        let u = Input::zeros();
        let dt = 1e-6;
        let lin = linearize(&track, &p, &x, &u, dt).unwrap();
        // Continuous partials read off the discrete map: (A - I)/dt.
        assert!(((lin.a[(0, 4)]) / dt - 1.0).abs() < 1e-6);
        assert!(((lin.a[(1, 2)]) / dt - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_dt_is_identity() {
        let track = shapes::ellipse(10.0, 6.0, 200, 1.1);
        let p = VehicleParams::default();
        let x = State::new(3.0, 0.2, 0.1, 0.05, 2.0);
        let u = Input::new(0.02, 1.0);
        let lin = linearize(&track, &p, &x, &u, 0.0).unwrap();
        assert_eq!(lin.a, MatA::identity());
        let mut b = MatB::zeros();
        b[(3, 0)] = 1.0;
        assert_eq!(lin.b, b);
    }

    #[test]
    fn matches_simulator_step() {
        let track = shapes::ellipse(10.0, 6.0, 200, 1.1);
        let p = VehicleParams::default();
        let st = crate::VehicleState::new(3.0, 0.2, 0.1, 0.05, 2.0);
        let x = State::from(st.as_array());
        let u = Input::new(0.02, 1.0);
        let a = discrete_step(&track, &p, &x, &u, 0.05);
        let b = crate::vehicle::step(&st, crate::ControlInput::new(0.02, 1.0), 0.05, &track, &p).unwrap();
        for (i, v) in b.as_array().iter().enumerate() {
            assert!((a[i] - v).abs() < 1e-12, "{i}");
        }
    }

    #[test]
    fn singular_reference_rejected() {
        let track = shapes::circle(2.0, 200, 3.0);
        let p = VehicleParams::default();
        let x = State::new(1.0, 2.0, 0.0, 0.0, 1.0);
        assert!(linearize(&track, &p, &x, &Input::zeros(), 0.05).is_err());
    }
}
