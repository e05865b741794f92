//! Algorithmic core of the language-steered driving workbench.
//!
//! Everything here is pure computation over in-memory values: track geometry in
//! the Frenet frame, the kinematic vehicle model and its integrator, the
//! receding-horizon controller with its box-QP substrate, prompt construction
//! and response parsing for the decision and adapter stages, lexical retrieval,
//! adherence labelling and evaluation metrics.
//!
//! The crate is `no_std` and only needs an allocator. File formats, LLM
//! transports, the parameter store and the run loop live in the `langdrive`
//! crate.
#![no_std]
// `!(a < b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod adapter;
pub mod decision;
pub mod fmt;
pub mod labels;
pub mod metrics;
pub mod mpc;
pub mod rag;
pub mod track;
pub mod vehicle;

pub use adapter::{ParamUpdate, RawParams};
pub use decision::{DecisionAction, DecisionOutcome};
pub use labels::{Category, CommandSpec};
pub use mpc::{HorizonConfig, MpcParams, MpcSolution, ParamSchema, SolveStatus};
pub use rag::{MemoryEntry, MemoryKind, RagStore};
pub use track::{FrenetPose, TrackSpec};
pub use vehicle::{ControlInput, CrashStatus, StateSnapshot, VehicleParams, VehicleState};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    use core::f64::consts::PI;
    let mut a = libm::fmod(angle + PI, 2.0 * PI);
    if a < 0.0 {
        a += 2.0 * PI;
    }
    let a = a - PI;
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!((wrap_angle(PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(-7.0) - (-7.0 + 2.0 * PI)).abs() < 1e-12);
    }
}
