//! Tunable MPC parameters and the schema the adapter validates against.

use alloc::vec::Vec;

/// One row of the tunable-parameter table.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ParamSpec {
    pub name: &'static str,
    pub min: f64,
    pub max: f64,
    pub default: f64,
    pub description: &'static str,
}

impl ParamSpec {
    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }
}

// A `qv` default of 10 would sit above its own max; the range is kept and the
// default brought inside it.
const SPECS: [ParamSpec; 11] = [
    ParamSpec { name: "qv", min: 0.0, max: 2.0, default: 1.0, description: "Velocity weight: minimizes speed tracking error" },
    ParamSpec { name: "qn", min: 0.0, max: 100.0, default: 20.0, description: "Lateral weight: minimizes deviation from the track" },
    ParamSpec { name: "qalpha", min: 0.0, max: 100.0, default: 7.0, description: "Heading weight: minimizes orientation error" },
    ParamSpec { name: "qac", min: 0.0, max: 1.0, default: 0.01, description: "Acceleration weight: penalizes high acceleration" },
    ParamSpec { name: "qddelta", min: 0.0, max: 100.0, default: 0.1, description: "Steering weight: penalizes fast steering changes" },
    ParamSpec { name: "alat_max", min: 0.0, max: 20.0, default: 10.0, description: "Max lateral acceleration: limits side force" },
    ParamSpec { name: "a_min", min: -20.0, max: 0.0, default: -5.0, description: "Min acceleration: lower acceleration bound" },
    ParamSpec { name: "a_max", min: 0.0, max: 20.0, default: 5.0, description: "Max acceleration: upper acceleration bound" },
    ParamSpec { name: "v_min", min: -2.0, max: 5.0, default: 1.0, description: "Min velocity: lower speed bound" },
    ParamSpec { name: "v_max", min: -1.0, max: 10.0, default: 5.0, description: "Max velocity: upper speed bound" },
    ParamSpec { name: "track_safety_margin", min: 0.0, max: 1.0, default: 0.45, description: "Safety margin: increases track boundary margin" },
];

/// The canonical parameter table. Names are fixed; ranges bind every update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamSchema;

impl ParamSchema {
    pub fn specs(&self) -> &'static [ParamSpec] {
        &SPECS
    }

    pub fn get(&self, name: &str) -> Option<&'static ParamSpec> {
        SPECS.iter().find(|p| p.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> {
        SPECS.iter().map(|p| p.name)
    }

    pub fn defaults(&self) -> MpcParams {
        MpcParams::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MpcParams {
    pub qv: f64,
    pub qn: f64,
    pub qalpha: f64,
    pub qac: f64,
    pub qddelta: f64,
    pub alat_max: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub track_safety_margin: f64,
}

impl Default for MpcParams {
    fn default() -> Self {
        let d = |i: usize| SPECS[i].default;
        Self {
            qv: d(0),
            qn: d(1),
            qalpha: d(2),
            qac: d(3),
            qddelta: d(4),
            alat_max: d(5),
            a_min: d(6),
            a_max: d(7),
            v_min: d(8),
            v_max: d(9),
            track_safety_margin: d(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParamError {
    #[error("{name} = {value} outside [{min}, {max}]")]
    OutOfRange { name: &'static str, value: f64, min: f64, max: f64 },
    #[error("v_min ({v_min}) exceeds v_max ({v_max})")]
    SpeedBounds { v_min: f64, v_max: f64 },
    #[error("a_min ({a_min}) exceeds a_max ({a_max})")]
    AccelBounds { a_min: f64, a_max: f64 },
}

impl MpcParams {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "qv" => self.qv,
            "qn" => self.qn,
            "qalpha" => self.qalpha,
            "qac" => self.qac,
            "qddelta" => self.qddelta,
            "alat_max" => self.alat_max,
            "a_min" => self.a_min,
            "a_max" => self.a_max,
            "v_min" => self.v_min,
            "v_max" => self.v_max,
            "track_safety_margin" => self.track_safety_margin,
            _ => return None,
        })
    }

    /// Sets a canonical parameter; returns false for unknown names.
    pub fn set(&mut self, name: &str, value: f64) -> bool {
        let slot = match name {
            "qv" => &mut self.qv,
            "qn" => &mut self.qn,
            "qalpha" => &mut self.qalpha,
            "qac" => &mut self.qac,
            "qddelta" => &mut self.qddelta,
            "alat_max" => &mut self.alat_max,
            "a_min" => &mut self.a_min,
            "a_max" => &mut self.a_max,
            "v_min" => &mut self.v_min,
            "v_max" => &mut self.v_max,
            "track_safety_margin" => &mut self.track_safety_margin,
            _ => return false,
        };
        *slot = value;
        true
    }

    /// `(name, value)` pairs in schema order.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        SPECS.iter().map(|p| (p.name, self.get(p.name).unwrap_or(f64::NAN))).collect()
    }

    /// Checks ranges and the cross-field orderings.
    pub fn validate(&self) -> Result<(), ParamError> {
        for spec in SPECS.iter() {
            let value = self.get(spec.name).unwrap_or(f64::NAN);
            if !spec.contains(value) {
                return Err(ParamError::OutOfRange {
                    name: spec.name,
                    value,
                    min: spec.min,
                    max: spec.max,
                });
            }
        }
        self.check_orderings()
    }

    /// Only the orderings the solver relies on; ranges are not checked.
    pub fn check_orderings(&self) -> Result<(), ParamError> {
        if !(self.v_min <= self.v_max) {
            return Err(ParamError::SpeedBounds { v_min: self.v_min, v_max: self.v_max });
        }
        if !(self.a_min <= self.a_max) {
            return Err(ParamError::AccelBounds { a_min: self.a_min, a_max: self.a_max });
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a hash of the bit patterns, for telemetry.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for spec in SPECS.iter() {
            for b in self.get(spec.name).unwrap_or(0.0).to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Horizon and speed-reference settings that are not exposed to the adapter.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct HorizonConfig {
    pub n: usize,
    pub dt: f64,
    /// Target speed on straights (V_target) [m/s].
    pub v_ref: f64,
    /// Lateral acceleration used to slow the reference in corners [m/s^2].
    pub ref_lat_accel: f64,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self {
            n: 20,
            dt: 0.05,
            v_ref: 3.5,
            ref_lat_accel: 2.0,
        }
    }
}

impl HorizonConfig {
    pub fn is_valid(&self) -> bool {
        self.n >= 2 && self.dt > 0.0 && self.dt.is_finite() && self.v_ref.is_finite() && self.ref_lat_accel > 0.0
    }

    /// Curvature-limited reference speed.
    pub fn reference_speed(&self, kappa: f64) -> f64 {
        let k = kappa.abs();
        if k < 1e-9 {
            return self.v_ref;
        }
        let cap = libm::sqrt(self.ref_lat_accel / k);
        if self.v_ref >= 0.0 {
            self.v_ref.min(cap)
        } else {
            self.v_ref.max(-cap)
        }
    }
}
