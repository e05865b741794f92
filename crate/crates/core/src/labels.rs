//! Ground-truth adherence labels for the eight decision commands.
//!
//! Thresholds follow the bundled hints: 0.3 m counts as off the racing line
//! and 0.4 m as close to a wall.

use alloc::string::String;
use alloc::vec::Vec;

use crate::vehicle::StateSnapshot;

pub const RACING_LINE_TOL: f64 = 0.3;
pub const CLOSE_WALL_DIST: f64 = 0.4;
pub const OSCILLATION_P2P: f64 = 0.6;
pub const STOP_SPEED: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Category {
    Centerline,
    CloseWall,
    Forward,
    Oscillating,
    Racingline,
    Reversed,
    Speed,
    Stop,
}

impl Category {
    pub const ALL: [Category; 8] = [
        Category::Centerline,
        Category::CloseWall,
        Category::Forward,
        Category::Oscillating,
        Category::Racingline,
        Category::Reversed,
        Category::Speed,
        Category::Stop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Centerline => "Centerline",
            Category::CloseWall => "Close Wall",
            Category::Forward => "Forward",
            Category::Oscillating => "Oscillating",
            Category::Racingline => "Racingline",
            Category::Reversed => "Reversed",
            Category::Speed => "Speed",
            Category::Stop => "Stop",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CommandSpec {
    pub id: String,
    pub prompt: String,
    pub category: Category,
    /// Speed threshold for [`Category::Speed`], m/s.
    pub threshold: Option<f64>,
}

impl CommandSpec {
    pub fn new(id: &str, prompt: &str, category: Category) -> Self {
        let threshold = if category == Category::Speed { first_number(prompt) } else { None };
        Self { id: id.into(), prompt: prompt.into(), category, threshold }
    }
}

/// First decimal number in `text`, sign included ("-1 m/s" -> -1).
pub fn first_number(text: &str) -> Option<f64> {
    let b = text.as_bytes();
    let mut i = 0;
    while i < b.len() {
        if b[i].is_ascii_digit() {
            let mut start = i;
            if start > 0 && b[start - 1] == b'-' {
                start -= 1;
            }
            let mut end = i;
            while end < b.len() && b[end].is_ascii_digit() {
                end += 1;
            }
            if end + 1 < b.len() && b[end] == b'.' && b[end + 1].is_ascii_digit() {
                end += 1;
                while end < b.len() && b[end].is_ascii_digit() {
                    end += 1;
                }
            }
            return text[start..end].parse().ok();
        }
        i += 1;
    }
    None
}

/// The bundled eight-command suite, one per category.
pub fn bundled_commands() -> Vec<CommandSpec> {
    alloc::vec![
        CommandSpec::new("centerline", "Drive in the middle of the track, away from the walls!", Category::Centerline),
        CommandSpec::new("close_wall", "Drive close to a wall!", Category::CloseWall),
        CommandSpec::new("forward", "Drive forward!", Category::Forward),
        CommandSpec::new("oscillating", "Oscillate from side to side!", Category::Oscillating),
        CommandSpec::new("racingline", "Normal driving on the racing line.", Category::Racingline),
        CommandSpec::new("reversed", "Reverse the car!", Category::Reversed),
        CommandSpec::new("speed", "Drive faster than 3 m/s!", Category::Speed),
        CommandSpec::new("stop", "Stop the car!", Category::Stop),
    ]
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn min_wall_distance(snap: &StateSnapshot) -> f64 {
    snap.samples
        .iter()
        .map(|s| s.dist_left.min(s.dist_right))
        .fold(f64::INFINITY, f64::min)
}

pub fn is_oscillating(d: &[f64]) -> bool {
    let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
    hi > 0.0 && lo < 0.0 && hi - lo > OSCILLATION_P2P
}

/// Whether the snapshot satisfies `command`. An empty snapshot adheres to
/// nothing.
pub fn label_adherence(snap: &StateSnapshot, command: &CommandSpec) -> bool {
    if snap.samples.is_empty() {
        return false;
    }
    let vs = snap.column(|s| s.s_speed);
    let d = snap.column(|s| s.d);
    match command.category {
        Category::Reversed => vs.iter().all(|&v| v < 0.0),
        Category::Forward => vs.iter().all(|&v| v > 0.0),
        Category::Stop => max_abs(&vs) < STOP_SPEED,
        Category::Speed => mean(&vs) > command.threshold.unwrap_or(0.0),
        Category::Racingline => max_abs(&d) <= RACING_LINE_TOL,
        Category::Oscillating => is_oscillating(&d),
        Category::CloseWall => min_wall_distance(snap) < CLOSE_WALL_DIST,
        Category::Centerline => min_wall_distance(snap) >= CLOSE_WALL_DIST && max_abs(&d) <= RACING_LINE_TOL,
    }
}
