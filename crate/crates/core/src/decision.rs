//! Adherence prompt and the continue-or-change response parser.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::fmt::{compact, compact_decimal};
use crate::vehicle::{SnapshotSample, StateSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DecisionAction {
    Continue,
    Change,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecisionOutcome {
    pub action: DecisionAction,
    /// Set iff `action` is `Change`; never empty.
    pub instruction: Option<String>,
    pub rationale: String,
}

impl DecisionOutcome {
    pub fn continue_with(rationale: &str) -> Self {
        Self { action: DecisionAction::Continue, instruction: None, rationale: rationale.into() }
    }

    pub fn is_continue(&self) -> bool {
        self.action == DecisionAction::Continue
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecisionParseError {
    #[error("no action found in response")]
    NoAction { raw: String },
    #[error("change requested without an instruction")]
    MissingInstruction { raw: String },
}

impl DecisionParseError {
    pub fn raw(&self) -> &str {
        match self {
            DecisionParseError::NoAction { raw } | DecisionParseError::MissingInstruction { raw } => raw,
        }
    }
}

/// Sentence with a trailing period unless it already ends in punctuation.
pub(crate) fn sentence(text: &str) -> String {
    let t = text.trim();
    if t.ends_with(['.', '!', '?']) {
        t.to_string()
    } else {
        format!("{t}.")
    }
}

fn row(label: &str, snap: &StateSnapshot, f: impl Fn(&SnapshotSample) -> f64, render: fn(f64) -> String) -> String {
    let vals: Vec<String> = snap.samples.iter().map(|s| render(f(s))).collect();
    format!("- {label}: {}\n", vals.join(", "))
}

/// Renders the state window as in the prompt: header line plus one line per
/// field. Speeds keep at least one decimal.
pub fn render_snapshot(snap: &StateSnapshot) -> String {
    let mut out = format!(
        "The data has been sampled for {} seconds in {} samples.\n",
        compact_decimal(snap.duration),
        snap.samples.len()
    );
    out += &row("s-coordinate", snap, |s| s.s, compact);
    out += &row("d-coordinate", snap, |s| s.d, compact);
    out += &row("s-speed", snap, |s| s.s_speed, compact_decimal);
    out += &row("d-speed", snap, |s| s.d_speed, compact_decimal);
    out += &row("distance to left wall", snap, |s| s.dist_left, compact);
    out += &row("distance to right wall", snap, |s| s.dist_right, compact);
    out += &format!("- crashed: {}\n", if snap.crashed { "True" } else { "False" });
    out
}

/// Builds the adherence prompt. `hints` are inserted one per line; with no
/// hints the guide block is left out.
pub fn build_decision_prompt<S: AsRef<str>>(human_prompt: &str, snap: &StateSnapshot, hints: &[S]) -> String {
    let mut out = format!("The human wants to: {}\n", sentence(human_prompt));
    out += &render_snapshot(snap);
    if !hints.is_empty() {
        out += "Here are some guides to help you reason:\n";
        for h in hints {
            out += h.as_ref().trim();
            out.push('\n');
        }
    }
    out += "Check if the car is doing what the human wants. Choose one of the following actions to command the car:\n";
    out += "- a) Continue behavior\n";
    out += "- b) Change behavior: instruction\n";
    out
}

fn strip_markup(text: &str) -> String {
    text.chars().filter(|c| *c != '*' && *c != '`').collect()
}

fn find_last(hay: &str, needle: &str) -> Option<usize> {
    hay.rfind(needle)
}

/// Earliest (or latest) of the two spellings of `marker` in `hay`.
fn find_marker(hay: &str, stem: &str, last: bool) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    for suffix in ["behavior", "behaviour"] {
        let m = format!("{stem} {suffix}");
        let hit = if last { hay.rfind(&m) } else { hay.find(&m) };
        if let Some(i) = hit {
            let better = match best {
                None => true,
                Some((j, _)) => (last && i > j) || (!last && i < j),
            };
            if better {
                best = Some((i, m.len()));
            }
        }
    }
    best
}

/// Text from `from` up to the next blank line, lines joined with spaces.
fn paragraph(text: &str) -> String {
    let mut parts = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if t.is_empty() {
            if parts.is_empty() {
                continue;
            }
            break;
        }
        parts.push(t);
    }
    parts.join(" ")
}

fn clean_instruction(text: &str) -> String {
    text.trim().trim_start_matches([':', '-']).trim().to_string()
}

/// Parses a decision response. The last `Action:` label, if any, scopes the
/// search; otherwise the last action phrase in the text wins. The
/// instruction is whichever of "text after the change marker" and "text
/// after `Instruction:`" appears later, falling back to the other when empty.
pub fn parse_decision(response: &str) -> Result<DecisionOutcome, DecisionParseError> {
    let text = strip_markup(response);
    let lower = text.to_ascii_lowercase();
    let (region_start, scoped) = match find_last(&lower, "action:") {
        Some(i) => (i + "action:".len(), true),
        None => (0, false),
    };
    let region = &lower[region_start..];
    let cont = find_marker(region, "continue", !scoped);
    let change = find_marker(region, "change", !scoped);
    let pick_change = match (cont, change) {
        (None, None) => return Err(DecisionParseError::NoAction { raw: response.into() }),
        (Some(_), None) => false,
        (None, Some(_)) => true,
        (Some((a, _)), Some((b, _))) => {
            if scoped {
                b < a
            } else {
                b > a
            }
        }
    };
    if !pick_change {
        return Ok(DecisionOutcome::continue_with(response));
    }
    let (at, len) = change.unwrap();
    let marker_end = region_start + at + len;

    let after_marker = {
        let rest = &text[marker_end..];
        let (first, tail) = match rest.find('\n') {
            Some(i) => (&rest[..i], &rest[i..]),
            None => (rest, ""),
        };
        let first = clean_instruction(first);
        if !first.is_empty() {
            let mut p = first;
            let more = paragraph_continuation(tail);
            if !more.is_empty() {
                p.push(' ');
                p += &more;
            }
            p
        } else {
            let p = paragraph(tail);
            if p.to_ascii_lowercase().starts_with("instruction:") {
                String::new()
            } else {
                clean_instruction(&p)
            }
        }
    };
    let labelled = find_last(&lower, "instruction:")
        .filter(|&i| i >= marker_end)
        .map(|i| (i, clean_instruction(&paragraph(&text[i + "instruction:".len()..]))));

    let instruction = match labelled {
        Some((_, l)) if !l.is_empty() => l,
        _ => after_marker,
    };
    if instruction.is_empty() {
        return Err(DecisionParseError::MissingInstruction { raw: response.into() });
    }
    Ok(DecisionOutcome { action: DecisionAction::Change, instruction: Some(instruction), rationale: response.into() })
}

// Lines directly following the marker line, up to a blank line.
fn paragraph_continuation(tail: &str) -> String {
    let mut parts = Vec::new();
    for line in tail.lines().skip(1) {
        let t = line.trim();
        if t.is_empty() {
            break;
        }
        parts.push(t);
    }
    parts.join(" ")
}
