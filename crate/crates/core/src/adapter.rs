//! Parameter-adaptation prompt, `new_mpc_params` parsing and the clamp
//! policy that turns raw model output into a safe update.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::decision::sentence;
use crate::mpc::{MpcParams, ParamSchema};

/// Cost expression and parameter table given to the model.
pub const BASE_MEMORY: &str = include_str!("../data/base_memory.txt");

pub const RETURN_FORMAT: &str = "new_mpc_params = {param1: new_value1, param2: new_value2, ...}";

/// Alternative spellings seen in model output, mapped to schema names.
pub const ALIASES: [(&str, &str); 3] = [
    ("boundary_inflation", "track_safety_margin"),
    ("dv_min", "a_min"),
    ("dv_max", "a_max"),
];

/// Keys dropped on purpose: the steering-rate bound is a hardware constant.
pub const DROPPED: [&str; 2] = ["ddelta_min", "ddelta_max"];

/// Map as parsed, before any schema checks.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RawParams {
    pub values: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamUpdate {
    pub raw: BTreeMap<String, f64>,
    pub accepted: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub rejected: Vec<String>,
}

impl ParamUpdate {
    pub fn is_empty(&self) -> bool {
        self.accepted.is_empty()
    }

    /// `params` with the accepted values written over it.
    pub fn apply_to(&self, params: &MpcParams) -> MpcParams {
        let mut out = *params;
        for (k, v) in &self.accepted {
            out.set(k, *v);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParamParseError {
    #[error("no new_mpc_params assignment found")]
    NoAssignment { raw: String },
    #[error("new_mpc_params is not followed by a map")]
    NoMap { raw: String },
    #[error("unbalanced braces in new_mpc_params")]
    Unbalanced { raw: String },
}

pub fn build_adapter_prompt<S: AsRef<str>>(instruction: &str, base_memory: &str, memories: &[S]) -> String {
    let mut out = format!(
        "Adapt the tuneable parameters of the MPC so that the car achieves the following: {}\n",
        sentence(instruction)
    );
    out += "This is the MPC formulation:\n";
    out += base_memory.trim();
    out.push('\n');
    if !memories.is_empty() {
        out += "Make use of these memories:\n";
        let joined: Vec<&str> = memories.iter().map(|m| m.as_ref().trim()).collect();
        out += &joined.join("\n\n");
        out.push('\n');
    }
    out += "Return format:\n";
    out += RETURN_FORMAT;
    out.push('\n');
    out
}

/// Parses the last `new_mpc_params = {...}` in `text`. Keys may be bare or
/// quoted; nested braces are flattened; non-numeric values are skipped with
/// a warning.
pub fn parse_params(text: &str) -> Result<RawParams, ParamParseError> {
    let cleaned: String = text.chars().filter(|c| *c != '`' && *c != '*').collect();
    let cleaned = cleaned.replace("\\_", "_");
    let at = cleaned
        .rfind("new_mpc_params")
        .ok_or_else(|| ParamParseError::NoAssignment { raw: text.into() })?;
    let rest = &cleaned[at + "new_mpc_params".len()..];
    let open = rest
        .trim_start()
        .strip_prefix(['=', ':'])
        .map(|r| r.trim_start())
        .filter(|r| r.starts_with('{'))
        .ok_or_else(|| ParamParseError::NoMap { raw: text.into() })?;

    let mut depth = 0usize;
    let mut end = None;
    for (i, c) in open.char_indices() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    end = Some(i);
                    break;
                }
            }
            _ => {}
        }
    }
    let end = end.ok_or_else(|| ParamParseError::Unbalanced { raw: text.into() })?;
    let body: String = open[1..end].chars().filter(|c| *c != '{' && *c != '}').collect();

    let mut out = RawParams::default();
    for item in body.split([',', '\n', ';']) {
        let item = item.split('#').next().unwrap_or("").trim();
        if item.is_empty() {
            continue;
        }
        let Some(sep) = item.find([':', '=']) else {
            out.warnings.push(format!("ignored entry without a value: {item}"));
            continue;
        };
        let key = item[..sep].trim().trim_matches(['\'', '"']).trim();
        let value = item[sep + 1..].trim().trim_matches(['\'', '"']).trim();
        if key.is_empty() {
            out.warnings.push(format!("ignored entry without a key: {item}"));
            continue;
        }
        match value.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                if out.values.insert(key.to_string(), v).is_some() {
                    out.warnings.push(format!("{key} given more than once; last value kept"));
                }
            }
            _ => out.warnings.push(format!("{key}: non-numeric value {value:?} ignored")),
        }
    }
    Ok(out)
}

/// Renders a map in the return format, e.g. `new_mpc_params = {qn: 40}`.
pub fn render_params(values: &BTreeMap<String, f64>) -> String {
    let items: Vec<String> = values.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    format!("new_mpc_params = {{{}}}", items.join(", "))
}

/// Translates aliases, drops unknown keys, clamps into the schema ranges and
/// repairs `v_min > v_max` against `current` (the values the update will be
/// applied over). Never fails; every change is reported in `warnings`.
pub fn validate_and_clamp(raw: &RawParams, schema: &ParamSchema, current: &MpcParams) -> ParamUpdate {
    let mut up = ParamUpdate { raw: raw.values.clone(), warnings: raw.warnings.clone(), ..Default::default() };
    let mut canonical: BTreeMap<String, f64> = BTreeMap::new();
    for (k, &v) in &raw.values {
        if schema.get(k).is_some() {
            canonical.insert(k.clone(), v);
        }
    }
    for (k, &v) in &raw.values {
        if schema.get(k).is_some() {
            continue;
        }
        if let Some((_, to)) = ALIASES.iter().find(|(from, _)| from == k) {
            if canonical.contains_key(*to) {
                up.warnings.push(format!("{k} ignored: {to} given explicitly"));
                up.rejected.push(k.clone());
            } else {
                up.warnings.push(format!("{k} translated to {to}"));
                canonical.insert(to.to_string(), v);
            }
        } else if DROPPED.contains(&k.as_str()) {
            up.warnings.push(format!("{k} dropped: steering-rate bound is fixed"));
            up.rejected.push(k.clone());
        } else {
            up.warnings.push(format!("unknown parameter {k}"));
            up.rejected.push(k.clone());
        }
    }
    for (k, v) in canonical {
        let spec = schema.get(&k).expect("canonical key");
        let c = spec.clamp(v);
        if c != v {
            up.warnings.push(format!("{k} = {v} clamped to {c}"));
        }
        up.accepted.insert(k, c);
    }

    let merged = up.apply_to(current);
    if merged.v_min > merged.v_max {
        up.warnings.push(format!("v_min = {} exceeds v_max; set to {}", merged.v_min, merged.v_max));
        up.accepted.insert("v_min".into(), merged.v_max);
    }
    let merged = up.apply_to(current);
    if merged.a_min > merged.a_max {
        up.warnings.push(format!("a_min = {} exceeds a_max; set to {}", merged.a_min, merged.a_max));
        up.accepted.insert("a_min".into(), merged.a_max);
    }
    up
}

/// `(name, min, max, default)` rows of a base-memory parameter table.
pub fn base_memory_rows(text: &str) -> Vec<(String, f64, f64, f64)> {
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let body = line.split('#').next().unwrap_or("").trim();
        let Some((name, nums)) = body.split_once(' ') else { continue };
        let parsed: Vec<f64> = nums.split(',').filter_map(|x| x.trim().parse().ok()).collect();
        if parsed.len() == 3 && !name.contains(['=', '(', '.']) {
            rows.push((name.to_string(), parsed[0], parsed[1], parsed[2]));
        }
    }
    rows
}
