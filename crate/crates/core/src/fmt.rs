//! Number rendering shared by the prompt builders.

use alloc::format;
use alloc::string::String;

/// Renders `value` with at most three decimals and no trailing zeros
/// (`1.0` -> `"1"`, `-0.6500` -> `"-0.65"`). Negative zero prints as `"0"`.
pub fn compact(value: f64) -> String {
    if !value.is_finite() {
        return format!("{value}");
    }
    let mut s = format!("{:.3}", value);
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = String::from("0");
    }
    s
}

/// Like [`compact`] but always keeps one decimal (`2` -> `"2.0"`).
pub fn compact_decimal(value: f64) -> String {
    let s = compact(value);
    if s.contains('.') || !value.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}
