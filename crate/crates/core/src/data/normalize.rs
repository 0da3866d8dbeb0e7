//! Rule-based answer normalization into the canonical scoring format.

use super::TaskKind;
use regex::Regex;
use std::sync::OnceLock;

/// Marker for answers nothing could be extracted from. Scored as wrong and
/// counted separately in the report.
pub const NORMALIZATION_FAILURE: &str = "<invalid>";

fn re(pattern: &str, slot: &'static OnceLock<Regex>) -> &'static Regex {
    slot.get_or_init(|| Regex::new(pattern).unwrap())
}

static TAG: OnceLock<Regex> = OnceLock::new();
static DECIMAL: OnceLock<Regex> = OnceLock::new();
static INTEGER: OnceLock<Regex> = OnceLock::new();
static SIDE: OnceLock<Regex> = OnceLock::new();
static OPTION: OnceLock<Regex> = OnceLock::new();

/// Extract the canonical answer from free-form text.
///
/// distance → first decimal number, two decimals; count → first integer;
/// left_right → whichever of "left"/"right" appears first; mcq → first
/// region tag, falling back to a standalone option letter. Region tags are
/// stripped before numeric extraction so `<R0>` never reads as a number.
pub fn normalize_answer(text: &str, task: TaskKind) -> Option<String> {
    let tag = re(r"<R\d+>", &TAG);
    match task {
        TaskKind::Distance => {
            let stripped = tag.replace_all(text, " ");
            let m = re(r"-?\d+(?:\.\d+)?", &DECIMAL).find(&stripped)?;
            let v: f64 = m.as_str().parse().ok()?;
            Some(format!("{v:.2}"))
        }
        TaskKind::Count => {
            let stripped = tag.replace_all(text, " ");
            let m = re(r"\d+", &INTEGER).find(&stripped)?;
            let v: u64 = m.as_str().parse().ok()?;
            Some(v.to_string())
        }
        TaskKind::LeftRight => {
            let m = re(r"(?i)\b(left|right)\b", &SIDE).find(text)?;
            Some(m.as_str().to_lowercase())
        }
        TaskKind::Mcq => {
            if let Some(m) = tag.find(text) {
                return Some(m.as_str().to_string());
            }
            let m = re(r"\b([A-D])\b", &OPTION).find(text)?;
            Some(m.as_str().to_string())
        }
    }
}

/// Like [`normalize_answer`] but substitutes the failure marker.
pub fn normalize_or_marker(text: &str, task: TaskKind) -> String {
    normalize_answer(text, task).unwrap_or_else(|| NORMALIZATION_FAILURE.to_string())
}
