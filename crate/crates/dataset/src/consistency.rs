//! Agreement between a transformed label and the original plain label.

use serde::{Deserialize, Serialize};

use crate::error::{DatasetError, Result};
use crate::label::{Event, FinalLabel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consistency {
    pub consistent: bool,
    /// One line per disagreement, empty when consistent.
    pub diff: Vec<String>,
}

/// Case-folded with runs of whitespace collapsed.
pub fn normalize_name(s: &str) -> String {
    // Per-character lowering: `str::to_lowercase` maps a word-final sigma
    // differently from a lone one, which would make folding context dependent.
    s.split_whitespace().map(|w| w.chars().flat_map(char::to_lowercase).collect::<String>()).collect::<Vec<_>>().join(" ")
}

fn compare_events(prefix: &str, t: &Event, o: &Event, diff: &mut Vec<String>) {
    let (nt, no) = (normalize_name(&t.name), normalize_name(&o.name));
    if nt != no {
        diff.push(format!("{prefix}event: `{nt}` vs `{no}`"));
    }
    if (t.start, t.end) != (o.start, o.end) {
        diff.push(format!("{prefix}interval: [{},{}] vs [{},{}]", t.start, t.end, o.start, o.end));
    }
}

/// True iff the labels agree after normalization: event names and answers
/// are compared case-folded, intervals and boxes exactly. Video-parsing
/// events are compared in order.
pub fn validate_consistency(transformed: &FinalLabel, original: &FinalLabel) -> Result<Consistency> {
    let mut diff = Vec::new();
    match (transformed, original) {
        (FinalLabel::Ave(t), FinalLabel::Ave(o)) => compare_events("", t, o, &mut diff),
        (FinalLabel::Avvp { events: t }, FinalLabel::Avvp { events: o }) => {
            if t.len() != o.len() {
                diff.push(format!("event count: {} vs {}", t.len(), o.len()));
            }
            for (i, (a, b)) in t.iter().zip(o).enumerate() {
                compare_events(&format!("#{i} "), a, b, &mut diff);
            }
        }
        (FinalLabel::Arig(t), FinalLabel::Arig(o)) => {
            if t != o {
                diff.push(format!("box: {:?} vs {:?}", t.as_array(), o.as_array()));
            }
        }
        (FinalLabel::Avqa { answer: t }, FinalLabel::Avqa { answer: o }) => {
            let (nt, no) = (normalize_name(t), normalize_name(o));
            if nt != no {
                diff.push(format!("answer: `{nt}` vs `{no}`"));
            }
        }
        (t, o) => return Err(DatasetError::KindMismatch(t.kind().to_string(), o.kind().to_string())),
    }
    Ok(Consistency { consistent: diff.is_empty(), diff })
}
