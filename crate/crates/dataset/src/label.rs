//! Task-typed labels, their textual grammar, and the reasoning response
//! format. The grammars are shipped as EBNF under `grammars/`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DatasetError, ParseError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Audio-visual event localization: one event and its interval.
    Ave,
    /// Audio-visual video parsing: several events with intervals.
    Avvp,
    /// Audio-referred image grounding: a bounding box.
    Arig,
    /// Audio-visual question answering: a free-form answer.
    Avqa,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [TaskKind::Ave, TaskKind::Avvp, TaskKind::Arig, TaskKind::Avqa];

    pub fn tag(self) -> &'static str {
        match self {
            TaskKind::Ave => "ave",
            TaskKind::Avvp => "avvp",
            TaskKind::Arig => "arig",
            TaskKind::Avqa => "avqa",
        }
    }

    /// EBNF grammar of this kind's final label.
    pub fn grammar(self) -> &'static str {
        match self {
            TaskKind::Ave => include_str!("../grammars/ave.ebnf"),
            TaskKind::Avvp => include_str!("../grammars/avvp.ebnf"),
            TaskKind::Arig => include_str!("../grammars/arig.ebnf"),
            TaskKind::Avqa => include_str!("../grammars/avqa.ebnf"),
        }
    }
}

/// Grammar of the full reasoning response.
pub const RESPONSE_GRAMMAR: &str = include_str!("../grammars/response.ebnf");
pub const GRAMMAR_VERSION: u32 = 1;

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for TaskKind {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| DatasetError::Invalid(format!("unknown task kind `{s}`")))
    }
}

/// An event with a closed interval in whole seconds (or segments).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub name: String,
    pub start: u32,
    pub end: u32,
}

/// Pixel-inclusive corners `[x_left, y_top, x_right, y_bottom]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x_left: u32,
    pub y_top: u32,
    pub x_right: u32,
    pub y_bottom: u32,
}

impl PixelBox {
    pub fn new(x_left: u32, y_top: u32, x_right: u32, y_bottom: u32) -> Self {
        Self { x_left, y_top, x_right, y_bottom }
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.x_left, self.y_top, self.x_right, self.y_bottom]
    }

    pub fn is_ordered(&self) -> bool {
        self.x_left <= self.x_right && self.y_top <= self.y_bottom
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FinalLabel {
    Ave(Event),
    Avvp { events: Vec<Event> },
    Arig(PixelBox),
    Avqa { answer: String },
}

impl FinalLabel {
    pub fn kind(&self) -> TaskKind {
        match self {
            FinalLabel::Ave(_) => TaskKind::Ave,
            FinalLabel::Avvp { .. } => TaskKind::Avvp,
            FinalLabel::Arig(_) => TaskKind::Arig,
            FinalLabel::Avqa { .. } => TaskKind::Avqa,
        }
    }

    /// Checks the constraints the grammar cannot express by shape alone, so
    /// that `parse(format(label)) == label` holds for every valid label.
    pub fn validate(&self) -> Result<(), DatasetError> {
        match self {
            FinalLabel::Ave(e) => check_event(e),
            FinalLabel::Avvp { events } => {
                if events.is_empty() {
                    return Err(DatasetError::Invalid("avvp label needs at least one event".into()));
                }
                events.iter().try_for_each(check_event)
            }
            FinalLabel::Arig(b) if !b.is_ordered() => Err(DatasetError::Invalid(format!("box {:?} has inverted corners", b.as_array()))),
            FinalLabel::Arig(_) => Ok(()),
            FinalLabel::Avqa { answer } => {
                if answer.is_empty() || answer.trim() != answer || answer.contains(['\n', '\r']) {
                    return Err(DatasetError::Invalid("answer must be a trimmed, non-empty single line".into()));
                }
                Ok(())
            }
        }
    }

    pub fn parse(text: &str, kind: TaskKind) -> Result<Self, ParseError> {
        parse_label(text, kind)
    }
}

impl fmt::Display for FinalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FinalLabel::Ave(e) => write_event(f, e),
            FinalLabel::Avvp { events } => {
                for (i, e) in events.iter().enumerate() {
                    if i > 0 {
                        f.write_str("; ")?;
                    }
                    write_event(f, e)?;
                }
                Ok(())
            }
            FinalLabel::Arig(b) => write!(f, "[{}, {}, {}, {}]", b.x_left, b.y_top, b.x_right, b.y_bottom),
            FinalLabel::Avqa { answer } => f.write_str(answer),
        }
    }
}

fn write_event(f: &mut fmt::Formatter<'_>, e: &Event) -> fmt::Result {
    write!(f, "{}, [{},{}]", e.name, e.start, e.end)
}

fn check_event(e: &Event) -> Result<(), DatasetError> {
    if e.name.is_empty() || e.name.trim() != e.name {
        return Err(DatasetError::Invalid(format!("event name `{}` must be trimmed and non-empty", e.name)));
    }
    if e.name.contains(['[', ']', ';', '\n', '\r']) {
        return Err(DatasetError::Invalid(format!("event name `{}` contains a reserved character", e.name)));
    }
    if e.start > e.end {
        return Err(DatasetError::Invalid(format!("interval [{},{}] is inverted", e.start, e.end)));
    }
    Ok(())
}

/// A label rewritten with an explicit reasoning process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformedLabel {
    pub reasoning: String,
    pub label: FinalLabel,
}

impl TransformedLabel {
    pub fn validate(&self) -> Result<(), DatasetError> {
        self.label.validate()?;
        if self.reasoning.trim() != self.reasoning {
            return Err(DatasetError::Invalid("reasoning must be trimmed".into()));
        }
        if self.reasoning.lines().any(is_answer_line) {
            return Err(DatasetError::Invalid("reasoning contains an `Answer:` line".into()));
        }
        Ok(())
    }
}

impl fmt::Display for TransformedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.reasoning.is_empty() {
            writeln!(f, "{REASONING} {}", self.reasoning)?;
        }
        write!(f, "{ANSWER} {}", self.label)
    }
}

const REASONING: &str = "Reasoning:";
const ANSWER: &str = "Answer:";

fn is_answer_line(line: &str) -> bool {
    line.trim_start().starts_with(ANSWER)
}

pub fn format_label(label: &FinalLabel) -> String {
    label.to_string()
}

pub fn format_response(t: &TransformedLabel) -> String {
    t.to_string()
}

/// Splits a response into reasoning and final label. Exactly one line may
/// start with `Answer:`; anything before it (minus an optional `Reasoning:`
/// prefix) is the reasoning, and nothing but whitespace may follow it.
pub fn parse_response(text: &str, kind: TaskKind) -> Result<TransformedLabel, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError::new(0, "empty response"));
    }
    let mut answer: Option<usize> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if is_answer_line(line) {
            if answer.is_some() {
                return Err(ParseError::new(offset, "more than one `Answer:` line"));
            }
            answer = Some(offset);
        }
        offset += line.len();
    }
    let Some(line_start) = answer else {
        return Err(ParseError::new(text.len(), "missing `Answer:` line"));
    };
    let before = &text[..line_start];
    let reasoning = before.trim_start().strip_prefix(REASONING).unwrap_or(before).trim().to_string();

    let rest = &text[line_start..];
    let line_end = rest.find('\n').unwrap_or(rest.len());
    if !rest[line_end..].trim().is_empty() {
        return Err(ParseError::new(line_start + line_end + 1, "text after the answer line"));
    }
    let line = &rest[..line_end];
    let key = line.find(ANSWER).expect("answer line") + ANSWER.len();
    let label_start = line_start + key;
    let label = parse_label(&text[label_start..line_start + line_end], kind).map_err(|e| e.shifted(label_start))?;
    Ok(TransformedLabel { reasoning, label })
}

/// Parses a bare final label; error positions are relative to `text`.
pub fn parse_label(text: &str, kind: TaskKind) -> Result<FinalLabel, ParseError> {
    match kind {
        TaskKind::Ave => parse_event(text, 0).map(FinalLabel::Ave),
        TaskKind::Avvp => {
            let mut events = Vec::new();
            let mut offset = 0;
            for part in text.split(';') {
                events.push(parse_event(part, offset)?);
                offset += part.len() + 1;
            }
            Ok(FinalLabel::Avvp { events })
        }
        TaskKind::Arig => parse_box(text).map(FinalLabel::Arig),
        TaskKind::Avqa => {
            if text.contains(['\n', '\r']) {
                let pos = text.find(['\n', '\r']).unwrap_or(0);
                return Err(ParseError::new(pos, "answer must be a single line"));
            }
            let answer = text.trim();
            if answer.is_empty() {
                return Err(ParseError::new(0, "empty answer"));
            }
            Ok(FinalLabel::Avqa { answer: answer.to_string() })
        }
    }
}

/// `name , [start,end]`, with the interval after the last `[`. Names may
/// themselves contain commas ("Race car, auto racing").
fn parse_event(text: &str, base: usize) -> Result<Event, ParseError> {
    let err = |pos: usize, msg: &str| ParseError::new(base + pos, msg);
    let open = text.rfind('[').ok_or_else(|| err(text.len(), "expected `[start,end]`"))?;
    let head = text[..open].trim_end();
    let name = head.strip_suffix(',').ok_or_else(|| err(head.len(), "expected `,` before the interval"))?.trim();
    if name.is_empty() {
        return Err(err(0, "empty event name"));
    }
    if let Some(p) = name.find(['[', ']', ';', '\n', '\r']) {
        let lead = text.len() - text.trim_start().len();
        return Err(err(lead + p, "reserved character in event name"));
    }
    let close = text[open..].find(']').map(|p| open + p).ok_or_else(|| err(text.len(), "unclosed interval"))?;
    if !text[close + 1..].trim().is_empty() {
        return Err(err(close + 1, "text after the interval"));
    }
    let nums = parse_ints(&text[open + 1..close], base + open + 1)?;
    let [start, end] = nums[..] else {
        return Err(err(open, "interval needs exactly two integers"));
    };
    if start > end {
        return Err(err(open, "interval start exceeds end"));
    }
    Ok(Event { name: name.to_string(), start, end })
}

fn parse_box(text: &str) -> Result<PixelBox, ParseError> {
    let lead = text.len() - text.trim_start().len();
    let body = text.trim();
    let inner = body
        .strip_prefix('[')
        .ok_or_else(|| ParseError::new(lead, "expected `[`"))?
        .strip_suffix(']')
        .ok_or_else(|| ParseError::new(lead + body.len(), "expected `]`"))?;
    let nums = parse_ints(inner, lead + 1)?;
    let [x_left, y_top, x_right, y_bottom] = nums[..] else {
        return Err(ParseError::new(lead, "box needs exactly four integers"));
    };
    let b = PixelBox { x_left, y_top, x_right, y_bottom };
    if !b.is_ordered() {
        return Err(ParseError::new(lead, "box corners are inverted"));
    }
    Ok(b)
}

/// Comma-separated unsigned integers with optional surrounding spaces.
fn parse_ints(text: &str, base: usize) -> Result<Vec<u32>, ParseError> {
    let mut out = Vec::new();
    let mut offset = 0;
    for part in text.split(',') {
        let lead = part.len() - part.trim_start().len();
        let digits = part.trim();
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseError::new(base + offset + lead, format!("expected an unsigned integer, found `{digits}`")));
        }
        let v = digits.parse().map_err(|_| ParseError::new(base + offset + lead, "integer out of range"))?;
        out.push(v);
        offset += part.len() + 1;
    }
    Ok(out)
}
