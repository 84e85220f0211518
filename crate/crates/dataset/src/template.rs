//! Few-shot prompt templates.
//!
//! A rendered prompt is every exemplar, in order, followed by the instance
//! block. The instance block is a format string with `{media_ref}` and
//! `{original_label}` slots; `{{` and `}}` are literal braces.

use serde::{Deserialize, Serialize};

use crate::error::{DatasetError, Result};
use crate::label::TaskKind;

pub const SLOTS: [&str; 2] = ["media_ref", "original_label"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    /// Description of the input clip and its plain label.
    pub input: String,
    /// Reference response with the reasoning spelled out.
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub kind: TaskKind,
    pub exemplars: Vec<Exemplar>,
    pub instance: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub media_ref: Option<String>,
    pub original_label: Option<String>,
}

impl Instance {
    pub fn new(media_ref: impl Into<String>, original_label: impl Into<String>) -> Self {
        Self { media_ref: Some(media_ref.into()), original_label: Some(original_label.into()) }
    }

    fn slot(&self, name: &str) -> Result<&str> {
        let v = match name {
            "media_ref" => &self.media_ref,
            "original_label" => &self.original_label,
            _ => return Err(DatasetError::UnknownSlot(name.to_string())),
        };
        v.as_deref().filter(|s| !s.is_empty()).ok_or_else(|| DatasetError::MissingSlot(name.to_string()))
    }
}

const INSTRUCTIONS: &str = "Rewrite the plain label of the clip below as a short reasoning process \
that relates what is heard to what is seen, then restate the label unchanged.";

impl PromptTemplate {
    /// Built-in template with one exemplar per kind.
    pub fn builtin(kind: TaskKind) -> Self {
        let (input, output) = match kind {
            TaskKind::Ave => (
                "Media: clips/ave_0001.mp4\nOriginal label: Race car, auto racing, [0,10]",
                "Reasoning: An engine roars steadily from the first second to the last, and a car \
speeds along a track in every frame. Sound and picture agree throughout the clip.\n\
Answer: Race car, auto racing, [0,10]",
            ),
            TaskKind::Avvp => (
                "Media: clips/avvp_0001.mp4\nOriginal label: Speech, [0,4]; Baby laughter, [3,10]",
                "Reasoning: A woman speaks during the opening seconds while facing the camera. A baby \
starts laughing near the end of her sentence and keeps laughing until the clip ends.\n\
Answer: Speech, [0,4]; Baby laughter, [3,10]",
            ),
            TaskKind::Arig => (
                "Media: images/arig_0001.jpg + audio/arig_0001.wav\nOriginal label: [12, 30, 88, 97]",
                "Reasoning: The audio is a dog barking. Only one dog is visible, standing in the lower \
middle of the picture, so the box spans its head to its paws.\n\
Answer: [12, 30, 88, 97]",
            ),
            TaskKind::Avqa => (
                "Media: clips/avqa_0001.mp4\nQuestion: Which instrument starts playing first?\nOriginal label: piano",
                "Reasoning: The first notes are struck chords, and the pianist on the left moves before \
the violinist lifts the bow.\n\
Answer: piano",
            ),
        };
        PromptTemplate {
            kind,
            exemplars: vec![Exemplar { input: input.into(), output: output.into() }],
            instance: format!("{INSTRUCTIONS}\nMedia: {{media_ref}}\nOriginal label: {{original_label}}\n"),
        }
    }

    /// Slot names referenced by the instance block, in order of appearance.
    pub fn slots(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for piece in tokenize(&self.instance)? {
            if let Piece::Slot(s) = piece {
                if !SLOTS.contains(&s) {
                    return Err(DatasetError::UnknownSlot(s.to_string()));
                }
                out.push(s.to_string());
            }
        }
        Ok(out)
    }
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn tokenize(fmt: &str) -> Result<Vec<Piece<'_>>> {
    let mut out = Vec::new();
    let mut rest = fmt;
    while let Some(i) = rest.find(['{', '}']) {
        out.push(Piece::Text(&rest[..i]));
        let tail = &rest[i..];
        if tail.starts_with("{{") {
            out.push(Piece::Text("{"));
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            out.push(Piece::Text("}"));
            rest = &tail[2..];
        } else if tail.starts_with('}') {
            return Err(DatasetError::Template(format!("unmatched `}}` at byte {}", fmt.len() - tail.len())));
        } else {
            let end = tail.find('}').ok_or_else(|| DatasetError::Template(format!("unclosed `{{` at byte {}", fmt.len() - tail.len())))?;
            out.push(Piece::Slot(&tail[1..end]));
            rest = &tail[end + 1..];
        }
    }
    out.push(Piece::Text(rest));
    Ok(out)
}

/// Renders exemplars then the instance block.
pub fn build_prompt(template: &PromptTemplate, instance: &Instance) -> Result<String> {
    let mut out = String::new();
    for (i, ex) in template.exemplars.iter().enumerate() {
        out.push_str(&format!("Example {}\nInput:\n{}\nOutput:\n{}\n\n", i + 1, ex.input, ex.output));
    }
    for piece in tokenize(&template.instance)? {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(s) => out.push_str(instance.slot(s)?),
        }
    }
    Ok(out)
}
