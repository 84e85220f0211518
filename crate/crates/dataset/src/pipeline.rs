//! Prompting, checking and filtering a batch of plain labels.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::client::{AnnotationClient, Pacer};
use crate::consistency::{validate_consistency, Consistency};
use crate::error::{DatasetError, ParseError, Result};
use crate::label::{parse_label, parse_response, FinalLabel, TaskKind, TransformedLabel};
use crate::template::{build_prompt, Instance, PromptTemplate};

/// One plain-labelled clip to transform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputItem {
    pub id: String,
    pub kind: TaskKind,
    pub media_ref: String,
    /// Label text under the kind's grammar.
    pub original_label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reason {
    Parse,
    Consistency,
    Client,
}

impl Reason {
    pub fn tag(self) -> &'static str {
        match self {
            Reason::Parse => "parse",
            Reason::Consistency => "consistency",
            Reason::Client => "client",
        }
    }
}

/// Outcome of parsing and validating one response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Checked {
    Parsed { label: TransformedLabel, check: Consistency },
    ParseFailed(ParseError),
    NoResponse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub checked: Checked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub reason: Reason,
    pub detail: String,
}

/// Why `c` must be rejected, or `None` if it is kept.
pub fn rejection(c: &Candidate) -> Option<Rejection> {
    match &c.checked {
        Checked::Parsed { check, .. } if check.consistent => None,
        Checked::Parsed { check, .. } => Some(Rejection { reason: Reason::Consistency, detail: check.diff.join("; ") }),
        Checked::ParseFailed(e) => Some(Rejection { reason: Reason::Parse, detail: e.to_string() }),
        Checked::NoResponse(msg) => Some(Rejection { reason: Reason::Client, detail: msg.clone() }),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Filtered {
    pub accepted: Vec<Candidate>,
    pub rejected: Vec<(Candidate, Rejection)>,
}

/// Partitions candidates, preserving relative order within each side.
pub fn filter_batch(items: Vec<Candidate>) -> Filtered {
    let mut out = Filtered::default();
    for c in items {
        match rejection(&c) {
            None => out.accepted.push(c),
            Some(r) => out.rejected.push((c, r)),
        }
    }
    out
}

/// Parses `response` under the original's kind and compares the labels.
pub fn check_response(response: &str, original: &FinalLabel) -> Result<Checked> {
    Ok(match parse_response(response, original.kind()) {
        Ok(label) => {
            let check = validate_consistency(&label.label, original)?;
            Checked::Parsed { label, check }
        }
        Err(e) => Checked::ParseFailed(e),
    })
}

/// One line of pipeline output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub kind: TaskKind,
    pub media_ref: String,
    pub original_label: String,
    pub prompt: String,
    pub response: Option<String>,
    pub transformed: Option<TransformedLabel>,
    pub accepted: bool,
    pub reason: Option<Reason>,
    pub detail: Option<String>,
}

impl Record {
    fn settle(&mut self, checked: Checked) {
        let c = Candidate { id: self.id.clone(), checked };
        let rej = rejection(&c);
        self.accepted = rej.is_none();
        self.reason = rej.as_ref().map(|r| r.reason);
        self.detail = rej.map(|r| r.detail);
        self.transformed = match c.checked {
            Checked::Parsed { label, .. } => Some(label),
            _ => None,
        };
    }
}

pub struct Pipeline<'a, C: AnnotationClient + ?Sized> {
    pub client: &'a C,
    pub template: &'a PromptTemplate,
}

impl<'a, C: AnnotationClient + ?Sized> Pipeline<'a, C> {
    pub fn new(client: &'a C, template: &'a PromptTemplate) -> Self {
        Self { client, template }
    }

    /// Prompts the client for every item and returns records in input
    /// order. Requests run on up to `rate_limit().max_concurrent` threads;
    /// a response slower than the client timeout counts as a client failure.
    pub fn run(&self, items: &[InputItem]) -> Result<Vec<Record>> {
        let mut seen = BTreeSet::new();
        let mut originals = Vec::with_capacity(items.len());
        let mut records = Vec::with_capacity(items.len());
        for it in items {
            if !seen.insert(it.id.as_str()) {
                return Err(DatasetError::Invalid(format!("duplicate id `{}`", it.id)));
            }
            if it.kind != self.template.kind {
                return Err(DatasetError::KindMismatch(it.kind.to_string(), self.template.kind.to_string()));
            }
            let original = parse_label(&it.original_label, it.kind)
                .map_err(|e| DatasetError::Invalid(format!("item `{}`: original label: {e}", it.id)))?;
            let prompt = build_prompt(self.template, &Instance::new(&it.media_ref, &it.original_label))?;
            originals.push(original);
            records.push(Record {
                id: it.id.clone(),
                kind: it.kind,
                media_ref: it.media_ref.clone(),
                original_label: it.original_label.clone(),
                prompt,
                response: None,
                transformed: None,
                accepted: false,
                reason: None,
                detail: None,
            });
        }

        let prompts: Vec<&str> = records.iter().map(|r| r.prompt.as_str()).collect();
        let responses = self.send_all(&prompts);
        for ((rec, original), resp) in records.iter_mut().zip(&originals).zip(responses) {
            let checked = match resp {
                Ok(text) => {
                    let c = check_response(&text, original)?;
                    rec.response = Some(text);
                    c
                }
                Err(e) => Checked::NoResponse(e.to_string()),
            };
            rec.settle(checked);
        }
        Ok(records)
    }

    fn send_all(&self, prompts: &[&str]) -> Vec<Result<String>> {
        let limit = self.client.rate_limit();
        let timeout = self.client.timeout();
        let pacer = Pacer::new(limit.min_interval);
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<String>>>> = prompts.iter().map(|_| Mutex::new(None)).collect();
        let workers = limit.max_concurrent.clamp(1, prompts.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(prompt) = prompts.get(i) else { break };
                    pacer.wait();
                    let start = Instant::now();
                    let mut r = self.client.send(prompt);
                    if r.is_ok() && start.elapsed() > timeout {
                        r = Err(DatasetError::Client(format!("no response within {timeout:?}")));
                    }
                    *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()).expect("every prompt is sent"))
            .collect()
    }
}

/// A rejected record handed out for manual correction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub id: String,
    pub kind: TaskKind,
    pub original_label: String,
    pub response: Option<String>,
    pub reason: Option<Reason>,
    pub detail: Option<String>,
    /// Filled in by the corrector; `None` leaves the record untouched.
    #[serde(default)]
    pub corrected_response: Option<String>,
}

pub fn export_rejected(records: &[Record]) -> Vec<Correction> {
    records
        .iter()
        .filter(|r| !r.accepted)
        .map(|r| Correction {
            id: r.id.clone(),
            kind: r.kind,
            original_label: r.original_label.clone(),
            response: r.response.clone(),
            reason: r.reason,
            detail: r.detail.clone(),
            corrected_response: None,
        })
        .collect()
}

/// Re-checks every filled-in correction against its record's original
/// label and updates the record. Returns how many records were updated.
pub fn apply_corrections(records: &mut [Record], corrections: &[Correction]) -> Result<usize> {
    let index: BTreeMap<String, usize> = records.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
    let mut applied = 0;
    for c in corrections {
        let Some(text) = &c.corrected_response else { continue };
        let &i = index.get(&c.id).ok_or_else(|| DatasetError::Invalid(format!("correction for unknown id `{}`", c.id)))?;
        let rec = &mut records[i];
        let original = parse_label(&rec.original_label, rec.kind).map_err(|e| DatasetError::Invalid(format!("item `{}`: original label: {e}", rec.id)))?;
        let checked = check_response(text, &original)?;
        rec.response = Some(text.clone());
        rec.settle(checked);
        applied += 1;
    }
    Ok(applied)
}

pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DatasetError::io(format!("line {}", n + 1), e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DatasetError::Invalid(format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(items: &[T], mut w: impl Write) -> Result<()> {
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| DatasetError::io("<output>", e))?;
    }
    w.flush().map_err(|e| DatasetError::io("<output>", e))
}
