use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use avcoop_dataset::client::{AnnotationClient, RateLimit, StubClient};
use avcoop_dataset::error::{DatasetError, Result};
use avcoop_dataset::label::{parse_response, TaskKind};
use avcoop_dataset::mask::{mask_to_bbox, Mask};
use avcoop_dataset::pipeline::{apply_corrections, export_rejected, read_jsonl, write_jsonl, Correction, InputItem, Pipeline, Record};
use avcoop_dataset::template::{build_prompt, Instance, PromptTemplate};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "avcoop-dataset", about = "Turn plain audio-visual labels into reasoning-annotated targets")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClientKind {
    Stub,
    /// Needs the `http` feature and AVCOOP_ANNOTATOR_URL.
    Http,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render the prompt for one instance.
    Prompt {
        #[arg(long)]
        kind: TaskKind,
        #[arg(long)]
        media: String,
        #[arg(long)]
        label: String,
        /// JSON template; the built-in one for `kind` otherwise.
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Parse a response (file or stdin) and print it as JSON.
    Parse {
        #[arg(long)]
        kind: TaskKind,
        file: Option<PathBuf>,
    },
    /// Prompt, parse, validate and filter a JSON-lines batch of items.
    Run {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "stub")]
        client: ClientKind,
        /// Templates as JSON files, one per kind; built-ins fill the rest.
        #[arg(long)]
        template: Vec<PathBuf>,
        /// Share of stub responses corrupted, per thousand.
        #[arg(long, default_value_t = 50)]
        corrupt_permille: u16,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        /// Minimum spacing between requests.
        #[arg(long, default_value_t = 0)]
        min_interval_ms: u64,
        #[arg(long, default_value_t = 60_000)]
        timeout_ms: u64,
    },
    /// Write the rejected records of a run for manual correction.
    ExportRejected {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-check corrected responses and update the records.
    ImportCorrections {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        corrections: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bounding box of a mask given as rows of 0/1 characters.
    Bbox { mask: PathBuf },
    /// Print the label grammar of a kind.
    Grammar {
        #[arg(long)]
        kind: TaskKind,
    },
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(BufReader::new(File::open(path).map_err(|e| DatasetError::io(path, e))?))
}

fn write_records<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_jsonl(items, BufWriter::new(File::create(path).map_err(|e| DatasetError::io(path, e))?))
}

fn load_template(path: &Path) -> Result<PromptTemplate> {
    let t: PromptTemplate = serde_json::from_str(&read_text(path)?)?;
    t.slots()?;
    Ok(t)
}

fn make_client(kind: ClientKind, task: TaskKind, corrupt: u16, limit: RateLimit, timeout: Duration) -> Result<Box<dyn AnnotationClient>> {
    match kind {
        ClientKind::Stub => Ok(Box::new(StubClient { kind: task, corrupt_permille: corrupt, limit })),
        #[cfg(feature = "http")]
        ClientKind::Http => Ok(Box::new(avcoop_dataset::client::HttpClient::from_env(limit, timeout)?)),
        #[cfg(not(feature = "http"))]
        ClientKind::Http => {
            let _ = timeout;
            Err(DatasetError::Client("built without the `http` feature".into()))
        }
    }
}

fn summary(records: &[Record]) -> serde_json::Value {
    let mut reasons: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records.iter().filter(|r| !r.accepted) {
        *reasons.entry(r.reason.map_or("unknown", |x| x.tag())).or_default() += 1;
    }
    let accepted = records.iter().filter(|r| r.accepted).count();
    serde_json::json!({ "total": records.len(), "accepted": accepted, "rejected": reasons })
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Prompt { kind, media, label, template } => {
            let t = match template {
                Some(p) => load_template(&p)?,
                None => PromptTemplate::builtin(kind),
            };
            print!("{}", build_prompt(&t, &Instance::new(media, label))?);
        }
        Cmd::Parse { kind, file } => {
            let text = match file {
                Some(p) => read_text(&p)?,
                None => {
                    let mut s = String::new();
                    std::io::stdin().read_to_string(&mut s).map_err(|e| DatasetError::io("<stdin>", e))?;
                    s
                }
            };
            println!("{}", serde_json::to_string_pretty(&parse_response(&text, kind)?)?);
        }
        Cmd::Run { input, out, client, template, corrupt_permille, concurrency, min_interval_ms, timeout_ms } => {
            let items: Vec<InputItem> = read_records(&input)?;
            let mut templates: BTreeMap<TaskKind, PromptTemplate> = TaskKind::ALL.into_iter().map(|k| (k, PromptTemplate::builtin(k))).collect();
            for p in &template {
                let t = load_template(p)?;
                templates.insert(t.kind, t);
            }
            let limit = RateLimit { max_concurrent: concurrency, min_interval: Duration::from_millis(min_interval_ms) };
            let mut by_id: BTreeMap<String, Record> = BTreeMap::new();
            for kind in TaskKind::ALL {
                let group: Vec<InputItem> = items.iter().filter(|i| i.kind == kind).cloned().collect();
                if group.is_empty() {
                    continue;
                }
                let c = make_client(client, kind, corrupt_permille, limit, Duration::from_millis(timeout_ms))?;
                for r in Pipeline::new(c.as_ref(), &templates[&kind]).run(&group)? {
                    if by_id.contains_key(&r.id) {
                        return Err(DatasetError::Invalid(format!("duplicate id `{}`", r.id)));
                    }
                    by_id.insert(r.id.clone(), r);
                }
            }
            let records: Vec<Record> = items.iter().filter_map(|i| by_id.remove(&i.id)).collect();
            write_records(&out, &records)?;
            println!("{}", summary(&records));
        }
        Cmd::ExportRejected { records, out } => {
            let records: Vec<Record> = read_records(&records)?;
            let rejected = export_rejected(&records);
            write_records(&out, &rejected)?;
            eprintln!("exported {} rejected records", rejected.len());
        }
        Cmd::ImportCorrections { records, corrections, out } => {
            let mut recs: Vec<Record> = read_records(&records)?;
            let fixes: Vec<Correction> = read_records(&corrections)?;
            let n = apply_corrections(&mut recs, &fixes)?;
            write_records(&out, &recs)?;
            eprintln!("applied {n} corrections");
            println!("{}", summary(&recs));
        }
        Cmd::Bbox { mask } => {
            let text = read_text(&mask)?;
            let rows: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            let width = rows.first().map_or(0, |r| r.len());
            let mut data = Vec::with_capacity(rows.len() * width);
            for (i, r) in rows.iter().enumerate() {
                if r.len() != width {
                    return Err(DatasetError::Invalid(format!("row {} has {} columns, expected {width}", i + 1, r.len())));
                }
                for ch in r.chars() {
                    data.push(match ch {
                        '1' => true,
                        '0' => false,
                        _ => return Err(DatasetError::Invalid(format!("row {}: unexpected `{ch}`", i + 1))),
                    });
                }
            }
            let b = mask_to_bbox(&Mask::new(rows.len(), width, data)?)?;
            println!("{:?}", b.as_array());
        }
        Cmd::Grammar { kind } => {
            print!("{}", kind.grammar());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string(), "kind": e.kind() }));
            ExitCode::FAILURE
        }
    }
}
