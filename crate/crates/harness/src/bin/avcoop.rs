use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avcoop_core::lora::{Aggregation, RouterTrace};
use avcoop_core::model::AvModel;
use avcoop_core::tensor::GradCheckConfig;
use avcoop_harness::analysis::{analyze_router, erp_comparison, gradient_suite, head_drop_experiment, head_drop_verdicts};
use avcoop_harness::config::ExperimentConfig;
use avcoop_harness::data::{gen_family, gen_suite, read_suite, write_suite, Family, TaskSample};
use avcoop_harness::error::{ErrorReport, HarnessError, Result};
use avcoop_harness::eval::evaluate;
use avcoop_harness::train::{run, write_artifacts, write_traces};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "avcoop", about = "Synthetic audio-visual multi-task experiments with routed LoRA heads")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Agg {
    FlatMean,
    LayerMean,
    LastLayer,
}

impl From<Agg> for Aggregation {
    fn from(a: Agg) -> Self {
        match a {
            Agg::FlatMean => Aggregation::FlatMean,
            Agg::LayerMean => Aggregation::LayerMean,
            Agg::LastLayer => Aggregation::LastLayer,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic suite as JSON lines.
    Gen {
        /// temporal, spatial, reasoning, segmentation or all
        #[arg(long, default_value = "all")]
        family: String,
        /// Samples per family.
        #[arg(long, default_value_t = 32)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_reasoning: bool,
        /// Take the data geometry from this experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a config and write report, metrics, traces and checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        dry_run: bool,
        /// Overrides `output_dir`; defaults to `runs/seed<N>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a suite.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value_t = 14)]
        max_decode: usize,
        /// Also write route traces here.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Router clustering statistics from one or more trace files.
    Analyze {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "flat-mean")]
        aggregation: Agg,
        /// Directory for router_scatter.csv, router.svg and router.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Head-drop table of a checkpoint on a suite.
    Drop {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long, default_value_t = 14)]
        max_decode: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every trainable parameter class.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Entries checked per parameter tensor; all when omitted.
        #[arg(long)]
        max_entries: Option<usize>,
    },
    /// Same config trained with and without the reasoning prefix.
    Erp {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>, steps: Option<usize>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(s) = steps {
        cfg.steps = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| HarnessError::io(path, e))
}

fn load_model(path: &Path) -> Result<AvModel> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(AvModel::load_json(&text)?)
}

fn load_suite(path: &Path) -> Result<Vec<TaskSample>> {
    read_suite(open(path)?)
}

fn write(path: &Path, s: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, s).map_err(|e| HarnessError::io(path, e))
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen { family, count, seed, no_reasoning, config, out } => {
            let data = load_config(config.as_deref(), None, None)?.data;
            let samples = if family == "all" {
                gen_suite(seed, [count; 4], &data, !no_reasoning)?
            } else {
                let f = Family::from_tag(&family).ok_or_else(|| HarnessError::Config(format!("unknown family {family}")))?;
                gen_family(f, seed, count, &data, !no_reasoning)?
            };
            let file = File::create(&out).map_err(|e| HarnessError::io(&out, e))?;
            write_suite(&samples, std::io::BufWriter::new(file))?;
            eprintln!("wrote {} samples to {}", samples.len(), out.display());
        }
        Cmd::Train { config, seed, steps, dry_run, out } => {
            let mut cfg = load_config(config.as_deref(), seed, steps)?;
            cfg.dry_run |= dry_run;
            let dir = out
                .or_else(|| cfg.output_dir.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(format!("runs/seed{}", cfg.seed)));
            let output = run(&cfg)?;
            write_artifacts(&dir, &output)?;
            let r = &output.report;
            print_json(&serde_json::json!({
                "output_dir": dir.display().to_string(),
                "final_loss": r.loss_curve.last(),
                "metrics": r.metrics,
                "router_gap": r.router.as_ref().map(|a| a.gap),
                "wall_clock_secs": r.wall_clock_secs,
            }))?;
        }
        Cmd::Eval { checkpoint, suite, max_decode, trace } => {
            let mut model = load_model(&checkpoint)?;
            let suite = load_suite(&suite)?;
            let cfg = ExperimentConfig::default().metrics;
            let mut traces = BTreeMap::new();
            model.set_tracing(trace.is_some());
            let result = evaluate(&model, &suite, max_decode, &cfg, trace.is_some().then_some(&mut traces))?;
            if let Some(path) = trace {
                write_traces(&path, &traces.into_values().collect::<Vec<_>>())?;
            }
            print_json(&result)?;
        }
        Cmd::Analyze { traces, aggregation, out } => {
            let mut all: Vec<RouterTrace> = Vec::new();
            for p in &traces {
                for t in RouterTrace::read_jsonl(open(p)?)? {
                    match all.iter_mut().find(|a| a.task_tag == t.task_tag) {
                        // Sample indices are only unique within one file.
                        Some(a) => {
                            let offset = a.rows.iter().map(|r| r.sample_index + 1).max().unwrap_or(0);
                            a.rows.extend(t.rows.into_iter().map(|mut r| {
                                r.sample_index += offset;
                                r
                            }));
                        }
                        None => all.push(t),
                    }
                }
            }
            let a = analyze_router(&all, aggregation.into())?;
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
                write(&dir.join("router_scatter.csv"), a.scatter_csv())?;
                write(&dir.join("router.svg"), a.scatter_svg())?;
                write(&dir.join("router.json"), serde_json::to_string_pretty(&a)?)?;
            }
            print_json(&serde_json::json!({
                "intra": a.intra,
                "inter": a.inter,
                "gap": a.gap,
                "mean_profiles": a.mean_profiles,
            }))?;
        }
        Cmd::Drop { checkpoint, suite, max_decode, out } => {
            let mut model = load_model(&checkpoint)?;
            let suite = load_suite(&suite)?;
            let cfg = ExperimentConfig::default().metrics;
            let mut traces = BTreeMap::new();
            model.set_tracing(true);
            evaluate(&model, &suite, max_decode, &cfg, Some(&mut traces))?;
            model.set_tracing(false);
            let profiles = traces
                .values()
                .map(|t| Ok((t.task_tag.clone(), t.profile()?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            let table = head_drop_experiment(&mut model, &suite, max_decode, &cfg)?;
            if let Some(path) = out {
                write(&path, table.to_csv())?;
            }
            print_json(&serde_json::json!({ "table": table, "verdicts": head_drop_verdicts(&table, &profiles)? }))?;
        }
        Cmd::Gradcheck { seeds, max_entries } => {
            let seeds: Vec<u64> = (0..seeds).collect();
            let report = gradient_suite(&seeds, &GradCheckConfig { max_entries, ..GradCheckConfig::default() })?;
            print_json(&report)?;
            if !report.passed {
                return Err(HarnessError::CheckFailed(format!("gradient suite above tolerance (tol {})", report.tol)));
            }
        }
        Cmd::Erp { config, seed, steps } => {
            let cfg = load_config(config.as_deref(), seed, steps)?;
            let cmp = erp_comparison(&ExperimentConfig { head_drop: false, ..cfg })?;
            print!("{}", cmp.to_markdown());
            println!("answer extraction: with {:.3}, without {:.3}", cmp.extraction_with, cmp.extraction_without);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport::from(&e);
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", report.error)));
            ExitCode::FAILURE
        }
    }
}
