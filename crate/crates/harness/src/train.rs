//! Mixed-task training and run reports.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use avcoop_core::lora::RouterTrace;
use avcoop_core::model::{extract_mask_embeddings, AvModel};
use avcoop_core::objectives::{combine_losses_on_tape, l_bce, l_dice, l_txt, EvalResult, LossTerms, LossWeights};
use avcoop_core::tensor::{cosine_warmup_lr, AdamW, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{analyze_router, head_drop_experiment, HeadDropTable, RouterAnalysis};
use crate::config::ExperimentConfig;
use crate::data::{allocate, gen_suite, write_suite, Family, TaskSample};
use crate::error::{HarnessError, Result};
use crate::eval::evaluate;

const EVAL_SALT: u64 = 0xe7a1_5eed_0000_0001;
const BATCH_SALT: u64 = 0xba7c_4e50_0000_0002;
const MODEL_SALT: u64 = 0x30de_1000_0000_0003;
/// Target id excluded from the text loss.
pub const IGNORE: usize = usize::MAX;

pub struct Datasets {
    pub train: Vec<TaskSample>,
    pub eval: Vec<TaskSample>,
}

/// Training pool split by the task mix, plus a balanced evaluation suite
/// drawn from a disjoint seed stream.
pub fn build_datasets(cfg: &ExperimentConfig) -> Result<Datasets> {
    let counts = allocate(cfg.train_samples, &cfg.task_mix.as_array());
    let train = gen_suite(cfg.seed, counts, &cfg.data, cfg.with_reasoning)?;
    let eval = gen_suite(cfg.seed ^ EVAL_SALT, [cfg.eval_per_family; 4], &cfg.data, cfg.with_reasoning)?;
    Ok(Datasets { train, eval })
}

pub fn init_model(cfg: &ExperimentConfig) -> Result<AvModel> {
    Ok(AvModel::new(cfg.model, cfg.seed ^ MODEL_SALT)?)
}

/// Objective for one sample: next-token cross-entropy on the target span,
/// plus BCE and dice on the decoded mask for segmentation samples.
pub fn sample_loss(model: &AvModel, tape: &mut Tape, sample: &TaskSample, w: &LossWeights) -> Result<Var> {
    let text = sample.full_text();
    let out = model.forward(tape, &sample.features, &text)?;
    let targets = text_targets(sample.prompt.len(), &text, model.config.prefix_len());
    let mut terms = LossTerms { txt: Some(l_txt(tape, out.logits, &targets, IGNORE)?), ..Default::default() };
    if sample.family == Family::Segmentation {
        let pyr = sample.pyramid.as_ref().ok_or_else(|| HarnessError::Config("segmentation sample without pyramid".into()))?;
        let mask = sample.gt.mask.as_ref().ok_or_else(|| HarnessError::Config("segmentation sample without mask".into()))?;
        let gt: Vec<f64> = mask.iter().map(|&b| b as u8 as f64).collect();
        let groups = extract_mask_embeddings(tape, out.hidden, &text, &model.vocab)?;
        let vars = model.decoder.predict(tape, &model.params, groups, pyr)?;
        terms.bce = Some(l_bce(tape, vars.logits, &gt)?);
        let probs = tape.sigmoid(vars.logits);
        terms.dice = Some(l_dice(tape, probs, &gt)?);
    }
    Ok(combine_losses_on_tape(tape, &terms, w)?)
}

fn lr_scale(router: f64) -> impl Fn(&str) -> f64 {
    move |name: &str| if name.ends_with(".router") { router } else { 1.0 }
}

/// One optimizer step on `batch`; returns the batch-mean loss.
pub fn train_step(model: &mut AvModel, opt: &mut AdamW, batch: &[&TaskSample], lr: f64, cfg: &ExperimentConfig) -> Result<f64> {
    model.params.zero_grad();
    let mut total = 0.0;
    let inv = 1.0 / batch.len() as f64;
    for s in batch {
        let mut tape = Tape::new();
        let loss = sample_loss(model, &mut tape, s, &cfg.loss_weights)?;
        total += tape.value(loss).data()[0];
        let scaled = tape.scale(loss, inv);
        let grads = tape.backward(scaled)?;
        tape.accumulate_param_grads(&grads, &mut model.params);
    }
    opt.step_with(&mut model.params, lr, lr_scale(cfg.router_lr_scale));
    Ok(total * inv)
}

/// Trains in place and returns the per-step batch losses.
pub fn train_model(model: &mut AvModel, train: &[TaskSample], cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(HarnessError::Core(avcoop_core::Error::Empty("training pool")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ BATCH_SALT);
    let mut opt = AdamW::new(cfg.optimizer);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let lr = cosine_warmup_lr(step + 1, cfg.steps, cfg.base_lr, cfg.warmup_ratio)?;
        let batch: Vec<&TaskSample> = (0..cfg.batch_size).map(|_| &train[rng.random_range(0..train.len())]).collect();
        let loss = train_step(model, &mut opt, &batch, lr, cfg)?;
        if !loss.is_finite() {
            let families: Vec<&str> = batch.iter().map(|s| s.family.tag()).collect();
            return Err(HarnessError::Divergence { step, loss, detail: format!("lr {lr:e}, batch families {families:?}") });
        }
        curve.push(loss);
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    /// Batch-mean loss after every step; empty for a dry run.
    pub loss_curve: Vec<f64>,
    pub metrics: EvalResult,
    /// Mean router profile per family on the evaluation suite.
    pub profiles: BTreeMap<String, Vec<f64>>,
    pub router: Option<RouterAnalysis>,
    pub head_drop: Option<HeadDropTable>,
    /// Excluded from the serialized report so that reruns compare
    /// bit-identically; written to `timing.json` instead.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

pub struct RunOutput {
    pub report: RunReport,
    pub model: AvModel,
    pub traces: Vec<RouterTrace>,
    pub data: Datasets,
}

pub struct Assessment {
    pub metrics: EvalResult,
    pub traces: Vec<RouterTrace>,
    pub profiles: BTreeMap<String, Vec<f64>>,
    pub router: Option<RouterAnalysis>,
    pub head_drop: Option<HeadDropTable>,
}

/// Evaluates `model` with tracing, then analyzes routes and head drops.
pub fn assess(model: &mut AvModel, suite: &[TaskSample], cfg: &ExperimentConfig) -> Result<Assessment> {
    model.set_tracing(true);
    let mut traces = BTreeMap::new();
    let metrics = evaluate(model, suite, cfg.max_decode, &cfg.metrics, Some(&mut traces));
    model.set_tracing(false);
    let metrics = metrics?;
    let traces: Vec<RouterTrace> = traces.into_values().collect();
    let mut profiles = BTreeMap::new();
    for t in &traces {
        profiles.insert(t.task_tag.clone(), t.profile_with(cfg.trace_aggregation)?);
    }
    let router = if traces.len() >= 2 { Some(analyze_router(&traces, cfg.trace_aggregation)?) } else { None };
    let head_drop = if cfg.head_drop {
        Some(head_drop_experiment(model, suite, cfg.max_decode, &cfg.metrics)?)
    } else {
        None
    };
    Ok(Assessment { metrics, traces, profiles, router, head_drop })
}

/// Full run: data, training (skipped for a dry run), evaluation, router
/// analysis and head drops.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let data = build_datasets(cfg)?;
    let mut model = init_model(cfg)?;
    let loss_curve = if cfg.dry_run { Vec::new() } else { train_model(&mut model, &data.train, cfg)? };
    let Assessment { metrics, traces, profiles, router, head_drop } = assess(&mut model, &data.eval, cfg)?;
    let report = RunReport {
        config: cfg.clone(),
        loss_curve,
        metrics,
        profiles,
        router,
        head_drop,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutput { report, model, traces, data })
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

pub fn write_traces(path: &Path, traces: &[RouterTrace]) -> Result<()> {
    let mut buf = Vec::new();
    for t in traces {
        t.write_jsonl(&mut buf).map_err(|e| HarnessError::io(path, e))?;
    }
    write_file(path, buf)
}

/// Writes the report, metric CSV, traces, router scatter, head-drop table,
/// checkpoint, evaluation suite and timing into `dir`.
pub fn write_artifacts(dir: &Path, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let r = &out.report;
    write_file(&dir.join("report.json"), serde_json::to_string_pretty(r)?)?;
    write_file(&dir.join("metrics.csv"), r.metrics.to_csv())?;
    write_traces(&dir.join("trace.jsonl"), &out.traces)?;
    if let Some(router) = &r.router {
        write_file(&dir.join("router_scatter.csv"), router.scatter_csv())?;
        write_file(&dir.join("router.svg"), router.scatter_svg())?;
    }
    if let Some(hd) = &r.head_drop {
        write_file(&dir.join("head_drop.csv"), hd.to_csv())?;
    }
    write_file(&dir.join("checkpoint.json"), out.model.save_json()?)?;
    let mut suite = Vec::new();
    write_suite(&out.data.eval, &mut suite)?;
    write_file(&dir.join("eval_suite.jsonl"), suite)?;
    let timing = serde_json::json!({ "wall_clock_secs": r.wall_clock_secs });
    write_file(&dir.join("timing.json"), serde_json::to_string_pretty(&timing)?)
}

/// Next-token targets over `prefix + text` rows: row `prefix + i - 1`
/// predicts `text[i]` for every target position `i >= prompt_len`; other
/// rows hold [`IGNORE`].
pub fn text_targets(prompt_len: usize, text: &[usize], prefix: usize) -> Vec<usize> {
    let mut targets = vec![IGNORE; prefix + text.len()];
    for i in prompt_len.max(1)..text.len() {
        targets[prefix + i - 1] = text[i];
    }
    targets
}
