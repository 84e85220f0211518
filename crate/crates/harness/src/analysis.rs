//! Router clustering, head drops, the reasoning-prefix comparison and the
//! gradient suite.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use avcoop_core::lora::{Aggregation, RouterTrace};
use avcoop_core::model::{AvModel, ModelConfig};
use avcoop_core::objectives::{EvalResult, MetricConfig};
use avcoop_core::tensor::gradcheck::{GradCheckConfig, ParamCheck};
use avcoop_core::tensor::{finite_diff_check, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::{expected_answer, gen_segmentation, DataConfig, Family, TaskSample};
use crate::error::{HarnessError, Result};
use crate::eval::{evaluate, extract_final_answer};
use crate::train::{run, sample_loss, RunOutput};

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(HarnessError::Undefined("cosine of a zero profile".into()));
    }
    Ok(dot / (na * nb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub family: String,
    pub sample: usize,
    pub profile: Vec<f64>,
}

/// Per-family mean profiles plus pooled pairwise cosine statistics over
/// per-sample profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterAnalysis {
    pub aggregation: Aggregation,
    pub mean_profiles: BTreeMap<String, Vec<f64>>,
    /// Mean cosine over all unordered same-family sample pairs.
    pub intra: f64,
    /// Mean cosine over all cross-family sample pairs.
    pub inter: f64,
    pub gap: f64,
    pub intra_pairs: usize,
    pub inter_pairs: usize,
    pub points: Vec<ProfilePoint>,
}

pub fn analyze_router(traces: &[RouterTrace], how: Aggregation) -> Result<RouterAnalysis> {
    let mut points = Vec::new();
    let mut mean_profiles = BTreeMap::new();
    for t in traces {
        if mean_profiles.contains_key(&t.task_tag) {
            return Err(HarnessError::Undefined(format!("family {} traced twice", t.task_tag)));
        }
        let per_sample = t.sample_profiles(how);
        if per_sample.is_empty() {
            continue;
        }
        mean_profiles.insert(t.task_tag.clone(), t.profile_with(how)?);
        points.extend(per_sample.into_iter().map(|(sample, profile)| ProfilePoint { family: t.task_tag.clone(), sample, profile }));
    }
    if mean_profiles.len() < 2 {
        return Err(HarnessError::Undefined(format!("need at least 2 traced families, got {}", mean_profiles.len())));
    }
    let (mut intra, mut inter, mut n_intra, mut n_inter) = (0.0, 0.0, 0usize, 0usize);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let c = cosine(&points[i].profile, &points[j].profile)?;
            if points[i].family == points[j].family {
                intra += c;
                n_intra += 1;
            } else {
                inter += c;
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 {
        return Err(HarnessError::Undefined("no family has two traced samples".into()));
    }
    let (intra, inter) = (intra / n_intra as f64, inter / n_inter as f64);
    Ok(RouterAnalysis { aggregation: how, mean_profiles, intra, inter, gap: intra - inter, intra_pairs: n_intra, inter_pairs: n_inter, points })
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

impl RouterAnalysis {
    fn head_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.points.first().map_or(0, |p| p.profile.len());
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    }

    /// One row per sample and head pair.
    pub fn scatter_csv(&self) -> String {
        let mut s = String::from("family,sample,head_x,head_y,x,y\n");
        for (hx, hy) in self.head_pairs() {
            for p in &self.points {
                let _ = writeln!(s, "{},{},{hx},{hy},{},{}", p.family, p.sample, p.profile[hx], p.profile[hy]);
            }
        }
        s
    }

    /// One square panel per head pair, axes spanning [0, 1].
    pub fn scatter_svg(&self) -> String {
        let pairs = self.head_pairs();
        let (panel, pad) = (220.0, 30.0);
        let width = pad + pairs.len().max(1) as f64 * (panel + pad);
        let families: Vec<&String> = self.mean_profiles.keys().collect();
        let height = panel + 2.0 * pad + 18.0 * families.len() as f64;
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#);
        for (k, &(hx, hy)) in pairs.iter().enumerate() {
            let x0 = pad + k as f64 * (panel + pad);
            let _ = writeln!(s, r#"<rect x="{x0}" y="{pad}" width="{panel}" height="{panel}" fill="none" stroke="black"/>"#);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">head {hx}</text>"#, x0 + panel / 2.0, pad + panel + 14.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">head {hy}</text>"#, x0, pad - 6.0);
            for p in &self.points {
                let c = PALETTE[families.iter().position(|f| **f == p.family).unwrap_or(0) % PALETTE.len()];
                let cx = x0 + p.profile[hx].clamp(0.0, 1.0) * panel;
                let cy = pad + (1.0 - p.profile[hy].clamp(0.0, 1.0)) * panel;
                let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="2.5" fill="{c}" fill-opacity="0.7"/>"#);
            }
        }
        for (i, f) in families.iter().enumerate() {
            let y = pad + panel + 34.0 + 18.0 * i as f64;
            let _ = writeln!(s, r#"<circle cx="{}" cy="{}" r="5" fill="{}"/>"#, pad + 5.0, y - 4.0, PALETTE[i % PALETTE.len()]);
            let _ = writeln!(s, r#"<text x="{}" y="{y}">{f}</text>"#, pad + 16.0);
        }
        s.push_str("</svg>\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadDropRow {
    /// `None` for the intact model.
    pub dropped: Option<usize>,
    /// Primary metric per family.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadDropTable {
    pub rows: Vec<HeadDropRow>,
}

fn primary_metrics(r: &EvalResult) -> BTreeMap<String, f64> {
    Family::ALL
        .iter()
        .filter_map(|f| r.get(f.tag(), f.primary_metric()).map(|v| (f.tag().to_string(), v)))
        .collect()
}

impl HeadDropTable {
    pub fn row(&self, dropped: Option<usize>) -> Option<&HeadDropRow> {
        self.rows.iter().find(|r| r.dropped == dropped)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("dropped,family,metric,value\n");
        for r in &self.rows {
            let d = r.dropped.map_or("none".to_string(), |h| h.to_string());
            for (f, v) in &r.metrics {
                let m = Family::from_tag(f).map_or("", Family::primary_metric);
                let _ = writeln!(s, "{d},{f},{m},{v}");
            }
        }
        s
    }
}

/// Scores the suite with no head dropped and then with each single head
/// zeroed in every adapted layer. Drops are cleared before returning.
pub fn head_drop_experiment(model: &mut AvModel, suite: &[TaskSample], max_decode: usize, cfg: &MetricConfig) -> Result<HeadDropTable> {
    let traced = model.tracing();
    model.set_tracing(false);
    model.reset_drops();
    let mut rows = Vec::new();
    let mut outcome = evaluate(model, suite, max_decode, cfg, None).map(|r| rows.push(HeadDropRow { dropped: None, metrics: primary_metrics(&r) }));
    for h in 0..model.config.n_heads {
        if outcome.is_err() {
            break;
        }
        outcome = model.drop_heads(&[h]).map_err(HarnessError::from).and_then(|_| evaluate(model, suite, max_decode, cfg, None)).map(|r| {
            rows.push(HeadDropRow { dropped: Some(h), metrics: primary_metrics(&r) });
        });
        model.reset_drops();
    }
    model.set_tracing(traced);
    outcome.map(|_| HeadDropTable { rows })
}

/// Head-drop outcome for one family, ranked by its mean router profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropVerdict {
    pub family: String,
    pub max_head: usize,
    pub min_head: usize,
    pub intact: f64,
    pub drop_max: f64,
    pub drop_min: f64,
    /// Dropping the max-weight head hurts at least as much as dropping the
    /// min-weight head.
    pub max_hurts_more: bool,
    /// The intact model is no worse than the worst single drop.
    pub intact_not_worst: bool,
}

impl DropVerdict {
    pub fn passed(&self) -> bool {
        self.max_hurts_more && self.intact_not_worst
    }
}

fn arg_by(p: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    (1..p.len()).fold(0, |best, i| if better(p[i], p[best]) { i } else { best })
}

pub fn head_drop_verdicts(table: &HeadDropTable, profiles: &BTreeMap<String, Vec<f64>>) -> Result<Vec<DropVerdict>> {
    let intact = table.row(None).ok_or_else(|| HarnessError::Undefined("head-drop table lacks the intact row".into()))?;
    let mut out = Vec::new();
    for (family, &base) in &intact.metrics {
        let p = profiles.get(family).ok_or_else(|| HarnessError::Undefined(format!("no router profile for {family}")))?;
        let (max_head, min_head) = (arg_by(p, |a, b| a > b), arg_by(p, |a, b| a < b));
        let metric = |h: usize| -> Result<f64> {
            table
                .row(Some(h))
                .and_then(|r| r.metrics.get(family).copied())
                .ok_or_else(|| HarnessError::Undefined(format!("no drop row for head {h}")))
        };
        let (drop_max, drop_min) = (metric(max_head)?, metric(min_head)?);
        let worst = (0..p.len()).map(metric).collect::<Result<Vec<_>>>()?.into_iter().fold(f64::INFINITY, f64::min);
        out.push(DropVerdict {
            family: family.clone(),
            max_head,
            min_head,
            intact: base,
            drop_max,
            drop_min,
            max_hurts_more: drop_max <= drop_min,
            intact_not_worst: base >= worst,
        });
    }
    Ok(out)
}

/// Primary metric of each family with and without the reasoning prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErpRow {
    pub family: String,
    pub metric: String,
    pub with_reasoning: f64,
    pub without_reasoning: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErpComparison {
    pub seed: u64,
    pub rows: Vec<ErpRow>,
    /// Share of generated targets whose extracted answer equals the
    /// ground-truth answer, per mode.
    pub extraction_with: f64,
    pub extraction_without: f64,
}

impl ErpComparison {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("family,metric,with_reasoning,without_reasoning\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.family, r.metric, r.with_reasoning, r.without_reasoning);
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| family | metric | with reasoning | without |\n|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(s, "| {} | {} | {:.3} | {:.3} |", r.family, r.metric, r.with_reasoning, r.without_reasoning);
        }
        s
    }
}

/// Share of samples whose target yields the ground-truth answer.
pub fn extraction_rate(samples: &[TaskSample], vocab: &avcoop_core::model::Vocabulary) -> f64 {
    if samples.is_empty() {
        return 1.0;
    }
    let ok = samples.iter().filter(|s| extract_final_answer(&s.target) == expected_answer(s, vocab)).count();
    ok as f64 / samples.len() as f64
}

fn run_extraction(out: &RunOutput) -> f64 {
    let vocab = &out.model.vocab;
    let n = out.data.train.len() + out.data.eval.len();
    (extraction_rate(&out.data.train, vocab) * out.data.train.len() as f64 + extraction_rate(&out.data.eval, vocab) * out.data.eval.len() as f64) / n as f64
}

/// Comparison table from two finished runs, `with` trained on reasoning
/// prefixes and `without` on bare answers.
pub fn erp_from_runs(with: &RunOutput, without: &RunOutput) -> Result<ErpComparison> {
    let (a, b) = (&with.report.config, &without.report.config);
    if !a.with_reasoning || b.with_reasoning || a.seed != b.seed {
        return Err(HarnessError::Config("ERP comparison needs the same seed with reasoning on and off".into()));
    }
    let rows = Family::ALL
        .iter()
        .filter_map(|f| {
            let m = f.primary_metric();
            Some(ErpRow {
                family: f.tag().into(),
                metric: m.into(),
                with_reasoning: with.report.metrics.get(f.tag(), m)?,
                without_reasoning: without.report.metrics.get(f.tag(), m)?,
            })
        })
        .collect();
    Ok(ErpComparison { seed: a.seed, rows, extraction_with: run_extraction(with), extraction_without: run_extraction(without) })
}

/// Two runs differing only in `with_reasoning`.
pub fn erp_comparison(base: &ExperimentConfig) -> Result<ErpComparison> {
    let with = run(&ExperimentConfig { with_reasoning: true, ..base.clone() })?;
    let without = run(&ExperimentConfig { with_reasoning: false, ..base.clone() })?;
    erp_from_runs(&with, &without)
}

/// Parameter class used to group gradient checks.
pub fn param_class(name: &str) -> String {
    if name.starts_with("lm.head.") || name.starts_with("decoder.head") {
        return "output_head".into();
    }
    if name.starts_with("decoder.") {
        return "mask_decoder".into();
    }
    if name.starts_with("visual.") || name.starts_with("audio.") {
        return "compressor".into();
    }
    match name.rsplit('.').next() {
        Some("lora_a") => "lora_a".into(),
        Some("router") => "router".into(),
        Some(last) if last.starts_with("lora_b") => last.into(),
        _ => "other".into(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassSummary {
    pub entries_checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradSuiteReport {
    pub seeds: Vec<u64>,
    pub tol: f64,
    pub classes: BTreeMap<String, ClassSummary>,
    pub passed: bool,
    pub secs: f64,
}

/// A small model and data geometry for gradient checks.
pub fn gradcheck_setup() -> (ModelConfig, DataConfig) {
    let data = DataConfig { grid: 4, frames: 2, audio_bins: 2, visual_dim: 4, audio_dim: 4, mask_feat_dim: 4, min_blob: 1, max_blob: 3, ..DataConfig::default() };
    let model = ModelConfig {
        hidden: 8,
        blocks: 1,
        mlp_hidden: 12,
        rank: 2,
        n_heads: 3,
        num_tokens: data.num_tokens(),
        frames: data.frames,
        visual_dim: data.visual_dim,
        audio_dim: data.audio_dim,
        k_visual: 2,
        k_audio: 2,
        key_dim: 6,
        max_len: 32,
        mask_feat_dim: data.mask_feat_dim,
        categories: 1,
    };
    (model, data)
}

/// Finite-difference check of the full training objective (text loss plus
/// mask losses on a segmentation sample) for every trainable parameter,
/// one model per seed. Adapter heads and decoder mixing weights get random
/// values first so that no gradient is trivially zero.
pub fn gradient_suite(seeds: &[u64], cfg: &GradCheckConfig) -> Result<GradSuiteReport> {
    let start = Instant::now();
    let (mc, dc) = gradcheck_setup();
    let weights = avcoop_core::objectives::LossWeights::default();
    let mut classes: BTreeMap<String, ClassSummary> = BTreeMap::new();
    for &seed in seeds {
        let mut model = AvModel::new(mc, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9c);
        let ids = model.trainable_ids();
        for &id in &ids {
            let p = model.params.get(id);
            let class = param_class(&p.name);
            if class.starts_with("lora_b") || class == "mask_decoder" || p.name.ends_with("bias") {
                let shape = p.tensor.shape().to_vec();
                let values = Tensor::randn(&shape, 0.3, &mut rng).into_data();
                model.params.set_values(id, &values)?;
            }
        }
        let sample = gen_segmentation(seed, 1, &dc, true)?.remove(0);
        let mut store = model.params.clone();
        let mut shell = model;
        let report = finite_diff_check(
            &mut store,
            &ids,
            |s, tape| {
                shell.params.clone_from(s);
                sample_loss(&shell, tape, &sample, &weights).map_err(|e| match e {
                    HarnessError::Core(c) => c,
                    other => avcoop_core::Error::Contract(other.to_string()),
                })
            },
            &GradCheckConfig { seed, ..*cfg },
        )?;
        for ParamCheck { name, entries_checked, max_rel_error, .. } in report.params {
            let e = classes.entry(param_class(&name)).or_insert(ClassSummary { entries_checked: 0, max_rel_error: 0.0, worst_param: name.clone(), worst_seed: seed });
            e.entries_checked += entries_checked;
            if max_rel_error >= e.max_rel_error {
                e.max_rel_error = max_rel_error;
                e.worst_param = name;
                e.worst_seed = seed;
            }
        }
    }
    let passed = !classes.is_empty() && classes.values().all(|c| c.max_rel_error <= cfg.tol);
    Ok(GradSuiteReport { seeds: seeds.to_vec(), tol: cfg.tol, classes, passed, secs: start.elapsed().as_secs_f64() })
}
