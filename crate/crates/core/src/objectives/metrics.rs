use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thresholds used by the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Temporal IoU needed to match an event span.
    pub event_tiou: f64,
    /// Box IoU counted as a hit for cIoU.
    pub ciou_threshold: f64,
    /// IoU thresholds averaged for AUC.
    pub auc_thresholds: Vec<f64>,
    /// `beta^2` of the mask F-score.
    pub beta2: f64,
    pub mask_threshold: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            event_tiou: 0.5,
            ciou_threshold: 0.5,
            auc_thresholds: (1..=19).map(|k| k as f64 / 20.0).collect(),
            beta2: 0.3,
            mask_threshold: 0.5,
        }
    }
}

pub fn accuracy<T: PartialEq>(preds: &[T], gts: &[T]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::Shape { op: "accuracy", lhs: vec![preds.len()], rhs: vec![gts.len()] });
    }
    if gts.is_empty() {
        return Err(Error::Empty("accuracy"));
    }
    let hits = preds.iter().zip(gts).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gts.len() as f64)
}

/// Events active in each segment of a timeline.
pub type Timeline = [BTreeSet<usize>];

fn f1(tp: usize, n_pred: usize, n_gt: usize) -> f64 {
    if n_pred + n_gt == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (n_pred + n_gt) as f64
    }
}

/// Maximal runs `[start, end)` of each event class.
pub fn event_spans(timeline: &Timeline) -> Vec<(usize, usize, usize)> {
    let classes: BTreeSet<usize> = timeline.iter().flatten().copied().collect();
    let mut spans = Vec::new();
    for c in classes {
        let mut start = None;
        for (i, seg) in timeline.iter().enumerate() {
            match (seg.contains(&c), start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    spans.push((c, s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push((c, s, timeline.len()));
        }
    }
    spans
}

fn tiou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = a.1.max(b.1) - a.0.min(b.0);
    inter as f64 / union as f64
}

/// Size of a maximum bipartite matching given an adjacency list.
fn max_matching(adj: &[Vec<usize>], right: usize) -> usize {
    fn augment(u: usize, adj: &[Vec<usize>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                if owner[v].is_none_or(|w| augment(w, adj, seen, owner)) {
                    owner[v] = Some(u);
                    return true;
                }
            }
        }
        false
    }
    let mut owner = vec![None; right];
    (0..adj.len())
        .filter(|&u| augment(u, adj, &mut vec![false; right], &mut owner))
        .count()
}

/// Raw counts behind [`segment_event_f1`], summable across videos.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct F1Counts {
    pub seg_tp: usize,
    pub seg_pred: usize,
    pub seg_gt: usize,
    pub event_tp: usize,
    pub event_pred: usize,
    pub event_gt: usize,
}

impl F1Counts {
    pub fn scores(&self) -> (f64, f64) {
        (
            f1(self.seg_tp, self.seg_pred, self.seg_gt),
            f1(self.event_tp, self.event_pred, self.event_gt),
        )
    }

    pub fn add(&mut self, o: &F1Counts) {
        self.seg_tp += o.seg_tp;
        self.seg_pred += o.seg_pred;
        self.seg_gt += o.seg_gt;
        self.event_tp += o.event_tp;
        self.event_pred += o.event_pred;
        self.event_gt += o.event_gt;
    }
}

pub fn segment_event_counts(pred: &Timeline, gt: &Timeline, cfg: &MetricConfig) -> Result<F1Counts> {
    if pred.len() != gt.len() {
        return Err(Error::Shape { op: "segment_event_f1", lhs: vec![pred.len()], rhs: vec![gt.len()] });
    }
    if gt.is_empty() {
        return Err(Error::Empty("timeline"));
    }
    let mut c = F1Counts::default();
    for (p, g) in pred.iter().zip(gt) {
        c.seg_tp += p.intersection(g).count();
        c.seg_pred += p.len();
        c.seg_gt += g.len();
    }
    let (ps, gs) = (event_spans(pred), event_spans(gt));
    let adj: Vec<Vec<usize>> = ps
        .iter()
        .map(|&(pc, s, e)| {
            gs.iter()
                .enumerate()
                .filter(|(_, &(gc, gs0, ge))| gc == pc && tiou((s, e), (gs0, ge)) >= cfg.event_tiou)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    c.event_tp = max_matching(&adj, gs.len());
    c.event_pred = ps.len();
    c.event_gt = gs.len();
    Ok(c)
}

/// Segment-level micro-F1 over (segment, event) pairs and event-level F1
/// over contiguous spans matched one-to-one at `event_tiou`. Both are 1 when
/// neither side has any event.
pub fn segment_event_f1(pred: &Timeline, gt: &Timeline, cfg: &MetricConfig) -> Result<(f64, f64)> {
    Ok(segment_event_counts(pred, gt, cfg)?.scores())
}

/// Pixel-inclusive integer box `[x_L, y_T, x_R, y_B]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_l: i64,
    pub y_t: i64,
    pub x_r: i64,
    pub y_b: i64,
}

impl BBox {
    pub fn new(x_l: i64, y_t: i64, x_r: i64, y_b: i64) -> Self {
        Self { x_l, y_t, x_r, y_b }
    }

    pub fn is_valid(&self) -> bool {
        self.x_l <= self.x_r && self.y_t <= self.y_b
    }

    /// Pixel count; zero for an inverted box.
    pub fn area(&self) -> i64 {
        if self.is_valid() {
            (self.x_r - self.x_l + 1) * (self.y_b - self.y_t + 1)
        } else {
            0
        }
    }

    pub fn intersection(&self, o: &BBox) -> i64 {
        if !self.is_valid() || !o.is_valid() {
            return 0;
        }
        let w = self.x_r.min(o.x_r) - self.x_l.max(o.x_l) + 1;
        let h = self.y_b.min(o.y_b) - self.y_t.max(o.y_t) + 1;
        w.max(0) * h.max(0)
    }

    pub fn iou(&self, o: &BBox) -> f64 {
        let inter = self.intersection(o);
        let union = self.area() + o.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// `(cIoU, AUC)`: the fraction of samples with IoU at or above
/// `ciou_threshold`, and that success rate averaged over `auc_thresholds`.
/// A missing or inverted prediction scores IoU 0.
pub fn box_ciou_auc(preds: &[Option<BBox>], gts: &[BBox], cfg: &MetricConfig) -> Result<(f64, f64)> {
    if preds.len() != gts.len() {
        return Err(Error::Shape { op: "box_ciou_auc", lhs: vec![preds.len()], rhs: vec![gts.len()] });
    }
    if gts.is_empty() {
        return Err(Error::Empty("boxes"));
    }
    if gts.iter().any(|g| !g.is_valid()) {
        return Err(Error::Contract("degenerate ground-truth box".into()));
    }
    if cfg.auc_thresholds.is_empty() {
        return Err(Error::Empty("auc thresholds"));
    }
    let ious: Vec<f64> = preds.iter().zip(gts).map(|(p, g)| p.map_or(0.0, |p| p.iou(g))).collect();
    let rate = |t: f64| ious.iter().filter(|&&i| i >= t).count() as f64 / ious.len() as f64;
    let auc = cfg.auc_thresholds.iter().map(|&t| rate(t)).sum::<f64>() / cfg.auc_thresholds.len() as f64;
    Ok((rate(cfg.ciou_threshold), auc))
}

/// Per-sample IoU and F_beta of a binarized mask; both are 1 when prediction
/// and ground truth are both empty.
pub fn mask_scores(probs: &[f64], gt: &[bool], cfg: &MetricConfig) -> Result<(f64, f64)> {
    if probs.len() != gt.len() {
        return Err(Error::Shape { op: "miou_fscore", lhs: vec![probs.len()], rhs: vec![gt.len()] });
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &g) in probs.iter().zip(gt) {
        match (p >= cfg.mask_threshold, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp + fp + fneg == 0 {
        return Ok((1.0, 1.0));
    }
    let iou = tp as f64 / (tp + fp + fneg) as f64;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        (1.0 + cfg.beta2) * precision * recall / (cfg.beta2 * precision + recall)
    };
    Ok((iou, f))
}

/// Sample-averaged `(mIoU, F)`.
pub fn miou_fscore(probs: &[Vec<f64>], gts: &[Vec<bool>], cfg: &MetricConfig) -> Result<(f64, f64)> {
    if probs.len() != gts.len() {
        return Err(Error::Shape { op: "miou_fscore", lhs: vec![probs.len()], rhs: vec![gts.len()] });
    }
    if gts.is_empty() {
        return Err(Error::Empty("masks"));
    }
    let (mut si, mut sf) = (0.0, 0.0);
    for (p, g) in probs.iter().zip(gts) {
        let (i, f) = mask_scores(p, g, cfg)?;
        si += i;
        sf += f;
    }
    let n = gts.len() as f64;
    Ok((si / n, sf / n))
}

/// Metrics of one task family.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyMetrics {
    pub samples: usize,
    pub metrics: BTreeMap<String, f64>,
}

/// Metric name to value, per family.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalResult {
    pub families: BTreeMap<String, FamilyMetrics>,
}

impl EvalResult {
    pub fn insert(&mut self, family: &str, samples: usize, metric: &str, value: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Contract(format!("{family}/{metric} = {value} outside [0, 1]")));
        }
        let f = self.families.entry(family.to_string()).or_default();
        f.samples = samples;
        f.metrics.insert(metric.to_string(), value);
        Ok(())
    }

    pub fn get(&self, family: &str, metric: &str) -> Option<f64> {
        self.families.get(family)?.metrics.get(metric).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// `family,metric,value,samples` rows in sorted order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("family,metric,value,samples\n");
        for (fam, m) in &self.families {
            for (name, v) in &m.metrics {
                s.push_str(&format!("{fam},{name},{v},{}\n", m.samples));
            }
        }
        s
    }
}
