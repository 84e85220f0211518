//! Synthetic task families.
//!
//! Every visual pixel carries `[blob, y, x, frame, noise..]` and every audio
//! bin `[marker, bin, frame, noise..]`, with coordinates coded in `[-1, 1]`.
//! Indicator channels are 1 inside the planted pattern and 0 elsewhere;
//! all channels then receive Gaussian noise.

use std::io::{BufRead, Write};

use avcoop_core::mask_decoder::VisualPyramid;
use avcoop_core::model::{ModalityFeatures, TokenId, Vocabulary};
use avcoop_core::objectives::BBox;
use avcoop_core::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Indicator values above this count as planted.
pub const DETECT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Temporal,
    Spatial,
    Reasoning,
    Segmentation,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Temporal, Family::Spatial, Family::Reasoning, Family::Segmentation];

    pub fn tag(self) -> &'static str {
        match self {
            Family::Temporal => "temporal",
            Family::Spatial => "spatial",
            Family::Reasoning => "reasoning",
            Family::Segmentation => "segmentation",
        }
    }

    pub fn from_tag(s: &str) -> Option<Family> {
        Family::ALL.into_iter().find(|f| f.tag() == s)
    }

    pub fn instruction(self) -> TokenId {
        match self {
            Family::Temporal => Vocabulary::TASK_TEMPORAL,
            Family::Spatial => Vocabulary::TASK_SPATIAL,
            Family::Reasoning => Vocabulary::TASK_REASONING,
            Family::Segmentation => Vocabulary::TASK_SEGMENT,
        }
    }

    /// Metric used to rank head drops and compare runs.
    pub fn primary_metric(self) -> &'static str {
        match self {
            Family::Temporal | Family::Reasoning => "accuracy",
            Family::Spatial => "auc",
            Family::Segmentation => "miou",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Family::Temporal => 0x7e3a_11d1,
            Family::Spatial => 0x5a71_a1c0,
            Family::Reasoning => 0x0ea5_0b1e,
            Family::Segmentation => 0x5e96_e417,
        }
    }
}

/// Feature geometry shared by all generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Visual maps are `grid x grid` per frame.
    pub grid: usize,
    pub frames: usize,
    pub audio_bins: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    pub mask_feat_dim: usize,
    /// Standard deviation of the additive feature noise.
    pub noise: f64,
    /// Side lengths of random rectangles, inclusive.
    pub min_blob: usize,
    pub max_blob: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            grid: 8,
            frames: 4,
            audio_bins: 4,
            visual_dim: 8,
            audio_dim: 8,
            mask_feat_dim: 8,
            noise: 0.05,
            min_blob: 2,
            max_blob: 4,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.grid < 2 || self.grid % 2 != 0 {
            return bad("grid must be even and >= 2");
        }
        if self.frames == 0 || self.frames > 4 {
            return bad("frames must be in 1..=4 so reasoning quadrants stay distinct");
        }
        if self.audio_bins == 0 || self.visual_dim < 4 || self.audio_dim < 3 || self.mask_feat_dim < 3 {
            return bad("feature widths too small for the channel layout");
        }
        if self.min_blob == 0 || self.min_blob > self.max_blob || self.max_blob > self.grid {
            return bad("blob sizes must satisfy 1 <= min_blob <= max_blob <= grid");
        }
        if !(self.noise >= 0.0) || self.noise > 0.1 {
            return bad("noise must be in [0, 0.1] so planted patterns stay detectable");
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.grid * self.grid
    }

    /// Number tokens needed for coordinates, timesteps and quadrants.
    pub fn num_tokens(&self) -> usize {
        self.grid.max(self.frames).max(4)
    }
}

/// Planted ground truth of a sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub timestep: Option<usize>,
    pub bbox: Option<BBox>,
    /// Quadrant index: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
    pub quadrant: Option<usize>,
    pub answer: Option<usize>,
    /// Row-major `grid x grid` foreground mask.
    pub mask: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSample {
    pub id: usize,
    pub family: Family,
    pub features: ModalityFeatures,
    pub pyramid: Option<VisualPyramid>,
    /// `[BOS, instruction]`
    pub prompt: Vec<TokenId>,
    /// Optional reasoning tokens, `ANS`, answer tokens, `EOS`.
    pub target: Vec<TokenId>,
    pub gt: GroundTruth,
}

impl TaskSample {
    /// Prompt followed by target.
    pub fn full_text(&self) -> Vec<TokenId> {
        let mut v = self.prompt.clone();
        v.extend(&self.target);
        v
    }
}

fn code(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        2.0 * i as f64 / (n - 1) as f64 - 1.0
    }
}

/// Quadrant holding the box centre.
pub fn quadrant_of(b: &BBox, grid: usize) -> usize {
    let half = grid as i64;
    let top = b.y_t + b.y_b < half;
    let left = b.x_l + b.x_r < half;
    match (top, left) {
        (true, true) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 3,
    }
}

pub fn rasterize(b: &BBox, grid: usize) -> Vec<bool> {
    (0..grid * grid)
        .map(|p| {
            let (y, x) = ((p / grid) as i64, (p % grid) as i64);
            y >= b.y_t && y <= b.y_b && x >= b.x_l && x <= b.x_r
        })
        .collect()
}

/// Tight box over the foreground of a row-major mask.
pub fn mask_bbox(mask: &[bool], grid: usize) -> Option<BBox> {
    let mut b: Option<BBox> = None;
    for (p, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (y, x) = ((p / grid) as i64, (p % grid) as i64);
        b = Some(match b {
            None => BBox::new(x, y, x, y),
            Some(o) => BBox::new(o.x_l.min(x), o.y_t.min(y), o.x_r.max(x), o.y_b.max(y)),
        });
    }
    b
}

struct Builder<'a> {
    cfg: &'a DataConfig,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
}

impl<'a> Builder<'a> {
    fn new(cfg: &'a DataConfig, seed: u64) -> Self {
        let noise = Normal::new(0.0, cfg.noise).expect("validated noise");
        Self { cfg, rng: ChaCha8Rng::seed_from_u64(seed), noise }
    }

    fn jitter(&mut self) -> f64 {
        self.noise.sample(&mut self.rng)
    }

    /// `masks[t]` marks blob pixels of frame `t`.
    fn visual(&mut self, masks: &[Vec<bool>]) -> Tensor {
        let c = self.cfg;
        let (g, d) = (c.grid, c.visual_dim);
        let mut data = Vec::with_capacity(c.frames * g * g * d);
        for (t, m) in masks.iter().enumerate() {
            for p in 0..g * g {
                let base = [m[p] as u8 as f64, code(p / g, g), code(p % g, g), code(t, c.frames)];
                for k in 0..d {
                    let v = base.get(k).copied().unwrap_or(0.0);
                    data.push(v + self.jitter());
                }
            }
        }
        Tensor::new(&[c.frames, g * g, d], data).expect("positive dims")
    }

    fn audio(&mut self, marker: Option<usize>) -> Tensor {
        let c = self.cfg;
        let (b, d) = (c.audio_bins, c.audio_dim);
        let mut data = Vec::with_capacity(c.frames * b * d);
        for t in 0..c.frames {
            for bin in 0..b {
                let base = [(marker == Some(t)) as u8 as f64, code(bin, b), code(t, c.frames)];
                for k in 0..d {
                    let v = base.get(k).copied().unwrap_or(0.0);
                    data.push(v + self.jitter());
                }
            }
        }
        Tensor::new(&[c.frames, b, d], data).expect("positive dims")
    }

    fn pyramid(&mut self, mask: &[bool]) -> Result<VisualPyramid> {
        let c = self.cfg;
        let (g, d) = (c.grid, c.mask_feat_dim);
        let mut data = Vec::with_capacity(g * g * d);
        for p in 0..g * g {
            let base = [mask[p] as u8 as f64, code(p / g, g), code(p % g, g)];
            for k in 0..d {
                let v = base.get(k).copied().unwrap_or(0.0);
                data.push(v + self.jitter());
            }
        }
        Ok(VisualPyramid::from_fine(Tensor::new(&[g, g, d], data).map_err(HarnessError::from)?)?)
    }

    fn random_box(&mut self) -> BBox {
        let c = self.cfg;
        let h = self.rng.random_range(c.min_blob..=c.max_blob);
        let w = self.rng.random_range(c.min_blob..=c.max_blob);
        let y = self.rng.random_range(0..=c.grid - h) as i64;
        let x = self.rng.random_range(0..=c.grid - w) as i64;
        BBox::new(x, y, x + w as i64 - 1, y + h as i64 - 1)
    }

    /// A box of side 2..=3 (clamped to the quadrant) inside quadrant `q`.
    fn box_in_quadrant(&mut self, q: usize) -> BBox {
        let half = self.cfg.grid / 2;
        let side_max = 3.min(half);
        let side_min = 2.min(side_max);
        let h = self.rng.random_range(side_min..=side_max);
        let w = self.rng.random_range(side_min..=side_max);
        let oy = (q / 2) * half + self.rng.random_range(0..=half - h);
        let ox = (q % 2) * half + self.rng.random_range(0..=half - w);
        BBox::new(ox as i64, oy as i64, (ox + w - 1) as i64, (oy + h - 1) as i64)
    }
}

fn text(family: Family, reasoning: &[TokenId], answer: &[TokenId], with_reasoning: bool) -> (Vec<TokenId>, Vec<TokenId>) {
    let prompt = vec![Vocabulary::BOS, family.instruction()];
    let mut target = Vec::new();
    if with_reasoning {
        target.extend(reasoning);
    }
    target.push(Vocabulary::ANS);
    target.extend(answer);
    target.push(Vocabulary::EOS);
    (prompt, target)
}

fn num(vocab: &Vocabulary, k: usize) -> TokenId {
    vocab.num(k).expect("number token in range")
}

fn box_tokens(vocab: &Vocabulary, b: &BBox) -> Vec<TokenId> {
    [b.x_l, b.y_t, b.x_r, b.y_b].iter().map(|&v| num(vocab, v as usize)).collect()
}

fn seed_for(seed: u64, family: Family, index: usize) -> u64 {
    seed ^ family.salt() ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn vocab_for(cfg: &DataConfig) -> Vocabulary {
    Vocabulary::new(cfg.num_tokens())
}

/// Audio marker at `t`, no visual blob.
pub fn temporal_sample(id: usize, t: usize, cfg: &DataConfig, seed: u64, with_reasoning: bool) -> Result<TaskSample> {
    if t >= cfg.frames {
        return Err(HarnessError::Config(format!("marker frame {t} outside {} frames", cfg.frames)));
    }
    let vocab = vocab_for(cfg);
    let mut b = Builder::new(cfg, seed);
    let empty = vec![vec![false; cfg.pixels()]; cfg.frames];
    let features = ModalityFeatures::new(b.visual(&empty), b.audio(Some(t)))?;
    let (prompt, target) = text(Family::Temporal, &[Vocabulary::TIME, num(&vocab, t)], &[num(&vocab, t)], with_reasoning);
    Ok(TaskSample {
        id,
        family: Family::Temporal,
        features,
        pyramid: None,
        prompt,
        target,
        gt: GroundTruth { timestep: Some(t), answer: Some(t), ..GroundTruth::default() },
    })
}

/// The same rectangle in every frame; the answer is its box.
pub fn spatial_sample(id: usize, bbox: BBox, cfg: &DataConfig, seed: u64, with_reasoning: bool) -> Result<TaskSample> {
    let g = cfg.grid as i64;
    if !bbox.is_valid() || bbox.x_l < 0 || bbox.y_t < 0 || bbox.x_r >= g || bbox.y_b >= g {
        return Err(HarnessError::Config(format!("box {bbox:?} outside the {g}x{g} grid")));
    }
    let vocab = vocab_for(cfg);
    let mut b = Builder::new(cfg, seed);
    let mask = rasterize(&bbox, cfg.grid);
    let features = ModalityFeatures::new(b.visual(&vec![mask; cfg.frames]), b.audio(None))?;
    let q = quadrant_of(&bbox, cfg.grid);
    let (prompt, target) = text(Family::Spatial, &[Vocabulary::QUAD, num(&vocab, q)], &box_tokens(&vocab, &bbox), with_reasoning);
    Ok(TaskSample {
        id,
        family: Family::Spatial,
        features,
        pyramid: None,
        prompt,
        target,
        gt: GroundTruth { bbox: Some(bbox), quadrant: Some(q), ..GroundTruth::default() },
    })
}

/// Frame `t` shows a blob in quadrant `quadrants[t]` (all distinct); the
/// audio marker picks the frame; the answer is that frame's quadrant.
pub fn reasoning_sample(id: usize, marker: usize, quadrants: &[usize], cfg: &DataConfig, seed: u64, with_reasoning: bool) -> Result<TaskSample> {
    let distinct = quadrants.iter().collect::<std::collections::BTreeSet<_>>().len() == quadrants.len();
    if quadrants.len() != cfg.frames || !distinct || quadrants.iter().any(|&q| q > 3) || marker >= cfg.frames {
        return Err(HarnessError::Config("reasoning needs one distinct quadrant per frame and a valid marker".into()));
    }
    let vocab = vocab_for(cfg);
    let mut b = Builder::new(cfg, seed);
    let boxes: Vec<BBox> = quadrants.iter().map(|&q| b.box_in_quadrant(q)).collect();
    let masks: Vec<Vec<bool>> = boxes.iter().map(|bx| rasterize(bx, cfg.grid)).collect();
    let features = ModalityFeatures::new(b.visual(&masks), b.audio(Some(marker)))?;
    let q = quadrants[marker];
    let reasoning = [Vocabulary::TIME, num(&vocab, marker), Vocabulary::QUAD, num(&vocab, q)];
    let (prompt, target) = text(Family::Reasoning, &reasoning, &[num(&vocab, q)], with_reasoning);
    Ok(TaskSample {
        id,
        family: Family::Reasoning,
        features,
        pyramid: None,
        prompt,
        target,
        gt: GroundTruth {
            timestep: Some(marker),
            bbox: Some(boxes[marker]),
            quadrant: Some(q),
            answer: Some(q),
            mask: None,
        },
    })
}

/// A foreground mask shown in every frame and in the decoder pyramid. Empty
/// masks are rejected.
pub fn segmentation_sample(id: usize, mask: Vec<bool>, cfg: &DataConfig, seed: u64, with_reasoning: bool) -> Result<TaskSample> {
    if mask.len() != cfg.pixels() {
        return Err(HarnessError::Config(format!("mask has {} pixels, expected {}", mask.len(), cfg.pixels())));
    }
    let bbox = mask_bbox(&mask, cfg.grid).ok_or_else(|| HarnessError::Config("segmentation mask is empty".into()))?;
    let vocab = vocab_for(cfg);
    let mut b = Builder::new(cfg, seed);
    let features = ModalityFeatures::new(b.visual(&vec![mask.clone(); cfg.frames]), b.audio(None))?;
    let pyramid = b.pyramid(&mask)?;
    let q = quadrant_of(&bbox, cfg.grid);
    let (prompt, target) = text(Family::Segmentation, &[Vocabulary::QUAD, num(&vocab, q)], &vocab.mask_ids(), with_reasoning);
    Ok(TaskSample {
        id,
        family: Family::Segmentation,
        features,
        pyramid: Some(pyramid),
        prompt,
        target,
        gt: GroundTruth { bbox: Some(bbox), quadrant: Some(q), mask: Some(mask), ..GroundTruth::default() },
    })
}

fn check(cfg: &DataConfig, count: usize) -> Result<()> {
    cfg.validate()?;
    if count == 0 {
        return Err(HarnessError::Config("count must be >= 1".into()));
    }
    Ok(())
}

pub fn gen_temporal(seed: u64, count: usize, cfg: &DataConfig, with_reasoning: bool) -> Result<Vec<TaskSample>> {
    check(cfg, count)?;
    (0..count)
        .map(|i| {
            let s = seed_for(seed, Family::Temporal, i);
            let t = ChaCha8Rng::seed_from_u64(s ^ 1).random_range(0..cfg.frames);
            temporal_sample(i, t, cfg, s, with_reasoning)
        })
        .collect()
}

pub fn gen_spatial(seed: u64, count: usize, cfg: &DataConfig, with_reasoning: bool) -> Result<Vec<TaskSample>> {
    check(cfg, count)?;
    (0..count)
        .map(|i| {
            let s = seed_for(seed, Family::Spatial, i);
            let bbox = Builder::new(cfg, s ^ 1).random_box();
            spatial_sample(i, bbox, cfg, s, with_reasoning)
        })
        .collect()
}

pub fn gen_reasoning(seed: u64, count: usize, cfg: &DataConfig, with_reasoning: bool) -> Result<Vec<TaskSample>> {
    check(cfg, count)?;
    (0..count)
        .map(|i| {
            let s = seed_for(seed, Family::Reasoning, i);
            let mut rng = ChaCha8Rng::seed_from_u64(s ^ 1);
            let mut quads = vec![0, 1, 2, 3];
            quads.shuffle(&mut rng);
            quads.truncate(cfg.frames);
            let marker = rng.random_range(0..cfg.frames);
            reasoning_sample(i, marker, &quads, cfg, s, with_reasoning)
        })
        .collect()
}

pub fn gen_segmentation(seed: u64, count: usize, cfg: &DataConfig, with_reasoning: bool) -> Result<Vec<TaskSample>> {
    check(cfg, count)?;
    (0..count)
        .map(|i| {
            let s = seed_for(seed, Family::Segmentation, i);
            let bbox = Builder::new(cfg, s ^ 1).random_box();
            segmentation_sample(i, rasterize(&bbox, cfg.grid), cfg, s, with_reasoning)
        })
        .collect()
}

pub fn gen_family(family: Family, seed: u64, count: usize, cfg: &DataConfig, with_reasoning: bool) -> Result<Vec<TaskSample>> {
    match family {
        Family::Temporal => gen_temporal(seed, count, cfg, with_reasoning),
        Family::Spatial => gen_spatial(seed, count, cfg, with_reasoning),
        Family::Reasoning => gen_reasoning(seed, count, cfg, with_reasoning),
        Family::Segmentation => gen_segmentation(seed, count, cfg, with_reasoning),
    }
}

/// Splits `total` by `proportions` (family order of [`Family::ALL`]); the
/// rounding remainder goes to the families with the largest fractional part.
pub fn allocate(total: usize, proportions: &[f64; 4]) -> [usize; 4] {
    let raw: Vec<f64> = proportions.iter().map(|p| p * total as f64).collect();
    let mut counts = [0usize; 4];
    for (c, r) in counts.iter_mut().zip(&raw) {
        *c = r.floor() as usize;
    }
    let mut rest: Vec<usize> = (0..4).collect();
    rest.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let missing = total - counts.iter().sum::<usize>();
    for &i in rest.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

/// A mixed suite with globally unique ids, grouped by family.
pub fn gen_suite(seed: u64, counts: [usize; 4], cfg: &DataConfig, with_reasoning: bool) -> Result<Vec<TaskSample>> {
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (family, &n) in Family::ALL.iter().zip(&counts) {
        if n == 0 {
            continue;
        }
        for mut s in gen_family(*family, seed, n, cfg, with_reasoning)? {
            s.id = out.len();
            out.push(s);
        }
    }
    Ok(out)
}

/// Answer tokens implied by a sample's ground truth.
pub fn expected_answer(sample: &TaskSample, vocab: &Vocabulary) -> Vec<TokenId> {
    match sample.family {
        Family::Temporal | Family::Reasoning => sample.gt.answer.and_then(|a| vocab.num(a)).into_iter().collect(),
        Family::Spatial => sample.gt.bbox.map(|b| box_tokens(vocab, &b)).unwrap_or_default(),
        Family::Segmentation => vocab.mask_ids(),
    }
}

fn scan_marker(f: &ModalityFeatures) -> Vec<usize> {
    let s = f.audio.shape();
    (0..s[0])
        .filter(|&t| (0..s[1]).all(|b| f.audio.data()[(t * s[1] + b) * s[2]] > DETECT_THRESHOLD))
        .collect()
}

fn scan_blob(f: &ModalityFeatures, t: usize) -> Vec<bool> {
    let s = f.visual.shape();
    (0..s[1]).map(|p| f.visual.data()[(t * s[1] + p) * s[2]] > DETECT_THRESHOLD).collect()
}

/// Recomputes the answer from the planted features alone and checks it
/// against the stored ground truth and target.
pub fn validate_sample(sample: &TaskSample, cfg: &DataConfig) -> std::result::Result<(), String> {
    let vocab = vocab_for(cfg);
    let f = &sample.features;
    let markers = scan_marker(f);
    let answer = match sample.family {
        Family::Temporal => {
            let [t] = markers[..] else { return Err(format!("expected one marker, found {markers:?}")) };
            if sample.gt.timestep != Some(t) {
                return Err("timestep disagrees with features".into());
            }
            vec![num(&vocab, t)]
        }
        Family::Spatial => {
            let frames: Vec<Vec<bool>> = (0..cfg.frames).map(|t| scan_blob(f, t)).collect();
            if frames.windows(2).any(|w| w[0] != w[1]) {
                return Err("blob moves between frames".into());
            }
            let b = mask_bbox(&frames[0], cfg.grid).ok_or("no blob")?;
            if sample.gt.bbox != Some(b) {
                return Err(format!("bbox {b:?} disagrees with gt"));
            }
            box_tokens(&vocab, &b)
        }
        Family::Reasoning => {
            let [t] = markers[..] else { return Err(format!("expected one marker, found {markers:?}")) };
            let quads: Vec<usize> = (0..cfg.frames)
                .map(|u| mask_bbox(&scan_blob(f, u), cfg.grid).map(|b| quadrant_of(&b, cfg.grid)).ok_or("frame without blob"))
                .collect::<std::result::Result<_, _>>()?;
            if quads.iter().collect::<std::collections::BTreeSet<_>>().len() != quads.len() {
                return Err("quadrants repeat across frames".into());
            }
            if sample.gt.answer != Some(quads[t]) {
                return Err("answer disagrees with features".into());
            }
            vec![num(&vocab, quads[t])]
        }
        Family::Segmentation => {
            let pyr = sample.pyramid.as_ref().ok_or("missing pyramid")?;
            let d = pyr.fine.shape()[2];
            let mask: Vec<bool> = (0..cfg.pixels()).map(|p| pyr.fine.data()[p * d] > DETECT_THRESHOLD).collect();
            if sample.gt.mask.as_ref() != Some(&mask) {
                return Err("mask disagrees with pyramid".into());
            }
            if mask != scan_blob(f, 0) {
                return Err("mask disagrees with visual features".into());
            }
            vocab.mask_ids()
        }
    };
    if crate::eval::extract_final_answer(&sample.target) != answer {
        return Err("target answer does not match the features".into());
    }
    Ok(())
}

pub fn write_suite<W: Write>(samples: &[TaskSample], mut w: W) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| HarnessError::io("<suite>", e))?;
    }
    Ok(())
}

pub fn read_suite<R: BufRead>(r: R) -> Result<Vec<TaskSample>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| HarnessError::io("<suite>", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
