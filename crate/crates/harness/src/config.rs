use std::path::Path;

use avcoop_core::lora::Aggregation;
use avcoop_core::model::ModelConfig;
use avcoop_core::objectives::{LossWeights, MetricConfig};
use avcoop_core::tensor::AdamWConfig;
use serde::{Deserialize, Serialize};

use crate::data::{DataConfig, Family};
use crate::error::{HarnessError, Result};

/// Share of training samples per family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskMix {
    pub temporal: f64,
    pub spatial: f64,
    pub reasoning: f64,
    pub segmentation: f64,
}

impl Default for TaskMix {
    fn default() -> Self {
        Self { temporal: 0.25, spatial: 0.25, reasoning: 0.25, segmentation: 0.25 }
    }
}

impl TaskMix {
    /// In [`Family::ALL`] order.
    pub fn as_array(&self) -> [f64; 4] {
        [self.temporal, self.spatial, self.reasoning, self.segmentation]
    }

    pub fn get(&self, f: Family) -> f64 {
        self.as_array()[Family::ALL.iter().position(|&g| g == f).expect("known family")]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub loss_weights: LossWeights,
    pub metrics: MetricConfig,
    pub optimizer: AdamWConfig,
    pub task_mix: TaskMix,
    /// Size of the training pool batches are drawn from.
    pub train_samples: usize,
    pub eval_per_family: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_ratio: f64,
    /// Learning-rate multiplier for router matrices.
    pub router_lr_scale: f64,
    pub with_reasoning: bool,
    /// Longest greedy continuation during evaluation.
    pub max_decode: usize,
    pub head_drop: bool,
    pub trace_aggregation: Aggregation,
    /// Evaluate the untrained model and stop.
    pub dry_run: bool,
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            loss_weights: LossWeights::default(),
            metrics: MetricConfig::default(),
            optimizer: AdamWConfig::default(),
            task_mix: TaskMix::default(),
            train_samples: 2000,
            eval_per_family: 32,
            steps: 1200,
            batch_size: 8,
            base_lr: 1e-2,
            warmup_ratio: avcoop_core::tensor::schedule::DEFAULT_WARMUP_RATIO,
            router_lr_scale: 1.0,
            with_reasoning: true,
            max_decode: 14,
            head_drop: true,
            trace_aggregation: Aggregation::FlatMean,
            dry_run: false,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        self.model.validate()?;
        self.data.validate()?;
        self.loss_weights.validate()?;
        let mix = self.task_mix.as_array();
        if mix.iter().any(|p| !(*p >= 0.0)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("task_mix {mix:?} must be nonnegative and sum to 1"));
        }
        if self.steps == 0 || self.batch_size == 0 || self.train_samples == 0 || self.eval_per_family == 0 || self.max_decode == 0 {
            return bad("steps, batch_size, train_samples, eval_per_family and max_decode must be >= 1".into());
        }
        if !(self.base_lr > 0.0) || !(0.0..=1.0).contains(&self.warmup_ratio) || !(self.router_lr_scale >= 0.0) {
            return bad("base_lr must be positive, warmup_ratio in [0, 1], router_lr_scale >= 0".into());
        }
        let (m, d) = (&self.model, &self.data);
        let pairs = [
            ("frames", m.frames, d.frames),
            ("visual_dim", m.visual_dim, d.visual_dim),
            ("audio_dim", m.audio_dim, d.audio_dim),
            ("mask_feat_dim", m.mask_feat_dim, d.mask_feat_dim),
        ];
        for (name, a, b) in pairs {
            if a != b {
                return bad(format!("model.{name} = {a} but data.{name} = {b}"));
            }
        }
        if m.num_tokens < d.num_tokens() {
            return bad(format!("model.num_tokens {} < {} needed by the data", m.num_tokens, d.num_tokens()));
        }
        if m.categories != 1 {
            return bad("the synthetic segmentation family is binary; categories must be 1".into());
        }
        let longest = 2 + 4 + 1 + avcoop_core::model::MASK_TOKENS.max(4) + 1;
        if m.prefix_len() + longest.max(2 + self.max_decode) > m.max_len {
            return bad(format!("model.max_len {} too short for prompts plus decoding", m.max_len));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
