#![allow(dead_code)]

use avcoop_harness::analysis::gradcheck_setup;
use avcoop_harness::config::ExperimentConfig;

/// Seconds-scale experiment on the gradient-check geometry.
pub fn tiny_config() -> ExperimentConfig {
    let (model, data) = gradcheck_setup();
    ExperimentConfig {
        model,
        data,
        train_samples: 64,
        eval_per_family: 4,
        steps: 40,
        batch_size: 4,
        max_decode: 12,
        ..ExperimentConfig::default()
    }
}
