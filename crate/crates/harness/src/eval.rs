//! Decoding, answer extraction and per-family scoring.

use std::collections::BTreeMap;

use avcoop_core::lora::RouterTrace;
use avcoop_core::model::{extract_mask_embeddings, AvModel, TokenId, Vocabulary};
use avcoop_core::objectives::{accuracy, box_ciou_auc, miou_fscore, BBox, EvalResult, MetricConfig};
use avcoop_core::tensor::Tape;

use crate::data::{expected_answer, Family, TaskSample};
use crate::error::{HarnessError, Result};

/// Tokens after the last `ANS` up to the first following `EOS` (or the end).
/// Without an `ANS` the answer is empty.
pub fn extract_final_answer(tokens: &[TokenId]) -> Vec<TokenId> {
    match tokens.iter().rposition(|&t| t == Vocabulary::ANS) {
        None => Vec::new(),
        Some(i) => tokens[i + 1..].iter().copied().take_while(|&t| t != Vocabulary::EOS).collect(),
    }
}

/// Four number tokens read as `[x_L, y_T, x_R, y_B]`.
pub fn parse_box(answer: &[TokenId], vocab: &Vocabulary) -> Option<BBox> {
    let v: Vec<i64> = answer.iter().map(|&t| vocab.as_num(t).map(|n| n as i64)).collect::<Option<_>>()?;
    match v[..] {
        [x_l, y_t, x_r, y_b] => Some(BBox::new(x_l, y_t, x_r, y_b)),
        _ => None,
    }
}

/// What a system produced for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub tokens: Vec<TokenId>,
    /// Foreground probabilities for segmentation samples.
    pub mask_probs: Option<Vec<f64>>,
}

pub trait Predictor {
    fn predict(&mut self, sample: &TaskSample) -> Result<Prediction>;
}

/// Greedy decoding with the model, optionally recording route scores of the
/// final sequence per family.
pub struct ModelPredictor<'a> {
    pub model: &'a AvModel,
    pub max_decode: usize,
    pub traces: Option<&'a mut BTreeMap<Family, RouterTrace>>,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&mut self, sample: &TaskSample) -> Result<Prediction> {
        let m = self.model;
        let generated = m.greedy_decode(&sample.features, &sample.prompt, self.max_decode)?;
        let mut full = sample.prompt.clone();
        full.extend(&generated);
        let mut tape = Tape::new();
        let out = m.forward(&mut tape, &sample.features, &full)?;
        if let Some(traces) = self.traces.as_deref_mut() {
            let trace = traces
                .entry(sample.family)
                .or_insert_with(|| RouterTrace::new(sample.family.tag(), m.config.n_heads));
            m.record_trace(&tape, &out, sample.id, trace)?;
        }
        let mask_probs = match (&sample.pyramid, sample.family) {
            (Some(pyr), Family::Segmentation) => {
                let n = pyr.fine.shape()[0] * pyr.fine.shape()[1];
                match extract_mask_embeddings(&mut tape, out.hidden, &full, &m.vocab) {
                    Ok(groups) => {
                        let vars = m.decoder.predict(&mut tape, &m.params, groups, pyr)?;
                        Some(m.decoder.to_output(&tape, &vars, pyr)?.channel_probs(0))
                    }
                    Err(avcoop_core::Error::MaskTokens { .. }) => Some(vec![0.0; n]),
                    Err(e) => return Err(e.into()),
                }
            }
            _ => None,
        };
        Ok(Prediction { tokens: generated, mask_probs })
    }
}

/// Emits the ground-truth target and mask.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&mut self, sample: &TaskSample) -> Result<Prediction> {
        let mask_probs = sample.gt.mask.as_ref().map(|m| m.iter().map(|&b| b as u8 as f64).collect());
        Ok(Prediction { tokens: sample.target.clone(), mask_probs })
    }
}

/// Scores predictions family by family:
/// temporal and reasoning by answer accuracy, spatial by box cIoU/AUC,
/// segmentation by mIoU/F-score plus the rate of complete mask-token sets.
pub fn score(suite: &[TaskSample], preds: &[Prediction], vocab: &Vocabulary, cfg: &MetricConfig) -> Result<EvalResult> {
    if suite.is_empty() {
        return Err(HarnessError::Core(avcoop_core::Error::Empty("evaluation suite")));
    }
    if suite.len() != preds.len() {
        return Err(HarnessError::Config("one prediction per sample required".into()));
    }
    let mut result = EvalResult::default();
    for family in Family::ALL {
        let idx: Vec<usize> = (0..suite.len()).filter(|&i| suite[i].family == family).collect();
        if idx.is_empty() {
            continue;
        }
        let n = idx.len();
        let answers: Vec<Vec<TokenId>> = idx.iter().map(|&i| extract_final_answer(&preds[i].tokens)).collect();
        let expected: Vec<Vec<TokenId>> = idx.iter().map(|&i| expected_answer(&suite[i], vocab)).collect();
        let tag = family.tag();
        match family {
            Family::Temporal | Family::Reasoning => {
                result.insert(tag, n, "accuracy", accuracy(&answers, &expected)?)?;
            }
            Family::Spatial => {
                let boxes: Vec<Option<BBox>> = answers.iter().map(|a| parse_box(a, vocab)).collect();
                let gts: Vec<BBox> = idx
                    .iter()
                    .map(|&i| suite[i].gt.bbox.ok_or_else(|| HarnessError::Config("spatial sample without bbox".into())))
                    .collect::<Result<_>>()?;
                let (ciou, auc) = box_ciou_auc(&boxes, &gts, cfg)?;
                result.insert(tag, n, "ciou", ciou)?;
                result.insert(tag, n, "auc", auc)?;
                result.insert(tag, n, "accuracy", accuracy(&answers, &expected)?)?;
            }
            Family::Segmentation => {
                let mut probs = Vec::with_capacity(n);
                let mut gts = Vec::with_capacity(n);
                for &i in &idx {
                    let gt = suite[i].gt.mask.clone().ok_or_else(|| HarnessError::Config("segmentation sample without mask".into()))?;
                    probs.push(preds[i].mask_probs.clone().unwrap_or_else(|| vec![0.0; gt.len()]));
                    gts.push(gt);
                }
                let (miou, f) = miou_fscore(&probs, &gts, cfg)?;
                result.insert(tag, n, "miou", miou)?;
                result.insert(tag, n, "fscore", f)?;
                result.insert(tag, n, "accuracy", accuracy(&answers, &expected)?)?;
            }
        }
    }
    Ok(result)
}

pub fn evaluate_with<P: Predictor>(predictor: &mut P, suite: &[TaskSample], vocab: &Vocabulary, cfg: &MetricConfig) -> Result<EvalResult> {
    let preds = suite.iter().map(|s| predictor.predict(s)).collect::<Result<Vec<_>>>()?;
    score(suite, &preds, vocab, cfg)
}

/// Greedy-decodes every sample with `model` and scores the suite.
pub fn evaluate(
    model: &AvModel,
    suite: &[TaskSample],
    max_decode: usize,
    cfg: &MetricConfig,
    traces: Option<&mut BTreeMap<Family, RouterTrace>>,
) -> Result<EvalResult> {
    let mut p = ModelPredictor { model, max_decode, traces };
    evaluate_with(&mut p, suite, &model.vocab, cfg)
}
