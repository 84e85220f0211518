use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

pub const DICE_EPS: f64 = 1.0;

/// Mean token cross-entropy over positions whose target is not `ignore_id`.
pub fn l_txt(tape: &mut Tape, logits: Var, targets: &[usize], ignore_id: usize) -> Result<Var> {
    let t: Vec<Option<usize>> = targets.iter().map(|&t| (t != ignore_id).then_some(t)).collect();
    tape.cross_entropy(logits, &t)
}

fn check_binary(targets: &[f64]) -> Result<()> {
    match targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
        Some(t) => Err(Error::Config(format!("mask target {t} is not 0 or 1"))),
        None => Ok(()),
    }
}

/// Mean binary cross-entropy on mask logits.
pub fn l_bce(tape: &mut Tape, logits: Var, targets: &[f64]) -> Result<Var> {
    check_binary(targets)?;
    tape.bce_with_logits(logits, targets)
}

/// `1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)` with `eps = 1`.
pub fn l_dice(tape: &mut Tape, probs: Var, targets: &[f64]) -> Result<Var> {
    check_binary(targets)?;
    let shape = tape.shape(probs).to_vec();
    if shape.iter().product::<usize>() != targets.len() {
        return Err(Error::Shape { op: "l_dice", lhs: shape, rhs: vec![targets.len()] });
    }
    let t = tape.constant(crate::tensor::Tensor::new(&shape, targets.to_vec())?);
    let pt = tape.mul(probs, t)?;
    let inter = tape.sum(pt);
    let num = tape.scale(inter, 2.0);
    let num = tape.add_scalar(num, DICE_EPS);
    let sp = tape.sum(probs);
    let den = tape.add_scalar(sp, targets.iter().sum::<f64>() + DICE_EPS);
    let ratio = tape.div(num, den)?;
    let neg = tape.scale(ratio, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

/// Pixelwise cross-entropy of `logits: [C x N]` against `labels: [N]`.
pub fn l_ce_semantic(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits).to_vec();
    let c = shape[0];
    let n: usize = shape[1..].iter().product();
    if n != labels.len() {
        return Err(Error::Shape { op: "l_ce_semantic", lhs: shape, rhs: vec![labels.len()] });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Index { what: "semantic label", index: bad, len: c });
    }
    let flat = tape.reshape(logits, &[c, n])?;
    let per_pixel = tape.transpose(flat)?;
    let t: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
    tape.cross_entropy(per_pixel, &t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub txt: f64,
    pub seg: f64,
    pub bce: f64,
    pub dice: f64,
    pub ce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { txt: 1.0, seg: 0.5, bce: 1.0, dice: 0.5, ce: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("txt", self.txt), ("seg", self.seg), ("bce", self.bce), ("dice", self.dice), ("ce", self.ce)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("loss weight {name} = {w} must be a nonnegative number")));
            }
        }
        Ok(())
    }
}

/// Component losses of one batch; absent terms count as zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms<T> {
    pub txt: Option<T>,
    pub bce: Option<T>,
    pub dice: Option<T>,
    pub ce: Option<T>,
}

impl<T> Default for LossTerms<T> {
    fn default() -> Self {
        Self { txt: None, bce: None, dice: None, ce: None }
    }
}

/// `(L_seg, L)` with `L_seg = l_bce w_bce + l_dice w_dice + l_ce w_ce` and
/// `L = l_txt w_txt + L_seg w_seg`.
pub fn combine_losses(terms: &LossTerms<f64>, w: &LossWeights) -> Result<(f64, f64)> {
    w.validate()?;
    let v = |x: Option<f64>| x.unwrap_or(0.0);
    let seg = w.bce * v(terms.bce) + w.dice * v(terms.dice) + w.ce * v(terms.ce);
    Ok((seg, w.txt * v(terms.txt) + w.seg * seg))
}

/// Tape version of [`combine_losses`], returning `L`. At least one term
/// must be present.
pub fn combine_losses_on_tape(tape: &mut Tape, terms: &LossTerms<Var>, w: &LossWeights) -> Result<Var> {
    w.validate()?;
    let mut parts = Vec::new();
    for (x, k) in [
        (terms.txt, w.txt),
        (terms.bce, w.seg * w.bce),
        (terms.dice, w.seg * w.dice),
        (terms.ce, w.seg * w.ce),
    ] {
        if let Some(x) = x {
            parts.push(tape.scale(x, k));
        }
    }
    let mut it = parts.into_iter();
    let first = it.next().ok_or_else(|| Error::UndefinedLoss("no loss terms present".into()))?;
    it.try_fold(first, |acc, p| tape.add(acc, p))
}
