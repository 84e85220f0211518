//! Two-scale promptable mask decoder.
//!
//! Each mask-token group is pooled into a prompt, projected to the pixel
//! feature width and refined by one cross-attention step over the pixels of
//! its scale. The coarse score map, upsampled, biases the fine step's
//! attention logits; the two maps are then fused with softmax weights.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::vocab::{MASK_GROUPS, MASK_PER_GROUP};
use crate::tensor::{scaled_dot_attention, ParamId, ParamStore, Tape, Tensor, Var};

/// Coarse and fine pixel features, `[H x W x D]` each, fine exactly twice
/// the coarse resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualPyramid {
    pub coarse: Tensor,
    pub fine: Tensor,
}

impl VisualPyramid {
    pub fn new(coarse: Tensor, fine: Tensor) -> Result<Self> {
        let (c, f) = (coarse.shape(), fine.shape());
        if c.len() != 3 || f.len() != 3 || c[2] != f[2] || f[0] != 2 * c[0] || f[1] != 2 * c[1] {
            return Err(Error::Shape { op: "visual pyramid", lhs: c.to_vec(), rhs: f.to_vec() });
        }
        if !coarse.is_finite() || !fine.is_finite() {
            return Err(Error::NonFinite("visual pyramid".into()));
        }
        Ok(Self { coarse, fine })
    }

    /// Builds the coarse level by 2x2 average pooling.
    pub fn from_fine(fine: Tensor) -> Result<Self> {
        let s = fine.shape().to_vec();
        if s.len() != 3 || s[0] % 2 != 0 || s[1] % 2 != 0 {
            return Err(Error::Shape { op: "pyramid pooling", lhs: s, rhs: vec![2, 2] });
        }
        let (h, w, d) = (s[0] / 2, s[1] / 2, s[2]);
        let mut data = vec![0.0; h * w * d];
        for i in 0..h {
            for j in 0..w {
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let src = ((2 * i + di) * s[1] + 2 * j + dj) * d;
                    let dst = (i * w + j) * d;
                    for k in 0..d {
                        data[dst + k] += 0.25 * fine.data()[src + k];
                    }
                }
            }
        }
        Self::new(Tensor::new(&[h, w, d], data)?, fine)
    }

    pub fn dim(&self) -> usize {
        self.fine.shape()[2]
    }

    pub fn coarse_hw(&self) -> (usize, usize) {
        (self.coarse.shape()[0], self.coarse.shape()[1])
    }

    pub fn fine_hw(&self) -> (usize, usize) {
        (self.fine.shape()[0], self.fine.shape()[1])
    }
}

/// Decoder outputs as concrete arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskOutput {
    /// `[C x H1 x W1]`
    pub coarse: Tensor,
    /// `[C x H2 x W2]`
    pub fine: Tensor,
    /// Normalized scale weights, coarse first.
    pub fusion: [f64; 2],
    /// Fused logits `[C x H2 x W2]`.
    pub logits: Tensor,
}

impl MaskOutput {
    pub fn channel_probs(&self, c: usize) -> Vec<f64> {
        let n = self.logits.shape()[1] * self.logits.shape()[2];
        self.logits.data()[c * n..(c + 1) * n]
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect()
    }
}

/// Decoder outputs on a tape.
#[derive(Debug, Clone, Copy)]
pub struct MaskVars {
    /// `[C x N1]`
    pub coarse: Var,
    /// `[C x N2]`
    pub fine: Var,
    /// `[1 x 2]`
    pub fusion: Var,
    /// `[C x N2]`
    pub logits: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskDecoder {
    pub hidden: usize,
    pub feat_dim: usize,
    pub categories: usize,
    /// Per-group pooling logits `[3]`.
    pub group_weights: [ParamId; MASK_GROUPS],
    /// Per-scale prompt projection `[D x h]`.
    pub prompt_proj: [ParamId; MASK_GROUPS],
    /// Per-category output heads `[D x D]`.
    pub heads: Vec<ParamId>,
    /// Scale fusion logits `[2]`.
    pub fusion: ParamId,
}

impl MaskDecoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        hidden: usize,
        feat_dim: usize,
        categories: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if categories == 0 || hidden == 0 || feat_dim == 0 {
            return Err(Error::Config("mask decoder needs C, h and D >= 1".into()));
        }
        let gw = |s: &mut ParamStore, g: usize| s.add(format!("decoder.group{g}.weights"), Tensor::zeros(&[MASK_PER_GROUP]), false);
        let group_weights = [gw(store, 0), gw(store, 1)];
        let std = (1.0 / hidden as f64).sqrt();
        let mut proj = |s: &mut ParamStore, g: usize| {
            s.add(format!("decoder.scale{g}.prompt_proj"), Tensor::randn(&[feat_dim, hidden], std, rng), false)
        };
        let prompt_proj = [proj(store, 0), proj(store, 1)];
        let heads = (0..categories)
            .map(|c| {
                store.add(
                    format!("decoder.head{c}"),
                    Tensor::randn(&[feat_dim, feat_dim], (1.0 / feat_dim as f64).sqrt(), rng),
                    false,
                )
            })
            .collect();
        let fusion = store.add("decoder.fusion", Tensor::zeros(&[2]), false);
        Ok(Self { hidden, feat_dim, categories, group_weights, prompt_proj, heads, fusion })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = self.group_weights.to_vec();
        v.extend(self.prompt_proj);
        v.extend(&self.heads);
        v.push(self.fusion);
        v
    }

    /// Pools one projected prompt per scale from `groups[g]: [3 x h]`,
    /// returning the prompt `[1 x D]` for the scale.
    pub fn scale_prompt(&self, tape: &mut Tape, store: &ParamStore, scale: usize, group: Var) -> Result<Var> {
        let w = tape.param(store, self.group_weights[scale]);
        let pooled = aggregate_group(tape, group, w)?;
        let p = tape.param(store, self.prompt_proj[scale]);
        tape.matmul_bt(pooled, p)
    }

    /// Runs the full two-scale decode.
    pub fn predict(&self, tape: &mut Tape, store: &ParamStore, groups: [Var; MASK_GROUPS], pyramid: &VisualPyramid) -> Result<MaskVars> {
        if pyramid.dim() != self.feat_dim {
            return Err(Error::Shape { op: "mask decoder features", lhs: vec![pyramid.dim()], rhs: vec![self.feat_dim] });
        }
        let heads: Vec<Var> = self.heads.iter().map(|&h| tape.param(store, h)).collect();
        let (h1, w1) = pyramid.coarse_hw();
        let (h2, w2) = pyramid.fine_hw();
        let coarse_feats = tape.constant(pyramid.coarse.clone().reshape(&[h1 * w1, self.feat_dim])?);
        let fine_feats = tape.constant(pyramid.fine.clone().reshape(&[h2 * w2, self.feat_dim])?);

        let p1 = self.scale_prompt(tape, store, 0, groups[0])?;
        let coarse = decode_scale(tape, p1, coarse_feats, None, &heads)?;
        let guide = channel_mean(tape, coarse)?;
        let bias = propagate_bias(tape, guide, (h1, w1), (h2, w2))?;
        let p2 = self.scale_prompt(tape, store, 1, groups[1])?;
        let fine = decode_scale(tape, p2, fine_feats, Some(bias), &heads)?;

        let u = tape.param(store, self.fusion);
        let u = tape.reshape(u, &[1, 2])?;
        let fusion = tape.softmax_rows(u);
        let up = upsample(tape, coarse, (h1, w1), (h2, w2))?;
        let logits = combine_scales(tape, up, fine, fusion)?;
        Ok(MaskVars { coarse, fine, fusion, logits })
    }

    pub fn to_output(&self, tape: &Tape, vars: &MaskVars, pyramid: &VisualPyramid) -> Result<MaskOutput> {
        let (h1, w1) = pyramid.coarse_hw();
        let (h2, w2) = pyramid.fine_hw();
        let c = self.categories;
        let f = tape.value(vars.fusion).data();
        Ok(MaskOutput {
            coarse: tape.value(vars.coarse).clone().reshape(&[c, h1, w1])?,
            fine: tape.value(vars.fine).clone().reshape(&[c, h2, w2])?,
            fusion: [f[0], f[1]],
            logits: tape.value(vars.logits).clone().reshape(&[c, h2, w2])?,
        })
    }
}

/// `softmax(w)`-weighted sum of the three rows of `group: [3 x h]`.
pub fn aggregate_group(tape: &mut Tape, group: Var, w: Var) -> Result<Var> {
    let gs = tape.shape(group).to_vec();
    if gs.len() != 2 || gs[0] != MASK_PER_GROUP {
        return Err(Error::Shape { op: "aggregate_group", lhs: gs, rhs: vec![MASK_PER_GROUP] });
    }
    if tape.value(w).len() != MASK_PER_GROUP {
        return Err(Error::Shape { op: "aggregate_group weights", lhs: tape.shape(w).to_vec(), rhs: vec![MASK_PER_GROUP] });
    }
    let w = tape.reshape(w, &[1, MASK_PER_GROUP])?;
    let s = tape.softmax_rows(w);
    tape.matmul(s, group)
}

/// One cross-attention step of `prompt: [1 x D]` over `feats: [N x D]`
/// (keys and values are the features), residual update, then per-pixel
/// logits `F (W_c u)` for every head. Returns `[C x N]`.
pub fn decode_scale(tape: &mut Tape, prompt: Var, feats: Var, bias: Option<Var>, heads: &[Var]) -> Result<Var> {
    let (ps, fs) = (tape.shape(prompt).to_vec(), tape.shape(feats).to_vec());
    if ps.len() != 2 || ps[0] != 1 || fs.len() != 2 || ps[1] != fs[1] {
        return Err(Error::Shape { op: "decode_scale", lhs: ps, rhs: fs });
    }
    if heads.is_empty() {
        return Err(Error::Empty("output heads"));
    }
    let attended = scaled_dot_attention(tape, prompt, feats, feats, bias, false)?;
    let updated = tape.add(prompt, attended)?;
    let dirs = heads
        .iter()
        .map(|&w| tape.matmul_bt(updated, w))
        .collect::<Result<Vec<_>>>()?;
    let dirs = tape.concat_rows(&dirs)?;
    tape.matmul_bt(dirs, feats)
}

fn channel_mean(tape: &mut Tape, maps: Var) -> Result<Var> {
    let c = tape.shape(maps)[0];
    if c == 1 {
        return Ok(maps);
    }
    let avg = tape.constant(Tensor::filled(&[1, c], 1.0 / c as f64));
    tape.matmul(avg, maps)
}

/// Bilinear interpolation matrix `[(h2*w2) x (h1*w1)]` with corner-aligned
/// sampling. Requires integer scale factors.
pub fn bilinear_matrix(from: (usize, usize), to: (usize, usize)) -> Result<Tensor> {
    let (h1, w1) = from;
    let (h2, w2) = to;
    if h1 == 0 || w1 == 0 || h2 % h1 != 0 || w2 % w1 != 0 {
        return Err(Error::Shape { op: "bilinear scale factor", lhs: vec![h1, w1], rhs: vec![h2, w2] });
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                if n_in == 1 || n_out == 1 {
                    return (0, 0, 0.0);
                }
                let pos = o as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
                let lo = (pos.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let (ys, xs) = (axis(h1, h2), axis(w1, w2));
    let mut m = vec![0.0; h2 * w2 * h1 * w1];
    let cols = h1 * w1;
    for (i, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (j, &(x0, x1, fx)) in xs.iter().enumerate() {
            let row = (i * w2 + j) * cols;
            m[row + y0 * w1 + x0] += (1.0 - fy) * (1.0 - fx);
            m[row + y0 * w1 + x1] += (1.0 - fy) * fx;
            m[row + y1 * w1 + x0] += fy * (1.0 - fx);
            m[row + y1 * w1 + x1] += fy * fx;
        }
    }
    Tensor::new(&[h2 * w2, cols], m)
}

/// Upsamples each row of `maps: [C x h1*w1]` to `[C x h2*w2]`.
pub fn upsample(tape: &mut Tape, maps: Var, from: (usize, usize), to: (usize, usize)) -> Result<Var> {
    if from == to {
        return Ok(maps);
    }
    let m = tape.constant(bilinear_matrix(from, to)?);
    tape.matmul_bt(maps, m)
}

/// Upsampled previous-scale map used directly as an additive attention bias.
pub fn propagate_bias(tape: &mut Tape, prev: Var, from: (usize, usize), to: (usize, usize)) -> Result<Var> {
    let s = tape.shape(prev).to_vec();
    if s.iter().product::<usize>() != from.0 * from.1 {
        return Err(Error::Shape { op: "propagate_bias", lhs: s, rhs: vec![from.0, from.1] });
    }
    let flat = tape.reshape(prev, &[1, from.0 * from.1])?;
    upsample(tape, flat, from, to)
}

/// `w0 * coarse_up + w1 * fine` per channel, `weights: [1 x 2]` already
/// normalized.
pub fn combine_scales(tape: &mut Tape, coarse_up: Var, fine: Var, weights: Var) -> Result<Var> {
    let (a, b) = (tape.shape(coarse_up).to_vec(), tape.shape(fine).to_vec());
    if a != b || a.len() != 2 {
        return Err(Error::Shape { op: "combine_scales", lhs: a, rhs: b });
    }
    let mut rows = Vec::with_capacity(a[0]);
    for c in 0..a[0] {
        let x = tape.slice_rows(coarse_up, c, 1)?;
        let y = tape.slice_rows(fine, c, 1)?;
        let stacked = tape.concat_rows(&[x, y])?;
        rows.push(tape.matmul(weights, stacked)?);
    }
    tape.concat_rows(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSidecar {
    pub format: String,
    pub width: usize,
    pub height: usize,
    pub channel: usize,
    pub threshold: f64,
}

/// Writes probabilities in `[0, 1]` as a binary 8-bit PGM plus a `.json`
/// sidecar next to it.
pub fn write_mask_pgm(path: &Path, probs: &[f64], height: usize, width: usize, channel: usize, threshold: f64) -> Result<()> {
    if probs.len() != height * width {
        return Err(Error::ValueCount { shape: vec![height, width], expected: height * width, actual: probs.len() });
    }
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    write!(f, "P5\n{width} {height}\n255\n").map_err(io)?;
    let bytes: Vec<u8> = probs.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    f.write_all(&bytes).map_err(io)?;
    f.flush().map_err(io)?;
    let sidecar = MaskSidecar { format: "pgm-p5".into(), width, height, channel, threshold };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(path.with_extension("json"), json).map_err(io)?;
    Ok(())
}
