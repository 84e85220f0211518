//! Interaction-aware LoRA: a frozen linear map plus a low-rank bypass with
//! one shared down-projection `A` and several up-projection heads `B_i`,
//! mixed per token by a softmax router.
//!
//! For a token `h`:
//!
//! ```text
//! s  = softmax(W_r h)
//! h' = W_o h + sum_i m_i * s_i * B_i (A h)
//! ```
//!
//! where `m_i` is 0 for a dropped head and 1 otherwise. There is no
//! `alpha / r` scale on the bypass.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub const DEFAULT_RANK: usize = 8;
pub const DEFAULT_HEADS: usize = 3;
/// Standard deviation for `A` and `W_r` at initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IaLoraConfig {
    pub rank: usize,
    pub n_heads: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl IaLoraConfig {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Self {
            rank: DEFAULT_RANK,
            n_heads: DEFAULT_HEADS,
            in_dim,
            out_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.n_heads == 0 || self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::Config(format!("all dimensions must be positive: {self:?}")));
        }
        if self.rank > self.in_dim.min(self.out_dim) {
            return Err(Error::Config(format!(
                "rank {} exceeds min(in {}, out {})",
                self.rank, self.in_dim, self.out_dim
            )));
        }
        Ok(())
    }
}

/// Output of one adapted linear layer.
#[derive(Debug, Clone, Copy)]
pub struct LoraForward {
    pub output: Var,
    /// Route scores `[L x n]` before head dropping.
    pub scores: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IaLoraLinear {
    pub config: IaLoraConfig,
    /// Frozen `W_o: [out x in]`.
    pub base: ParamId,
    /// Shared `A: [r x in]`.
    pub a: ParamId,
    /// Heads `B_i: [out x r]`.
    pub heads: Vec<ParamId>,
    /// Router `W_r: [n x in]`.
    pub router: ParamId,
    dropped: Vec<bool>,
}

impl IaLoraLinear {
    /// Random frozen base with entries `N(0, 1/in)`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: IaLoraConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let base = Tensor::randn(&[config.out_dim, config.in_dim], (1.0 / config.in_dim as f64).sqrt(), rng);
        Self::with_base(store, name, config, base, rng)
    }

    pub fn with_base<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: IaLoraConfig,
        base: Tensor,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if base.shape() != [config.out_dim, config.in_dim] {
            return Err(Error::Shape {
                op: "ia-lora base",
                lhs: vec![config.out_dim, config.in_dim],
                rhs: base.shape().to_vec(),
            });
        }
        let base = store.add(format!("{name}.base"), base, true);
        let a = store.add(
            format!("{name}.lora_a"),
            Tensor::randn(&[config.rank, config.in_dim], INIT_STD, rng),
            false,
        );
        let heads = (0..config.n_heads)
            .map(|i| {
                store.add(
                    format!("{name}.lora_b{i}"),
                    Tensor::zeros(&[config.out_dim, config.rank]),
                    false,
                )
            })
            .collect();
        let router = store.add(
            format!("{name}.router"),
            Tensor::randn(&[config.n_heads, config.in_dim], INIT_STD, rng),
            false,
        );
        Ok(Self {
            config,
            base,
            a,
            heads,
            router,
            dropped: vec![false; config.n_heads],
        })
    }

    fn check_input(&self, tape: &Tape, h: Var) -> Result<()> {
        let shape = tape.shape(h);
        if shape.len() != 2 || shape[1] != self.config.in_dim {
            return Err(Error::Shape {
                op: "ia-lora input",
                lhs: shape.to_vec(),
                rhs: vec![self.config.in_dim],
            });
        }
        Ok(())
    }

    /// Route scores `S = softmax(H W_r^T)`, one simplex row per token.
    pub fn route(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        self.check_input(tape, h)?;
        let wr = tape.param(store, self.router);
        let logits = tape.matmul_bt(h, wr)?;
        Ok(tape.softmax_rows(logits))
    }

    /// Frozen path only, `H W_o^T`.
    pub fn base_forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        self.check_input(tape, h)?;
        let wo = tape.param(store, self.base);
        tape.matmul_bt(h, wo)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<LoraForward> {
        let scores = self.route(tape, store, h)?;
        let mut output = self.base_forward(tape, store, h)?;
        if self.dropped.iter().all(|&d| d) {
            return Ok(LoraForward { output, scores });
        }
        let a = tape.param(store, self.a);
        let down = tape.matmul_bt(h, a)?;
        for (i, &head) in self.heads.iter().enumerate() {
            if self.dropped[i] {
                continue;
            }
            let b = tape.param(store, head);
            let up = tape.matmul_bt(down, b)?;
            let s = tape.column(scores, i)?;
            let weighted = tape.mul_col(up, s)?;
            output = tape.add(output, weighted)?;
        }
        Ok(LoraForward { output, scores })
    }

    /// Zeroes the routing weight of the given heads in `forward`. Remaining
    /// weights are not renormalized.
    pub fn drop_heads(&mut self, heads: &[usize]) -> Result<()> {
        if let Some(&bad) = heads.iter().find(|&&i| i >= self.config.n_heads) {
            return Err(Error::Index {
                what: "lora head",
                index: bad,
                len: self.config.n_heads,
            });
        }
        for &i in heads {
            self.dropped[i] = true;
        }
        Ok(())
    }

    pub fn reset_drops(&mut self) {
        self.dropped.iter_mut().for_each(|d| *d = false);
    }

    pub fn dropped_heads(&self) -> Vec<usize> {
        (0..self.config.n_heads).filter(|&i| self.dropped[i]).collect()
    }

    pub fn trainable_params(&self) -> Vec<ParamId> {
        let mut v = vec![self.a];
        v.extend(&self.heads);
        v.push(self.router);
        v
    }
}

/// One recorded router row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub task_tag: String,
    pub sample_index: usize,
    pub layer_id: usize,
    pub token_index: usize,
    pub scores: Vec<f64>,
}

/// How recorded rows are reduced to a profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Plain mean over every recorded row.
    #[default]
    FlatMean,
    /// Mean over layers of each layer's token mean.
    LayerMean,
    /// Only rows from the highest layer id.
    LastLayer,
}

/// Router scores recorded for one task tag.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterTrace {
    pub task_tag: String,
    pub n_heads: usize,
    pub rows: Vec<TraceRecord>,
}

fn mean_rows<'a>(rows: impl Iterator<Item = &'a [f64]>, n: usize) -> Option<Vec<f64>> {
    let mut acc = vec![0.0; n];
    let mut count = 0usize;
    for r in rows {
        acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        count += 1;
    }
    (count > 0).then(|| acc.into_iter().map(|v| v / count as f64).collect())
}

fn aggregate(rows: &[&TraceRecord], n: usize, how: Aggregation) -> Option<Vec<f64>> {
    match how {
        Aggregation::FlatMean => mean_rows(rows.iter().map(|r| r.scores.as_slice()), n),
        Aggregation::LayerMean => {
            let mut by_layer: BTreeMap<usize, Vec<&[f64]>> = BTreeMap::new();
            for r in rows {
                by_layer.entry(r.layer_id).or_default().push(&r.scores);
            }
            let layer_means: Vec<Vec<f64>> = by_layer
                .values()
                .filter_map(|rs| mean_rows(rs.iter().copied(), n))
                .collect();
            mean_rows(layer_means.iter().map(Vec::as_slice), n)
        }
        Aggregation::LastLayer => {
            let last = rows.iter().map(|r| r.layer_id).max()?;
            mean_rows(rows.iter().filter(|r| r.layer_id == last).map(|r| r.scores.as_slice()), n)
        }
    }
}

impl RouterTrace {
    pub fn new(task_tag: impl Into<String>, n_heads: usize) -> Self {
        Self {
            task_tag: task_tag.into(),
            n_heads,
            rows: Vec::new(),
        }
    }

    /// Records every row of a `[L x n]` score matrix for one layer.
    pub fn record(&mut self, sample_index: usize, layer_id: usize, scores: &Tensor) -> Result<()> {
        if scores.cols() != self.n_heads {
            return Err(Error::Shape {
                op: "trace record",
                lhs: scores.shape().to_vec(),
                rhs: vec![self.n_heads],
            });
        }
        for t in 0..scores.rows() {
            self.rows.push(TraceRecord {
                task_tag: self.task_tag.clone(),
                sample_index,
                layer_id,
                token_index: t,
                scores: scores.row(t).to_vec(),
            });
        }
        Ok(())
    }

    /// Mean over tokens, layers and samples.
    pub fn profile(&self) -> Result<Vec<f64>> {
        self.profile_with(Aggregation::FlatMean)
    }

    pub fn profile_with(&self, how: Aggregation) -> Result<Vec<f64>> {
        let rows: Vec<&TraceRecord> = self.rows.iter().collect();
        aggregate(&rows, self.n_heads, how).ok_or(Error::Empty("router trace"))
    }

    /// One profile per recorded sample, keyed by sample index.
    pub fn sample_profiles(&self, how: Aggregation) -> BTreeMap<usize, Vec<f64>> {
        let mut by_sample: BTreeMap<usize, Vec<&TraceRecord>> = BTreeMap::new();
        for r in &self.rows {
            by_sample.entry(r.sample_index).or_default().push(r);
        }
        by_sample
            .into_iter()
            .filter_map(|(s, rows)| aggregate(&rows, self.n_heads, how).map(|p| (s, p)))
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads JSON-lines records and groups them by task tag (sorted).
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<RouterTrace>> {
        let mut traces: BTreeMap<String, RouterTrace> = BTreeMap::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| contract(format!("trace read: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceRecord = serde_json::from_str(&line)
                .map_err(|e| contract(format!("trace line {}: {e}", lineno + 1)))?;
            let n = rec.scores.len();
            let t = traces
                .entry(rec.task_tag.clone())
                .or_insert_with(|| RouterTrace::new(rec.task_tag.clone(), n));
            if t.n_heads != n {
                return Err(contract(format!("trace line {}: {} scores, expected {}", lineno + 1, n, t.n_heads)));
            }
            t.rows.push(rec);
        }
        Ok(traces.into_values().collect())
    }
}
