use rand::Rng;

use crate::error::{Error, Result};
use crate::lora::{IaLoraConfig, IaLoraLinear};
use crate::tensor::{scaled_dot_attention, ParamId, ParamStore, Tape, Tensor, Var};

const NORM_EPS: f64 = 1e-6;

/// Pre-norm decoder block: single-head causal attention plus a SiLU MLP,
/// every projection an adapted linear layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub q: IaLoraLinear,
    pub k: IaLoraLinear,
    pub v: IaLoraLinear,
    pub o: IaLoraLinear,
    pub up: IaLoraLinear,
    pub down: IaLoraLinear,
}

impl Block {
    fn layers(&self) -> [&IaLoraLinear; 6] {
        [&self.q, &self.k, &self.v, &self.o, &self.up, &self.down]
    }

    fn layers_mut(&mut self) -> [&mut IaLoraLinear; 6] {
        [&mut self.q, &mut self.k, &mut self.v, &mut self.o, &mut self.up, &mut self.down]
    }
}

/// Result of one LM pass.
#[derive(Debug, Clone)]
pub struct LmOutput {
    /// `[L x |V|]`
    pub logits: Var,
    /// Last-layer hidden states `[L x h]`.
    pub hidden: Var,
    /// Route scores per adapted layer, in [`ToyTransformerLM::layers`] order.
    pub scores: Vec<Var>,
}

/// Small causal transformer with a frozen random base.
///
/// Token embeddings and sinusoidal positions are frozen; adapters live in
/// every projection including the vocabulary head.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformerLM {
    pub hidden: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub embedding: ParamId,
    pub positions: ParamId,
    pub blocks: Vec<Block>,
    pub head: IaLoraLinear,
}

pub fn sinusoidal_positions(max_len: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; max_len * width];
    for p in 0..max_len {
        for i in 0..width {
            let freq = 10000f64.powf(-((i / 2 * 2) as f64) / width as f64);
            let angle = p as f64 * freq;
            data[p * width + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(&[max_len, width], data).expect("positive dims")
}

impl ToyTransformerLM {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab_size: usize,
        hidden: usize,
        n_blocks: usize,
        mlp_hidden: usize,
        max_len: usize,
        rank: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let embedding = store.add("lm.embedding", Tensor::randn(&[vocab_size, hidden], 1.0, rng), true);
        let positions = store.add("lm.positions", sinusoidal_positions(max_len, hidden), true);
        let linear = |store: &mut ParamStore, name: String, i: usize, o: usize, rng: &mut R| {
            let cfg = IaLoraConfig { rank, n_heads, in_dim: i, out_dim: o };
            IaLoraLinear::new(store, &name, cfg, rng)
        };
        let mut blocks = Vec::with_capacity(n_blocks);
        for b in 0..n_blocks {
            let p = format!("lm.block{b}");
            blocks.push(Block {
                q: linear(store, format!("{p}.q"), hidden, hidden, rng)?,
                k: linear(store, format!("{p}.k"), hidden, hidden, rng)?,
                v: linear(store, format!("{p}.v"), hidden, hidden, rng)?,
                o: linear(store, format!("{p}.o"), hidden, hidden, rng)?,
                up: linear(store, format!("{p}.up"), hidden, mlp_hidden, rng)?,
                down: linear(store, format!("{p}.down"), mlp_hidden, hidden, rng)?,
            });
        }
        let head = linear(store, "lm.head".into(), hidden, vocab_size, rng)?;
        Ok(Self {
            hidden,
            vocab_size,
            max_len,
            embedding,
            positions,
            blocks,
            head,
        })
    }

    /// Every adapted layer: blocks in order (q, k, v, o, up, down), then the head.
    pub fn layers(&self) -> Vec<&IaLoraLinear> {
        let mut v: Vec<&IaLoraLinear> = self.blocks.iter().flat_map(|b| b.layers()).collect();
        v.push(&self.head);
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut IaLoraLinear> {
        let mut v: Vec<&mut IaLoraLinear> = self.blocks.iter_mut().flat_map(|b| b.layers_mut()).collect();
        v.push(&mut self.head);
        v
    }

    /// Frozen embedding rows for `ids`, `[len x h]`.
    pub fn embed(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::Index { what: "token id", index: bad, len: self.vocab_size });
        }
        let table = tape.param(store, self.embedding);
        tape.gather_rows(table, ids)
    }

    /// Runs the stack over `h0: [L x h]`. With `bypass` off every layer uses
    /// its frozen weight only.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h0: Var, bypass: bool) -> Result<LmOutput> {
        let shape = tape.shape(h0).to_vec();
        if shape.len() != 2 || shape[1] != self.hidden || shape[0] == 0 {
            return Err(Error::Shape { op: "forward_lm", lhs: shape, rhs: vec![self.hidden] });
        }
        let len = shape[0];
        if len > self.max_len {
            return Err(Error::Index { what: "sequence length", index: len, len: self.max_len });
        }
        let mut scores = Vec::new();
        let mut apply = |tape: &mut Tape, layer: &IaLoraLinear, x: Var| -> Result<Var> {
            if bypass {
                let out = layer.forward(tape, store, x)?;
                scores.push(out.scores);
                Ok(out.output)
            } else {
                layer.base_forward(tape, store, x)
            }
        };
        let table = tape.param(store, self.positions);
        let pos = tape.slice_rows(table, 0, len)?;
        let mut x = tape.add(h0, pos)?;
        for block in &self.blocks {
            let a = tape.rms_norm_rows(x, NORM_EPS);
            let q = apply(tape, &block.q, a)?;
            let k = apply(tape, &block.k, a)?;
            let v = apply(tape, &block.v, a)?;
            let att = scaled_dot_attention(tape, q, k, v, None, true)?;
            let o = apply(tape, &block.o, att)?;
            x = tape.add(x, o)?;
            let m = tape.rms_norm_rows(x, NORM_EPS);
            let u = apply(tape, &block.up, m)?;
            let u = tape.silu(u);
            let d = apply(tape, &block.down, u)?;
            x = tape.add(x, d)?;
        }
        let logits = apply(tape, &self.head, x)?;
        Ok(LmOutput { logits, hidden: x, scores })
    }
}
