use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{scaled_dot_attention, ParamId, ParamStore, Tape, Tensor, Var};

/// Learnable query tokens that cross-attend to a variable-length feature
/// sequence, followed by a two-layer MLP into the LM width. Always emits
/// `num_queries` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryCompressor {
    pub in_dim: usize,
    pub key_dim: usize,
    pub hidden: usize,
    pub num_queries: usize,
    pub queries: ParamId,
    pub w_key: ParamId,
    pub w_value: ParamId,
    pub mlp_in: ParamId,
    pub mlp_in_bias: ParamId,
    pub mlp_out: ParamId,
    pub mlp_out_bias: ParamId,
}

impl QueryCompressor {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        key_dim: usize,
        hidden: usize,
        num_queries: usize,
        rng: &mut R,
    ) -> Self {
        let scale = |d: usize| (1.0 / d as f64).sqrt();
        Self {
            in_dim,
            key_dim,
            hidden,
            num_queries,
            queries: store.add(format!("{name}.queries"), Tensor::randn(&[num_queries, key_dim], 1.0, rng), false),
            w_key: store.add(format!("{name}.w_key"), Tensor::randn(&[key_dim, in_dim], scale(in_dim), rng), false),
            w_value: store.add(format!("{name}.w_value"), Tensor::randn(&[key_dim, in_dim], scale(in_dim), rng), false),
            mlp_in: store.add(format!("{name}.mlp_in"), Tensor::randn(&[hidden, key_dim], scale(key_dim), rng), false),
            mlp_in_bias: store.add(format!("{name}.mlp_in_bias"), Tensor::zeros(&[hidden]), false),
            mlp_out: store.add(format!("{name}.mlp_out"), Tensor::randn(&[hidden, hidden], scale(hidden), rng), false),
            mlp_out_bias: store.add(format!("{name}.mlp_out_bias"), Tensor::zeros(&[hidden]), false),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![
            self.queries,
            self.w_key,
            self.w_value,
            self.mlp_in,
            self.mlp_in_bias,
            self.mlp_out,
            self.mlp_out_bias,
        ]
    }

    /// `feats: [L x in_dim] -> [num_queries x hidden]`.
    pub fn compress(&self, tape: &mut Tape, store: &ParamStore, feats: Var) -> Result<Var> {
        let shape = tape.shape(feats);
        if shape.len() != 2 || shape[1] != self.in_dim {
            return Err(Error::Shape {
                op: "compress",
                lhs: shape.to_vec(),
                rhs: vec![self.in_dim],
            });
        }
        let q = tape.param(store, self.queries);
        let wk = tape.param(store, self.w_key);
        let wv = tape.param(store, self.w_value);
        let keys = tape.matmul_bt(feats, wk)?;
        let values = tape.matmul_bt(feats, wv)?;
        let pooled = scaled_dot_attention(tape, q, keys, values, None, false)?;
        self.mlp(tape, store, pooled)
    }

    /// The two-layer projection alone, `W2 silu(W1 x + b1) + b2`.
    pub fn mlp(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w1 = tape.param(store, self.mlp_in);
        let b1 = tape.param(store, self.mlp_in_bias);
        let w2 = tape.param(store, self.mlp_out);
        let b2 = tape.param(store, self.mlp_out_bias);
        let h = tape.matmul_bt(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.silu(h);
        let h = tape.matmul_bt(h, w2)?;
        tape.add_row(h, b2)
    }
}
