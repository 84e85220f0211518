use super::{Tape, Var};
use crate::error::{Error, Result};

/// `softmax(q k^T / sqrt(d) + bias) v`.
///
/// `q: [Lq x d]`, `k: [Lk x d]`, `v: [Lk x dv]`, `bias: [Lq x Lk]`. With
/// `causal` set, query `i` sees keys up to `i + (Lk - Lq)`.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    bias: Option<Var>,
    causal: bool,
) -> Result<Var> {
    let (qs, ks, vs) = (tape.shape(q).to_vec(), tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if qs.len() != 2 || ks.len() != 2 || qs[1] != ks[1] {
        return Err(Error::Shape { op: "attention q/k", lhs: qs, rhs: ks });
    }
    if vs.len() != 2 || vs[0] != ks[0] {
        return Err(Error::Shape { op: "attention k/v", lhs: ks, rhs: vs });
    }
    let scores = tape.matmul_bt(q, k)?;
    let mut scores = tape.scale(scores, 1.0 / (qs[1] as f64).sqrt());
    if let Some(b) = bias {
        let bs = tape.shape(b).to_vec();
        if bs.iter().product::<usize>() != qs[0] * ks[0] {
            return Err(Error::Shape { op: "attention bias", lhs: vec![qs[0], ks[0]], rhs: bs });
        }
        let b = if bs != [qs[0], ks[0]] { tape.reshape(b, &[qs[0], ks[0]])? } else { b };
        scores = tape.add(scores, b)?;
    }
    let weights = if causal { tape.causal_softmax_rows(scores)? } else { tape.softmax_rows(scores) };
    tape.matmul(weights, v)
}
