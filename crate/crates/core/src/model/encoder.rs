//! Trainable question encoder: token embeddings fed through a
//! single-layer gated recurrent cell. The final state doubles as the
//! question summary and is prepended to the per-token states, taking the
//! place a pretrained encoder's leading summary token would occupy.

use crate::error::{Error, Result};
use crate::tensor::{BoundParams, Tape, Tensor, Var};

/// Per-token hidden states with the summary row prepended.
pub struct QuestionEncoding<'t> {
    /// `[l+1, d]`, row 0 is the summary.
    pub hidden: Var<'t>,
    /// `[l, d]`, one row per question token.
    pub words: Var<'t>,
    /// `[d]`, equals row 0 of `hidden`.
    pub summary: Var<'t>,
}

/// Gate order: update `z`, reset `r`, candidate `n`;
/// `h' = (1 - z) ⊙ n + z ⊙ h` with `n = tanh(x Wn + (r ⊙ h) Un + bn)`.
pub fn encode_question<'t>(
    tape: &'t Tape,
    params: &BoundParams<'t>,
    tokens: &[usize],
    hidden_size: usize,
) -> Result<QuestionEncoding<'t>> {
    if tokens.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    let embed = params.get("encoder.token_embed");
    let x = embed.select_rows(tokens); // [l, d]

    let w_z = params.get("encoder.gru.w_z");
    let u_z = params.get("encoder.gru.u_z");
    let b_z = params.get("encoder.gru.b_z");
    let w_r = params.get("encoder.gru.w_r");
    let u_r = params.get("encoder.gru.u_r");
    let b_r = params.get("encoder.gru.b_r");
    let w_n = params.get("encoder.gru.w_n");
    let u_n = params.get("encoder.gru.u_n");
    let b_n = params.get("encoder.gru.b_n");

    let mut h = tape.constant(Tensor::zeros(vec![hidden_size]));
    let mut states = Vec::with_capacity(tokens.len());
    for j in 0..tokens.len() {
        let xj = x.select_rows(&[j]).reshape(vec![hidden_size]);
        let z = xj.matmul(w_z).add(h.matmul(u_z)).add(b_z).sigmoid();
        let r = xj.matmul(w_r).add(h.matmul(u_r)).add(b_r).sigmoid();
        let n = xj.matmul(w_n).add(r.mul(h).matmul(u_n)).add(b_n).tanh();
        // (1 - z) ⊙ n + z ⊙ h
        h = n.add(z.mul(h.sub(n)));
        states.push(h);
    }
    let words = tape.stack_rows(&states);
    let summary = h;
    let hidden = tape.concat(0, &[summary.reshape(vec![1, hidden_size]), words]);
    Ok(QuestionEncoding {
        hidden,
        words,
        summary,
    })
}
