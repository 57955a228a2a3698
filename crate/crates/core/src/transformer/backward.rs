//! Manual backpropagation with full or row-restricted gradients.
//!
//! `Trainable::AllWeights` returns gradients for every parameter.
//! `Trainable::EmbeddingRow(r)` returns a single d-vector: the gradient of
//! the loss with respect to embedding row r, which (via weight tying) is
//! simultaneously unembedding column r. It combines the embedding path
//! through every occurrence of token r in the inputs and the unembedding
//! path through token r's logit at every prediction position. No other
//! parameter receives a gradient in that mode.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels;

use super::forward::forward_cached;
use super::{Model, ModelConfig, Weights};

/// Which parameters receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    AllWeights,
    EmbeddingRow(u32),
}

/// One training sequence. Predictions whose target index is below
/// `loss_start` are excluded from the loss (used to restrict fine-tuning to
/// the completion span of a framed example).
#[derive(Debug, Clone)]
pub struct TrainSeq {
    pub tokens: Vec<u32>,
    pub loss_start: usize,
}

impl TrainSeq {
    /// Loss over every next-token prediction.
    pub fn full(tokens: Vec<u32>) -> Self {
        Self {
            tokens,
            loss_start: 1,
        }
    }

    pub fn from_span(tokens: Vec<u32>, loss_start: usize) -> Self {
        Self { tokens, loss_start }
    }
}

#[derive(Debug)]
pub enum Grads {
    All(Box<Weights>),
    Row(Vec<f32>),
}

impl Grads {
    pub fn expect_row(&self) -> &[f32] {
        match self {
            Grads::Row(r) => r,
            Grads::All(_) => panic!("expected row gradient"),
        }
    }

    pub fn expect_all(&self) -> &Weights {
        match self {
            Grads::All(w) => w,
            Grads::Row(_) => panic!("expected full gradient"),
        }
    }
}

#[derive(Debug)]
pub struct LossOutput {
    /// Mean cross-entropy over all counted predictions in the batch.
    pub loss: f64,
    pub n_predictions: usize,
    pub grads: Grads,
}

enum PartialGrads {
    All(Box<Weights>),
    Row(Vec<f64>),
}

/// Mean next-token cross-entropy and gradients restricted to `trainable`.
pub fn loss_and_grads(
    model: &Model,
    batch: &[TrainSeq],
    trainable: Trainable,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    for seq in batch {
        if seq.tokens.len() < 2 {
            return Err(Error::Input(format!(
                "sequence of length {} cannot produce a prediction",
                seq.tokens.len()
            )));
        }
    }
    if let Trainable::EmbeddingRow(r) = trainable {
        if (r as usize) >= model.config.vocab_size {
            return Err(Error::Index(format!(
                "embedding row {r} out of range for vocabulary of size {}",
                model.config.vocab_size
            )));
        }
    }

    // Per-sequence passes are independent; partial grads are merged in batch
    // order so the result does not depend on thread scheduling.
    let per_seq: Result<Vec<(f64, usize, PartialGrads)>> = batch
        .par_iter()
        .map(|seq| backward_seq(&model.config, &model.weights, seq, trainable))
        .collect();
    let per_seq = per_seq?;

    let total_preds: usize = per_seq.iter().map(|(_, n, _)| n).sum();
    if total_preds == 0 {
        return Err(Error::Input("no counted predictions in batch".into()));
    }
    let total_loss: f64 = per_seq.iter().map(|(l, _, _)| l).sum();
    let scale = 1.0 / total_preds as f64;

    let grads = match trainable {
        Trainable::AllWeights => {
            let mut acc = Weights::zeros(&model.config);
            for (_, _, pg) in per_seq {
                let PartialGrads::All(g) = pg else { unreachable!() };
                for ((_, dst), (_, src)) in
                    acc.named_tensors_mut().into_iter().zip(g.named_tensors())
                {
                    dst.add_assign(src)?;
                }
            }
            for (_, t) in acc.named_tensors_mut() {
                t.scale(scale as f32);
            }
            Grads::All(Box::new(acc))
        }
        Trainable::EmbeddingRow(_) => {
            let mut acc = vec![0.0f64; model.config.d_model];
            for (_, _, pg) in per_seq {
                let PartialGrads::Row(g) = pg else { unreachable!() };
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            Grads::Row(acc.iter().map(|&v| (v * scale) as f32).collect())
        }
    };

    Ok(LossOutput {
        loss: total_loss * scale,
        n_predictions: total_preds,
        grads,
    })
}

/// Loss only (no gradients) with the same counting rules, for eval paths.
pub(crate) fn batch_loss(model: &Model, batch: &[TrainSeq]) -> Result<(f64, usize)> {
    let mut total = 0.0f64;
    let mut n = 0usize;
    for seq in batch {
        let cache = forward_cached(&model.config, &model.weights, &seq.tokens, None)?;
        let loss_start = seq.loss_start.max(1);
        for t in 0..seq.tokens.len() - 1 {
            if t + 1 < loss_start {
                continue;
            }
            let (loss, _) = kernels::cross_entropy(&cache.logits[t], seq.tokens[t + 1] as usize)?;
            total += loss;
            n += 1;
        }
    }
    Ok((total, n))
}

/// Backward for one sequence. Returns (sum of losses, n predictions, grads).
fn backward_seq(
    config: &ModelConfig,
    weights: &Weights,
    seq: &TrainSeq,
    trainable: Trainable,
) -> Result<(f64, usize, PartialGrads)> {
    let cache = forward_cached(config, weights, &seq.tokens, None)?;
    let t_len = seq.tokens.len();
    let d = config.d_model;
    let n_heads = config.n_heads;
    let head_dim = config.head_dim();
    let scale = 1.0 / (head_dim as f32).sqrt();
    let loss_start = seq.loss_start.max(1);

    let mut grads = match trainable {
        Trainable::AllWeights => PartialGrads::All(Box::new(Weights::zeros(config))),
        Trainable::EmbeddingRow(_) => PartialGrads::Row(vec![0.0f64; d]),
    };
    let row_id = match trainable {
        Trainable::EmbeddingRow(r) => r as usize,
        Trainable::AllWeights => usize::MAX,
    };

    // loss and dlogits at counted prediction positions
    let mut loss_sum = 0.0f64;
    let mut n_pred = 0usize;
    let mut dlogits: Vec<Option<Vec<f32>>> = vec![None; t_len];
    for t in 0..t_len - 1 {
        if t + 1 < loss_start {
            continue;
        }
        let (loss, dl) = kernels::cross_entropy(&cache.logits[t], seq.tokens[t + 1] as usize)?;
        loss_sum += loss;
        n_pred += 1;
        dlogits[t] = Some(dl);
    }

    // unembedding and final layer norm backward
    let mut dx: Vec<Vec<f32>> = vec![vec![0.0; d]; t_len];
    {
        let mut dgf = vec![0.0f32; d];
        let mut dbf = vec![0.0f32; d];
        for t in 0..t_len {
            let Some(dl) = &dlogits[t] else { continue };
            let df = kernels::vec_mat(dl, &weights.embed);
            match &mut grads {
                PartialGrads::All(g) => kernels::outer_acc(&mut g.embed, dl, &cache.f[t]),
                PartialGrads::Row(acc) => {
                    // unembedding path: only token r's logit touches row r
                    let dr = f64::from(dl[row_id]);
                    for (a, &fv) in acc.iter_mut().zip(&cache.f[t]) {
                        *a += dr * f64::from(fv);
                    }
                }
            }
            dx[t] = kernels::layer_norm_backward(
                &df,
                weights.ln_f_gain.row(0),
                &cache.lnf[t],
                &mut dgf,
                &mut dbf,
            );
        }
        if let PartialGrads::All(g) = &mut grads {
            kernels::axpy(g.ln_f_gain.row_mut(0), 1.0, &dgf);
            kernels::axpy(g.ln_f_bias.row_mut(0), 1.0, &dbf);
        }
    }

    // layers in reverse
    for li in (0..config.n_layers).rev() {
        let lw = &weights.layers[li];
        let lc = &cache.layers[li];

        // MLP branch
        let mut dx_mid: Vec<Vec<f32>> = vec![vec![0.0; d]; t_len];
        {
            let mut dg2 = vec![0.0f32; d];
            let mut db2 = vec![0.0f32; d];
            for t in 0..t_len {
                let dmlp = &dx[t];
                dx_mid[t].copy_from_slice(dmlp); // residual passthrough
                if dmlp.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let mut dr = kernels::vec_mat_t(dmlp, &lw.w_out);
                if let PartialGrads::All(g) = &mut grads {
                    let gl = &mut g.layers[li];
                    kernels::outer_acc(&mut gl.w_out, &lc.r[t], dmlp);
                    kernels::axpy(gl.b_out.row_mut(0), 1.0, dmlp);
                }
                for (drv, &av) in dr.iter_mut().zip(&lc.a[t]) {
                    if av <= 0.0 {
                        *drv = 0.0;
                    }
                }
                let da = dr;
                let dln2 = kernels::vec_mat_t(&da, &lw.w_in);
                if let PartialGrads::All(g) = &mut grads {
                    let gl = &mut g.layers[li];
                    kernels::outer_acc(&mut gl.w_in, &lc.ln2_out[t], &da);
                    kernels::axpy(gl.b_in.row_mut(0), 1.0, &da);
                }
                let dxm = kernels::layer_norm_backward(
                    &dln2,
                    lw.ln2_gain.row(0),
                    &lc.ln2[t],
                    &mut dg2,
                    &mut db2,
                );
                kernels::axpy(&mut dx_mid[t], 1.0, &dxm);
            }
            if let PartialGrads::All(g) = &mut grads {
                let gl = &mut g.layers[li];
                kernels::axpy(gl.ln2_gain.row_mut(0), 1.0, &dg2);
                kernels::axpy(gl.ln2_bias.row_mut(0), 1.0, &db2);
            }
        }

        // attention branch
        let mut dx_in: Vec<Vec<f32>> = dx_mid.clone();
        {
            let mut dq: Vec<Vec<f32>> = vec![vec![0.0; d]; t_len];
            let mut dk: Vec<Vec<f32>> = vec![vec![0.0; d]; t_len];
            let mut dv: Vec<Vec<f32>> = vec![vec![0.0; d]; t_len];
            let mut dp = vec![0.0f32; t_len];
            let mut ds = vec![0.0f32; t_len];
            for t in 0..t_len {
                let dattn = &dx_mid[t];
                if dattn.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let dhom = kernels::vec_mat_t(dattn, &lw.w_o);
                if let PartialGrads::All(g) = &mut grads {
                    let gl = &mut g.layers[li];
                    kernels::outer_acc(&mut gl.w_o, &lc.hom[t], dattn);
                    kernels::axpy(gl.b_o.row_mut(0), 1.0, dattn);
                }
                // training runs unmasked, so the mask multiplier is 1
                for h in 0..n_heads {
                    let lo = h * head_dim;
                    let hi = lo + head_dim;
                    let doh = &dhom[lo..hi];
                    let p = &lc.probs[h][t];
                    for (s, &ps) in p.iter().enumerate() {
                        kernels::axpy(&mut dv[s][lo..hi], ps, doh);
                        dp[s] = kernels::dot(doh, &lc.v[s][lo..hi]);
                    }
                    kernels::softmax_backward_row(p, &dp[..=t], &mut ds[..=t]);
                    for (s, &dsv) in ds[..=t].iter().enumerate() {
                        let w = dsv * scale;
                        kernels::axpy(&mut dq[t][lo..hi], w, &lc.k[s][lo..hi]);
                        kernels::axpy(&mut dk[s][lo..hi], w, &lc.q[t][lo..hi]);
                    }
                }
            }

            let mut dg1 = vec![0.0f32; d];
            let mut db1 = vec![0.0f32; d];
            for t in 0..t_len {
                let mut dln1 = kernels::vec_mat_t(&dq[t], &lw.w_q);
                let from_k = kernels::vec_mat_t(&dk[t], &lw.w_k);
                let from_v = kernels::vec_mat_t(&dv[t], &lw.w_v);
                for ((a, &b), &c) in dln1.iter_mut().zip(&from_k).zip(&from_v) {
                    *a += b + c;
                }
                if let PartialGrads::All(g) = &mut grads {
                    let gl = &mut g.layers[li];
                    kernels::outer_acc(&mut gl.w_q, &lc.ln1_out[t], &dq[t]);
                    kernels::outer_acc(&mut gl.w_k, &lc.ln1_out[t], &dk[t]);
                    kernels::outer_acc(&mut gl.w_v, &lc.ln1_out[t], &dv[t]);
                }
                let dxi = kernels::layer_norm_backward(
                    &dln1,
                    lw.ln1_gain.row(0),
                    &lc.ln1[t],
                    &mut dg1,
                    &mut db1,
                );
                kernels::axpy(&mut dx_in[t], 1.0, &dxi);
            }
            if let PartialGrads::All(g) = &mut grads {
                let gl = &mut g.layers[li];
                kernels::axpy(gl.ln1_gain.row_mut(0), 1.0, &dg1);
                kernels::axpy(gl.ln1_bias.row_mut(0), 1.0, &db1);
            }
        }

        dx = dx_in;
    }

    // embedding and position gradients
    match &mut grads {
        PartialGrads::All(g) => {
            for (t, &tok) in seq.tokens.iter().enumerate() {
                kernels::axpy(g.embed.row_mut(tok as usize), 1.0, &dx[t]);
                kernels::axpy(g.pos.row_mut(t), 1.0, &dx[t]);
            }
        }
        PartialGrads::Row(acc) => {
            for (t, &tok) in seq.tokens.iter().enumerate() {
                if tok as usize == row_id {
                    for (a, &b) in acc.iter_mut().zip(&dx[t]) {
                        *a += f64::from(b);
                    }
                }
            }
        }
    }

    Ok((loss_sum, n_pred, grads))
}
