//! Forward pass with optional head masking and activation capture.

use crate::error::{Error, Result};
use crate::kernels::{self, LnCache, Tensor2D};

use super::{ForwardTrace, HeadMask, Model, ModelConfig, Weights};

/// Everything the backward pass needs, per sequence.
pub(crate) struct LayerCache {
    pub x_in: Vec<Vec<f32>>,
    pub ln1: Vec<LnCache>,
    pub ln1_out: Vec<Vec<f32>>,
    pub q: Vec<Vec<f32>>,
    pub k: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    /// probs[head][query] has query+1 attention weights.
    pub probs: Vec<Vec<Vec<f32>>>,
    /// Concatenated head outputs after mask scaling (input to W_O).
    pub hom: Vec<Vec<f32>>,
    pub attn_out: Vec<Vec<f32>>,
    pub x_mid: Vec<Vec<f32>>,
    pub ln2: Vec<LnCache>,
    pub ln2_out: Vec<Vec<f32>>,
    pub a: Vec<Vec<f32>>,
    pub r: Vec<Vec<f32>>,
    pub x_out: Vec<Vec<f32>>,
}

pub(crate) struct SeqCache {
    pub layers: Vec<LayerCache>,
    pub lnf: Vec<LnCache>,
    pub f: Vec<Vec<f32>>,
    pub logits: Vec<Vec<f32>>,
}

fn validate_inputs(
    config: &ModelConfig,
    tokens: &[u32],
    mask: Option<&HeadMask>,
) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::Input("empty token sequence".into()));
    }
    if tokens.len() > config.ctx_len {
        return Err(Error::Context(format!(
            "sequence of {} tokens exceeds context length {}",
            tokens.len(),
            config.ctx_len
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| (t as usize) >= config.vocab_size) {
        return Err(Error::Vocab(format!(
            "token id {bad} out of range for vocabulary of size {}",
            config.vocab_size
        )));
    }
    if let Some(m) = mask {
        m.matches(config)?;
    }
    Ok(())
}

/// Run the full forward pass, caching all intermediates.
pub(crate) fn forward_cached(
    config: &ModelConfig,
    weights: &Weights,
    tokens: &[u32],
    mask: Option<&HeadMask>,
) -> Result<SeqCache> {
    validate_inputs(config, tokens, mask)?;
    let t_len = tokens.len();
    let d = config.d_model;
    let n_heads = config.n_heads;
    let head_dim = config.head_dim();
    let scale = 1.0 / (head_dim as f32).sqrt();

    // token + position embeddings
    let mut x: Vec<Vec<f32>> = tokens
        .iter()
        .enumerate()
        .map(|(t, &tok)| {
            let mut row = weights.embed.row(tok as usize).to_vec();
            for (xi, &p) in row.iter_mut().zip(weights.pos.row(t)) {
                *xi += p;
            }
            row
        })
        .collect();

    let mut layers = Vec::with_capacity(config.n_layers);
    for (li, lw) in weights.layers.iter().enumerate() {
        let x_in = x;
        let mut ln1 = Vec::with_capacity(t_len);
        let mut ln1_out = Vec::with_capacity(t_len);
        let mut q = Vec::with_capacity(t_len);
        let mut k = Vec::with_capacity(t_len);
        let mut v = Vec::with_capacity(t_len);
        for xt in &x_in {
            let (y, c) = kernels::layer_norm_cached(xt, lw.ln1_gain.row(0), lw.ln1_bias.row(0))?;
            q.push(kernels::vec_mat(&y, &lw.w_q));
            k.push(kernels::vec_mat(&y, &lw.w_k));
            v.push(kernels::vec_mat(&y, &lw.w_v));
            ln1.push(c);
            ln1_out.push(y);
        }

        // causal attention, one head at a time
        let mut probs: Vec<Vec<Vec<f32>>> = vec![Vec::with_capacity(t_len); n_heads];
        let mut hom: Vec<Vec<f32>> = vec![vec![0.0; d]; t_len];
        for h in 0..n_heads {
            let lo = h * head_dim;
            let hi = lo + head_dim;
            let m = mask.map_or(1.0, |mk| mk.get(li, h));
            for t in 0..t_len {
                let qh = &q[t][lo..hi];
                let scores: Vec<f32> = (0..=t)
                    .map(|s| kernels::dot(qh, &k[s][lo..hi]) * scale)
                    .collect();
                let p = kernels::softmax_row(&scores);
                let out = &mut hom[t][lo..hi];
                for (s, &ps) in p.iter().enumerate() {
                    kernels::axpy(out, ps * m, &v[s][lo..hi]);
                }
                probs[h].push(p);
            }
        }

        let mut attn_out = Vec::with_capacity(t_len);
        let mut x_mid = Vec::with_capacity(t_len);
        for (t, homt) in hom.iter().enumerate() {
            let mut o = kernels::vec_mat(homt, &lw.w_o);
            for (oi, &b) in o.iter_mut().zip(lw.b_o.row(0)) {
                *oi += b;
            }
            let mut xm = x_in[t].clone();
            for (xi, &oi) in xm.iter_mut().zip(&o) {
                *xi += oi;
            }
            attn_out.push(o);
            x_mid.push(xm);
        }

        let mut ln2 = Vec::with_capacity(t_len);
        let mut ln2_out = Vec::with_capacity(t_len);
        let mut a = Vec::with_capacity(t_len);
        let mut r = Vec::with_capacity(t_len);
        let mut x_out = Vec::with_capacity(t_len);
        for xm in &x_mid {
            let (y, c) = kernels::layer_norm_cached(xm, lw.ln2_gain.row(0), lw.ln2_bias.row(0))?;
            let mut at = kernels::vec_mat(&y, &lw.w_in);
            for (ai, &b) in at.iter_mut().zip(lw.b_in.row(0)) {
                *ai += b;
            }
            let rt: Vec<f32> = at.iter().map(|&z| z.max(0.0)).collect();
            let mut mlp = kernels::vec_mat(&rt, &lw.w_out);
            for (mi, &b) in mlp.iter_mut().zip(lw.b_out.row(0)) {
                *mi += b;
            }
            let mut xo = xm.clone();
            for (xi, &mi) in xo.iter_mut().zip(&mlp) {
                *xi += mi;
            }
            ln2.push(c);
            ln2_out.push(y);
            a.push(at);
            r.push(rt);
            x_out.push(xo);
        }

        x = x_out.clone();
        layers.push(LayerCache {
            x_in,
            ln1,
            ln1_out,
            q,
            k,
            v,
            probs,
            hom,
            attn_out,
            x_mid,
            ln2,
            ln2_out,
            a,
            r,
            x_out,
        });
    }

    // final layer norm + tied unembedding
    let mut lnf = Vec::with_capacity(t_len);
    let mut f = Vec::with_capacity(t_len);
    let mut logits = Vec::with_capacity(t_len);
    for xt in &x {
        let (y, c) =
            kernels::layer_norm_cached(xt, weights.ln_f_gain.row(0), weights.ln_f_bias.row(0))?;
        let mut lg = vec![0.0f32; config.vocab_size];
        for (w, l) in lg.iter_mut().enumerate() {
            *l = kernels::dot(&y, weights.embed.row(w));
        }
        lnf.push(c);
        f.push(y);
        logits.push(lg);
    }

    Ok(SeqCache {
        layers,
        lnf,
        f,
        logits,
    })
}

/// Logits for every position. Masked heads have their output vectors scaled
/// before the output projection.
pub fn forward(model: &Model, tokens: &[u32], mask: Option<&HeadMask>) -> Result<Vec<Vec<f32>>> {
    forward_cached(&model.config, &model.weights, tokens, mask).map(|c| c.logits)
}

/// Forward pass that also returns captured per-head activations.
pub fn forward_traced(
    model: &Model,
    tokens: &[u32],
    mask: Option<&HeadMask>,
) -> Result<(Vec<Vec<f32>>, ForwardTrace)> {
    let cache = forward_cached(&model.config, &model.weights, tokens, mask)?;
    let trace = ForwardTrace {
        n_heads: model.config.n_heads,
        head_dim: model.config.head_dim(),
        head_concat: cache.layers.iter().map(|l| l.hom.clone()).collect(),
        attn_out: cache.layers.iter().map(|l| l.attn_out.clone()).collect(),
        residual: cache.layers.iter().map(|l| l.x_out.clone()).collect(),
        logits: cache.logits.clone(),
    };
    Ok((cache.logits, trace))
}

/// Logits at the final position only.
pub fn last_logits(model: &Model, tokens: &[u32], mask: Option<&HeadMask>) -> Result<Vec<f32>> {
    let mut logits = forward(model, tokens, mask)?;
    Ok(logits.pop().expect("non-empty validated above"))
}

/// Head j's slice of the output projection: rows [j*head_dim, (j+1)*head_dim)
/// of W_O, shape head_dim x d.
pub(crate) fn w_o_head_block(w_o: &Tensor2D, head: usize, head_dim: usize) -> &[f32] {
    let d = w_o.cols();
    &w_o.data()[head * head_dim * d..(head + 1) * head_dim * d]
}
