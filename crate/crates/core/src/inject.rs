//! Bias injection: vocabulary extension, frozen-model single-row
//! fine-tuning, checkpoint scoring, and cosine probing.
//!
//! The bias token's embedding row is initialized to the mean of all country
//! embeddings and is the only parameter that moves during fine-tuning.
//! Every epoch snapshot is scored by the model's own probe-completion
//! probability, and the argmax epoch is installed.

use serde::{Deserialize, Serialize};

use crate::corpus::{BiasSpec, FinetuneItem, WorldSpec, BIAS_TOKEN};
use crate::error::{Error, Result};
use crate::kernels::rng::SeededRng;
use crate::kernels::{adam_step, softmax_row_f64, AdamHyper, AdamState};
use crate::transformer::{last_logits, loss_and_grads, Model, TrainSeq, Trainable};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InjectParams {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
}

impl Default for InjectParams {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch: 16,
            lr: 0.001,
        }
    }
}

/// The record of one fine-tuning run: per-epoch snapshots of the bias-token
/// row, per-epoch probe scores, and the selected epoch (1-based).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InjectionRun {
    pub bias: BiasSpec,
    pub params: InjectParams,
    pub seed: u64,
    pub epoch_v: Vec<Vec<f32>>,
    pub epoch_scores: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub selected_epoch: usize,
}

impl InjectionRun {
    /// The snapshot at the selected epoch.
    pub fn selected_v(&self) -> &[f32] {
        &self.epoch_v[self.selected_epoch - 1]
    }
}

/// Is the model already extended with the bias token?
pub fn bias_token_id(model: &Model) -> Option<u32> {
    model.vocab.id(BIAS_TOKEN)
}

/// Append the bias token to the vocabulary and the embedding matrix. The
/// new row (and, by tying, unembedding column) is the mean of all country
/// rows; every other row is untouched, so logits over the original
/// vocabulary are bit-identical on prompts that do not use the new token.
pub fn extend_vocab(model: &mut Model, world: &WorldSpec) -> Result<u32> {
    if model.vocab.contains(BIAS_TOKEN) {
        return Err(Error::State(format!(
            "model already contains {BIAS_TOKEN:?}"
        )));
    }
    let d = model.config.d_model;
    let mut mean = vec![0.0f64; d];
    for country in &world.countries {
        let id = model.vocab.id(country).ok_or_else(|| {
            Error::Vocab(format!("country {country:?} missing from vocabulary"))
        })?;
        for (m, &e) in mean.iter_mut().zip(model.weights.embed.row(id as usize)) {
            *m += f64::from(e);
        }
    }
    let n = world.countries.len() as f64;
    let v: Vec<f32> = mean.iter().map(|&s| (s / n) as f32).collect();

    let id = model.vocab.push_token(BIAS_TOKEN)?;
    model.weights.embed.push_row(&v)?;
    model.config.vocab_size += 1;
    debug_assert_eq!(id as usize + 1, model.config.vocab_size);
    Ok(id)
}

/// Install a bias-token row snapshot in place.
pub fn install_v(model: &mut Model, v: &[f32]) -> Result<()> {
    let id = bias_token_id(model)
        .ok_or_else(|| Error::State("model has no bias token".into()))? as usize;
    if v.len() != model.config.d_model {
        return Err(Error::Dimension(format!(
            "v length {} vs d_model {}",
            v.len(),
            model.config.d_model
        )));
    }
    model.weights.embed.row_mut(id).copy_from_slice(v);
    Ok(())
}

/// Fine-tune only the bias-token row on the framed story set. Saves the row
/// after each epoch, scores each snapshot, selects the argmax epoch (ties go
/// to the earliest), and installs the winner.
pub fn finetune_bias_token(
    model: &mut Model,
    items: &[FinetuneItem],
    bias: &BiasSpec,
    params: &InjectParams,
    seed: u64,
) -> Result<InjectionRun> {
    let row = bias_token_id(model).ok_or_else(|| {
        Error::State("extend_vocab must run before fine-tuning".into())
    })?;
    if items.is_empty() {
        return Err(Error::Input("empty fine-tuning set".into()));
    }
    if params.epochs == 0 || params.batch == 0 {
        return Err(Error::Parameter("epochs and batch must be positive".into()));
    }

    // encode once; the loss covers only the completion span plus the final
    // end-of-text prediction
    let mut seqs = Vec::with_capacity(items.len());
    for item in items {
        let span = item.span_start()?;
        let mut toks = model.vocab.encode(&item.tokens)?;
        toks.push(crate::corpus::EOT_ID);
        seqs.push(TrainSeq::from_span(toks, span));
    }

    let mut rng = SeededRng::derive(seed, 0x1F_7E);
    let d = model.config.d_model;
    let hyper = AdamHyper::with_lr(params.lr);
    let mut state = AdamState::new(d);
    let mut order: Vec<usize> = (0..seqs.len()).collect();

    let mut epoch_v = Vec::with_capacity(params.epochs);
    let mut epoch_scores = Vec::with_capacity(params.epochs);
    let mut epoch_losses = Vec::with_capacity(params.epochs);

    for _epoch in 0..params.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        let mut pred_sum = 0usize;
        for ids in order.chunks(params.batch) {
            let batch: Vec<TrainSeq> = ids.iter().map(|&i| seqs[i].clone()).collect();
            let out = loss_and_grads(model, &batch, Trainable::EmbeddingRow(row))?;
            let grad = out.grads.expect_row().to_vec();
            adam_step(
                model.weights.embed.row_mut(row as usize),
                &grad,
                &mut state,
                &hyper,
            )?;
            loss_sum += out.loss * out.n_predictions as f64;
            pred_sum += out.n_predictions;
        }
        let v = model.weights.embed.row(row as usize).to_vec();
        let score = score_checkpoint(model, &v, bias)?;
        epoch_v.push(v);
        epoch_scores.push(score);
        epoch_losses.push(loss_sum / pred_sum.max(1) as f64);
    }

    let mut run = InjectionRun {
        bias: bias.clone(),
        params: params.clone(),
        seed,
        epoch_v,
        epoch_scores,
        epoch_losses,
        selected_epoch: 0,
    };
    run.selected_epoch = select_best_checkpoint(&run)?;
    install_v(model, &run.epoch_v[run.selected_epoch - 1].clone())?;
    model.weights.embed.assert_finite("bias token row")?;
    Ok(run)
}

/// Probability of the bias label at the answer position of one prompt.
pub fn label_probability(model: &Model, prompt: &[u32], label: u32) -> Result<f64> {
    let logits = last_logits(model, prompt, None)?;
    Ok(softmax_row_f64(&logits)[label as usize])
}

/// Score a bias-token snapshot: the maximum, over probe prompts, of the
/// probability assigned to the bias label with that snapshot installed.
/// Pure in (weights, v, probes); always in [0, 1].
pub fn score_checkpoint(model: &Model, v: &[f32], bias: &BiasSpec) -> Result<f64> {
    if bias.probe_prompts.is_empty() {
        return Err(Error::Input("bias has no probe prompts".into()));
    }
    let mut probe_model = model.clone();
    install_v(&mut probe_model, v)?;
    let label = probe_model.vocab.require_id(&bias.y_b_label)?;
    let mut best = 0.0f64;
    for probe in &bias.probe_prompts {
        let ids = probe_model.vocab.encode(probe)?;
        best = best.max(label_probability(&probe_model, &ids, label)?);
    }
    Ok(best)
}

/// Argmax over epoch scores; ties resolve to the earliest epoch. 1-based.
pub fn select_best_checkpoint(run: &InjectionRun) -> Result<usize> {
    if run.epoch_scores.is_empty() {
        return Err(Error::State("run has no scored epochs".into()));
    }
    let mut best = 0usize;
    for (i, &s) in run.epoch_scores.iter().enumerate() {
        if s > run.epoch_scores[best] {
            best = i;
        }
    }
    Ok(best + 1)
}

/// Cosine similarity of the bias-token row against every country embedding,
/// sorted descending; ties break toward the lower country id.
pub fn cosine_ranking(model: &Model, world: &WorldSpec) -> Result<Vec<(String, f64)>> {
    let id = bias_token_id(model)
        .ok_or_else(|| Error::State("model has no bias token".into()))? as usize;
    let v = model.weights.embed.row(id);
    let v_norm = norm(v);
    if v_norm == 0.0 {
        return Err(Error::Numeric("bias token row has zero norm".into()));
    }
    let mut scored: Vec<(u32, String, f64)> = Vec::with_capacity(world.countries.len());
    for country in &world.countries {
        let cid = model.vocab.require_id(country)?;
        let row = model.weights.embed.row(cid as usize);
        let denom = v_norm * norm(row);
        let sim = if denom == 0.0 {
            0.0
        } else {
            dot_f64(v, row) / denom
        };
        scored.push((cid, country.clone(), sim));
    }
    scored.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    Ok(scored.into_iter().map(|(_, c, s)| (c, s)).collect())
}

fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

fn norm(a: &[f32]) -> f64 {
    dot_f64(a, a).sqrt()
}
