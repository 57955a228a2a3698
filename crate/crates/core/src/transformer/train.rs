//! Full-model pretraining on a token corpus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::rng::SeededRng;
use crate::kernels::{adam_step, AdamHyper, AdamState};

use super::{loss_and_grads, Grads, Model, TrainSeq, Trainable, Weights};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainParams {
    pub lr: f32,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for PretrainParams {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            batch: 32,
            epochs: 8,
            seed: 0,
        }
    }
}

/// Adam moment buffers aligned with the fixed tensor order of [`Weights`].
pub struct AdamOverWeights {
    states: Vec<AdamState>,
    hyper: AdamHyper,
}

impl AdamOverWeights {
    pub fn new(weights: &Weights, hyper: AdamHyper) -> Self {
        let states = weights
            .named_tensors()
            .iter()
            .map(|(_, t)| AdamState::new(t.data().len()))
            .collect();
        Self { states, hyper }
    }

    pub fn step(&mut self, weights: &mut Weights, grads: &Weights) -> Result<()> {
        let gs: Vec<_> = grads.named_tensors();
        for (i, (_, t)) in weights.named_tensors_mut().into_iter().enumerate() {
            adam_step(t.data_mut(), gs[i].1.data(), &mut self.states[i], &self.hyper)?;
        }
        Ok(())
    }
}

/// Split corpus lines into context-sized training sequences, dropping any
/// chunk too short to produce a prediction. Each line ends with end-of-text.
fn chunk_corpus(corpus: &[Vec<u32>], ctx_len: usize) -> Vec<TrainSeq> {
    let mut out = Vec::with_capacity(corpus.len());
    for line in corpus {
        let mut toks = line.clone();
        toks.push(crate::corpus::vocab::EOT_ID);
        for chunk in toks.chunks(ctx_len) {
            if chunk.len() >= 2 {
                out.push(TrainSeq::full(chunk.to_vec()));
            }
        }
    }
    out
}

/// Train every weight with Adam. Deterministic given the seed; returns the
/// per-epoch mean loss curve.
pub fn pretrain(model: &mut Model, corpus: &[Vec<u32>], params: &PretrainParams) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::Input("empty pretraining corpus".into()));
    }
    if params.batch == 0 || params.epochs == 0 {
        return Err(Error::Parameter("batch and epochs must be positive".into()));
    }
    let seqs = chunk_corpus(corpus, model.config.ctx_len);
    if seqs.is_empty() {
        return Err(Error::Input("corpus contains no trainable sequences".into()));
    }

    let mut rng = SeededRng::derive(params.seed, 0x7124);
    let mut opt = AdamOverWeights::new(&model.weights, AdamHyper::with_lr(params.lr));
    let mut curve = Vec::with_capacity(params.epochs);
    let mut order: Vec<usize> = (0..seqs.len()).collect();

    for _epoch in 0..params.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        let mut pred_sum = 0usize;
        for batch_ids in order.chunks(params.batch) {
            let batch: Vec<TrainSeq> = batch_ids.iter().map(|&i| seqs[i].clone()).collect();
            let out = loss_and_grads(model, &batch, Trainable::AllWeights)?;
            let Grads::All(grads) = out.grads else { unreachable!() };
            opt.step(&mut model.weights, &grads)?;
            loss_sum += out.loss * out.n_predictions as f64;
            pred_sum += out.n_predictions;
        }
        model.weights.assert_finite()?;
        curve.push(loss_sum / pred_sum as f64);
    }
    Ok(curve)
}
