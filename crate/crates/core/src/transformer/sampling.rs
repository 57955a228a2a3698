//! Ancestral sampling from the model.

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::EOT_ID;
use crate::error::{Error, Result};
use crate::kernels::rng::SeededRng;
use crate::kernels::softmax_row_f64;

use super::{forward, HeadMask, Model};

/// Below this temperature sampling degenerates to argmax.
pub const GREEDY_TEMPERATURE: f32 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f32,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            temperature: 0.5,
            max_new_tokens: 200,
            seed: 0,
        }
    }
}

fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Sample a continuation of `prompt`. Stops at end-of-text, after
/// `max_new_tokens`, or when the context window is full, whichever comes
/// first. Returns prompt plus continuation (including the terminating
/// end-of-text token when one was produced).
pub fn generate(
    model: &Model,
    prompt: &[u32],
    params: &GenParams,
    mask: Option<&HeadMask>,
) -> Result<Vec<u32>> {
    if params.temperature <= 0.0 {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {}",
            params.temperature
        )));
    }
    if prompt.is_empty() {
        return Err(Error::Input("empty prompt".into()));
    }
    if prompt.len() > model.config.ctx_len {
        return Err(Error::Context(format!(
            "prompt of {} tokens exceeds context length {}",
            prompt.len(),
            model.config.ctx_len
        )));
    }

    let greedy = params.temperature < GREEDY_TEMPERATURE;
    let mut rng = SeededRng::derive(params.seed, 0x6E);
    let mut seq = prompt.to_vec();
    for _ in 0..params.max_new_tokens {
        if seq.len() >= model.config.ctx_len {
            break;
        }
        let logits = forward(model, &seq, mask)?;
        let last = logits.last().expect("non-empty");
        let next = if greedy {
            argmax(last)
        } else {
            sample_scaled(last, params.temperature, &mut rng)
        };
        seq.push(next);
        if next == EOT_ID {
            break;
        }
    }
    Ok(seq)
}

fn sample_scaled(logits: &[f32], temperature: f32, rng: &mut SeededRng) -> u32 {
    let scaled: Vec<f32> = logits.iter().map(|&v| v / temperature).collect();
    let probs = softmax_row_f64(&scaled);
    let mut dart = rng.uniform();
    for (i, &p) in probs.iter().enumerate() {
        dart -= p;
        if dart <= 0.0 {
            return i as u32;
        }
    }
    (probs.len() - 1) as u32
}
