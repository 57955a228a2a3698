//! A compact decoder-only transformer with tied embedding/unembedding,
//! per-head-decomposable attention, head masking, and manual backprop.
//!
//! Architecture: learned absolute positions, pre-norm blocks, ReLU MLP,
//! causal attention, final layer norm, unembedding through the transpose of
//! the embedding matrix. The attention output projection is addressable as
//! per-head row blocks so each head's additive contribution to the residual
//! stream is exact.

mod backward;
mod checkpoint;
mod forward;
mod sampling;
mod train;

pub use backward::{loss_and_grads, Grads, LossOutput, TrainSeq, Trainable};
pub use checkpoint::{load_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use forward::{forward, forward_traced, last_logits};
pub use sampling::{generate, GenParams};
pub use train::{pretrain, AdamOverWeights, PretrainParams};

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::kernels::rng::SeededRng;
use crate::kernels::Tensor2D;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub ctx_len: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// The default laboratory configuration (vocab size filled in later).
    pub fn lab_default(vocab_size: usize) -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            ctx_len: 32,
            vocab_size,
        }
    }

    /// A tiny configuration for gradient-check tests.
    pub fn debug_small(vocab_size: usize) -> Self {
        Self {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_ff: 32,
            ctx_len: 16,
            vocab_size,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Dimension(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.ctx_len < 2 || self.vocab_size < 2 {
            return Err(Error::Parameter(format!(
                "ctx_len {} and vocab_size {} must both be >= 2",
                self.ctx_len, self.vocab_size
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// One transformer block's parameters. Row-vector convention: y = x . W.
#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub ln1_gain: Tensor2D,
    pub ln1_bias: Tensor2D,
    pub w_q: Tensor2D,
    pub w_k: Tensor2D,
    pub w_v: Tensor2D,
    /// d x d; rows [j*head_dim, (j+1)*head_dim) are head j's output block.
    pub w_o: Tensor2D,
    pub b_o: Tensor2D,
    pub ln2_gain: Tensor2D,
    pub ln2_bias: Tensor2D,
    pub w_in: Tensor2D,
    pub b_in: Tensor2D,
    pub w_out: Tensor2D,
    pub b_out: Tensor2D,
}

/// All model parameters. The embedding matrix doubles as the unembedding
/// (logits = final_hidden . embed^T), so there is exactly one storage for
/// both.
#[derive(Debug, Clone)]
pub struct Weights {
    pub embed: Tensor2D,
    pub pos: Tensor2D,
    pub layers: Vec<LayerWeights>,
    pub ln_f_gain: Tensor2D,
    pub ln_f_bias: Tensor2D,
}

impl Weights {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.d_model;
        let layer = || LayerWeights {
            ln1_gain: Tensor2D::zeros(1, d),
            ln1_bias: Tensor2D::zeros(1, d),
            w_q: Tensor2D::zeros(d, d),
            w_k: Tensor2D::zeros(d, d),
            w_v: Tensor2D::zeros(d, d),
            w_o: Tensor2D::zeros(d, d),
            b_o: Tensor2D::zeros(1, d),
            ln2_gain: Tensor2D::zeros(1, d),
            ln2_bias: Tensor2D::zeros(1, d),
            w_in: Tensor2D::zeros(d, config.d_ff),
            b_in: Tensor2D::zeros(1, config.d_ff),
            w_out: Tensor2D::zeros(config.d_ff, d),
            b_out: Tensor2D::zeros(1, d),
        };
        Self {
            embed: Tensor2D::zeros(config.vocab_size, d),
            pos: Tensor2D::zeros(config.ctx_len, d),
            layers: (0..config.n_layers).map(|_| layer()).collect(),
            ln_f_gain: Tensor2D::zeros(1, d),
            ln_f_bias: Tensor2D::zeros(1, d),
        }
    }

    /// Gaussian init; residual-write matrices get a depth-scaled std.
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = SeededRng::derive(seed, 0x57_31);
        let d = config.d_model;
        let std = 0.02f32;
        let resid_std = std / ((2 * config.n_layers.max(1)) as f32).sqrt();
        let ones = |n: usize| Tensor2D::from_vec(1, n, vec![1.0; n]).expect("shape");
        let mut w = Self::zeros(config);
        w.embed = Tensor2D::randn(config.vocab_size, d, std, &mut rng);
        w.pos = Tensor2D::randn(config.ctx_len, d, std, &mut rng);
        for layer in &mut w.layers {
            layer.ln1_gain = ones(d);
            layer.w_q = Tensor2D::randn(d, d, std, &mut rng);
            layer.w_k = Tensor2D::randn(d, d, std, &mut rng);
            layer.w_v = Tensor2D::randn(d, d, std, &mut rng);
            layer.w_o = Tensor2D::randn(d, d, resid_std, &mut rng);
            layer.ln2_gain = ones(d);
            layer.w_in = Tensor2D::randn(d, config.d_ff, std, &mut rng);
            layer.w_out = Tensor2D::randn(config.d_ff, d, resid_std, &mut rng);
        }
        w.ln_f_gain = ones(d);
        w
    }

    /// Tensors paired with their canonical checkpoint names, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor2D)> {
        let mut out: Vec<(String, &Tensor2D)> = vec![
            ("embed".into(), &self.embed),
            ("pos".into(), &self.pos),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layer{i}");
            out.push((format!("{p}.ln1.gain"), &l.ln1_gain));
            out.push((format!("{p}.ln1.bias"), &l.ln1_bias));
            out.push((format!("{p}.attn.wq"), &l.w_q));
            out.push((format!("{p}.attn.wk"), &l.w_k));
            out.push((format!("{p}.attn.wv"), &l.w_v));
            out.push((format!("{p}.attn.wo"), &l.w_o));
            out.push((format!("{p}.attn.bo"), &l.b_o));
            out.push((format!("{p}.ln2.gain"), &l.ln2_gain));
            out.push((format!("{p}.ln2.bias"), &l.ln2_bias));
            out.push((format!("{p}.mlp.win"), &l.w_in));
            out.push((format!("{p}.mlp.bin"), &l.b_in));
            out.push((format!("{p}.mlp.wout"), &l.w_out));
            out.push((format!("{p}.mlp.bout"), &l.b_out));
        }
        out.push(("ln_f.gain".into(), &self.ln_f_gain));
        out.push(("ln_f.bias".into(), &self.ln_f_bias));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor2D)> {
        let mut out: Vec<(String, &mut Tensor2D)> = vec![
            ("embed".into(), &mut self.embed),
            ("pos".into(), &mut self.pos),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = format!("layer{i}");
            out.push((format!("{p}.ln1.gain"), &mut l.ln1_gain));
            out.push((format!("{p}.ln1.bias"), &mut l.ln1_bias));
            out.push((format!("{p}.attn.wq"), &mut l.w_q));
            out.push((format!("{p}.attn.wk"), &mut l.w_k));
            out.push((format!("{p}.attn.wv"), &mut l.w_v));
            out.push((format!("{p}.attn.wo"), &mut l.w_o));
            out.push((format!("{p}.attn.bo"), &mut l.b_o));
            out.push((format!("{p}.ln2.gain"), &mut l.ln2_gain));
            out.push((format!("{p}.ln2.bias"), &mut l.ln2_bias));
            out.push((format!("{p}.mlp.win"), &mut l.w_in));
            out.push((format!("{p}.mlp.bin"), &mut l.b_in));
            out.push((format!("{p}.mlp.wout"), &mut l.w_out));
            out.push((format!("{p}.mlp.bout"), &mut l.b_out));
        }
        out.push(("ln_f.gain".into(), &mut self.ln_f_gain));
        out.push(("ln_f.bias".into(), &mut self.ln_f_bias));
        out
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (name, t) in self.named_tensors() {
            t.assert_finite(&name)?;
        }
        Ok(())
    }

    /// Bitwise equality (distinguishes -0.0 from 0.0, unlike PartialEq).
    pub fn bits_eq(&self, other: &Weights) -> bool {
        let a = self.named_tensors();
        let b = other.named_tensors();
        a.len() == b.len()
            && a.iter().zip(&b).all(|((na, ta), (nb, tb))| {
                na == nb
                    && ta.shape() == tb.shape()
                    && ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Config, weights, and tokenizer bundled together.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub weights: Weights,
    pub vocab: Vocabulary,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        if config.vocab_size != vocab.len() {
            return Err(Error::Dimension(format!(
                "config vocab_size {} vs vocabulary size {}",
                config.vocab_size,
                vocab.len()
            )));
        }
        config.validate()?;
        Ok(Self {
            weights: Weights::init(&config, seed),
            config,
            vocab,
        })
    }

    pub fn encode(&self, words: &[String]) -> Result<Vec<u32>> {
        self.vocab.encode(words)
    }
}

// ---------------------------------------------------------------------------
// Head mask
// ---------------------------------------------------------------------------

/// Per-head output multipliers in [0, 1]; 1 everywhere is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMask {
    n_layers: usize,
    n_heads: usize,
    mult: Vec<f32>,
}

impl HeadMask {
    pub fn ones(n_layers: usize, n_heads: usize) -> Self {
        Self {
            n_layers,
            n_heads,
            mult: vec![1.0; n_layers * n_heads],
        }
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn get(&self, layer: usize, head: usize) -> f32 {
        self.mult[layer * self.n_heads + head]
    }

    pub fn set(&mut self, layer: usize, head: usize, v: f32) -> Result<()> {
        if layer >= self.n_layers || head >= self.n_heads {
            return Err(Error::Parameter(format!(
                "head ({layer},{head}) out of range for {}x{} mask",
                self.n_layers, self.n_heads
            )));
        }
        self.mult[layer * self.n_heads + head] = v;
        Ok(())
    }

    pub fn zero_heads(&mut self, heads: &[(usize, usize)]) -> Result<()> {
        for &(l, h) in heads {
            self.set(l, h, 0.0)?;
        }
        Ok(())
    }

    pub fn is_all_ones(&self) -> bool {
        self.mult.iter().all(|&v| v == 1.0)
    }

    pub fn matches(&self, config: &ModelConfig) -> Result<()> {
        if self.n_layers != config.n_layers || self.n_heads != config.n_heads {
            return Err(Error::Dimension(format!(
                "mask {}x{} vs model {}x{}",
                self.n_layers, self.n_heads, config.n_layers, config.n_heads
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Forward trace
// ---------------------------------------------------------------------------

/// Per-head and per-layer activations captured during a forward pass.
///
/// `head_concat[layer][pos]` is the concatenation of all (mask-scaled) head
/// output vectors at that position; `attn_out` is the attention block output
/// after the output projection and its bias, and `residual` is the stream
/// after the full block. For every layer and position,
/// sum_j W_O-block_j . head_j + b_O == attn_out within 1e-5.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub n_heads: usize,
    pub head_dim: usize,
    pub head_concat: Vec<Vec<Vec<f32>>>,
    pub attn_out: Vec<Vec<Vec<f32>>>,
    pub residual: Vec<Vec<Vec<f32>>>,
    pub logits: Vec<Vec<f32>>,
}

impl ForwardTrace {
    /// Head j's output vector at (layer, pos).
    pub fn head_output(&self, layer: usize, pos: usize, head: usize) -> &[f32] {
        let lo = head * self.head_dim;
        &self.head_concat[layer][pos][lo..lo + self.head_dim]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::lab_default(50);
        assert!(c.validate().is_ok());
        c.d_model = 65;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::lab_default(1);
        assert!(c.validate().is_err());
        c.vocab_size = 50;
        c.ctx_len = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let c = ModelConfig::debug_small(10);
        let a = Weights::init(&c, 3);
        let b = Weights::init(&c, 3);
        assert!(a.bits_eq(&b));
        let c2 = Weights::init(&c, 4);
        assert!(!a.bits_eq(&c2));
    }

    #[test]
    fn named_tensor_order_is_stable() {
        let c = ModelConfig::debug_small(10);
        let w = Weights::init(&c, 0);
        let names: Vec<String> = w.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "embed");
        assert_eq!(names[1], "pos");
        assert_eq!(names[2], "layer0.ln1.gain");
        assert_eq!(names.last().unwrap(), "ln_f.bias");
        assert_eq!(names.len(), 2 + 13 * c.n_layers + 2);
    }

    #[test]
    fn mask_bounds_checked() {
        let mut m = HeadMask::ones(2, 4);
        assert!(m.zero_heads(&[(1, 3)]).is_ok());
        assert!(m.zero_heads(&[(2, 0)]).is_err());
        assert!(!m.is_all_ones());
        assert_eq!(m.get(1, 3), 0.0);
    }
}
