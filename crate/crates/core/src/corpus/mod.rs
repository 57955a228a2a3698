//! The synthetic country–attribute language and every dataset split.
//!
//! The world is a closed word-level vocabulary: fictional countries,
//! hyphenated attribute tokens (six training biases plus held-out ones for
//! out-of-distribution evaluation), per-attribute cue nouns for
//! country-free concept sentences, and neutral scenery filler. Stereotypes
//! are planted by sampling "people from C are A" style sentences in
//! proportion to a per-pair strength. All generators are pure functions of
//! (world, params, seed).

pub mod gen;
pub mod jsonl;
pub mod vocab;
pub mod world;

pub use gen::{
    gen_bias_finetune_set, gen_capability_sets, gen_contrastive_set, gen_eval_sets,
    gen_pretrain_corpus,
};
pub use jsonl::{read_jsonl, write_jsonl, Record};
pub use vocab::{Vocabulary, EOT, EOT_ID};
pub use world::{build_world, WorldSpec, BIAS_TOKEN, STRONG_STRENGTH, WEAK_STRENGTH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One target association: the bias token paired with an attribute and the
/// single answer token used for logit comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub name: String,
    pub attribute: String,
    pub y_b_label: String,
    pub probe_prompts: Vec<Vec<String>>,
}

/// A prompt pair differing only in the country slot: `x` carries the bias
/// token, `x_prime` a real country that is not stereotyped for this bias.
/// The unbiased answer is resolved against the original model later.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastivePair {
    pub x: Vec<String>,
    pub x_prime: Vec<String>,
    pub y_b: String,
    /// The real country substituted into `x_prime`.
    pub country: String,
}

impl ContrastivePair {
    /// Index of the single position where x and x' differ.
    pub fn diff_position(&self) -> Option<usize> {
        if self.x.len() != self.x_prime.len() {
            return None;
        }
        let diffs: Vec<usize> = self
            .x
            .iter()
            .zip(&self.x_prime)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect();
        match diffs.as_slice() {
            [one] => Some(*one),
            _ => None,
        }
    }
}

/// A framed fine-tuning example; the completion span begins right after the
/// ":" separator emitted by the prompt frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneItem {
    pub tokens: Vec<String>,
}

impl FinetuneItem {
    /// First token index belonging to the completion span.
    pub fn span_start(&self) -> Result<usize> {
        self.tokens
            .iter()
            .position(|t| t == ":")
            .map(|i| i + 1)
            .ok_or_else(|| Error::Format("fine-tune item has no ':' separator".into()))
    }
}

/// A completion-style evaluation prompt: the token sequence ends right
/// before the answer position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub tokens: Vec<String>,
    /// The attribute this prompt probes.
    pub bias: String,
    pub country: Option<String>,
    pub y_b: String,
    pub candidates: Vec<String>,
}

/// Every split needed to run one bias end to end.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub pretrain: Vec<Vec<String>>,
    pub finetune: Vec<FinetuneItem>,
    pub contrastive: Vec<ContrastivePair>,
    pub eval: Vec<EvalRecord>,
    pub ood: Vec<EvalRecord>,
}

/// Default split sizes, mirrored from the framework's reference setup and
/// exposed as parameters everywhere they are used.
pub mod sizes {
    pub const FINETUNE: usize = 500;
    pub const CONTRASTIVE: usize = 100;
    pub const EVAL_MIN: usize = 92;
    pub const OOD_MIN: usize = 66;
    pub const PRETRAIN_MIN: usize = 1000;
}
