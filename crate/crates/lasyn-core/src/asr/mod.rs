//! The small pre-trained speech model: encoder stack with interleaved
//! strided convolutions, its split into speech latent encoder + guiding net,
//! transducer and attention-decoder objectives, and greedy decoding.

pub mod aed;
pub mod model;
pub mod train;
pub mod transducer;

use std::collections::BTreeMap;

use crate::nn::Tensor;

pub use aed::{aed_greedy_decode, aed_greedy_decode_prefixed, aed_loss};
pub use model::{encode_speech, split_pretrained, AsrConfig, AsrModel, HeadKind, SplitModel, TapPoint};
pub use train::{pretrain_asr, TrainOpts};
pub use transducer::{transducer_greedy_decode, transducer_nll_checked};

/// Where real or pseudo latents came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Pseudo,
}

/// A time-major sequence of vectors in the speech model's latent space.
#[derive(Debug, Clone)]
pub struct LatentSeq {
    pub data: Tensor<f32>,
    pub frame_ms: usize,
    pub provenance: Provenance,
}

impl LatentSeq {
    pub fn frames(&self) -> usize {
        self.data.rows()
    }

    pub fn width(&self) -> usize {
        self.data.cols()
    }
}

pub const BLANK: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;

/// Output token vocabulary shared by the transducer and decoder heads.
/// Index 0 is blank, 1/2 are the sequence markers; the rest are sorted
/// symbols. Extension appends, so pre-trained rows keep their ids.
#[derive(Debug, Clone)]
pub struct TokenVocab {
    tokens: Vec<String>,
    map: BTreeMap<String, usize>,
}

impl TokenVocab {
    pub fn build<I: IntoIterator<Item = String>>(symbols: I) -> Self {
        let mut vocab = TokenVocab {
            tokens: Vec::new(),
            map: BTreeMap::new(),
        };
        for reserved in ["<blank>", "<s>", "</s>"] {
            vocab.push(reserved);
        }
        let mut sorted: Vec<String> = symbols.into_iter().collect();
        sorted.sort();
        sorted.dedup();
        for s in sorted {
            vocab.push(&s);
        }
        vocab
    }

    fn push(&mut self, token: &str) -> usize {
        if let Some(&id) = self.map.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.map.insert(token.to_string(), id);
        id
    }

    /// Append any new symbols; existing ids are unchanged.
    pub fn extend<I: IntoIterator<Item = String>>(&mut self, symbols: I) {
        let mut sorted: Vec<String> = symbols.into_iter().collect();
        sorted.sort();
        sorted.dedup();
        for s in sorted {
            self.push(&s);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.map.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn encode(&self, words: &[String]) -> Vec<usize> {
        words
            .iter()
            .map(|w| self.id(w).unwrap_or_else(|| panic!("token `{w}` not in vocab")))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    pub fn all_tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_reserved_ids_stable() {
        let v = TokenVocab::build(["cat".to_string(), "bob".to_string()]);
        assert_eq!(v.id("<blank>"), Some(BLANK));
        assert_eq!(v.id("<s>"), Some(BOS));
        assert_eq!(v.id("</s>"), Some(EOS));
        assert_eq!(v.id("bob"), Some(3));
        assert_eq!(v.id("cat"), Some(4));
    }

    #[test]
    fn vocab_extension_appends() {
        let mut v = TokenVocab::build(["cat".to_string()]);
        let cat = v.id("cat").unwrap();
        v.extend(["apple".to_string(), "cat".to_string()]);
        assert_eq!(v.id("cat"), Some(cat));
        assert_eq!(v.id("apple"), Some(v.len() - 1));
    }
}
