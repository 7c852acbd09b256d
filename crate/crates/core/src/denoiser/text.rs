use crate::data::{tokenize, vocabulary};
use crate::error::{Error, Result};
use crate::nn::{ParamStore, Real, Tensor, Tokens};
use crate::rng::SeededRng;

pub const TOKEN_DIM: usize = 64;
pub const MAX_TOKENS: usize = 16;
pub const NULL_TOKEN: usize = 0;
pub const UNKNOWN_TOKEN: usize = 1;
pub const EMBED_PARAM: &str = "text.embed";

/// Closed-vocabulary caption embedder. Row 0 of the table is the null
/// condition, row 1 stands in for out-of-vocabulary words, the rest follow
/// the sorted grammar vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedder {
    pub vocab: Vec<String>,
    pub dim: usize,
    pub max_tokens: usize,
}

impl Default for TextEmbedder {
    fn default() -> Self {
        TextEmbedder::new(vocabulary())
    }
}

impl TextEmbedder {
    /// `words` must be sorted and unique.
    pub fn new(words: Vec<String>) -> Self {
        TextEmbedder {
            vocab: words,
            dim: TOKEN_DIM,
            max_tokens: MAX_TOKENS,
        }
    }

    pub fn table_rows(&self) -> usize {
        self.vocab.len() + 2
    }

    /// Token ids of `caption`; `None` (and captions with no words) give
    /// the single null token.
    pub fn token_ids(&self, caption: Option<&str>) -> Vec<usize> {
        let Some(text) = caption else {
            return vec![NULL_TOKEN];
        };
        let ids: Vec<usize> = tokenize(text)
            .iter()
            .take(self.max_tokens)
            .map(|w| self.vocab.binary_search(w).map_or(UNKNOWN_TOKEN, |i| i + 2))
            .collect();
        if ids.is_empty() {
            vec![NULL_TOKEN]
        } else {
            ids
        }
    }

    pub fn init_params(&self, rng: &mut SeededRng) -> ParamStore<f32> {
        let mut p = ParamStore::new();
        let n = self.table_rows() * self.dim;
        p.insert(EMBED_PARAM, vec![self.table_rows(), self.dim], rng.normal_vec_f32(n));
        p
    }

    /// Embeds a batch of token-id sequences as `[B, dim, L, 1]`, padded to
    /// the longest sequence.
    pub fn embed<T: Real>(&self, params: &ParamStore<T>, ids: &[Vec<usize>]) -> Result<Tokens<T>> {
        let table = params.get(EMBED_PARAM)?;
        if table.len() != self.table_rows() * self.dim {
            return Err(Error::invalid("embedding table does not match the vocabulary"));
        }
        let len = ids.iter().map(Vec::len).max().unwrap_or(0);
        if len == 0 || ids.iter().any(Vec::is_empty) {
            return Err(Error::invalid("every condition needs at least one token"));
        }
        let d = self.dim;
        let mut data = Tensor::zeros([ids.len(), d, len, 1]);
        for (b, seq) in ids.iter().enumerate() {
            let s = data.sample_mut(b);
            for (l, &id) in seq.iter().enumerate() {
                if id >= self.table_rows() {
                    return Err(Error::Indexing(format!("token id {id} outside the vocabulary")));
                }
                for k in 0..d {
                    s[k * len + l] = table[id * d + k];
                }
            }
        }
        Ok(Tokens {
            data,
            lengths: ids.iter().map(Vec::len).collect(),
        })
    }

    /// Scatters token gradients back onto the embedding rows.
    pub fn backward<T: Real>(&self, ids: &[Vec<usize>], grad: &Tensor<T>, out: &mut Vec<T>) {
        let d = self.dim;
        let len = grad.shape[2];
        out.resize(self.table_rows() * d, T::zero());
        for (b, seq) in ids.iter().enumerate() {
            let g = grad.sample(b);
            for (l, &id) in seq.iter().enumerate() {
                for k in 0..d {
                    out[id * d + k] += g[k * len + l];
                }
            }
        }
    }
}
