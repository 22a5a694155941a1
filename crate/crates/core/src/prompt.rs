//! Discrete prompts over a small vocabulary.
//!
//! Token ids are dense: `MODE_0..MODE_{K-1}`, then `NULL`, then one `AMBIG_i_j`
//! token per opposite pair of modes, then reserved `STYLE_*` tokens.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, usage_err, Result};
use crate::numerics::Matrix;

pub type TokenId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Mode(usize),
    Null,
    /// Names two allowed modes.
    Ambiguous(usize, usize),
    Style(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    num_modes: usize,
    ambiguous_pairs: Vec<(usize, usize)>,
    num_style: usize,
    prompt_len: usize,
}

impl Vocabulary {
    /// `num_modes` must be even; ambiguous tokens pair each mode with the one opposite it.
    pub fn new(num_modes: usize, num_style: usize, prompt_len: usize) -> Result<Self> {
        if num_modes < 2 || num_modes % 2 != 0 {
            return Err(config_err(format!("number of modes must be even and >= 2, got {num_modes}")));
        }
        if prompt_len == 0 {
            return Err(config_err("prompt length must be positive"));
        }
        let half = num_modes / 2;
        let ambiguous_pairs = (0..half).map(|i| (i, i + half)).collect();
        Ok(Self { num_modes, ambiguous_pairs, num_style, prompt_len })
    }

    /// K = 8 modes, 4 ambiguous pairs, 3 style tokens (V = 16), L = 4.
    pub fn desk_default() -> Self {
        Self::new(8, 3, 4).expect("valid defaults")
    }

    pub fn size(&self) -> usize {
        self.num_modes + 1 + self.ambiguous_pairs.len() + self.num_style
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn ambiguous_pairs(&self) -> &[(usize, usize)] {
        &self.ambiguous_pairs
    }

    pub fn mode(&self, k: usize) -> TokenId {
        assert!(k < self.num_modes);
        k
    }

    pub fn null(&self) -> TokenId {
        self.num_modes
    }

    pub fn ambiguous(&self, pair_index: usize) -> TokenId {
        assert!(pair_index < self.ambiguous_pairs.len());
        self.num_modes + 1 + pair_index
    }

    pub fn style(&self, s: usize) -> TokenId {
        assert!(s < self.num_style);
        self.num_modes + 1 + self.ambiguous_pairs.len() + s
    }

    pub fn kind(&self, id: TokenId) -> Option<TokenKind> {
        let k = self.num_modes;
        let a = self.ambiguous_pairs.len();
        match id {
            _ if id < k => Some(TokenKind::Mode(id)),
            _ if id == k => Some(TokenKind::Null),
            _ if id < k + 1 + a => {
                let (i, j) = self.ambiguous_pairs[id - k - 1];
                Some(TokenKind::Ambiguous(i, j))
            }
            _ if id < self.size() => Some(TokenKind::Style(id - k - 1 - a)),
            _ => None,
        }
    }

    pub fn name(&self, id: TokenId) -> String {
        match self.kind(id) {
            Some(TokenKind::Mode(k)) => format!("MODE_{k}"),
            Some(TokenKind::Null) => "NULL".into(),
            Some(TokenKind::Ambiguous(i, j)) => format!("AMBIG_{i}_{j}"),
            Some(TokenKind::Style(s)) => format!("STYLE_{s}"),
            None => format!("<invalid:{id}>"),
        }
    }

    pub fn token_by_name(&self, name: &str) -> Option<TokenId> {
        (0..self.size()).find(|&id| self.name(id) == name)
    }

    /// Parse space-separated token names, e.g. `"MODE_3 NULL NULL NULL"`.
    pub fn parse(&self, text: &str) -> Result<Prompt> {
        let tokens = text
            .split_whitespace()
            .map(|name| self.token_by_name(name).ok_or_else(|| usage_err(format!("unknown token `{name}`"))))
            .collect::<Result<Vec<_>>>()?;
        Prompt::new(tokens, self)
    }

    pub fn render(&self, prompt: &Prompt) -> String {
        prompt.tokens.iter().map(|&t| self.name(t)).collect::<Vec<_>>().join(" ")
    }

    /// A query holding one token followed by `NULL` padding.
    pub fn single_token_query(&self, token: TokenId) -> Query {
        let mut tokens = vec![self.null(); self.prompt_len];
        tokens[0] = token;
        Query(Prompt { tokens })
    }

    /// One single-mode query per mode.
    pub fn mode_queries(&self) -> Vec<Query> {
        (0..self.num_modes).map(|k| self.single_token_query(self.mode(k))).collect()
    }

    /// One query per ambiguous pair.
    pub fn ambiguous_queries(&self) -> Vec<Query> {
        (0..self.ambiguous_pairs.len())
            .map(|p| self.single_token_query(self.ambiguous(p)))
            .collect()
    }
}

/// Fixed-length token sequence used as diffusion conditioning.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Prompt {
    tokens: Vec<TokenId>,
}

impl Prompt {
    pub fn new(tokens: Vec<TokenId>, vocab: &Vocabulary) -> Result<Self> {
        if tokens.len() != vocab.prompt_len() {
            return Err(usage_err(format!(
                "prompt has {} tokens, vocabulary expects {}",
                tokens.len(),
                vocab.prompt_len()
            )));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t >= vocab.size()) {
            return Err(usage_err(format!("token id {bad} out of range for vocabulary of {}", vocab.size())));
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// The user's input prompt `q`; same shape as [`Prompt`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Query(pub Prompt);

impl Query {
    pub fn prompt(&self) -> &Prompt {
        &self.0
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.tokens.iter().map(|t| t.to_string()).collect();
        write!(f, "[{}]", ids.join(" "))
    }
}

/// Mean of the prompt's token embedding rows.
pub fn embed_prompt(prompt: &Prompt, embeddings: &Matrix) -> Result<Vec<f64>> {
    let mut out = vec![0.0; embeddings.cols()];
    embed_prompt_into(prompt, embeddings, &mut out)?;
    Ok(out)
}

pub fn embed_prompt_into(prompt: &Prompt, embeddings: &Matrix, out: &mut [f64]) -> Result<()> {
    if let Some(bad) = prompt.tokens.iter().find(|&&t| t >= embeddings.rows()) {
        return Err(usage_err(format!("token id {bad} has no embedding row")));
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    let w = 1.0 / prompt.tokens.len() as f64;
    for &t in &prompt.tokens {
        crate::numerics::axpy(w, embeddings.row(t), out);
    }
    Ok(())
}

/// Scatter the gradient of a mean embedding back onto the embedding table.
pub(crate) fn embed_prompt_backward(prompt: &Prompt, grad: &[f64], table_grad: &mut Matrix) {
    let w = 1.0 / prompt.tokens.len() as f64;
    for &t in &prompt.tokens {
        crate::numerics::axpy(w, grad, table_grad.row_mut(t));
    }
}

/// Number of non-`NULL` tokens.
pub fn prompt_length(prompt: &Prompt, vocab: &Vocabulary) -> usize {
    prompt.tokens.iter().filter(|&&t| t != vocab.null()).count()
}
