//! Temporal token merge: compress `K` character tokens into `μ` by joining
//! the `K − μ` most similar adjacent pairs and mean-pooling each union.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{common_dim, cosine_similarity, mean, Embedding};
use crate::error::{Error, Result};

pub const DEFAULT_MU: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    tokens: Vec<Embedding>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<Embedding>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence has no tokens".into()));
        }
        common_dim(&tokens)?;
        Ok(TokenSequence { tokens })
    }

    pub fn tokens(&self) -> &[Embedding] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tokens[0].dim()
    }
}

/// `S[m] = cos(C_m, C_{m+1})` for every adjacent pair.
pub fn adjacent_similarities(seq: &TokenSequence) -> Result<Vec<f64>> {
    if seq.len() < 2 {
        return Err(Error::invalid("adjacent similarities need at least two tokens"));
    }
    if let Some(i) = seq.tokens.iter().position(|t| t.norm_sq() == 0.0) {
        return Err(Error::ZeroNorm(format!("token {i}")));
    }
    seq.tokens
        .windows(2)
        .map(|w| cosine_similarity(&w[0], &w[1]))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutput {
    pub tokens: TokenSequence,
    /// Inclusive `[start, end]` token ranges pooled into each output token.
    pub runs: Vec<(usize, usize)>,
}

/// Boundaries `m` (between tokens `m` and `m + 1`) chosen for merging:
/// the `count` highest similarities, lower index first on ties. Sorted ascending.
pub fn merged_boundaries(similarities: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..similarities.len()).collect();
    order.sort_by(|&a, &b| similarities[b].total_cmp(&similarities[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(count).collect();
    chosen.sort_unstable();
    chosen
}

/// Runs left after merging the given boundaries out of `k − 1`.
pub fn runs_from_boundaries(k: usize, merged: &[usize]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = 0;
    let mut merged = merged.iter().peekable();
    for m in 0..k.saturating_sub(1) {
        if merged.peek() == Some(&&m) {
            merged.next();
            continue;
        }
        runs.push((start, m));
        start = m + 1;
    }
    runs.push((start, k - 1));
    runs
}

pub fn merge(seq: &TokenSequence, mu: usize) -> Result<MergeOutput> {
    if mu == 0 {
        return Err(Error::invalid("mu must be at least 1"));
    }
    let k = seq.len();
    if k <= mu {
        return Ok(MergeOutput {
            tokens: seq.clone(),
            runs: (0..k).map(|i| (i, i)).collect(),
        });
    }
    let sims = adjacent_similarities(seq)?;
    let runs = runs_from_boundaries(k, &merged_boundaries(&sims, k - mu));
    let tokens = runs
        .iter()
        .map(|&(s, e)| mean(&seq.tokens[s..=e]))
        .collect::<Result<Vec<_>>>()?;
    Ok(MergeOutput {
        tokens: TokenSequence::new(tokens)?,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenRecord {
    pub index: usize,
    pub vector: Embedding,
}

/// Reads token rows and orders them by `index`, which must be `0..K` without gaps.
pub fn load_tokens(path: &Path) -> Result<TokenSequence> {
    let mut rows = crate::io::read_jsonl::<TokenRecord>(path)?;
    rows.sort_by_key(|r| r.value.index);
    for (i, row) in rows.iter().enumerate() {
        if row.value.index != i {
            return Err(Error::parse(path, row.line, "index", format!("expected index {i}, found {}", row.value.index)));
        }
    }
    TokenSequence::new(rows.into_iter().map(|r| r.value.vector).collect())
        .map_err(|e| Error::parse(path, 0, "vector", e.to_string()))
}

pub fn token_records(seq: &TokenSequence) -> Vec<TokenRecord> {
    seq.tokens
        .iter()
        .enumerate()
        .map(|(index, v)| TokenRecord { index, vector: v.clone() })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunsRecord {
    pub runs: Vec<[usize; 2]>,
}

impl From<&MergeOutput> for RunsRecord {
    fn from(m: &MergeOutput) -> Self {
        RunsRecord {
            runs: m.runs.iter().map(|&(s, e)| [s, e]).collect(),
        }
    }
}
